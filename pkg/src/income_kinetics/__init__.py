"""Cohort simulation of age-dependent personal income driven by GDP per capita."""

__version__ = "0.1.0"

from .config import GroupConfig, female_config, load_config, male_config  # noqa: E402
from .engine import SimulationPanel, run_simulation  # noqa: E402
from .exogenous import ExogenousSeries, normalize_to_base, synthetic_series  # noqa: E402
from .model import build_capacity_grid  # noqa: E402

__all__ = [
    "GroupConfig", "ExogenousSeries", "SimulationPanel", "build_capacity_grid",
    "female_config", "load_config", "male_config", "normalize_to_base",
    "run_simulation", "synthetic_series",
]
