"""Shared helpers for the test modules."""

import numpy as np

from income_kinetics.config import DecayAnchor, GroupConfig, RetirementAnchor


def growth_only_config(**kw):
    """Regime switches pushed beyond the simulated ages, so every cell keeps growing."""
    return GroupConfig(
        tc0=kw.pop("tc0", 200.0),
        decay_anchor=DecayAnchor(0.3, 1000.0),
        retirement_anchor=RetirementAnchor(0.4, 900.0, 800.0),
        **kw,
    )


def rel_err(a, b):
    return float(np.max(np.abs(np.asarray(a) / np.asarray(b) - 1.0)))
