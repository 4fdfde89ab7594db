"""Closed-form pieces of the income growth model.

Everything here is a pure function of its arguments. Incomes are in the
normalized units used throughout the package: an income rate divided by
``S_max * L_max`` (both equal to 30), so a cell with the largest capability
and instrument saturates at ``sigma_min * a_min``.
"""

import math
from dataclasses import dataclass

import numpy as np

S_MIN = 2
S_MAX = 30
N_LEVELS = S_MAX - S_MIN + 1  # 29 capability / instrument levels
N_CELLS = N_LEVELS * N_LEVELS


class ModelDomainError(ValueError):
    """Raised when an argument lies outside the domain of a model formula."""


def _require_positive(**kwargs):
    for name, value in kwargs.items():
        if not np.all(np.asarray(value) > 0):
            raise ModelDomainError(f"{name} must be positive, got {value!r}")


@dataclass(frozen=True)
class CapacityGrid:
    relative_capabilities: np.ndarray
    relative_instruments: np.ndarray
    capacities: np.ndarray

    @property
    def s_tilde(self):
        return self.relative_capabilities / S_MAX

    @property
    def l_tilde(self):
        return self.relative_instruments / S_MAX

    @property
    def probability(self):
        """Population share of one (i, j) cell."""
        return 1.0 / self.capacities.size


def build_capacity_grid():
    """The 29 x 29 grid of capability and instrument products.

    Rows index capability ``S_i``, columns instrument ``L_j``. Degenerate
    products (``2*30 == 30*2``) are kept as separate cells since they follow
    different time histories.
    """
    levels = np.arange(S_MIN, S_MAX + 1, dtype=float)
    levels.setflags(write=False)
    capacities = np.outer(levels, levels)
    capacities.setflags(write=False)
    return CapacityGrid(levels, levels.copy(), capacities)


def closed_form_income(s_tilde, l_tilde, sigma_min, a_min, alpha_tilde, t):
    """Normalized income after ``t`` years at constant capability and instrument.

    ``sigma_min * a_min * s * l * (1 - exp(-t * alpha / (a_min * l)))``.
    Broadcasts over array arguments.
    """
    _require_positive(a_min=a_min, l_tilde=l_tilde)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ModelDomainError("work experience must be non-negative")
    rate = alpha_tilde / (a_min * np.asarray(l_tilde, dtype=float))
    return sigma_min * a_min * s_tilde * l_tilde * -np.expm1(-rate * t)


def asymptotic_income(s_tilde, l_tilde, sigma_min, a_min):
    return sigma_min * a_min * s_tilde * l_tilde


def early_growth_approx(sigma_i, alpha, t):
    """Linear start of the growth curve, valid while ``alpha * t / A`` is small."""
    return sigma_i * alpha * t


def time_to_level(l_j_abs, alpha, fraction_h):
    """Years needed to reach ``fraction_h`` of a cell's own asymptotic income.

    ``l_j_abs`` is the absolute instrument size entering the exponent, i.e.
    ``a_min * l_tilde`` in normalized units.
    """
    _require_positive(l_j_abs=l_j_abs, alpha=alpha)
    if not 0 < fraction_h < 1:
        raise ModelDomainError(
            f"level {fraction_h!r} is unreachable; it must lie strictly between 0 and 1"
        )
    return -(l_j_abs / alpha) * math.log1p(-fraction_h)


def scale_with_gdp(x0, y_ratio):
    """Capability and instrument both grow as the square root of output growth."""
    _require_positive(y_ratio=y_ratio)
    return x0 * np.sqrt(y_ratio)


def critical_age(tc0, y_ratio):
    """Critical work experience ``T_c`` after output grew by ``y_ratio``."""
    _require_positive(tc0=tc0)
    return scale_with_gdp(tc0, y_ratio)


def pareto_threshold(mp0, y_tau):
    """Pareto threshold at relative output ``y_tau``; linear in output, not sqrt."""
    _require_positive(mp0=mp0, y_tau=y_tau)
    return mp0 * y_tau


def decay_exponent(level_a, age_ta, tc_now):
    """Decay index fixed by the requirement that the top cell falls to ``level_a``
    between ``tc_now`` and ``age_ta``. ``tc_now`` may be an array."""
    if not 0 < level_a < 1:
        raise ModelDomainError(f"anchor level must be in (0, 1), got {level_a!r}")
    span = age_ta - np.asarray(tc_now, dtype=float)
    if not np.all(span > 0):
        raise ModelDomainError(
            f"degenerate decay anchor: anchor age {age_ta!r} does not exceed critical age {tc_now!r}"
        )
    gamma = -math.log(level_a) / span
    return float(gamma) if gamma.ndim == 0 else gamma


def anchored_gamma(level_a, age_ta, tc_now, a_min):
    """Decay index scaled so that ``super_critical_decay`` hits the anchor exactly.

    The decay exponent carries a ``1/a_min`` factor; pre-multiplying by
    ``a_min`` makes the top cell (``l_tilde = 1``) fall to exactly ``level_a``
    of its value at the critical age, whatever the instrument unit.
    """
    return a_min * decay_exponent(level_a, age_ta, tc_now)


def super_critical_decay(m_at_tc, a_min, gamma_tilde, l_tilde, t, tc):
    """Income after the critical age, when earning capability is switched off."""
    t = np.asarray(t, dtype=float)
    if np.any(t < tc):
        raise ModelDomainError("super-critical decay only applies for t >= tc")
    _require_positive(a_min=a_min, l_tilde=l_tilde)
    return m_at_tc * np.exp(-(gamma_tilde / (a_min * l_tilde)) * (t - tc))


def retirement_exponent(level_b, age_tb, ts):
    """Retirement decay index; independent of time and output."""
    if not 0 < level_b < 1:
        raise ModelDomainError(f"retirement level must be in (0, 1), got {level_b!r}")
    if not age_tb > ts:
        raise ModelDomainError(
            f"degenerate retirement anchor: {age_tb!r} does not exceed {ts!r}"
        )
    return -math.log(level_b) / (age_tb - ts)


def retirement_decay(m_at_ts, eta, age, ts):
    return m_at_ts * np.exp(-eta * (np.asarray(age, dtype=float) - ts))


def eligible_fraction(mp0):
    """Fraction of grid cells whose saturation income reaches the threshold.

    In the saturation limit a cell earns ``S * L / 900`` of the top cell, so
    it is eligible when ``S * L >= mp0 * 900``.
    """
    grid = build_capacity_grid()
    return np.count_nonzero(grid.capacities >= mp0 * S_MAX * S_MAX) / N_CELLS
