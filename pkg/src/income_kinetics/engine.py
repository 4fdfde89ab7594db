"""Cohort evolution under a time-varying GDP forcing.

Each cohort holds the 29 x 29 grid of (capability, instrument) cells that
entered work in the same calendar year. Between integer years the growth
equation ``dM/dt = alpha * (Sigma(t) S - M / (A(t) L))`` is integrated with
classical RK4 at monthly steps; capability and instrument follow the square
root of output per capita, so all cohorts alive in a given calendar year
share the same coefficients and differ only through their history.

Cells leave the growth regime in two ways:

* super-critical decay, once work experience reaches ``T_c`` and the income
  is at or above the current Pareto threshold;
* retirement decay, for sub-threshold cells once age reaches ``T_S``.

Both decay regimes are absorbing within a life.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from numba import njit

from .config import ConfigError
from .exogenous import CoverageError
from .tail import ParetoTail
from .model import (
    N_CELLS,
    N_LEVELS,
    build_capacity_grid,
    critical_age,
    decay_exponent,
    pareto_threshold,
    retirement_exponent,
)

STEPS_PER_YEAR = 12
THREADS_ENV = "INCOME_KINETICS_THREADS"


class Regime(IntEnum):
    GROWING = 0
    SUPER_CRITICAL_DECAY = 1
    RETIREMENT_DECAY = 2


@dataclass(frozen=True)
class TrajectoryState:
    s_tilde: float
    l_tilde: float
    m_tilde: float
    regime: Regime


def rk4_step(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + h / 2, y + h / 2 * k1)
    k3 = f(t + h / 2, y + h / 2 * k2)
    k4 = f(t + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def resolve_threads(threads=None):
    if threads is None:
        env = os.environ.get(THREADS_ENV, "").strip()
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


class Dynamics:
    """Coefficients of one group's model under a given exogenous series.

    All quantities are functions of continuous calendar time ``c``; output
    per capita is interpolated geometrically between integer years.
    """

    def __init__(self, group, exogenous):
        self.group = group
        self.exogenous = exogenous
        grid = build_capacity_grid()
        self.s_tilde = grid.s_tilde[:, None]
        self.l_tilde = grid.l_tilde[None, :]
        self.h = 1.0 / STEPS_PER_YEAR
        ra = group.retirement_anchor
        self.eta = retirement_exponent(ra.level_b, ra.age_tb, ra.ts)
        # decays are advanced with their exact one-step multiplier
        self.retire_factor = float(np.exp(-self.eta * self.h))
        da = group.decay_anchor
        self.log_level_a = float(np.log(da.level_a))
        self.anchor_experience = float(da.age_ta - group.work_start_age)
        self.retire_experience = ra.ts - group.work_start_age

    def y(self, c):
        return self.exogenous.at(c)

    def capability(self, c):
        """Sigma_min at calendar time c (multiplies S_tilde)."""
        return self.group.sigma_min * np.sqrt(self.y(c))

    def instrument(self, c):
        """A_min at calendar time c, including the group's FL factor."""
        return self.group.a_min * np.sqrt(self.y(c)) * self.group.fl_schedule(c)

    def threshold(self, c):
        """Pareto threshold in normalized income units.

        The dimensionless threshold is relative to the top capacity in the
        base year, ``sigma_min * a_min``.
        """
        mp = pareto_threshold(self.group.pareto_threshold_schedule(c), self.y(c))
        return mp * self.group.sigma_min * self.group.a_min

    def critical_experience(self, c):
        return critical_age(self.group.tc0, self.y(c))

    def super_critical_rate(self, experience):
        """Per-cell decay rate for cells turning super-critical at ``experience``.

        The index is set from the actual switch experience, so the top cell
        falls to exactly ``level_a`` of its switch value at the anchor age.
        ``a_min`` is factored out of the rate for the same reason.
        """
        g = self.group
        gamma = decay_exponent(g.decay_anchor.level_a, g.decay_anchor.age_ta,
                               g.work_start_age + np.asarray(experience, dtype=float))
        return np.asarray(gamma)[..., None] / self.l_tilde[0]

    def growth_coefficients(self, c):
        """``(source, sink)`` with ``dm/dt = source * S_tilde - sink * m``.

        ``source`` is per unit capability level and ``sink`` varies along the
        instrument axis only, so both come back as ``(..., 29)`` rows over j;
        a leading axis appears when ``c`` is an array of times.
        """
        alpha = self.group.alpha_tilde
        cap = np.asarray(self.capability(c))[..., None]
        ins = np.asarray(self.instrument(c))[..., None]
        return alpha * cap * np.ones(N_LEVELS), alpha / (ins * self.l_tilde[0])

    def growth_rhs(self, c, m):
        source, sink = self.growth_coefficients(c)
        return source * self.s_tilde - sink * m

    def growth_map(self, c):
        """RK4 step over ``[c, c + h]`` written as ``m -> P * m + S_tilde * Q``.

        The growth equation is linear in m, so the RK4 update is affine and
        can be evaluated once per step for every cohort. Both P and Q depend
        on the instrument index only; ``c`` may be an array of start times.
        """
        c = np.asarray(c, dtype=float)
        offsets = (0.0, self.h / 2, self.h)
        coeffs = {dt: self.growth_coefficients(c + dt) for dt in offsets}

        def rhs(dt, m):
            source, sink = coeffs[dt]
            return source - sink * m

        zero = np.zeros(c.shape + (N_LEVELS,))
        q = rk4_step(rhs, 0.0, zero, self.h)
        p = rk4_step(rhs, 0.0, zero + 1.0, self.h) - q
        return p, q

    def step_table(self, start_year, n_steps):
        """Everything the cell kernel needs for ``n_steps`` steps from ``start_year``."""
        c = start_year + np.arange(n_steps) / STEPS_PER_YEAR
        p, q = self.growth_map(c)
        return StepTable(
            start_year=start_year,
            p=np.ascontiguousarray(p),
            q=np.ascontiguousarray(q),
            threshold=np.asarray(self.threshold(c), dtype=float).reshape(n_steps),
            tc=np.asarray(self.critical_experience(c), dtype=float).reshape(n_steps),
        )

    def check(self, first_time, last_time):
        """Surface configuration problems over a time span before stepping."""
        g = self.group
        self.exogenous.require(int(np.floor(first_time)), int(np.ceil(last_time)))
        years = np.arange(np.floor(first_time), np.ceil(last_time) + 1)
        y = self.exogenous.at(years)
        tc_age = g.work_start_age + g.tc0 * np.sqrt(y.max())
        # a cell may switch up to one step after T_c; the anchor must lie beyond
        if not tc_age + self.h < g.decay_anchor.age_ta:
            raise ConfigError(
                f"group {g.name!r}: critical age {tc_age:.2f} reaches the decay anchor age "
                f"{g.decay_anchor.age_ta} within the simulated span"
            )

    def evolve(self, table, m, regime, rate, experience_steps, n0, n1,
               snap_year=None, out_m=None, out_r=None):
        """Advance one cohort in place through steps ``[n0, n1)`` of ``table``.

        ``experience_steps`` is the cohort's experience, in steps, at step n0.
        When ``snap_year`` is given, the state at each step boundary n with
        ``snap_year[n] >= 0`` on a whole year of experience is copied into
        ``out_m[snap_year[n], experience]``.
        """
        if snap_year is None:
            snap_year = np.full(table.tc.size + 1, -1, dtype=np.int64)
            out_m = np.zeros((0, 0, N_LEVELS, N_LEVELS))
            out_r = np.zeros((0, 0, N_LEVELS, N_LEVELS), dtype=np.int8)
        _evolve_cohort(
            m, regime, rate, int(experience_steps), int(n0), int(n1),
            table.p, table.q, self.s_tilde[:, 0], table.threshold, table.tc,
            self.log_level_a, self.anchor_experience, self.h / self.l_tilde[0],
            float(self.retire_experience), self.retire_factor,
            snap_year, out_m, out_r,
        )


@dataclass(frozen=True)
class StepTable:
    """Per-step coefficients shared by all cohorts; index 0 starts at ``start_year``."""

    start_year: int
    p: np.ndarray  # [step, j]
    q: np.ndarray  # [step, j], multiplies S_tilde[i]
    threshold: np.ndarray
    tc: np.ndarray

    def index(self, year, sub=0):
        return (year - self.start_year) * STEPS_PER_YEAR + sub


@njit(cache=True, nogil=True)
def _evolve_cohort(m, regime, rate, e0, n0, n1, p, q, s, threshold, tc, log_level_a,
                   anchor_experience, h_over_l, retire_experience, retire_factor,
                   snap_year, out_m, out_r):
    # Regime switches are checked at the start of each step, then every cell
    # takes one step: RK4 (affine) while growing, its exact decay multiplier
    # once decaying.
    n_i, n_j = m.shape
    super_factor = np.empty(n_j)
    for n in range(n0, n1 + 1):
        e = e0 + n - n0
        y = snap_year[n]
        if y >= 0 and e % STEPS_PER_YEAR == 0:
            out_m[y, e // STEPS_PER_YEAR] = m
            out_r[y, e // STEPS_PER_YEAR] = regime
        if n == n1:
            break
        t = e / STEPS_PER_YEAR
        can_super = t >= tc[n]
        can_retire = t >= retire_experience
        thr = threshold[n]
        factors_ready = False
        for i in range(n_i):
            for j in range(n_j):
                x = m[i, j]
                r = regime[i, j]
                if r == 0:
                    if can_super and x >= thr:
                        if not factors_ready:
                            gamma = -log_level_a / (anchor_experience - t)
                            for jj in range(n_j):
                                super_factor[jj] = np.exp(-gamma * h_over_l[jj])
                            factors_ready = True
                        r = 1
                        rate[i, j] = super_factor[j]
                        regime[i, j] = r
                    elif can_retire and x < thr:
                        r = 2
                        rate[i, j] = retire_factor
                        regime[i, j] = r
                if r == 0:
                    m[i, j] = p[n, j] * x + q[n, j] * s[i]
                else:
                    m[i, j] = x * rate[i, j]


@dataclass
class Cohort:
    """One entry-year cohort; ``rate`` stores each decaying cell's step multiplier."""

    entry_year: int
    m_tilde: np.ndarray
    regime: np.ndarray
    rate: np.ndarray
    experience: int = 0
    person_weight: float = 1e5 / N_CELLS
    capability: np.ndarray = field(default=None)
    instrument: np.ndarray = field(default=None)

    @property
    def calendar_year(self):
        return self.entry_year + self.experience

    def cell(self, i, j):
        """State of the cell with capability index i and instrument index j (0-based)."""
        grid = build_capacity_grid()
        return TrajectoryState(
            float(grid.s_tilde[i]),
            float(grid.l_tilde[j]),
            float(self.m_tilde[i, j]),
            Regime(int(self.regime[i, j])),
        )


def cohort_person_weight(group, entry_year, population=None):
    """Persons represented by one cell of a cohort.

    Without population data every cohort holds ``group.cohort_size`` persons.
    With a ``PopulationSeries`` the working-age population of the entry year
    is spread evenly over the working ages.
    """
    if population is None or entry_year not in population:
        persons = group.cohort_size
    else:
        persons = population.working_age(entry_year) / (group.max_experience + 1)
    return persons / N_CELLS


def init_cohort(entry_year, group, exogenous, population=None):
    """All cells start at zero income in the growth regime."""
    exogenous(entry_year)  # coverage check
    dyn = Dynamics(group, exogenous)
    capability = dyn.capability(entry_year) * dyn.s_tilde[:, 0]
    instrument = dyn.instrument(entry_year) * dyn.l_tilde[0, :]
    shape = (N_LEVELS, N_LEVELS)
    return Cohort(
        entry_year=entry_year,
        m_tilde=np.zeros(shape),
        regime=np.full(shape, Regime.GROWING, dtype=np.int8),
        rate=np.ones(shape),
        experience=0,
        person_weight=cohort_person_weight(group, entry_year, population),
        capability=capability,
        instrument=instrument,
    )


def step_cohort(cohort, calendar_year, exogenous, group):
    """Return the cohort advanced by one year, ending at ``calendar_year``."""
    if calendar_year != cohort.calendar_year + 1:
        raise ValueError(
            f"cohort is at {cohort.calendar_year}; can only step to {cohort.calendar_year + 1}"
        )
    exogenous.require(calendar_year - 1, calendar_year, "cohort step")
    dyn = Dynamics(group, exogenous)
    m = cohort.m_tilde.copy()
    regime = cohort.regime.copy()
    rate = cohort.rate.copy()
    table = dyn.step_table(cohort.calendar_year, STEPS_PER_YEAR)
    dyn.evolve(table, m, regime, rate, cohort.experience * STEPS_PER_YEAR, 0, STEPS_PER_YEAR)
    return Cohort(
        entry_year=cohort.entry_year,
        m_tilde=m,
        regime=regime,
        rate=rate,
        experience=cohort.experience + 1,
        person_weight=cohort.person_weight,
        capability=dyn.capability(float(calendar_year)) * dyn.s_tilde[:, 0],
        instrument=dyn.instrument(calendar_year) * dyn.l_tilde[0, :],
    )


def cohort_history(group, exogenous, entry_year, n_years=None):
    """Monthly states of one cohort from entry: ``(experience, m, regime)``.

    ``m`` and ``regime`` have shape (steps + 1, 29, 29); row n is the state
    at the start of step n, i.e. at experience ``n / 12``.
    """
    n_years = group.max_experience if n_years is None else int(n_years)
    dyn = Dynamics(group, exogenous)
    dyn.check(entry_year, entry_year + n_years)
    n_steps = n_years * STEPS_PER_YEAR
    table = dyn.step_table(entry_year, n_steps)
    cohort = init_cohort(entry_year, group, exogenous)
    m, regime, rate = cohort.m_tilde, cohort.regime, cohort.rate
    hist_m = np.empty((n_steps + 1, N_LEVELS, N_LEVELS))
    hist_r = np.empty((n_steps + 1, N_LEVELS, N_LEVELS), dtype=np.int8)
    hist_m[0], hist_r[0] = m, regime
    for n in range(n_steps):
        dyn.evolve(table, m, regime, rate, n, n, n + 1)
        hist_m[n + 1], hist_r[n + 1] = m, regime
    return np.arange(n_steps + 1) / STEPS_PER_YEAR, hist_m, hist_r


@dataclass
class SimulationPanel:
    """Snapshots of every active cohort at each integer calendar year.

    Arrays are indexed ``[year, experience, i, j]``; the entry year of a
    snapshot is ``years[y] - experience``. ``exogenous`` and ``group`` are
    ``None`` for panels read back from disk.
    """

    group_name: str
    years: np.ndarray
    work_start_age: int
    m_tilde: np.ndarray
    regime: np.ndarray
    person_weight: np.ndarray  # [year, experience]
    thresholds: np.ndarray  # [year], normalized units
    tail_exponent: float
    group: object = None
    exogenous: object = None

    @property
    def max_experience(self):
        return self.m_tilde.shape[1] - 1

    @property
    def ages(self):
        return self.work_start_age + np.arange(self.max_experience + 1)

    def year_index(self, year):
        idx = np.flatnonzero(self.years == year)
        if idx.size == 0:
            raise CoverageError(
                f"year {year} not in panel ({self.years[0]}-{self.years[-1]})"
            )
        return int(idx[0])

    def threshold(self, year):
        return float(self.thresholds[self.year_index(year)])

    def snapshot(self, year):
        k = self.year_index(year)
        return self.m_tilde[k], self.regime[k], self.person_weight[k]

    def entry_years(self):
        return sorted({int(y - e) for y in self.years for e in range(self.max_experience + 1)})

    def cohort(self, entry_year):
        """Trajectory of one cohort over the panel years: ``(years, m[years, 29, 29])``."""
        exp = self.years - entry_year
        ok = (exp >= 0) & (exp <= self.max_experience)
        if not ok.any():
            raise CoverageError(f"cohort {entry_year} not active in the panel")
        idx = np.flatnonzero(ok)
        return self.years[idx], self.m_tilde[idx, exp[idx]]


def _simulate_block(dyn, table, k_lo, k_hi, c0, last_year, first_year, out_m, out_r, max_exp):
    """Evolve cohorts with entry years ``c0 + k`` for k in [k_lo, k_hi).

    Snapshots land in disjoint slices of ``out_m``/``out_r``, so blocks can
    run concurrently.
    """
    n_total = (last_year - c0) * STEPS_PER_YEAR
    steps = np.arange(n_total + 1)
    whole, sub = np.divmod(steps, STEPS_PER_YEAR)
    snap_year = np.where((sub == 0) & (c0 + whole >= first_year), c0 + whole - first_year, -1)
    shape = (N_LEVELS, N_LEVELS)
    for k in range(k_lo, k_hi):
        n0 = k * STEPS_PER_YEAR
        n1 = min(n0 + max_exp * STEPS_PER_YEAR, n_total)
        m = np.zeros(shape)
        regime = np.zeros(shape, dtype=np.int8)
        rate = np.ones(shape)
        dyn.evolve(table, m, regime, rate, 0, n0, n1, snap_year, out_m, out_r)


def run_simulation(group, exogenous, population=None, first_entry_year=None,
                   last_calendar_year=None, threads=None):
    """Simulate every cohort alive in ``[first_entry_year, last_calendar_year]``.

    ``first_entry_year`` is the first reported calendar year; cohorts that
    entered up to ``group.max_experience`` years earlier are evolved from
    their own entry, so the exogenous series must reach back that far.
    Results do not depend on ``threads``.
    """
    group.validate()
    first = exogenous.base_year if first_entry_year is None else int(first_entry_year)
    last = exogenous.last_year if last_calendar_year is None else int(last_calendar_year)
    if last < first:
        raise ValueError(f"last year {last} precedes first year {first}")
    max_exp = group.max_experience
    c0 = first - max_exp
    dyn = Dynamics(group, exogenous)
    dyn.check(c0, last)

    n_years = last - first + 1
    out_m = np.zeros((n_years, max_exp + 1, N_LEVELS, N_LEVELS))
    out_r = np.zeros((n_years, max_exp + 1, N_LEVELS, N_LEVELS), dtype=np.int8)
    n_cohorts = last - c0 + 1
    n_threads = min(resolve_threads(threads), n_cohorts)
    bounds = np.linspace(0, n_cohorts, n_threads + 1).round().astype(int)
    jobs = [(int(a), int(b)) for a, b in zip(bounds, bounds[1:]) if b > a]
    table = dyn.step_table(c0, (last - c0) * STEPS_PER_YEAR)
    args = (c0, last, first, out_m, out_r, max_exp)
    if len(jobs) == 1:
        _simulate_block(dyn, table, *jobs[0], *args)
    else:
        with ThreadPoolExecutor(max_workers=len(jobs)) as pool:
            for fut in [pool.submit(_simulate_block, dyn, table, a, b, *args) for a, b in jobs]:
                fut.result()

    years = np.arange(first, last + 1)
    weights = np.array([
        [cohort_person_weight(group, int(y - e), population) for e in range(max_exp + 1)]
        for y in years
    ])
    thresholds = np.asarray(dyn.threshold(years.astype(float)), dtype=float).reshape(n_years)
    return SimulationPanel(
        group_name=group.name,
        years=years,
        work_start_age=group.work_start_age,
        m_tilde=out_m,
        regime=out_r,
        person_weight=weights,
        thresholds=thresholds,
        tail_exponent=group.pareto_tail_exponent,
        group=group,
        exogenous=exogenous,
    )


def super_critical_mass(panel, calendar_year):
    """Weighted fraction of each age cell at or above the group's Pareto threshold.

    Returns ``(ages, mass)``; mass is zero at the work-start age since every
    cohort starts from zero income.
    """
    m, _, weights = panel.snapshot(calendar_year)
    above = m >= panel.threshold(calendar_year)
    w = weights[:, None, None]
    cohort_w = w * N_CELLS
    mass = (above * w).sum(axis=(1, 2)) / cohort_w[:, 0, 0]
    return panel.ages.copy(), mass


def tail_by_age(panel, calendar_year):
    """Pareto tail (fraction of each age cell) implied by the sub-critical dynamics."""
    ages, mass = super_critical_mass(panel, calendar_year)
    thr = panel.threshold(calendar_year)
    return {int(a): ParetoTail(thr, panel.tail_exponent, float(x)) for a, x in zip(ages, mass)}
