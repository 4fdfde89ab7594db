import math

import numpy as np
import pytest

from income_kinetics import male_config, run_simulation, synthetic_series
from income_kinetics.config import ConfigError, DecayAnchor, GroupConfig, with_parameters
from income_kinetics.engine import (
    Dynamics,
    Regime,
    STEPS_PER_YEAR,
    cohort_history,
    cohort_person_weight,
    init_cohort,
    resolve_threads,
    rk4_step,
    step_cohort,
    super_critical_mass,
    tail_by_age,
)
from income_kinetics.exogenous import CoverageError, PopulationSeries, normalize_to_base
from income_kinetics.model import (
    build_capacity_grid,
    closed_form_income,
    eligible_fraction,
    retirement_decay,
    retirement_exponent,
)
from income_kinetics.statistics import observations

from helpers import growth_only_config, rel_err

GRID = build_capacity_grid()
S = GRID.s_tilde[:, None]
L = GRID.l_tilde[None, :]


def test_rk4_step_exact_for_cubic():
    # RK4 integrates dy/dt = 3 t^2 exactly
    assert rk4_step(lambda t, y: 3 * t * t, 1.0, 1.0, 0.5) == pytest.approx(1.5**3)


def test_oracle_all_cells_match_closed_form(oracle_panel):
    m, regime, _ = oracle_panel.snapshot(1960)
    assert np.all(regime == Regime.GROWING)
    for t in range(1, 41):
        exact = closed_form_income(S, L, 1.0, 1.0, 0.06, t)
        assert rel_err(m[t], exact) < 1e-6


def test_oracle_with_scaled_units(flat_series):
    cfg = growth_only_config(sigma_min=1.7, a_min=0.6, alpha_tilde=0.03)
    panel = run_simulation(cfg, flat_series, first_entry_year=1960, last_calendar_year=1960)
    m = panel.snapshot(1960)[0]
    t = np.arange(1, 41)[:, None, None]
    assert rel_err(m[1:41], closed_form_income(S, L, 1.7, 0.6, 0.03, t)) < 1e-6


def test_oracle_invariant_bound(oracle_panel):
    m = oracle_panel.snapshot(1960)[0]
    assert np.all(m >= 0)
    assert np.all(m <= S * L * 1.0)


def test_init_cohort_examples(growth_series):
    g = male_config()
    c = init_cohort(1962, g, growth_series)
    assert c.m_tilde.shape == (29, 29) and np.all(c.m_tilde == 0)
    assert np.all(c.regime == Regime.GROWING)
    np.testing.assert_allclose(c.instrument, GRID.l_tilde)
    np.testing.assert_allclose(c.capability, GRID.s_tilde)
    series = normalize_to_base({1960: 1.0, 1961: 2.0, 1962: 4.0}, 1960)
    c4 = init_cohort(1962, g, series)
    np.testing.assert_allclose(c4.capability, 2 * GRID.s_tilde)
    np.testing.assert_allclose(c4.instrument, 2 * GRID.l_tilde)
    with pytest.raises(CoverageError):
        init_cohort(1700, g, growth_series)


def test_init_cohort_applies_fl(growth_series):
    f = with_parameters(male_config(), {"fl": 0.5})
    c = init_cohort(1962, f, growth_series)
    np.testing.assert_allclose(c.instrument, 0.5 * GRID.l_tilde)


def test_cell_state():
    series = synthetic_series(1950, 1970, base_year=1960)
    c = init_cohort(1960, male_config(), series)
    state = c.cell(28, 0)
    assert (state.s_tilde, state.l_tilde, state.m_tilde) == (1.0, 2 / 30, 0.0)
    assert state.regime is Regime.GROWING


def test_step_cohort_matches_panel(growth_series, male_panel):
    g = male_config()
    c = init_cohort(1962, g, growth_series)
    for year in range(1963, 1983):
        c = step_cohort(c, year, growth_series, g)
    years, traj = male_panel.cohort(1962)
    np.testing.assert_allclose(c.m_tilde, traj[years == 1982][0], rtol=1e-12)
    with pytest.raises(ValueError):
        step_cohort(c, 1990, growth_series, g)


def test_step_cohort_capacity_doubles_with_output():
    series = normalize_to_base({y: 2.0 ** ((y - 1960) / 10) for y in range(1950, 1981)}, 1960)
    g = male_config()
    c = init_cohort(1960, g, series)
    cap0 = np.outer(c.capability, c.instrument)
    for year in range(1961, 1971):
        c = step_cohort(c, year, series, g)
    np.testing.assert_allclose(np.outer(c.capability, c.instrument), 2 * cap0)


def test_step_cohort_growing_cells_monotone(growth_series):
    g = male_config()
    c = init_cohort(1962, g, growth_series)
    for year in range(1963, 2000):
        nxt = step_cohort(c, year, growth_series, g)
        growing = nxt.regime == Regime.GROWING
        assert np.all(nxt.m_tilde[growing] >= c.m_tilde[growing])
        c = nxt


def test_threads_do_not_change_results(growth_series):
    g = male_config()
    a = run_simulation(g, growth_series, first_entry_year=1980, last_calendar_year=1990, threads=1)
    b = run_simulation(g, growth_series, first_entry_year=1980, last_calendar_year=1990, threads=5)
    assert np.array_equal(a.m_tilde, b.m_tilde)
    assert np.array_equal(a.regime, b.regime)


def test_resolve_threads(monkeypatch):
    monkeypatch.setenv("INCOME_KINETICS_THREADS", "3")
    assert resolve_threads() == 3
    assert resolve_threads(0) == 1
    monkeypatch.delenv("INCOME_KINETICS_THREADS")
    assert resolve_threads() >= 1


def test_zero_length_horizon(growth_series):
    panel = run_simulation(male_config(), growth_series, first_entry_year=1990,
                           last_calendar_year=1990)
    assert panel.years.tolist() == [1990]
    assert np.all(panel.m_tilde[0, 0] == 0)


def test_coverage_and_config_errors(growth_series):
    short = synthetic_series(1950, 2000, base_year=1960)
    with pytest.raises(CoverageError):
        run_simulation(male_config(), short, first_entry_year=1962, last_calendar_year=1970)
    with pytest.raises(CoverageError):
        run_simulation(male_config(), growth_series, first_entry_year=2000,
                       last_calendar_year=2030)
    late = GroupConfig(tc0=58.0)
    with pytest.raises(ConfigError, match="critical age"):
        run_simulation(late, growth_series, first_entry_year=1962, last_calendar_year=1970)
    with pytest.raises(ConfigError):
        run_simulation(GroupConfig(alpha_tilde=-1.0), growth_series)
    with pytest.raises(ValueError):
        run_simulation(male_config(), growth_series, first_entry_year=1990,
                       last_calendar_year=1980)


def test_regime_rules(male_panel):
    g = male_config()
    dyn = Dynamics(g, male_panel.exogenous)
    retire_exp = g.retirement_anchor.ts - g.work_start_age
    for year in (1962, 1990, 2011):
        m, regime, _ = male_panel.snapshot(year)
        exp = np.arange(m.shape[0])
        tc_min = float(dyn.critical_experience(year - g.max_experience))
        # nobody decays super-critically before the earliest possible T_c
        assert not np.any(regime[exp < tc_min] == Regime.SUPER_CRITICAL_DECAY)
        # nobody retires before T_S
        assert not np.any(regime[exp < retire_exp] == Regime.RETIREMENT_DECAY)
        # past T_S + one year every sub-threshold cell has retired
        old = exp > retire_exp
        assert not np.any(regime[old] == Regime.GROWING)


def test_decay_anchor_reached_exactly(growth_series):
    g = male_config()
    ta_exp = int(g.decay_anchor.age_ta - g.work_start_age)
    for entry in (1910, 1940):
        exp, m, regime = cohort_history(g, growth_series, entry, ta_exp)
        top_r = regime[:, 28, 28]
        k = np.flatnonzero(top_r == Regime.SUPER_CRITICAL_DECAY)[0] - 1
        assert abs(m[-1, 28, 28] / m[k, 28, 28] - g.decay_anchor.level_a) < 1e-10


def test_retirement_decay_follows_closed_form(growth_series):
    g = male_config()
    ra = g.retirement_anchor
    n_years = int(ra.age_tb - g.work_start_age)
    exp, m, regime = cohort_history(g, growth_series, 1930, n_years)
    eta = retirement_exponent(ra.level_b, ra.age_tb, ra.ts)
    start = int(round((ra.ts - g.work_start_age) * STEPS_PER_YEAR))
    cells = regime[-1] == Regime.RETIREMENT_DECAY
    assert cells.any()
    expected = retirement_decay(m[start][cells], eta, ra.age_tb, ra.ts)
    assert rel_err(m[-1][cells], expected) < 1e-12


def test_regime_continuity(growth_series):
    # no jumps at a switch: one step changes income by at most its decay rate
    g = male_config()
    exp, m, regime = cohort_history(g, growth_series, 1930)
    switched = (regime[1:] != regime[:-1])
    before, after = m[:-1][switched], m[1:][switched]
    assert switched.any()
    # one month of the fastest decay (top anchor at the smallest instrument)
    assert np.all(np.abs(after / before - 1) < 0.1)


def test_regimes_absorbing(growth_series):
    exp, m, regime = cohort_history(male_config(), growth_series, 1930)
    decayed = regime[:-1] != Regime.GROWING
    assert np.all(regime[1:][decayed] == regime[:-1][decayed])


@pytest.mark.parametrize("boost", [0.0, 0.01])
def test_monotone_forcing(boost):
    # relative output is pinned to 1 at the base year, so raise it only afterwards
    low = synthetic_series(1880, 2010, growth=0.01, base_year=1960)
    high = normalize_to_base(
        {y: v * (1 + boost * max(0, y - 1960)) for y, v in low.values.items()}, 1960)
    assert all(high.at(y) >= low.at(y) for y in range(1880, 2011))
    cfg = growth_only_config()
    a = run_simulation(cfg, low, first_entry_year=1960, last_calendar_year=1980)
    b = run_simulation(cfg, high, first_entry_year=1960, last_calendar_year=1980)
    assert np.all(b.m_tilde >= a.m_tilde - 1e-15)


def test_super_critical_mass(male_panel):
    ages, mass = super_critical_mass(male_panel, 1990)
    assert ages[0] == 15 and mass[0] == 0
    assert np.all((mass >= 0) & (mass <= 1))
    tails = tail_by_age(male_panel, 1990)
    assert tails[15].mass == 0 and tails[40].threshold == male_panel.threshold(1990)


def test_super_critical_mass_zero_for_unreachable_threshold(growth_series):
    g = with_parameters(male_config(), {"threshold": 0.99})
    panel = run_simulation(g, growth_series, first_entry_year=1962, last_calendar_year=1962)
    assert np.all(super_critical_mass(panel, 1962)[1] == 0)


def test_saturation_fraction_matches_grid_count(flat_series):
    cfg = growth_only_config(alpha_tilde=1.0)
    panel = run_simulation(cfg, flat_series, first_entry_year=1960, last_calendar_year=1960)
    ages, mass = super_critical_mass(panel, 1960)
    assert mass[-1] == eligible_fraction(0.43) == 205 / 841


def test_population_conservation(male_panel):
    for year in (1962, 1987, 2011):
        obs = observations(male_panel, year)
        cohort_w = male_panel.snapshot(year)[2] * 841
        sub = np.bincount(obs.ages - 15, weights=obs.weights, minlength=cohort_w.size)
        assert np.max(np.abs(sub + obs.tail_weights - cohort_w)) <= 1e-9 * cohort_w.max()


def test_person_weight_from_population():
    g = male_config()
    assert cohort_person_weight(g, 1962) == pytest.approx(1e5 / 841)
    pops = PopulationSeries({1962: (200e6, 142e6)})
    assert cohort_person_weight(g, 1962, pops) == pytest.approx(142e6 / 71 / 841)
    assert cohort_person_weight(g, 1963, pops) == pytest.approx(1e5 / 841)


def test_peak_age_non_decreasing(male_panel):
    from income_kinetics.statistics import mean_income_by_age, moving_average

    peaks = [moving_average(mean_income_by_age(male_panel, y), 7).peak_age()
             for y in male_panel.years]
    assert all(b >= a for a, b in zip(peaks, peaks[1:]))
    assert peaks[-1] - peaks[0] >= 3


def test_panel_accessors(male_panel):
    assert male_panel.max_experience == 70
    assert male_panel.ages[0] == 15 and male_panel.ages[-1] == 85
    assert male_panel.entry_years()[0] == 1962 - 70
    with pytest.raises(CoverageError):
        male_panel.snapshot(1950)
    with pytest.raises(CoverageError):
        male_panel.cohort(2020)
    assert math.isclose(male_panel.threshold(1962), 0.43)
