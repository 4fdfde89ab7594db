import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from income_kinetics.tail import DivergentMeanError, ParetoTail, synthesize_tail


def test_zero_mass_gives_empty_tail():
    tail = synthesize_tail(0.0, 0.43, 3.5)
    assert tail.x.size == 0 and tail.mass == 0.0


def test_ccdf_at_threshold_is_mass():
    tail = synthesize_tail(0.07, 0.43, 3.5)
    assert tail.ccdf[0] == 0.07
    assert ParetoTail(0.43, 3.5, 0.07).ccdf(0.43) == 0.07
    assert ParetoTail(0.43, 3.5, 0.07).ccdf(0.1) == 0.07


@given(mass=st.floats(1e-6, 1.0), thr=st.floats(0.01, 10), k=st.floats(1.1, 8))
def test_tail_probability_sums_to_mass(mass, thr, k):
    tail = synthesize_tail(mass, thr, k, sample_count=150)
    assert abs(tail.probability.sum() - mass) < 1e-9
    assert np.all(tail.probability >= 0)


@pytest.mark.parametrize("k", [1.5, 2.0, 3.5, 5.0])
def test_log_log_slope(k):
    tail = synthesize_tail(0.1, 0.43, k, sample_count=200, decades=2.0)
    slope = np.polyfit(np.log(tail.x), np.log(tail.ccdf), 1)[0]
    assert abs(slope + k) < 1e-3


def test_divergent_mean_rejected():
    with pytest.raises(DivergentMeanError):
        synthesize_tail(0.1, 0.43, 1.0)
    with pytest.raises(DivergentMeanError):
        ParetoTail(0.43, 0.9, 0.1)
    with pytest.raises(ValueError):
        synthesize_tail(1.5, 0.43, 3.0)


def test_conditional_mean():
    # mean of a Pareto law with x_min = 2 and index 3 is 3
    assert ParetoTail(2.0, 3.0, 0.2).conditional_mean() == pytest.approx(3.0)
