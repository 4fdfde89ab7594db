import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from income_kinetics.statistics import (
    AgeCurve,
    AlignmentError,
    CurveError,
    DegenerateCurveError,
    MicrodataError,
    Observations,
    group_ratio,
    ingest_microdata,
    is_single_peaked,
    mean_income_by_age,
    moving_average,
    normalize_to_peak,
    observations,
    pareto_share_by_age,
    smooth_and_normalize,
)

HEADER = "year,age,income,gender,race,weight\n"


def obs(ages, incomes, weights=None, year=2000):
    ages = np.asarray(ages)
    weights = np.ones(len(ages)) if weights is None else np.asarray(weights, float)
    return Observations(year, ages, np.asarray(incomes, float), weights)


def curve(values, start=20, kind="mean_income"):
    values = np.asarray(values, float)
    return AgeCurve(2000, kind, np.arange(start, start + values.size), values)


def write(tmp_path, text, name="micro.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_mean_of_equal_weights():
    c = mean_income_by_age(obs([40, 40, 40], [10, 20, 30]), 2000)
    assert c.points == [(40, 20.0)]


def test_mean_weighted_and_single_record():
    c = mean_income_by_age(obs([30, 30, 50], [10, 40, 7], [3, 1, 2]), 2000)
    assert c.points == [(30, 17.5), (50, 7.0)]


def test_absent_ages_are_not_zero():
    c = mean_income_by_age(obs([20, 25], [1, 2]), 2000)
    assert c.ages.tolist() == [20, 25]


def test_panel_work_start_age_is_zero(male_panel):
    c = mean_income_by_age(male_panel, 1990)
    assert c.value_at(15) == 0
    assert c.provenance == "model" and c.group == "male"


def test_empty_group_is_flagged(male_panel):
    c = mean_income_by_age(male_panel, 1990, "female")
    assert c.empty and c.flags == ("empty",)
    e = mean_income_by_age(obs([], []), 2000)
    assert e.empty and "empty" in e.flags


def test_share_examples():
    o = obs([40, 40, 40], [0.2, 0.5, 0.9])
    assert pareto_share_by_age(o, 2000, 0.43).values[0] == pytest.approx(2 / 3)
    o = obs([20, 20, 30], [1.0, 2.0, 3.0])
    assert pareto_share_by_age(o, 2000, 0.0).values.tolist() == [1.0, 1.0]
    assert pareto_share_by_age(o, 2000, 10.0).values.tolist() == [0.0, 0.0]


def test_panel_share_bounded(male_panel):
    c = pareto_share_by_age(male_panel, 2000, male_panel.threshold(2000))
    assert np.all((c.values >= 0) & (c.values <= 1))
    assert c.threshold == male_panel.threshold(2000)


def test_panel_mean_includes_tail(male_panel):
    # a panel tail makes the mean exceed the sub-threshold mean at old ages
    o = observations(male_panel, 2000)
    c = mean_income_by_age(o, 2000)
    sub = np.bincount(o.ages - 15, weights=o.weights * o.incomes, minlength=71)
    w = np.bincount(o.ages - 15, weights=o.weights, minlength=71)
    has_tail = o.tail_weights > 0
    assert has_tail.any()
    k = np.flatnonzero(has_tail)[0]
    assert c.values[k] > sub[k] / w[k]


def test_moving_average_examples():
    flat = curve(np.full(12, 3.5))
    assert np.array_equal(moving_average(flat, 7).values, flat.values)
    c = curve(np.arange(9.0))
    assert np.array_equal(moving_average(c, 1).values, c.values)
    impulse = np.zeros(21)
    impulse[10] = 1.0
    out = moving_average(curve(impulse), 7).values
    expected = np.zeros(21)
    expected[7:14] = 1 / 7
    np.testing.assert_allclose(out, expected, atol=1e-15)
    with pytest.raises(CurveError):
        moving_average(c, 6)
    with pytest.raises(CurveError):
        moving_average(c, 0)


def test_moving_average_edges_truncate_symmetrically():
    out = moving_average(curve([1.0, 2.0, 9.0, 4.0, 5.0]), 7).values
    # first and last points keep only themselves, the second averages three
    assert out[0] == 1.0 and out[-1] == 5.0
    assert out[1] == pytest.approx(4.0)
    assert out[2] == pytest.approx(21 / 5)


def test_normalize_examples():
    c = normalize_to_peak(curve([2, 4, 3]))
    assert c.values.tolist() == [0.5, 1.0, 0.75] and c.normalized
    already = curve([0.5, 1.0, 0.2])
    assert np.array_equal(normalize_to_peak(already).values, already.values)
    with pytest.raises(DegenerateCurveError):
        normalize_to_peak(curve([0, 0, 0]))


def test_smooth_then_normalize_order():
    c = curve([0, 0, 0, 7, 0, 0, 0])
    out = smooth_and_normalize(c, 7, True)
    assert out.values.max() == 1.0 and out.smoothing == 7 and out.normalized


def test_ratio_examples():
    b = curve([1.0, 2.0, 4.0])
    assert group_ratio(b, b).values.tolist() == [1.0, 1.0, 1.0]
    a = curve([2.0, 4.0, 8.0])
    assert group_ratio(a, b).values.tolist() == [2.0, 2.0, 2.0]
    z = curve([1.0, 0.0, 4.0])
    r = group_ratio(a, z)
    assert r.ages.tolist() == [20, 22] and r.flags
    with pytest.raises(AlignmentError):
        group_ratio(a, curve([1.0], start=80))
    with pytest.raises(AlignmentError):
        group_ratio(a, AgeCurve(1999, "mean_income", b.ages, b.values))


def test_curve_validation():
    with pytest.raises(CurveError, match="valid"):
        AgeCurve(2000, "median", [1], [1.0])
    with pytest.raises(CurveError):
        AgeCurve(2000, "mean_income", [2, 1], [1.0, 1.0])


def test_single_peaked():
    assert is_single_peaked([1, 2, 3, 2, 1])
    assert not is_single_peaked([1, 3, 1, 3, 1])
    assert not is_single_peaked([])


def test_ingest_three_rows(tmp_path):
    p = write(tmp_path, HEADER + "2000,30,100,M,100,1\n2000,31,50.5,F,200,2\n2000,32,0,m,100,1\n")
    data = ingest_microdata(p)
    assert len(data) == 3 and data.rejected == 0
    assert data.gender.tolist() == ["M", "F", "M"]


def test_ingest_rejects_negative_income(tmp_path, caplog):
    p = write(tmp_path, HEADER + "2000,30,100,M,100,1\n2000,31,-5,F,200,2\n")
    data = ingest_microdata(p)
    assert len(data) == 1 and data.rejected == 1
    assert data.rejections[0][0] == 3
    assert "rejected" in caplog.text


def test_ingest_empty_file_warns(tmp_path):
    p = write(tmp_path, "")
    with pytest.warns(UserWarning, match="empty"):
        data = ingest_microdata(p)
    assert len(data) == 0


def test_ingest_schema_errors(tmp_path):
    with pytest.raises(MicrodataError, match=":1:"):
        ingest_microdata(write(tmp_path, "year,age,income\n2000,1,2\n"))
    with pytest.raises(MicrodataError, match=":3:"):
        ingest_microdata(write(tmp_path, HEADER + "2000,30,100,M,100,1\n2000,x,1,M,100,1\n"))
    with pytest.raises(MicrodataError, match=":2:"):
        ingest_microdata(write(tmp_path, HEADER + "2000,30,100,M\n"))


def test_microdata_filters(tmp_path):
    p = write(tmp_path, HEADER + "2000,30,100,M,100,1\n2000,30,50,F,100,1\n"
              "2000,30,10,M,200,1\n1999,30,1,M,100,1\n")
    data = ingest_microdata(p)
    assert mean_income_by_age(data, 2000).values.tolist() == [pytest.approx(160 / 3)]
    assert mean_income_by_age(data, 2000, {"gender": "m"}).values.tolist() == [55.0]
    assert mean_income_by_age(data, 2000, {"gender": "M", "race": 200}).values.tolist() == [10.0]
    with pytest.raises(CurveError):
        mean_income_by_age(data, 2000, {"state": "NY"})


def test_same_code_path_for_both_sources(tmp_path, male_panel):
    # a microdata file holding the panel's sub-threshold cells reproduces its curve
    o = observations(male_panel, 1962)
    young = o.ages <= 25
    rows = [f"1962,{a},{float(m)!r},M,100,{float(w)!r}" for a, m, w in
            zip(o.ages[young], o.incomes[young], o.weights[young])]
    data = ingest_microdata(write(tmp_path, HEADER + "\n".join(rows) + "\n"))
    model = mean_income_by_age(male_panel, 1962)
    emp = mean_income_by_age(data, 1962)
    np.testing.assert_allclose(emp.values, model.values[:emp.ages.size], rtol=1e-12)
    assert emp.provenance == "microdata"


values = st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=40)


@given(values, st.sampled_from([1, 3, 5, 7, 9]))
def test_ma_bounded_by_input(vals, window):
    out = moving_average(curve(vals), window).values
    assert np.all(out <= max(vals) * (1 + 1e-12) + 1e-300)
    assert np.all(out >= min(vals) * (1 - 1e-12))


@given(st.lists(st.floats(0, 1e3, allow_nan=False), min_size=1, max_size=30))
def test_ma_sum_invariance_interior(core):
    vals = np.concatenate([np.zeros(6), core, np.zeros(6)])
    out = moving_average(curve(vals), 7).values
    assert math.isclose(out.sum(), vals.sum(), rel_tol=1e-12, abs_tol=1e-12)


@given(values)
def test_normalize_preserves_argmax(vals):
    c = curve(vals)
    if max(vals) <= 0:
        return
    n = normalize_to_peak(c)
    assert n.peak_age() == c.peak_age() and n.values.max() == 1.0


@given(st.lists(st.tuples(st.integers(20, 25), st.floats(0, 10), st.floats(0.1, 5)),
                min_size=1, max_size=50),
       st.floats(0, 10), st.floats(0, 10))
def test_share_monotone_in_threshold(records, t1, t2):
    lo, hi = sorted((t1, t2))
    ages, inc, w = map(np.array, zip(*records))
    o = obs(ages, inc, w)
    a = pareto_share_by_age(o, 2000, lo).values
    b = pareto_share_by_age(o, 2000, hi).values
    assert np.all(b <= a + 1e-15)
    assert np.all((a >= 0) & (a <= 1))


@given(st.floats(0.05, 0.99))
def test_panel_share_monotone_in_threshold(male_panel, thr):
    a = pareto_share_by_age(male_panel, 1990, thr).values
    b = pareto_share_by_age(male_panel, 1990, thr * 1.1).values
    assert np.all(b <= a + 1e-15)
