"""Age-curve diagnostics shared by simulated panels and survey microdata.

Both sources are first reduced to weighted income observations for one
calendar year (``Observations``); every curve is then computed from those,
so model and data curves differ only in provenance. A simulated panel also
carries a Pareto tail per age: cells at or above the group's threshold are
replaced by a power-law population of the same weight.
"""

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .tail import ParetoTail

log = logging.getLogger(__name__)

CURVE_KINDS = ("mean_income", "pareto_share", "ratio")
MICRODATA_COLUMNS = ("year", "age", "income", "gender", "race", "weight")


class CurveError(ValueError):
    pass


class DegenerateCurveError(CurveError):
    pass


class AlignmentError(CurveError):
    pass


class MicrodataError(ValueError):
    pass


@dataclass(frozen=True)
class AgeCurve:
    """A quantity by one-year age cell for one calendar year.

    ``smoothing`` is the moving-average window applied (1 for none).
    """

    year: int
    kind: str
    ages: np.ndarray
    values: np.ndarray
    group: str = ""
    smoothing: int = 1
    normalized: bool = False
    threshold: float = None
    provenance: str = "model"
    flags: tuple = ()

    def __post_init__(self):
        if self.kind not in CURVE_KINDS:
            raise CurveError(f"unknown curve kind {self.kind!r}; valid: {', '.join(CURVE_KINDS)}")
        ages = np.asarray(self.ages, dtype=int)
        values = np.asarray(self.values, dtype=float)
        if ages.shape != values.shape or ages.ndim != 1:
            raise CurveError("ages and values must be 1-D arrays of equal length")
        if np.any(np.diff(ages) <= 0):
            raise CurveError("ages must be strictly increasing")
        object.__setattr__(self, "ages", ages)
        object.__setattr__(self, "values", values)

    @property
    def points(self):
        return list(zip(self.ages.tolist(), self.values.tolist()))

    @property
    def empty(self):
        return self.ages.size == 0

    def value_at(self, age):
        idx = np.flatnonzero(self.ages == age)
        return float(self.values[idx[0]]) if idx.size else None

    def peak_age(self):
        if self.empty:
            raise DegenerateCurveError("empty curve has no peak")
        return int(self.ages[np.argmax(self.values)])


@dataclass(frozen=True)
class Observations:
    """Weighted incomes for one year, plus optional per-age Pareto tails."""

    year: int
    ages: np.ndarray
    incomes: np.ndarray
    weights: np.ndarray
    tail_ages: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    tail_weights: np.ndarray = field(default_factory=lambda: np.empty(0))
    tail_threshold: float = math.inf
    tail_exponent: float = math.inf
    group: str = ""
    provenance: str = "microdata"

    def tail(self, weight):
        return ParetoTail(self.tail_threshold, self.tail_exponent, weight)


@dataclass(frozen=True)
class MicrodataSet:
    """Validated person records; ``rejections`` lists ``(line, reason)``."""

    year: np.ndarray
    age: np.ndarray
    income: np.ndarray
    gender: np.ndarray
    race: np.ndarray
    weight: np.ndarray
    rejections: tuple = ()
    source: str = ""

    @property
    def rejected(self):
        return len(self.rejections)

    def __len__(self):
        return int(self.year.size)


def _empty_microdata(source, rejections=()):
    return MicrodataSet(
        np.empty(0, dtype=int), np.empty(0, dtype=int), np.empty(0), np.empty(0, dtype="<U1"),
        np.empty(0, dtype=int), np.empty(0), tuple(rejections), source,
    )


def ingest_microdata(path, schema=MICRODATA_COLUMNS):
    """Read ``year,age,income,gender,race,weight`` person records.

    Rows with a negative income, age or weight are rejected and counted;
    rows that cannot be parsed raise ``MicrodataError`` with the line number.
    """
    path = Path(path)
    source = str(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [(n, line) for n, line in enumerate(fh, start=1)
                if line.strip() and not line.lstrip().startswith("#")]
    if not rows:
        warnings.warn(f"{source}: empty microdata file", stacklevel=2)
        return _empty_microdata(source)
    header_line, header = rows[0]
    columns = [c.strip() for c in next(csv.reader([header]))]
    missing = [c for c in schema if c not in columns]
    if missing:
        raise MicrodataError(f"{source}:{header_line}: missing columns {', '.join(missing)}")
    index = {c: columns.index(c) for c in schema}
    parsed = {c: [] for c in schema}
    rejections = []
    for lineno, line in rows[1:]:
        fields = next(csv.reader([line]))
        if len(fields) != len(columns):
            raise MicrodataError(
                f"{source}:{lineno}: expected {len(columns)} fields, got {len(fields)}"
            )
        try:
            rec = {
                "year": int(fields[index["year"]]),
                "age": int(float(fields[index["age"]])),
                "income": float(fields[index["income"]]),
                "gender": fields[index["gender"]].strip().upper(),
                "race": int(fields[index["race"]]),
                "weight": float(fields[index["weight"]]),
            }
        except ValueError as exc:
            raise MicrodataError(f"{source}:{lineno}: {exc}") from None
        if rec["gender"] not in ("M", "F"):
            raise MicrodataError(f"{source}:{lineno}: gender must be M or F, got {rec['gender']!r}")
        reason = None
        if not math.isfinite(rec["income"]) or rec["income"] < 0:
            reason = f"negative or non-finite income {rec['income']}"
        elif rec["age"] < 0:
            reason = f"negative age {rec['age']}"
        elif not math.isfinite(rec["weight"]) or rec["weight"] < 0:
            reason = f"negative or non-finite weight {rec['weight']}"
        if reason:
            log.warning("%s:%d: rejected record: %s", source, lineno, reason)
            rejections.append((lineno, reason))
            continue
        for key in schema:
            parsed[key].append(rec[key])
    if not parsed["year"]:
        warnings.warn(f"{source}: no valid microdata records", stacklevel=2)
        return _empty_microdata(source, rejections)
    return MicrodataSet(
        year=np.array(parsed["year"], dtype=int),
        age=np.array(parsed["age"], dtype=int),
        income=np.array(parsed["income"], dtype=float),
        gender=np.array(parsed["gender"]),
        race=np.array(parsed["race"], dtype=int),
        weight=np.array(parsed["weight"], dtype=float),
        rejections=tuple(rejections),
        source=source,
    )


def _filter_label(group_filter):
    if not group_filter:
        return ""
    if isinstance(group_filter, str):
        return group_filter
    return ",".join(f"{k}={v}" for k, v in sorted(group_filter.items()))


def observations(source, year, group_filter=None):
    """Reduce a panel or a microdata set to weighted observations for ``year``."""
    if isinstance(source, Observations):
        return source
    if isinstance(source, MicrodataSet):
        return _microdata_observations(source, year, group_filter)
    if hasattr(source, "m_tilde"):
        return _panel_observations(source, year, group_filter)
    raise TypeError(f"unsupported curve source {type(source).__name__}")


def _microdata_observations(data, year, group_filter):
    keep = data.year == year
    for key, value in (group_filter or {}).items():
        if key == "gender":
            keep &= data.gender == str(value).upper()
        elif key == "race":
            keep &= data.race == int(value)
        else:
            raise CurveError(f"unknown microdata filter {key!r}; use gender or race")
    return Observations(
        year=year,
        ages=data.age[keep],
        incomes=data.income[keep],
        weights=data.weight[keep],
        group=_filter_label(group_filter),
        provenance="microdata",
    )


def _panel_observations(panel, year, group_filter):
    wanted = group_filter.get("group") if isinstance(group_filter, dict) else group_filter
    m, _, weights = panel.snapshot(year)
    thr = panel.threshold(year)
    n_exp = m.shape[0]
    m = m.reshape(n_exp, -1)
    cell_w = np.repeat(weights[:, None], m.shape[1], axis=1)
    if wanted and wanted != panel.group_name:
        cell_w = np.zeros_like(cell_w)
    above = m >= thr
    ages = np.repeat(panel.ages[:, None], m.shape[1], axis=1)
    sub = ~above
    return Observations(
        year=year,
        ages=ages[sub],
        incomes=m[sub],
        weights=cell_w[sub],
        tail_ages=panel.ages.copy(),
        tail_weights=(cell_w * above).sum(axis=1),
        tail_threshold=thr,
        tail_exponent=panel.tail_exponent,
        group=panel.group_name,
        provenance="model",
    )


def _age_index(obs):
    ages = np.union1d(obs.ages, obs.tail_ages[obs.tail_weights > 0]).astype(int)
    return ages, np.searchsorted(ages, obs.ages), np.searchsorted(ages, obs.tail_ages)


def _by_age(obs, record_values, tail_values):
    """Weighted sums per age of record values and tail contributions."""
    ages, rec_idx, tail_idx = _age_index(obs)
    n = ages.size
    total_w = np.bincount(rec_idx, weights=obs.weights, minlength=n)
    total_v = np.bincount(rec_idx, weights=obs.weights * record_values, minlength=n)
    if obs.tail_ages.size:
        live = obs.tail_weights > 0
        total_w += np.bincount(tail_idx[live], weights=obs.tail_weights[live], minlength=n)
        total_v += np.bincount(tail_idx[live], weights=tail_values[live], minlength=n)
    return ages, total_w, total_v


def _curve(obs, kind, ages, total_w, total_v, threshold=None):
    populated = total_w > 0
    flags = ()
    if not populated.any():
        flags = ("empty",)
        log.info("empty %s curve for %s in %s", kind, obs.group or "all", obs.year)
    return AgeCurve(
        year=obs.year,
        kind=kind,
        ages=ages[populated],
        values=total_v[populated] / total_w[populated],
        group=obs.group,
        threshold=threshold,
        provenance=obs.provenance,
        flags=flags,
    )


def mean_income_by_age(source, year, group_filter=None):
    """Weighted mean income in each one-year age cell.

    Tail populations contribute their power-law conditional mean. Ages
    without observations are absent from the curve, not zero.
    """
    obs = observations(source, year, group_filter)
    tail_mean = obs.tail(0.0).conditional_mean() if obs.tail_ages.size else 0.0
    ages, w, v = _by_age(obs, obs.incomes, obs.tail_weights * tail_mean)
    return _curve(obs, "mean_income", ages, w, v)


def pareto_share_by_age(source, year, threshold, group_filter=None):
    """Weighted fraction of each age cell with income at or above ``threshold``."""
    obs = observations(source, year, group_filter)
    above = (obs.incomes >= threshold).astype(float)
    tail_part = np.empty(0)
    if obs.tail_ages.size:
        tail_part = obs.tail_weights * obs.tail(1.0).ccdf(threshold)
    ages, w, v = _by_age(obs, above, tail_part)
    return _curve(obs, "pareto_share", ages, w, np.minimum(v, w), threshold=float(threshold))


def moving_average(curve, window=7):
    """Centered moving average over ages; near the ends the window shrinks
    symmetrically so no values are invented beyond the age range."""
    if window < 1 or window % 2 == 0:
        raise CurveError(f"moving-average window must be odd and >= 1, got {window}")
    if window == 1 or curve.empty:
        return replace(curve, smoothing=window)
    half = window // 2
    ages, values = curve.ages, curve.values
    lo, hi = ages[0], ages[-1]
    out = np.empty_like(values)
    for k, age in enumerate(ages):
        h = min(half, age - lo, hi - age)
        inside = (ages >= age - h) & (ages <= age + h)
        out[k] = values[inside].mean()
    return replace(curve, values=out, smoothing=window)


def normalize_to_peak(curve):
    if curve.empty or not curve.values.max() > 0:
        raise DegenerateCurveError(f"{curve.kind} curve for {curve.year} has no positive peak")
    return replace(curve, values=curve.values / curve.values.max(), normalized=True)


def smooth_and_normalize(curve, window=1, normalize=False):
    """Smoothing always precedes normalization."""
    if window and window > 1:
        curve = moving_average(curve, window)
    if normalize:
        curve = normalize_to_peak(curve)
    return curve


def group_ratio(curve_a, curve_b):
    """Pointwise ratio ``a / b`` on the shared ages; ages where b is 0 are dropped."""
    if curve_a.year != curve_b.year:
        raise AlignmentError(f"curves are for different years ({curve_a.year}, {curve_b.year})")
    ages, ia, ib = np.intersect1d(curve_a.ages, curve_b.ages, return_indices=True)
    if ages.size == 0:
        raise AlignmentError("curves share no ages")
    a, b = curve_a.values[ia], curve_b.values[ib]
    ok = b > 0
    flags = ()
    if not ok.all():
        dropped = ages[~ok].tolist()
        flags = (f"zero denominator at ages {dropped}",)
        log.warning("group ratio: zero denominator at ages %s", dropped)
    return AgeCurve(
        year=curve_a.year,
        kind="ratio",
        ages=ages[ok],
        values=a[ok] / b[ok],
        group=f"{curve_a.group}/{curve_b.group}",
        smoothing=max(curve_a.smoothing, curve_b.smoothing),
        normalized=curve_a.normalized and curve_b.normalized,
        provenance=curve_a.provenance,
        flags=flags,
    )


def is_single_peaked(values, tol=0.0):
    """True if values rise (weakly) to their maximum and then fall (weakly)."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return False
    k = int(np.argmax(values))
    d = np.diff(values)
    return bool(np.all(d[:k] >= -tol) and np.all(d[k:] <= tol))
