"""Loading and normalizing the GDP-per-capita driving series.

Series files are plain text, one ``year,value`` record per line (``#`` starts
a comment line); population files carry ``year,total,working_age``. Only
ratios matter downstream, so values may be in any currency unit.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType

import numpy as np

log = logging.getLogger(__name__)


class SeriesError(ValueError):
    """Malformed or inconsistent input series."""


class CoverageError(SeriesError):
    """A required calendar year is not covered by a series."""


def _parse_rows(lines, n_values, source):
    rows = {}
    seen_data = False
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        first, seen_data = not seen_data, True
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != n_values + 1:
            raise SeriesError(
                f"{source}:{lineno}: expected {n_values + 1} comma-separated fields, got {len(parts)}"
            )
        try:
            year = int(parts[0])
            values = tuple(float(p) for p in parts[1:])
        except ValueError:
            if first:  # header row
                continue
            raise SeriesError(f"{source}:{lineno}: cannot parse {line!r}") from None
        if not all(math.isfinite(v) for v in values):
            raise SeriesError(f"{source}:{lineno}: non-finite value in {line!r}")
        if year in rows:
            raise SeriesError(f"{source}:{lineno}: duplicate year {year}")
        rows[year] = values
    return rows


def load_series(path, format_spec="series"):
    """Read a ``year,value`` file (``format_spec="series"``) or a
    ``year,total,working_age`` file (``format_spec="population"``).

    Returns ``{year: value}`` or a ``PopulationSeries`` respectively. A header
    row on the first non-comment line is skipped.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"series file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    return parse_series(lines, format_spec, source=str(path))


def parse_series(lines, format_spec="series", source="<string>"):
    if isinstance(lines, str):
        lines = lines.splitlines()
    n_values = {"series": 1, "population": 2}.get(format_spec)
    if n_values is None:
        raise ValueError(f"unknown format {format_spec!r}; use 'series' or 'population'")
    rows = _parse_rows(lines, n_values, source)
    if not rows:
        raise SeriesError(f"{source}: empty input, no data rows")
    if format_spec == "series":
        return {year: v[0] for year, v in sorted(rows.items())}
    return PopulationSeries({year: v for year, v in sorted(rows.items())})


@dataclass(frozen=True)
class PopulationSeries:
    """Total and working-age (15+) population by calendar year."""

    values: dict

    def __post_init__(self):
        for year, (total, working) in self.values.items():
            if not 0 < working <= total:
                raise SeriesError(
                    f"population {year}: need 0 < working_age <= total, got {working}, {total}"
                )
        object.__setattr__(self, "values", MappingProxyType(dict(sorted(self.values.items()))))

    def total(self, year):
        return self.values[year][0]

    def working_age(self, year):
        return self.values[year][1]

    def __contains__(self, year):
        return year in self.values


def fill_gaps(table):
    """Fill missing interior years by log-linear interpolation."""
    years = sorted(table)
    if not years:
        return {}
    out = {}
    for y0, y1 in zip(years, years[1:]):
        v0, v1 = table[y0], table[y1]
        out[y0] = v0
        if y1 - y0 > 1:
            if v0 <= 0 or v1 <= 0:
                raise SeriesError(f"cannot interpolate across non-positive values {y0}-{y1}")
            log.info("filling %d missing years between %d and %d", y1 - y0 - 1, y0, y1)
            for y in range(y0 + 1, y1):
                frac = (y - y0) / (y1 - y0)
                out[y] = math.exp((1 - frac) * math.log(v0) + frac * math.log(v1))
    out[years[-1]] = table[years[-1]]
    return out


def working_age_correction(gdp_per_capita, populations):
    """Re-express GDP per capita per working-age person: ``gdp * total / working``."""
    shared = sorted(set(gdp_per_capita) & set(populations.values))
    if not shared:
        raise CoverageError("GDP and population series share no years")
    missing = [y for y in gdp_per_capita if y not in populations]
    if missing:
        log.warning(
            "population data missing for %d GDP years (%d-%d); those years are dropped",
            len(missing), min(missing), max(missing),
        )
    return {
        y: gdp_per_capita[y] * populations.total(y) / populations.working_age(y)
        for y in shared
    }


@dataclass(frozen=True)
class ExogenousSeries:
    """Real GDP per working-age capita, normalized so ``Y(base_year) == 1``."""

    base_year: int
    values: dict
    source_note: str = ""
    _years: np.ndarray = field(init=False, repr=False, compare=False)
    _log_values: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        values = dict(sorted(self.values.items()))
        years = list(values)
        if not years:
            raise SeriesError("empty exogenous series")
        if years != list(range(years[0], years[-1] + 1)):
            raise CoverageError("exogenous series must cover contiguous years")
        if any(not (v > 0 and math.isfinite(v)) for v in values.values()):
            raise SeriesError("exogenous series must be positive and finite")
        if values.get(self.base_year) != 1.0:
            raise SeriesError(f"Y({self.base_year}) must equal 1 exactly")
        object.__setattr__(self, "values", MappingProxyType(values))
        object.__setattr__(self, "_years", np.array(years, dtype=float))
        object.__setattr__(self, "_log_values", np.log(np.array(list(values.values()))))

    @property
    def first_year(self):
        return int(self._years[0])

    @property
    def last_year(self):
        return int(self._years[-1])

    def covers(self, first, last):
        return self.first_year <= first and last <= self.last_year

    def require(self, first, last, what="simulation"):
        if not self.covers(first, last):
            raise CoverageError(
                f"{what} needs years {first}-{last}; exogenous series covers "
                f"{self.first_year}-{self.last_year}"
            )

    def __call__(self, year):
        try:
            return self.values[year]
        except KeyError:
            raise CoverageError(f"year {year} outside exogenous coverage "
                                f"{self.first_year}-{self.last_year}") from None

    def at(self, time):
        """Y at fractional calendar time, interpolated geometrically between years."""
        time = np.asarray(time, dtype=float)
        if np.any(time < self._years[0]) or np.any(time > self._years[-1]):
            raise CoverageError(
                f"time outside exogenous coverage {self.first_year}-{self.last_year}"
            )
        return np.exp(np.interp(time, self._years, self._log_values))

    def as_table(self):
        return dict(self.values)


def normalize_to_base(series, base_year, source_note=""):
    """Divide every value by the base-year value; gaps are filled first."""
    if isinstance(series, ExogenousSeries):
        series = series.as_table()
        source_note = source_note or "renormalized"
    if base_year not in series:
        raise CoverageError(f"base year {base_year} not covered by the series")
    table = fill_gaps(series)
    base = table[base_year]
    if not base > 0:
        raise SeriesError(f"base-year value must be positive, got {base}")
    values = {y: v / base for y, v in table.items()}
    values[base_year] = 1.0
    return ExogenousSeries(base_year, values, source_note)


def splice_series(primary, extension, splice_year):
    """Prepend ``extension`` to ``primary``, rescaled to agree at ``splice_year``.

    Years of ``extension`` at or after the splice year are discarded.
    """
    if splice_year not in primary:
        raise CoverageError(f"primary series does not cover splice year {splice_year}")
    if splice_year not in extension:
        raise CoverageError(f"extension does not cover splice year {splice_year}")
    if not any(y < splice_year for y in extension):
        raise CoverageError(f"extension has no years before {splice_year}")
    if any(y < splice_year for y in primary):
        log.info("primary years before %d are replaced by the extension", splice_year)
    ratio = primary[splice_year] / extension[splice_year]
    merged = {y: v * ratio for y, v in extension.items() if y < splice_year}
    merged.update({y: v for y, v in primary.items() if y >= splice_year})
    merged = dict(sorted(merged.items()))
    years = list(merged)
    if years != list(range(years[0], years[-1] + 1)):
        merged = fill_gaps(merged)
    return merged


def synthetic_series(first_year, last_year, growth=0.02, base_year=None):
    """Exponential growth series, handy for experiments and fixtures."""
    base_year = first_year if base_year is None else base_year
    values = {
        y: math.exp(math.log1p(growth) * (y - base_year)) for y in range(first_year, last_year + 1)
    }
    values[base_year] = 1.0
    return ExogenousSeries(base_year, values, f"synthetic {growth:.2%}/year")
