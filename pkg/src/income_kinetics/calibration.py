"""Fitting group parameters to target age curves.

The search runs Nelder-Mead on the unit cube, with positive parameters
mapped on a log scale. Restarts begin at the best point found so far with a
fresh simplex whose size follows ``RESTART_SCALES`` and whose direction
signs come from a generator seeded with ``seed``, so a fit is reproducible.
"""

import configparser
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .config import ConfigError, get_parameter, with_parameters
from .engine import run_simulation
from .exogenous import SeriesError
from .model import ModelDomainError
from .statistics import (
    CurveError,
    mean_income_by_age,
    pareto_share_by_age,
    smooth_and_normalize,
)

log = logging.getLogger(__name__)

LOSSES = ("sse", "sae")
PENALTY = 1e6  # loss reported when a simulation fails
POSITIVE_ONLY = {"alpha_tilde", "sigma_min", "a_min", "tc0", "capacity", "cohort_size"}
RESTART_SCALES = (0.25, 0.1, 0.05, 0.02, 0.01)
DEFAULT_SEED = 20140101


class CalibrationError(ValueError):
    pass


class _BudgetExhausted(Exception):
    pass


@dataclass(frozen=True)
class FreeParameter:
    name: str
    lower: float
    upper: float
    initial: float
    log: bool = None  # default: log scale for positive-only parameters

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.lower, self.upper, self.initial)):
            raise CalibrationError(f"{self.name}: bounds and initial value must be finite")
        if not self.lower < self.upper:
            raise CalibrationError(f"{self.name}: need lower < upper, got {self.lower}, {self.upper}")
        if not self.lower <= self.initial <= self.upper:
            raise CalibrationError(f"{self.name}: initial {self.initial} outside bounds")
        if self.log is None:
            object.__setattr__(self, "log", self.name in POSITIVE_ONLY and self.lower > 0)
        if self.log and self.lower <= 0:
            raise CalibrationError(f"{self.name}: log scale needs a positive lower bound")

    def to_unit(self, value):
        if self.log:
            return (math.log(value) - math.log(self.lower)) / (math.log(self.upper) - math.log(self.lower))
        return (value - self.lower) / (self.upper - self.lower)

    def from_unit(self, u):
        u = min(max(float(u), 0.0), 1.0)
        if self.log:
            lo, hi = math.log(self.lower), math.log(self.upper)
            return min(max(math.exp(lo + u * (hi - lo)), self.lower), self.upper)
        return self.lower + u * (self.upper - self.lower)


@dataclass(frozen=True)
class Target:
    curve: object  # AgeCurve
    weight: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.weight) and self.weight > 0):
            raise CalibrationError(f"target weight must be positive, got {self.weight!r}")
        if self.curve.kind == "ratio":
            raise CalibrationError("ratio curves compare two groups; fit each group separately")
        if self.curve.empty:
            raise CalibrationError(f"target curve for {self.curve.year} is empty")


@dataclass(frozen=True)
class CalibrationProblem:
    group: object  # GroupConfig holding the fixed parameters
    parameters: tuple
    targets: tuple
    loss: str = "sse"
    population: object = None

    def __post_init__(self):
        object.__setattr__(self, "parameters", tuple(self.parameters))
        object.__setattr__(self, "targets", tuple(self.targets))
        if not self.targets:
            raise CalibrationError("at least one target curve is required")
        if not self.parameters:
            raise CalibrationError("at least one free parameter is required")
        names = [p.name for p in self.parameters]
        if len(set(names)) != len(names):
            raise CalibrationError(f"duplicate free parameters in {names}")
        for name in names:
            try:
                get_parameter(self.group, name)
            except ConfigError as exc:
                raise CalibrationError(str(exc)) from None
        if self.loss not in LOSSES:
            raise CalibrationError(f"unknown loss {self.loss!r}; valid: {', '.join(LOSSES)}")

    @property
    def names(self):
        return tuple(p.name for p in self.parameters)

    def initial(self):
        return {p.name: p.initial for p in self.parameters}

    def years(self):
        return sorted({t.curve.year for t in self.targets})

    def configure(self, values):
        return with_parameters(self.group, values)


@dataclass
class TraceEntry:
    evaluation: int
    parameters: dict
    loss: float


@dataclass
class CalibrationResult:
    fitted: dict
    loss: float
    trace: list = field(default_factory=list)  # best-so-far after each evaluation
    converged: bool = False
    reason: str = ""
    evaluations: int = 0


def model_curve(panel, target):
    """The simulated counterpart of a target curve, processed like the target."""
    curve = target.curve
    if curve.kind == "mean_income":
        sim = mean_income_by_age(panel, curve.year)
    else:
        threshold = panel.threshold(curve.year) if curve.threshold is None else curve.threshold
        sim = pareto_share_by_age(panel, curve.year, threshold)
    return smooth_and_normalize(sim, curve.smoothing, curve.normalized)


def _norm(residuals, loss):
    if loss == "sse":
        return math.fsum(float(r) * float(r) for r in residuals)
    return math.fsum(abs(float(r)) for r in residuals)


def target_losses(panel, problem):
    """Unweighted loss of each target against a simulated panel."""
    out = []
    for target in problem.targets:
        sim = model_curve(panel, target)
        ages, i_sim, i_tgt = np.intersect1d(sim.ages, target.curve.ages, return_indices=True)
        if ages.size == 0:
            raise CurveError(f"no shared ages for target {target.curve.kind} {target.curve.year}")
        out.append(_norm(sim.values[i_sim] - target.curve.values[i_tgt], problem.loss))
    return out


def objective(values, problem, exogenous):
    """Weighted loss of the targets at parameter ``values`` (dict or sequence).

    A simulation that fails for the given parameters yields ``PENALTY``.
    """
    if not isinstance(values, dict):
        values = dict(zip(problem.names, values))
    for p in problem.parameters:
        v = values[p.name]
        if not p.lower <= v <= p.upper:
            raise CalibrationError(f"{p.name} = {v} outside bounds [{p.lower}, {p.upper}]")
    years = problem.years()
    try:
        group = problem.configure(values).validate()
        panel = run_simulation(group, exogenous, problem.population,
                               first_entry_year=years[0], last_calendar_year=years[-1])
        losses = target_losses(panel, problem)
    except (ConfigError, ModelDomainError, SeriesError, CurveError, FloatingPointError) as exc:
        log.debug("objective penalty at %s: %s", values, exc)
        return PENALTY
    total = math.fsum(t.weight * v for t, v in zip(problem.targets, losses))
    return total if math.isfinite(total) else PENALTY


def _simplex(x0, scale, signs):
    d = x0.size
    pts = [x0.copy()]
    for k in range(d):
        x = x0.copy()
        step = scale * signs[k]
        if not 0.0 <= x[k] + step <= 1.0:
            step = -step
        x[k] = min(max(x[k] + step, 0.0), 1.0)
        pts.append(x)
    return np.array(pts)


def fit(problem, exogenous, budget=200, tol=1e-12, seed=DEFAULT_SEED):
    """Bounded Nelder-Mead with deterministic restarts; at most ``budget`` evaluations.

    Stops when the loss falls to ``tol`` or a full restart no longer improves
    the best loss by a relative 1e-9; otherwise reports the budget as exhausted.
    """
    budget = int(budget)
    if budget < 1:
        raise CalibrationError(f"budget must be at least 1, got {budget}")
    params = problem.parameters
    rng = np.random.default_rng(seed)
    state = {"n": 0, "best": math.inf, "x": None, "values": None}
    trace = []

    def to_values(u):
        return {p.name: p.from_unit(x) for p, x in zip(params, u)}

    def f(u, values=None):
        if state["n"] >= budget:
            raise _BudgetExhausted
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        values = to_values(u) if values is None else values
        loss = objective(values, problem, exogenous)
        state["n"] += 1
        if loss < state["best"]:
            state["best"], state["x"], state["values"] = loss, u.copy(), values
        trace.append(TraceEntry(state["n"], dict(state["values"]), state["best"]))
        return loss

    x0 = np.array([p.to_unit(p.initial) for p in params])
    converged, reason = False, "budget exhausted"
    try:
        f(x0, problem.initial())  # the initial point exactly, not via the unit cube
        restart = 0
        while state["best"] > tol:
            before = state["best"]
            scale = RESTART_SCALES[min(restart, len(RESTART_SCALES) - 1)]
            signs = rng.choice([-1.0, 1.0], size=x0.size)
            start = state["x"]
            minimize(
                f, start, method="Nelder-Mead",
                bounds=[(0.0, 1.0)] * x0.size,
                options={
                    "initial_simplex": _simplex(start, scale, signs),
                    "xatol": 1e-10, "fatol": tol * 1e-3,
                    "maxfev": budget, "adaptive": x0.size > 2,
                },
            )
            restart += 1
            if restart >= len(RESTART_SCALES) and before - state["best"] <= 1e-9 * before:
                converged, reason = True, "restart brought no further improvement"
                break
        else:
            converged, reason = True, f"loss at or below tolerance {tol:g}"
    except _BudgetExhausted:
        pass
    if state["n"] <= 1 and budget == 1:
        converged, reason = False, "budget exhausted after the initial point"
    return CalibrationResult(
        fitted=dict(state["values"]),
        loss=float(state["best"]),
        trace=trace,
        converged=converged,
        reason=reason,
        evaluations=state["n"],
    )


# -- problem and result files ---------------------------------------------

def _parser():
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep target paths as written
    return parser


def parse_problem(text, source="<string>"):
    """Parse a problem file into ``(settings, parameters, targets)``.

    ``settings`` holds the ``[problem]`` keys; ``parameters`` is a list of
    ``FreeParameter``; ``targets`` maps curve paths (relative to the problem
    file) to weights.
    """
    parser = _parser()
    try:
        parser.read_string(text, source=str(source))
    except configparser.Error as exc:
        raise CalibrationError(f"{source}: {exc}") from exc
    for section in ("parameters", "targets"):
        if not parser.has_section(section):
            raise CalibrationError(f"{source}: missing [{section}] section")
    settings = dict(parser.items("problem")) if parser.has_section("problem") else {}
    parameters = []
    for name, spec in parser.items("parameters"):
        parts = [p.strip() for p in spec.split(",")]
        if len(parts) != 3:
            raise CalibrationError(
                f"{source}: parameter {name!r} needs 'lower, upper, initial', got {spec!r}"
            )
        try:
            lower, upper, initial = (float(p) for p in parts)
        except ValueError:
            raise CalibrationError(f"{source}: cannot parse bounds for {name!r}: {spec!r}") from None
        parameters.append(FreeParameter(name, lower, upper, initial))
    targets = {}
    for path, weight in parser.items("targets"):
        try:
            targets[path] = float(weight) if weight.strip() else 1.0
        except ValueError:
            raise CalibrationError(f"{source}: bad weight {weight!r} for target {path}") from None
    if not targets:
        raise CalibrationError(f"{source}: no targets listed")
    return settings, parameters, targets


def load_problem(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"problem file not found: {path}")
    settings, parameters, targets = parse_problem(path.read_text(encoding="utf-8"), path)
    targets = {str((path.parent / p).resolve()) if not Path(p).is_absolute() else p: w
               for p, w in targets.items()}
    return settings, parameters, targets


def result_text(result, header=""):
    lines = [header] if header else []
    lines += [
        f"converged = {'true' if result.converged else 'false'}",
        f"reason = {result.reason}",
        f"evaluations = {result.evaluations}",
        f"loss = {result.loss!r}",
    ]
    lines += [f"{name} = {value!r}" for name, value in result.fitted.items()]
    return "\n".join(lines) + "\n"


def trace_text(result, header=""):
    names = list(result.fitted)
    lines = [header] if header else []
    lines.append(",".join(["evaluation", "loss", *names]))
    for entry in result.trace:
        row = [str(entry.evaluation), repr(entry.loss)]
        row += [repr(entry.parameters[n]) for n in names]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
