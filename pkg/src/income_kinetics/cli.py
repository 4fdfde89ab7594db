"""Command-line front end.

Exit codes: 0 success, 1 internal error, 2 input or validation error.
"""

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import DEFAULT_SEED, CalibrationError, CalibrationProblem, Target, fit
from .calibration import load_problem
from .calibration import result_text, trace_text
from .config import ConfigError, format_config, load_config
from .engine import run_simulation
from .exogenous import (
    SeriesError,
    load_series,
    normalize_to_base,
    working_age_correction,
)
from .exports import (
    ExportError,
    RunManifest,
    read_curve,
    read_panel,
    write_curve,
    write_panel,
    write_svg,
)
from .model import ModelDomainError, build_capacity_grid, eligible_fraction
from .statistics import (
    CURVE_KINDS,
    AgeCurve,
    CurveError,
    MicrodataError,
    group_ratio,
    ingest_microdata,
    mean_income_by_age,
    pareto_share_by_age,
    smooth_and_normalize,
)

log = logging.getLogger("income_kinetics")

INPUT_ERRORS = (FileNotFoundError, ConfigError, SeriesError, CurveError, MicrodataError,
                ExportError, CalibrationError, ModelDomainError)


class UsageError(ValueError):
    pass


def _existing(path, what):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{what} file not found: {path}")
    return path


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_settings(settings):
    run = settings.get("run", {})
    out = {}
    for key in ("base_year", "first_year", "last_year"):
        if key in run:
            try:
                out[key] = int(run[key])
            except ValueError:
                raise ConfigError(f"[run] {key} must be an integer, got {run[key]!r}") from None
    return out


def load_exogenous(gdp_path, population_path=None, base_year=None):
    """GDP file (plus optional population file) to a normalized series."""
    gdp = load_series(_existing(gdp_path, "GDP"))
    population = None
    if population_path:
        population = load_series(_existing(population_path, "population"), "population")
        gdp = working_age_correction(gdp, population)
    base = min(gdp) if base_year is None else base_year
    return normalize_to_base(gdp, base, source_note=str(gdp_path)), population


def _load_groups(args):
    groups, settings = load_config(_existing(args.config, "config"))
    if getattr(args, "group", None):
        missing = [g for g in args.group if g not in groups]
        if missing:
            raise ConfigError(
                f"unknown group(s) {', '.join(missing)}; config defines {', '.join(groups)}"
            )
        groups = {g: groups[g] for g in args.group}
    return groups, _run_settings(settings)


# -- commands ----------------------------------------------------------------

def cmd_simulate(args):
    groups, run = _load_groups(args)
    exo, population = load_exogenous(args.gdp, args.population,
                                     run.get("base_year", run.get("first_year")))
    first = args.first_year or run.get("first_year") or exo.base_year
    last = args.last_year or run.get("last_year") or exo.last_year
    out = _out_dir(args.out)
    manifest = RunManifest(
        command="simulate",
        inputs={"config": args.config, "gdp": args.gdp, "population": args.population},
        options={"groups": ",".join(groups), "first_year": first, "last_year": last},
        output_dir=str(out),
    )
    written = []
    for name, group in groups.items():
        panel = run_simulation(group, exo, population, first_entry_year=first,
                               last_calendar_year=last)
        written.extend(write_panel(panel, out / f"panel_{name}.csv.gz", manifest))
    written.append(manifest.write(out))
    for path in written:
        print(path)
    return 0


def _source_kind(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return "panel"
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            cols = [c.strip() for c in line.split(",")]
            if cols[:3] == ["group", "calendar_year", "entry_year"]:
                return "panel"
            if {"year", "age", "income"} <= set(cols):
                return "microdata"
            break
    raise UsageError(f"{path}: neither a panel export nor a microdata file")


def _parse_filter(text):
    if not text:
        return None
    out = {}
    for part in text.split(","):
        key, sep, value = part.partition("=")
        if not sep:
            raise UsageError(f"filter {text!r} must look like 'gender=F,race=100'")
        out[key.strip()] = value.strip()
    return out


def _base_curve(source, kind, year, threshold, group_filter):
    if kind == "mean_income":
        return mean_income_by_age(source, year, group_filter)
    if threshold is None:
        if not hasattr(source, "threshold"):
            raise UsageError("--threshold is required for pareto_share on microdata")
        threshold = source.threshold(year)
    return pareto_share_by_age(source, year, threshold, group_filter)


def cmd_curves(args):
    if args.kind not in CURVE_KINDS:
        raise UsageError(f"unknown kind {args.kind!r}; valid kinds: {', '.join(CURVE_KINDS)}")
    if args.ma < 1 or args.ma % 2 == 0:
        raise UsageError(f"--ma must be an odd integer >= 1, got {args.ma}")
    sources = []
    for path in args.source:
        path = _existing(path, "source")
        kind = _source_kind(path)
        sources.append(read_panel(path) if kind == "panel" else ingest_microdata(path))
    filters = [_parse_filter(f) for f in (args.filter or [])]
    if args.kind == "ratio":
        if len(sources) == 2:
            pairs = [(sources[0], filters[0] if filters else None),
                     (sources[1], filters[1] if len(filters) > 1 else None)]
        elif len(sources) == 1 and len(filters) == 2:
            pairs = [(sources[0], filters[0]), (sources[0], filters[1])]
        else:
            raise UsageError("ratio needs two sources, or one microdata source and two --filter")
        a, b = (_base_curve(s, args.ratio_of, args.year, args.threshold, f) for s, f in pairs)
        a = smooth_and_normalize(a, args.ma, False)
        b = smooth_and_normalize(b, args.ma, False)
        curve = group_ratio(a, b)
        if args.normalize:
            curve = smooth_and_normalize(curve, 1, True)
    else:
        if len(sources) != 1:
            raise UsageError(f"{args.kind} takes exactly one source")
        raw = _base_curve(sources[0], args.kind, args.year, args.threshold,
                          filters[0] if filters else None)
        curve = smooth_and_normalize(raw, args.ma, args.normalize)
    out = _out_dir(args.out)
    manifest = RunManifest(
        command="curves",
        inputs={f"source{k}": p for k, p in enumerate(args.source)},
        options={"year": args.year, "kind": args.kind, "ma": args.ma,
                 "normalize": bool(args.normalize), "threshold": args.threshold,
                 "filter": ";".join(args.filter or []), "ratio_of": args.ratio_of},
        output_dir=str(out),
    )
    group = (curve.group or "all").replace("/", "-").replace("=", "").replace(",", "_")
    stem = f"{args.kind}_{group}_{args.year}"
    paths = [write_curve(curve, out / f"{stem}.csv", manifest)]
    if args.svg:
        paths.append(write_svg([curve], out / f"{stem}.svg", title=stem, manifest=manifest))
    paths.append(manifest.write(out))
    for path in paths:
        print(path)
    return 0


def compare_curves(model, empirical):
    """Per-age residuals ``model - empirical`` on the shared ages."""
    ages, im, ie = np.intersect1d(model.ages, empirical.ages, return_indices=True)
    if ages.size == 0:
        raise CurveError("model and empirical curves share no ages")
    residual = model.values[im] - empirical.values[ie]
    summary = {
        "n_ages": int(ages.size),
        "max_abs_residual": float(np.max(np.abs(residual))),
        "rmse": math.sqrt(math.fsum(residual**2) / ages.size),
        "sse": math.fsum(residual**2),
    }
    return ages, model.values[im], empirical.values[ie], residual, summary


def cmd_compare(args):
    model = read_curve(_existing(args.model, "model curve"))
    empirical = read_curve(_existing(args.empirical, "empirical curve"))
    ages, mv, ev, res, summary = compare_curves(model, empirical)
    out = _out_dir(args.out)
    manifest = RunManifest(
        command="compare",
        inputs={"model": args.model, "empirical": args.empirical},
        output_dir=str(out),
    )
    lines = [manifest.header(), "age,model,empirical,residual"]
    lines += [f"{a},{m!r},{e!r},{r!r}" for a, m, e, r in
              zip(ages.tolist(), mv.tolist(), ev.tolist(), res.tolist())]
    (out / "residuals.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    text = [manifest.header()] + [f"{k} = {v!r}" for k, v in summary.items()]
    (out / "summary.txt").write_text("\n".join(text) + "\n", encoding="utf-8")
    empirical = AgeCurve(empirical.year, empirical.kind, empirical.ages, empirical.values,
                         group=f"{empirical.group} (empirical)", provenance=empirical.provenance)
    write_svg([model, empirical], out / "overlay.svg", title="model vs empirical",
              manifest=manifest)
    manifest.write(out)
    for k, v in summary.items():
        print(f"{k} = {v}")
    return 0


def cmd_calibrate(args):
    groups, run = _load_groups(args)
    settings, parameters, target_paths = load_problem(args.problem)
    name = settings.get("group") or next(iter(groups))
    if name not in groups:
        raise ConfigError(f"problem names group {name!r}; config defines {', '.join(groups)}")
    exo, population = load_exogenous(args.gdp, args.population,
                                     run.get("base_year", run.get("first_year")))
    targets = [Target(read_curve(_existing(p, "target curve")), w)
               for p, w in target_paths.items()]
    problem = CalibrationProblem(groups[name], parameters, targets,
                                 loss=settings.get("loss", "sse"), population=population)
    result = fit(problem, exo, budget=args.budget, seed=args.seed)
    out = _out_dir(args.out)
    inputs = {"config": args.config, "gdp": args.gdp, "population": args.population,
              "problem": args.problem}
    inputs.update({f"target{k}": p for k, p in enumerate(target_paths)})
    manifest = RunManifest(
        command="calibrate", inputs=inputs,
        options={"budget": args.budget, "seed": args.seed, "group": name},
        output_dir=str(out),
    )
    header = manifest.header()
    (out / "result.txt").write_text(result_text(result, header), encoding="utf-8")
    (out / "trace.csv").write_text(trace_text(result, header), encoding="utf-8")
    fitted = problem.configure(result.fitted)
    (out / "fitted.ini").write_text(header + "\n" + format_config(fitted), encoding="utf-8")
    manifest.write(out)
    print(result_text(result), end="")
    return 0


def cmd_grid_info(args):
    grid = build_capacity_grid()
    caps = grid.capacities
    mp0 = 0.43 if args.threshold is None else args.threshold
    lines = [
        f"cells = {caps.size}",
        f"min_capacity = {int(caps.min())}",
        f"max_capacity = {int(caps.max())}",
        f"max_over_min = {caps.max() / caps.min():g}",
        f"distinct_products = {np.unique(caps).size}",
        f"threshold = {mp0}",
        f"eligible_fraction = {eligible_fraction(mp0)!r}",
    ]
    if args.out:
        out = _out_dir(args.out)
        manifest = RunManifest(command="grid-info", options={"threshold": mp0},
                               output_dir=str(out))
        (out / "grid_info.txt").write_text(manifest.header() + "\n" + "\n".join(lines) + "\n",
                                           encoding="utf-8")
        manifest.write(out)
    print("\n".join(lines))
    return 0


# -- parser --------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="income-kinetics",
                     description="Cohort income simulation driven by GDP per capita.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_required=True):
        p.add_argument("--out", required=out_required, metavar="DIR")
        p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="reserved")

    p = sub.add_parser("simulate", help="run the cohort engine and export panels")
    p.add_argument("--config", required=True, metavar="PATH")
    p.add_argument("--gdp", required=True, metavar="PATH")
    p.add_argument("--population", metavar="PATH")
    p.add_argument("--group", action="append", help="simulate only this group (repeatable)")
    p.add_argument("--first-year", type=int)
    p.add_argument("--last-year", type=int)
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("curves", help="age curves from a panel export or microdata")
    p.add_argument("source", nargs="+", help="panel export or microdata file")
    p.add_argument("--year", type=int, required=True)
    p.add_argument("--kind", required=True, help=f"one of {', '.join(CURVE_KINDS)}")
    p.add_argument("--ratio-of", choices=("mean_income", "pareto_share"), default="mean_income")
    p.add_argument("--ma", type=int, default=1, metavar="K")
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--threshold", type=float, metavar="X")
    p.add_argument("--filter", action="append", metavar="KEY=VALUE,...",
                   help="microdata filter such as gender=F,race=200")
    p.add_argument("--svg", action="store_true", help="also write an SVG plot")
    common(p)
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("compare", help="residuals between a model and an empirical curve")
    p.add_argument("model")
    p.add_argument("empirical")
    common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("calibrate", help="fit group parameters to target curves")
    p.add_argument("problem", help="calibration problem file")
    p.add_argument("--config", required=True, metavar="PATH")
    p.add_argument("--gdp", required=True, metavar="PATH")
    p.add_argument("--population", metavar="PATH")
    p.add_argument("--budget", type=int, default=200, metavar="N")
    common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("grid-info", help="facts about the capacity grid")
    p.add_argument("--threshold", type=float, metavar="X")
    common(p, out_required=False)
    p.set_defaults(func=cmd_grid_info)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.INFO)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return exc.code if isinstance(exc.code, int) else 0
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
