"""Text exports: simulation panels, age curves, SVG plots and run manifests.

Every file starts with ``#`` comment lines carrying the tool version and the
manifest hash of the run that produced it. Outputs are byte-reproducible:
floats are written in shortest round-trip form, rows in a fixed index order,
and gzip streams with a zero timestamp.
"""

import gzip
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import polars as pl

from . import __version__
from .engine import SimulationPanel
from .model import N_LEVELS
from .statistics import CURVE_KINDS, AgeCurve

TOOL = "income-kinetics"
GZIP_LEVEL = 1  # panels are large; speed over ratio
PANEL_COLUMNS = ("group", "calendar_year", "entry_year", "i", "j", "m_tilde", "regime")
COHORT_COLUMNS = ("group", "calendar_year", "entry_year", "age", "person_weight",
                  "pareto_threshold", "tail_exponent", "work_start_age")


class ExportError(ValueError):
    pass


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """What a run read and how it was asked to run.

    The hash covers the command, tool version, options and the *contents*
    of the inputs (keyed by role), so moving files or the output directory
    does not change it.
    """

    command: str
    inputs: dict = field(default_factory=dict)  # role -> path
    options: dict = field(default_factory=dict)
    output_dir: str = ""
    version: str = __version__

    def input_hashes(self):
        return {role: sha256_file(path) for role, path in sorted(self.inputs.items()) if path}

    @property
    def digest(self):
        h = hashlib.sha256()
        h.update(f"{TOOL} {self.version}\ncommand={self.command}\n".encode())
        for key, value in sorted(self.options.items()):
            h.update(f"option {key}={value!r}\n".encode())
        for role, digest in self.input_hashes().items():
            h.update(f"input {role}={digest}\n".encode())
        return h.hexdigest()

    def header(self):
        return f"# {TOOL} {self.version}, manifest={self.digest}"

    def to_text(self):
        lines = [self.header(), f"command = {self.command}", f"version = {self.version}",
                 f"output_dir = {self.output_dir}"]
        hashes = self.input_hashes()
        for role, path in sorted(self.inputs.items()):
            if path:
                lines.append(f"input.{role} = {path}")
                lines.append(f"sha256.{role} = {hashes[role]}")
        for key, value in sorted(self.options.items()):
            lines.append(f"option.{key} = {value}")
        lines.append(f"manifest = {self.digest}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir):
        path = Path(out_dir) / "manifest.txt"
        path.write_text(self.to_text(), encoding="utf-8")
        return path


def _header_line(manifest):
    if manifest is None:
        return f"# {TOOL} {__version__}, manifest=none"
    return manifest if isinstance(manifest, str) else manifest.header()


def _write_bytes(path, data):
    """Write text, gzip-compressed with a fixed timestamp if the name ends in .gz."""
    path = Path(path)
    raw = data.encode("utf-8")
    if path.suffix == ".gz":
        buf = io.BytesIO()
        with gzip.GzipFile(filename="", mode="wb", fileobj=buf, mtime=0,
                           compresslevel=GZIP_LEVEL) as gz:
            gz.write(raw)
        raw = buf.getvalue()
    path.write_bytes(raw)
    return path


def _open_text(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, encoding="utf-8")


def _comments(fh):
    """Consume leading ``#`` lines; returns them with the first data line."""
    comments = []
    for line in fh:
        if line.startswith("#"):
            comments.append(line.rstrip("\n"))
        else:
            return comments, line
    return comments, ""


# -- panels ----------------------------------------------------------------

def panel_frames(panel):
    """Cell and cohort tables of a panel, rows ordered by (year, entry year, i, j)."""
    n_years, n_exp = panel.m_tilde.shape[:2]
    n_cells = N_LEVELS * N_LEVELS
    years = np.repeat(panel.years, n_exp)
    # entry years descending within a year is experience ascending; flip to ascending entry
    exp = np.tile(np.arange(n_exp)[::-1], n_years)
    entry = years - exp
    m = panel.m_tilde[:, ::-1].reshape(-1, n_cells)
    regime = panel.regime[:, ::-1].reshape(-1, n_cells)
    ii, jj = np.divmod(np.arange(n_cells), N_LEVELS)
    cells = pl.DataFrame({
        "group": np.full(years.size * n_cells, panel.group_name),
        "calendar_year": np.repeat(years, n_cells),
        "entry_year": np.repeat(entry, n_cells),
        "i": np.tile(ii + 1, years.size),
        "j": np.tile(jj + 1, years.size),
        "m_tilde": m.ravel(),
        "regime": regime.ravel().astype(int),
    })
    cohorts = pl.DataFrame({
        "group": np.full(years.size, panel.group_name),
        "calendar_year": years,
        "entry_year": entry,
        "age": panel.work_start_age + exp,
        "person_weight": panel.person_weight[:, ::-1].ravel(),
        "pareto_threshold": np.repeat(panel.thresholds, n_exp),
        "tail_exponent": np.full(years.size, float(panel.tail_exponent)),
        "work_start_age": np.full(years.size, int(panel.work_start_age)),
    })
    return cells, cohorts


def _frame_text(frame, header, description):
    body = frame.write_csv(line_terminator="\n")
    return f"{header}\n# {description}\n{body}"


def write_panel(panel, path, manifest=None):
    """Write the cell table to ``path`` and the cohort table next to it.

    The cohort file is ``<stem>.cohorts.csv`` (plus ``.gz`` if the panel is
    compressed). Returns both paths.
    """
    path = Path(path)
    cells, cohorts = panel_frames(panel)
    header = _header_line(manifest)
    _write_bytes(path, _frame_text(
        cells, header,
        "one row per (group, calendar_year, entry_year, i, j); i, j are 1-based capability "
        "and instrument indices; m_tilde is normalized income; regime 0=growing, "
        "1=super-critical decay, 2=retirement decay",
    ))
    side = cohort_path(path)
    _write_bytes(side, _frame_text(
        cohorts, header,
        "persons per cell of each cohort; pareto_threshold in m_tilde units",
    ))
    return path, side


def cohort_path(panel_path):
    panel_path = Path(panel_path)
    name = panel_path.name
    gz = name.endswith(".gz")
    stem = name[:-3] if gz else name
    stem = stem[:-4] if stem.endswith(".csv") else stem
    return panel_path.with_name(f"{stem}.cohorts.csv" + (".gz" if gz else ""))


def _read_frame(path, columns):
    with _open_text(path) as fh:
        comments, first = _comments(fh)
        frame = pl.read_csv(io.StringIO(first + fh.read()))
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise ExportError(f"{path}: missing columns {', '.join(missing)}")
    return comments, frame


def read_panel(path):
    """Rebuild a ``SimulationPanel`` from ``write_panel`` output (plain or gzip)."""
    path = Path(path)
    _, cells = _read_frame(path, PANEL_COLUMNS)
    _, cohorts = _read_frame(cohort_path(path), COHORT_COLUMNS)
    groups = cells["group"].cast(pl.Utf8).unique().to_list()
    if len(groups) != 1:
        raise ExportError(f"{path}: expected one group, found {len(groups)}")
    col = {name: cells[name].to_numpy() for name in PANEL_COLUMNS[1:]}
    coh = {name: cohorts[name].to_numpy() for name in COHORT_COLUMNS[1:]}
    years = np.unique(coh["calendar_year"])
    ws = int(coh["work_start_age"][0])
    n_exp = int((coh["age"] - ws).max()) + 1
    n_years = years.size
    shape = (n_years, n_exp, N_LEVELS, N_LEVELS)
    if cells.height != np.prod(shape):
        raise ExportError(f"{path}: expected {np.prod(shape)} cell rows, got {cells.height}")
    yk = np.searchsorted(years, col["calendar_year"])
    ek = col["calendar_year"] - col["entry_year"]
    m = np.zeros(shape)
    regime = np.zeros(shape, dtype=np.int8)
    m[yk, ek, col["i"] - 1, col["j"] - 1] = col["m_tilde"].astype(float)
    regime[yk, ek, col["i"] - 1, col["j"] - 1] = col["regime"]
    weights = np.zeros((n_years, n_exp))
    cy = np.searchsorted(years, coh["calendar_year"])
    weights[cy, coh["age"] - ws] = coh["person_weight"].astype(float)
    thresholds = np.zeros(n_years)
    thresholds[cy] = coh["pareto_threshold"].astype(float)
    return SimulationPanel(
        group_name=str(groups[0]),
        years=years.astype(int),
        work_start_age=ws,
        m_tilde=m,
        regime=regime,
        person_weight=weights,
        thresholds=thresholds,
        tail_exponent=float(coh["tail_exponent"][0]),
    )


# -- curves ----------------------------------------------------------------

def curve_metadata(curve):
    smoothed = f"MA({curve.smoothing})" if curve.smoothing > 1 else "none"
    parts = [
        f"year={curve.year}",
        f"kind={curve.kind}",
        f"group={curve.group or 'all'}",
        f"smoothed={smoothed}",
        f"normalized={'true' if curve.normalized else 'false'}",
    ]
    if curve.threshold is not None:
        parts.append(f"threshold={curve.threshold!r}")
    parts.append(f"provenance={curve.provenance}")
    return "# " + ", ".join(parts)


def curve_text(curve, manifest=None):
    lines = [_header_line(manifest), curve_metadata(curve)]
    for flag in curve.flags:
        lines.append(f"# flag: {flag}")
    lines.append("age,value")
    lines.extend(f"{a},{float(v)!r}" for a, v in zip(curve.ages, curve.values))
    return "\n".join(lines) + "\n"


def write_curve(curve, path, manifest=None):
    return _write_bytes(path, curve_text(curve, manifest))


def _parse_metadata(comments):
    meta = {}
    for line in comments:
        body = line.lstrip("#").strip()
        if "year=" not in body or "kind=" not in body:
            continue
        for part in body.split(", "):
            key, sep, value = part.partition("=")
            if sep:
                meta[key.strip()] = value.strip()
    return meta


def read_curve(path):
    """Parse a curve file written by ``write_curve``."""
    with _open_text(path) as fh:
        comments, first = _comments(fh)
        rest = fh.read()
    meta = _parse_metadata(comments)
    if "kind" not in meta or "year" not in meta:
        raise ExportError(f"{path}: missing '# year=..., kind=...' metadata line")
    if meta["kind"] not in CURVE_KINDS:
        raise ExportError(f"{path}: unknown curve kind {meta['kind']!r}")
    if first.strip() != "age,value":
        raise ExportError(f"{path}: expected 'age,value' header, got {first.strip()!r}")
    ages, values = [], []
    for lineno, line in enumerate(rest.splitlines(), start=len(comments) + 2):
        if not line.strip():
            continue
        try:
            a, v = line.split(",")
            ages.append(int(a))
            values.append(float(v))
        except ValueError:
            raise ExportError(f"{path}:{lineno}: cannot parse {line!r}") from None
    smoothed = meta.get("smoothed", "none")
    window = int(smoothed[3:-1]) if smoothed.startswith("MA(") else 1
    threshold = meta.get("threshold")
    flags = tuple(c.split("flag:", 1)[1].strip() for c in comments if "flag:" in c)
    return AgeCurve(
        year=int(meta["year"]),
        kind=meta["kind"],
        ages=np.array(ages, dtype=int),
        values=np.array(values, dtype=float),
        group=meta.get("group", ""),
        smoothing=window,
        normalized=meta.get("normalized", "false") == "true",
        threshold=None if threshold in (None, "group") else float(threshold),
        provenance=meta.get("provenance", "model"),
        flags=flags,
    )


# -- SVG -------------------------------------------------------------------

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def svg_plot(curves, title="", width=640, height=400, manifest=None):
    """Static line plot of one or more curves against age."""
    curves = [c for c in curves if not c.empty]
    pad = 50
    if curves:
        x_lo = min(int(c.ages.min()) for c in curves)
        x_hi = max(int(c.ages.max()) for c in curves)
        y_lo = min(0.0, min(float(c.values.min()) for c in curves))
        y_hi = max(float(c.values.max()) for c in curves)
    else:
        x_lo, x_hi, y_lo, y_hi = 0, 1, 0.0, 1.0
    x_hi = max(x_hi, x_lo + 1)
    y_hi = y_hi if y_hi > y_lo else y_lo + 1.0

    def px(a):
        return pad + (a - x_lo) / (x_hi - x_lo) * (width - 2 * pad)

    def py(v):
        return height - pad - (v - y_lo) / (y_hi - y_lo) * (height - 2 * pad)

    header = _header_line(manifest).lstrip("# ")
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f"<!-- {header} -->",
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle" font-size="12">age</text>',
        f'<text x="{pad - 4}" y="{pad - 6}" font-size="11">{y_hi:.4g}</text>',
        f'<text x="{pad - 4}" y="{height - pad + 14}" font-size="11">{y_lo:.4g}</text>',
        f'<text x="{pad}" y="{height - pad + 28}" font-size="11">{x_lo}</text>',
        f'<text x="{width - pad}" y="{height - pad + 28}" font-size="11" '
        f'text-anchor="end">{x_hi}</text>',
    ]
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="14">'
                   f"{_escape(title)}</text>")
    for k, c in enumerate(curves):
        color = _COLORS[k % len(_COLORS)]
        pts = " ".join(f"{px(a):.2f},{py(v):.2f}" for a, v in zip(c.ages, c.values))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        label = f"{c.group or 'all'} {c.year} {c.kind}"
        out.append(f'<text x="{width - pad}" y="{pad + 14 * k}" font-size="11" '
                   f'text-anchor="end" fill="{color}">{_escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(text):
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def write_svg(curves, path, title="", manifest=None):
    return _write_bytes(path, svg_plot(curves, title=title, manifest=manifest))
