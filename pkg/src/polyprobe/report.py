"""Tables, trend checks, loss-roughness diagnostics and SVG plots for a sweep."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from matplotlib.figure import Figure

from .errors import ContractError, DegenerateInputError
from .experiment import COMBINED, SweepReport, load_report
from .gan import LossCurve

log = logging.getLogger(__name__)

TABLE_HEADER = ("vertices", "mean_shift", "min_segment_angle", "is_avg", "is_std", "remarks")
SOURCES = ("synthetic", "generated")
PLOT_FAMILIES = ("is_vs_angle", "std_dist", "vs_vertices", "is_diff", "combined", "loss")


@dataclass(frozen=True)
class TableRow:
    vertices: int | str
    mean_shift: bool
    min_segment_angle: float
    is_avg: float | None
    is_std: float | None
    remarks: str = ""

    @property
    def cell(self) -> tuple:
        return self.vertices, self.mean_shift, self.min_segment_angle


def _sort_key(row: TableRow):
    v = row.vertices
    return (1, 0) if v == COMBINED else (0, int(v)), not row.mean_shift, row.min_segment_angle


def _fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    return str(int(x)) if x.is_integer() and abs(x) < 1e15 else repr(x)


def _expected_cells(config: dict) -> list[tuple]:
    if not config:
        return []
    cells = [
        (int(v), bool(s), float(a))
        for v in config.get("vertex_counts", ())
        for s in config.get("shift_options", ())
        for a in config.get("angle_options", ())
    ]
    if config.get("include_combined"):
        cells += [(COMBINED, bool(s), float(a)) for s in config.get("combined_shift_options", ()) for a in config.get("angle_options", ())]
    return cells


def table_rows(report: SweepReport, source: str) -> list[TableRow]:
    """One row per record plus flagged empty rows for expected but missing cells."""
    if source not in SOURCES:
        raise ContractError(f"source must be one of {SOURCES}, got {source!r}")
    rows = {}
    for r in report.records:
        res = r.is_synthetic if source == "synthetic" else r.is_generated
        cell = (r.vertices, r.mean_shift, float(r.min_segment_angle))
        if res is None:
            rows[cell] = TableRow(*cell, None, None, r.status if r.status != "done" else "missing")
        else:
            rows[cell] = TableRow(*cell, res.is_avg, res.is_std)
    for cell in _expected_cells(report.config):
        rows.setdefault(cell, TableRow(*cell, None, None, "missing"))
    return sorted(rows.values(), key=_sort_key)


def write_table(path, rows: Iterable[TableRow]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_HEADER)
        for r in rows:
            w.writerow([r.vertices, str(r.mean_shift).lower(), _fmt(r.min_segment_angle), _fmt(r.is_avg), _fmt(r.is_std), r.remarks])
    return path


def read_table(path) -> list[TableRow]:
    """Parse a table CSV; the ``remarks`` column is optional."""
    out = []
    with Path(path).open(newline="") as fh:
        for d in csv.DictReader(fh):
            v = d["vertices"].strip()
            out.append(TableRow(
                COMBINED if v == COMBINED else int(v),
                d["mean_shift"].strip().lower() == "true",
                float(d["min_segment_angle"]),
                float(d["is_avg"]) if d["is_avg"].strip() else None,
                float(d["is_std"]) if d["is_std"].strip() else None,
                (d.get("remarks") or "").strip(),
            ))
    return out


def emit_tables(report: SweepReport, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return [write_table(out / f"table_{source}.csv", table_rows(report, source)) for source in SOURCES]


# -- statistics -------------------------------------------------------------------


def pearson_corr(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ContractError(f"pearson_corr needs two equal-length 1-D sequences, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise ContractError("pearson_corr needs at least 2 points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInputError("correlation is undefined when either input has zero variance")
    return float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))


@dataclass(frozen=True)
class GroupResult:
    group: tuple
    passed: bool | None  # None: data missing for this group
    values: tuple = ()


@dataclass(frozen=True)
class TrendCheckResult:
    name: str
    details: tuple[GroupResult, ...]

    @property
    def tested(self) -> int:
        return sum(d.passed is not None for d in self.details)

    @property
    def passed(self) -> int:
        return sum(d.passed is True for d in self.details)

    @property
    def partial(self) -> bool:
        return any(d.passed is None for d in self.details)

    @property
    def pass_fraction(self) -> float:
        return self.passed / self.tested if self.tested else 0.0

    def summary(self) -> str:
        s = f"{self.name}: {self.passed}/{self.tested} ({self.pass_fraction:.2f})"
        return s + " [partial]" if self.partial else s


def _rows_of(data) -> list[TableRow]:
    if isinstance(data, SweepReport):
        return table_rows(data, "synthetic")
    return list(data)


def trend_checks(data) -> list[TrendCheckResult]:
    """Quad-highest, angle-monotone (unshifted) and mean-shift effect over ``is_avg``.

    ``data`` is a :class:`SweepReport` (synthetic scores are used) or table rows.
    """
    rows = [r for r in _rows_of(data) if r.vertices != COMBINED]
    avg = {r.cell: r.is_avg for r in rows if r.is_avg is not None}
    shifts = sorted({r.mean_shift for r in rows}, reverse=True)
    angles = sorted({r.min_segment_angle for r in rows})
    vertices = sorted({int(r.vertices) for r in rows})

    def get(*cells):
        vals = [avg.get(c) for c in cells]
        return None if any(v is None for v in vals) else vals

    quad = []
    for s in shifts:
        for a in angles:
            vals = get((3, s, a), (4, s, a), (5, s, a))
            ok = None if vals is None else vals[1] > vals[0] and vals[1] > vals[2]
            quad.append(GroupResult((s, a), ok, tuple(vals or ())))
    mono = []
    for v in vertices:
        vals = get(*[(v, False, a) for a in angles])
        ok = None if vals is None or len(vals) < 2 else all(p > q for p, q in zip(vals, vals[1:]))
        mono.append(GroupResult((v,), ok, tuple(vals or ())))
    shift = []
    for v in vertices:
        for a in angles:
            vals = get((v, True, a), (v, False, a))
            shift.append(GroupResult((v, a), None if vals is None else vals[0] < vals[1], tuple(vals or ())))
    return [
        TrendCheckResult("quad_highest", tuple(quad)),
        TrendCheckResult("angle_monotone", tuple(mono)),
        TrendCheckResult("mean_shift_effect", tuple(shift)),
    ]


def roughness(series: Sequence[float]) -> float:
    """Mean absolute successive difference divided by mean absolute value."""
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or len(x) < 2:
        raise ContractError("roughness needs a 1-D series with at least 2 points")
    scale = float(np.mean(np.abs(x)))
    if scale == 0.0:
        raise DegenerateInputError("roughness is undefined for an all-zero series")
    return float(np.mean(np.abs(np.diff(x)))) / scale


@dataclass(frozen=True)
class SmoothnessSummary:
    run: str
    generator: float | None
    discriminator: float | None
    n_points: int

    @property
    def generator_rougher(self) -> bool | None:
        if self.generator is None or self.discriminator is None:
            return None
        return self.generator > self.discriminator


def _maybe_roughness(series) -> float | None:
    try:
        return roughness(series)
    except (ContractError, DegenerateInputError):
        return None


def smoothness(curve: LossCurve, run: str = "") -> SmoothnessSummary:
    """Roughness of both loss series; ``None`` where undefined."""
    return SmoothnessSummary(run, _maybe_roughness(curve.gen_loss), _maybe_roughness(curve.disc_loss), len(curve.step))


def load_curves(run_dir, report: SweepReport) -> dict[str, LossCurve]:
    curves = {}
    for r in report.records:
        path = Path(run_dir) / r.loss_curve_path
        if path.exists():
            curves[r.key] = LossCurve.from_csv(path)
    return curves


# -- plots --------------------------------------------------------------------------

_COLORS = {3: "tab:blue", 4: "tab:orange", 5: "tab:green", COMBINED: "tab:purple"}
_SHIFT_STYLE = {True: "-", False: "--"}


def _save(fig: Figure, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def _new_figure(ncols: int = 1) -> tuple[Figure, list]:
    fig = Figure(figsize=(5.5 * ncols, 4.0), layout="constrained")
    axes = [fig.add_subplot(1, ncols, i + 1) for i in range(ncols)]
    return fig, axes


def _series(rows, x_of, group_of, value="is_avg"):
    """{group: (xs, ys)} with xs sorted; rows lacking the value are dropped."""
    out: dict = {}
    for r in rows:
        y = getattr(r, value)
        if y is not None:
            out.setdefault(group_of(r), []).append((x_of(r), y))
    return {g: tuple(zip(*sorted(pts))) for g, pts in sorted(out.items(), key=lambda kv: str(kv[0]))}


def _enough_x(series: dict, what: str) -> bool:
    xs = {x for xs_, _ in series.values() for x in xs_}
    if len(xs) < 2:
        log.info("skipping %s plot: fewer than 2 distinct x-values", what)
        return False
    return True


def _plot_is_vs_angle(rows, source, out: Path) -> list[Path]:
    rows = [r for r in rows if r.vertices != COMBINED]
    series = _series(rows, lambda r: r.min_segment_angle, lambda r: (r.vertices, r.mean_shift))
    if not series or not _enough_x(series, f"IS vs angle ({source})"):
        return []
    fig, (ax,) = _new_figure()
    for (v, s), (xs, ys) in series.items():
        ax.plot(xs, ys, _SHIFT_STYLE[s], marker="o", color=_COLORS.get(v), label=f"{v} vertices, shift={str(s).lower()}")
    ax.set_xlabel("minimum segment angle (degrees)")
    ax.set_ylabel(f"average IS ({source})")
    ax.set_title(f"Average IS vs minimum segment angle ({source})")
    ax.legend(fontsize="small")
    return [_save(fig, out / f"plot_is_vs_angle_{source}.svg")]


def _plot_std_dist(tables: dict, out: Path) -> list[Path]:
    groupings = {
        "shift": lambda src, r: f"shift={str(r.mean_shift).lower()} ({src})",
        "source": lambda src, r: src,
        "vertices": lambda src, r: f"{r.vertices} ({src})",
    }
    cells = {r.cell for rows in tables.values() for r in rows if r.is_std is not None}
    if len(cells) < 2:
        log.info("skipping IS std distribution plots: fewer than 2 distinct cells")
        return []
    paths = []
    for key, group_of in groupings.items():
        groups: dict[str, list[float]] = {}
        for src, rows in tables.items():
            for r in rows:
                if r.is_std is not None:
                    groups.setdefault(group_of(src, r), []).append(r.is_std)
        names = sorted(groups)
        fig, (ax,) = _new_figure()
        ax.boxplot([groups[n] for n in names], tick_labels=names)
        ax.tick_params(axis="x", labelrotation=30, labelsize="small")
        ax.set_xlabel(key)
        ax.set_ylabel("IS standard deviation")
        ax.set_title(f"IS std distribution by {key}")
        paths.append(_save(fig, out / f"plot_std_dist_{key}.svg"))
    return paths


def _plot_vs_vertices(rows, source, out: Path) -> list[Path]:
    rows = [r for r in rows if r.vertices != COMBINED]
    group = lambda r: (r.mean_shift, r.min_segment_angle)  # noqa: E731
    avg = _series(rows, lambda r: int(r.vertices), group)
    if not avg or not _enough_x(avg, f"IS vs vertices ({source})"):
        return []
    std = _series(rows, lambda r: int(r.vertices), group, "is_std")
    fig, axes = _new_figure(2)
    for ax, series, label in ((axes[0], avg, "average IS"), (axes[1], std, "IS std")):
        for (s, a), (xs, ys) in series.items():
            ax.plot(xs, ys, _SHIFT_STYLE[s], marker="o", label=f"shift={str(s).lower()}, angle={_fmt(a)}")
        ax.set_xlabel("vertices")
        ax.set_ylabel(f"{label} ({source})")
        ax.set_xticks(sorted({x for xs, _ in series.values() for x in xs}))
        ax.legend(fontsize="x-small")
    fig.suptitle(f"IS vs vertex count ({source})")
    return [_save(fig, out / f"plot_vs_vertices_{source}.svg")]


def _diff_rows(tables: dict) -> list[TableRow]:
    gen = {r.cell: r for r in tables["generated"]}
    out = []
    for r in tables["synthetic"]:
        g = gen.get(r.cell)
        if r.vertices != COMBINED and r.is_avg is not None and g is not None and g.is_avg is not None:
            out.append(TableRow(*r.cell, r.is_avg - g.is_avg, None))
    return out


def _plot_is_diff(tables: dict, out: Path) -> list[Path]:
    rows = _diff_rows(tables)
    paths = []
    views = {
        "vertices": (lambda r: int(r.vertices), lambda r: (r.mean_shift, r.min_segment_angle), "vertices"),
        "angle": (lambda r: r.min_segment_angle, lambda r: (r.vertices, r.mean_shift), "minimum segment angle (degrees)"),
    }
    for key, (x_of, group_of, xlabel) in views.items():
        series = _series(rows, x_of, group_of)
        if not series or not _enough_x(series, f"IS difference vs {key}"):
            continue
        fig, (ax,) = _new_figure()
        for g, (xs, ys) in series.items():
            if key == "vertices":
                label, style, color = f"shift={str(g[0]).lower()}, angle={_fmt(g[1])}", _SHIFT_STYLE[g[0]], None
            else:
                label, style, color = f"{g[0]} vertices, shift={str(g[1]).lower()}", _SHIFT_STYLE[g[1]], _COLORS.get(g[0])
            ax.plot(xs, ys, style, marker="o", color=color, label=label)
        ax.axhline(0.0, color="grey", linewidth=0.8)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("IS synthetic - IS generated")
        ax.set_title(f"IS difference vs {key}")
        ax.legend(fontsize="x-small")
        paths.append(_save(fig, out / f"plot_is_diff_{key}.svg"))
    return paths


def _plot_combined(rows, source, out: Path) -> list[Path]:
    shifts = {r.mean_shift for r in rows if r.vertices == COMBINED}
    rows = [r for r in rows if r.mean_shift in shifts]
    series = _series(rows, lambda r: r.min_segment_angle, lambda r: (str(r.vertices), r.mean_shift))
    if not any(g[0] == COMBINED for g in series) or not _enough_x(series, f"combined comparison ({source})"):
        return []
    fig, (ax,) = _new_figure()
    for (v, s), (xs, ys) in series.items():
        key = COMBINED if v == COMBINED else int(v)
        width = 2.5 if key == COMBINED else 1.2
        ax.plot(xs, ys, _SHIFT_STYLE[s], marker="o", linewidth=width, color=_COLORS.get(key),
                label=f"{v}{'' if key == COMBINED else ' vertices'}, shift={str(s).lower()}")
    ax.set_xlabel("minimum segment angle (degrees)")
    ax.set_ylabel(f"average IS ({source})")
    ax.set_title(f"Individual vs combined datasets ({source})")
    ax.legend(fontsize="small")
    return [_save(fig, out / f"plot_combined_{source}.svg")]


def _plot_loss(key: str, curve: LossCurve, out: Path) -> list[Path]:
    if len(curve.step) < 2:
        log.info("skipping loss plot for %s: fewer than 2 steps", key)
        return []
    fig, (ax,) = _new_figure()
    ax.plot(curve.step, curve.gen_loss, linewidth=0.7, label="generator")
    ax.plot(curve.step, curve.disc_loss, linewidth=0.7, label="discriminator")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(f"Loss curves: {key}")
    ax.legend()
    return [_save(fig, out / f"plot_loss_{key}.svg")]


def emit_plots(report: SweepReport, out_dir, curves: dict[str, LossCurve] | None = None) -> list[Path]:
    """Write every plot family that has enough data; returns the written paths."""
    import matplotlib

    matplotlib.rcParams["svg.hashsalt"] = "polyprobe"  # stable element ids across runs
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables = {s: table_rows(report, s) for s in SOURCES}
    paths: list[Path] = []
    for source in SOURCES:
        paths += _plot_is_vs_angle(tables[source], source, out)
    paths += _plot_std_dist(tables, out)
    for source in SOURCES:
        paths += _plot_vs_vertices(tables[source], source, out)
    paths += _plot_is_diff(tables, out)
    for source in SOURCES:
        paths += _plot_combined(tables[source], source, out)
    for key, curve in sorted((curves or {}).items()):
        paths += _plot_loss(key, curve, out)
    return paths


# -- one-shot report --------------------------------------------------------------


@dataclass
class ReportSummary:
    tables: list[Path]
    plots: list[Path]
    trends: dict[str, list[TrendCheckResult]]
    smoothness: list[SmoothnessSummary] = field(default_factory=list)
    correlation: float | None = None

    def lines(self) -> list[str]:
        out = []
        for source, checks in self.trends.items():
            out += [f"{source} {c.summary()}" for c in checks]
        if self.correlation is not None:
            out.append(f"pearson(is_avg, is_std) over generated rows: {self.correlation:.6f}")
        for s in self.smoothness:
            g = "undefined" if s.generator is None else f"{s.generator:.4f}"
            d = "undefined" if s.discriminator is None else f"{s.discriminator:.4f}"
            out.append(f"roughness {s.run}: generator {g}, discriminator {d}")
        return out


def build_report(run_dir, out_dir) -> ReportSummary:
    """Tables, plots, trend checks and roughness for a finished (or partial) sweep directory."""
    report = load_report(run_dir)
    curves = load_curves(run_dir, report)
    out = Path(out_dir)
    tables = emit_tables(report, out)
    plots = emit_plots(report, out, curves)
    trends = {s: trend_checks(table_rows(report, s)) for s in SOURCES}
    gen_rows = [r for r in table_rows(report, "generated") if r.is_avg is not None and r.vertices != COMBINED]
    try:
        corr = pearson_corr([r.is_avg for r in gen_rows], [r.is_std for r in gen_rows])
    except (ContractError, DegenerateInputError):
        corr = None
    rough = [smoothness(c, k) for k, c in sorted(curves.items())]
    summary = ReportSummary(tables, plots, trends, rough, corr)
    (out / "summary.txt").write_text("\n".join(summary.lines()) + "\n")
    return summary
