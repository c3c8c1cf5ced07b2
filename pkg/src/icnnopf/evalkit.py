"""Optimality-gap metrics, summaries and the report bundle.

Gaps are kept as fractions; the Markdown table shows percent with two
decimals. Aggregates use the geometric mean with every gap floored at
``GAP_FLOOR`` so that exact zeros do not collapse the product.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datagen import Dataset
from .icnn import IcnnModel, forward

GAP_FLOOR = 1e-12
HIST_BINS = 40


class UndefinedGap(ValueError):
    pass


def gap(pred: float, true: float) -> tuple[float, float]:
    """Signed ``(pred - true) / |true|`` and its absolute value."""
    if true == 0:
        raise UndefinedGap("relative gap is undefined for a zero optimal value")
    signed = (pred - true) / abs(true)
    return signed, abs(signed)


def geo_mean(gaps, floor: float = GAP_FLOOR) -> float:
    """Geometric mean of nonnegative ``gaps``, each floored at ``floor``; computed in log space."""
    g = np.asarray(gaps, dtype=float).ravel()
    if g.size == 0:
        raise ValueError("geometric mean of an empty sequence")
    if np.any(g < 0) or not np.all(np.isfinite(g)):
        raise ValueError("gaps must be finite and nonnegative")
    return float(np.exp(np.mean(np.log(np.maximum(g, floor)))))


@dataclass(frozen=True)
class GapRecord:
    id: int
    z_true: float
    z_pred: float
    gap_signed: float
    gap_abs: float
    total_load: float


@dataclass(frozen=True)
class EvalSummary:
    model: str
    formulation: str
    system: str
    count: int
    mean_gap: float
    worst_gap: float
    floor: float = GAP_FLOOR

    @property
    def mean_pct(self) -> float:
        return 100.0 * self.mean_gap

    @property
    def worst_pct(self) -> float:
        return 100.0 * self.worst_gap


def summarize(records: list[GapRecord], model: str, formulation: str, system: str) -> EvalSummary:
    gaps = [r.gap_abs for r in records]
    return EvalSummary(model, formulation, system, len(records), geo_mean(gaps), float(max(gaps)))


def evaluate(model: IcnnModel, dataset: Dataset, split: str = "test", label: str = "model") -> tuple[EvalSummary, list[GapRecord]]:
    """Score ``model`` on one split: one record per sample, geometric-mean and worst gap."""
    rows = dataset.subset(split)
    if not rows:
        raise ValueError(f"split {split!r} is empty")
    B = np.array([s.b for s in rows])
    if B.shape[1] != model.cfg.input_dim:
        raise ValueError(f"model expects {model.cfg.input_dim} inputs, dataset has {B.shape[1]}")
    pred = forward(model, B)
    records = []
    for s, p in zip(rows, pred):
        signed, absolute = gap(float(p), s.z)
        records.append(GapRecord(s.id, s.z, float(p), signed, absolute, s.total_load))
    return summarize(records, label, dataset.formulation, dataset.case), records


def histogram(values, bins: int = HIST_BINS) -> tuple[np.ndarray, np.ndarray]:
    v = np.asarray(values, dtype=float)
    lo, hi = (float(v.min()), float(v.max())) if v.size else (0.0, 1.0)
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    return np.histogram(v, bins=bins, range=(lo, hi))


def render_table(summaries: list[EvalSummary]) -> str:
    """Markdown table with one mean and one worst column per model."""
    if not summaries:
        raise ValueError("no summaries to render")
    models = list(dict.fromkeys(s.model for s in summaries))
    groups = list(dict.fromkeys((s.system, s.formulation) for s in summaries))
    by_key = {(s.system, s.formulation, s.model): s for s in summaries}
    head = ["System", "OPF"] + [f"Mean gap (%) {m}" for m in models] + [f"Worst gap (%) {m}" for m in models]
    lines = ["| " + " | ".join(head) + " |", "|" + "|".join(["---"] * 2 + ["---:"] * (2 * len(models))) + "|"]
    for system, form in groups:
        cells = [system, form.upper()]
        for attr in ("mean_pct", "worst_pct"):
            for m in models:
                s = by_key.get((system, form, m))
                cells.append(f"{getattr(s, attr):.2f}" if s else "n/a")
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def records_csv(records: list[GapRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "z_true", "z_pred", "gap_signed", "gap_abs", "total_load"])
    for r in records:
        w.writerow([r.id, repr(r.z_true), repr(r.z_pred), repr(r.gap_signed), repr(r.gap_abs), repr(r.total_load)])
    return buf.getvalue()


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")
_W, _H, _PAD = 640, 400, 50


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _axes(title: str, xlabel: str, ylabel: str, xr: tuple[float, float], yr: tuple[float, float]) -> list[str]:
    x0, y0, x1, y1 = _PAD, _H - _PAD, _W - _PAD / 2, _PAD / 2
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="16" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{_W / 2}" y="{_H - 10}" text-anchor="middle" font-size="12">{xlabel}</text>',
        f'<text x="14" y="{_H / 2}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {_H / 2})">{ylabel}</text>',
        f'<text x="{x0}" y="{y0 + 16}" text-anchor="middle" font-size="10">{xr[0]:.4g}</text>',
        f'<text x="{x1}" y="{y0 + 16}" text-anchor="middle" font-size="10">{xr[1]:.4g}</text>',
        f'<text x="{x0 - 4}" y="{y0}" text-anchor="end" font-size="10">{yr[0]:.4g}</text>',
        f'<text x="{x0 - 4}" y="{y1 + 4}" text-anchor="end" font-size="10">{yr[1]:.4g}</text>',
    ]


def _scale(v, lo, hi, a, b):
    return a + (np.asarray(v, dtype=float) - lo) / (hi - lo) * (b - a) if hi > lo else np.full(np.shape(v), (a + b) / 2)


def _padded_range(v: np.ndarray) -> tuple[float, float]:
    lo, hi = float(np.min(v)), float(np.max(v))
    if hi <= lo:
        return lo - 0.5, hi + 0.5
    return lo, hi


def hist_svg(records_by_model: dict[str, list[GapRecord]], bins: int = HIST_BINS) -> str:
    """Overlaid histograms of signed gaps in percent; each bar carries its count."""
    all_gaps = np.concatenate([[100 * r.gap_signed for r in recs] for recs in records_by_model.values()])
    _, edges = histogram(all_gaps, bins)
    counts = {m: np.histogram([100 * r.gap_signed for r in recs], bins=edges)[0] for m, recs in records_by_model.items()}
    ymax = max(1, max(int(c.max()) for c in counts.values()))
    out = _axes("Signed relative gap", "(z_pred - z_true) / |z_true| (%)", "count", (edges[0], edges[-1]), (0, ymax))
    xs = _scale(edges, edges[0], edges[-1], _PAD, _W - _PAD / 2)
    for j, (m, c) in enumerate(counts.items()):
        color = _COLORS[j % len(_COLORS)]
        for i, n in enumerate(c):
            top = float(_scale(n, 0, ymax, _H - _PAD, _PAD / 2))
            out.append(
                f'<rect class="bin" data-model="{m}" data-count="{int(n)}" x="{_fmt(xs[i])}" y="{_fmt(top)}" '
                f'width="{_fmt(xs[i + 1] - xs[i])}" height="{_fmt(_H - _PAD - top)}" fill="{color}" fill-opacity="0.5"/>'
            )
        out.append(f'<text x="{_W - 140}" y="{40 + 16 * j}" font-size="12" fill="{color}">{m}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def scatter_svg(records_by_model: dict[str, list[GapRecord]]) -> str:
    """Signed gap (percent) against total active load; one circle per record."""
    loads = np.concatenate([[r.total_load for r in recs] for recs in records_by_model.values()])
    gaps = np.concatenate([[100 * r.gap_signed for r in recs] for recs in records_by_model.values()])
    xr, yr = _padded_range(loads), _padded_range(gaps)
    out = _axes("Signed relative gap vs total load", "total active load (p.u.)", "signed gap (%)", xr, yr)
    for j, (m, recs) in enumerate(records_by_model.items()):
        color = _COLORS[j % len(_COLORS)]
        px = _scale([r.total_load for r in recs], *xr, _PAD, _W - _PAD / 2)
        py = _scale([100 * r.gap_signed for r in recs], *yr, _H - _PAD, _PAD / 2)
        for x, y in zip(np.atleast_1d(px), np.atleast_1d(py)):
            out.append(f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="2" fill="{color}" data-model="{m}"/>')
        out.append(f'<text x="{_W - 140}" y="{40 + 16 * j}" font-size="12" fill="{color}">{m}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _csv_name(label: str, first: bool) -> str:
    if first:
        return "gaps.csv"
    safe = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in label)
    return f"gaps_{safe}.csv"


def render_report(summaries: list[EvalSummary], records_by_model: dict[str, list[GapRecord]], out_dir: str | Path) -> dict[str, Path]:
    """Write report.md, gaps.csv (first model; others get gaps_<label>.csv), hist.svg and scatter.svg."""
    if not summaries or not records_by_model or not all(records_by_model.values()):
        raise ValueError("nothing to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    counts = ", ".join(f"{s.model}: {s.count}" for s in summaries)
    md = [
        "# Optimality gaps",
        "",
        render_table(summaries),
        f"Mean is the geometric mean of per-sample relative gaps, each floored at {summaries[0].floor:g}. "
        f"Samples per model: {counts}.",
        "",
    ]
    files["report.md"] = out / "report.md"
    files["report.md"].write_text("\n".join(md), encoding="utf-8")
    for j, (label, recs) in enumerate(records_by_model.items()):
        name = _csv_name(label, j == 0)
        files[name] = out / name
        files[name].write_text(records_csv(recs), encoding="utf-8")
    files["hist.svg"] = out / "hist.svg"
    files["hist.svg"].write_text(hist_svg(records_by_model), encoding="utf-8")
    files["scatter.svg"] = out / "scatter.svg"
    files["scatter.svg"].write_text(scatter_svg(records_by_model), encoding="utf-8")
    return files
