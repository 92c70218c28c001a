"""DET curves, range-restricted AUC, relative reductions, and plot output."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class DetPoint:
    far: float
    frr: float
    params: dict = field(default_factory=dict)


@dataclass
class TrialSet:
    """Scored trials: (utterance id, best detection score or None)."""

    positives: list[tuple[str, float | None]]
    negatives: list[tuple[str, float | None]]

    def __post_init__(self) -> None:
        pos_ids = {uid for uid, _ in self.positives}
        neg_ids = {uid for uid, _ in self.negatives}
        overlap = pos_ids & neg_ids
        if overlap:
            raise ValueError(f"trial ids in both classes: {sorted(overlap)[:5]}")


@dataclass
class DetCurve:
    """Lower-envelope operating points, FAR ascending, FRR non-increasing."""

    points: list[DetPoint]


def lower_envelope(points: Sequence[DetPoint]) -> list[DetPoint]:
    """Pareto frontier of operating points: keep, for each achieved FAR, the
    minimum FRR, then drop points dominated at a smaller FAR."""
    best_at_far: dict[float, DetPoint] = {}
    for p in points:
        cur = best_at_far.get(p.far)
        if cur is None or p.frr < cur.frr:
            best_at_far[p.far] = p
    envelope: list[DetPoint] = []
    running = math.inf
    for far in sorted(best_at_far):
        p = best_at_far[far]
        if p.frr < running:
            envelope.append(p)
            running = p.frr
    return envelope


def det_curve(trials: TrialSet) -> DetCurve:
    """Threshold sweep over all distinct scores plus +-inf.

    FRR(t) is the fraction of positives scoring below t or never detected;
    FAR(t) is the fraction of negatives scoring at or above t.
    """
    if not trials.positives or not trials.negatives:
        raise ValueError("DET curve needs at least one trial of each class")
    pos = np.array([math.nan if s is None else s for _, s in trials.positives])
    neg = np.array([math.nan if s is None else s for _, s in trials.negatives])
    finite = np.concatenate([pos[~np.isnan(pos)], neg[~np.isnan(neg)]])
    thresholds = sorted(set(finite.tolist())) + [math.inf]
    thresholds = [-math.inf] + thresholds

    points = []
    n_pos, n_neg = pos.size, neg.size
    for theta in thresholds:
        frr = float(np.sum(np.isnan(pos) | (pos < theta))) / n_pos
        far = float(np.sum(~np.isnan(neg) & (neg >= theta))) / n_neg
        points.append(DetPoint(far, frr, {"threshold": theta}))
    return DetCurve(lower_envelope(points))


def auc(curve: DetCurve, far_low: float, far_high: float) -> float:
    """Mean FRR over [far_low, far_high], trapezoid rule on the envelope.

    FRR is linear between envelope points and clamped to the end values
    outside the observed FAR range; the integral is normalized by the range
    width so the result reads as a mean miss rate in [0, 1].
    """
    if not (far_low < far_high):
        raise ValueError(f"invalid FAR range [{far_low}, {far_high}]")
    if not curve.points:
        raise ValueError("empty DET curve")
    fars = np.array([p.far for p in curve.points])
    frrs = np.array([p.frr for p in curve.points])
    interior = fars[(fars > far_low) & (fars < far_high)]
    grid = np.concatenate([[far_low], interior, [far_high]])
    values = np.interp(grid, fars, frrs)
    return float(np.trapezoid(values, grid) / (far_high - far_low))


def relative_reduction(baseline_auc: float, new_auc: float) -> float:
    """Percent reduction of `new_auc` relative to `baseline_auc`."""
    if baseline_auc <= 0:
        raise ValueError(f"baseline AUC must be positive, got {baseline_auc}")
    return 100.0 * (baseline_auc - new_auc) / baseline_auc


# ---------------------------------------------------------------------------
# Plot data output


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def emit_plot_data(curves: Sequence[tuple[str, DetCurve]], output_prefix: str | Path) -> tuple[Path, Path]:
    """Write <prefix>.csv and <prefix>.svg for a set of named DET curves.

    The SVG is a standalone line chart with a log-scaled FAR axis; output is
    byte-deterministic for identical inputs.
    """
    if not curves:
        raise ValueError("need at least one curve to plot")
    prefix = Path(output_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path = prefix.with_suffix(".csv")
    svg_path = prefix.with_suffix(".svg")

    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("curve_name,far,frr\n")
        for name, curve in curves:
            for p in curve.points:
                fh.write(f"{name},{p.far!r},{p.frr!r}\n")

    svg_path.write_text(_render_svg(curves), encoding="utf-8")
    return csv_path, svg_path


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _render_svg(curves: Sequence[tuple[str, DetCurve]]) -> str:
    width, height = 640, 480
    left, right, top, bottom = 70, 20, 20, 50
    plot_w, plot_h = width - left - right, height - top - bottom

    positive_fars = sorted(
        {p.far for _, c in curves for p in c.points if p.far > 0}
    )
    far_floor = positive_fars[0] / 2.0 if positive_fars else 1e-3
    x_min = math.log10(far_floor)
    x_max = 0.0  # FAR = 1

    def x_of(far: float) -> float:
        clamped = max(far, far_floor)
        return left + (math.log10(clamped) - x_min) / (x_max - x_min) * plot_w

    def y_of(frr: float) -> float:
        return top + (1.0 - frr) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="#444444"/>',
    ]
    decade = math.ceil(x_min)
    while decade <= 0:
        x = x_of(10.0 ** decade)
        parts.append(
            f'<line x1="{_fmt(x)}" y1="{top}" x2="{_fmt(x)}" y2="{top + plot_h}" '
            'stroke="#dddddd"/>'
        )
        parts.append(
            f'<text x="{_fmt(x)}" y="{top + plot_h + 18}" font-size="12" '
            f'text-anchor="middle">1e{decade}</text>'
        )
        decade += 1
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = y_of(frac)
        parts.append(
            f'<line x1="{left}" y1="{_fmt(y)}" x2="{left + plot_w}" y2="{_fmt(y)}" '
            'stroke="#dddddd"/>'
        )
        parts.append(
            f'<text x="{left - 8}" y="{_fmt(y + 4)}" font-size="12" '
            f'text-anchor="end">{_fmt(frac)}</text>'
        )
    parts.append(
        f'<text x="{left + plot_w / 2}" y="{height - 12}" font-size="13" '
        'text-anchor="middle">false alarm rate (log scale)</text>'
    )
    parts.append(
        f'<text x="16" y="{top + plot_h / 2}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 16 {top + plot_h / 2})">false reject rate</text>'
    )
    for i, (name, curve) in enumerate(curves):
        color = _PALETTE[i % len(_PALETTE)]
        coords = " ".join(
            f"{_fmt(x_of(p.far))},{_fmt(y_of(p.frr))}" for p in curve.points
        )
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        legend_y = top + 16 + 16 * i
        parts.append(
            f'<line x1="{left + 10}" y1="{legend_y - 4}" x2="{left + 34}" '
            f'y2="{legend_y - 4}" stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{left + 40}" y="{legend_y}" font-size="12">{name}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
