"""Recall-vs-IoU curves, AUC, and recall-vs-candidate-count reports.

The protocol is proposal recall: a ground truth counts as covered at
threshold t when any proposal in its image reaches IoU >= t; one
proposal may cover several ground truths.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EvaluationError
from .geometry import iou_matrix

DEFAULT_BUDGETS = (10, 100, 1000, 10000)

# SVG layout shared by the writer and its tests.
SVG_WIDTH = 640
SVG_HEIGHT = 480
SVG_MARGIN_LEFT = 60.0
SVG_MARGIN_RIGHT = 20.0
SVG_MARGIN_TOP = 20.0
SVG_MARGIN_BOTTOM = 50.0


def default_grid() -> np.ndarray:
    """IoU thresholds 0.5 to 1.0 in steps of 0.025 (21 points)."""
    return np.round(np.linspace(0.5, 1.0, 21), 6)


@dataclass(frozen=True)
class EvalReport:
    iou_thresholds: np.ndarray
    recall_at: np.ndarray
    auc: float
    recall_vs_count: list  # of (budget, recall at IoU 0.5)
    images_evaluated: int
    images_blacklisted: int
    avg_proposals_per_image: float


def _best_iou_per_gt(proposals, gts, limit=None) -> np.ndarray:
    """Highest proposal IoU for each ground truth in one image."""
    if limit is not None:
        proposals = proposals[:limit]
    if not proposals:
        return np.zeros(len(gts), dtype=np.float64)
    p = np.array([sb.box.as_tuple() for sb in proposals], dtype=np.float64)
    g = np.array([b.as_tuple() for b in gts], dtype=np.float64)
    return iou_matrix(p, g).max(axis=0)


def _gather_best(proposals_by_image: dict, gts_by_image: dict, limit=None) -> np.ndarray:
    best = [
        _best_iou_per_gt(proposals_by_image.get(image_id, []), gts, limit)
        for image_id, gts in gts_by_image.items()
        if gts
    ]
    if not best:
        raise EvaluationError("no ground-truth boxes to evaluate")
    return np.concatenate(best)


def recall_at(proposals_by_image: dict, gts_by_image: dict, t: float) -> float:
    """Fraction of ground truths covered by some proposal at IoU >= t."""
    if not 0.0 < t <= 1.0:
        raise ValueError(f"threshold must be in (0, 1], got {t}")
    best = _gather_best(proposals_by_image, gts_by_image)
    return float(np.mean(best >= t))


def recall_curve(proposals_by_image: dict, gts_by_image: dict, grid=None):
    """(thresholds, recalls) over the grid (default 0.5..1.0 step 0.025)."""
    thresholds = default_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    if thresholds.size < 2 or np.any(np.diff(thresholds) <= 0):
        raise ValueError("grid must be strictly increasing with >= 2 points")
    best = _gather_best(proposals_by_image, gts_by_image)
    recalls = np.array([np.mean(best >= t) for t in thresholds], dtype=np.float64)
    return thresholds, recalls


def auc(thresholds: np.ndarray, recalls: np.ndarray) -> float:
    """Trapezoidal area under the curve, normalized by the grid span."""
    thresholds = np.asarray(thresholds, dtype=np.float64)
    recalls = np.asarray(recalls, dtype=np.float64)
    span = thresholds[-1] - thresholds[0]
    if span <= 0:
        raise ValueError("grid must span a positive interval")
    return float(np.trapezoid(recalls, thresholds) / span)


def recall_vs_count(proposals_by_image: dict, gts_by_image: dict, budgets=DEFAULT_BUDGETS):
    """[(budget, recall at IoU 0.5 using each image's top-budget proposals)].

    Per-image lists must already be sorted by descending score.
    """
    out = []
    for b in budgets:
        if b < 0:
            raise ValueError("budgets must be >= 0")
        best = _gather_best(proposals_by_image, gts_by_image, limit=int(b))
        out.append((int(b), float(np.mean(best >= 0.5))))
    return out


def apply_blacklist(gts_by_image: dict, blacklist) -> tuple:
    """Drop blacklisted image ids; returns (filtered dict, dropped count)."""
    blacklist = set(blacklist)
    unknown = blacklist - set(gts_by_image)
    if unknown:
        warnings.warn(
            "blacklist names unknown image ids: " + ", ".join(sorted(unknown))
        )
    kept = {k: v for k, v in gts_by_image.items() if k not in blacklist}
    return kept, len(gts_by_image) - len(kept)


def evaluate(
    proposals_by_image: dict,
    gts_by_image: dict,
    blacklist=(),
    budgets=DEFAULT_BUDGETS,
    grid=None,
) -> EvalReport:
    """Full report over non-blacklisted images."""
    kept, dropped = apply_blacklist(gts_by_image, blacklist)
    if not kept:
        raise EvaluationError("no images left after blacklisting")
    thresholds, recalls = recall_curve(proposals_by_image, kept, grid)
    counts = [len(proposals_by_image.get(image_id, [])) for image_id in kept]
    return EvalReport(
        iou_thresholds=thresholds,
        recall_at=recalls,
        auc=auc(thresholds, recalls),
        recall_vs_count=recall_vs_count(proposals_by_image, kept, budgets),
        images_evaluated=len(kept),
        images_blacklisted=dropped,
        avg_proposals_per_image=float(np.mean(counts)) if counts else 0.0,
    )


def write_report_csv(report: EvalReport, path, header: dict | None = None) -> None:
    """CSV block: `iou,<t>,<recall>` rows then `count,<budget>,<recall>` rows.

    Summary numbers ride along as `# key: value` comment lines.
    """
    lines = []
    for key, value in (header or {}).items():
        lines.append(f"# {key}: {value}")
    lines.append(f"# auc: {report.auc!r}")
    lines.append(f"# images_evaluated: {report.images_evaluated}")
    lines.append(f"# images_blacklisted: {report.images_blacklisted}")
    lines.append(f"# avg_proposals_per_image: {report.avg_proposals_per_image!r}")
    lines.append("kind,x,y")
    for t, r in zip(report.iou_thresholds, report.recall_at):
        lines.append(f"iou,{float(t)!r},{float(r)!r}")
    for b, r in report.recall_vs_count:
        lines.append(f"count,{b},{float(r)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def curve_to_svg_points(thresholds, recalls) -> list:
    """Pixel-space (x, y) vertices of the recall curve polyline."""
    t0, t1 = float(thresholds[0]), float(thresholds[-1])
    plot_w = SVG_WIDTH - SVG_MARGIN_LEFT - SVG_MARGIN_RIGHT
    plot_h = SVG_HEIGHT - SVG_MARGIN_TOP - SVG_MARGIN_BOTTOM
    pts = []
    for t, r in zip(thresholds, recalls):
        x = SVG_MARGIN_LEFT + (float(t) - t0) / (t1 - t0) * plot_w
        y = SVG_MARGIN_TOP + (1.0 - float(r)) * plot_h
        pts.append((x, y))
    return pts


def write_report_svg(report: EvalReport, path, header: dict | None = None) -> None:
    """Self-contained SVG line plot of recall versus IoU threshold."""
    pts = curve_to_svg_points(report.iou_thresholds, report.recall_at)
    points_attr = " ".join(f"{x:.3f},{y:.3f}" for x, y in pts)
    x0, x1 = SVG_MARGIN_LEFT, SVG_WIDTH - SVG_MARGIN_RIGHT
    y0, y1 = SVG_MARGIN_TOP, SVG_HEIGHT - SVG_MARGIN_BOTTOM
    parts = ['<?xml version="1.0" encoding="UTF-8"?>']
    for key, value in (header or {}).items():
        parts.append(f"<!-- {key}: {value} -->")
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" '
        f'height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">'
    )
    parts.append(f'<rect width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>')
    parts.append(
        f'<rect x="{x0}" y="{y0}" width="{x1 - x0}" height="{y1 - y0}" '
        'fill="none" stroke="black" stroke-width="1"/>'
    )
    t0, t1 = float(report.iou_thresholds[0]), float(report.iou_thresholds[-1])
    for k in range(6):
        tx = t0 + (t1 - t0) * k / 5.0
        px = x0 + (x1 - x0) * k / 5.0
        parts.append(
            f'<line x1="{px:.3f}" y1="{y1}" x2="{px:.3f}" y2="{y1 + 6}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{px:.3f}" y="{y1 + 22}" font-size="13" text-anchor="middle">'
            f"{tx:.1f}</text>"
        )
    for k in range(6):
        ry = k / 5.0
        py = y1 - (y1 - y0) * ry
        parts.append(
            f'<line x1="{x0 - 6}" y1="{py:.3f}" x2="{x0}" y2="{py:.3f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{x0 - 10}" y="{py + 4:.3f}" font-size="13" text-anchor="end">'
            f"{ry:.1f}</text>"
        )
    parts.append(
        f'<text x="{(x0 + x1) / 2:.3f}" y="{SVG_HEIGHT - 10}" font-size="14" '
        'text-anchor="middle">IoU threshold</text>'
    )
    parts.append(
        f'<text x="16" y="{(y0 + y1) / 2:.3f}" font-size="14" text-anchor="middle" '
        f'transform="rotate(-90 16 {(y0 + y1) / 2:.3f})">recall</text>'
    )
    parts.append(
        f'<polyline fill="none" stroke="#1f6fb2" stroke-width="2" '
        f'points="{points_attr}"/>'
    )
    legend = (
        f"AUC={report.auc:.3f} (N={report.avg_proposals_per_image:.1f} proposals)"
    )
    parts.append(
        f'<text x="{x0 + 12}" y="{y0 + 20}" font-size="14">{legend}</text>'
    )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
