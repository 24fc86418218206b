"""Dense multi-scale, multi-aspect sliding-window proposal generation.

Each boosted model slides a d x d-cell window over every pyramid level's
aggregated channels. Survivors of a per-(scale, aspect, model) NMS pass at
threshold U are pooled and suppressed jointly at threshold V, then ranked
by score and truncated.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, dataio
from .channels import FilterBank, ImagePlanes, PyramidLevel, aggregate, build_pyramid
from .errors import ConfigurationError
from .geometry import Box, ScoredBox, nms_indices

DEFAULT_S = 12
DEFAULT_R = 3
DEFAULT_U = 0.63
DEFAULT_V = 0.90
DEFAULT_MAX_PROPOSALS = 10000


@dataclass(frozen=True)
class DetectorConfig:
    """Knobs for propose(); defaults follow the trained operating point."""

    models: tuple
    S: int = DEFAULT_S
    R: int = DEFAULT_R
    U: float = DEFAULT_U
    V: float = DEFAULT_V
    stride_cells: int = 1
    max_proposals: int = DEFAULT_MAX_PROPOSALS
    score_floor: float = -math.inf

    def __post_init__(self):
        if len(self.models) < 1:
            raise ConfigurationError("need at least one model")
        if self.S < 1 or self.R < 1:
            raise ConfigurationError("S and R must be >= 1")
        if not (0.0 < self.U <= 1.0 and 0.0 < self.V <= 1.0):
            raise ConfigurationError("U and V must lie in (0, 1]")
        if self.stride_cells < 1:
            raise ConfigurationError("stride_cells must be >= 1")
        if self.max_proposals < 1:
            raise ConfigurationError("max_proposals must be >= 1")


def window_to_image_box(level: PyramidLevel, cell_x: int, cell_y: int, d: int) -> Box:
    """Image-space box of a d x d-cell window anchored at (cell_x, cell_y)."""
    s = float(level.channels.shrink)
    x1 = cell_x * s / level.x_factor
    y1 = cell_y * s / level.y_factor
    x2 = (cell_x + d) * s / level.x_factor
    y2 = (cell_y + d) * s / level.y_factor
    return Box(
        max(x1, 0.0),
        max(y1, 0.0),
        min(x2, float(level.src_width)),
        min(y2, float(level.src_height)),
    )


def _check_fingerprints(models, bank: FilterBank) -> None:
    fp = dataio.bank_fingerprint(bank)
    for m in models:
        if m.bank_fingerprint and m.bank_fingerprint != fp:
            raise ConfigurationError(
                f"model was trained against bank {m.bank_fingerprint[:16]}..., "
                f"got bank {fp[:16]}..."
            )


def _score_level_windows(stack, model, stride):
    """Score every window placement on one aggregated stack.

    Returns (cell_xs, cell_ys, scores) flattened row-major, or None when
    the grid is smaller than the model window.
    """
    d = model.d
    gh, gw = stack.grid_h, stack.grid_w
    if gh < d or gw < d:
        return None
    nwy = (gh - d) // stride + 1
    nwx = (gw - d) // stride + 1
    node_c, node_dy, node_dx, node_thr, leaves = model.packed()
    scores = _kernels.score_windows(
        stack.planes, node_c, node_dy, node_dx, node_thr, leaves, d, stride, nwy, nwx
    )
    ys, xs = np.mgrid[0:nwy, 0:nwx]
    return xs.ravel() * stride, ys.ravel() * stride, scores.ravel()


def propose(image: ImagePlanes, bank: FilterBank, cfg: DetectorConfig) -> list:
    """Run the full proposal pipeline on one image.

    Stages: pyramid -> window scoring per model -> per-(scale, aspect,
    model) NMS at U -> pooled joint NMS at V -> score-ranked truncation
    to max_proposals.
    """
    _check_fingerprints(cfg.models, bank)
    min_window = min(m.d * m.shrink for m in cfg.models)
    shrinks = sorted({m.shrink for m in cfg.models})
    levels = build_pyramid(image, bank, cfg.S, cfg.R, d=min_window, shrink=1)
    if not levels:
        warnings.warn("image smaller than every window; no proposals")
        return []

    pooled_boxes: list = []
    pooled_scores: list = []
    any_window = False
    for level in levels:
        stacks = {s: aggregate(level.channels, s) for s in shrinks}
        for model in cfg.models:
            stack = stacks[model.shrink]
            hit = _score_level_windows(stack, model, cfg.stride_cells)
            if hit is None:
                continue
            any_window = True
            cell_xs, cell_ys, scores = hit
            keep = scores >= cfg.score_floor
            if not np.any(keep):
                continue
            cell_xs, cell_ys, scores = cell_xs[keep], cell_ys[keep], scores[keep]
            s = float(stack.shrink)
            arr = np.empty((scores.size, 4), dtype=np.float64)
            arr[:, 0] = np.maximum(cell_xs * s / level.x_factor, 0.0)
            arr[:, 1] = np.maximum(cell_ys * s / level.y_factor, 0.0)
            arr[:, 2] = np.minimum(
                (cell_xs + model.d) * s / level.x_factor, float(level.src_width)
            )
            arr[:, 3] = np.minimum(
                (cell_ys + model.d) * s / level.y_factor, float(level.src_height)
            )
            for i in nms_indices(arr, scores, cfg.U):
                pooled_boxes.append(Box(*arr[i]))
                pooled_scores.append(float(scores[i]))

    if not any_window:
        warnings.warn("image smaller than every window; no proposals")
        return []
    if not pooled_boxes:
        return []
    arr = np.array([b.as_tuple() for b in pooled_boxes], dtype=np.float64)
    kept = nms_indices(arr, np.array(pooled_scores), cfg.V)
    survivors = [ScoredBox(pooled_boxes[i], pooled_scores[i]) for i in kept]
    # kept order is already descending score with ties by pooled index
    return survivors[: cfg.max_proposals]
