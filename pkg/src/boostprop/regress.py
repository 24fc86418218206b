"""Class-agnostic bounding-box refinement by ridge regression.

A detection box P is nudged toward ground truth G through the standard
center-relative/log-size transform: targets are t_x = (Gcx - Pcx) / Pw,
t_y = (Gcy - Pcy) / Ph, t_w = ln(Gw / Pw), t_h = ln(Gh / Ph), predicted
as linear functions of the box's pooled-channel descriptor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, iou, iou_matrix

PAIR_MIN_IOU = 0.7
DEFAULT_LAMBDA = 1000.0


@dataclass(frozen=True)
class RegressionPair:
    """A (detection, ground truth) pair that clears the IoU gate."""

    p: Box
    g: Box
    phi: np.ndarray  # descriptor of p, any shape; flattened by fit()

    def __post_init__(self):
        overlap = iou(self.p, self.g)
        if overlap < PAIR_MIN_IOU:
            raise ValueError(
                f"pair IoU {overlap:.4f} is below the {PAIR_MIN_IOU} gate"
            )


@dataclass(frozen=True)
class BoxRegressor:
    """Four ridge solutions over standardized descriptors plus biases."""

    weights: np.ndarray  # (4, n_features)
    bias: np.ndarray  # (4,)
    mean: np.ndarray  # (n_features,) training mean
    scale: np.ndarray  # (n_features,) training scale (std, 1 where degenerate)
    ridge_lambda: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.weights.shape[1] if self.weights.ndim == 2 else -1
        if self.weights.ndim != 2 or self.weights.shape[0] != 4:
            raise ValueError("weights must be (4, n_features)")
        if self.bias.shape != (4,):
            raise ValueError("bias must have 4 entries")
        if self.mean.shape != (n,) or self.scale.shape != (n,):
            raise ValueError("normalization vectors must match weights")
        if not (
            np.isfinite(self.weights).all()
            and np.isfinite(self.bias).all()
            and np.isfinite(self.mean).all()
            and np.isfinite(self.scale).all()
        ):
            raise ValueError("regressor parameters must be finite")
        if not self.ridge_lambda > 0:
            raise ValueError(f"lambda must be positive, got {self.ridge_lambda}")

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]


def make_targets(p: Box, g: Box) -> tuple:
    """Regression targets carrying P onto G."""
    return (
        (g.cx - p.cx) / p.width,
        (g.cy - p.cy) / p.height,
        float(np.log(g.width / p.width)),
        float(np.log(g.height / p.height)),
    )


def fit(pairs, ridge_lambda: float = DEFAULT_LAMBDA, meta: dict | None = None) -> BoxRegressor:
    """Solve (Z'Z + lambda I) w = Z' (t - mean(t)) per target dimension.

    Z holds standardized descriptors; the bias is the per-dimension
    target mean and is not regularized. Order of pairs does not matter.
    """
    if len(pairs) < 1:
        raise ValueError("need at least one regression pair")
    if not ridge_lambda > 0:
        raise ValueError(f"lambda must be positive, got {ridge_lambda}")
    a = np.stack([np.asarray(p.phi, dtype=np.float64).ravel() for p in pairs])
    t = np.array([make_targets(p.p, p.g) for p in pairs], dtype=np.float64)
    mean = a.mean(axis=0)
    std = a.std(axis=0)
    scale = np.where(std > 0.0, std, 1.0)
    z = (a - mean) / scale
    t_mean = t.mean(axis=0)
    gram = z.T @ z
    gram[np.diag_indices_from(gram)] += ridge_lambda
    w = np.linalg.solve(gram, z.T @ (t - t_mean))  # (n_features, 4)
    return BoxRegressor(
        weights=np.ascontiguousarray(w.T),
        bias=t_mean,
        mean=mean,
        scale=scale,
        ridge_lambda=float(ridge_lambda),
        meta=meta or {},
    )


def apply(reg: BoxRegressor, box: Box, phi: np.ndarray) -> Box:
    """Refine one box; the caller clips the result to image bounds."""
    x = np.asarray(phi, dtype=np.float64).ravel()
    if x.shape != (reg.n_features,):
        raise ValueError(
            f"descriptor has {x.size} values, regressor expects {reg.n_features}"
        )
    z = (x - reg.mean) / reg.scale
    dx, dy, dw, dh = reg.weights @ z + reg.bias
    cx = box.cx + dx * box.width
    cy = box.cy + dy * box.height
    w = box.width * float(np.exp(dw))
    h = box.height * float(np.exp(dh))
    return Box(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)


def select_pairs(proposals, ground_truths) -> list:
    """Best detection per ground truth, gated at PAIR_MIN_IOU.

    proposals is a list of ScoredBox, ground_truths a list of Box; the
    result is [(proposal_index, gt_index), ...]. For each ground truth
    the highest-IoU proposal wins; exact IoU ties go to the higher score,
    then the lower proposal index. Gated pairs require IoU >= 0.7.
    """
    if not proposals or not ground_truths:
        return []
    p_arr = np.array([sb.box.as_tuple() for sb in proposals], dtype=np.float64)
    g_arr = np.array([b.as_tuple() for b in ground_truths], dtype=np.float64)
    scores = np.array([sb.score for sb in proposals], dtype=np.float64)
    overlaps = iou_matrix(p_arr, g_arr)
    out = []
    n = len(proposals)
    pref = np.lexsort((np.arange(n), -scores))  # score-desc, index-asc
    for j in range(len(ground_truths)):
        col = overlaps[:, j]
        best = col.max()
        if best < PAIR_MIN_IOU:
            continue
        tied = pref[col[pref] == best]
        out.append((int(tied[0]), j))
    return out
