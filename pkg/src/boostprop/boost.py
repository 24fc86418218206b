"""Boosted ensembles of depth-two trees over quantized descriptors.

A descriptor is a flattened (F, d, d) block of pooled channel values;
feature index f maps to (channel, cell_y, cell_x) = (f // d*d, (f % d*d) // d,
f % d). Trees split on `value < threshold` where each threshold is an
equal-population quantile edge of the training distribution, so the split
search only has to scan 8-bit bin indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigurationError, TrainingError

DEFAULT_BINS = 256


@dataclass(frozen=True)
class WeightedSet:
    """Labelled training descriptors with per-sample boosting weights."""

    descriptors: np.ndarray  # (n, n_features) float32
    labels: np.ndarray  # (n,) int8, +1 / -1
    weights: np.ndarray  # (n,) float64, positive, sums to 1
    d: int
    channel_count: int

    def __post_init__(self):
        x, y, w = self.descriptors, self.labels, self.weights
        if x.ndim != 2:
            raise ConfigurationError("descriptors must be a 2-d array")
        n = x.shape[0]
        if y.shape != (n,) or w.shape != (n,):
            raise ConfigurationError("labels/weights length must match descriptors")
        if x.shape[1] != self.channel_count * self.d * self.d:
            raise ConfigurationError(
                f"descriptor width {x.shape[1]} != F*d*d = "
                f"{self.channel_count * self.d * self.d}"
            )
        if not np.all((y == 1) | (y == -1)):
            raise ConfigurationError("labels must be +1 or -1")
        if not (np.any(y == 1) and np.any(y == -1)):
            raise ConfigurationError("need at least one sample of each class")
        if np.any(w <= 0):
            raise ConfigurationError("weights must be positive")
        if abs(float(w.sum()) - 1.0) > 1e-6:
            raise ConfigurationError("weights must sum to 1")

    @property
    def size(self) -> int:
        return self.descriptors.shape[0]

    @classmethod
    def uniform(cls, descriptors, labels, d, channel_count) -> "WeightedSet":
        """Build a set with uniform weights from raw arrays."""
        descriptors = np.ascontiguousarray(descriptors, dtype=np.float32)
        labels = np.asarray(labels, dtype=np.int8)
        n = descriptors.shape[0] if descriptors.ndim == 2 else 0
        if n == 0:
            raise ConfigurationError("cannot build an empty training set")
        weights = np.full(n, 1.0 / n, dtype=np.float64)
        return cls(descriptors, labels, weights, int(d), int(channel_count))


@dataclass(frozen=True)
class DepthTwoTree:
    """Two-level decision tree; internal nodes test `feature value < threshold`.

    Leaves are indexed ll, lr, rl, rr where the first letter is the root
    branch and the second the child branch (left = test true).
    """

    features: tuple  # (root, left_child, right_child) descriptor indices
    thresholds: tuple  # matching threshold values
    leaves: tuple  # (ll, lr, rl, rr) real-valued outputs

    def evaluate(self, x: np.ndarray) -> float:
        if x[self.features[0]] < self.thresholds[0]:
            k, base = 1, 0
        else:
            k, base = 2, 2
        if x[self.features[k]] < self.thresholds[k]:
            return self.leaves[base]
        return self.leaves[base + 1]


@dataclass
class BoostedModel:
    """Additive ensemble of depth-two trees plus its geometry contract."""

    trees: list
    d: int
    channel_count: int
    shrink: int
    bank_fingerprint: str
    meta: dict = field(default_factory=dict)
    _packed: tuple = field(default=None, repr=False, compare=False)

    @property
    def tree_count(self) -> int:
        return len(self.trees)

    def packed(self):
        """Node arrays for the window-scoring kernel.

        Returns (node_c, node_dy, node_dx, node_thr, leaves) where the
        node axis is ordered (root, left child, right child).
        """
        if self._packed is None:
            t = len(self.trees)
            feats = np.array([tr.features for tr in self.trees], dtype=np.int64)
            feats = feats.reshape(t, 3)
            cells = self.d * self.d
            node_c = feats // cells
            node_dy = (feats % cells) // self.d
            node_dx = feats % self.d
            node_thr = np.array(
                [tr.thresholds for tr in self.trees], dtype=np.float64
            ).reshape(t, 3)
            leaves = np.array([tr.leaves for tr in self.trees], dtype=np.float64)
            leaves = leaves.reshape(t, 4)
            self._packed = (node_c, node_dy, node_dx, node_thr, leaves)
        return self._packed


def quantize_features(wset: WeightedSet, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Per-feature equal-population bin edges, shape (n_features, bins - 1)."""
    if not 2 <= bins <= 256:
        raise ConfigurationError("bins must be in [2, 256]")
    qs = np.arange(1, bins, dtype=np.float64) / bins
    edges = np.quantile(wset.descriptors, qs, axis=0)
    return np.ascontiguousarray(edges.T, dtype=np.float64)


def assign_bins(descriptors: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Map values to bin indices; returns (n_features, n) uint8.

    bin(v) counts edges <= v, so `v < edges[k]` is exactly `bin(v) <= k`.
    """
    n, n_feat = descriptors.shape
    if edges.shape[0] != n_feat:
        raise ConfigurationError("edge table width does not match descriptors")
    q_t = np.empty((n_feat, n), dtype=np.uint8)
    for f in range(n_feat):
        q_t[f] = np.searchsorted(edges[f], descriptors[:, f], side="right")
    return q_t


def _leaf_value(w_pos: float, w_neg: float, eps: float) -> float:
    return 0.5 * float(np.log((w_pos + eps) / (w_neg + eps)))


def _best_from_hists(pos, neg):
    """Weighted-Gini argmin over (feature, edge) given label histograms.

    Only candidates with nonzero mass on both sides count; ties go to the
    lowest feature index, then the lowest edge. Returns (feature, edge_index,
    left-pos, left-neg, right-pos, right-neg) or None if no candidate exists.
    """
    imp, edge, masses = _kernels.split_scan(pos, neg)
    f = int(np.argmin(imp))
    if not np.isfinite(imp[f]):
        return None
    lp, ln, rp, rn = masses[f]
    return f, int(edge[f]), float(lp), float(ln), float(rp), float(rn)


def _fit_tree(q_t, rows, weights, pos_mask, edges, bins, eps):
    """Greedy depth-two fit on the row subset.

    Returns (features, edge_indices, thresholds, leaves); a degenerate node
    (no usable split) keeps feature 0 / edge -1 and emits the parent's leaf
    value on both sides. The right child's histograms are the parent's
    minus the left child's, so each tree costs one full histogram pass
    plus one over the left rows.
    """
    w_rows = weights[rows]
    p_rows = pos_mask[rows]
    pos_h, neg_h = _kernels.label_histograms(q_t, rows, weights, pos_mask, bins)
    root = _best_from_hists(pos_h, neg_h)
    if root is None:
        w_pos = float(w_rows[p_rows].sum())
        w_neg = float(w_rows[~p_rows].sum())
        v = _leaf_value(w_pos, w_neg, eps)
        return (0, 0, 0), (-1, -1, -1), (0.0, 0.0, 0.0), (v, v, v, v)
    f0, k0, lp, ln, rp, rn = root
    left_rows = rows[q_t[f0, rows] <= k0]
    pos_l, neg_l = _kernels.label_histograms(q_t, left_rows, weights, pos_mask, bins)
    parts = []
    for pos_c, neg_c, w_pos, w_neg in (
        (pos_l, neg_l, lp, ln),
        (pos_h - pos_l, neg_h - neg_l, rp, rn),
    ):
        child = _best_from_hists(pos_c, neg_c)
        if child is None:
            v = _leaf_value(w_pos, w_neg, eps)
            parts.append((0, -1, (v, v)))
        else:
            fc, kc, clp, cln, crp, crn = child
            parts.append(
                (fc, kc, (_leaf_value(clp, cln, eps), _leaf_value(crp, crn, eps)))
            )
    (f1, k1, (ll, lr)), (f2, k2, (rl, rr)) = parts

    def thr(f, k):
        return float(edges[f, k]) if k >= 0 else 0.0

    return (
        (f0, f1, f2),
        (k0, k1, k2),
        (thr(f0, k0), thr(f1, k1), thr(f2, k2)),
        (ll, lr, rl, rr),
    )


def _tree_outputs(q_t, features, edge_indices, leaves):
    """Per-sample tree output, evaluated on bin indices (all samples)."""
    f0, f1, f2 = features
    k0, k1, k2 = edge_indices
    ll, lr, rl, rr = leaves
    go_left = q_t[f0] <= k0 if k0 >= 0 else np.zeros(q_t.shape[1], dtype=bool)
    h_l = np.where(q_t[f1] <= k1, ll, lr) if k1 >= 0 else np.full(q_t.shape[1], lr)
    h_r = np.where(q_t[f2] <= k2, rl, rr) if k2 >= 0 else np.full(q_t.shape[1], rr)
    return np.where(go_left, h_l, h_r)


def train_depth2_tree(
    wset: WeightedSet, edges: np.ndarray, q_t: np.ndarray | None = None
) -> DepthTwoTree:
    """Fit a single depth-two tree to the weighted set."""
    if q_t is None:
        q_t = assign_bins(wset.descriptors, edges)
    bins = edges.shape[1] + 1
    rows = np.arange(wset.size, dtype=np.int64)
    eps = 1.0 / (2.0 * wset.size)
    feats, _, thrs, leaves = _fit_tree(
        q_t, rows, wset.weights, wset.labels == 1, edges, bins, eps
    )
    return DepthTwoTree(feats, thrs, leaves)


def adaboost_train(
    wset: WeightedSet,
    n_rounds: int,
    *,
    bins: int = DEFAULT_BINS,
    shrink: int = 1,
    bank_fingerprint: str = "",
    progress=None,
) -> BoostedModel:
    """Real-boosting loop: exactly n_rounds trees, no early stopping.

    Weights update as w <- w * exp(-y * h) and renormalize each round.
    meta records the per-round exponential loss and training error rate.
    """
    if n_rounds < 1:
        raise ConfigurationError("n_rounds must be >= 1")
    edges = quantize_features(wset, bins)
    q_t = assign_bins(wset.descriptors, edges)
    rows = np.arange(wset.size, dtype=np.int64)
    pos_mask = wset.labels == 1
    y = wset.labels.astype(np.float64)
    eps = 1.0 / (2.0 * wset.size)
    w = wset.weights.copy()
    h_sum = np.zeros(wset.size, dtype=np.float64)
    trees = []
    exp_loss = []
    err_rate = []
    for t in range(n_rounds):
        feats, kidx, thrs, leaves = _fit_tree(q_t, rows, w, pos_mask, edges, bins, eps)
        trees.append(DepthTwoTree(feats, thrs, leaves))
        h = _tree_outputs(q_t, feats, kidx, leaves)
        w = w * np.exp(-y * h)
        total = float(w.sum())
        if not np.isfinite(total) or total <= 0.0:
            raise TrainingError("sample weights overflowed", round_index=t)
        w /= total
        h_sum += h
        exp_loss.append(float(np.mean(np.exp(-y * h_sum))))
        err_rate.append(float(np.mean(np.sign(h_sum) != y)))
        if progress is not None:
            progress(t, exp_loss[-1], err_rate[-1])
    return BoostedModel(
        trees=trees,
        d=wset.d,
        channel_count=wset.channel_count,
        shrink=shrink,
        bank_fingerprint=bank_fingerprint,
        meta={"exp_loss": exp_loss, "train_error": err_rate},
    )


def score(model: BoostedModel, descriptor: np.ndarray) -> float:
    """Ensemble score of a single (F, d, d) descriptor block."""
    if descriptor.shape != (model.channel_count, model.d, model.d):
        raise ConfigurationError(
            f"descriptor shape {descriptor.shape} does not match model "
            f"({model.channel_count}, {model.d}, {model.d})"
        )
    x = np.ascontiguousarray(descriptor, dtype=np.float64).ravel()
    return float(sum(tr.evaluate(x) for tr in model.trees))


def score_batch(model: BoostedModel, descriptors: np.ndarray) -> np.ndarray:
    """Ensemble scores for (n, F*d*d) flattened descriptors."""
    x = descriptors
    if x.ndim != 2 or x.shape[1] != model.channel_count * model.d * model.d:
        raise ConfigurationError("descriptor matrix width does not match model")
    scores = np.zeros(x.shape[0], dtype=np.float64)
    for tr in model.trees:
        f0, f1, f2 = tr.features
        t0, t1, t2 = tr.thresholds
        ll, lr, rl, rr = tr.leaves
        h_l = np.where(x[:, f1] < t1, ll, lr)
        h_r = np.where(x[:, f2] < t2, rl, rr)
        scores += np.where(x[:, f0] < t0, h_l, h_r)
    return scores


def save_model(model: BoostedModel, path) -> None:
    from . import dataio

    dataio.save_model(model, path)


def load_model(path) -> BoostedModel:
    from . import dataio

    return dataio.load_model(path)
