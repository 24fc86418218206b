"""Hot loops, JIT-compiled when numba is available.

Every kernel has a pure-numpy twin with the identical floating-point
accumulation order, so results are bit-equal whichever path runs and
independent of the worker thread count: histogram bins are owned by a
single feature (thread) and accumulated in sample order, and window
scores are accumulated tree-by-tree per window.
"""

from __future__ import annotations

import os

import numpy as np

USE_NUMBA = os.environ.get("BOOSTPROP_NO_NUMBA", "") == ""

if USE_NUMBA:
    try:
        import numba
        from numba import njit, prange

        numba.config.THREADING_LAYER = "workqueue"
    except ImportError:  # pragma: no cover
        USE_NUMBA = False


def set_thread_cap(n: int) -> int:
    """Cap the kernel worker pool at n threads; returns the effective cap."""
    if not USE_NUMBA:
        return 1
    cap = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(cap)
    return cap


def _hist_numpy(q_t, rows, weights, pos_mask, bins):
    n_feat = q_t.shape[0]
    pos = np.zeros((n_feat, bins), dtype=np.float64)
    neg = np.zeros((n_feat, bins), dtype=np.float64)
    w_rows = weights[rows]
    p_rows = pos_mask[rows]
    wp = np.where(p_rows, w_rows, 0.0)
    wn = np.where(p_rows, 0.0, w_rows)
    for f in range(n_feat):
        b = q_t[f, rows]
        pos[f] = np.bincount(b, weights=wp, minlength=bins)
        neg[f] = np.bincount(b, weights=wn, minlength=bins)
    return pos, neg


def _split_scan_numpy(pos, neg):
    cp = np.cumsum(pos, axis=1)
    cn = np.cumsum(neg, axis=1)
    tp = cp[:, -1:]
    tn = cn[:, -1:]
    cpk = cp[:, :-1]
    cnk = cn[:, :-1]
    rpk = tp - cpk
    rnk = tn - cnk
    w_l = cpk + cnk
    w_r = rpk + rnk
    with np.errstate(divide="ignore", invalid="ignore"):
        imp = 2.0 * cpk * cnk / w_l + 2.0 * rpk * rnk / w_r
    imp[(w_l <= 0.0) | (w_r <= 0.0)] = np.inf
    edge_best = np.argmin(imp, axis=1)
    rows = np.arange(pos.shape[0])
    imp_best = imp[rows, edge_best]
    masses = np.stack(
        [
            cpk[rows, edge_best],
            cnk[rows, edge_best],
            rpk[rows, edge_best],
            rnk[rows, edge_best],
        ],
        axis=1,
    )
    return imp_best, edge_best.astype(np.int64), masses


def _score_numpy(ch, node_c, node_dy, node_dx, node_thr, leaves, d, stride, nwy, nwx):
    scores = np.zeros((nwy, nwx), dtype=np.float64)
    ey = (nwy - 1) * stride + 1
    ex = (nwx - 1) * stride + 1

    def slab(t, k):
        return ch[
            node_c[t, k],
            node_dy[t, k] : node_dy[t, k] + ey : stride,
            node_dx[t, k] : node_dx[t, k] + ex : stride,
        ]

    for t in range(leaves.shape[0]):
        go_left = slab(t, 0) < node_thr[t, 0]
        left_val = np.where(slab(t, 1) < node_thr[t, 1], leaves[t, 0], leaves[t, 1])
        right_val = np.where(slab(t, 2) < node_thr[t, 2], leaves[t, 2], leaves[t, 3])
        scores += np.where(go_left, left_val, right_val)
    return scores


if USE_NUMBA:

    @njit(cache=True, parallel=True)
    def _hist_numba(q_t, rows, weights, pos_mask, bins):
        n_feat = q_t.shape[0]
        pos = np.zeros((n_feat, bins), dtype=np.float64)
        neg = np.zeros((n_feat, bins), dtype=np.float64)
        for f in prange(n_feat):
            for k in range(rows.shape[0]):
                i = rows[k]
                b = q_t[f, i]
                if pos_mask[i]:
                    pos[f, b] += weights[i]
                else:
                    neg[f, b] += weights[i]
        return pos, neg

    @njit(cache=True, parallel=True)
    def _split_scan_numba(pos, neg):
        n_feat, bins = pos.shape
        imp_best = np.empty(n_feat, dtype=np.float64)
        edge_best = np.zeros(n_feat, dtype=np.int64)
        masses = np.zeros((n_feat, 4), dtype=np.float64)
        for f in prange(n_feat):
            tp = 0.0
            tn = 0.0
            for k in range(bins):
                tp += pos[f, k]
                tn += neg[f, k]
            best = np.inf
            best_k = 0
            blp = 0.0
            bln = 0.0
            brp = 0.0
            brn = 0.0
            cp = 0.0
            cn = 0.0
            for k in range(bins - 1):
                cp += pos[f, k]
                cn += neg[f, k]
                rp = tp - cp
                rn = tn - cn
                w_l = cp + cn
                w_r = rp + rn
                if w_l <= 0.0 or w_r <= 0.0:
                    continue
                t = 2.0 * cp * cn / w_l + 2.0 * rp * rn / w_r
                if t < best:
                    best = t
                    best_k = k
                    blp = cp
                    bln = cn
                    brp = rp
                    brn = rn
            imp_best[f] = best
            edge_best[f] = best_k
            masses[f, 0] = blp
            masses[f, 1] = bln
            masses[f, 2] = brp
            masses[f, 3] = brn
        return imp_best, edge_best, masses

    @njit(cache=True, parallel=True)
    def _score_numba(ch, node_c, node_dy, node_dx, node_thr, leaves, d, stride, nwy, nwx):
        scores = np.zeros((nwy, nwx), dtype=np.float64)
        n_trees = leaves.shape[0]
        for wi in prange(nwy * nwx):
            wy = (wi // nwx) * stride
            wx = (wi % nwx) * stride
            s = 0.0
            for t in range(n_trees):
                v = ch[node_c[t, 0], wy + node_dy[t, 0], wx + node_dx[t, 0]]
                if v < node_thr[t, 0]:
                    k = 1
                    base = 0
                else:
                    k = 2
                    base = 2
                v2 = ch[node_c[t, k], wy + node_dy[t, k], wx + node_dx[t, k]]
                if v2 < node_thr[t, k]:
                    s += leaves[t, base]
                else:
                    s += leaves[t, base + 1]
            scores[wi // nwx, wi % nwx] = s
        return scores


def label_histograms(q_t, rows, weights, pos_mask, bins):
    """Weighted per-(feature, bin) histograms split by label.

    q_t is the transposed (n_features, n_samples) uint8 bin matrix;
    rows selects the samples in play at this tree node.
    """
    if USE_NUMBA:
        return _hist_numba(q_t, rows, weights, pos_mask, bins)
    return _hist_numpy(q_t, rows, weights, pos_mask, bins)


def split_scan(pos, neg):
    """Best split per feature from the label histograms.

    For each feature, scans the bins-1 candidate edges and returns the
    lowest weighted Gini impurity, the (first) edge achieving it, and the
    left/right class masses at that edge, shape (n_features, 4) ordered
    (lp, ln, rp, rn).  Features with no admissible edge (either side
    empty everywhere) get impurity +inf; their edge and masses are
    meaningless and must not be read.
    """
    if USE_NUMBA:
        return _split_scan_numba(pos, neg)
    return _split_scan_numpy(pos, neg)


def score_windows(ch, node_c, node_dy, node_dx, node_thr, leaves, d, stride, nwy, nwx):
    """Sum of depth-two tree outputs for every window placement.

    ch is one level's (F, gh, gw) channel stack; windows are d x d cells
    at the given cell stride; output is (nwy, nwx) scores.
    """
    if USE_NUMBA:
        return _score_numba(
            ch, node_c, node_dy, node_dx, node_thr, leaves, d, stride, nwy, nwx
        )
    return _score_numpy(ch, node_c, node_dy, node_dx, node_thr, leaves, d, stride, nwy, nwx)
