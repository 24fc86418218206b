"""Tests for box-refinement ridge regression."""

import math

import numpy as np
import pytest

from boostprop.geometry import Box, ScoredBox
from boostprop.regress import (
    BoxRegressor,
    RegressionPair,
    apply,
    fit,
    make_targets,
    select_pairs,
)


def jittered_pair(rng, dim=12):
    """A gated pair with small random shift/scale between P and G."""
    x1, y1 = rng.uniform(0, 40, 2)
    w, h = rng.uniform(10, 30, 2)
    p = Box(x1, y1, x1 + w, y1 + h)
    ax, ay = rng.uniform(-0.05, 0.05, 2)
    sw, sh = np.exp(rng.uniform(-0.05, 0.05, 2))
    cx, cy = p.cx + ax * w, p.cy + ay * h
    gw, gh = w * sw, h * sh
    g = Box(cx - gw / 2, cy - gh / 2, cx + gw / 2, cy + gh / 2)
    return RegressionPair(p, g, rng.normal(size=dim))


class TestTargets:
    def test_identity(self):
        b = Box(3, 4, 13, 24)
        assert make_targets(b, b) == (0.0, 0.0, 0.0, 0.0)

    def test_pure_shift(self):
        t = make_targets(Box(0, 0, 10, 10), Box(5, 0, 15, 10))
        assert t == (0.5, 0.0, 0.0, 0.0)

    def test_pure_scale(self):
        t = make_targets(Box(0, 0, 10, 10), Box(-5, -5, 15, 15))
        assert t == (0.0, 0.0, math.log(2.0), math.log(2.0))

    def test_targets_invert_the_transform(self, rng):
        p, g = jittered_pair(rng).p, jittered_pair(rng).g
        tx, ty, tw, th = make_targets(p, g)
        cx = p.cx + tx * p.width
        cy = p.cy + ty * p.height
        w = p.width * math.exp(tw)
        h = p.height * math.exp(th)
        rebuilt = Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
        for a, b in zip(rebuilt.as_tuple(), g.as_tuple()):
            assert a == pytest.approx(b, abs=1e-9)


class TestRegressionPair:
    def test_gate_accepts_close_pair(self):
        # 10% shift leaves IoU = 9/11, comfortably above the 0.7 gate
        RegressionPair(Box(0, 0, 10, 10), Box(1, 0, 11, 10), np.zeros(4))

    def test_gate_rejects_loose_pair(self):
        with pytest.raises(ValueError, match="below the 0.7 gate"):
            RegressionPair(Box(0, 0, 10, 10), Box(5, 0, 15, 10), np.zeros(4))


class TestBoxRegressor:
    def test_shape_validation(self):
        ok = dict(
            weights=np.zeros((4, 3)),
            bias=np.zeros(4),
            mean=np.zeros(3),
            scale=np.ones(3),
            ridge_lambda=1.0,
        )
        BoxRegressor(**ok)
        with pytest.raises(ValueError):
            BoxRegressor(**{**ok, "weights": np.zeros((3, 3))})
        with pytest.raises(ValueError):
            BoxRegressor(**{**ok, "bias": np.zeros(3)})
        with pytest.raises(ValueError):
            BoxRegressor(**{**ok, "mean": np.zeros(5)})
        with pytest.raises(ValueError):
            BoxRegressor(**{**ok, "ridge_lambda": 0.0})
        with pytest.raises(ValueError):
            BoxRegressor(**{**ok, "bias": np.full(4, np.nan)})


class TestFit:
    def test_needs_pairs_and_positive_lambda(self, rng):
        with pytest.raises(ValueError):
            fit([])
        with pytest.raises(ValueError):
            fit([jittered_pair(rng)], ridge_lambda=0.0)

    def test_zero_targets_give_identity(self, rng):
        pairs = []
        for _ in range(6):
            x1, y1 = rng.integers(0, 20, 2)
            w, h = rng.integers(4, 16, 2)
            b = Box(float(x1), float(y1), float(x1 + w), float(y1 + h))
            pairs.append(RegressionPair(b, b, rng.normal(size=8)))
        reg = fit(pairs, ridge_lambda=10.0)
        assert np.array_equal(reg.weights, np.zeros((4, 8)))
        assert np.array_equal(reg.bias, np.zeros(4))
        box = Box(2.0, 4.0, 10.0, 12.0)
        assert apply(reg, box, rng.normal(size=8)) == box

    def test_constant_shift_learned_in_bias(self, rng):
        # All pairs share targets (0.1, 0, 0, 0); centering forces the
        # weights to zero and the bias to carry the whole shift.
        pairs = []
        for _ in range(8):
            x1, y1 = rng.uniform(0, 30, 2)
            w, h = rng.uniform(8, 25, 2)
            p = Box(x1, y1, x1 + w, y1 + h)
            g = Box(x1 + 0.1 * w, y1, x1 + w + 0.1 * w, y1 + h)
            pairs.append(RegressionPair(p, g, rng.normal(size=10)))
        reg = fit(pairs, ridge_lambda=1000.0)
        assert np.allclose(reg.weights, 0.0, atol=1e-12)
        assert np.allclose(reg.bias, [0.1, 0.0, 0.0, 0.0], atol=1e-12)
        out = apply(reg, Box(0, 0, 10, 10), rng.normal(size=10))
        for a, b in zip(out.as_tuple(), (1.0, 0.0, 11.0, 10.0)):
            assert a == pytest.approx(b, abs=1e-6)

    def test_tiny_lambda_interpolates_training_pairs(self, rng):
        # More features than pairs: as lambda -> 0 the ridge solution
        # reproduces every training target.
        pairs = [jittered_pair(rng, dim=12) for _ in range(6)]
        reg = fit(pairs, ridge_lambda=1e-6)
        for pair in pairs:
            want = np.array(make_targets(pair.p, pair.g))
            z = (pair.phi - reg.mean) / reg.scale
            got = reg.weights @ z + reg.bias
            assert np.allclose(got, want, atol=1e-5)

    def test_huge_lambda_collapses_to_mean_shift(self, rng):
        pairs = [jittered_pair(rng) for _ in range(10)]
        reg = fit(pairs, ridge_lambda=1e12)
        assert np.abs(reg.weights).max() <= 1e-6
        t_mean = np.mean([make_targets(p.p, p.g) for p in pairs], axis=0)
        assert np.allclose(reg.bias, t_mean, atol=1e-12)

    def test_pair_order_does_not_matter(self, rng):
        pairs = [jittered_pair(rng) for _ in range(12)]
        perm = list(rng.permutation(len(pairs)))
        a = fit(pairs, ridge_lambda=50.0)
        b = fit([pairs[i] for i in perm], ridge_lambda=50.0)
        assert np.allclose(a.weights, b.weights, atol=1e-10)
        assert np.allclose(a.bias, b.bias, atol=1e-10)

    def test_meta_passthrough(self, rng):
        reg = fit([jittered_pair(rng)], meta={"pairs": 1})
        assert reg.meta == {"pairs": 1}
        assert reg.ridge_lambda == 1000.0  # default


class TestApply:
    def test_descriptor_size_checked(self, rng):
        reg = fit([jittered_pair(rng, dim=6)])
        with pytest.raises(ValueError, match="expects 6"):
            apply(reg, Box(0, 0, 5, 5), np.zeros(7))

    def test_descriptor_shape_is_flattened(self, rng):
        reg = fit([jittered_pair(rng, dim=12) for _ in range(4)])
        phi = rng.normal(size=(3, 2, 2))
        assert apply(reg, Box(0, 0, 5, 5), phi) == apply(reg, Box(0, 0, 5, 5), phi.ravel())


class TestSelectPairs:
    def gt(self):
        return [Box(0, 0, 10, 10)]

    def test_empty_inputs(self):
        assert select_pairs([], self.gt()) == []
        assert select_pairs([ScoredBox(Box(0, 0, 1, 1), 1.0)], []) == []

    def test_below_gate_yields_nothing(self):
        props = [ScoredBox(Box(5, 0, 15, 10), 9.0)]  # IoU 1/3
        assert select_pairs(props, self.gt()) == []

    def test_highest_iou_wins(self):
        props = [
            ScoredBox(Box(1, 0, 11, 10), 5.0),  # IoU 9/11
            ScoredBox(Box(0.5, 0, 10.5, 10), 1.0),  # IoU 9.5/10.5, higher
        ]
        assert select_pairs(props, self.gt()) == [(1, 0)]

    def test_iou_tie_prefers_higher_score(self):
        same = Box(1, 0, 11, 10)
        props = [ScoredBox(same, 1.0), ScoredBox(same, 2.0)]
        assert select_pairs(props, self.gt()) == [(1, 0)]

    def test_full_tie_prefers_lower_index(self):
        same = Box(1, 0, 11, 10)
        props = [ScoredBox(same, 2.0), ScoredBox(same, 2.0)]
        assert select_pairs(props, self.gt()) == [(0, 0)]

    def test_one_winner_per_ground_truth(self):
        gts = [Box(0, 0, 10, 10), Box(100, 100, 110, 110)]
        props = [
            ScoredBox(Box(0, 0, 10, 10), 1.0),
            ScoredBox(Box(101, 100, 111, 110), 3.0),
            ScoredBox(Box(0.5, 0, 10.5, 10), 2.0),
        ]
        assert select_pairs(props, gts) == [(0, 0), (1, 1)]

    def test_same_proposal_may_serve_two_truths(self):
        gts = [Box(0, 0, 10, 10), Box(0.5, 0, 10.5, 10)]
        props = [ScoredBox(Box(0.2, 0, 10.2, 10), 1.0)]
        assert select_pairs(props, gts) == [(0, 0), (0, 1)]
