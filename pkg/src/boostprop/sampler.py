"""Training-sample extraction: positives, random negatives, hard mining.

Descriptors come from the same channel pyramid the detector scores: a
box is assigned to the (scale, aspect) level whose window geometry best
matches it in log-area and log-aspect, projected to channel cells, and
the cropped cell rect is bilinearly resampled to d x d per channel.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .boost import WeightedSet
from .channels import (
    SCALE_STEP,
    FilterBank,
    ImagePlanes,
    PyramidLevel,
    aggregate,
    convolve,
    crop_descriptor,
    level_geometries,
    project_box,
    resize_image,
)
from .detector import DEFAULT_R, DEFAULT_S, DetectorConfig, propose
from .errors import SamplingError
from .geometry import Box, iou_matrix

MIN_CELLS = 2  # boxes projecting below MIN_CELLS x MIN_CELLS are skipped


@dataclass(frozen=True)
class SampleSpec:
    """Negative-sampling and bootstrap parameters.

    size_range bounds sqrt(box area) as a fraction of min(width, height);
    aspect_range bounds width/height. Both are sampled log-uniformly.
    """

    neg_per_round: int = 20000
    bootstrap_rounds: int = 3
    neg_max_iou: float = 0.3
    rng_seed: int = 0
    size_range: tuple = (0.15, 0.95)
    aspect_range: tuple = (1.0 / 1.5, 1.5)

    def __post_init__(self):
        if self.neg_per_round < 1:
            raise ValueError("neg_per_round must be positive")
        if self.bootstrap_rounds < 0:
            raise ValueError("bootstrap_rounds must be >= 0")
        if not 0.0 <= self.neg_max_iou < 1.0:
            raise ValueError("neg_max_iou must lie in [0, 1)")
        lo, hi = self.size_range
        alo, ahi = self.aspect_range
        if not 0.0 < lo <= hi:
            raise ValueError("size_range must be positive and ordered")
        if not 0.0 < alo <= ahi:
            raise ValueError("aspect_range must be positive and ordered")


class PyramidCache:
    """Aggregated pyramid levels for one image, computed lazily.

    Only the levels actually chosen for some box get convolved, which
    keeps descriptor extraction cheap when boxes cluster in scale.
    """

    def __init__(self, image: ImagePlanes, bank: FilterBank, d, shrink, S=DEFAULT_S, R=DEFAULT_R):
        self.image = image
        self.bank = bank
        self.d = d
        self.shrink = shrink
        self.geoms = level_geometries(image.width, image.height, S, R, d * shrink)
        self._levels = {}
        span = float(d * shrink)
        self._extents = [(span / fx, span / fy) for _, _, fx, fy, _, _ in self.geoms]

    def best_level_for(self, box: Box):
        """Index of the level whose window is closest in log-area/log-aspect."""
        if not self.geoms:
            return None
        la = math.log(box.area)
        lr = math.log(box.width / box.height)
        best_k, best_cost = None, None
        for k, (w, h) in enumerate(self._extents):
            cost = (math.log(w * h) - la) ** 2 + (math.log(w / h) - lr) ** 2
            if best_cost is None or cost < best_cost:
                best_k, best_cost = k, cost
        return best_k

    def level(self, k: int) -> PyramidLevel:
        if k not in self._levels:
            i, j, fx, fy, rw, rh = self.geoms[k]
            resized = resize_image(self.image, rh, rw)
            stack = aggregate(convolve(resized, self.bank), self.shrink)
            stack = replace(stack, source_scale=SCALE_STEP**i)
            self._levels[k] = PyramidLevel(
                scale_index=i,
                aspect_index=j,
                x_factor=fx,
                y_factor=fy,
                channels=stack,
                src_width=self.image.width,
                src_height=self.image.height,
            )
        return self._levels[k]


def extract_descriptor(cache: PyramidCache, box: Box, band_margin: float = 0.0):
    """(F, d, d) descriptor for one box, or None when it projects below
    MIN_CELLS x MIN_CELLS cells at its best level."""
    k = cache.best_level_for(box)
    if k is None:
        return None
    level = cache.level(k)
    rect = project_box(box, level, band_margin)
    cx0, cy0, cx1, cy1 = rect
    if cx1 - cx0 < MIN_CELLS or cy1 - cy0 < MIN_CELLS:
        return None
    return crop_descriptor(level.channels, rect, cache.d)


def extract_positive(
    image: ImagePlanes,
    annotations,
    bank: FilterBank,
    d: int,
    shrink: int,
    *,
    S: int = DEFAULT_S,
    R: int = DEFAULT_R,
) -> list:
    """One descriptor per ground-truth box; undersized boxes are skipped."""
    cache = PyramidCache(image, bank, d, shrink, S, R)
    out = []
    skipped = 0
    for box in annotations:
        desc = extract_descriptor(cache, box)
        if desc is None:
            skipped += 1
        else:
            out.append(desc)
    if skipped:
        warnings.warn(
            f"skipped {skipped} annotation box(es) smaller than "
            f"{MIN_CELLS}x{MIN_CELLS} cells at their best pyramid level"
        )
    return out


def sample_negatives(
    image: ImagePlanes,
    annotations,
    spec: SampleSpec,
    n: int,
    *,
    bank: FilterBank,
    d: int,
    shrink: int,
    S: int = DEFAULT_S,
    R: int = DEFAULT_R,
    salt: int = 0,
) -> list:
    """Rejection-sample n background boxes with descriptors.

    Boxes are drawn log-uniformly in scale and aspect and uniformly in
    position, and accepted iff their IoU with every annotation is below
    spec.neg_max_iou. Deterministic given (spec.rng_seed, salt); salt
    should be the image's dataset index so parallel runs agree.
    Returns [(Box, descriptor), ...].
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return []
    rng = np.random.default_rng([spec.rng_seed, salt])
    cache = PyramidCache(image, bank, d, shrink, S, R)
    w_img, h_img = float(image.width), float(image.height)
    base = min(w_img, h_img)
    lo, hi = spec.size_range
    alo, ahi = spec.aspect_range
    gt = (
        np.array([b.as_tuple() for b in annotations], dtype=np.float64)
        if annotations
        else None
    )
    accepted = []
    drawn = 0
    budget = 1000 * n
    while len(accepted) < n and drawn < budget:
        batch = int(min(max(4 * (n - len(accepted)), 64), budget - drawn))
        drawn += batch
        side = base * np.exp(rng.uniform(math.log(lo), math.log(hi), batch))
        aspect = np.exp(rng.uniform(math.log(alo), math.log(ahi), batch))
        bw = side * np.sqrt(aspect)
        bh = side / np.sqrt(aspect)
        ux = rng.uniform(0.0, 1.0, batch)
        uy = rng.uniform(0.0, 1.0, batch)
        ok = (bw <= w_img) & (bh <= h_img) & (bw >= 1.0) & (bh >= 1.0)
        x1 = ux * (w_img - bw)
        y1 = uy * (h_img - bh)
        cand = np.stack([x1, y1, x1 + bw, y1 + bh], axis=1)
        if gt is not None and np.any(ok):
            worst = iou_matrix(cand, gt).max(axis=1)
            ok &= worst < spec.neg_max_iou
        for idx in np.nonzero(ok)[0]:
            if len(accepted) >= n:
                break
            box = Box(*cand[idx])
            desc = extract_descriptor(cache, box)
            if desc is None:
                continue
            accepted.append((box, desc))
    if len(accepted) < n:
        raise SamplingError(
            f"accepted only {len(accepted)}/{n} negatives after {drawn} draws; "
            "the image may be too densely annotated"
        )
    return accepted


def make_weighted_set(positives, negatives, d, channel_count) -> WeightedSet:
    """Stack positive/negative descriptor lists into a uniform WeightedSet."""
    rows = [p.ravel() for p in positives] + [q.ravel() for q in negatives]
    labels = [1] * len(positives) + [-1] * len(negatives)
    return WeightedSet.uniform(
        np.stack(rows).astype(np.float32), labels, d, channel_count
    )


def bootstrap(model, wset: WeightedSet, data, bank: FilterBank, spec: SampleSpec, *, mine_cfg: DetectorConfig | None = None) -> WeightedSet:
    """One hard-negative mining round.

    data is an ordered list of (ImagePlanes, [ground-truth Box]) pairs.
    The detector runs on every image; surviving proposals with score > 0
    and IoU < spec.neg_max_iou against all annotations are pooled, the
    spec.neg_per_round highest-scoring kept (ties by image order then
    per-image rank), their descriptors appended as negatives, and the
    enlarged set returned with fresh uniform weights.
    """
    if mine_cfg is None:
        mine_cfg = DetectorConfig(models=(model,))
    candidates = []  # (score, image_index, local_index, Box)
    for img_idx, (image, boxes) in enumerate(data):
        props = propose(image, bank, mine_cfg)
        gt = (
            np.array([b.as_tuple() for b in boxes], dtype=np.float64)
            if boxes
            else None
        )
        local = 0
        for p in props:
            if p.score <= 0.0:
                continue
            if gt is not None:
                worst = iou_matrix([p.box.as_tuple()], gt).max()
                if worst >= spec.neg_max_iou:
                    continue
            candidates.append((p.score, img_idx, local, p.box))
            local += 1
    order = sorted(
        range(len(candidates)),
        key=lambda i: (-candidates[i][0], candidates[i][1], candidates[i][2]),
    )
    top = [candidates[i] for i in order[: spec.neg_per_round]]
    if len(top) < 0.01 * spec.neg_per_round:
        warnings.warn(
            f"hard-negative mining found only {len(top)} of "
            f"{spec.neg_per_round} requested windows"
        )
    if not top:
        return wset

    by_image: dict = {}
    for pos, (_, img_idx, _, box) in enumerate(top):
        by_image.setdefault(img_idx, []).append((pos, box))
    rows = [None] * len(top)
    for img_idx in sorted(by_image):
        cache = PyramidCache(
            data[img_idx][0], bank, model.d, model.shrink, mine_cfg.S, mine_cfg.R
        )
        for pos, box in by_image[img_idx]:
            rows[pos] = extract_descriptor(cache, box)
    new_rows = [r.ravel() for r in rows if r is not None]
    if not new_rows:
        return wset
    stacked = np.vstack(
        [wset.descriptors, np.stack(new_rows).astype(np.float32)]
    )
    labels = np.concatenate(
        [wset.labels, np.full(len(new_rows), -1, dtype=np.int8)]
    )
    return WeightedSet.uniform(stacked, labels, wset.d, wset.channel_count)
