"""Axis-aligned boxes, IoU, and greedy non-maximum suppression.

Boxes are half-open real-valued rectangles: (x1, y1) is the top-left
corner, (x2, y2) the exclusive bottom-right edge, so width is exactly
x2 - x1. Annotation corners in 1-based inclusive pixel coordinates map
to this convention as (xmin-1, ymin-1, xmax, ymax).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not math.isfinite(v):
                raise ValueError(f"box coordinates must be finite, got {self}")
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(f"box must have positive width and height, got {self}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def cx(self) -> float:
        return 0.5 * (self.x1 + self.x2)

    @property
    def cy(self) -> float:
        return 0.5 * (self.y1 + self.y2)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class ScoredBox:
    box: Box
    score: float

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"score must be finite, got {self.score}")


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes; 0.0 when they are disjoint."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    if ix <= 0.0:
        return 0.0
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two (N, 4) and (M, 4) arrays of xyxy boxes."""
    boxes_a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    boxes_b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    ix = np.minimum(boxes_a[:, None, 2], boxes_b[None, :, 2]) - np.maximum(
        boxes_a[:, None, 0], boxes_b[None, :, 0]
    )
    iy = np.minimum(boxes_a[:, None, 3], boxes_b[None, :, 3]) - np.maximum(
        boxes_a[:, None, 1], boxes_b[None, :, 1]
    )
    inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
    area_a = (boxes_a[:, 2] - boxes_a[:, 0]) * (boxes_a[:, 3] - boxes_a[:, 1])
    area_b = (boxes_b[:, 2] - boxes_b[:, 0]) * (boxes_b[:, 3] - boxes_b[:, 1])
    return inter / (area_a[:, None] + area_b[None, :] - inter)


def nms_indices(boxes: np.ndarray, scores: np.ndarray, threshold: float) -> np.ndarray:
    """Greedy NMS over an (N, 4) xyxy array; returns kept indices.

    Boxes are visited in order of decreasing score (ties broken by
    ascending input index); a box is kept iff its IoU with every
    previously kept box is <= threshold. A suppressed box never
    suppresses anything. Kept indices come back in visit order, i.e.
    sorted by decreasing score.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"nms threshold must be in (0, 1], got {threshold}")
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).ravel()
    n = boxes.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)

    order = np.lexsort((np.arange(n), -scores))
    x1, y1, x2, y2 = (boxes[order, i] for i in range(4))
    areas = (x2 - x1) * (y2 - y1)

    kept: list[int] = []
    live = np.arange(n)
    while live.size:
        i = live[0]
        kept.append(i)
        rest = live[1:]
        ix = np.minimum(x2[i], x2[rest]) - np.maximum(x1[i], x1[rest])
        iy = np.minimum(y2[i], y2[rest]) - np.maximum(y1[i], y1[rest])
        inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
        ov = inter / (areas[i] + areas[rest] - inter)
        live = rest[ov <= threshold]
    return order[np.asarray(kept, dtype=np.int64)]


def nms_greedy(boxes: list[ScoredBox], threshold: float) -> list[ScoredBox]:
    """Greedy non-maximum suppression over scored boxes.

    Returns the surviving subsequence sorted by decreasing score; score
    ties keep the earlier input first.
    """
    if not boxes:
        if not 0.0 < threshold <= 1.0:
            raise ValueError(f"nms threshold must be in (0, 1], got {threshold}")
        return []
    arr = np.array([sb.box.as_tuple() for sb in boxes], dtype=np.float64)
    scores = np.array([sb.score for sb in boxes], dtype=np.float64)
    keep = nms_indices(arr, scores, threshold)
    return [boxes[i] for i in keep]
