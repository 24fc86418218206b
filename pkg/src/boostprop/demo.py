"""Deterministic synthetic datasets: textured shapes on noise backgrounds.

Each image gets 1-4 rectangles/ellipses with striped textures whose box
areas span 2-30% of the image, drawn over smoothed-noise backgrounds.
Annotations come from the paint mask itself, so every box is tight by
construction. Everything derives from numpy's seeded generator, making
regenerated trees bit-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .channels import ImagePlanes, bilinear_resize
from .dataio import write_image

COUNT_RANGE = (1, 4)
AREA_FRAC_RANGE = (0.02, 0.30)
ASPECT_RANGE = (2.0 / 3.0, 1.5)
MAX_OVERLAP_IOU = 0.3
STRIPE_FREQ_RANGE = (0.05, 0.18)  # cycles per pixel; coarse enough to survive pooling


def _background(rng, side):
    base = rng.uniform(0.25, 0.75, size=3)
    coarse = rng.uniform(-1.0, 1.0, size=(3, max(side // 16, 2), max(side // 16, 2)))
    cloud = bilinear_resize(coarse, side, side) * 0.12
    noise = rng.normal(0.0, 0.02, size=(3, side, side))
    return np.clip(base[:, None, None] + cloud + noise, 0.0, 1.0)


def _pick_colors(rng, bg_mean):
    """Two stripe colors that contrast with each other and the backdrop."""
    for _ in range(40):
        c1 = rng.uniform(0.0, 1.0, size=3)
        c2 = rng.uniform(0.0, 1.0, size=3)
        mid = 0.5 * (c1 + c2)
        if np.abs(c1 - c2).max() >= 0.35 and np.abs(mid - bg_mean).max() >= 0.15:
            return c1, c2
    return np.array([0.05, 0.05, 0.05]), np.array([0.95, 0.95, 0.95])


def _iou_xyxy(a, b):
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def make_image(seed: int, index: int, side: int):
    """Render image `index` of the dataset; returns (planes, records).

    Each record is a dict with the object's shape kind, the tight pixel
    bounding box (x0, y0, x1, y1) half-open, and its draw parameters.
    """
    rng = np.random.default_rng([seed, index])
    planes = _background(rng, side)
    bg_mean = planes.mean(axis=(1, 2))
    n_objects = int(rng.integers(COUNT_RANGE[0], COUNT_RANGE[1] + 1))
    ys, xs = np.mgrid[0:side, 0:side].astype(np.float64)
    records = []
    placed = []
    for _ in range(n_objects):
        for _attempt in range(60):
            area_frac = float(
                np.exp(rng.uniform(np.log(AREA_FRAC_RANGE[0]), np.log(AREA_FRAC_RANGE[1])))
            )
            aspect = float(
                np.exp(rng.uniform(np.log(ASPECT_RANGE[0]), np.log(ASPECT_RANGE[1])))
            )
            area = area_frac * side * side
            w = float(np.sqrt(area * aspect))
            h = float(np.sqrt(area / aspect))
            if w >= side - 2 or h >= side - 2:
                continue
            x1 = float(rng.uniform(1.0, side - 1.0 - w))
            y1 = float(rng.uniform(1.0, side - 1.0 - h))
            nominal = (x1, y1, x1 + w, y1 + h)
            if all(_iou_xyxy(nominal, q) < MAX_OVERLAP_IOU for q in placed):
                break
        else:
            continue
        placed.append(nominal)
        shape = "rect" if rng.uniform() < 0.5 else "ellipse"
        cx, cy = x1 + w / 2.0, y1 + h / 2.0
        if shape == "rect":
            mask = (
                (xs + 0.5 >= nominal[0])
                & (xs + 0.5 < nominal[2])
                & (ys + 0.5 >= nominal[1])
                & (ys + 0.5 < nominal[3])
            )
        else:
            mask = ((xs + 0.5 - cx) / (w / 2.0)) ** 2 + (
                (ys + 0.5 - cy) / (h / 2.0)
            ) ** 2 <= 1.0
        if not mask.any():
            placed.pop()
            continue
        c1, c2 = _pick_colors(rng, bg_mean)
        theta = float(rng.uniform(0.0, np.pi))
        freq = float(rng.uniform(*STRIPE_FREQ_RANGE))
        phase = float(rng.uniform(0.0, 2.0 * np.pi))
        wave = np.sin(
            2.0 * np.pi * freq * (np.cos(theta) * xs + np.sin(theta) * ys) + phase
        )
        blend = 0.5 + 0.5 * np.tanh(3.0 * wave)
        tex = c1[:, None, None] * blend + c2[:, None, None] * (1.0 - blend)
        planes = np.where(mask[None, :, :], tex, planes)

        rows = np.nonzero(mask.any(axis=1))[0]
        cols = np.nonzero(mask.any(axis=0))[0]
        tight = (int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)
        records.append(
            {
                "shape": shape,
                "box": tight,
                "area_frac": area_frac,
                "aspect": aspect,
            }
        )
    return ImagePlanes(np.clip(planes, 0.0, 1.0)), records


def _xml_annotation(image_name, side, records, comment):
    parts = ['<?xml version="1.0" encoding="UTF-8"?>', f"<!-- {comment} -->"]
    parts.append("<annotation>")
    parts.append(f"  <filename>{image_name}</filename>")
    parts.append(
        f"  <size><width>{side}</width><height>{side}</height>"
        "<depth>3</depth></size>"
    )
    for rec in records:
        x0, y0, x1, y1 = rec["box"]
        parts.append("  <object>")
        parts.append(f"    <name>{rec['shape']}</name>")
        parts.append("    <difficult>0</difficult>")
        parts.append(
            f"    <bndbox><xmin>{x0 + 1}</xmin><ymin>{y0 + 1}</ymin>"
            f"<xmax>{x1}</xmax><ymax>{y1}</ymax></bndbox>"
        )
        parts.append("  </object>")
    parts.append("</annotation>")
    return "\n".join(parts) + "\n"


def generate_dataset(out_dir, n_images: int, seed: int, side: int = 288, header: dict | None = None) -> Path:
    """Write images/, annotations/, manifest.tsv, and meta.json under out_dir.

    Returns the manifest path. Identical arguments produce identical
    directory trees byte for byte.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "annotations").mkdir(parents=True, exist_ok=True)
    comment = "; ".join(f"{k}: {v}" for k, v in (header or {}).items()) or "synthetic"
    manifest_lines = [f"# {k}: {v}" for k, v in (header or {}).items()]
    meta = {"seed": seed, "images": n_images, "side": side, "objects": []}
    if header:
        meta["generator"] = dict(header)
    for idx in range(n_images):
        name = f"im_{idx:04d}"
        image, records = make_image(seed, idx, side)
        write_image(out_dir / "images" / f"{name}.ppm", image, comment=comment)
        (out_dir / "annotations" / f"{name}.xml").write_text(
            _xml_annotation(f"{name}.ppm", side, records, comment)
        )
        manifest_lines.append(f"images/{name}.ppm\tannotations/{name}.xml")
        meta["objects"].append(
            {
                "image": name,
                "count": len(records),
                "boxes": [rec["box"] for rec in records],
                "shapes": [rec["shape"] for rec in records],
                "area_fracs": [rec["area_frac"] for rec in records],
                "aspects": [rec["aspect"] for rec in records],
            }
        )
    manifest = out_dir / "manifest.tsv"
    manifest.write_text("\n".join(manifest_lines) + "\n")
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=1) + "\n")
    return manifest
