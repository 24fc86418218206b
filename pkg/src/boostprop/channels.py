"""Filter-bank channel features and the multi-scale pyramid.

An image is convolved with a fixed bank of first-layer-style filters
(oriented derivative-of-Gaussian edges/bars plus opponent-color blobs),
rectified, and block-averaged into a stack of channel planes at a known
shrink factor. A scale/aspect pyramid of such stacks is what the
sliding-window detector scores, and ``project_box`` /
``window_to_image_box`` (in the detector module) map between image
pixels and channel-grid cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.ndimage as ndi

SCALE_STEP = 2.0 ** (-0.25)  # per-level scale ratio, four levels per octave
ASPECT_RATIO = 1.5  # aspect set is {1/r, 1, r} for R=3


@dataclass(frozen=True)
class ImagePlanes:
    """An image as C float planes in [0, 1], stored (C, H, W)."""

    planes: np.ndarray

    def __post_init__(self):
        p = self.planes
        if p.ndim != 3 or p.shape[0] not in (1, 3):
            raise ValueError(f"planes must be (C, H, W) with C in {{1, 3}}, got {p.shape}")
        if p.shape[1] < 1 or p.shape[2] < 1:
            raise ValueError(f"image must be non-empty, got {p.shape}")
        if not np.isfinite(p).all():
            raise ValueError("image samples must be finite")
        if p.min() < 0.0 or p.max() > 1.0:
            raise ValueError("image samples must lie in [0, 1]")

    @property
    def channels(self) -> int:
        return self.planes.shape[0]

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]


@dataclass(frozen=True)
class FilterBank:
    """F fixed convolution kernels over cin input planes, plus biases."""

    weights: np.ndarray  # (F, cin, kh, kw) float64
    biases: np.ndarray  # (F,) float64
    provenance: str = "loaded"

    def __post_init__(self):
        w = self.weights
        if w.ndim != 4:
            raise ValueError(f"weights must be (F, cin, kh, kw), got shape {w.shape}")
        if self.biases.shape != (w.shape[0],):
            raise ValueError("biases must have one entry per filter")
        if w.shape[2] % 2 == 0 or w.shape[3] % 2 == 0:
            raise ValueError("kernel height and width must be odd")
        if not (np.isfinite(w).all() and np.isfinite(self.biases).all()):
            raise ValueError("filter weights and biases must be finite")

    @property
    def count(self) -> int:
        return self.weights.shape[0]

    @property
    def cin(self) -> int:
        return self.weights.shape[1]

    @property
    def kh(self) -> int:
        return self.weights.shape[2]

    @property
    def kw(self) -> int:
        return self.weights.shape[3]


@dataclass(frozen=True)
class ChannelStack:
    """F channel planes plus the geometry needed to map image coords to cells.

    ``shrink`` is the number of source (resized) image pixels per cell;
    ``origin_offset`` is the resized-image coordinate of cell (0, 0)'s
    center; ``rf_half_x``/``rf_half_y`` are the convolution kernel
    half-widths in resized-image pixels, used when cropping a band
    inside a projected box.
    """

    planes: np.ndarray  # (F, gh, gw) float64
    shrink: int = 1
    origin_offset: float = 0.5
    source_scale: float = 1.0
    rf_half_x: float = 0.0
    rf_half_y: float = 0.0

    def __post_init__(self):
        if self.planes.ndim != 3:
            raise ValueError(f"channel planes must be (F, gh, gw), got {self.planes.shape}")
        if self.shrink < 1:
            raise ValueError(f"shrink must be >= 1, got {self.shrink}")

    @property
    def count(self) -> int:
        return self.planes.shape[0]

    @property
    def grid_h(self) -> int:
        return self.planes.shape[1]

    @property
    def grid_w(self) -> int:
        return self.planes.shape[2]


@dataclass(frozen=True)
class PyramidLevel:
    """One (scale, aspect) resampling of the source image with its channels."""

    scale_index: int
    aspect_index: int
    x_factor: float
    y_factor: float
    channels: ChannelStack
    src_width: int
    src_height: int


def _oriented_kernel(kh, kw, sigma, theta, order, jx, jy):
    """Derivative-of-Gaussian tap grid: order 1 = edge, 2 = bar, 0 = LoG blob."""
    y, x = np.mgrid[0:kh, 0:kw].astype(np.float64)
    x -= (kw - 1) / 2.0 + jx
    y -= (kh - 1) / 2.0 + jy
    if order == 0:
        r2 = x * x + y * y
        env = np.exp(-r2 / (2.0 * sigma * sigma))
        return (r2 / sigma**4 - 2.0 / sigma**2) * env
    u = math.cos(theta) * x + math.sin(theta) * y
    v = -math.sin(theta) * x + math.cos(theta) * y
    su, sv = sigma, 2.2 * sigma  # anisotropic envelope, elongated along the edge
    env = np.exp(-(u * u) / (2 * su * su) - (v * v) / (2 * sv * sv))
    if order == 1:
        return -(u / (su * su)) * env
    return (u * u / su**4 - 1.0 / (su * su)) * env


def _filter_catalog(cin):
    """Ordered parameter list; small banks take a diverse prefix."""
    catalog = []
    for level in range(6):
        sigma_key = level
        for k in range(8):
            catalog.append(("edge", sigma_key, k * math.pi / 8.0))
        for k in range(8):
            catalog.append(("bar", sigma_key, k * math.pi / 8.0))
        catalog.append(("blob", sigma_key, 0.0))
        if cin == 3:
            catalog.append(("opp_rg", sigma_key, 0.0))
            catalog.append(("opp_by", sigma_key, 0.0))
    return catalog


_OPPONENT = {
    "opp_rg": np.array([1.0, -1.0, 0.0]),
    "opp_by": np.array([-0.5, -0.5, 1.0]),
}


def synth_filter_bank(seed: int, F: int, kh: int, kw: int, cin: int) -> FilterBank:
    """Deterministic stand-in bank of first-layer-style filters.

    Contains oriented derivative-of-Gaussian filters at 8 orientations
    over several bandwidths, center-surround blobs, and (for cin=3)
    opponent-color blobs. Every filter is zero-mean with unit L2 norm
    (up to float32 storage precision), so the bank round-trips exactly
    through the CFBK file format.
    """
    if F < 2:
        raise ValueError(f"filter count must be >= 2, got {F}")
    if kh < 1 or kw < 1 or kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel dims must be odd positive, got {kh}x{kw}")
    if cin not in (1, 3):
        raise ValueError(f"cin must be 1 or 3, got {cin}")

    catalog = _filter_catalog(cin)
    if F > len(catalog):
        raise ValueError(f"filter count {F} exceeds catalog size {len(catalog)}")

    rng = np.random.default_rng(seed)
    base = 0.14 * min(kh, kw)
    weights = np.empty((F, cin, kh, kw), dtype=np.float64)
    for i in range(F):
        kind, sigma_key, theta = catalog[i]
        sigma = base * (1.45**sigma_key)
        jx, jy = rng.uniform(-0.25, 0.25, size=2)
        if kind in ("edge", "bar", "blob"):
            order = {"edge": 1, "bar": 2, "blob": 0}[kind]
            k2d = _oriented_kernel(kh, kw, sigma, theta, order, jx, jy)
            w = np.broadcast_to(k2d, (cin, kh, kw)).copy()
        else:
            y, x = np.mgrid[0:kh, 0:kw].astype(np.float64)
            x -= (kw - 1) / 2.0 + jx
            y -= (kh - 1) / 2.0 + jy
            env = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
            w = _OPPONENT[kind][:, None, None] * env[None, :, :]
        w -= w.mean()
        w /= np.linalg.norm(w.ravel())
        weights[i] = w
    biases = rng.uniform(0.0, 0.05, size=F)

    # Store float32-exact values so CFBK serialization is lossless.
    weights = weights.astype(np.float32).astype(np.float64)
    biases = biases.astype(np.float32).astype(np.float64)
    return FilterBank(weights=weights, biases=biases, provenance=f"synthesized({seed})")


def load_filter_bank(path) -> FilterBank:
    """Read a CFBK file; see dataio for the byte layout."""
    from . import dataio

    return dataio.read_cfbk(path)


def convolve(image: ImagePlanes, bank: FilterBank, rectify: bool = True) -> ChannelStack:
    """Same-size cross-correlation with reflect-101 padding, then max(0, r + bias).

    Pass rectify=False to get raw linear responses plus bias (used by
    linearity checks).
    """
    if bank.cin != image.channels:
        raise ValueError(
            f"bank expects {bank.cin} input planes, image has {image.channels}"
        )
    out = np.empty((bank.count, image.height, image.width), dtype=np.float64)
    for f in range(bank.count):
        acc = ndi.correlate(image.planes[0], bank.weights[f, 0], mode="mirror")
        for c in range(1, bank.cin):
            acc += ndi.correlate(image.planes[c], bank.weights[f, c], mode="mirror")
        acc += bank.biases[f]
        out[f] = np.maximum(acc, 0.0) if rectify else acc
    return ChannelStack(
        planes=out,
        shrink=1,
        origin_offset=0.5,
        source_scale=1.0,
        rf_half_x=(bank.kw - 1) / 2.0,
        rf_half_y=(bank.kh - 1) / 2.0,
    )


def aggregate(stack: ChannelStack, shrink: int) -> ChannelStack:
    """Mean-pool each plane over shrink x shrink blocks.

    Border blocks that do not divide evenly are averaged over the cells
    they actually contain.
    """
    if shrink < 1:
        raise ValueError(f"shrink must be >= 1, got {shrink}")
    if shrink == 1:
        return stack
    gh, gw = stack.grid_h, stack.grid_w
    ey = np.arange(0, gh, shrink)
    ex = np.arange(0, gw, shrink)
    sums = np.add.reduceat(np.add.reduceat(stack.planes, ey, axis=1), ex, axis=2)
    cy = np.diff(np.append(ey, gh)).astype(np.float64)
    cx = np.diff(np.append(ex, gw)).astype(np.float64)
    out = sums / (cy[:, None] * cx[None, :])
    new_shrink = stack.shrink * shrink
    return replace(
        stack,
        planes=out,
        shrink=new_shrink,
        origin_offset=new_shrink * 0.5,
    )


def bilinear_resize(planes: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize (C, H, W) planes with center-aligned bilinear sampling."""
    c, h, w = planes.shape
    if (out_h, out_w) == (h, w):
        return planes.copy()
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    top = planes[:, y0, :][:, :, x0] * (1 - wx) + planes[:, y0, :][:, :, x1] * wx
    bot = planes[:, y1, :][:, :, x0] * (1 - wx) + planes[:, y1, :][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


def resize_image(image: ImagePlanes, out_h: int, out_w: int) -> ImagePlanes:
    resized = np.clip(bilinear_resize(image.planes, out_h, out_w), 0.0, 1.0)
    return ImagePlanes(planes=resized)


def level_geometries(width, height, S, R, min_size_px):
    """Enumerate fitting (scale_index, aspect_index, fx, fy, rw, rh) tuples.

    Scales run 1.0 downward by SCALE_STEP; aspect exponents are the
    symmetric set around 0 (R must be odd). Levels whose resized image
    cannot hold a min_size_px window in both axes are dropped.
    """
    if S < 1:
        raise ValueError(f"scale count must be >= 1, got {S}")
    if R < 1 or R % 2 == 0:
        raise ValueError(f"aspect count must be odd and >= 1, got {R}")
    out = []
    half = (R - 1) // 2
    for i in range(S):
        f = SCALE_STEP**i
        for j in range(R):
            fx = f * ASPECT_RATIO ** (j - half)
            fy = f
            rw = int(round(width * fx))
            rh = int(round(height * fy))
            if rw >= min_size_px and rh >= min_size_px:
                out.append((i, j, fx, fy, rw, rh))
    return out


def build_pyramid(
    image: ImagePlanes,
    bank: FilterBank,
    S: int,
    R: int,
    d: int,
    shrink: int,
) -> list[PyramidLevel]:
    """Channel pyramid over S scales and R aspect ratios.

    Each level resizes the image anisotropically, convolves with the
    bank, and aggregates by ``shrink``. Levels too small to fit one
    d x d-cell window are dropped. Output is ordered by
    (scale_index, aspect_index).
    """
    if d < 1 or shrink < 1:
        raise ValueError("window size and shrink must be >= 1")
    levels = []
    for i, j, fx, fy, rw, rh in level_geometries(
        image.width, image.height, S, R, d * shrink
    ):
        resized = resize_image(image, rh, rw)
        stack = aggregate(convolve(resized, bank), shrink)
        stack = replace(stack, source_scale=SCALE_STEP**i)
        levels.append(
            PyramidLevel(
                scale_index=i,
                aspect_index=j,
                x_factor=fx,
                y_factor=fy,
                channels=stack,
                src_width=image.width,
                src_height=image.height,
            )
        )
    return levels


def project_box(box, level: PyramidLevel, band_margin: float = 0.0):
    """Map an original-image box into half-open channel-grid cell bounds.

    The box is scaled by the level's resize factors, shrunk inward by
    band_margin per side, inset by the kernel half-width so cells whose
    receptive field centers fall outside the band are excluded, and
    converted to cell indices by center inclusion. The result is
    clamped to at least one cell inside the grid.

    Returns (cx0, cy0, cx1, cy1) integer cell bounds.
    """
    if not 0.0 <= band_margin < 0.5:
        raise ValueError(f"band_margin must be in [0, 0.5), got {band_margin}")
    if (
        box.x2 <= 0
        or box.y2 <= 0
        or box.x1 >= level.src_width
        or box.y1 >= level.src_height
    ):
        raise ValueError(f"box {box} lies outside the {level.src_width}x{level.src_height} image")

    stack = level.channels
    s = stack.shrink
    bx1 = box.x1 * level.x_factor
    bx2 = box.x2 * level.x_factor
    by1 = box.y1 * level.y_factor
    by2 = box.y2 * level.y_factor
    bx1, bx2 = bx1 + band_margin * (bx2 - bx1), bx2 - band_margin * (bx2 - bx1)
    by1, by2 = by1 + band_margin * (by2 - by1), by2 - band_margin * (by2 - by1)
    bx1 += stack.rf_half_x
    bx2 -= stack.rf_half_x
    by1 += stack.rf_half_y
    by2 -= stack.rf_half_y

    def to_cells(lo, hi, n_cells):
        i0 = math.ceil(lo / s - 0.5)
        i1 = math.ceil(hi / s - 0.5)
        if i1 <= i0:  # keep at least one cell, centered on the band
            ic = int(round((lo + hi) / (2.0 * s) - 0.5))
            ic = min(max(ic, 0), n_cells - 1)
            return ic, ic + 1
        i0 = max(i0, 0)
        i1 = min(i1, n_cells)
        if i1 <= i0:  # band fell entirely off-grid after clamping
            ic = min(max(i0, 0), n_cells - 1)
            return ic, ic + 1
        return i0, i1

    cx0, cx1 = to_cells(bx1, bx2, stack.grid_w)
    cy0, cy1 = to_cells(by1, by2, stack.grid_h)
    return cx0, cy0, cx1, cy1


def crop_descriptor(stack: ChannelStack, rect, d: int) -> np.ndarray:
    """Crop cell rect (cx0, cy0, cx1, cy1) and bilinearly resample to (F, d, d)."""
    cx0, cy0, cx1, cy1 = rect
    crop = stack.planes[:, cy0:cy1, cx0:cx1]
    return bilinear_resize(np.ascontiguousarray(crop), d, d)
