"""Grid-to-pixel upsampling of saliency grids.

Two production paths plus one reference path:

* ``gaussian_upsample`` superposes one unnormalized 2D Gaussian per grid cell:

      L[x,y] = sum_ij G[i,j] * exp(-((x - (w/u)(i+off))^2 / (2*sx^2)
                                     + (y - (h/v)(j+off))^2 / (2*sy^2)))

  evaluated over the full w x h extent with no kernel truncation, so even a
  distant cell influences every pixel. The kernel is deliberately not
  normalized by 1/(2*pi*sx*sy); downstream masking and rendering min-max
  normalize, so absolute scale is irrelevant. The exponent is separable, so
  the production path evaluates two axis profiles and two matrix products;
  ``gaussian_upsample_direct`` evaluates the same quadruple sum without the
  factorization and exists to pin the separable path down in tests.

* ``bilinear_upsample`` is the conventional baseline: align-corners linear
  interpolation, where pixel x reads source coordinate x*(u-1)/(w-1). Only
  the two adjacent cells per axis can influence a pixel.

* ``zero_insertion_filter_reference`` places each grid value on an otherwise
  zero pixel canvas and convolves with the Gaussian kernel. For integral
  upsampling factors this is pointwise identical to ``gaussian_upsample``
  (the smoothing-filter view of the same operation); it is a test oracle,
  not a production path.

The default anchor maps cell (i, j) to pixel ((w/u)*i, (h/v)*j), i.e. mass
sits at cell top-left corners; ``center_offset=0.5`` anchors at cell centers.
Pixel indices are 0-based.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .engines import Engine, SaliencyGrid
from .tensorio import as_tensor


class UpsamplerKind(str, Enum):
    BILINEAR = "bilinear"
    GAUSSIAN = "gaussian"


@dataclass
class SaliencyMap:
    values: np.ndarray  # (w, h)
    class_id: int
    source_engine: Engine | None
    upsampler: UpsamplerKind
    sigma_x: float | None = None
    sigma_y: float | None = None

    def __post_init__(self):
        self.values = as_tensor(self.values)
        if self.values.ndim != 2:
            raise ValueError(f"saliency map must be rank-2, got rank {self.values.ndim}")

    @property
    def w(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> int:
        return self.values.shape[1]


def _grid_values(grid) -> np.ndarray:
    vals = grid.values if isinstance(grid, SaliencyGrid) else as_tensor(grid)
    if vals.ndim != 2 or vals.size == 0:
        raise ValueError("grid must be a nonempty rank-2 array")
    return vals


def _grid_meta(grid):
    if isinstance(grid, SaliencyGrid):
        return grid.class_id, grid.engine
    return -1, None


def _check_dims(u, v, w, h):
    if w < u or h < v:
        raise ValueError(f"grid {u}x{v} is larger than target {w}x{h}")


def _gaussian_profile(n_out: int, n_in: int, sigma: float, offset: float) -> np.ndarray:
    # profile[x, i] = exp(-(x - (n_out/n_in)*(i+offset))^2 / (2 sigma^2))
    x = np.arange(n_out, dtype=np.float64)[:, None]
    centers = (n_out / n_in) * (np.arange(n_in, dtype=np.float64) + offset)[None, :]
    return np.exp(-((x - centers) ** 2) / (2.0 * sigma * sigma))


def gaussian_upsample(grid, w: int, h: int, sigma_x: float, sigma_y: float,
                      center_offset: float = 0.0) -> SaliencyMap:
    """Superpose per-cell Gaussians onto a w x h pixel map (separable path)."""
    vals = _grid_values(grid)
    u, v = vals.shape
    if sigma_x <= 0 or sigma_y <= 0:
        raise ValueError(f"sigmas must be positive, got ({sigma_x}, {sigma_y})")
    _check_dims(u, v, w, h)
    gx = _gaussian_profile(w, u, sigma_x, center_offset)  # (w, u)
    gy = _gaussian_profile(h, v, sigma_y, center_offset)  # (h, v)
    out = gx @ vals @ gy.T
    class_id, engine = _grid_meta(grid)
    return SaliencyMap(values=out, class_id=class_id, source_engine=engine,
                       upsampler=UpsamplerKind.GAUSSIAN, sigma_x=sigma_x, sigma_y=sigma_y)


def gaussian_upsample_direct(grid, w: int, h: int, sigma_x: float, sigma_y: float,
                             center_offset: float = 0.0) -> np.ndarray:
    """Direct evaluation of the quadruple sum, no separable factorization.

    Reference path: builds the full (w, h, u, v) exponent tensor and contracts
    it against the grid. Kept for oracle comparisons; quadratic memory.
    """
    vals = _grid_values(grid)
    u, v = vals.shape
    if sigma_x <= 0 or sigma_y <= 0:
        raise ValueError(f"sigmas must be positive, got ({sigma_x}, {sigma_y})")
    _check_dims(u, v, w, h)
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    cx = (w / u) * (np.arange(u, dtype=np.float64) + center_offset)
    cy = (h / v) * (np.arange(v, dtype=np.float64) + center_offset)
    ex = (xs[:, None] - cx[None, :]) ** 2 / (2.0 * sigma_x * sigma_x)  # (w, u)
    ey = (ys[:, None] - cy[None, :]) ** 2 / (2.0 * sigma_y * sigma_y)  # (h, v)
    kernel = np.exp(-(ex[:, None, :, None] + ey[None, :, None, :]))   # (w, h, u, v)
    return np.einsum("xyij,ij->xy", kernel, vals)


def bilinear_upsample(grid, w: int, h: int) -> SaliencyMap:
    """Align-corners bilinear interpolation onto a w x h pixel map."""
    vals = _grid_values(grid)
    u, v = vals.shape
    _check_dims(u, v, w, h)
    out = _axis_lerp(_axis_lerp(vals, w, axis=0), h, axis=1)
    class_id, engine = _grid_meta(grid)
    return SaliencyMap(values=out, class_id=class_id, source_engine=engine,
                       upsampler=UpsamplerKind.BILINEAR)


def _axis_lerp(vals: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    vals = np.moveaxis(vals, axis, 0)
    n_in = vals.shape[0]
    if n_in == 1:
        out = np.broadcast_to(vals, (n_out,) + vals.shape[1:]).copy()
    elif n_out == 1:
        out = vals[:1].copy()
    else:
        pos = np.arange(n_out, dtype=np.float64) * (n_in - 1) / (n_out - 1)
        lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
        frac = (pos - lo)[:, None] if vals.ndim > 1 else pos - lo
        out = vals[lo] * (1.0 - frac) + vals[lo + 1] * frac
    return np.moveaxis(out, 0, axis)


def zero_insertion_filter_reference(grid, w: int, h: int, sigma_x: float,
                                    sigma_y: float) -> SaliencyMap:
    """Zero-insert the grid onto the pixel canvas, then Gaussian-filter it.

    Requires integral upsampling factors (w divisible by u, h by v). Test
    oracle for ``gaussian_upsample`` with ``center_offset=0``.
    """
    vals = _grid_values(grid)
    u, v = vals.shape
    if sigma_x <= 0 or sigma_y <= 0:
        raise ValueError(f"sigmas must be positive, got ({sigma_x}, {sigma_y})")
    _check_dims(u, v, w, h)
    if w % u != 0 or h % v != 0:
        raise ValueError(f"non-integral upsampling factor: {u}x{v} -> {w}x{h}")
    fx, fy = w // u, h // v
    dx = np.arange(-(w - 1), w, dtype=np.float64)
    dy = np.arange(-(h - 1), h, dtype=np.float64)
    expo = dx[:, None] ** 2 / (2.0 * sigma_x * sigma_x) + dy[None, :] ** 2 / (2.0 * sigma_y * sigma_y)
    kernel = np.exp(-expo)  # (2w-1, 2h-1), unnormalized
    out = np.zeros((w, h))
    for i in range(u):
        px = i * fx
        for j in range(v):
            py = j * fy
            out += vals[i, j] * kernel[w - 1 - px : 2 * w - 1 - px, h - 1 - py : 2 * h - 1 - py]
    class_id, engine = _grid_meta(grid)
    return SaliencyMap(values=out, class_id=class_id, source_engine=engine,
                       upsampler=UpsamplerKind.GAUSSIAN, sigma_x=sigma_x, sigma_y=sigma_y)


def upsample(grid, kind, w: int, h: int, sigma_x: float | None = None,
             sigma_y: float | None = None, center_offset: float = 0.0) -> SaliencyMap:
    """Dispatch helper used by the evaluation harness and the CLI."""
    kind = UpsamplerKind(kind)
    if kind is UpsamplerKind.BILINEAR:
        return bilinear_upsample(grid, w, h)
    if sigma_x is None or sigma_y is None:
        raise ValueError("gaussian upsampling needs sigma_x and sigma_y")
    return gaussian_upsample(grid, w, h, sigma_x, sigma_y, center_offset)
