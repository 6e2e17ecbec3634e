"""Heatmap coloring and PNG output.

The ``jet_like`` colormap is a fixed 5-anchor piecewise-linear table so
renders reproduce bit-exactly everywhere:

    0.00 -> (  0,   0, 255)
    0.25 -> (  0, 255, 255)
    0.50 -> (  0, 255,   0)
    0.75 -> (255, 255,   0)
    1.00 -> (255,   0,   0)

Maps are min-max normalized before coloring, so rendering is invariant to
positive rescaling of the map.
"""

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .tensorio import as_tensor, minmax_normalize

JET_LIKE_ANCHORS = (
    (0.00, (0.0, 0.0, 255.0)),
    (0.25, (0.0, 255.0, 255.0)),
    (0.50, (0.0, 255.0, 0.0)),
    (0.75, (255.0, 255.0, 0.0)),
    (1.00, (255.0, 0.0, 0.0)),
)

COLORMAPS = ("jet_like", "grayscale")


@dataclass
class RenderSpec:
    colormap: str = "jet_like"
    overlay_alpha: float = 0.5
    output_path: str | None = None

    def __post_init__(self):
        if self.colormap not in COLORMAPS:
            raise ValueError(f"unknown colormap {self.colormap!r}")
        if not (0.0 <= self.overlay_alpha <= 1.0):
            raise ValueError(f"overlay_alpha must be in [0, 1], got {self.overlay_alpha}")


def apply_colormap(norm_values, colormap: str = "jet_like") -> np.ndarray:
    """Map values in [0, 1] to float RGB in [0, 255]."""
    vals = as_tensor(norm_values)
    if colormap == "grayscale":
        g = vals * 255.0
        return np.stack([g, g, g], axis=-1)
    stops = np.array([a[0] for a in JET_LIKE_ANCHORS])
    colors = np.array([a[1] for a in JET_LIKE_ANCHORS])
    out = np.empty(vals.shape + (3,))
    for ch in range(3):
        out[..., ch] = np.interp(vals, stops, colors[:, ch])
    return out


def render_heatmap(saliency, image=None, spec: RenderSpec | None = None) -> np.ndarray:
    """Color a saliency map, optionally alpha-blend it over an image.

    Returns the uint8 RGB array (rows, cols, 3) and writes a PNG when
    ``spec.output_path`` is set. Blend: out = alpha*heat + (1-alpha)*image.
    """
    spec = spec or RenderSpec()
    vals = saliency.values if hasattr(saliency, "values") else as_tensor(saliency)
    heat = apply_colormap(minmax_normalize(vals), spec.colormap)
    if image is not None:
        img = as_tensor(image)
        if img.ndim != 3 or img.shape[1:] != vals.shape:
            raise ValueError(f"image {img.shape} does not match map {vals.shape}")
        if img.shape[0] == 1:
            base = np.repeat(img, 3, axis=0)
        elif img.shape[0] == 3:
            base = img
        else:
            raise ValueError(f"image must have 1 or 3 channels, got {img.shape[0]}")
        base = np.moveaxis(base, 0, -1) * 255.0
        out = spec.overlay_alpha * heat + (1.0 - spec.overlay_alpha) * base
    else:
        out = heat
    rgb = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    if spec.output_path:
        Image.fromarray(rgb, mode="RGB").save(spec.output_path, format="PNG")
    return rgb
