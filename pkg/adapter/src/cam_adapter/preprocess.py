"""Image decoding and preprocessing, with the settings recorded per run."""

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .models import ModelBundle


def preprocess_settings(bundle: ModelBundle) -> dict:
    return {
        "resize": bundle.input_size + bundle.input_size // 8,
        "center_crop": bundle.input_size,
        "mean": list(bundle.mean),
        "std": list(bundle.std),
        "layout": "channels, rows, cols",
    }


def load_image(path, bundle: ModelBundle) -> torch.Tensor:
    """Decode, resize, center-crop, scale to [0,1], and normalize one image.

    ``.npy`` inputs are treated as already-preprocessed tensors (the masked
    images the evaluation harness emits come back through this path).
    """
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path)
        if arr.ndim != 3:
            raise ValueError(f"{path}: expected a rank-3 tensor, got rank {arr.ndim}")
        return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))
    size = bundle.input_size
    resize = size + size // 8
    with Image.open(path) as im:
        im = im.convert("RGB")
        scale = resize / min(im.size)
        im = im.resize((max(1, round(im.size[0] * scale)),
                        max(1, round(im.size[1] * scale))), Image.BILINEAR)
        left = (im.size[0] - size) // 2
        top = (im.size[1] - size) // 2
        im = im.crop((left, top, left + size, top + size))
        arr = np.asarray(im, dtype=np.float32) / 255.0
    arr = np.moveaxis(arr, -1, 0)  # HWC -> CHW
    mean = np.asarray(bundle.mean, dtype=np.float32)[:, None, None]
    std = np.asarray(bundle.std, dtype=np.float32)[:, None, None]
    return torch.from_numpy((arr - mean) / std)
