import numpy as np
import pytest
from PIL import Image


@pytest.fixture
def image_files(tmp_path):
    """Four small deterministic RGB test images on disk."""
    rng = np.random.default_rng(0)
    paths = []
    for i in range(4):
        arr = np.zeros((48, 48, 3), dtype=np.uint8)
        cy, cx = rng.integers(10, 38, size=2)
        ch = rng.integers(0, 3)
        ys, xs = np.mgrid[0:48, 0:48]
        blob = np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / 50.0)
        arr[..., ch] = (255 * blob).astype(np.uint8)
        arr[..., (ch + 1) % 3] = rng.integers(0, 40, size=(48, 48)).astype(np.uint8)
        p = tmp_path / f"img{i}.png"
        Image.fromarray(arr).save(p)
        paths.append(p)
    return paths
