"""Toy cover sources for desk-scale experiments."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

NATURAL_SOURCES = ("camera", "moon", "coins", "text", "page", "grass", "gravel", "brick",
                   "cell", "clock", "astronaut", "rocket", "coffee", "chelsea", "hubble_deep_field",
                   "immunohistochemistry")


def synthetic_covers(n: int, size: int = 64, seed: int = 0) -> list[np.ndarray]:
    """Textured 8-bit images: smooth shading, band-limited noise and hard edges."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    out = []
    for _ in range(n):
        img = 128 + 60 * (rng.uniform(-1, 1) * xx + rng.uniform(-1, 1) * yy - 0.5)
        sigma = rng.uniform(0.5, 4.0)
        noise = ndimage.gaussian_filter(rng.normal(0, 1, (size, size)), sigma)
        img += noise / (noise.std() + 1e-12) * rng.uniform(3, 40)
        for _ in range(rng.integers(0, 4)):
            r0, c0 = rng.integers(0, size, 2)
            r1, c1 = rng.integers(r0, size + 1), rng.integers(c0, size + 1)
            img[r0:r1, c0:c1] += rng.uniform(-50, 50)
        out.append(np.clip(np.round(img), 0, 255).astype(np.uint8))
    return out


def natural_patches(n: int, size: int = 64, seed: int = 0) -> list[np.ndarray]:
    """Random grayscale crops of the photographs bundled with scikit-image."""
    from skimage import data
    from skimage.color import rgb2gray

    sources = []
    for name in NATURAL_SOURCES:
        try:
            im = getattr(data, name)()
        except Exception:  # pragma: no cover - optional images needing downloads
            continue
        if im.ndim == 3:
            im = np.round(rgb2gray(im[..., :3]) * 255)
        im = np.asarray(im, dtype=np.float64)
        if min(im.shape) >= size:
            sources.append(im)
    if not sources:
        raise RuntimeError("no bundled scikit-image photographs available")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        im = sources[i % len(sources)]
        r = rng.integers(0, im.shape[0] - size + 1)
        c = rng.integers(0, im.shape[1] - size + 1)
        out.append(np.clip(im[r:r + size, c:c + size], 0, 255).astype(np.uint8))
    order = rng.permutation(n)
    return [out[i] for i in order]
