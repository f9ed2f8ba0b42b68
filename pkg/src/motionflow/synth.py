"""Procedural sharp images for desk-scale experiments when no corpus is at hand."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .imgcore import save_image


def synthetic_image(
    height: int, width: int, rng: np.random.Generator, n_shapes: int = 14, texture: float = 0.0
) -> np.ndarray:
    """Piecewise-smooth RGB scene of random rectangles, discs and bars.

    Hard edges at many orientations make blur direction observable.
    """
    jj, ii = np.mgrid[0:height, 0:width].astype(np.float64)
    base = rng.uniform(0.2, 0.8, size=3)
    gi, gj = rng.uniform(-0.3, 0.3, size=2) / max(height, width)
    img = base[None, None, :] + (gi * ii + gj * jj)[:, :, None]
    for _ in range(n_shapes):
        color = rng.uniform(0.0, 1.0, size=3)
        kind = rng.integers(3)
        ci, cj = rng.uniform(0, width), rng.uniform(0, height)
        if kind == 0:
            hw, hh = rng.uniform(2, width / 4), rng.uniform(2, height / 4)
            mask = (np.abs(ii - ci) <= hw) & (np.abs(jj - cj) <= hh)
        elif kind == 1:
            rad = rng.uniform(2, min(height, width) / 5)
            mask = (ii - ci) ** 2 + (jj - cj) ** 2 <= rad**2
        else:
            ang = rng.uniform(0, np.pi)
            thick = rng.uniform(1, 3)
            dist = np.abs((ii - ci) * np.sin(ang) - (jj - cj) * np.cos(ang))
            along = np.abs((ii - ci) * np.cos(ang) + (jj - cj) * np.sin(ang))
            mask = (dist <= thick) & (along <= rng.uniform(5, max(height, width) / 2))
        img[mask] = color
    if texture > 0:
        # fine-grained grain so that blur is visible away from edges too
        grain = gaussian_filter(rng.standard_normal((height, width)), 0.7)
        img = img + texture * (grain / grain.std())[:, :, None]
    img = img + rng.normal(0, 0.01, size=img.shape)
    return np.clip(img, 0.0, 1.0)


DEFAULT_TEXTURE = 0.08


def write_corpus(
    out_dir, count: int, height: int, width: int, seed: int = 0, texture: float = DEFAULT_TEXTURE
) -> list[Path]:
    """Write ``count`` synthetic PNGs and return their paths.

    The default grain keeps small blurs detectable inside flat regions;
    ``texture=0`` gives purely piecewise-smooth scenes.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for k in range(count):
        p = out / f"synth_{k:04d}.png"
        save_image(synthetic_image(height, width, rng, texture=texture), p)
        paths.append(p)
    return paths
