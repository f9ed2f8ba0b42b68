"""Per-pixel linear motion kernels and the heterogeneous blur operator.

The blurred image is ``Y(i, j) = sum_taps w * X(i + di, j + dj)`` where the
taps come from the line kernel of the motion vector at ``(i, j)``.  Borders
use replicate-edge padding.  The operator is assembled once per flow as a
sparse matrix whose rows are the per-pixel kernels, so the adjoint is its
exact transpose (a scatter with the same replicate clamping).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .imgcore import MotionFlow, check_image

MIN_SAMPLES = 64
SAMPLES_PER_PIXEL = 32
PRUNE_MASS = 1e-8


@dataclass(frozen=True, eq=False)
class LinearKernel:
    """Taps ``(di, dj, w)``; ``di`` is a column offset, ``dj`` a row offset."""

    di: np.ndarray
    dj: np.ndarray
    w: np.ndarray

    def __len__(self):
        return len(self.w)

    def taps(self) -> list[tuple[int, int, float]]:
        return [(int(a), int(b), float(c)) for a, b, c in zip(self.di, self.dj, self.w)]

    def as_dict(self) -> dict[tuple[int, int], float]:
        return {(int(a), int(b)): float(c) for a, b, c in zip(self.di, self.dj, self.w)}

    @property
    def radius(self) -> int:
        return int(max(np.abs(self.di).max(), np.abs(self.dj).max()))

    def to_array(self, radius: int | None = None) -> np.ndarray:
        """Dense ``(2r+1, 2r+1)`` PSF indexed ``[dj + r, di + r]``."""
        r = self.radius if radius is None else radius
        out = np.zeros((2 * r + 1, 2 * r + 1))
        np.add.at(out, (self.dj + r, self.di + r), self.w)
        return out


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"noise sigma must be >= 0, got {self.sigma}")


def rasterize_kernel(m) -> LinearKernel:
    """Rasterize the unit-mass line kernel of motion vector ``m = (u, v)``.

    The segment from ``-m/2`` to ``+m/2`` is sampled at
    ``S = max(64, 32 * ceil(|m|))`` cell-centred points and each point drops
    ``1/S`` mass into the pixel cell containing it.  Points are generated in
    mirrored pairs so the kernel is exactly centrally symmetric and
    ``rasterize_kernel(m) == rasterize_kernel(-m)``.
    """
    u, v = float(m[0]), float(m[1])
    return _rasterize(u, v)


@lru_cache(maxsize=8192)
def _rasterize(u: float, v: float) -> LinearKernel:
    # -0.0 and 0.0 must share a cache entry and a result
    u, v = u + 0.0, v + 0.0
    length = math.hypot(u, v)
    if length == 0.0:
        return _frozen_kernel(np.zeros(1, np.int64), np.zeros(1, np.int64), np.ones(1))
    n = max(MIN_SAMPLES, SAMPLES_PER_PIXEL * math.ceil(length))
    t = (np.arange(n // 2, n) + 0.5) / n - 0.5
    pi = np.rint(t * u).astype(np.int64)
    pj = np.rint(t * v).astype(np.int64)
    di = np.concatenate([pi, -pi])
    dj = np.concatenate([pj, -pj])
    span = int(np.abs(np.concatenate([di, dj])).max())
    side = 2 * span + 1
    code = (dj + span) * side + (di + span)
    mass = np.bincount(code, minlength=side * side) / n
    keep = np.flatnonzero(mass >= PRUNE_MASS)
    w = mass[keep]
    w = w / w.sum()
    return _frozen_kernel(keep % side - span, keep // side - span, w)


def _frozen_kernel(di, dj, w) -> LinearKernel:
    for a in (di, dj, w):
        a.setflags(write=False)
    return LinearKernel(di, dj, w)


def blur_matrix(flow: MotionFlow) -> sp.csr_matrix:
    """Sparse ``(HW, HW)`` matrix whose row ``p`` holds the kernel at pixel ``p``.

    Pixels are vectorized row-major (``p = j * W + i``).
    """
    h, w = flow.shape
    codes = np.stack([flow.u.ravel(), flow.v.ravel()], axis=1)
    uniq, inverse = np.unique(codes, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    jj, ii = np.divmod(np.arange(h * w), w)
    rows, cols, vals = [], [], []
    for k, (u, v) in enumerate(uniq):
        pix = np.flatnonzero(inverse == k)
        ker = rasterize_kernel((u, v))
        src_i = np.clip(ii[pix][:, None] + ker.di[None, :], 0, w - 1)
        src_j = np.clip(jj[pix][:, None] + ker.dj[None, :], 0, h - 1)
        rows.append(np.repeat(pix, len(ker)))
        cols.append((src_j * w + src_i).ravel())
        vals.append(np.tile(ker.w, len(pix)))
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(h * w, h * w)
    )
    return mat.tocsr()


class BlurOperator:
    """``H(K)`` for a fixed flow; reuse it when blurring repeatedly."""

    def __init__(self, flow: MotionFlow):
        self.flow = flow
        self.shape = flow.shape
        self.matrix = blur_matrix(flow)
        self._matrix_t = self.matrix.T.tocsr()

    def _mul(self, mat, img, name):
        arr = np.asarray(img, dtype=np.float64)
        if arr.shape[:2] != self.shape or arr.ndim not in (2, 3):
            raise ValueError(f"{name} shape {arr.shape} does not match flow shape {self.shape}")
        h, w = self.shape
        return (mat @ arr.reshape(h * w, -1)).reshape(arr.shape)

    def apply(self, x) -> np.ndarray:
        """``H x``; output has the shape of ``x``."""
        return self._mul(self.matrix, x, "image")

    def adjoint(self, y) -> np.ndarray:
        """``H^T y``; output has the shape of ``y``."""
        return self._mul(self._matrix_t, y, "image")


def apply_blur(x, flow: MotionFlow) -> np.ndarray:
    """Blur ``x`` (``(H, W)`` or ``(H, W, C)``) with the per-pixel kernels of ``flow``."""
    return BlurOperator(flow).apply(x)


def apply_adjoint(y, flow: MotionFlow) -> np.ndarray:
    return BlurOperator(flow).adjoint(y)


def add_noise(y, spec: NoiseSpec) -> np.ndarray:
    """Add seeded i.i.d. Gaussian noise and clamp to ``[0, 1]``."""
    arr = check_image(y)
    if spec.sigma == 0:
        return arr.copy()
    rng = np.random.default_rng(spec.seed)
    return np.clip(arr + rng.normal(0.0, spec.sigma, size=arr.shape), 0.0, 1.0)
