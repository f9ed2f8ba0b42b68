"""Non-blind deconvolution under a heterogeneous blur.

Solves ``min_x ||y - H x||^2 + lam * sum |grad x|^alpha`` by half-quadratic
splitting: auxiliary gradients ``z`` are updated by generalized shrinkage and
``x`` by conjugate gradients on
``(H^T H + lam * beta * G^T G) x = H^T y + lam * beta * G^T z`` while
``beta`` grows geometrically.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .blur import BlurOperator
from .imgcore import MotionFlow

log = logging.getLogger(__name__)


class NumericalError(ArithmeticError):
    def __init__(self, message, iteration):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


@dataclass
class DeconvConfig:
    alpha: float = 2.0 / 3.0
    lam: float = 2e-3
    beta0: float = 1.0
    beta_mult: float = 2.0 * math.sqrt(2.0)
    beta_max: float = 256.0
    cg_tol: float = 1e-6
    cg_max_iters: int = 200
    channels: str = "per-channel"

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if not self.lam > 0:
            raise ValueError("lam must be > 0")
        if not self.beta0 > 0 or not self.beta_mult > 1 or self.beta_max < self.beta0:
            raise ValueError("need beta0 > 0, beta_mult > 1 and beta_max >= beta0")
        if not self.cg_tol > 0 or self.cg_max_iters < 1:
            raise ValueError("cg_tol must be > 0 and cg_max_iters >= 1")
        if self.channels not in ("per-channel", "luminance"):
            raise ValueError("channels must be 'per-channel' or 'luminance'")

    def betas(self) -> list[float]:
        out, b = [], self.beta0
        while b <= self.beta_max * (1 + 1e-12):
            out.append(b)
            b *= self.beta_mult
        return out


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residuals: list[float] = field(default_factory=list)


def cg_solve(op: Callable[[np.ndarray], np.ndarray], b, tol=1e-6, max_iters=200, x0=None) -> CGResult:
    """Conjugate gradients for a symmetric positive definite ``op``.

    Stops when ``||b - op(x)|| <= tol * ||b||``.  ``residuals`` holds the
    relative residual norm before the first and after every iteration.
    """
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    bnorm = float(np.linalg.norm(b))
    if not math.isfinite(bnorm):
        raise NumericalError("non-finite right-hand side", 0)
    if bnorm == 0.0:
        return CGResult(np.zeros_like(b), 0, True, [0.0])
    r = b - op(x) if x0 is not None else b.copy()
    p = r.copy()
    rs = float(np.vdot(r, r))
    residuals = [math.sqrt(rs) / bnorm]
    if residuals[0] <= tol:
        return CGResult(x, 0, True, residuals)
    for it in range(1, max_iters + 1):
        ap = op(p)
        pap = float(np.vdot(p, ap))
        if not math.isfinite(pap):
            raise NumericalError("non-finite operator output", it)
        if pap <= 0:
            raise NumericalError(f"operator is not positive definite (p'Ap = {pap:g})", it)
        step = rs / pap
        x += step * p
        r -= step * ap
        rs_new = float(np.vdot(r, r))
        if not math.isfinite(rs_new):
            raise NumericalError("non-finite residual", it)
        residuals.append(math.sqrt(rs_new) / bnorm)
        if residuals[-1] <= tol:
            return CGResult(x, it, True, residuals)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return CGResult(x, max_iters, False, residuals)


def grad(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences along columns and rows, zero at the far edge (replicate)."""
    gx = np.zeros_like(x)
    gy = np.zeros_like(x)
    gx[:, :-1] = x[:, 1:] - x[:, :-1]
    gy[:-1, :] = x[1:, :] - x[:-1, :]
    return gx, gy


def grad_adjoint(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    out = np.zeros_like(gx)
    out[:, :-1] -= gx[:, :-1]
    out[:, 1:] += gx[:, :-1]
    out[:-1, :] -= gy[:-1, :]
    out[1:, :] += gy[:-1, :]
    return out


def shrink_energy(z, w, beta, alpha):
    return np.abs(z) ** alpha + beta * (z - w) ** 2


def shrink(w, beta: float, alpha: float) -> np.ndarray:
    """Elementwise ``argmin_z |z|^alpha + beta (z - w)^2``.

    Closed forms for ``alpha`` in ``{1, 2/3, 1/2}``, Newton iterations
    otherwise.  The nonzero stationary candidate is kept only when it beats
    ``z = 0``.
    """
    w = np.asarray(w, dtype=np.float64)
    a = np.abs(w)
    if alpha == 1:
        return np.sign(w) * np.maximum(a - 1.0 / (2.0 * beta), 0.0)
    if math.isclose(alpha, 0.5):
        cand = _shrink_half(a, beta)
    elif math.isclose(alpha, 2.0 / 3.0):
        cand = _shrink_two_thirds(a, beta)
    else:
        cand = _shrink_newton(a, beta, alpha)
    cand = np.where(np.isfinite(cand) & (cand > 0), cand, 0.0)
    keep = shrink_energy(cand, a, beta, alpha) < beta * a**2
    return np.sign(w) * np.where(keep, cand, 0.0)


def _shrink_half(a, beta):
    # z = t^2 with t^3 - a t + 1/(4 beta) = 0; take the largest real root
    q = 1.0 / (4.0 * beta)
    three_real = 27.0 * q**2 < 4.0 * a**3
    safe = np.where(three_real, a, 1.0)
    arg = np.clip(-(3.0 * q / (2.0 * safe)) * np.sqrt(3.0 / safe), -1.0, 1.0)
    t = 2.0 * np.sqrt(safe / 3.0) * np.cos(np.arccos(arg) / 3.0)
    return np.where(three_real, t**2, 0.0)


def _shrink_two_thirds(a, beta):
    # z = t^3 with t^4 - a t + q = 0, q = 1/(3 beta), solved by Ferrari's method:
    # resolvent m^3 - q m - a^2/8 = 0 (largest root, positive), then
    # t = (sqrt(2m) + sqrt(2a / sqrt(2m) - 2m)) / 2
    q = 1.0 / (3.0 * beta)
    m = _largest_cubic_root(-q, -(a**2) / 8.0)
    s = np.sqrt(2.0 * np.maximum(m, 1e-300))
    disc = 2.0 * a / s - 2.0 * m
    t = (s + np.sqrt(np.maximum(disc, 0.0))) / 2.0
    return np.where((disc >= 0) & (a > 0), t**3, 0.0)


def _largest_cubic_root(p, q):
    """Largest real root of ``m^3 + p m + q = 0`` (``p``, ``q`` broadcastable)."""
    q = np.asarray(q, dtype=np.float64)
    p = np.broadcast_to(np.asarray(p, dtype=np.float64), q.shape)
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    one = disc >= 0
    sq = np.sqrt(np.where(one, disc, 0.0))
    cardano = np.cbrt(-q / 2.0 + sq) + np.cbrt(-q / 2.0 - sq)
    pn = np.where(one, -1.0, p)
    r = np.sqrt(-pn / 3.0)
    arg = np.clip((3.0 * q / (2.0 * pn)) * np.sqrt(-3.0 / pn), -1.0, 1.0)
    trig = 2.0 * r * np.cos(np.arccos(arg) / 3.0)
    return np.where(one, cardano, trig)


def _shrink_newton(a, beta, alpha, iters=40):
    # stationary point of z^alpha + beta (z - a)^2 on (0, a], approached from z = a
    z = a.copy()
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        for _ in range(iters):
            zs = np.maximum(z, 1e-300)
            g = alpha * zs ** (alpha - 1) + 2.0 * beta * (zs - a)
            h = alpha * (alpha - 1) * zs ** (alpha - 2) + 2.0 * beta
            ok = h > 0
            z = np.where(ok, zs - g / np.where(ok, h, 1.0), 0.0)
            z = np.clip(z, 0.0, a)
    return z


def objective(x, y, op: BlurOperator, lam: float, alpha: float) -> float:
    """``||y - H x||^2 + lam * sum(|gx|^alpha + |gy|^alpha)`` for one channel."""
    r = y - op.apply(x)
    gx, gy = grad(x)
    return float(np.sum(r**2) + lam * (np.sum(np.abs(gx) ** alpha) + np.sum(np.abs(gy) ** alpha)))


@dataclass
class DeblurResult:
    image: np.ndarray
    objectives: list[list[float]]
    cg_iterations: list[list[int]]
    backtracks: int = 0


def deblur_channel(y: np.ndarray, op: BlurOperator, cfg: DeconvConfig):
    """HQS on one ``(H, W)`` channel, started at ``x = y``.

    Each outer step is accepted only if it does not raise the objective;
    otherwise it is halved toward the previous iterate (at most 30 times,
    after which the previous iterate is kept).
    """
    lam, alpha = cfg.lam, cfg.alpha
    hty = op.adjoint(y)
    x = y.copy()
    obj = objective(x, y, op, lam, alpha)
    history, cg_its, backtracks = [obj], [], 0
    for beta in cfg.betas():
        gx, gy = grad(x)
        zx = shrink(gx, beta, alpha)
        zy = shrink(gy, beta, alpha)
        lb = lam * beta

        def normal_op(v, lb=lb):
            hv = op.apply(v)
            return op.adjoint(hv) + lb * grad_adjoint(*grad(v))

        rhs = hty + lb * grad_adjoint(zx, zy)
        res = cg_solve(normal_op, rhs, cfg.cg_tol, cfg.cg_max_iters, x0=x)
        cg_its.append(res.iterations)
        cand = res.x
        new_obj = objective(cand, y, op, lam, alpha)
        step = 1.0
        while new_obj > obj and step > 2**-30:
            step /= 2
            backtracks += 1
            cand = x + step * (res.x - x)
            new_obj = objective(cand, y, op, lam, alpha)
        if new_obj <= obj:
            x, obj = cand, new_obj
        history.append(obj)
    return x, history, cg_its, backtracks


def hqs_deblur(y, flow: MotionFlow, cfg: DeconvConfig | None = None) -> DeblurResult:
    cfg = cfg or DeconvConfig()
    img = np.asarray(y, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    if img.shape[:2] != flow.shape:
        raise ValueError(f"image shape {img.shape[:2]} does not match flow shape {flow.shape}")
    op = BlurOperator(flow)
    objectives, cg_iters, backtracks = [], [], 0
    if cfg.channels == "luminance" and img.shape[2] == 3:
        weights = np.array([0.299, 0.587, 0.114])
        lum = img @ weights
        est, hist, its, bt = deblur_channel(lum, op, cfg)
        out = img + (est - lum)[:, :, None]
        objectives.append(hist)
        cg_iters.append(its)
        backtracks += bt
    else:
        out = np.empty_like(img)
        for c in range(img.shape[2]):
            out[:, :, c], hist, its, bt = deblur_channel(img[:, :, c], op, cfg)
            objectives.append(hist)
            cg_iters.append(its)
            backtracks += bt
    out = np.clip(out, 0.0, 1.0)
    return DeblurResult(out[:, :, 0] if squeeze else out, objectives, cg_iters, backtracks)


def deblur(y, flow: MotionFlow, cfg: DeconvConfig | None = None) -> np.ndarray:
    """Recover the sharp image from ``y`` and its motion flow; output clamped to ``[0, 1]``."""
    return hqs_deblur(y, flow, cfg).image
