"""Camera-motion flow simulation.

A flow is the sum of four continuous components (x/y translation with a
linear acceleration term, radial z translation and in-plane rotation), which
is rescaled into the label domain if needed, rounded to integers and folded
so that horizontal motion is nonnegative.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .imgcore import FlowDomain, FlowFieldF, MotionFlow

Range = tuple[float, float]


def _pixel_grid(size):
    h, w = size
    jj, ii = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return ii, jj


def _check_center(size, center, name):
    h, w = size
    ci, cj = center
    if not (0 <= ci <= w - 1 and 0 <= cj <= h - 1):
        raise ValueError(f"{name} {center} lies outside a {h}x{w} image")


def sim_translation_x(size, center, t, r) -> FlowFieldF:
    """``U = (i - i_c) * r + t``, ``V = 0``."""
    _check_center(size, center, "translation center")
    ii, _ = _pixel_grid(size)
    return FlowFieldF((ii - center[0]) * r + t, np.zeros(size))


def sim_translation_y(size, center, t, r) -> FlowFieldF:
    """``U = 0``, ``V = (j - j_c) * r + t``."""
    _check_center(size, center, "translation center")
    _, jj = _pixel_grid(size)
    return FlowFieldF(np.zeros(size), (jj - center[1]) * r + t)


def sim_translation_z(size, vanishing_point, t, zeta) -> FlowFieldF:
    """Radial field ``t * d**zeta * (offset from the vanishing point)``."""
    _check_center(size, vanishing_point, "vanishing point")
    ii, jj = _pixel_grid(size)
    di = ii - vanishing_point[0]
    dj = jj - vanishing_point[1]
    scale = t * np.hypot(di, dj) ** zeta
    return FlowFieldF(scale * di, scale * dj)


def sim_rotation_z(size, center, omega) -> FlowFieldF:
    """In-plane rotation about ``center`` by angle ``omega`` over the exposure.

    Each vector has length ``2 d tan(omega / 2)`` and is perpendicular to the
    radius.  ``omega > 0`` turns clockwise as displayed (rows grow downward).
    """
    if not abs(omega) < math.pi:
        raise ValueError(f"|omega| must be < pi, got {omega}")
    _check_center(size, center, "rotation center")
    ii, jj = _pixel_grid(size)
    di = ii - center[0]
    dj = jj - center[1]
    # s / d * (-dj, di): length s, perpendicular to (di, dj); d cancels
    k = 2.0 * math.tan(omega / 2.0)
    return FlowFieldF(-k * dj, k * di)


def fold(u, v):
    """Map a motion vector (or arrays of them) to the canonical half-domain.

    ``(u, v) -> (-u, -v)`` when ``u < 0``; when ``u == 0`` the vertical
    component is made nonnegative, since ``(0, v)`` and ``(0, -v)`` blur
    identically.
    """
    u = np.asarray(u)
    v = np.asarray(v)
    flip = (u < 0) | ((u == 0) & (v < 0))
    fu = np.where(flip, -u, u)
    fv = np.where(flip, -v, v)
    if fu.ndim == 0:
        return fu.item(), fv.item()
    return fu, fv


@dataclass
class SimConfig:
    """Uniform sampling ranges for the flow components.

    ``None`` for ``t_tx``/``t_ty`` means ``(-u_max/2, u_max/2)`` and
    ``(-v_max/2, v_max/2)`` of the domain in use.  Centers are drawn
    uniformly from the image with ``center_margin`` trimmed from each side.
    """

    t_tx: Range | None = None
    r_tx: Range = (-0.005, 0.005)
    t_ty: Range | None = None
    r_ty: Range = (-0.005, 0.005)
    t_tz: Range = (-0.005, 0.005)
    zeta: Range = (0.8, 1.2)
    omega: Range = (-0.05, 0.05)
    center_margin: float = 0.2
    enable_tx: bool = True
    enable_ty: bool = True
    enable_tz: bool = True
    enable_rz: bool = True
    p_zero: float = 0.02
    seed: int = 0

    def __post_init__(self):
        for name in ("t_tx", "r_tx", "t_ty", "r_ty", "t_tz", "zeta", "omega"):
            rng = getattr(self, name)
            if rng is None:
                continue
            if len(rng) != 2:
                raise ValueError(f"{name} must be a (lo, hi) pair")
            lo, hi = float(rng[0]), float(rng[1])
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise ValueError(f"{name} range must satisfy lo <= hi, got {rng}")
            setattr(self, name, (lo, hi))
        if max(abs(self.omega[0]), abs(self.omega[1])) >= math.pi:
            raise ValueError("omega range must stay inside (-pi, pi)")
        if not 0 <= self.center_margin < 0.5:
            raise ValueError("center_margin must be in [0, 0.5)")
        if not 0 <= self.p_zero <= 1:
            raise ValueError("p_zero must be a probability")

    def translation_ranges(self, dom: FlowDomain) -> tuple[Range, Range]:
        tx = self.t_tx if self.t_tx is not None else (-dom.u_max / 2, dom.u_max / 2)
        ty = self.t_ty if self.t_ty is not None else (-dom.v_max / 2, dom.v_max / 2)
        return tx, ty

    def validate_for(self, size, dom: FlowDomain) -> None:
        """Check the configuration against an image size and domain.

        The constant translation terms must fit the domain on their own;
        spatially growing terms are brought into range by rescaling each
        draw (see :func:`simulate_flow`).
        """
        h, w = size
        if h < 1 or w < 1:
            raise ValueError(f"invalid image size {size}")
        tx, ty = self.translation_ranges(dom)
        if max(abs(tx[0]), abs(tx[1])) > dom.u_max or max(abs(ty[0]), abs(ty[1])) > dom.v_max:
            raise ValueError(f"translation ranges {tx}, {ty} exceed domain {dom}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, val in d.items():
            if isinstance(val, tuple):
                d[k] = list(val)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown SimConfig keys: {sorted(unknown)}")
        kw = {k: (tuple(val) if isinstance(val, list) else val) for k, val in d.items()}
        return cls(**kw)


@dataclass
class SimParams:
    """One concrete draw of the simulation parameters."""

    size: tuple[int, int]
    zero: bool = False
    tx: dict | None = None
    ty: dict | None = None
    tz: dict | None = None
    rz: dict | None = None
    scale: float = 1.0

    def digest(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def draw_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Private generator stream for draw ``index`` of a run seeded with ``seed``."""
    return np.random.default_rng([int(seed) & (2**63 - 1), int(index)])


def sample_params(size, dom: FlowDomain, cfg: SimConfig, rng: np.random.Generator) -> SimParams:
    h, w = size
    params = SimParams(size=(int(h), int(w)))
    # fixed draw order keeps streams comparable across enable flags
    u = rng.uniform(size=16)
    if u[0] < cfg.p_zero:
        params.zero = True
        return params

    def pick(rng_, x):
        return rng_[0] + (rng_[1] - rng_[0]) * x

    m = cfg.center_margin

    def center(a, b):
        return (pick((m * (w - 1), (1 - m) * (w - 1)), a), pick((m * (h - 1), (1 - m) * (h - 1)), b))

    tx_range, ty_range = cfg.translation_ranges(dom)
    if cfg.enable_tx:
        params.tx = {"center": center(u[1], u[2]), "t": pick(tx_range, u[3]), "r": pick(cfg.r_tx, u[4])}
    if cfg.enable_ty:
        params.ty = {"center": center(u[5], u[6]), "t": pick(ty_range, u[7]), "r": pick(cfg.r_ty, u[8])}
    if cfg.enable_tz:
        params.tz = {"center": center(u[9], u[10]), "t": pick(cfg.t_tz, u[11]), "zeta": pick(cfg.zeta, u[12])}
    if cfg.enable_rz:
        params.rz = {"center": center(u[13], u[14]), "omega": pick(cfg.omega, u[15])}
    return params


def render_params(params: SimParams) -> FlowFieldF:
    """Sum the enabled components in the continuous domain (before rescaling)."""
    size = params.size
    total = FlowFieldF.zeros(*size)
    if params.zero:
        return total
    if params.tx is not None:
        total = total + sim_translation_x(size, params.tx["center"], params.tx["t"], params.tx["r"])
    if params.ty is not None:
        total = total + sim_translation_y(size, params.ty["center"], params.ty["t"], params.ty["r"])
    if params.tz is not None:
        total = total + sim_translation_z(size, params.tz["center"], params.tz["t"], params.tz["zeta"])
    if params.rz is not None:
        total = total + sim_rotation_z(size, params.rz["center"], params.rz["omega"])
    return total


def fit_scale(field: FlowFieldF, dom: FlowDomain) -> float:
    """Largest factor ``<= 1`` that brings the field inside the symmetric domain box."""
    scale = 1.0
    mu = np.abs(field.u).max()
    mv = np.abs(field.v).max()
    if mu > dom.u_max:
        scale = min(scale, dom.u_max / mu)
    if mv > dom.v_max:
        scale = min(scale, dom.v_max / mv)
    return scale


def discretize(field: FlowFieldF, dom: FlowDomain) -> MotionFlow:
    """Round to integers, clamp to the symmetric box, then fold."""
    u = np.clip(np.rint(field.u), -dom.u_max, dom.u_max).astype(np.int64)
    v = np.clip(np.rint(field.v), -dom.v_max, dom.v_max).astype(np.int64)
    fu, fv = fold(u, v)
    return MotionFlow(fu, fv)


def simulate_field(size, dom: FlowDomain, cfg: SimConfig, rng) -> tuple[FlowFieldF, SimParams]:
    """Continuous, rescaled flow for one draw, with the parameters used."""
    params = sample_params(size, dom, cfg, rng)
    field = render_params(params)
    params.scale = fit_scale(field, dom)
    if params.scale != 1.0:
        field = field.scaled(params.scale)
    return field, params


def simulate_flow(size, dom: FlowDomain, cfg: SimConfig, rng=None) -> MotionFlow:
    """Draw a motion flow of ``size = (H, W)`` inside ``dom``.

    ``rng`` is a ``numpy`` Generator; when omitted the stream is derived from
    ``cfg.seed``.
    """
    flow, _ = simulate_flow_with_params(size, dom, cfg, rng)
    return flow


def simulate_flow_with_params(size, dom, cfg, rng=None) -> tuple[MotionFlow, SimParams]:
    cfg.validate_for(size, dom)
    if rng is None:
        rng = draw_rng(cfg.seed)
    field, params = simulate_field(size, dom, cfg, rng)
    return discretize(field, dom), params
