"""Parameters, inference, loss/gradient, SGD and the training loop."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..imgcore import DomainError, FlowDomain, MotionFlow, check_image
from . import layers as L
from .arch import ArchSpec

log = logging.getLogger(__name__)


class ShapeError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, message, params, history):
        super().__init__(message)
        self.params = params
        self.history = history


@dataclass
class NetworkParams:
    """Per-layer parameter dicts (``{"W": ..., "b": ...}``, empty for parameterless layers)."""

    arch: ArchSpec
    tensors: list[dict[str, np.ndarray]]

    @property
    def dtype(self):
        for t in self.tensors:
            for a in t.values():
                return a.dtype
        return np.dtype(np.float64)

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams(self.arch, [{k: a.astype(dtype) for k, a in t.items()} for t in self.tensors])

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.arch, [{k: a.copy() for k, a in t.items()} for t in self.tensors])

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams(self.arch, [{k: np.zeros_like(a) for k, a in t.items()} for t in self.tensors])

    def flat(self) -> list[tuple[int, str, np.ndarray]]:
        return [(n, k, a) for n, t in enumerate(self.tensors) for k, a in sorted(t.items())]

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for _, _, a in self.flat())

    def equals(self, other: "NetworkParams") -> bool:
        a, b = self.flat(), other.flat()
        return len(a) == len(b) and all(x[:2] == y[:2] and np.array_equal(x[2], y[2]) for x, y in zip(a, b))


@dataclass
class TrainConfig:
    lr: float = 1e-3
    momentum: float = 0.9
    epochs: int = 10
    batch_size: int = 1
    seed: int = 0
    loss_mode: str = "mean"
    lr_step: int = 0
    lr_gamma: float = 0.1
    clip_norm: float | None = None
    dtype: str = "float32"

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.loss_mode not in ("sum", "mean"):
            raise ValueError("loss_mode must be 'sum' or 'mean'")
        if self.lr_step < 0 or not 0 < self.lr_gamma <= 1:
            raise ValueError("lr_step must be >= 0 and lr_gamma in (0, 1]")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("clip_norm must be > 0 or None")

    @classmethod
    def paper(cls, **kw) -> "TrainConfig":
        """Full-scale reference settings: summed loss, lr 1e-9, step 2e5."""
        base = dict(lr=1e-9, momentum=0.9, loss_mode="sum", lr_step=200_000, epochs=65)
        base.update(kw)
        return cls(**base)


def init_params(arch: ArchSpec, seed: int = 0, dtype=np.float64) -> NetworkParams:
    """Fan-in scaled uniform conv weights, zero biases, bilinear upconvs."""
    rng = np.random.default_rng(seed)
    tensors = []
    for spec in arch.layers:
        t = {}
        if spec.kind == "conv" or (spec.kind == "skip" and spec.mode == "add"):
            k = spec.ksize if spec.kind == "conv" else 1
            fan_in = spec.cin * k * k
            bound = math.sqrt(6.0 / fan_in) if spec.relu else math.sqrt(3.0 / fan_in)
            t["W"] = rng.uniform(-bound, bound, size=(spec.cout, spec.cin, k, k)).astype(dtype)
            t["b"] = np.zeros(spec.cout, dtype=dtype)
        elif spec.kind == "upconv":
            t["W"] = np.repeat(L.bilinear_kernel(spec.factor)[None], spec.cin, axis=0).astype(dtype)
        tensors.append(t)
    return NetworkParams(arch, tensors)


def _to_chw(y, arch: ArchSpec, dtype) -> np.ndarray:
    img = check_image(y, "input image")
    if img.shape[2] != arch.in_channels:
        if img.shape[2] == 1:
            img = np.repeat(img, arch.in_channels, axis=2)
        else:
            raise ShapeError(f"network expects {arch.in_channels} channels, got {img.shape[2]}")
    h, w = img.shape[:2]
    s = arch.stride
    if h % s or w % s:
        raise ShapeError(f"input size {h}x{w} must be a multiple of {s} on both sides")
    # centred input
    return np.ascontiguousarray((img - 0.5).transpose(2, 0, 1), dtype=dtype)


def _forward_logits(params: NetworkParams, x: np.ndarray, keep_cache: bool):
    arch = params.arch
    acts = [x]
    caches = []
    a = x
    for spec, t in zip(arch.layers[:-1], params.tensors[:-1]):
        cache = None
        if spec.kind == "conv":
            a, cache = L.conv_forward(a, t["W"], t["b"], relu=spec.relu)
        elif spec.kind == "maxpool":
            a, cache = L.maxpool_forward(a)
        elif spec.kind == "upconv":
            a, cache = L.upconv_forward(a, t["W"], spec.factor)
        elif spec.kind == "skip":
            src = acts[spec.source + 1]
            if spec.mode == "add":
                proj, cache = L.conv_forward(src, t["W"], t["b"])
                a = a + proj
            else:
                a = np.concatenate([a, src], axis=0)
        caches.append(cache if keep_cache else None)
        acts.append(a)
    return a, acts, caches


def activation_pattern(params: NetworkParams, y) -> bytes:
    """Digest of every ReLU mask and max-pool argmax; constant where the net is smooth."""
    import hashlib

    x = _to_chw(y, params.arch, params.dtype)
    _, acts, caches = _forward_logits(params, x, keep_cache=True)
    h = hashlib.sha256()
    for spec, cache in zip(params.arch.layers, caches):
        if spec.kind == "conv" and spec.relu:
            h.update(np.packbits(cache[2] > 0).tobytes())
        elif spec.kind == "maxpool":
            h.update(cache[0].astype(np.uint8).tobytes())
    return h.digest()


def forward(params: NetworkParams, y) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel label probabilities ``Pu`` (H, W, n_u) and ``Pv`` (H, W, n_v)."""
    x = _to_chw(y, params.arch, params.dtype)
    logits, _, _ = _forward_logits(params, x, keep_cache=False)
    lpu, lpv = L.split_log_softmax(logits, params.arch.n_u)
    return np.exp(lpu).transpose(1, 2, 0), np.exp(lpv).transpose(1, 2, 0)


def _labels(m: MotionFlow, arch: ArchSpec, shape):
    if m.shape != shape:
        raise ShapeError(f"flow shape {m.shape} does not match image shape {shape}")
    dom = FlowDomain(arch.n_u - 1, (arch.n_v - 1) // 2)
    if not m.in_domain(dom):
        raise DomainError(f"flow labels outside the network's domain {dom}")
    return dom.label_of(m.u, m.v)


def loss_and_grad(params: NetworkParams, y, m: MotionFlow, mode: str = "mean"):
    """Cross-entropy of both heads and its exact gradient (same structure as ``params``)."""
    if mode not in ("sum", "mean"):
        raise ValueError("mode must be 'sum' or 'mean'")
    arch = params.arch
    x = _to_chw(y, arch, params.dtype)
    ul, vl = _labels(m, arch, x.shape[1:])
    logits, acts, caches = _forward_logits(params, x, keep_cache=True)
    loss, dlogits = L.split_cross_entropy(logits, ul, vl, arch.n_u, mean=(mode == "mean"))
    grads = params.zeros_like()
    dacts: list = [None] * (len(arch.layers))
    dacts[-1] = dlogits
    for n in range(len(arch.layers) - 2, -1, -1):
        spec, t, cache = arch.layers[n], params.tensors[n], caches[n]
        d = dacts[n + 1]
        if spec.kind == "conv":
            dx, dw, db = L.conv_backward(d, t["W"], cache, need_input_grad=n > 0)
            grads.tensors[n]["W"][...] = dw
            grads.tensors[n]["b"][...] = db
        elif spec.kind == "maxpool":
            dx = L.maxpool_backward(d, cache)
        elif spec.kind == "upconv":
            dx, dw = L.upconv_backward(d, t["W"], spec.factor, cache)
            grads.tensors[n]["W"][...] = dw
        elif spec.kind == "skip":
            if spec.mode == "add":
                dsrc, dw, db = L.conv_backward(d, t["W"], cache)
                grads.tensors[n]["W"][...] = dw
                grads.tensors[n]["b"][...] = db
                dx = d
            else:
                c_main = d.shape[0] - spec.cin
                dx, dsrc = d[:c_main], d[c_main:]
            s = spec.source + 1
            dacts[s] = dsrc if dacts[s] is None else dacts[s] + dsrc
        if dx is not None:
            dacts[n] = dx if dacts[n] is None else dacts[n] + dx
    return loss, grads


def sgd_step(params: NetworkParams, grads: NetworkParams, velocity: NetworkParams, lr: float, momentum: float):
    """``v <- momentum * v - lr * g``; ``p <- p + v``.  Returns new objects."""
    new_p = params.copy()
    new_v = velocity.copy()
    for (_, _, p), (_, _, g), (_, _, v) in zip(new_p.flat(), grads.flat(), new_v.flat()):
        v *= momentum
        v -= lr * g
        p += v
    return new_p, new_v


def _clip_inplace(grads, max_norm) -> float:
    """Rescale ``grads`` so their global L2 norm is at most ``max_norm``; returns the original norm."""
    norm = math.sqrt(sum(float(np.vdot(g, g)) for _, _, g in grads.flat()))
    if norm > max_norm:
        for _, _, g in grads.flat():
            g *= max_norm / norm
    return norm


def _sgd_inplace(params, grads, velocity, lr, momentum):
    for (_, _, p), (_, _, g), (_, _, v) in zip(params.flat(), grads.flat(), velocity.flat()):
        v *= momentum
        v -= lr * g
        p += v


@dataclass
class TrainResult:
    params: NetworkParams
    epoch_loss: list[float] = field(default_factory=list)
    step_loss: list[float] = field(default_factory=list)


def train(
    data,
    arch: ArchSpec,
    cfg: TrainConfig,
    params: NetworkParams | None = None,
    checkpoint_path=None,
    max_steps: int | None = None,
    time_budget: float | None = None,
    on_epoch: Callable[[int, float, NetworkParams], None] | None = None,
) -> TrainResult:
    """SGD with momentum over ``data``.

    ``data`` is a :class:`~motionflow.dataset.DatasetManifest` or a sequence
    of ``(image, MotionFlow)`` pairs.  Each epoch visits every pair once in a
    permutation seeded by ``(cfg.seed, epoch)``.  Gradients of
    ``cfg.batch_size`` consecutive samples are averaged per update.
    ``max_steps`` and ``time_budget`` (seconds) cut training short.
    """
    import time

    from ..dataset import DatasetManifest

    if isinstance(data, DatasetManifest):
        fetch = lambda k: data.load_record(data.records[k])  # noqa: E731
        n = len(data)
    else:
        pairs = list(data)
        fetch = pairs.__getitem__
        n = len(pairs)
    if n == 0:
        raise ValueError("training data is empty")
    dtype = np.dtype(cfg.dtype)
    params = init_params(arch, cfg.seed, dtype) if params is None else params.astype(dtype)
    velocity = params.zeros_like()
    result = TrainResult(params)
    last_good = params.copy()
    step = 0
    start = time.perf_counter()
    done = False
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        losses = []
        acc = None
        for pos, k in enumerate(order):
            y, m = fetch(k)
            loss, g = loss_and_grad(params, y, m, cfg.loss_mode)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at step {step}", last_good, result)
            losses.append(loss)
            result.step_loss.append(loss)
            if acc is None:
                acc = g
            else:
                for (_, _, a), (_, _, b) in zip(acc.flat(), g.flat()):
                    a += b
            if (pos + 1) % cfg.batch_size and pos + 1 < n:
                continue
            count = cfg.batch_size if (pos + 1) % cfg.batch_size == 0 else (pos + 1) % cfg.batch_size
            if count > 1:
                for _, _, a in acc.flat():
                    a /= count
            if cfg.clip_norm is not None:
                _clip_inplace(acc, cfg.clip_norm)
            lr = cfg.lr * (cfg.lr_gamma ** (step // cfg.lr_step) if cfg.lr_step else 1.0)
            _sgd_inplace(params, acc, velocity, lr, cfg.momentum)
            acc = None
            step += 1
            if not params.all_finite():
                raise TrainingDiverged(f"non-finite parameters at step {step}", last_good, result)
            if (max_steps is not None and step >= max_steps) or (
                time_budget is not None and time.perf_counter() - start > time_budget
            ):
                done = True
                break
        mean_loss = float(np.mean(losses))
        result.epoch_loss.append(mean_loss)
        last_good = params.copy()
        log.info("epoch %d: mean loss %.5f (%d steps)", epoch, mean_loss, step)
        if checkpoint_path is not None:
            from .checkpoint import save_checkpoint

            save_checkpoint(params, checkpoint_path)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss, params)
        if done:
            break
    result.params = params
    return result


def estimate_flow(params: NetworkParams, y, dom: FlowDomain | None = None) -> MotionFlow:
    """Per-pixel argmax of both heads; the lowest label wins ties.

    Inputs whose sides are not multiples of the network stride are
    replicate-padded and the estimate is cropped back.
    """
    arch = params.arch
    if dom is None:
        dom = FlowDomain(arch.n_u - 1, (arch.n_v - 1) // 2)
    if dom.n_u != arch.n_u or dom.n_v != arch.n_v:
        raise DomainError(f"domain {dom} does not match the network heads ({arch.n_u}, {arch.n_v})")
    img = check_image(y)
    h, w = img.shape[:2]
    s = arch.stride
    ph, pw = (-h) % s, (-w) % s
    if ph or pw:
        img = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="edge")
    x = _to_chw(img, arch, params.dtype)
    logits, _, _ = _forward_logits(params, x, keep_cache=False)
    # argmax returns the first maximum, i.e. the lowest label index
    ul = logits[: arch.n_u].argmax(axis=0)[:h, :w]
    vl = logits[arch.n_u :].argmax(axis=0)[:h, :w]
    u, v = dom.motion_of(ul, vl)
    return MotionFlow(u, v)

