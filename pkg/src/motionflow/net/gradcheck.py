"""Central finite-difference checks of analytic gradients.

ReLU and max-pool make the loss piecewise smooth.  A central difference
whose two probes fall in different pieces does not estimate the derivative,
so callers may pass a ``pattern`` function (activation signature) and such
entries are skipped and counted instead of compared.

Relative errors use ``max(|analytic|, |numeric|, floor)`` as denominator.
Central differences of a loss ``L`` carry round-off of about
``eps * |L| / h``; :func:`roundoff_floor` turns that into the floor so that
gradients below the oracle's resolution are judged in absolute terms.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def relative_error(analytic, numeric, floor=1e-8):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def roundoff_floor(loss, h=1e-5, tol=1e-5):
    return 4 * np.finfo(np.float64).eps * max(1.0, abs(loss)) / h / tol


@dataclass
class CheckResult:
    max_rel_error: float
    checked: int
    skipped: int


def check_function(f, x, analytic, h=1e-5, indices=None, pattern=None, floor=1e-8) -> CheckResult:
    """Compare ``analytic`` with central differences of scalar ``f()`` in ``x``.

    ``x`` is perturbed in place and restored.
    """
    flat = x.reshape(-1)
    ga = np.asarray(analytic).reshape(-1)
    idx = range(flat.size) if indices is None else indices
    errs, skipped = [], 0
    base = pattern() if pattern is not None else None
    for k in idx:
        old = flat[k]
        flat[k] = old + h
        fp = f()
        sp = pattern() if pattern is not None else None
        flat[k] = old - h
        fm = f()
        sm = pattern() if pattern is not None else None
        flat[k] = old
        if pattern is not None and not (sp == base == sm):
            skipped += 1
            continue
        errs.append(relative_error(ga[k], (fp - fm) / (2 * h), floor))
    return CheckResult(float(max(errs)) if errs else 0.0, len(errs), skipped)


def check_network(params, y, flow, mode="mean", h=1e-5, per_tensor=None, seed=0):
    """Per-tensor :class:`CheckResult` for a float64 network.

    With ``per_tensor`` set, that many random entries of each tensor are
    checked instead of all of them.
    """
    from .model import activation_pattern, loss_and_grad

    if params.dtype != np.float64:
        raise ValueError("gradient checks need float64 parameters")
    loss, grads = loss_and_grad(params, y, flow, mode)
    floor = roundoff_floor(loss, h)
    rng = np.random.default_rng(seed)
    f = lambda: loss_and_grad(params, y, flow, mode)[0]  # noqa: E731
    pat = lambda: activation_pattern(params, y)  # noqa: E731
    report = {}
    for (n, key, p), (_, _, g) in zip(params.flat(), grads.flat()):
        if per_tensor is None or p.size <= per_tensor:
            idx = None
        else:
            idx = rng.choice(p.size, per_tensor, replace=False)
        report[(n, key)] = check_function(f, p, g, h=h, indices=idx, pattern=pat, floor=floor)
    return report
