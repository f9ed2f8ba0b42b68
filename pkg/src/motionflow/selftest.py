"""Fast built-in checks run by ``motionflow selftest``."""
from __future__ import annotations

import numpy as np

from .blur import apply_adjoint, apply_blur, rasterize_kernel
from .deconv import cg_solve
from .flowsim import fold
from .imgcore import FlowDomain, MotionFlow
from .net.arch import ArchSpec, LayerSpec
from .net.gradcheck import check_network
from .net.model import init_params


def check_adjoint(trials=20, size=16, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        flow = MotionFlow(rng.integers(0, 9, (size, size)), rng.integers(-8, 9, (size, size)))
        x = rng.standard_normal((size, size))
        y = rng.standard_normal((size, size))
        lhs = np.vdot(apply_blur(x, flow), y)
        rhs = np.vdot(x, apply_adjoint(y, flow))
        worst = max(worst, abs(lhs - rhs) / (np.linalg.norm(x) * np.linalg.norm(y)))
    return worst <= 1e-6, f"adjoint identity, worst normalized gap {worst:.2e}"


def check_kernels(u_max=8, v_max=8):
    worst = 0.0
    sym = True
    for u in range(-u_max, u_max + 1):
        for v in range(-v_max, v_max + 1):
            k = rasterize_kernel((u, v))
            worst = max(worst, abs(k.w.sum() - 1.0))
            sym &= k.as_dict() == rasterize_kernel((-u, -v)).as_dict() == rasterize_kernel(fold(u, v)).as_dict()
    return worst <= 1e-6 and sym, f"kernel mass error {worst:.1e}, symmetry {'ok' if sym else 'broken'}"


def check_gradients(seed=0):
    dom = FlowDomain(1, 1)
    d = dom.n_labels
    L = LayerSpec
    arch = ArchSpec(
        (
            L("conv", ksize=3, cin=3, cout=4, relu=True),
            L("maxpool"),
            L("conv", ksize=3, cin=4, cout=d),
            L("upconv", cin=d, cout=d, factor=2),
            L("skip", cin=4, cout=d, source=0),
            L("softmax-split"),
        ),
        n_u=dom.n_u,
        n_v=dom.n_v,
    )
    rng = np.random.default_rng(seed)
    params = init_params(arch, seed)
    y = rng.uniform(size=(8, 8, 3))
    flow = MotionFlow(rng.integers(0, 2, (8, 8)), rng.integers(-1, 2, (8, 8)))
    report = check_network(params, y, flow)
    worst = max(r.max_rel_error for r in report.values())
    return worst <= 1e-5, f"finite-difference gradient check, worst relative error {worst:.1e}"


def check_cg(seed=0):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((8, 8))
    spd = a.T @ a + np.eye(8)
    b = rng.standard_normal(8)
    res = cg_solve(lambda x: spd @ x, b, tol=1e-14, max_iters=100)
    err = float(np.abs(res.x - np.linalg.solve(spd, b)).max())
    return err <= 1e-8, f"CG vs dense solve, max error {err:.1e}"


CHECKS = [check_adjoint, check_kernels, check_gradients, check_cg]


def run_selftest(echo=print) -> bool:
    ok = True
    for check in CHECKS:
        passed, msg = check()
        echo(f"[{'PASS' if passed else 'FAIL'}] {msg}")
        ok &= passed
    return ok
