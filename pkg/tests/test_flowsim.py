import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motionflow.blur import rasterize_kernel
from motionflow.flowsim import (
    SimConfig,
    discretize,
    draw_rng,
    fit_scale,
    fold,
    render_params,
    sample_params,
    sim_rotation_z,
    sim_translation_x,
    sim_translation_y,
    sim_translation_z,
    simulate_field,
    simulate_flow,
    simulate_flow_with_params,
)
from motionflow.imgcore import FlowDomain, FlowFieldF

DOM = FlowDomain(8, 8)


class TestGenerators:
    def test_tx_constant(self):
        f = sim_translation_x((5, 6), (2, 2), 5.0, 0.0)
        assert np.all(f.u == 5.0) and np.all(f.v == 0.0)

    def test_tx_acceleration(self):
        f = sim_translation_x((2, 120), (10, 0), 2.0, 0.01)
        assert f.u[0, 110] == pytest.approx(3.0, abs=1e-12)
        assert f.u[1, 10] == 2.0

    def test_ty_swaps_roles(self):
        f = sim_translation_y((120, 2), (0, 10), 2.0, 0.01)
        assert f.v[110, 1] == pytest.approx(3.0, abs=1e-12)
        assert np.all(f.u == 0)

    def test_tz_vanishing_point_and_value(self):
        f = sim_translation_z((30, 30), (5, 7), 0.01, 1.0)
        assert (f.u[7, 5], f.v[7, 5]) == (0.0, 0.0)
        assert f.u[7, 15] == pytest.approx(1.0, abs=1e-12)
        assert f.v[7, 15] == pytest.approx(0.0, abs=1e-12)

    def test_tz_radial_symmetry(self):
        c = (15, 15)
        f = sim_translation_z((31, 31), c, 0.003, 1.1)
        for a, b in [(7, 3), (10, 0), (4, 9)]:
            # rotating the offset by 90 degrees rotates the vector
            u1, v1 = f.u[c[1] + b, c[0] + a], f.v[c[1] + b, c[0] + a]
            u2, v2 = f.u[c[1] + a, c[0] - b], f.v[c[1] + a, c[0] - b]
            assert u2 == pytest.approx(-v1, abs=1e-12) and v2 == pytest.approx(u1, abs=1e-12)

    def test_rz_center_and_magnitude(self):
        f = sim_rotation_z((41, 41), (20, 20), 0.2)
        assert (f.u[20, 20], f.v[20, 20]) == (0.0, 0.0)
        s = math.hypot(f.u[20, 30], f.v[20, 30])
        assert s == pytest.approx(2 * 10 * math.tan(0.1), abs=1e-12)
        assert s == pytest.approx(2.00669, abs=1e-5)

    def test_rz_perpendicular(self):
        c = (13.3, 8.7)
        f = sim_rotation_z((24, 30), c, 0.4)
        jj, ii = np.mgrid[0:24, 0:30]
        di, dj = ii - c[0], jj - c[1]
        d = np.hypot(di, dj)
        s = np.hypot(f.u, f.v)
        assert np.all(np.abs(f.u * di + f.v * dj) <= 1e-9 * s * d + 1e-15)
        assert np.allclose(s, 2 * d * math.tan(0.2), atol=1e-12)

    def test_rz_clockwise_on_screen(self):
        # rows grow downward: a point right of the center moves down for omega > 0
        f = sim_rotation_z((21, 21), (10, 10), 0.3)
        assert f.v[10, 15] > 0 and abs(f.u[10, 15]) < 1e-12

    def test_rz_rejects_large_angle(self):
        with pytest.raises(ValueError):
            sim_rotation_z((4, 4), (1, 1), math.pi)

    def test_center_outside_rejected(self):
        with pytest.raises(ValueError):
            sim_translation_x((4, 4), (5, 0), 1, 0)

    @settings(max_examples=40, deadline=None)
    @given(
        st.floats(0, 19), st.floats(0, 14), st.floats(-4, 4), st.floats(-0.01, 0.01),
        st.floats(-0.01, 0.01), st.floats(0.8, 1.2), st.floats(-0.5, 0.5),
    )
    def test_closed_forms_every_pixel(self, ci, cj, t, r, tz, zeta, omega):
        size = (15, 20)
        fx = sim_translation_x(size, (ci, cj), t, r)
        fy = sim_translation_y(size, (ci, cj), t, r)
        fz = sim_translation_z(size, (ci, cj), tz, zeta)
        fr = sim_rotation_z(size, (ci, cj), omega)
        for j in range(size[0]):
            for i in range(size[1]):
                di, dj = i - ci, j - cj
                d = math.sqrt(di * di + dj * dj)
                assert abs(fx.u[j, i] - (di * r + t)) <= 1e-9 and fx.v[j, i] == 0
                assert abs(fy.v[j, i] - (dj * r + t)) <= 1e-9 and fy.u[j, i] == 0
                assert abs(fz.u[j, i] - tz * d**zeta * di) <= 1e-9
                assert abs(fz.v[j, i] - tz * d**zeta * dj) <= 1e-9
                # rotated radius, clockwise on screen
                s = 2 * d * math.tan(omega / 2)
                eu, ev = (-s * dj / d, s * di / d) if d > 0 else (0.0, 0.0)
                assert abs(fr.u[j, i] - eu) <= 1e-9 and abs(fr.v[j, i] - ev) <= 1e-9


class TestFold:
    @pytest.mark.parametrize("m, out", [((-3, 2), (3, -2)), ((4, -1), (4, -1)), ((0, -5), (0, 5)), ((0, 0), (0, 0))])
    def test_examples(self, m, out):
        assert fold(*m) == out

    def test_exhaustive_dom8(self):
        for u in range(-8, 9):
            for v in range(-8, 9):
                f = fold(u, v)
                assert fold(*f) == f
                assert f in {(u, v), (-u, -v)}
                assert DOM.contains(*f)
                assert rasterize_kernel(f).as_dict() == rasterize_kernel((u, v)).as_dict()

    def test_array_form(self):
        u, v = fold(np.array([-1, 0, 2]), np.array([3, -4, -5]))
        assert list(u) == [1, 0, 2] and list(v) == [-3, 4, -5]


class TestSimulate:
    def test_all_disabled_is_zero(self):
        cfg = SimConfig(enable_tx=False, enable_ty=False, enable_tz=False, enable_rz=False)
        f = simulate_flow((16, 16), DOM, cfg, draw_rng(0))
        assert np.all(f.u == 0) and np.all(f.v == 0)

    def test_rotation_only_centered(self):
        size = (33, 33)
        fld = sim_rotation_z(size, (16, 16), 0.3)
        fu, _ = fold(np.rint(fld.u), np.rint(fld.v))
        assert np.all(fu >= 0)
        assert abs(np.rint(fld.u).mean()) <= 0.5 and abs(np.rint(fld.v).mean()) <= 0.5
        assert abs(fld.u.mean()) < 1e-12 and abs(fld.v.mean()) < 1e-12

    def test_rotation_only_pipeline(self):
        cfg = SimConfig(enable_tx=False, enable_ty=False, enable_tz=False, p_zero=0.0, omega=(0.3, 0.3))
        f = simulate_flow((32, 32), DOM, cfg, draw_rng(4))
        assert np.all(f.u >= 0)

    def test_deterministic(self):
        a = simulate_flow((64, 64), DOM, SimConfig(), draw_rng(7, 3))
        b = simulate_flow((64, 64), DOM, SimConfig(), draw_rng(7, 3))
        assert a == b

    def test_default_rng_from_seed(self):
        assert simulate_flow((8, 8), DOM, SimConfig(seed=5)) == simulate_flow((8, 8), DOM, SimConfig(seed=5))

    def test_no_collisions_in_100_draws(self):
        seen = set()
        cfg = SimConfig(p_zero=0.0)
        for k in range(100):
            f = simulate_flow((64, 64), DOM, cfg, draw_rng(11, k))
            seen.add(f.u.tobytes() + f.v.tobytes())
        assert len(seen) == 100

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**40), st.integers(8, 80), st.integers(8, 80), st.integers(0, 8), st.integers(0, 8))
    def test_domain_closure(self, seed, h, w, um, vm):
        dom = FlowDomain(um, vm)
        cfg = SimConfig(t_tz=(-0.05, 0.05), omega=(-0.5, 0.5), r_tx=(-0.1, 0.1))
        f = simulate_flow((h, w), dom, cfg, draw_rng(seed))
        assert f.in_domain(dom)

    def test_zero_probability(self):
        cfg = SimConfig(p_zero=1.0)
        field, params = simulate_field((16, 16), DOM, cfg, draw_rng(1))
        assert params.zero and np.all(field.u == 0)

    def test_rescale_keeps_direction(self):
        field = FlowFieldF(np.array([[16.0, 4.0]]), np.array([[2.0, -8.0]]))
        s = fit_scale(field, DOM)
        assert s == 0.5
        assert fit_scale(FlowFieldF.zeros(2, 2), DOM) == 1.0

    def test_discretize_round_clamp_fold(self):
        field = FlowFieldF(np.array([[-2.6, 0.4, 9.7]]), np.array([[1.2, -3.5, 12.0]]))
        f = discretize(field, DOM)
        assert list(f.u[0]) == [3, 0, 8] and list(f.v[0]) == [-1, 4, 8]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**40))
    def test_lipschitz_bound(self, seed):
        size = (40, 48)
        params = sample_params(size, DOM, SimConfig(p_zero=0.0), draw_rng(seed))
        field = render_params(params)
        h, w = size
        r = abs(params.tx["r"]) + abs(params.ty["r"])
        tz, zeta = params.tz["t"], params.tz["zeta"]
        ci, cj = params.tz["center"]
        dmax = max(math.hypot(a, b) for a in (ci, w - 1 - ci) for b in (cj, h - 1 - cj))
        bound = r + abs(tz) * (1 + zeta) * dmax**zeta + 2 * abs(math.tan(params.rz["omega"] / 2))
        for comp in (field.u, field.v):
            assert np.abs(np.diff(comp, axis=0)).max() <= bound + 1e-9
            assert np.abs(np.diff(comp, axis=1)).max() <= bound + 1e-9

    def test_params_digest_stable(self):
        _, p1 = simulate_flow_with_params((16, 16), DOM, SimConfig(), draw_rng(3))
        _, p2 = simulate_flow_with_params((16, 16), DOM, SimConfig(), draw_rng(3))
        _, p3 = simulate_flow_with_params((16, 16), DOM, SimConfig(), draw_rng(4))
        assert p1.digest() == p2.digest() != p3.digest()


class TestSimConfig:
    def test_rejects_inverted_range(self):
        with pytest.raises(ValueError):
            SimConfig(zeta=(1.2, 0.8))

    def test_rejects_large_omega(self):
        with pytest.raises(ValueError):
            SimConfig(omega=(-4.0, 0.0))

    def test_translation_must_fit(self):
        with pytest.raises(ValueError):
            SimConfig(t_tx=(-10, 10)).validate_for((16, 16), DOM)

    def test_dict_roundtrip(self):
        cfg = SimConfig(t_tx=(-1, 2), p_zero=0.1)
        assert SimConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ValueError):
            SimConfig.from_dict({"bogus": 1})
