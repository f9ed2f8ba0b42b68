import colorsys
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motionflow.blur import NoiseSpec
from motionflow.dataset import DatasetManifest, build_dataset
from motionflow.evalkit import EvalReport, RecordMetrics, capped, colorize_flow, evaluate, flow_mse, psnr, ssim
from motionflow.flowsim import SimConfig
from motionflow.imgcore import FlowDomain, MotionFlow, write_flow
from motionflow.synth import write_corpus

from conftest import random_flow, uniform_flow


class TestFlowMSE:
    def test_identical(self, rng):
        f = random_flow(rng, 5, 6)
        assert flow_mse(f, f) == 0.0

    def test_constant(self):
        assert flow_mse(MotionFlow.zeros(4, 7), uniform_flow(4, 7, 3, 4)) == pytest.approx(12.5, abs=1e-6)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_pseudometric(self, seed):
        r = np.random.default_rng(seed)
        a, b, c = (random_flow(r, 6, 5) for _ in range(3))
        assert flow_mse(a, b) == flow_mse(b, a) >= 0
        # square root of the MSE is a scaled Euclidean distance
        assert math.sqrt(flow_mse(a, c)) <= math.sqrt(flow_mse(a, b)) + math.sqrt(flow_mse(b, c)) + 1e-12
        assert (flow_mse(a, b) == 0) == (a == b)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            flow_mse(MotionFlow.zeros(2, 2), MotionFlow.zeros(2, 3))


class TestPSNR:
    def test_identical_inf_and_cap(self, rng):
        a = rng.uniform(size=(4, 4, 3))
        assert psnr(a, a) == math.inf and capped(psnr(a, a)) == 99.0

    def test_zero_db(self):
        assert psnr(np.zeros((3, 3)), np.ones((3, 3))) == pytest.approx(0.0, abs=1e-6)

    def test_24_db(self):
        d = psnr(np.zeros((5, 5, 3)), np.full((5, 5, 3), 16 / 255))
        assert d == pytest.approx(20 * math.log10(255 / 16), abs=1e-6)
        assert d == pytest.approx(24.05, abs=5e-3)

    def test_strictly_decreasing_in_mse(self):
        vals = [psnr(np.zeros(10), np.full(10, e)) for e in (0.01, 0.02, 0.05, 0.3)]
        assert all(a > b for a, b in zip(vals, vals[1:]))


class TestSSIM:
    def test_identical(self, rng):
        a = rng.uniform(size=(32, 32, 3))
        assert abs(ssim(a, a) - 1.0) <= 1e-9

    def test_constant(self):
        a = np.full((16, 16), 0.4)
        assert abs(ssim(a, a) - 1.0) <= 1e-9

    def test_anticorrelated(self, rng):
        a = np.clip(0.5 + 0.2 * rng.standard_normal((48, 48)), 0, 1)
        assert ssim(a, 1 - a) < 0.3

    def test_symmetric_and_bounded(self, rng):
        a, b = rng.uniform(size=(2, 20, 20, 3))
        s = ssim(a, b)
        assert s == pytest.approx(ssim(b, a), abs=1e-12) and -1 <= s <= 1

    def test_matches_reference_implementation(self, rng):
        metrics = pytest.importorskip("skimage.metrics")
        a = rng.uniform(size=(40, 36))
        b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
        ref = metrics.structural_similarity(
            a, b, data_range=1.0, gaussian_weights=True, sigma=1.5, use_sample_covariance=False
        )
        assert ssim(a, b) == pytest.approx(ref, abs=1e-6)

    def test_matches_direct_window_sum(self, rng):
        # literal per-window SSIM over all valid 11x11 windows
        a = rng.uniform(size=(13, 12))
        b = rng.uniform(size=(13, 12))
        ax = np.arange(11) - 5.0
        g = np.exp(-(ax**2) / (2 * 1.5**2))
        w = np.outer(g, g)
        w /= w.sum()
        c1, c2 = 0.01**2, 0.03**2
        vals = []
        for r in range(3):
            for c in range(2):
                pa, pb = a[r : r + 11, c : c + 11], b[r : r + 11, c : c + 11]
                ma, mb = np.sum(w * pa), np.sum(w * pb)
                va = np.sum(w * (pa - ma) ** 2)
                vb = np.sum(w * (pb - mb) ** 2)
                cov = np.sum(w * (pa - ma) * (pb - mb))
                vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
        assert ssim(a, b) == pytest.approx(np.mean(vals), abs=1e-9)

    def test_too_small(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((10, 20)), np.zeros((10, 20)))


class TestColorize:
    def test_zero_is_white(self):
        assert np.array_equal(colorize_flow(MotionFlow.zeros(3, 3), FlowDomain(8, 8)), np.ones((3, 3, 3)))

    def test_opposite_vectors_complementary(self):
        dom = FlowDomain(8, 8)
        img = colorize_flow(MotionFlow(np.array([[3, -3]]), np.array([[2, -2]])), dom)
        h0, s0, _ = colorsys.rgb_to_hsv(*img[0, 0])
        h1, s1, _ = colorsys.rgb_to_hsv(*img[0, 1])
        assert (h1 - h0) % 1.0 == pytest.approx(0.5, abs=1e-9)
        assert s0 == pytest.approx(s1, abs=1e-12)

    def test_saturation_monotone(self):
        dom = FlowDomain(8, 8)
        for du, dv in [(1, 0), (0, 1), (1, 1), (2, -1)]:
            k = np.arange(0, 5)
            img = colorize_flow(MotionFlow(k[None] * du, k[None] * dv), dom)
            sat = [colorsys.rgb_to_hsv(*img[0, n])[1] for n in range(5)]
            assert all(a < b for a, b in zip(sat, sat[1:]))


@pytest.fixture(scope="module")
def small_ds(tmp_path_factory):
    root = tmp_path_factory.mktemp("ev")
    write_corpus(root / "c", 2, 32, 32, seed=1)
    return build_dataset(root / "c", root / "d", 2, FlowDomain(4, 4), SimConfig(seed=2), stride=16)


class TestEvaluate:
    def test_zero_records(self):
        empty = DatasetManifest([], FlowDomain(4, 4), 0.0, "")
        with pytest.raises(ValueError):
            evaluate(empty)

    def test_gt_flows_dir(self, small_ds, tmp_path):
        rep = evaluate(small_ds, small_ds.root / "flows", tmp_path / "out")
        assert len(rep.records) == 4
        for r in rep.records:
            assert r.flow_mse == 0.0 and r.psnr_db == pytest.approx(r.psnr_gt_db)
        assert len(list((tmp_path / "out").glob("*.png"))) == 8

    def test_means_match_records(self, small_ds):
        rep = evaluate(small_ds, lambda y: MotionFlow.zeros(*y.shape[:2]))
        for key, val in rep.means.items():
            vals = [getattr(r, key) for r in rep.records if getattr(r, key) is not None]
            assert abs(val - sum(vals) / len(vals)) <= 1e-12

    def test_gt_dominates_zero_estimate(self, small_ds):
        rep = evaluate(small_ds, lambda y: MotionFlow.zeros(*y.shape[:2]))
        assert rep.means["psnr_gt_db"] >= rep.means["psnr_db"]

    def test_missing_flagged(self, small_ds, tmp_path):
        (tmp_path / "flows").mkdir()
        first = small_ds.records[1]
        _, gt = small_ds.load_record(first)
        write_flow(gt, tmp_path / "flows" / first.flow_path.split("/")[-1])
        rep = evaluate(small_ds, tmp_path / "flows")
        flagged = [r for r in rep.records if r.missing]
        assert len(flagged) == 3 and rep.to_dict()["n_missing"] == 3

    def test_report_json(self, small_ds, tmp_path):
        rep = evaluate(small_ds, limit=1)
        rep.save(tmp_path / "r.json")
        d = json.loads((tmp_path / "r.json").read_text())
        assert d["n_records"] == 1 and "psnr_gt_db" in d["means"] and d["config_digest"]

    def test_compute_means_skips_none(self):
        rep = EvalReport([RecordMetrics("a", flow_mse=1.0), RecordMetrics("b", flow_mse=3.0), RecordMetrics("c")])
        rep.compute_means()
        assert rep.means == {"flow_mse": 2.0}
