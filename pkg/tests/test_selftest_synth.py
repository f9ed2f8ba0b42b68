import numpy as np

from motionflow.imgcore import load_image
from motionflow.selftest import CHECKS, run_selftest
from motionflow.synth import synthetic_image, write_corpus


def test_selftest_passes():
    lines = []
    assert run_selftest(lines.append)
    assert len(lines) == len(CHECKS) and all(l.startswith("[PASS]") for l in lines)


def test_synthetic_image_valid_and_seeded():
    a = synthetic_image(24, 40, np.random.default_rng(1), texture=0.05)
    b = synthetic_image(24, 40, np.random.default_rng(1), texture=0.05)
    assert a.shape == (24, 40, 3) and np.array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1 and a.std() > 0.05


def test_corpus(tmp_path):
    paths = write_corpus(tmp_path, 3, 16, 20, seed=2)
    assert [p.name for p in paths] == ["synth_0000.png", "synth_0001.png", "synth_0002.png"]
    assert load_image(paths[0]).shape == (16, 20, 3)
