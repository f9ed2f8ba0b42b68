import sys

import numpy as np
import pytest

from motionflow.imgcore import FlowDomain, MotionFlow


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_flow(rng, h, w, dom=FlowDomain(8, 8)):
    return MotionFlow(rng.integers(0, dom.u_max + 1, (h, w)), rng.integers(-dom.v_max, dom.v_max + 1, (h, w)))


def uniform_flow(h, w, u, v):
    return MotionFlow(np.full((h, w), u), np.full((h, w), v))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
