import sys

import numpy as np
import pytest

from mpvc.model import REGISTRY_TEXT, feasible_mask, registry

REGISTRY_NAMES = tuple(sorted(REGISTRY_TEXT))


def feasible_points(prob, count, seed=0, box=2.0, snap=0.5):
    """Random feasible points; coordinates are often snapped to a coarse lattice
    so that lower-dimensional pieces of the feasible set (H = 0, g = 0) are hit."""
    rng = np.random.default_rng(seed)
    out = []
    while sum(len(o) for o in out) < count:
        X = rng.uniform(-box, box, size=(4 * count, prob.n))
        mask = rng.random(X.shape) < 0.5
        X = np.where(mask, np.round(X / snap) * snap, X)
        X = X[feasible_mask(prob, X, 1e-9)]
        out.append(X)
    return np.vstack(out)[:count]


@pytest.fixture(params=REGISTRY_NAMES)
def registry_problem(request):
    return registry(request.param)


@pytest.fixture
def P1():
    return registry("P1")


@pytest.fixture
def P2():
    return registry("P2")


@pytest.fixture
def P3():
    return registry("P3")


@pytest.fixture
def P4():
    return registry("P4")


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.summary_lines():
        terminalreporter.write_line(line)
