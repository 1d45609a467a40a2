import numpy as np
import pytest

from radopt.manifolds import Grassmann, Sphere, Stiefel

MANIFOLDS = [
    Sphere(2),
    Sphere(10),
    Stiefel(5, 2),
    Stiefel(20, 10),
    Stiefel(3, 2, retraction="polar"),
    Grassmann(8, 3),
    Grassmann(6, 2, retraction="qr"),
]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=MANIFOLDS, ids=repr)
def manifold(request):
    return request.param


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
