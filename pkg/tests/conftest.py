import numpy as np
import pytest

from polyharm.fields import CoefficientSet, make_coefficients
from polyharm.grid import build_grid

# criterion lines collected by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def bump(target, **kw):
    d = {"center": [0.1, -0.05, 0.0], "radius": 0.5, "amplitude": 1.0, "target": target}
    d.update(kw)
    return d


RECIPES = {
    "q-only": {"recipe": "q-only", "m": 3, "seed": 1, "bumps": [bump("q")]},
    "B-only": {"recipe": "B-only", "m": 3, "seed": 1, "bumps": [bump("B", direction=[1, 2, 0.5])]},
    "A-divfree": {
        "recipe": "A-divfree",
        "m": 3,
        "seed": 1,
        "bumps": [bump("A", direction=[1, 0.3, 0.2], radius=0.45)],
    },
    "A-potential": {
        "recipe": "A-potential",
        "m": 3,
        "seed": 1,
        "bumps": [bump("V", direction=[1, 0.5, -0.3]), bump("theta", amplitude=0.5, center=[-0.1, 0.1, 0])],
    },
    "isotropic-m2": {"recipe": "isotropic-m2", "m": 2, "seed": 1, "bumps": [bump("a")]},
}


@pytest.fixture(scope="session")
def g17():
    return build_grid(17, 1.0)


@pytest.fixture(scope="session")
def g25():
    return build_grid(25, 1.0)


def pair(name, grid):
    c2 = make_coefficients(RECIPES[name], grid)
    return CoefficientSet.zero(grid, c2.m), c2


def isotropic_phase(rng):
    """Random orthonormal pair as a complex direction ``omega + i omega~``."""
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    return Q[:, 0], Q[:, 1]


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
