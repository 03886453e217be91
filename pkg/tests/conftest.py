from __future__ import annotations

import os
import sys

import numpy as np
import pytest

import sodeflow as sf

_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), os.pardir))
if _ROOT not in sys.path:  # for scripts.make_golden in the golden tests
    sys.path.insert(0, _ROOT)

SCENES = os.path.join(_ROOT, "scenes")


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # compile the jitted kernels up front so runtime-budget assertions in the
    # acceptance tests measure the operations, not JIT latency
    sf.kernels.warmup()


@pytest.fixture(scope="session")
def flat2():
    return sf.SodeField.from_expressions(["0", "0"], degree=2.0, kind="complete")


@pytest.fixture(scope="session")
def expgrowth():
    return sf.SodeField.from_expressions(["y1", "y2"], degree=1.0, kind="complete")


@pytest.fixture(scope="session")
def blowup1d():
    return sf.SodeField.from_expressions(["pi*(1+y1^2)"])


@pytest.fixture(scope="session")
def poincare():
    return sf.SodeField.from_expressions(
        ["2*y1*y2/x2", "(y2^2 - y1^2)/x2"],
        chart=sf.Box([-50.0, 0.02], [50.0, 50.0]),
        degree=2.0,
        kind="complete",
    )


@pytest.fixture(scope="session")
def sphere():
    return sf.SodeField.from_expressions(
        [
            "(4*(x1*y1 + x2*y2)*y1 - 2*(y1^2 + y2^2)*x1)/(1 + x1^2 + x2^2)",
            "(4*(x1*y1 + x2*y2)*y2 - 2*(y1^2 + y2^2)*x2)/(1 + x1^2 + x2^2)",
        ],
        chart=sf.Box([-40.0, -40.0], [40.0, 40.0]),
    )


def scene_path(name: str) -> str:
    return os.path.join(SCENES, name)


def random_polynomial_field(rng: np.random.Generator, n: int = 2) -> sf.SodeField:
    """Small random polynomial fiber equations, tame near the origin."""
    terms = []
    for _ in range(n):
        parts = []
        for _ in range(rng.integers(1, 4)):
            c = rng.uniform(-0.5, 0.5)
            ax = rng.integers(0, 3)
            ay = rng.integers(0, 3)
            mono = f"{c:.6f}"
            if ax:
                mono += f"*x{rng.integers(1, n + 1)}^{ax}"
            if ay:
                mono += f"*y{rng.integers(1, n + 1)}^{ay}"
            parts.append(mono)
        terms.append(" + ".join(parts))
    return sf.SodeField.from_expressions(terms)
