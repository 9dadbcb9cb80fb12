import math

import numpy as np
import pytest

from ucvol.core import ConstraintSystem, GridSpec, PointSet

GENERIC_ORIGIN = (0.137, 0.291, 0.073, 0.011, 0.023, 0.017)


def triangle_sets():
    A = PointSet.from_arrays("A", [[0, 0, 0], [1.6, 0, 0], [0.5, 1.4, 0]], 0.5)
    B = PointSet.from_arrays("B", [[0.2, -0.3, 0.1], [1.5, 0.2, 0], [0.3, 1.5, 0.1]], 0.5)
    return A, B


@pytest.fixture
def sets():
    return triangle_sets()


@pytest.fixture
def system():
    return ConstraintSystem()


@pytest.fixture
def coarse_grid():
    return GridSpec.from_counts((4.0, 4.0, 4.0), (8, 8, 8), GENERIC_ORIGIN)


@pytest.fixture
def reference_grid():
    return GridSpec.uniform(2.0, math.pi / 9, GENERIC_ORIGIN)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE: list[str] = []


def acceptance(name: str, ok: bool, detail: str) -> bool:
    line = f"[ACCEPTANCE] {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
