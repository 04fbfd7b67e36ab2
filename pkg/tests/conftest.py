import math

import numpy as np
import pytest

from affine_ifs.async_orchestrator import set_thread_budget
from affine_ifs.schemas import AffineIFS, LyapunovSpectrum, ShiftMeasure


@pytest.fixture(autouse=True)
def reset_thread_budget():
    yield
    set_thread_budget(0)


@pytest.fixture
def uniform2():
    return ShiftMeasure.bernoulli([0.5, 0.5])


@pytest.fixture
def uniform4():
    return ShiftMeasure.bernoulli([0.25, 0.25, 0.25, 0.25])


@pytest.fixture
def cantor():
    """Middle-thirds Cantor system x/3, x/3 + 2/3."""
    return AffineIFS.from_arrays([1 / 3, 1 / 3], [0.0, 2 / 3])


@pytest.fixture
def halves():
    """x/2, x/2 + 1/2: Lebesgue measure on [0, 1] under the uniform weights."""
    return AffineIFS.from_arrays([0.5, 0.5], [0.0, 0.5])


@pytest.fixture
def square():
    """Four half-size copies tiling the unit square."""
    translations = [[0.0, 0.0], [0.5, 0.0], [0.0, 0.5], [0.5, 0.5]]
    return AffineIFS.from_arrays(np.repeat(0.5 * np.eye(2)[None], 4, axis=0), translations)


@pytest.fixture
def diagonal_pair():
    return np.array([np.diag([1 / 2, 1 / 4]), np.diag([1 / 3, 1 / 5])])


@pytest.fixture
def triangular_pair():
    """Lower-triangular pair: e2 is invariant and contracted at the slower rate, so V^1 = span(e2)."""
    return np.array([[[0.6, 0.0], [0.1, 0.2]], [[0.5, 0.0], [-0.1, 0.25]]])


@pytest.fixture
def two_exponent_spectrum():
    return LyapunovSpectrum(
        exponents=(math.log(1 / 2), math.log(1 / 3)), multiplicities=(1, 1), stderr=(0.0, 0.0), gap_tol=1e-12
    )


def rotation(theta: float) -> np.ndarray:
    return np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
