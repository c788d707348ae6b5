import numpy as np
import pytest

from diffdiss import DynSystem


def scalar_cubic() -> DynSystem:
    """xdot = -x^3 + u, y = x."""
    return DynSystem(
        1, 1,
        lambda x, e: [-x[0] ** 3],
        lambda x, e: [[1.0]],
        lambda x, e: [x[0]],
        name="cubic",
    )


def scalar_stiffening() -> DynSystem:
    """xdot = -x - x^3 + u, y = x (contracting everywhere)."""
    return DynSystem(
        1, 1,
        lambda x, e: [-x[0] - x[0] ** 3],
        lambda x, e: [[1.0]],
        lambda x, e: [x[0]],
        name="stiffening",
    )


def scalar_leaky(rate: float = 1.0) -> DynSystem:
    """xdot = -rate*x + u, y = x."""
    return DynSystem(
        1, 1,
        lambda x, e: [-rate * x[0]],
        lambda x, e: [[1.0]],
        lambda x, e: [x[0]],
        name=f"leaky-{rate}",
    )


def rotation() -> DynSystem:
    """Planar rotation, norm-preserving; input enters nowhere."""
    return DynSystem(
        2, 1,
        lambda x, e: [-x[1], x[0]],
        lambda x, e: [[0.0], [0.0]],
        lambda x, e: [x[0]],
        name="rotation",
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
