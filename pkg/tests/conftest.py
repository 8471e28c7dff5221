import numpy as np
import pytest

from phreg.phase import PhaseTypeLaw, StructureKind


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def coxian3():
    T = [
        [-2.0, 1.5, 0.0],
        [0.0, -1.0, 0.6],
        [0.0, 0.0, -0.5],
    ]
    return PhaseTypeLaw([1.0, 0.0, 0.0], T, StructureKind.COXIAN)


@pytest.fixture
def general2():
    return PhaseTypeLaw([0.3, 0.7], [[-3.0, 1.0], [0.5, -1.0]], StructureKind.GENERAL)


@pytest.fixture
def exponential():
    return PhaseTypeLaw([1.0], [[-1.0]], StructureKind.EXPONENTIAL)


def random_subintensity(rng, p, scale=1.0):
    off = rng.uniform(0.0, 1.0, size=(p, p)) * scale
    np.fill_diagonal(off, 0.0)
    exit = rng.uniform(0.05, 1.0, size=p) * scale
    return off - np.diag(off.sum(axis=1) + exit)


def random_law(rng, p):
    w = rng.uniform(0.1, 1.0, size=p)
    return PhaseTypeLaw(w / w.sum(), random_subintensity(rng, p), StructureKind.GENERAL)
