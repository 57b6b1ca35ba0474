import numpy as np
import pytest

from qdiscrim.inference import HypothesisPair
from qdiscrim.montecarlo import ExperimentConfig
from qdiscrim.qmath import BlochVector, bloch_to_density
from qdiscrim.trajectory import ModelSpec, SimGrid

OMEGA0, OMEGA1, DELTA, KAPPA, ETA = 1.0, 2.0, 1.43, 1.0, 0.5


@pytest.fixture
def north():
    return bloch_to_density(BlochVector(0.0, 0.0, 1.0))


@pytest.fixture
def pair():
    return HypothesisPair(ModelSpec.qubit(OMEGA0, DELTA, KAPPA, ETA), ModelSpec.qubit(OMEGA1, DELTA, KAPPA, ETA))


@pytest.fixture
def make_cfg(pair, north):
    def make(**kw):
        base = dict(pair=pair, grid=SimGrid(1e-3, 2.0), rho0=north, base_seed=11)
        base.update(kw)
        return ExperimentConfig(**base)

    return make


def random_state(rng, d=2):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def random_op(rng, d=2, hermitian=False):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return 0.5 * (a + a.conj().T) if hermitian else a


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
