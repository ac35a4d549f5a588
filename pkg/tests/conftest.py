import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent))

from crystalwalk.lattice import BUILTIN_NAMES, builtin, with_probabilities  # noqa: E402


def normalized_kernel(lattice, weights):
    """Scale positive dart weights so that every vertex row sums to one."""
    g = lattice.quotient
    w = np.asarray(weights, dtype=float)
    out = np.empty_like(w)
    for darts in g.outgoing:
        idx = list(darts)
        out[idx] = w[idx] / w[idx].sum()
    return with_probabilities(lattice, out)


def random_kernel(lattice, rng, low=0.05):
    return normalized_kernel(lattice, rng.uniform(low, 1.0, lattice.quotient.n_darts))


@st.composite
def lattice_and_kernel(draw, names=BUILTIN_NAMES):
    name = draw(st.sampled_from(names))
    p = draw(st.floats(0.05, 0.95)) if name == "bouquet1" else None
    lattice, _ = builtin(name, p)
    weights = draw(st.lists(st.floats(0.05, 1.0), min_size=lattice.quotient.n_darts,
                            max_size=lattice.quotient.n_darts))
    return lattice, normalized_kernel(lattice, weights)


@pytest.fixture(scope="session")
def hexagonal():
    return builtin("hexagonal")


@pytest.fixture(scope="session")
def dice():
    return builtin("dice")


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
