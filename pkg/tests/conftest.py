import numpy as np
import pytest
from hypothesis import strategies as st

from mdplace.distflow import LoadingScenario, solve_distflow
from mdplace.fixture import fixture_state
from mdplace.grid import grid_from_edges


def chain(n, r=0.01, x=0.01, b=0.0, i_cap=1.0):
    return grid_from_edges([(k, k + 1) for k in range(n - 1)], r=r, x=x, b=b, i_cap=i_cap)


def star(k, **kw):
    kw.setdefault("r", 0.01)
    kw.setdefault("x", 0.01)
    return grid_from_edges([(0, j) for j in range(1, k + 1)], b=kw.pop("b", 0.0), i_cap=1.0, **kw)


def random_grid(rng, n_max=12, n_min=2, b_max=0.05):
    """Random radial grid in the acceptance ranges plus a feasible scenario."""
    n = int(rng.integers(n_min, n_max + 1))
    edges = [(int(rng.integers(0, j)), j) for j in range(1, n)]
    L = n - 1
    grid = grid_from_edges(
        edges,
        r=rng.uniform(0.001, 0.05, L),
        x=rng.uniform(0.001, 0.05, L),
        b=rng.uniform(0.0, b_max, L),
        i_cap=rng.uniform(0.5, 2.0, L),
    )
    p = np.concatenate([[0.0], rng.uniform(-0.02, 0.1, L)])
    q = np.concatenate([[0.0], rng.uniform(-0.02, 0.05, L)])
    return grid, LoadingScenario(p, q, float(rng.uniform(0.95, 1.05)))


@st.composite
def grids(draw, n_max=12, b_max=0.05):
    seed = draw(st.integers(0, 2**32 - 1))
    return random_grid(np.random.default_rng(seed), n_max=n_max, b_max=b_max)


@pytest.fixture(scope="session")
def fixture_case():
    return fixture_state()


@pytest.fixture
def chain4_case():
    grid = chain(4, r=0.01, x=0.01, b=0.02)
    p = np.array([0.0, 0.05, 0.05, 0.05])
    q = np.array([0.0, 0.02, 0.02, 0.02])
    scenario = LoadingScenario(p, q, 1.0)
    return grid, scenario, solve_distflow(grid, scenario)


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
