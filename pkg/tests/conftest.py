import numpy as np
import pytest

from facetflow.bvfunc import BVFunction


def random_bv(rng, n_nodes=None, jump_prob=0.5, scale=1.0):
    """Random periodic piecewise-linear function; each node jumps with jump_prob."""
    m = int(rng.integers(2, 8)) if n_nodes is None else n_nodes
    nodes = np.sort(rng.uniform(0, 1, m))
    while np.any(np.diff(nodes) < 1e-3):
        nodes = np.sort(rng.uniform(0, 1, m))
    left = rng.normal(0, scale, m)
    right = np.where(rng.uniform(size=m) < jump_prob, rng.normal(0, scale, m), left)
    return BVFunction.from_traces(nodes, left, right)


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


# one line per acceptance criterion in the terminal summary
ACCEPTANCE: dict = {}
N_CRITERIA = 9


@pytest.fixture(scope="session")
def criterion():
    def record(k: int, passed: bool, detail: str = ""):
        ACCEPTANCE[k] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, N_CRITERIA + 1):
        if k in ACCEPTANCE:
            ok, detail = ACCEPTANCE[k]
            terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {k}: NOT RUN")
