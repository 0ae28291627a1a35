import numpy as np
import pytest

from dprm_lab import CategorySchema, build_cost_matrix
from dprm_lab.annotate import DatasetSpec, generate_dataset


@pytest.fixture(scope="session")
def schema():
    return CategorySchema.default()


@pytest.fixture(scope="session")
def cost(schema):
    return build_cost_matrix(schema)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_corpus():
    records, manifest = generate_dataset(DatasetSpec(n_pairs=100, seed=3))
    return records, manifest


def simplex_pairs(seed, n, d=6, alpha=1.0):
    g = np.random.default_rng(seed)
    return g.dirichlet(np.full(d, alpha), size=n), g.dirichlet(np.full(d, alpha), size=n)


# filled by test_acceptance.py, printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
