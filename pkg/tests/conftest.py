import numpy as np
import pytest
from scipy import stats as sps

from margcond import envelope as env
from margcond.cli import read_matrix_csv
from margcond.core import condition_on

BD_NAMES = ["V", "X", "U", "W", "Y"]
BD_N = 20700

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def bd_matrix():
    from importlib import resources

    names, m = read_matrix_csv(resources.files("margcond") / "fixtures" / "blau_duncan.csv")
    assert names == BD_NAMES
    return m


@pytest.fixture(scope="session")
def bd_stats(bd_matrix):
    idx = BD_NAMES.index
    return condition_on(bd_matrix, BD_N, [idx("V"), idx("W"), idx("Y")], [idx("U"), idx("X")])


@pytest.fixture(scope="session")
def small_table():
    """A coarse, cheap envelope table for tests that only need thresholds."""
    cfg = env.EnvelopeConfig(n_samples=10**5)
    return env.build_envelope_table(np.round(np.arange(11) / 10, 1), (0.10, 0.05, 0.025, 0.01), cfg)


def random_pd(rng, size=None, df=6):
    """Wishart draws with a randomly rescaled identity scale (scipy sampler)."""
    count = 1 if size is None else size
    W = sps.wishart(df=df, scale=np.eye(3)).rvs(size=count, random_state=rng).reshape(count, 3, 3)
    d = np.exp(rng.normal(size=(count, 3)))
    W = W * d[:, :, None] * d[:, None, :]
    return W[0] if size is None else W


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
