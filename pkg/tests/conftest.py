import hypothesis
import numpy as np
import pytest

from fedlogit.cohort import Cohort, SiteDataset, generate_synthetic, standard_spec

hypothesis.settings.register_profile("default", max_examples=50, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_site(site_id, X, y, prefix=None):
    X = np.asarray(X, dtype=float)
    prefix = prefix or site_id
    return SiteDataset(site_id, tuple(f"{prefix}-{i}" for i in range(len(y))), X, np.asarray(y))


def random_cohort(seed, K=3, d=4, n_range=(15, 40), shift=0.5):
    rng = np.random.default_rng(seed)
    sites = []
    for k in range(K):
        n = int(rng.integers(*n_range))
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        X = rng.standard_normal((n, d)) + shift * rng.standard_normal(d) + 0.8 * y[:, None]
        sites.append(make_site(f"s{k}", X, y))
    return Cohort(tuple(sites), d)


@pytest.fixture(scope="session")
def standard_cohort():
    return generate_synthetic(standard_spec(seed=0))


@pytest.fixture
def small_cohort():
    return random_cohort(0)
