import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sept.discrepancy import MixtureSpec, generate_mixture_pool, random_unit_means
from sept.ivf import build, fit_codec, train
from sept.vecstore import EmbeddingPool, normalize

settings.register_profile(
    "default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def make_pool(n, d, seed=0, metric="cosine", id_start=0, shuffle_ids=False):
    rng = np.random.default_rng(seed)
    ids = np.arange(id_start, id_start + n)
    if shuffle_ids:
        ids = rng.permutation(ids)
    pool = EmbeddingPool(ids, rng.standard_normal((n, d)), metric)
    return normalize(pool) if metric == "cosine" else pool


def mixture_pool(n, d, components, stddev, seed, id_start=0):
    means = random_unit_means(components, d, seed)
    pool, _ = generate_mixture_pool(MixtureSpec(means, stddev, seed=seed + 1), n, id_start=id_start)
    return pool


# 100k x 64 unit-normalized mixture shared by the scale checks
BIG_N, BIG_D, BIG_NLIST = 100_000, 64, 256
# per-dimension noise 0.0625 against unit-norm component means
BIG_COMPONENTS, BIG_STDDEV = 100, 0.0625


@pytest.fixture(scope="session")
def big_mixture():
    return mixture_pool(BIG_N, BIG_D, BIG_COMPONENTS, BIG_STDDEV, seed=7)


@pytest.fixture(scope="session")
def big_queries():
    means = random_unit_means(BIG_COMPONENTS, BIG_D, 7)
    pool, _ = generate_mixture_pool(
        MixtureSpec(means, BIG_STDDEV, seed=99), 200, id_start=10**9
    )
    return pool


@pytest.fixture(scope="session")
def big_index(big_mixture):
    km = train(big_mixture, BIG_NLIST, max_iters=25, seed=0)
    return build(big_mixture, km, fit_codec(big_mixture))


# verdict lines collected by test_acceptance.py
ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
