import numpy as np
import pytest

from rddtrees.data import ConstraintConfig, Dataset, SamplerConfig


def make_rdd_dataset(seed=0, n=600, p=3, noise=0.5, tau=0.4, cutoff=0.0):
    """Small benchmark-style dataset with a known constant effect."""
    rng = np.random.default_rng(seed)
    x = 2.0 * rng.beta(2, 4, n) - 0.75
    w = rng.normal(size=(n, p))
    mu = np.sin(2 * x) + 0.4 * w[:, 0]
    z = (x >= cutoff).astype(float)
    y = mu + tau * z + noise * rng.standard_normal(n)
    return Dataset(y=y, x=x, w=w, cutoff=cutoff)


@pytest.fixture
def small_ds():
    return make_rdd_dataset()


@pytest.fixture
def fast_cfg():
    return SamplerConfig(
        num_trees_mu=12,
        num_trees_tau=6,
        num_sweeps=25,
        burn_in=5,
        seed=11,
    )


@pytest.fixture
def loose_constraint():
    return ConstraintConfig(h=0.12, n_omin=5, alpha=0.5)
