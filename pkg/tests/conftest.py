import numpy as np
import pytest

from rbmtomo import Rbm, all_bitstrings


def random_rbm(n, m, rng, scale=1.0):
    return Rbm(rng.normal(0.0, scale, n), rng.normal(0.0, scale, m),
               rng.normal(0.0, scale, (n, m)))


def brute_force_table(rbm):
    """log p~(v) for all visible states by summing exp(-E) over all h."""
    vs = all_bitstrings(rbm.n_visible).astype(np.float64)
    hs = all_bitstrings(rbm.n_hidden).astype(np.float64)
    log_terms = (vs @ rbm.a)[:, None] + hs @ rbm.b + vs @ rbm.W @ hs.T
    mx = log_terms.max(axis=1, keepdims=True)
    return (mx[:, 0] + np.log(np.sum(np.exp(log_terms - mx), axis=1)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
