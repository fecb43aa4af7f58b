"""Small random dense linear problems for cross-checks."""

import numpy as np

from ..core import DenseCovariance, InverseProblem, LinearPto


def random_spd(dim, rng, cond=10.0):
    """Random SPD matrix with eigenvalues log-spaced in [1, cond]."""
    Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    return (Q * np.geomspace(1.0, cond, dim)) @ Q.T


def make_random_linear(n, k, seed=0, a_scale=1.0, cond=10.0):
    """Random linear Gaussian problem with dense SPD noise and prior covariances.

    ``a_scale`` shrinks the forward matrix (a well-conditioned normal matrix
    for small values); ``cond`` bounds the covariance condition numbers.
    Returns (problem, truth) with truth drawn from the prior.
    """
    rng = np.random.default_rng(seed)
    A = a_scale * rng.standard_normal((k, n)) / np.sqrt(k)
    L = DenseCovariance(random_spd(k, rng, cond))
    G = DenseCovariance(random_spd(n, rng, cond))
    u0 = rng.standard_normal(n)
    truth = u0 + G.apply_sqrt(rng.standard_normal(n))
    d = A @ truth + L.apply_sqrt(rng.standard_normal(k))
    return InverseProblem(LinearPto(A), d, u0, L, G, solver="direct", name="random"), truth
