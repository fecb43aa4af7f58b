"""Periodic 1D deconvolution with a compactly supported polynomial kernel."""

import numpy as np

from ..core import InverseProblem, LinearPto, ScaledIdentityCovariance
from .priors import make_identity_prior


def deconv_matrix(n, a=0.235):
    """Circulant blur matrix with kernel (x + a)^2 (x - a)^2 on [-a, a].

    Each row is normalized to sum to one.
    """
    x = np.arange(n) / n
    dx = x[:, None] - x[None, :]
    dx = (dx + 0.5) % 1.0 - 0.5
    K = np.where(np.abs(dx) <= a, (dx + a) ** 2 * (dx - a) ** 2, 0.0)
    return K / K.sum(axis=1, keepdims=True)


def deconv_truth(n):
    x = np.arange(n) / n
    return np.sin(2 * np.pi * x) + np.cos(2 * np.pi * x)


def make_deconv1d(spec):
    """Deconvolution benchmark; returns (problem, truth)."""
    n = spec.n
    if n < 8:
        raise ValueError("deconvolution needs n >= 8")
    A = deconv_matrix(n, spec.kernel_a)
    truth = spec.truth_scale * deconv_truth(n)
    d, sigma = noisy_data(A @ truth, spec)
    problem = InverseProblem(LinearPto(A), d, np.zeros(n), ScaledIdentityCovariance(n, sigma**2),
                             make_identity_prior(n, spec.alpha), solver="direct", name="deconv1d")
    return problem, truth


def noisy_data(clean, spec):
    """Data and noise standard deviation; sigma = p * max|clean| unless overridden."""
    sigma = spec.noise_std if spec.noise_std is not None else spec.noise * np.abs(clean).max()
    if not sigma > 0:
        raise ValueError("noise standard deviation must be positive; set noise_std")
    d = clean.copy()
    if spec.add_noise:
        d = d + sigma * np.random.default_rng(spec.seed).standard_normal(clean.shape)
    return d, sigma
