"""Parallel-beam X-ray tomography of the Shepp-Logan phantom."""

import numpy as np
import scipy.sparse as sp

from ..core import InverseProblem, LinearPto, ScaledIdentityCovariance
from .deconv import noisy_data
from .priors import make_identity_prior

# Modified Shepp-Logan ellipses: intensity, semi-axes a, b, center x0, y0, rotation (degrees).
SHEPP_LOGAN = np.array([
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
    [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
    [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
    [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
    [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
    [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
    [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
    [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
    [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
])


def shepp_logan(g):
    """g x g modified Shepp-Logan phantom, flattened with index iy * g + ix."""
    c = (np.arange(g) + 0.5) / g * 2 - 1
    X, Y = np.meshgrid(c, c)
    P = np.zeros((g, g))
    for A, a, b, x0, y0, phi in SHEPP_LOGAN:
        ph = np.deg2rad(phi)
        xr = (X - x0) * np.cos(ph) + (Y - y0) * np.sin(ph)
        yr = -(X - x0) * np.sin(ph) + (Y - y0) * np.cos(ph)
        P[(xr / a) ** 2 + (yr / b) ** 2 <= 1] += A
    return P.ravel()


def radon_matrix(g, angles):
    """Sparse ray-pixel intersection lengths on the unit square (Siddon traversal).

    Each angle has g parallel rays at detector offsets spaced one pixel
    apart and centered on the image.  Row r = angle_index * g + bin.
    """
    edges = np.linspace(0.0, 1.0, g + 1)
    offsets = (np.arange(g) + 0.5) / g - 0.5
    rows, cols, vals = [], [], []
    r = 0
    for th in angles:
        normal = np.array([np.cos(th), np.sin(th)])
        dirv = np.array([-np.sin(th), np.cos(th)])
        for t in offsets:
            p0 = 0.5 + t * normal
            lo, hi = -np.inf, np.inf
            crossings = []
            for ax in range(2):
                if abs(dirv[ax]) > 1e-14:
                    s = (edges - p0[ax]) / dirv[ax]
                    crossings.append(s)
                    lo = max(lo, min(s[0], s[-1]))
                    hi = min(hi, max(s[0], s[-1]))
                elif not 0.0 <= p0[ax] <= 1.0:
                    lo, hi = 1.0, 0.0
            if hi > lo:
                s = np.concatenate(crossings)
                s = np.unique(np.concatenate([s[(s > lo) & (s < hi)], [lo, hi]]))
                mid = 0.5 * (s[:-1] + s[1:])
                length = np.diff(s)
                ix = np.clip((p0[0] + mid * dirv[0]) * g, 0, g - 1).astype(int)
                iy = np.clip((p0[1] + mid * dirv[1]) * g, 0, g - 1).astype(int)
                keep = length > 1e-14
                rows.append(np.full(keep.sum(), r))
                cols.append((iy * g + ix)[keep])
                vals.append(length[keep])
            r += 1
    rows = np.concatenate(rows) if rows else np.zeros(0, int)
    cols = np.concatenate(cols) if cols else np.zeros(0, int)
    vals = np.concatenate(vals) if vals else np.zeros(0)
    return sp.csr_matrix((vals, (rows, cols)), shape=(r, g * g))


def make_xray(spec):
    """Tomography benchmark solved on the CG path; returns (problem, truth)."""
    g, nang = spec.grid, spec.angles
    if g < 1 or nang < 1:
        raise ValueError("grid and angles must be positive")
    A = radon_matrix(g, np.linspace(0.0, np.pi, nang, endpoint=False))
    truth = spec.truth_scale * shepp_logan(g)
    d, sigma = noisy_data(A @ truth, spec)
    n = g * g
    problem = InverseProblem(LinearPto(A), d, np.zeros(n), ScaledIdentityCovariance(A.shape[0], sigma**2),
                             make_identity_prior(n, spec.alpha), solver="cg", name="xray")
    return problem, truth
