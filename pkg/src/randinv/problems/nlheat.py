"""Log-conductivity inversion for steady heat conduction div(e^kappa grad T) = f.

Cell-centered finite volumes on a g x g grid (cell (ix, iy) has index
iy * g + ix).  Face conductances are arithmetic means of e^kappa of the two
neighbouring cells.  T = 2(1 - x) on the bottom edge and T = 2x on the top
edge are imposed through half-cell faces; the sides are insulated.  The
map kappa -> T is nonlinear, but for fixed kappa the state equation is
linear and solved directly.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..core import InverseProblem, PtoMap, ScaledIdentityCovariance, StateCache
from .deconv import noisy_data
from .priors import make_bilaplacian_prior


def heat_source(g):
    c = (np.arange(g) + 0.5) / g
    X, Y = np.meshgrid(c, c)
    return (50 * np.sin(np.pi * X) ** 2 * np.cos(np.pi * Y) ** 2).ravel()


def lower_half_cells(g, m, seed=0):
    """m distinct cells with centers in y < 1/2, chosen once from a fixed seed."""
    idx = np.arange(g * g).reshape(g, g)
    candidates = idx[: g // 2, :].ravel()
    if m > candidates.size:
        raise ValueError(f"only {candidates.size} cells lie in the lower half of a {g}x{g} grid")
    return np.sort(np.random.default_rng(seed).choice(candidates, m, replace=False))


class HeatPto(PtoMap):
    """kappa -> T(kappa) at the observation cells, with adjoint-based derivatives."""

    is_linear = False

    def __init__(self, grid, obs, source=None):
        g = self.grid = int(grid)
        self.h = 1.0 / g
        self.n = g * g
        self.obs = np.asarray(obs)
        self.k = self.obs.size
        self.f = heat_source(g) if source is None else np.asarray(source, dtype=float)
        idx = np.arange(self.n).reshape(g, g)
        self._fa = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
        self._fb = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
        x = (np.arange(g) + 0.5) / g
        self._bc = np.concatenate([idx[0, :], idx[-1, :]])
        self._tbc = np.concatenate([2 * (1 - x), 2 * x])
        self._cache = StateCache(4)

    def _system(self, kappa):
        c = np.exp(kappa)
        h2 = self.h**2
        w = 0.5 * (c[self._fa] + c[self._fb]) / h2
        wb = 2 * c[self._bc] / h2
        fa, fb, bc = self._fa, self._fb, self._bc
        rows = np.concatenate([fa, fb, fa, fb, bc])
        cols = np.concatenate([fa, fb, fb, fa, bc])
        vals = np.concatenate([w, w, -w, -w, wb])
        A = sp.csc_matrix((vals, (rows, cols)), shape=(self.n, self.n))
        b = -self.f.copy()
        np.add.at(b, bc, wb * self._tbc)
        return A, b, c

    def _state(self, kappa):
        kappa = np.asarray(kappa, dtype=float)
        if not np.all(np.isfinite(kappa)) or np.abs(kappa).max() > 700:
            raise FloatingPointError(
                f"conductance overflow: kappa range [{kappa.min():.3g}, {kappa.max():.3g}]")
        A, b, c = self._system(kappa)
        try:
            lu = spla.splu(A)
        except RuntimeError as exc:
            raise FloatingPointError(
                f"singular conductance for kappa range [{kappa.min():.3g}, {kappa.max():.3g}]") from exc
        T = lu.solve(b)
        # dR/dkappa: residual sensitivity at fixed T
        h2 = self.h**2
        fa, fb, bc = self._fa, self._fb, self._bc
        q = (T[fa] - T[fb]) / h2
        qa, qb = 0.5 * c[fa] * q, 0.5 * c[fb] * q
        qbc = 2 * c[bc] * (T[bc] - self._tbc) / h2
        rows = np.concatenate([fa, fa, fb, fb, bc])
        cols = np.concatenate([fa, fb, fa, fb, bc])
        vals = np.concatenate([qa, qb, -qa, -qb, qbc])
        G = sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))
        return lu, T, G

    def state(self, kappa):
        return self._cache.get(kappa, self._state)

    def temperature(self, kappa):
        """Full temperature field for log-conductivity kappa."""
        return self.state(kappa)[1].copy()

    def forward(self, kappa):
        return self.state(kappa)[1][self.obs]

    def jvp(self, kappa, v):
        lu, _, G = self.state(kappa)
        dT = -lu.solve(np.ascontiguousarray(G @ np.asarray(v, dtype=float)))
        return dT[self.obs]

    def vjp(self, kappa, w):
        lu, _, G = self.state(kappa)
        w = np.asarray(w, dtype=float)
        rhs = np.zeros((self.n,) + w.shape[1:])
        rhs[self.obs] = w
        p = lu.solve(rhs, trans="T")
        return -(G.T @ p)

    def jacobian(self, kappa):
        lu, _, G = self.state(kappa)
        rhs = np.zeros((self.n, self.k))
        rhs[self.obs, np.arange(self.k)] = 1.0
        Z = lu.solve(rhs, trans="T")
        return -np.asarray((G.T @ Z).T)


def nlheat_truth(g):
    c = (np.arange(g) + 0.5) / g
    X, Y = np.meshgrid(c, c)
    return (0.8 * np.exp(-((X - 0.35) ** 2 + (Y - 0.3) ** 2) / 0.03)
            - 0.6 * np.exp(-((X - 0.7) ** 2 + (Y - 0.65) ** 2) / 0.05)).ravel()


def make_nlheat(spec):
    """Nonlinear heat conductivity benchmark; returns (problem, truth)."""
    g = spec.grid
    pto = HeatPto(g, lower_half_cells(g, spec.m))
    truth = spec.truth_scale * nlheat_truth(g)
    d, sigma = noisy_data(pto.forward(truth), spec)
    prior = make_bilaplacian_prior(g, spec.prior_delta, spec.prior_gamma, spec.theta_matrix())
    problem = InverseProblem(pto, d, np.zeros(g * g), ScaledIdentityCovariance(pto.k, sigma**2),
                             prior, solver="direct", name="nlheat")
    return problem, truth
