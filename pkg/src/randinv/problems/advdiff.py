"""Initial-condition inversion for advection-diffusion on the unit square.

Finite volumes on a g x g grid (cell (ix, iy) has index iy * g + ix), upwind
advection by a divergence-free velocity derived from a stream function,
zero-flux boundaries, implicit Euler in time.  Observations sample the final
state at m cells.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..core import InverseProblem, LinearPto, ScaledIdentityCovariance
from .deconv import noisy_data
from .priors import make_bilaplacian_prior


def face_velocities(g, speed=1.0):
    """Normal velocities on vertical and horizontal faces from psi = sin^2(pi x) sin^2(pi y).

    Taking differences of psi at cell corners makes the discrete divergence
    of every cell exactly zero.  Velocities are scaled to max speed ``speed``.
    """
    h = 1.0 / g
    c = np.linspace(0.0, 1.0, g + 1)
    X, Y = np.meshgrid(c, c)  # corner (iy, ix)
    psi = np.sin(np.pi * X) ** 2 * np.sin(np.pi * Y) ** 2
    vx = (psi[1:, :] - psi[:-1, :]) / h  # vertical faces: (iy, ix) for ix = 0..g
    vy = -(psi[:, 1:] - psi[:, :-1]) / h  # horizontal faces: (iy, ix) for iy = 0..g
    vmax = max(np.abs(vx).max(), np.abs(vy).max())
    if vmax > 0:
        vx, vy = vx * speed / vmax, vy * speed / vmax
    return vx, vy


def transport_operator(g, kappa, speed=1.0):
    """Sparse K with dy/dt = -K y; rows and columns of K sum to zero."""
    h = 1.0 / g
    vx, vy = face_velocities(g, speed)
    idx = np.arange(g * g).reshape(g, g)
    rows, cols, vals = [], [], []
    # interior faces: (left/lower cell a, right/upper cell b, velocity from a to b)
    pairs = [(idx[:, :-1].ravel(), idx[:, 1:].ravel(), vx[:, 1:-1].ravel()),
             (idx[:-1, :].ravel(), idx[1:, :].ravel(), vy[1:-1, :].ravel())]
    for a, b, vel in pairs:
        out_a = np.maximum(vel, 0.0) / h   # flux leaving a, taken from a
        out_b = np.maximum(-vel, 0.0) / h  # flux leaving b, taken from b
        dif = kappa / h**2 * np.ones_like(vel)
        rows += [a, b, a, b, a, b, a, b]
        cols += [a, a, b, b, a, b, b, a]
        vals += [out_a, -out_a, -out_b, out_b, dif, dif, -dif, -dif]
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(g * g, g * g))


def observation_cells(g, m):
    """m cells on a near-square lattice covering the domain."""
    r = int(np.ceil(np.sqrt(m)))
    pos = ((0.5 + np.arange(r)) / r * g).astype(int)
    cells = [iy * g + ix for ix in pos for iy in pos]
    if len(set(cells)) < m or m > g * g:
        raise ValueError(f"cannot place {m} distinct observations on a {g}x{g} grid")
    return np.array(cells[:m])


class AdvDiffPropagator:
    """Implicit-Euler propagator y <- (I + dt K)^-1 y applied ``steps`` times."""

    def __init__(self, grid, kappa=1e-3, T=3.0, steps=30, speed=1.0):
        if steps < 1 or T <= 0:
            raise ValueError("need T > 0 and at least one time step")
        self.grid = grid
        self.n = grid * grid
        self.dt = T / steps
        self.steps = steps
        self.K = transport_operator(grid, kappa, speed)
        step = (sp.identity(self.n) + self.dt * self.K).tocsc()
        try:
            self._lu = spla.splu(step)
        except RuntimeError as exc:
            raise ValueError(f"implicit step matrix failed to factor (dt = {self.dt})") from exc

    def step(self, y):
        return self._lu.solve(np.ascontiguousarray(y, dtype=float))

    def propagate(self, y):
        for _ in range(self.steps):
            y = self.step(y)
        return y

    def propagate_adjoint(self, y):
        y = np.ascontiguousarray(y, dtype=float)
        for _ in range(self.steps):
            y = self._lu.solve(y, trans="T")
        return y


class AdvDiffPto(LinearPto):
    """Linear map initial condition -> observed final state, stored densely."""

    def __init__(self, propagator, obs):
        self.propagator = propagator
        self.obs = obs
        W = np.zeros((propagator.n, len(obs)))
        W[obs, np.arange(len(obs))] = 1.0
        super().__init__(propagator.propagate_adjoint(W).T)


def advdiff_truth(g):
    c = (np.arange(g) + 0.5) / g
    X, Y = np.meshgrid(c, c)
    return np.minimum(0.5, np.exp(-100 * ((X - 0.35) ** 2 + (Y - 0.7) ** 2))).ravel()


def make_advdiff(spec):
    """Advection-diffusion benchmark with a BiLaplacian prior; returns (problem, truth)."""
    g = spec.grid
    prop = AdvDiffPropagator(g, spec.kappa, spec.T, spec.steps, spec.speed)
    pto = AdvDiffPto(prop, observation_cells(g, spec.m))
    truth = spec.truth_scale * advdiff_truth(g)
    d, sigma = noisy_data(pto.forward(truth), spec)
    prior = make_bilaplacian_prior(g, spec.prior_delta, spec.prior_gamma, spec.theta_matrix())
    problem = InverseProblem(pto, d, np.zeros(g * g), ScaledIdentityCovariance(pto.k, sigma**2),
                             prior, solver="direct", name="advdiff")
    return problem, truth
