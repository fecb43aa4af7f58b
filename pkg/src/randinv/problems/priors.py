"""Prior covariances: scaled identity and the BiLaplacian PDE prior."""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..core import CovarianceOperator, ScaledIdentityCovariance


def make_identity_prior(n, alpha):
    """Prior with precision alpha * I, i.e. covariance I / alpha."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return ScaledIdentityCovariance(n, 1.0 / alpha)


def anisotropic_tensor(theta1, theta2, angle):
    """SPD tensor with eigenvalue theta1 along (sin a, cos a) and theta2 across it."""
    s, c = np.sin(angle), np.cos(angle)
    return np.array([[theta1 * s * s + theta2 * c * c, (theta1 - theta2) * s * c],
                     [(theta1 - theta2) * s * c, theta1 * c * c + theta2 * s * s]])


def neumann_laplacian_1d(g, h):
    main = np.full(g, 2.0)
    main[0] = main[-1] = 1.0
    off = -np.ones(g - 1)
    return sp.diags([off, main, off], [-1, 0, 1]) / h**2


def diffusion_operator(g, theta):
    """Cell-centered discretization of -div(theta grad) with zero-flux boundaries.

    The unknown at cell (ix, iy) has index iy * g + ix and h = 1 / g.  A
    multiple of the identity taken from theta is discretized on faces (the
    5-point scheme), the remainder through gradients at interior cell
    corners.  Both parts are symmetric positive semidefinite with the
    constants as their only common null space, so the sum is too.
    """
    theta = np.asarray(theta, dtype=float)
    h = 1.0 / g
    lam = np.linalg.eigvalsh(theta)
    if lam[0] <= 0 or not np.allclose(theta, theta.T):
        raise ValueError("theta must be symmetric positive definite")
    if theta[0, 1] == 0 and theta[1, 0] == 0:
        lap = neumann_laplacian_1d(g, h)
        eye = sp.identity(g)
        # x varies fastest in the index
        return (theta[0, 0] * sp.kron(eye, lap) + theta[1, 1] * sp.kron(lap, eye)).tocsr()
    c = 0.5 * lam[0]
    lap = neumann_laplacian_1d(g, h)
    eye = sp.identity(g)
    S = c * (sp.kron(eye, lap) + sp.kron(lap, eye))
    R = theta - c * np.eye(2)
    # gradient at each interior corner from its four surrounding cells
    idx = np.arange(g * g).reshape(g, g)
    bl, br = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    tl, tr = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    m = bl.size
    rows = np.repeat(np.arange(m), 4)
    cols = np.column_stack([bl, br, tl, tr]).ravel()
    gx = sp.csr_matrix((np.tile([-1, 1, -1, 1], m) / (2 * h), (rows, cols)), shape=(m, g * g))
    gy = sp.csr_matrix((np.tile([-1, -1, 1, 1], m) / (2 * h), (rows, cols)), shape=(m, g * g))
    # each corner carries area h^2; dividing the energy by the cell area gives weight 1
    corner = (gx.T @ (R[0, 0] * gx + R[0, 1] * gy) + gy.T @ (R[1, 0] * gx + R[1, 1] * gy))
    return (S + corner).tocsr()


class BiLaplacianPrior(CovarianceOperator):
    """Gamma = K^-2 with K = delta I + gamma (-div theta grad) on a g x g grid.

    K is factored once; the symmetric square root of Gamma is K^-1.
    """

    kind = "operator"

    def __init__(self, grid, delta, gamma, theta=None):
        if not (delta > 0 and gamma > 0):
            raise ValueError("delta and gamma must be positive")
        self.grid = int(grid)
        self.delta = float(delta)
        self.gamma = float(gamma)
        self.theta = np.eye(2) if theta is None else np.asarray(theta, dtype=float)
        self.dim = self.grid**2
        self.K = (self.delta * sp.identity(self.dim) + self.gamma * diffusion_operator(self.grid, self.theta)).tocsc()
        self._lu = spla.splu(self.K)

    def _solve(self, v):
        v = np.asarray(v, dtype=float)
        return self._lu.solve(np.ascontiguousarray(v))

    def apply(self, v):
        return self._solve(self._solve(v))

    def apply_inverse(self, v):
        return self.K @ (self.K @ np.asarray(v, dtype=float))

    def apply_sqrt(self, v):
        return self._solve(v)

    def apply_inv_sqrt(self, v):
        return self.K @ np.asarray(v, dtype=float)

    def dense_inverse(self):
        self._check_dense_size()
        Kd = self.K.toarray()
        return Kd @ Kd


def make_bilaplacian_prior(grid, delta, gamma, theta=None):
    """BiLaplacian prior; ``theta`` is a 2x2 SPD tensor (identity by default)."""
    return BiLaplacianPrior(grid, delta, gamma, theta)
