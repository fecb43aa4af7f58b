"""Problem model, covariance operators and deterministic MAP solvers.

The MAP problem for a Bayesian inverse problem with Gaussian noise and prior is

    min_u  1/2 ||d - F(u)||^2_{L^-1} + 1/2 ||u - u0||^2_{Gamma^-1}

Randomized methods replace the weights, the data and the prior mean by sample
averages.  All of them reduce to minimizing a :class:`SampledObjective`, which
keeps the same structure with generic weights and shifts, so the closed-form
linear solve and the Gauss-Newton solver are shared by every method.
"""

import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

# Size above which dense materialization is refused.
MAX_DENSE_DIM = 4096


class DimensionError(ValueError):
    """Raised when vector or operator sizes do not agree."""


class SingularOperatorError(np.linalg.LinAlgError):
    """Raised when the inverse of a singular operator is requested."""


class NotSPDError(np.linalg.LinAlgError):
    """Raised when CG meets NaN or non-positive curvature."""


def _as_block(v):
    v = np.asarray(v, dtype=float)
    return v if v.ndim == 2 else v[:, None]


# ---------------------------------------------------------------------------
# Symmetric operators used as weights in the objectives
# ---------------------------------------------------------------------------


class SymmetricOperator:
    """A symmetric positive semidefinite operator known through its action."""

    dim = 0

    def apply(self, v):
        raise NotImplementedError

    def dense(self):
        if self.dim > MAX_DENSE_DIM:
            raise MemoryError(f"refusing to materialize a {self.dim}x{self.dim} operator")
        return self.apply(np.eye(self.dim))

    def congruence(self, A):
        """Return the dense matrix A^T W A for a dense or sparse A."""
        WA = self.apply(A.toarray() if sp.issparse(A) else np.asarray(A))
        return np.asarray(A.T @ WA)


class MatrixOperator(SymmetricOperator):
    def __init__(self, M):
        self.M = M
        self.dim = M.shape[0]

    def apply(self, v):
        return self.M @ v

    def dense(self):
        return self.M.toarray() if sp.issparse(self.M) else np.array(self.M, dtype=float)


class ScaledIdentityOperator(SymmetricOperator):
    def __init__(self, dim, scale):
        self.dim = int(dim)
        self.scale = float(scale)

    def apply(self, v):
        return self.scale * np.asarray(v, dtype=float)

    def dense(self):
        return self.scale * np.eye(self.dim)

    def congruence(self, A):
        if sp.issparse(A):
            return self.scale * (A.T @ A).toarray()
        return self.scale * (A.T @ A)


class LowRankOperator(SymmetricOperator):
    """The operator E E^T, applied as E (E^T v) without forming it."""

    def __init__(self, E):
        self.E = np.asarray(E, dtype=float)
        self.dim = self.E.shape[0]

    def apply(self, v):
        return self.E @ (self.E.T @ v)

    def dense(self):
        return self.E @ self.E.T

    def congruence(self, A):
        B = np.asarray(A.T @ self.E)
        return B @ B.T


class PrecisionOperator(SymmetricOperator):
    """View of a covariance operator that applies its inverse."""

    def __init__(self, cov):
        self.cov = cov
        self.dim = cov.dim

    def apply(self, v):
        return self.cov.apply_inverse(v)

    def dense(self):
        return self.cov.dense_inverse()


class SumOperator(SymmetricOperator):
    def __init__(self, *ops):
        self.ops = ops
        self.dim = ops[0].dim

    def apply(self, v):
        return sum(op.apply(v) for op in self.ops)

    def dense(self):
        return sum(op.dense() for op in self.ops)


# ---------------------------------------------------------------------------
# Covariance operators
# ---------------------------------------------------------------------------


class CovarianceOperator:
    """Symmetric positive definite covariance C with square-root actions.

    Subclasses implement ``apply``, ``apply_inverse``, ``apply_sqrt`` and
    ``apply_inv_sqrt``.  All actions accept a vector or a block of columns.
    """

    dim = 0
    kind = "operator"

    def apply(self, v):
        raise NotImplementedError

    def apply_inverse(self, v):
        raise NotImplementedError

    def apply_sqrt(self, v):
        raise NotImplementedError

    def apply_inv_sqrt(self, v):
        raise NotImplementedError

    def _check_dense_size(self):
        if self.dim > MAX_DENSE_DIM:
            raise MemoryError(f"refusing to materialize a {self.dim}x{self.dim} operator")

    def dense(self):
        self._check_dense_size()
        C = self.apply(np.eye(self.dim))
        return 0.5 * (C + C.T)

    def dense_inverse(self):
        self._check_dense_size()
        C = self.apply_inverse(np.eye(self.dim))
        return 0.5 * (C + C.T)

    def dense_sqrt(self):
        self._check_dense_size()
        return self.apply_sqrt(np.eye(self.dim))

    def precision(self):
        return PrecisionOperator(self)

    def as_operator(self):
        return _CovarianceAction(self)


class _CovarianceAction(SymmetricOperator):
    def __init__(self, cov):
        self.cov = cov
        self.dim = cov.dim

    def apply(self, v):
        return self.cov.apply(v)

    def dense(self):
        return self.cov.dense()


class ScaledIdentityCovariance(CovarianceOperator):
    """C = scale * I.

    A zero scale is accepted as a degenerate hook for zero-variance
    perturbations; only ``apply`` and ``apply_sqrt`` are then defined.
    """

    kind = "scaled-identity"

    def __init__(self, dim, scale=1.0):
        if dim < 1:
            raise DimensionError("dimension must be positive")
        if scale < 0 or not np.isfinite(scale):
            raise ValueError("scale must be finite and nonnegative")
        self.dim = int(dim)
        self.scale = float(scale)

    def _nonzero_scale(self):
        if self.scale == 0.0:
            raise SingularOperatorError("zero covariance has no inverse")
        return self.scale

    def apply(self, v):
        return self.scale * np.asarray(v, dtype=float)

    def apply_inverse(self, v):
        return np.asarray(v, dtype=float) / self._nonzero_scale()

    def apply_sqrt(self, v):
        return np.sqrt(self.scale) * np.asarray(v, dtype=float)

    def apply_inv_sqrt(self, v):
        return np.asarray(v, dtype=float) / np.sqrt(self._nonzero_scale())

    def dense(self):
        return self.scale * np.eye(self.dim)

    def dense_inverse(self):
        return np.eye(self.dim) / self._nonzero_scale()

    def dense_sqrt(self):
        return np.sqrt(self.scale) * np.eye(self.dim)

    def precision(self):
        return ScaledIdentityOperator(self.dim, 1.0 / self._nonzero_scale())

    def as_operator(self):
        return ScaledIdentityOperator(self.dim, self.scale)


class DenseCovariance(CovarianceOperator):
    """Covariance given as an explicit SPD matrix.

    The square root is the symmetric one, computed from an eigendecomposition.
    """

    kind = "dense"

    def __init__(self, C):
        C = np.array(C, dtype=float, ndmin=2)
        if C.shape[0] != C.shape[1]:
            raise DimensionError("covariance must be square")
        if not np.allclose(C, C.T, rtol=1e-12, atol=1e-14 * np.abs(C).max()):
            raise ValueError("covariance must be symmetric")
        C = 0.5 * (C + C.T)
        w, V = np.linalg.eigh(C)
        if w[0] <= 0:
            raise ValueError("covariance must be positive definite")
        self.dim = C.shape[0]
        self.C = C
        self._w = w
        self._V = V
        self._sqrt = (V * np.sqrt(w)) @ V.T
        self._inv_sqrt = (V / np.sqrt(w)) @ V.T
        self._inv = (V / w) @ V.T
        self._chol = sla.cho_factor(C, lower=True)

    def apply(self, v):
        return self.C @ np.asarray(v, dtype=float)

    def apply_inverse(self, v):
        return sla.cho_solve(self._chol, np.asarray(v, dtype=float))

    def apply_sqrt(self, v):
        return self._sqrt @ np.asarray(v, dtype=float)

    def apply_inv_sqrt(self, v):
        return self._inv_sqrt @ np.asarray(v, dtype=float)

    def dense(self):
        return self.C.copy()

    def dense_inverse(self):
        return self._inv.copy()

    def dense_sqrt(self):
        return self._sqrt.copy()

    def eigenvalues(self):
        return self._w.copy()


# ---------------------------------------------------------------------------
# Parameter-to-observable maps
# ---------------------------------------------------------------------------


class PtoMap:
    """Parameter-to-observable map F with Jacobian actions.

    ``jvp`` and ``vjp`` accept a single direction or a block of columns.
    Subclasses may provide ``jacobian(u)`` returning a dense k x n matrix when
    that is cheaper than repeated actions.
    """

    n = 0
    k = 0
    is_linear = False
    matrix = None

    def forward(self, u):
        raise NotImplementedError

    def jvp(self, u, v):
        raise NotImplementedError

    def vjp(self, u, w):
        raise NotImplementedError

    def jacobian(self, u):
        return None


class LinearPto(PtoMap):
    """F(u) = A u for a dense array or scipy sparse matrix A."""

    is_linear = True

    def __init__(self, A):
        if not sp.issparse(A):
            A = np.array(A, dtype=float, ndmin=2)
        else:
            A = sp.csr_matrix(A, dtype=float)
        self.matrix = A
        self.k, self.n = A.shape

    def forward(self, u):
        return self.matrix @ np.asarray(u, dtype=float)

    def jvp(self, u, v):
        return self.matrix @ np.asarray(v, dtype=float)

    def vjp(self, u, w):
        return self.matrix.T @ np.asarray(w, dtype=float)

    def jacobian(self, u):
        A = self.matrix
        return A.toarray() if sp.issparse(A) else A


class AsNonlinear(PtoMap):
    """Wrap a map so that solvers treat it as nonlinear."""

    is_linear = False

    def __init__(self, pto):
        self.pto = pto
        self.n, self.k = pto.n, pto.k

    def forward(self, u):
        return self.pto.forward(u)

    def jvp(self, u, v):
        return self.pto.jvp(u, v)

    def vjp(self, u, w):
        return self.pto.vjp(u, w)

    def jacobian(self, u):
        return self.pto.jacobian(u)


class StateCache:
    """Small thread-safe LRU cache keyed by the bytes of a parameter vector."""

    def __init__(self, size=4):
        self.size = size
        self._data = OrderedDict()
        self._lock = threading.Lock()

    def get(self, u, compute):
        key = np.ascontiguousarray(u, dtype=float).tobytes()
        with self._lock:
            if key in self._data:
                self._data.move_to_end(key)
                return self._data[key]
        value = compute(u)
        with self._lock:
            self._data[key] = value
            while len(self._data) > self.size:
                self._data.popitem(last=False)
        return value


# ---------------------------------------------------------------------------
# Problem and result containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InverseProblem:
    """Data, prior mean, covariances and forward map of one inverse problem.

    ``solver`` selects the default path for linear solves: ``"direct"``
    (Cholesky of the dense normal matrix) or ``"cg"`` (matrix-free CG).
    """

    pto: PtoMap
    d: np.ndarray
    u0: np.ndarray
    noise_cov: CovarianceOperator
    prior_cov: CovarianceOperator
    solver: str = "direct"
    name: str = ""

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float)
        u0 = np.asarray(self.u0, dtype=float)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "u0", u0)
        if d.shape != (self.pto.k,):
            raise DimensionError(f"data has shape {d.shape}, expected ({self.pto.k},)")
        if u0.shape != (self.pto.n,):
            raise DimensionError(f"prior mean has shape {u0.shape}, expected ({self.pto.n},)")
        if self.noise_cov.dim != self.pto.k:
            raise DimensionError("noise covariance size does not match the data")
        if self.prior_cov.dim != self.pto.n:
            raise DimensionError("prior covariance size does not match the parameter")
        if self.solver not in ("direct", "cg"):
            raise ValueError("solver must be 'direct' or 'cg'")

    @property
    def n(self):
        return self.pto.n

    @property
    def k(self):
        return self.pto.k


@dataclass
class SolveResult:
    """Estimate plus diagnostics.  ``flags`` collects non-fatal conditions."""

    estimate: np.ndarray
    objective_value: float
    iterations: int
    final_gradient_norm: float
    N: int = 0
    M: int = 0
    wall_time_ms: float = 0.0
    seed: int = 0
    flags: set = field(default_factory=set)
    samples: np.ndarray = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.estimate = np.asarray(self.estimate, dtype=float)
        if not np.all(np.isfinite(self.estimate)):
            raise FloatingPointError("solver produced a non-finite estimate")

    @property
    def converged(self):
        return "not_converged" not in self.flags


# ---------------------------------------------------------------------------
# Objectives
# ---------------------------------------------------------------------------


class SampledObjective:
    """J(u) = 1/2 |d_s - F(u)|^2_W - F(u)^T e + 1/2 |u - u_s|^2_P - u^T z + const.

    With W = L^-1, P = Gamma^-1, d_s = d, u_s = u0 and e = z = 0 this is the
    MAP cost.  The randomized methods plug in sample averages for W, P, the
    shifts and the cross terms e, z.  The constant is dropped when e or z
    is present.
    """

    def __init__(self, pto, W, d_shift, P, u_shift, e=None, z=None):
        self.pto = pto
        self.W = W
        self.P = P
        self.d_shift = np.asarray(d_shift, dtype=float)
        self.u_shift = np.asarray(u_shift, dtype=float)
        self.e = None if e is None else np.asarray(e, dtype=float)
        self.z = None if z is None else np.asarray(z, dtype=float)

    @classmethod
    def map_objective(cls, p):
        return cls(p.pto, p.noise_cov.precision(), p.d, p.prior_cov.precision(), p.u0)

    def value(self, u):
        r = self.d_shift - self.pto.forward(u)
        s = u - self.u_shift
        val = 0.5 * r @ self.W.apply(r) + 0.5 * s @ self.P.apply(s)
        if self.e is not None:
            val -= self.pto.forward(u) @ self.e
        if self.z is not None:
            val -= u @ self.z
        return float(val)

    def residual_weight(self, u):
        """W (F(u) - d_s) - e, the data-space factor of the gradient."""
        w = self.W.apply(self.pto.forward(u) - self.d_shift)
        if self.e is not None:
            w = w - self.e
        return w

    def gradient(self, u):
        g = self.pto.vjp(u, self.residual_weight(u)) + self.P.apply(u - self.u_shift)
        if self.z is not None:
            g = g - self.z
        return g

    def gn_apply(self, u, v):
        return self.pto.vjp(u, self.W.apply(self.pto.jvp(u, v))) + self.P.apply(v)


def _check_parameter(p, u):
    u = np.asarray(u, dtype=float)
    if u.shape != (p.n,):
        raise DimensionError(f"parameter has shape {u.shape}, expected ({p.n},)")
    return u


def evaluate_cost(p, u):
    """MAP cost 1/2 |d - F(u)|^2_{L^-1} + 1/2 |u - u0|^2_{Gamma^-1}."""
    u = _check_parameter(p, u)
    return SampledObjective.map_objective(p).value(u)


def evaluate_gradient(p, u):
    """Gradient J'(u) = F'(u)^T L^-1 (F(u) - d) + Gamma^-1 (u - u0)."""
    u = _check_parameter(p, u)
    return SampledObjective.map_objective(p).gradient(u)


# ---------------------------------------------------------------------------
# Conjugate gradients
# ---------------------------------------------------------------------------


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual_norm: np.ndarray
    converged: bool


def cg_solve(apply_H, b, tol=1e-8, max_iter=500, x0=None, precond=None):
    """Conjugate gradients for H x = b with H symmetric positive semidefinite.

    ``b`` may be a block of right-hand sides; each column is an independent
    CG run sharing the operator applications.  Stops when every column has
    ||H x - b|| <= tol ||b||.  If ``max_iter`` is reached the iterate with the
    smallest residual is returned and ``converged`` is False.
    """
    b = np.asarray(b, dtype=float)
    vector = b.ndim == 1
    B = _as_block(b)
    user_H = apply_H
    # keep the caller's shape convention: vectors in, vectors out
    apply_H = (lambda X: user_H(X[:, 0])) if vector else user_H
    if x0 is None:
        X = np.zeros_like(B)
        R = B.copy()
    else:
        X = _as_block(x0).astype(float, copy=True)
        R = B - _as_block(apply_H(X))
    if precond is not None and vector:
        user_M = precond
        precond = lambda X: user_M(X[:, 0])
    Z = R if precond is None else _as_block(precond(R))
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    thresh = tol * np.linalg.norm(B, axis=0)
    rnorm = np.linalg.norm(R, axis=0)
    best_X, best_r = X.copy(), rnorm.copy()
    active = rnorm > thresh
    it = 0
    while active.any() and it < max_iter:
        HP = _as_block(apply_H(P))
        pHp = np.einsum("ij,ij->j", P, HP)
        if not np.all(np.isfinite(pHp[active])):
            raise NotSPDError("NaN encountered in CG; operator is not SPD")
        if np.any(pHp[active] <= 0):
            raise NotSPDError("non-positive curvature in CG; operator is not SPD")
        alpha = np.where(active, rz / np.where(active, pHp, 1.0), 0.0)
        X += alpha * P
        R -= alpha * HP
        it += 1
        rnorm = np.linalg.norm(R, axis=0)
        better = rnorm < best_r
        best_X[:, better] = X[:, better]
        best_r[better] = rnorm[better]
        active &= rnorm > thresh
        Z = R if precond is None else _as_block(precond(R))
        rz_new = np.einsum("ij,ij->j", R, Z)
        beta = np.where(active & (rz != 0), rz_new / np.where(rz != 0, rz, 1.0), 0.0)
        P = Z + beta * P
        rz = rz_new
    converged = bool(np.all(rnorm <= thresh))
    if not converged:
        X, rnorm = best_X, best_r
    return CGResult(X[:, 0] if vector else X, it, rnorm[0] if vector else rnorm, converged)


# ---------------------------------------------------------------------------
# Linear normal equations
# ---------------------------------------------------------------------------


class NormalSystem:
    """The system (A^T W A + P) u = A^T (W d_s + e) + P u_s + z for linear F.

    ``method`` is ``"direct"`` (Cholesky, with a CG fallback when the matrix
    is numerically singular) or ``"cg"``.  The Cholesky factor is computed
    once and reused for every right-hand side.
    """

    def __init__(self, pto, W, P, method="direct", tol=1e-8, max_iter=500):
        if not pto.is_linear:
            raise ValueError("normal equations need a linear map")
        if method not in ("direct", "cg"):
            raise ValueError("method must be 'direct' or 'cg'")
        if method == "direct" and (pto.matrix is None or pto.n > MAX_DENSE_DIM):
            method = "cg"
        self.pto, self.W, self.P = pto, W, P
        self.method = method
        self.tol, self.max_iter = tol, max_iter
        self.flags = set()
        self._factor = None
        self._H = None
        if method == "direct":
            H = W.congruence(pto.matrix) + P.dense()
            self._H = 0.5 * (H + H.T)
            try:
                self._factor = sla.cho_factor(self._H, lower=True)
            except np.linalg.LinAlgError:
                self.method = "cg"
                self.flags.add("singular_normal_matrix")

    def apply(self, v):
        if self._H is not None:
            return self._H @ v
        return self.pto.vjp(None, self.W.apply(self.pto.jvp(None, v))) + self.P.apply(v)

    def rhs(self, d_shift, u_shift, e=None, z=None):
        w = self.W.apply(d_shift)
        if e is not None:
            w = w + _match(e, w)
        b = self.pto.vjp(None, w) + self.P.apply(u_shift)
        if z is not None:
            b = b + _match(z, b)
        return b

    def solve(self, b, x0=None):
        """Return (u, iterations, residual norms); sets flags on failure."""
        if self._factor is not None:
            u = sla.cho_solve(self._factor, b)
            res = np.linalg.norm(_as_block(self.apply(u) - b), axis=0)
            return u, 1, res
        out = cg_solve(self.apply, b, tol=self.tol, max_iter=self.max_iter, x0=x0)
        if not out.converged:
            self.flags.add("not_converged")
        return out.x, out.iterations, np.atleast_1d(out.residual_norm)


def _match(v, like):
    v = np.asarray(v, dtype=float)
    return v[:, None] if like.ndim == 2 and v.ndim == 1 else v


def _default_method(p, method):
    return p.solver if method is None else method


def map_solve_linear_form1(p, method=None, tol=1e-8, max_iter=500):
    """u = (A^T L^-1 A + Gamma^-1)^-1 (A^T L^-1 d + Gamma^-1 u0)."""
    if not p.pto.is_linear:
        raise ValueError("form 1 needs a linear map")
    t0 = time.perf_counter()
    system = NormalSystem(p.pto, p.noise_cov.precision(), p.prior_cov.precision(),
                          method=_default_method(p, method), tol=tol, max_iter=max_iter)
    b = system.rhs(p.d, p.u0)
    u, its, res = system.solve(b)
    info = {"method": system.method, "rhs_norm": float(np.linalg.norm(b))}
    return SolveResult(u, evaluate_cost(p, u), its, float(res[0]),
                       wall_time_ms=1e3 * (time.perf_counter() - t0),
                       flags=set(system.flags), info=info)


def map_solve_linear_form2(p):
    """u = u0 + Gamma A^T (L + A Gamma A^T)^-1 (d - A u0)."""
    if not p.pto.is_linear:
        raise ValueError("form 2 needs a linear map")
    t0 = time.perf_counter()
    A = p.pto.matrix
    A = A.toarray() if sp.issparse(A) else A
    GAt = p.prior_cov.apply(A.T)
    C = p.noise_cov.dense() + A @ GAt
    try:
        factor = sla.cho_factor(0.5 * (C + C.T), lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularOperatorError("L + A Gamma A^T is singular") from exc
    u = p.u0 + GAt @ sla.cho_solve(factor, p.d - A @ p.u0)
    g = evaluate_gradient(p, u)
    return SolveResult(u, evaluate_cost(p, u), 1, float(np.linalg.norm(g)),
                       wall_time_ms=1e3 * (time.perf_counter() - t0),
                       info={"method": "woodbury"})


# ---------------------------------------------------------------------------
# Gauss-Newton
# ---------------------------------------------------------------------------


@dataclass
class GaussNewtonOptions:
    tol_rel: float = 1e-6
    tol_abs: float = 0.0
    max_iter: int = 100
    armijo_c: float = 1e-4
    max_backtracks: int = 30
    cg_tol: float = 1e-8
    cg_max_iter: int = 500
    dense: str = "auto"  # "auto", "always" or "never"


def _gn_step(obj, u, g, P_dense, opts, eta):
    J = obj.pto.jacobian(u) if opts.dense != "never" else None
    if J is not None and P_dense is not None:
        H = obj.W.congruence(J) + P_dense
        H = 0.5 * (H + H.T)
        try:
            return -sla.cho_solve(sla.cho_factor(H, lower=True), g), 1, set()
        except np.linalg.LinAlgError:
            out = cg_solve(lambda v: H @ v, -g, tol=opts.cg_tol, max_iter=opts.cg_max_iter)
            return out.x, out.iterations, {"singular_gn_hessian"}
    out = cg_solve(lambda v: obj.gn_apply(u, v), -g, tol=eta, max_iter=opts.cg_max_iter)
    return out.x, out.iterations, set()


def gauss_newton(obj, u_init, opts=None):
    """Minimize a :class:`SampledObjective` by Gauss-Newton with Armijo backtracking.

    Returns a :class:`SolveResult`; ``info["objective_history"]`` holds the
    objective after every accepted step.  Hitting the iteration cap or a
    failed line search sets a flag instead of raising.
    """
    opts = opts or GaussNewtonOptions()
    t0 = time.perf_counter()
    u = np.array(u_init, dtype=float)
    f = obj.value(u)
    g = obj.gradient(u)
    g0 = np.linalg.norm(g)
    gnorm = g0
    history = [f]
    flags = set()
    P_dense = None
    if opts.dense != "never" and obj.pto.n <= MAX_DENSE_DIM:
        P_dense = obj.P.dense()
    inner = 0
    it = 0
    converged = gnorm <= opts.tol_abs + opts.tol_rel * g0
    while not converged and it < opts.max_iter:
        eta = min(0.5, np.sqrt(gnorm / g0)) if g0 > 0 else 0.5
        step, inner_its, step_flags = _gn_step(obj, u, g, P_dense, opts, eta)
        flags |= step_flags
        inner += inner_its
        slope = g @ step
        if not slope < 0:
            step = -g
            slope = -gnorm**2
        t = 1.0
        for _ in range(opts.max_backtracks):
            f_new = obj.value(u + t * step)
            if f_new <= f + opts.armijo_c * t * slope:
                break
            t *= 0.5
        else:
            flags.add("line_search_failed")
            break
        u = u + t * step
        f = f_new
        g = obj.gradient(u)
        gnorm = np.linalg.norm(g)
        history.append(f)
        it += 1
        converged = gnorm <= opts.tol_abs + opts.tol_rel * g0
    if not converged:
        flags.add("not_converged")
    return SolveResult(u, f, it, float(gnorm),
                       wall_time_ms=1e3 * (time.perf_counter() - t0), flags=flags,
                       info={"objective_history": history, "inner_iterations": inner,
                             "initial_gradient_norm": float(g0)})


def map_solve_nonlinear(p, opts=None, u_init=None):
    """MAP point of a (possibly nonlinear) problem by Gauss-Newton."""
    obj = SampledObjective.map_objective(p)
    res = gauss_newton(obj, p.u0 if u_init is None else u_init, opts)
    res.objective_value = evaluate_cost(p, res.estimate)
    return res


def map_solve(p, method=None, tol=1e-8, max_iter=500, gn_options=None):
    """Deterministic MAP point: form 1 for linear maps, Gauss-Newton otherwise."""
    if p.pto.is_linear:
        return map_solve_linear_form1(p, method=method, tol=tol, max_iter=max_iter)
    return map_solve_nonlinear(p, gn_options)
