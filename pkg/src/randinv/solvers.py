"""Randomized solution methods built on sample average approximations.

Each solver takes an :class:`~randinv.core.InverseProblem` and a
:class:`~randinv.randomize.RandomizationPlan`.  Variables whose flag is off
in the plan are replaced by their exact moments (zero perturbations, exact
weights), which makes every method reduce to the MAP point.
"""

import enum
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .core import (
    GaussNewtonOptions,
    LowRankOperator,
    NormalSystem,
    SampledObjective,
    SingularOperatorError,
    SolveResult,
    evaluate_cost,
    gauss_newton,
    map_solve,
)
from .randomize import SketchDistribution, draw_perturbations, draw_sketch


class BudgetError(RuntimeError):
    """Raised when a nested variant would exceed its configured inner cost."""


class MethodId(enum.Enum):
    MAP = "MAP"
    RMAP = "RMAP"
    RMA = "RMA"
    RMA_RMAP_JOINT = "RMA+RMAP"
    RMA_RMAP_V1 = "RMA+RMAP_V1"
    RMA_RMAP_V2 = "RMA+RMAP_V2"
    RS_U1 = "RS_U1"
    RS = "RS"
    ENKF = "ENKF"
    ALL = "ALL"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).strip().upper().replace("-", "_")
        aliases = {"RMA+RMAP": "RMA_RMAP_JOINT", "RMA_RMAP": "RMA_RMAP_JOINT",
                   "RMA+RMAP_V1": "RMA_RMAP_V1", "RMA+RMAP_V2": "RMA_RMAP_V2",
                   "RMA+RMAP_JOINT": "RMA_RMAP_JOINT", "ENKF": "ENKF"}
        key = aliases.get(key, key)
        try:
            return cls[key]
        except KeyError:
            raise ValueError(f"unknown method {name!r}") from None


_VARIABLES = {
    MethodId.MAP: (),
    MethodId.RMAP: ("sigma", "delta"),
    MethodId.RMA: ("eps",),
    MethodId.RMA_RMAP_JOINT: ("sigma", "eps", "delta"),
    MethodId.RMA_RMAP_V1: ("sigma", "eps", "delta"),
    MethodId.RMA_RMAP_V2: ("sigma", "eps", "delta"),
    MethodId.RS_U1: ("lambda",),
    MethodId.RS: ("omega",),
    MethodId.ENKF: ("omega", "sigma", "delta"),
    MethodId.ALL: ("sigma", "eps", "delta", "lambda"),
}


def method_variables(method):
    """Names of the random variables a method samples."""
    return _VARIABLES[MethodId.parse(method)]


def relative_error(u, ref):
    """100 * ||u - ref|| / ||ref||."""
    ref = np.asarray(ref, dtype=float)
    nref = np.linalg.norm(ref)
    if nref == 0:
        raise ZeroDivisionError("reference has zero norm")
    return 100.0 * float(np.linalg.norm(np.asarray(u, dtype=float) - ref) / nref)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _dist(plan):
    return plan.distribution or SketchDistribution("gaussian")


def _perturb(plan, flag, cov, count, tag, threads):
    """Perturbation samples (dim x count), zeros when the variable is off."""
    if not flag:
        return np.zeros((cov.dim, count))
    return draw_perturbations(cov, count, plan.seed, tag, _dist(plan), threads).samples


def _eps_weight(p, plan, threads, tag="eps"):
    """Misfit weight: sketched S_N when eps is randomized, L^-1 otherwise."""
    if plan.randomize_eps:
        E = draw_sketch(_dist(plan), p.noise_cov, "precision", plan.N, plan.seed, tag, threads)
        return LowRankOperator(E.columns)
    return p.noise_cov.precision()


def _lambda_weight(p, plan, threads):
    if plan.randomize_lambda:
        Lam = draw_sketch(_dist(plan), p.prior_cov, "precision", plan.N, plan.seed, "lambda", threads)
        return LowRankOperator(Lam.columns)
    return p.prior_cov.precision()


def _finish(p, u, t0, plan, its, gnorm, flags, samples=None, info=None, M=0):
    return SolveResult(u, evaluate_cost(p, u), int(its), float(gnorm), N=plan.N, M=M,
                       wall_time_ms=1e3 * (time.perf_counter() - t0), seed=plan.seed,
                       flags=set(flags), samples=samples, info=info or {})


def _linear_method(p, opts):
    return opts.get("linear_solver") or p.solver


def _solve_objective(p, plan, obj, t0, opts, force_cg=False, extra_flags=()):
    """Minimize one sampled objective, linear or nonlinear."""
    flags = set(extra_flags)
    if p.pto.is_linear:
        method = "cg" if force_cg else _linear_method(p, opts)
        system = NormalSystem(p.pto, obj.W, obj.P, method=method,
                              tol=opts.get("tol", 1e-8), max_iter=opts.get("max_iter", 500))
        b = system.rhs(obj.d_shift, obj.u_shift, obj.e, obj.z)
        u, its, res = system.solve(b)
        flags |= system.flags
        return _finish(p, u, t0, plan, its, res[0], flags, info={"method": system.method})
    res = gauss_newton(obj, opts.get("u_init", p.u0), opts.get("gn_options"))
    flags |= res.flags
    return _finish(p, res.estimate, t0, plan, res.iterations, res.final_gradient_norm, flags,
                   info=res.info)


# ---------------------------------------------------------------------------
# methods
# ---------------------------------------------------------------------------


def solve_rmap(p, plan, *, sigma_cov=None, delta_cov=None, return_samples=False,
               skip_failed=False, threads=1, **opts):
    """Average of N MAP problems with perturbed data d + sigma_i and prior mean u0 + delta_i.

    For a linear map the samples are exact posterior samples when the
    perturbations are Gaussian with covariances L and Gamma.  On the direct
    path the normal matrix is factored once; on the CG path only the averaged
    right-hand side is solved unless samples are requested.
    """
    t0 = time.perf_counter()
    N = plan.N
    sig = _perturb(plan, plan.randomize_sigma, sigma_cov or p.noise_cov, N, "sigma", threads)
    dlt = _perturb(plan, plan.randomize_delta, delta_cov or p.prior_cov, N, "delta", threads)
    Lp, Gp = p.noise_cov.precision(), p.prior_cov.precision()

    if p.pto.is_linear:
        system = NormalSystem(p.pto, Lp, Gp, method=_linear_method(p, opts),
                              tol=opts.get("tol", 1e-8), max_iter=opts.get("max_iter", 500))
        flags = set()
        if system.method == "cg" and not return_samples:
            b = system.rhs(p.d + sig.mean(axis=1), p.u0 + dlt.mean(axis=1))
            u, its, res = system.solve(b)
            flags |= system.flags
            return _finish(p, u, t0, plan, its, res[0], flags, info={"method": "cg"})
        chunk = opts.get("chunk", 512)
        total = np.zeros(p.n)
        samples = np.empty((p.n, N)) if return_samples else None
        its_total, worst = 0, 0.0
        for j0 in range(0, N, chunk):
            j1 = min(N, j0 + chunk)
            b = system.rhs(p.d[:, None] + sig[:, j0:j1], p.u0[:, None] + dlt[:, j0:j1])
            U, its, res = system.solve(b)
            its_total = max(its_total, its)
            worst = max(worst, float(np.max(res)))
            total += U.sum(axis=1)
            if samples is not None:
                samples[:, j0:j1] = U
        flags |= system.flags
        return _finish(p, total / N, t0, plan, its_total, worst, flags, samples,
                       info={"method": system.method})

    def one(i):
        obj = SampledObjective(p.pto, Lp, p.d + sig[:, i], Gp, p.u0 + dlt[:, i])
        return gauss_newton(obj, opts.get("u_init", p.u0), opts.get("gn_options"))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, range(N)))
    else:
        results = [one(i) for i in range(N)]
    failed = [i for i, r in enumerate(results) if not r.converged]
    flags = set().union(*(r.flags for r in results))
    keep = [r for i, r in enumerate(results) if not (skip_failed and i in set(failed))]
    if skip_failed and failed:
        flags.discard("not_converged")
        flags.add("skipped_samples")
    if not keep:
        raise RuntimeError("every RMAP sample failed to converge")
    U = np.column_stack([r.estimate for r in keep])
    return _finish(p, U.mean(axis=1), t0, plan, max(r.iterations for r in results),
                   max(r.final_gradient_norm for r in keep), flags,
                   U if return_samples else None,
                   info={"failed_samples": failed})


def solve_rma(p, plan, *, threads=1, **opts):
    """Minimize 1/2 |E^T (d - F(u))|^2 + 1/2 |u - u0|^2_{Gamma^-1} with a misfit sketch E."""
    t0 = time.perf_counter()
    obj = SampledObjective(p.pto, _eps_weight(p, plan, threads), p.d,
                           p.prior_cov.precision(), p.u0)
    return _solve_objective(p, plan, obj, t0, opts)


def solve_rma_rmap(p, plan, variant="joint", *, sigma_cov=None, delta_cov=None,
                   max_inner_cost=10**7, threads=1, **opts):
    """Combined misfit sketching and data/prior-mean perturbation.

    ``joint`` minimizes the sample average over paired draws
    (eps_i, sigma_i, delta_i) of the per-sample cost.  ``v1`` averages N
    solves that each use one sketch column.  ``v2`` averages M outer
    (sigma, delta) draws of solves that share one N-column sketch.
    """
    t0 = time.perf_counter()
    sigma_cov = sigma_cov or p.noise_cov
    delta_cov = delta_cov or p.prior_cov
    Gp = p.prior_cov.precision()
    if variant == "joint":
        sig = _perturb(plan, plan.randomize_sigma, sigma_cov, plan.N, "sigma", threads)
        dlt = _perturb(plan, plan.randomize_delta, delta_cov, plan.N, "delta", threads)
        if plan.randomize_eps:
            E = draw_sketch(_dist(plan), p.noise_cov, "precision", plan.N, plan.seed, "eps", threads)
            W = LowRankOperator(E.columns)
            # (1/N) sum eps_i eps_i^T sigma_i with columns already scaled by 1/sqrt(N)
            e = E.columns @ np.einsum("ij,ij->j", E.columns, sig)
        else:
            W = p.noise_cov.precision()
            e = W.apply(sig.mean(axis=1))
        obj = SampledObjective(p.pto, W, p.d, Gp, p.u0 + dlt.mean(axis=1), e=e)
        return _solve_objective(p, plan, obj, t0, opts)
    if variant == "v1":
        return _rma_rmap_v1(p, plan, sigma_cov, delta_cov, t0, threads, opts)
    if variant == "v2":
        M = plan.outer
        if M * plan.N > max_inner_cost:
            raise BudgetError(f"M*N = {M * plan.N} exceeds the inner-cost budget {max_inner_cost}")
        sig = _perturb(plan, plan.randomize_sigma, sigma_cov, M, "sigma", threads)
        dlt = _perturb(plan, plan.randomize_delta, delta_cov, M, "delta", threads)
        W = _eps_weight(p, plan, threads)
        if p.pto.is_linear:
            system = NormalSystem(p.pto, W, Gp, method=_linear_method(p, opts),
                                  tol=opts.get("tol", 1e-8), max_iter=opts.get("max_iter", 500))
            U, its, res = system.solve(system.rhs(p.d[:, None] + sig, p.u0[:, None] + dlt))
            U = U.reshape(p.n, M)
            return _finish(p, U.mean(axis=1), t0, plan, its, float(np.max(res)), system.flags,
                           info={"method": system.method}, M=M)
        results = [gauss_newton(SampledObjective(p.pto, W, p.d + sig[:, i], Gp, p.u0 + dlt[:, i]),
                                opts.get("u_init", p.u0), opts.get("gn_options"))
                   for i in range(M)]
        U = np.column_stack([r.estimate for r in results])
        flags = set().union(*(r.flags for r in results))
        return _finish(p, U.mean(axis=1), t0, plan, max(r.iterations for r in results),
                       max(r.final_gradient_norm for r in results), flags, M=M)
    raise ValueError(f"unknown variant {variant!r}")


def _rma_rmap_v1(p, plan, sigma_cov, delta_cov, t0, threads, opts):
    N = plan.N
    sig = _perturb(plan, plan.randomize_sigma, sigma_cov, N, "sigma", threads)
    dlt = _perturb(plan, plan.randomize_delta, delta_cov, N, "delta", threads)
    Gp = p.prior_cov.precision()
    if not plan.randomize_eps:
        # every inner problem keeps the exact misfit weight
        plan_rmap = plan
        return solve_rmap(p, plan_rmap, sigma_cov=sigma_cov, delta_cov=delta_cov,
                          threads=threads, **opts)
    E = draw_sketch(_dist(plan), p.noise_cov, "precision", N, plan.seed, "eps", threads)
    eps = E.columns * np.sqrt(N)
    if p.pto.is_linear:
        # Rank-one misfit: (a a^T + Gamma^-1)^-1 by Sherman-Morrison, a = A^T eps_i.
        a = p.pto.vjp(None, eps)
        Ga = p.prior_cov.apply(a)
        s = np.einsum("ij,ij->j", eps, p.d[:, None] + sig)
        Gb = Ga * s + (p.u0[:, None] + dlt)
        U = Gb - Ga * (np.einsum("ij,ij->j", a, Gb) / (1.0 + np.einsum("ij,ij->j", a, Ga)))
        # gradient of each one-column objective at its solution
        G = a * (np.einsum("ij,ij->j", a, U) - s) + p.prior_cov.apply_inverse(U - p.u0[:, None] - dlt)
        gnorm = float(np.linalg.norm(G, axis=0).max())
        return _finish(p, U.mean(axis=1), t0, plan, 1, gnorm, set(), info={"method": "rank-one"})
    results = []
    for i in range(N):
        W = LowRankOperator(eps[:, i:i + 1])
        obj = SampledObjective(p.pto, W, p.d + sig[:, i], Gp, p.u0 + dlt[:, i])
        results.append(gauss_newton(obj, opts.get("u_init", p.u0), opts.get("gn_options")))
    U = np.column_stack([r.estimate for r in results])
    flags = set().union(*(r.flags for r in results))
    return _finish(p, U.mean(axis=1), t0, plan, max(r.iterations for r in results),
                   max(r.final_gradient_norm for r in results), flags)


def solve_rs_u1(p, plan, *, threads=1, **opts):
    """Minimize 1/2 |d - F(u)|^2_{L^-1} + 1/2 |Lambda^T (u - u0)|^2 with a prior-precision sketch.

    With N < n the sketched regularizer is singular; the solve then uses CG,
    which regularizes by early termination, and the result is flagged
    ``rank_deficient_prior``.
    """
    t0 = time.perf_counter()
    deficient = plan.randomize_lambda and plan.N < p.n
    obj = SampledObjective(p.pto, p.noise_cov.precision(), p.d, _lambda_weight(p, plan, threads), p.u0)
    return _solve_objective(p, plan, obj, t0, opts, force_cg=deficient,
                            extra_flags={"rank_deficient_prior"} if deficient else ())


def solve_all(p, plan, *, sigma_cov=None, delta_cov=None, threads=1, **opts):
    """Minimize 1/2 |d + mean(sigma) - F(u)|^2_{S_N} + 1/2 |u - u0 - mean(delta)|^2_{L_N}."""
    t0 = time.perf_counter()
    sig = _perturb(plan, plan.randomize_sigma, sigma_cov or p.noise_cov, plan.N, "sigma", threads)
    dlt = _perturb(plan, plan.randomize_delta, delta_cov or p.prior_cov, plan.N, "delta", threads)
    deficient = plan.randomize_lambda and plan.N < p.n
    obj = SampledObjective(p.pto, _eps_weight(p, plan, threads), p.d + sig.mean(axis=1),
                           _lambda_weight(p, plan, threads), p.u0 + dlt.mean(axis=1))
    return _solve_objective(p, plan, obj, t0, opts, force_cg=deficient,
                            extra_flags={"rank_deficient_prior"} if deficient else ())


def _omega(p, plan, threads):
    if plan.randomize_omega:
        return draw_sketch(_dist(plan), p.prior_cov, "cov", plan.N, plan.seed, "omega", threads).columns
    return None


class _Gain:
    """Kalman-type gain K = C_ur (L + C_rr)^-1 with sketched or exact prior covariance.

    Calling it applies K to a data-space block; ``residual`` holds the largest
    residual norm of the last data-space solve.
    """

    def __init__(self, p, Omega, J):
        Jd = J.toarray() if sp.issparse(J) else np.asarray(J)
        if Omega is None:
            GJt = p.prior_cov.apply(Jd.T)
            self.left, C = GJt, Jd @ GJt
        else:
            AO = Jd @ Omega
            self.left, C = Omega @ AO.T, AO @ AO.T
        C = p.noise_cov.dense() + C
        self.C = 0.5 * (C + C.T)
        try:
            self.factor = sla.cho_factor(self.C, lower=True)
        except np.linalg.LinAlgError as exc:
            raise SingularOperatorError("the data-space system of the sketched gain is singular") from exc
        self.residual = 0.0

    def __call__(self, r):
        y = sla.cho_solve(self.factor, r)
        res = np.linalg.norm(np.atleast_2d((self.C @ y - r).T), axis=1)
        self.residual = float(res.max())
        return self.left @ y


def _jacobian(p, u):
    J = p.pto.jacobian(u)
    if J is None:
        J = p.pto.jvp(u, np.eye(p.n))
    return J


def _relinearized(p, plan, Omega, u0_eff, d_eff, opts):
    """Gauss-Newton relinearization of the gain update for nonlinear maps.

    Iterates u <- u0 + K(u) (d - F(u) - J(u)(u0 - u)) with the same omega
    ensemble until the update stalls.
    """
    tol = opts.get("relin_tol", 1e-8)
    max_iter = opts.get("relin_max_iter", 50)
    u = np.array(opts.get("u_init", p.u0), dtype=float)
    flags = {"not_converged"}
    its = 0
    K = None
    for its in range(1, max_iter + 1):
        J = _jacobian(p, u)
        K = _Gain(p, Omega, J)
        innov = d_eff - p.pto.forward(u)[:, None] - (J @ (u0_eff - u[:, None]))
        U = u0_eff + K(innov)
        u_new = U.mean(axis=1)
        step = np.linalg.norm(u_new - u)
        u = u_new
        if step <= tol * max(1.0, np.linalg.norm(u)):
            flags = set()
            break
    return u, its, flags, K.residual


def solve_right_sketch(p, plan, *, threads=1, **opts):
    """u0 + Omega (A Omega)^T (L + (A Omega)(A Omega)^T)^-1 (d - A u0).

    Omega holds N prior-covariance draws scaled by 1/sqrt(N).  Nonlinear maps
    use Gauss-Newton relinearization with the ensemble kept fixed.
    """
    t0 = time.perf_counter()
    Omega = _omega(p, plan, threads)
    if p.pto.is_linear:
        K = _Gain(p, Omega, p.pto.matrix)
        u = p.u0 + K(p.d - p.pto.forward(p.u0))
        return _finish(p, u, t0, plan, 1, K.residual, set())
    u, its, flags, res = _relinearized(p, plan, Omega, p.u0[:, None], p.d[:, None], opts)
    return _finish(p, u, t0, plan, its, res, flags)


def solve_enkf(p, plan, *, sigma_cov=None, delta_cov=None, return_samples=False, threads=1, **opts):
    """Ensemble mean of u0_i + K (d_i - A u0_i) over M members with one fixed sketched gain."""
    t0 = time.perf_counter()
    M = plan.outer
    sig = _perturb(plan, plan.randomize_sigma, sigma_cov or p.noise_cov, M, "sigma", threads)
    dlt = _perturb(plan, plan.randomize_delta, delta_cov or p.prior_cov, M, "delta", threads)
    Omega = _omega(p, plan, threads)
    if p.pto.is_linear:
        K = _Gain(p, Omega, p.pto.matrix)
        if return_samples:
            U0 = p.u0[:, None] + dlt
            members = U0 + K(p.d[:, None] + sig - p.pto.forward(U0))
            u = members.mean(axis=1)
        else:
            members = None
            u0m = p.u0 + dlt.mean(axis=1)
            u = u0m + K(p.d + sig.mean(axis=1) - p.pto.forward(u0m))
        return _finish(p, u, t0, plan, 1, K.residual, set(), samples=members, M=M)
    u0m = (p.u0 + dlt.mean(axis=1))[:, None]
    dm = (p.d + sig.mean(axis=1))[:, None]
    u, its, flags, res = _relinearized(p, plan, Omega, u0m, dm, opts)
    return _finish(p, u, t0, plan, its, res, flags, M=M)


def solve_map(p, **opts):
    t0 = time.perf_counter()
    res = map_solve(p, method=opts.get("linear_solver"), tol=opts.get("tol", 1e-8),
                    max_iter=opts.get("max_iter", 500), gn_options=opts.get("gn_options"))
    res.wall_time_ms = 1e3 * (time.perf_counter() - t0)
    return res


def solve(method, p, plan=None, **opts):
    """Dispatch to the solver of ``method``."""
    method = MethodId.parse(method)
    if method is MethodId.MAP:
        return solve_map(p, **opts)
    if plan is None:
        raise ValueError(f"{method.value} needs a randomization plan")
    if method is MethodId.RMAP:
        return solve_rmap(p, plan, **opts)
    if method is MethodId.RMA:
        return solve_rma(p, plan, **opts)
    if method is MethodId.RMA_RMAP_JOINT:
        return solve_rma_rmap(p, plan, "joint", **opts)
    if method is MethodId.RMA_RMAP_V1:
        return solve_rma_rmap(p, plan, "v1", **opts)
    if method is MethodId.RMA_RMAP_V2:
        return solve_rma_rmap(p, plan, "v2", **opts)
    if method is MethodId.RS_U1:
        return solve_rs_u1(p, plan, **opts)
    if method is MethodId.RS:
        return solve_right_sketch(p, plan, **opts)
    if method is MethodId.ENKF:
        return solve_enkf(p, plan, **opts)
    return solve_all(p, plan, **opts)
