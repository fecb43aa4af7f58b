"""Empirical checks of concentration and linear perturbation bounds.

Probabilistic statements are checked as decay of exceedance frequencies in
N, never as exact probabilities, since the absolute constants are unknown.
Deterministic inequalities are checked on every realization.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .core import DimensionError, MAX_DENSE_DIM, SymmetricOperator
from .randomize import (
    RandomizationPlan,
    SketchDistribution,
    SketchEnsemble,
    derive_seed,
    draw_perturbations,
    draw_sketch,
)

# Arithmetic slack for deterministic inequalities.
SLACK = 1e-12


@dataclass
class BoundReport:
    """Outcome of one bound check.

    ``exceed_freq[i]`` is the fraction of ``R`` trials at ``N_grid[i]`` in which
    the deviation exceeded its threshold.  ``envelope`` holds the exponent of
    the theoretical tail (for example beta^2 N) up to the unknown constant.
    ``norms`` holds realized quantities per trial, ``passed`` per property.
    """

    bound_id: str
    beta: float
    N_grid: list
    R: int
    exceed_freq: list = field(default_factory=list)
    envelope: list = field(default_factory=list)
    norms: dict = field(default_factory=dict)
    passed: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    @property
    def ok(self):
        return all(self.passed.values())

    def rows(self):
        ok = self.ok
        if not self.N_grid:
            return [(self.bound_id, "", self.beta, self.R, "", ok)]
        return [(self.bound_id, N, self.beta, self.R, f, ok)
                for N, f in zip(self.N_grid, self.exceed_freq)]


def write_reports_csv(reports, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bound_id", "N", "beta", "R", "exceed_freq", "pass"])
        for rep in reports:
            for bid, N, beta, R, f, ok in rep.rows():
                w.writerow([bid, N, repr(float(beta)), R, "" if f == "" else repr(float(f)),
                            "true" if ok else "false"])


def frequencies_decay(freqs, R):
    """Non-increasing up to one inversion within 2/sqrt(R); last <= first."""
    slack = 2.0 / np.sqrt(R)
    inversions = 0
    for a, b in zip(freqs[:-1], freqs[1:]):
        if b > a:
            if b - a > slack:
                return False
            inversions += 1
    return inversions <= 1 and freqs[-1] <= freqs[0]


def inf_norm(M):
    """Induced infinity norm (maximum absolute row sum)."""
    M = M.toarray() if sp.issparse(M) else np.asarray(M)
    return float(np.abs(M).sum(axis=1).max())


def _check_R(R):
    if R < 100:
        raise ValueError("probabilistic checks need R >= 100 repetitions")


def check_mean_concentration(cov, dist, beta, N_grid, R, seed=0):
    """Frequency of ||mean of N perturbations||_inf > beta ||C^{1/2}||_inf, per N."""
    _check_R(R)
    dist = _as_dist(dist)
    scale = inf_norm(cov.dense_sqrt())
    freqs = []
    for N in N_grid:
        hits = 0
        for r in range(R):
            ens = draw_perturbations(cov, N, derive_seed(seed, N, r), "delta", dist)
            hits += np.abs(ens.mean).max() > beta * scale
        freqs.append(float(hits / R))
    rep = BoundReport("mean", beta, list(N_grid), R, freqs,
                      [beta**2 * N for N in N_grid], info={"sqrt_inf_norm": scale})
    rep.passed["decay"] = frequencies_decay(freqs, R)
    return rep


def check_outer_product_concentration(cov, dist, target_moment, beta, N_grid, R, seed=0):
    """Frequency of ||S_N - target||_inf > beta ||target||_inf, per N."""
    _check_R(R)
    dist = _as_dist(dist)
    target = cov.dense() if target_moment == "cov" else cov.dense_inverse()
    tnorm = inf_norm(target)
    freqs = []
    for N in N_grid:
        hits = 0
        for r in range(R):
            E = draw_sketch(dist, cov, target_moment, N, derive_seed(seed, N, r), "omega").columns
            hits += inf_norm(E @ E.T - target) > beta * tnorm
        freqs.append(float(hits / R))
    rep = BoundReport("outer", beta, list(N_grid), R, freqs, [beta**2 * N for N in N_grid])
    rep.passed["decay"] = frequencies_decay(freqs, R)
    return rep


def check_triple_product_tail(beta_grid, R, seed=0, N_grid=(10, 100, 1000), mean_beta=0.5,
                              mean_trials=200):
    """Tail of Y = X1 X2 X3 for standard normals, and concentration of its sample mean.

    Fits log P(|Y| > beta) against beta^(2/3) over ``beta_grid`` from R draws
    and requires a negative slope with R^2 >= 0.95.  The sample-mean part
    records how often |mean of N draws of Y| exceeds ``mean_beta``.
    """
    _check_R(R)
    rng = np.random.default_rng(derive_seed(seed, 0))
    Y = rng.standard_normal((3, R)).prod(axis=0)
    beta_grid = np.asarray(beta_grid, dtype=float)
    tail = np.array([(np.abs(Y) > b).mean() for b in beta_grid])
    info = {"mean": float(Y.mean()), "variance": float(Y.var()), "tail": tail.tolist()}
    rep = BoundReport("triple", float(mean_beta), list(N_grid), mean_trials,
                      envelope=[mean_beta ** (2 / 3) * N ** (1 / 3) for N in N_grid], info=info)
    if np.all(tail > 0):
        x = beta_grid ** (2.0 / 3.0)
        y = np.log(tail)
        slope, icept = np.polyfit(x, y, 1)
        ss_res = np.sum((y - (slope * x + icept)) ** 2)
        ss_tot = np.sum((y - y.mean()) ** 2)
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
        info.update(slope=float(slope), r_squared=float(r2))
        rep.passed["tail_fit"] = bool(slope < 0 and r2 >= 0.95)
    else:
        info.update(slope=float("nan"), r_squared=float("nan"))
        rep.passed["tail_fit"] = False
    freqs = []
    for N in N_grid:
        r2 = np.random.default_rng(derive_seed(seed, 1, N))
        means = r2.standard_normal((mean_trials, 3, N)).prod(axis=1).mean(axis=1)
        freqs.append(float((np.abs(means) > mean_beta).mean()))
    rep.exceed_freq = freqs
    rep.passed["mean_decay"] = frequencies_decay(freqs, mean_trials)
    return rep


def _dense_matrix(p):
    A = p.pto.matrix
    if A is None:
        raise ValueError("a materialized linear map is required")
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)


def check_linear_perturbation_bound(p, plan, R, seed=None):
    """Realized perturbation of the normal equations versus the condition-number bound.

    For each realization, with M = A^T L^-1 A + Gamma^-1 and b = A^T L^-1 d +
    Gamma^-1 u0, the sampled system uses A^T S_N A + L_N and
    A^T S_N (d + mean sigma) + L_N (u0 + mean delta).  Checked in the
    infinity norm on every realization:

    * whenever kappa(M) r < 1 with r = ||dM|| / ||M||, the relative solution
      error is at most kappa / (1 - kappa r) * (r + ||db|| / ||b||);
    * ||M|| >= ||A^T L^-1 A|| / n and ||M|| >= ||Gamma^-1|| / n, for the exact
      and for the sampled matrix;
    * r <= 2 n beta_emp, with beta_emp the larger of the relative deviations
      of the two sampled terms.

    Variables whose flag is off in ``plan`` keep their exact values.  The
    base seed defaults to ``plan.seed``.
    """
    n = p.n
    if n > 512:
        raise ValueError("perturbation checks materialize M and need n <= 512")
    A = _dense_matrix(p)
    Li = p.noise_cov.dense_inverse()
    Gi = p.prior_cov.dense_inverse()
    H0 = A.T @ Li @ A
    M = H0 + Gi
    b = A.T @ (Li @ p.d) + Gi @ p.u0
    u = np.linalg.solve(M, b)
    Minv = np.linalg.inv(M)
    nM, nb = inf_norm(M), inf_norm(b[:, None])
    kappa = nM * inf_norm(Minv)
    nH0, nG = inf_norm(H0), inf_norm(Gi)
    dist = plan.distribution
    keys = ("rel_error", "bound", "dM_ratio", "db_ratio", "beta_emp", "kappa")
    norms = {k: [] for k in keys}
    counts = dict(admissible=0, excluded=0, violations=0, norm_ineq_failures=0,
                  dm_bound_failures=0)
    if nM * (1 + SLACK) < nH0 / n or nM * (1 + SLACK) < nG / n:
        counts["norm_ineq_failures"] += 1
    for r in range(R):
        s = derive_seed(plan.seed if seed is None else seed, r)
        if plan.randomize_eps:
            E = draw_sketch(dist, p.noise_cov, "precision", plan.N, s, "eps").columns
            AE = A.T @ E
            H = AE @ AE.T
            rhs_data = AE @ (E.T @ p.d)
            S = E @ E.T
        else:
            H, S = H0, Li
            rhs_data = A.T @ (Li @ p.d)
        if plan.randomize_lambda:
            Lam = draw_sketch(dist, p.prior_cov, "precision", plan.N, s, "lambda").columns
            LN = Lam @ Lam.T
        else:
            LN = Gi
        sig = (draw_perturbations(p.noise_cov, plan.N, s, "sigma", dist).mean
               if plan.randomize_sigma else np.zeros(p.k))
        dlt = (draw_perturbations(p.prior_cov, plan.N, s, "delta", dist).mean
               if plan.randomize_delta else np.zeros(n))
        Mt = H + LN
        bt = rhs_data + A.T @ (S @ sig) + LN @ (p.u0 + dlt)
        dM, db = Mt - M, bt - b
        rM = inf_norm(dM) / nM
        rb = inf_norm(db[:, None]) / nb if nb > 0 else 0.0
        beta_emp = max(inf_norm(H - H0) / nH0 if nH0 > 0 else 0.0, inf_norm(LN - Gi) / nG)
        nMt = inf_norm(Mt)
        if nMt * (1 + SLACK) < inf_norm(H) / n or nMt * (1 + SLACK) < inf_norm(LN) / n:
            counts["norm_ineq_failures"] += 1
        if rM > 2 * n * beta_emp * (1 + SLACK) + SLACK:
            counts["dm_bound_failures"] += 1
        norms["dM_ratio"].append(rM)
        norms["db_ratio"].append(rb)
        norms["beta_emp"].append(beta_emp)
        norms["kappa"].append(kappa)
        if kappa * rM >= 1:
            counts["excluded"] += 1
            norms["rel_error"].append(float("nan"))
            norms["bound"].append(float("nan"))
            continue
        counts["admissible"] += 1
        try:
            ut = np.linalg.solve(Mt, bt)
        except np.linalg.LinAlgError:
            counts["violations"] += 1
            continue
        err = inf_norm((ut - u)[:, None]) / inf_norm(u[:, None])
        bound = kappa / (1 - kappa * rM) * (rM + rb)
        norms["rel_error"].append(err)
        norms["bound"].append(bound)
        if err > bound * (1 + 1e-9) + SLACK:
            counts["violations"] += 1
    rep = BoundReport("perturb", float("nan"), [plan.N], R, [counts["excluded"] / R],
                      norms=norms, info=dict(counts, kappa_inf=kappa))
    rep.passed["linear_perturb"] = counts["violations"] == 0
    rep.passed["matrix_norm_inequality"] = counts["norm_ineq_failures"] == 0
    rep.passed["dM_bound"] = counts["dm_bound_failures"] == 0
    return rep


def condition_number(M, norm=2):
    """Condition number of a dense symmetric positive definite matrix."""
    M = np.asarray(M, dtype=float)
    if norm == 2:
        w = np.linalg.eigvalsh(0.5 * (M + M.T))
        return float(w[-1] / w[0])
    return inf_norm(M) * inf_norm(np.linalg.inv(M))


def spectrum_report(op, top_k=None, sym_tol=1e-10):
    """Eigenvalues, sorted descending, of a covariance-like operator or ensemble.

    Accepts a dense matrix, a sketch ensemble (eigenvalues of E E^T), a
    :class:`~randinv.core.SymmetricOperator` or a covariance operator (whose
    precision spectrum is reported).
    """
    if isinstance(op, SketchEnsemble):
        E = op.columns
        if E.shape[0] > MAX_DENSE_DIM:
            raise MemoryError("operator too large to materialize")
        sv = np.linalg.svd(E, compute_uv=False)
        w = np.zeros(E.shape[0])
        w[: sv.size] = sv**2
    else:
        if isinstance(op, SymmetricOperator):
            D = op.dense()
        elif hasattr(op, "dense_inverse"):
            D = op.dense_inverse()
        else:
            D = np.asarray(op, dtype=float)
        if D.ndim != 2 or D.shape[0] != D.shape[1]:
            raise DimensionError("spectrum needs a square operator")
        scale = max(np.abs(D).max(), 1e-300)
        if np.abs(D - D.T).max() > sym_tol * scale:
            raise ValueError("operator is not symmetric")
        w = np.linalg.eigvalsh(0.5 * (D + D.T))
    w = np.sort(w)[::-1]
    return w if top_k is None else w[:top_k]


def sample_complexity(n, beta, N_grid, seeds=5, dist="gaussian", seed=0):
    """Smallest N in ``N_grid`` with median ||L_N - I||_2 <= beta for identity targets."""
    from .core import ScaledIdentityCovariance

    cov = ScaledIdentityCovariance(n, 1.0)
    for N in N_grid:
        errs = []
        for s in range(seeds):
            E = draw_sketch(_as_dist(dist), cov, "precision", N, derive_seed(seed, n, N, s), "lambda").columns
            errs.append(np.linalg.norm(E @ E.T - np.eye(n), 2))
        if np.median(errs) <= beta:
            return N
    return None


def _as_dist(dist):
    return SketchDistribution(dist) if isinstance(dist, str) else dist


__all__ = [
    "BoundReport", "RandomizationPlan", "check_linear_perturbation_bound",
    "check_mean_concentration", "check_outer_product_concentration",
    "check_triple_product_tail", "condition_number", "frequencies_decay", "inf_norm",
    "sample_complexity", "spectrum_report", "write_reports_csv",
]
