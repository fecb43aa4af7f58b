import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from randinv.core import DenseCovariance, ScaledIdentityCovariance
from randinv.problems import make_identity_prior
from randinv.randomize import (
    KINDS,
    RandomizationPlan,
    SketchEnsemble,
    SketchDistribution,
    assemble_precision,
    derive_seed,
    draw_perturbations,
    draw_sketch,
    unit_columns,
)

RANDOM_KINDS = [k for k in KINDS if k != "deterministic_basis"]


def loglog_slope(Ns, errs):
    return np.polyfit(np.log(Ns), np.log(errs), 1)[0]


@pytest.mark.parametrize("kind", RANDOM_KINDS)
def test_entries_unit_variance(kind):
    W = unit_columns(SketchDistribution(kind), 1000, 1000, seed=1, tag="test")
    assert abs(W.mean()) <= 5e-3
    assert abs(W.var() - 1) <= 1e-2


def test_achlioptas_values_and_probabilities():
    W = unit_columns(SketchDistribution("achlioptas"), 1000, 1000, seed=2, tag="a")
    vals, counts = np.unique(W, return_counts=True)
    np.testing.assert_allclose(vals, [-np.sqrt(3), 0, np.sqrt(3)])
    np.testing.assert_allclose(counts / W.size, [1 / 6, 2 / 3, 1 / 6], atol=3e-3)


def test_unknown_distribution():
    with pytest.raises(ValueError):
        SketchDistribution("cauchy")


@settings(max_examples=20, deadline=None)
@given(N=st.integers(1, 700), seed=st.integers(0, 2**64 - 1), threads=st.integers(1, 4))
def test_columns_independent_of_threads_and_count(N, seed, threads):
    dist = SketchDistribution("gaussian")
    W = unit_columns(dist, 3, N, seed, "omega", threads)
    W_big = unit_columns(dist, 3, N + 300, seed, "omega", 1)
    np.testing.assert_array_equal(W, W_big[:, :N])


def test_tags_give_independent_streams():
    dist = SketchDistribution("gaussian")
    a = unit_columns(dist, 50, 10, 0, "sigma")
    b = unit_columns(dist, 50, 10, 0, "delta")
    assert abs(np.corrcoef(a.ravel(), b.ravel())[0, 1]) < 0.15


def test_derive_seed_is_deterministic():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3) != derive_seed(1, 2, 4)
    assert 0 <= derive_seed(2**64 - 1, 5) < 2**63


def test_plan_validation():
    with pytest.raises(ValueError):
        RandomizationPlan(N=10)
    with pytest.raises(ValueError):
        RandomizationPlan(N=0, randomize_eps=True)
    with pytest.raises(ValueError):
        RandomizationPlan(N=10, M=0, randomize_eps=True)
    plan = RandomizationPlan.for_method("ENKF", 20, seed=4)
    assert plan.randomize_omega and plan.randomize_sigma and plan.randomize_delta
    assert not plan.randomize_eps and plan.outer == 20
    assert plan.with_seed(9).seed == 9


def test_deterministic_basis_exact_identity():
    E = draw_sketch(SketchDistribution("deterministic_basis"), ScaledIdentityCovariance(6), "precision",
                    6, 0, "eps")
    np.testing.assert_array_equal(E.columns @ E.columns.T, np.eye(6))


def test_gaussian_sketch_precision_moment():
    L = DenseCovariance(np.diag([1.0, 4.0]))
    E = draw_sketch(SketchDistribution("gaussian"), L, "precision", 10**5, 3, "eps")
    assert np.linalg.norm(E.columns @ E.columns.T - np.diag([1, 0.25])) <= 0.05


def test_sketch_rank_bound():
    E = draw_sketch(SketchDistribution("gaussian"), ScaledIdentityCovariance(10), "cov", 3, 0, "omega")
    assert np.linalg.matrix_rank(E.columns @ E.columns.T) == 3


@pytest.mark.parametrize("kind", RANDOM_KINDS)
@pytest.mark.parametrize("moment", ["cov", "precision"])
def test_sketch_unbiased_rate(kind, moment):
    rng = np.random.default_rng(5)
    C = DenseCovariance(np.diag(rng.uniform(0.5, 2.0, 8)))
    target = C.dense() if moment == "cov" else C.dense_inverse()
    Ns = [100, 1000, 10000]
    errs = []
    for N in Ns:
        e = []
        for s in range(10):
            E = draw_sketch(SketchDistribution(kind), C, moment, N, s, "t").columns
            e.append(np.linalg.norm(E @ E.T - target))
        errs.append(np.median(e) / np.linalg.norm(target))
    assert errs[0] > errs[1] > errs[2]
    assert -0.7 <= loglog_slope(Ns, errs) <= -0.3


def test_sketch_column_seed_trace():
    E = draw_sketch(SketchDistribution("gaussian"), ScaledIdentityCovariance(4), "cov", 300, 7, "omega")
    j = 270
    rng = np.random.default_rng(E.column_seed(j))
    block = rng.standard_normal((256, 4))
    np.testing.assert_array_equal(E.columns[:, j], block[j - 256] / np.sqrt(300))


def test_zero_covariance_perturbations():
    ens = draw_perturbations(ScaledIdentityCovariance(4, 0.0), 50, 0, "sigma")
    np.testing.assert_array_equal(ens.samples, 0.0)
    np.testing.assert_array_equal(ens.mean, 0.0)


def test_perturbation_mean_tail():
    N = 10**4
    hits = [np.abs(draw_perturbations(ScaledIdentityCovariance(5), N, r, "delta").mean).max()
            <= 4 / np.sqrt(N) for r in range(100)]
    assert np.mean(hits) >= 0.99


def test_perturbation_scalar_std():
    ens = draw_perturbations(ScaledIdentityCovariance(1, 9.0), 10**5, 1, "sigma")
    assert 2.97 <= ens.samples.std() <= 3.03


def test_perturbation_covariance():
    C = np.array([[2.0, 0.6], [0.6, 1.0]])
    ens = draw_perturbations(DenseCovariance(C), 10**5, 2, "delta")
    np.testing.assert_allclose(np.cov(ens.samples), C, atol=0.03)


def test_assemble_precision_single_column():
    c = np.array([[1.0], [2.0], [-1.0]])
    op = assemble_precision(SketchEnsemble(c, "eps", 0, "precision"))
    v = np.array([0.5, 1.0, 3.0])
    np.testing.assert_allclose(op.apply(v), c[:, 0] * (c[:, 0] @ v))


def test_assemble_precision_basis_matches_target():
    prior = make_identity_prior(5, 4.0)
    E = draw_sketch(SketchDistribution("deterministic_basis"), prior, "precision", 5, 0, "lambda")
    v = np.arange(5.0)
    np.testing.assert_allclose(assemble_precision(E).apply(v), prior.apply_inverse(v), rtol=1e-12)


def test_assemble_precision_dense_vs_action():
    E = draw_sketch(SketchDistribution("rademacher"), ScaledIdentityCovariance(30, 2.0), "precision",
                    12, 3, "eps")
    op = assemble_precision(E)
    S = op.dense()
    V = np.random.default_rng(0).standard_normal((30, 10))
    np.testing.assert_allclose(op.apply(V), S @ V, rtol=1e-12, atol=1e-14)
    assert np.linalg.matrix_rank(S) == 12


def test_identity_prior_unregularized_modes():
    E = draw_sketch(SketchDistribution("gaussian"), make_identity_prior(1000, 1.0), "precision",
                    100, 0, "lambda")
    eig = np.linalg.eigvalsh(E.columns @ E.columns.T)
    assert np.sum(np.abs(eig) <= 1e-10 * eig.max()) == 900
