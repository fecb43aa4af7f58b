"""Sketch and perturbation ensembles for sample average approximations.

Every random column is a pure function of ``(seed, tag, column index)``:
columns are generated in fixed-size blocks, each from its own generator
seeded with ``[seed, crc32(tag), block]``.  Ensembles are therefore
bit-identical whatever the thread count or the order of generation.
"""

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .core import DimensionError, LowRankOperator

KINDS = ("gaussian", "achlioptas", "rademacher", "deterministic_basis")

# Columns generated per independent generator.
BLOCK = 256

_SEED_MASK = (1 << 64) - 1


def derive_seed(seed, *keys):
    """Deterministic 63-bit seed derived from a base seed and integer keys."""
    ss = np.random.SeedSequence([int(seed) & _SEED_MASK, *[int(k) & _SEED_MASK for k in keys]])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def tag_id(tag):
    return zlib.crc32(str(tag).encode("utf-8"))


@dataclass(frozen=True)
class SketchDistribution:
    """Zero-mean, unit-variance entry distribution.

    ``achlioptas`` takes values -sqrt(3), 0, sqrt(3) with probabilities
    1/6, 2/3, 1/6.  ``deterministic_basis`` is not random: column j is
    sqrt(dim) e_{j mod dim}, so the sample second moment is exactly the
    identity whenever N is a multiple of dim.
    """

    kind: str = "gaussian"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distribution {self.kind!r}; expected one of {KINDS}")

    def sample(self, rng, shape):
        if self.kind == "gaussian":
            return rng.standard_normal(shape)
        if self.kind == "rademacher":
            return 2.0 * rng.integers(0, 2, size=shape) - 1.0
        if self.kind == "achlioptas":
            u = rng.integers(0, 6, size=shape)
            return np.sqrt(3.0) * ((u == 0).astype(float) - (u == 1))
        raise ValueError("deterministic_basis has no random sampler")


def unit_columns(dist, dim, N, seed, tag, threads=1):
    """dim x N matrix of unit-variance columns W[:, j] = w(seed, tag, j)."""
    if dist.kind == "deterministic_basis":
        W = np.zeros((dim, N))
        W[np.arange(N) % dim, np.arange(N)] = np.sqrt(dim)
        return W
    W = np.empty((dim, N))
    tid = tag_id(tag)
    base = int(seed) & _SEED_MASK

    def fill(b):
        rng = np.random.default_rng([base, tid, b])
        block = dist.sample(rng, (BLOCK, dim))
        j0 = b * BLOCK
        j1 = min(N, j0 + BLOCK)
        W[:, j0:j1] = block[: j1 - j0].T

    nblocks = -(-N // BLOCK)
    if threads > 1 and nblocks > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(fill, range(nblocks)))
    else:
        for b in range(nblocks):
            fill(b)
    return W


@dataclass(frozen=True)
class RandomizationPlan:
    """Which random variables are sampled, how, how many times, and the seed.

    The variables are sigma (data perturbation), eps (misfit sketch), delta
    (prior-mean perturbation), lambda (prior-precision sketch) and omega
    (prior-covariance sketch).  ``M`` counts outer samples for nested
    variants and ensemble members; ``None`` means M = N.
    """

    N: int
    seed: int = 0
    distribution: SketchDistribution = SketchDistribution("gaussian")
    randomize_sigma: bool = False
    randomize_eps: bool = False
    randomize_delta: bool = False
    randomize_lambda: bool = False
    randomize_omega: bool = False
    M: int = None

    def __post_init__(self):
        if isinstance(self.distribution, str):
            object.__setattr__(self, "distribution", SketchDistribution(self.distribution))
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if self.M is not None and self.M < 1:
            raise ValueError("M must be at least 1")
        if not any((self.randomize_sigma, self.randomize_eps, self.randomize_delta,
                    self.randomize_lambda, self.randomize_omega)):
            raise ValueError("a randomization plan must randomize at least one variable")

    @property
    def outer(self):
        return self.N if self.M is None else self.M

    @classmethod
    def for_method(cls, method, N, seed=0, distribution="gaussian", M=None):
        """Plan with the variables a method randomizes switched on."""
        from .solvers import MethodId, method_variables

        flags = {f"randomize_{v}": True for v in method_variables(MethodId.parse(method))}
        return cls(N=N, seed=seed, distribution=SketchDistribution(distribution)
                   if isinstance(distribution, str) else distribution, M=M, **flags)

    def with_seed(self, seed):
        return replace(self, seed=seed)


@dataclass(frozen=True)
class SketchEnsemble:
    """Columns E[:, j] = C^{+-1/2} w_j / sqrt(N), so S_N = E E^T."""

    columns: np.ndarray
    tag: str
    seed: int
    moment: str

    @property
    def N(self):
        return self.columns.shape[1]

    @property
    def dim(self):
        return self.columns.shape[0]

    def column_seed(self, j):
        """Generator seed of column j, as passed to numpy.random.default_rng."""
        return [int(self.seed) & _SEED_MASK, tag_id(self.tag), j // BLOCK]


@dataclass(frozen=True)
class PerturbationEnsemble:
    """Samples C^{1/2} w_i (one per column) and their mean."""

    samples: np.ndarray
    tag: str
    seed: int

    @property
    def N(self):
        return self.samples.shape[1]

    @property
    def mean(self):
        return self.samples.mean(axis=1)


def draw_sketch(dist, target, target_moment, N, seed, tag, threads=1):
    """Sketch ensemble whose outer product averages to C (``cov``) or C^-1 (``precision``)."""
    if target_moment not in ("cov", "precision"):
        raise ValueError("target_moment must be 'cov' or 'precision'")
    if N < 1:
        raise DimensionError("N must be at least 1")
    W = unit_columns(dist, target.dim, N, seed, tag, threads)
    if target_moment == "cov":
        E = target.apply_sqrt(W)
    else:
        E = target.apply_inv_sqrt(W)
    return SketchEnsemble(np.asarray(E) / np.sqrt(N), str(tag), int(seed), target_moment)


def draw_perturbations(cov, N, seed, tag, dist=SketchDistribution("gaussian"), threads=1):
    """N perturbations C^{1/2} w_i with unit-variance entries w_i."""
    if N < 1:
        raise DimensionError("N must be at least 1")
    W = unit_columns(dist, cov.dim, N, seed, tag, threads)
    return PerturbationEnsemble(np.asarray(cov.apply_sqrt(W)), str(tag), int(seed))


def assemble_precision(ens):
    """The action v -> S_N v = E (E^T v) of a sketch ensemble."""
    if ens.N < 1:
        raise DimensionError("empty ensemble")
    return LowRankOperator(ens.columns)
