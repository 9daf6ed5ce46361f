"""Utility metrics for synthetic tables and the CF two-sample power demo."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from itertools import combinations

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .dataio import Schema, column_values
from .errors import InvalidParameter
from .numcore import Rng

_BLOCK = 2048
_MEDIAN_SUBSAMPLE = 4000


def median_bandwidth(pooled: np.ndarray) -> float:
    """Median pairwise distance; pooled samples above 4000 rows use a fixed
    (seed 0) subsample so the value is deterministic."""
    pooled = np.asarray(pooled, dtype=np.float64)
    if pooled.shape[0] > _MEDIAN_SUBSAMPLE:
        idx = np.random.default_rng(0).choice(pooled.shape[0], _MEDIAN_SUBSAMPLE, replace=False)
        pooled = pooled[np.sort(idx)]
    return float(np.median(pdist(pooled)))


def _kernel_sum(X, Y, h, skip_diagonal=False) -> float:
    total = 0.0
    for start in range(0, X.shape[0], _BLOCK):
        block = np.exp(-cdist(X[start:start + _BLOCK], Y, "sqeuclidean") / (2.0 * h * h))
        if skip_diagonal:
            rows = np.arange(block.shape[0])
            block[rows, rows + start] = 0.0
        total += float(block.sum())
    return total


def mmd(real, synth, bandwidth="auto", unbiased: bool = True) -> float:
    """Squared MMD with a Gaussian kernel exp(-|x-y|^2 / (2 h^2)).

    ``unbiased=True`` gives the U-statistic (can be slightly negative);
    ``unbiased=False`` the V-statistic.
    """
    X = np.asarray(real, dtype=np.float64)
    Y = np.asarray(synth, dtype=np.float64)
    n, m = X.shape[0], Y.shape[0]
    if n < 2 or m < 2:
        raise InvalidParameter("MMD needs at least two samples per side")
    h = median_bandwidth(np.vstack([X, Y])) if bandwidth == "auto" else float(bandwidth)
    if not h > 0:
        warnings.warn("degenerate kernel bandwidth 0; falling back to 1", stacklevel=2)
        h = 1.0
    if unbiased:
        kxx = _kernel_sum(X, X, h, skip_diagonal=True) / (n * (n - 1))
        kyy = _kernel_sum(Y, Y, h, skip_diagonal=True) / (m * (m - 1))
    else:
        kxx = _kernel_sum(X, X, h) / (n * n)
        kyy = _kernel_sum(Y, Y, h) / (m * m)
    kxy = _kernel_sum(X, Y, h) / (n * m)
    return kxx + kyy - 2.0 * kxy


def _random_predicate(column, rng: Rng):
    g = rng.generator
    if column.kind == "continuous":
        lo, hi = np.sort(g.uniform(0.0, 1.0, size=2))
        return lambda v: (v >= lo) & (v <= hi)
    while True:
        chosen = np.flatnonzero(g.random(len(column.categories)) < 0.5)
        if chosen.size:
            return lambda v: np.isin(v, chosen)


def range_query_error(real, synth, schema: Schema, num_queries: int = 1000,
                      attrs_per_query: int = 3, rng: Rng | None = None) -> float:
    """Mean |fraction(real) - fraction(synth)| over random conjunctive range queries.

    ``real`` and ``synth`` are encoded matrices. Continuous attributes get a
    random sub-interval of their (scaled) range, categoricals a random
    nonempty subset of categories.
    """
    if len(schema.columns) < attrs_per_query:
        raise InvalidParameter(f"need at least {attrs_per_query} columns for range queries")
    rng = rng or Rng(0)
    rv, sv = column_values(real, schema), column_values(synth, schema)
    errors = np.empty(num_queries)
    for q in range(num_queries):
        cols = rng.generator.choice(len(schema.columns), size=attrs_per_query, replace=False)
        in_real = np.ones(rv.shape[0], dtype=bool)
        in_synth = np.ones(sv.shape[0], dtype=bool)
        for j in cols:
            pred = _random_predicate(schema.columns[j], rng)
            in_real &= pred(rv[:, j])
            in_synth &= pred(sv[:, j])
        errors[q] = abs(in_real.mean() - in_synth.mean())
    return float(errors.mean())


def _discretize(values, column, bins):
    if column.kind == "continuous":
        return np.minimum((values * bins).astype(np.int64), bins - 1), bins
    return values.astype(np.int64), len(column.categories)


def marginal_error(real, synth, schema: Schema, bins: int = 10) -> float:
    """Mean L1 distance between normalized 2-way contingency tables over all
    column pairs. Continuous columns use ``bins`` equal-width bins."""
    if len(schema.columns) < 2:
        raise InvalidParameter("need at least two columns for 2-way marginals")
    rv, sv = column_values(real, schema), column_values(synth, schema)
    disc_r, disc_s, sizes = [], [], []
    for j, c in enumerate(schema.columns):
        r, size = _discretize(rv[:, j], c, bins)
        s, _ = _discretize(sv[:, j], c, bins)
        disc_r.append(r)
        disc_s.append(s)
        sizes.append(size)
    errs = []
    for a, b in combinations(range(len(schema.columns)), 2):
        shape = sizes[a] * sizes[b]
        tr = np.bincount(disc_r[a] * sizes[b] + disc_r[b], minlength=shape) / rv.shape[0]
        ts = np.bincount(disc_s[a] * sizes[b] + disc_s[b], minlength=shape) / sv.shape[0]
        errs.append(np.abs(tr - ts).sum())
    return float(np.mean(errs))


@dataclass
class EvalReport:
    mmd: float
    range_query_l1: float
    marginal_l1: float
    query_count: int
    seed: int
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(real, synth, schema: Schema, seed: int = 0, num_queries: int = 1000,
             bins: int = 10) -> EvalReport:
    rng = Rng(seed)
    rq = (range_query_error(real, synth, schema, num_queries, rng=rng.fork("range-queries"))
          if len(schema.columns) >= 3 else float("nan"))
    return EvalReport(
        mmd=max(0.0, mmd(real, synth)),
        range_query_l1=rq,
        marginal_l1=marginal_error(real, synth, schema, bins),
        query_count=num_queries,
        seed=seed,
        config={"bins": bins, "attrs_per_query": 3, "kernel": "gaussian", "bandwidth": "median"},
    )


VARIANTS = ("unoptimized", "normal", "optimized")


@dataclass
class TwoSampleResult:
    dims: list
    rejection_rate: dict
    trials: int
    alpha: float
    shift: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_csv(self) -> str:
        lines = ["dim," + ",".join(VARIANTS)]
        for i, d in enumerate(self.dims):
            lines.append(f"{d}," + ",".join(repr(self.rejection_rate[v][i]) for v in VARIANTS))
        return "\n".join(lines) + "\n"


def demo_frequencies(d: int, n_freqs: int, rng: Rng) -> dict:
    """Frequency sets and weights for the three variants.

    "unoptimized": first coordinate zero for all but the first frequency;
    "normal": every coordinate standard normal; "optimized": the unoptimized
    set with all weight on the single frequency whose first coordinate is
    nonzero.
    """
    g = rng.generator
    unopt = g.standard_normal((n_freqs, d))
    unopt[1:, 0] = 0.0
    normal = g.standard_normal((n_freqs, d))
    one_hot = np.zeros(n_freqs)
    one_hot[0] = 1.0
    return {
        "unoptimized": (unopt, np.ones(n_freqs)),
        "normal": (normal, np.ones(n_freqs)),
        "optimized": (unopt, one_hot),
    }


def cf_permutation_test(X, Y, freqs, weights, permutations: int, alpha: float, rng: Rng) -> bool:
    """Permutation test on the weighted empirical CFD.

    Rejects when the permutation p-value (1 + #{permuted >= observed}) / (1 + P)
    is at most alpha, which keeps the level at or below alpha exactly.
    """
    Z = np.vstack([X, Y])
    n, total = X.shape[0], Z.shape[0]
    phase = Z @ np.asarray(freqs).T
    feats = np.exp(1j * phase)
    signs = np.empty((permutations + 1, total))
    signs[0, :n], signs[0, n:] = 1.0 / n, -1.0 / Y.shape[0]
    for p in range(permutations):
        perm = rng.generator.permutation(total)
        signs[p + 1, perm[:n]] = 1.0 / n
        signs[p + 1, perm[n:]] = -1.0 / Y.shape[0]
    diff = signs @ feats
    stats = (np.abs(diff) ** 2) @ np.asarray(weights) / len(weights)
    p_value = (1 + np.count_nonzero(stats[1:] >= stats[0])) / (1 + permutations)
    return bool(p_value <= alpha)


def two_sample_demo(d_list, n_per_sample: int = 1000, trials: int = 100, alpha: float = 0.05,
                    permutations: int = 200, rng: Rng | None = None, shift: float = 1.0,
                    n_freqs: int = 20) -> TwoSampleResult:
    """Rejection rates of the CF permutation test for P = N(0, I) versus
    Q = N(shift * e_1, I) under the three frequency variants.

    Frequencies and data are redrawn in every trial.
    """
    rng = rng or Rng(0)
    d_list = [int(d) for d in d_list]
    if any(d < 1 for d in d_list):
        raise InvalidParameter("dimensions must be >= 1")
    rates = {v: [] for v in VARIANTS}
    for d in d_list:
        counts = dict.fromkeys(VARIANTS, 0)
        drng = rng.fork(f"dim-{d}")
        for t in range(trials):
            trng = drng.fork(f"trial-{t}")
            X = trng.generator.standard_normal((n_per_sample, d))
            Y = trng.generator.standard_normal((n_per_sample, d))
            Y[:, 0] += shift
            sets = demo_frequencies(d, n_freqs, trng.fork("freqs"))
            for v in VARIANTS:
                freqs, weights = sets[v]
                counts[v] += cf_permutation_test(X, Y, freqs, weights, permutations, alpha,
                                                 trng.fork(f"perm-{v}"))
        for v in VARIANTS:
            rates[v].append(counts[v] / trials)
    return TwoSampleResult(d_list, rates, trials, alpha, shift)
