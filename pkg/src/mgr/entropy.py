"""Discrete entropy tools for rationale diversity.

The joint entropy of several generators' masks is bounded below by the
largest single-generator entropy and above by the sum of them; the lower
bound is tight when all masks coincide, the upper when they are independent.
"""

from __future__ import annotations

from collections import Counter
from itertools import combinations

import numpy as np

from .data import sequential_batches
from .models import mgr_forward

TIGHT_TOL = 1e-9
MAX_WINDOW = 16


class JointDistribution:
    """Probability table over tuples of outcomes; axis i is variable i."""

    def __init__(self, table):
        table = np.asarray(table, dtype=np.float64)
        if table.ndim < 1:
            raise ValueError("a joint distribution needs at least one variable")
        if np.any(table < 0):
            raise ValueError("probabilities must be non-negative")
        total = table.sum()
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        self.table = table

    @property
    def n(self):
        return self.table.ndim

    @property
    def support_sizes(self):
        return self.table.shape

    def marginal(self, subset):
        subset = _check_subset(subset, self.n)
        drop = tuple(ax for ax in range(self.n) if ax not in subset)
        m = self.table.sum(axis=drop) if drop else self.table
        # reorder axes to follow ``subset``
        kept = sorted(subset)
        return np.moveaxis(m, [kept.index(s) for s in subset], range(len(subset)))

    @classmethod
    def independent(cls, *marginals):
        table = np.array(1.0)
        for m in marginals:
            table = np.multiply.outer(table, np.asarray(m, dtype=np.float64))
        return cls(table)

    @classmethod
    def identical(cls, marginal, n):
        """n copies of one variable (all outcomes on the diagonal)."""
        marginal = np.asarray(marginal, dtype=np.float64)
        table = np.zeros((len(marginal),) * n)
        for i, p in enumerate(marginal):
            table[(i,) * n] = p
        return cls(table)

    @classmethod
    def random(cls, rng, n, max_support=8, sparsity=0.3):
        sizes = rng.integers(1, max_support + 1, size=n)
        table = rng.dirichlet(np.ones(int(np.prod(sizes)))).reshape(sizes)
        if sparsity:
            table[rng.random(table.shape) < sparsity] = 0.0
            if table.sum() == 0:
                table.flat[0] = 1.0
            table /= table.sum()
        return cls(table)


def _check_subset(subset, n):
    subset = tuple(int(s) for s in subset)
    if not subset:
        raise ValueError("subset must be non-empty")
    if len(set(subset)) != len(subset) or any(not 0 <= s < n for s in subset):
        raise ValueError(f"invalid variable subset {subset} for {n} variables")
    return subset


def _log(base):
    if base in (2, "2", "bits"):
        return np.log2
    if base in ("e", "nats", np.e):
        return np.log
    raise ValueError(f"unsupported entropy base {base!r}")


def entropy_of(probs, base=2):
    p = np.asarray(probs, dtype=np.float64).ravel()
    p = p[p > 0]
    return float(-(p * _log(base)(p)).sum()) + 0.0


def entropy(dist, subset=None, base=2):
    """Shannon entropy of the marginal over ``subset`` (all variables by default)."""
    subset = range(dist.n) if subset is None else subset
    return entropy_of(dist.marginal(subset), base)


def mutual_information(dist, i, j, base=2):
    if i == j:
        raise ValueError("mutual information needs two distinct variables")
    mi = entropy(dist, [i], base) + entropy(dist, [j], base) - entropy(dist, [i, j], base)
    if mi < -1e-12:
        raise ArithmeticError(f"negative mutual information {mi}")
    return max(mi, 0.0)


def verify_theorem2(dist, tol=TIGHT_TOL, base=2):
    """Check max_i H(Z_i) <= H(Z_1..Z_n) <= sum_i H(Z_i) and flag equalities."""
    marg = [entropy(dist, [i], base) for i in range(dist.n)]
    joint = entropy(dist, None, base)
    lo, hi = max(marg), sum(marg)
    return {
        "lower_ok": lo <= joint + tol,
        "upper_ok": joint <= hi + tol,
        "lower_tight": abs(joint - lo) <= tol,
        "upper_tight": abs(joint - hi) <= tol,
        "marginals": marg,
        "joint": joint,
    }


def entropy_from_samples(samples, base=2):
    """Plug-in entropy of the empirical distribution of hashable samples."""
    counts = np.array(list(Counter(samples).values()), dtype=np.float64)
    return entropy_of(counts / counts.sum(), base)


def empirical_mask_entropy(model, split, max_tokens=8, batch_size=128, base=2):
    """Plug-in entropies of eval-mode masks restricted to the first ``max_tokens`` positions.

    Returns ``{"marginals": [H(Z_1), ...], "joint": H(Z_1..Z_n)}``.
    """
    if not 1 <= max_tokens <= MAX_WINDOW:
        raise ValueError(f"max_tokens must lie in [1, {MAX_WINDOW}], got {max_tokens}")
    per_gen = [[] for _ in range(model.n)]
    for batch in sequential_batches(split, batch_size):
        outs = mgr_forward(model, batch, mode="eval")
        for i, o in enumerate(outs):
            window = o.mask.hard_mask[:, :max_tokens].astype(np.int64)
            per_gen[i].extend(bytes(row) for row in window.astype(np.uint8))
    marg = [entropy_from_samples(s, base) for s in per_gen]
    joint = entropy_from_samples(list(zip(*per_gen)), base)
    return {"marginals": marg, "joint": joint}


def theorem2_sweep(count=1000, seed=0, variables=(2, 3), max_support=8):
    """Rows of ``(tag, marginals, joint, sum)`` over random joints plus equality cases."""
    rng = np.random.default_rng(seed)
    rows = []
    for t in range(count):
        n = int(rng.choice(variables))
        d = JointDistribution.random(rng, n, max_support)
        r = verify_theorem2(d)
        rows.append((f"random-{t}", r))
    for n in variables:
        p = rng.dirichlet(np.ones(max_support))
        rows.append((f"independent-n{n}", verify_theorem2(JointDistribution.independent(*[p] * n))))
        rows.append((f"identical-n{n}", verify_theorem2(JointDistribution.identical(p, n))))
    return rows


def pairwise_mutual_information(dist, base=2):
    return {(i, j): mutual_information(dist, i, j, base) for i, j in combinations(range(dist.n), 2)}
