"""Analytics of the cooperative generator/predictor payoff game.

k of n generators select the causal feature set, the predictor sits at an
interpolation alpha between fitting the causal (alpha=1) and the spurious
(alpha=0) features, and ``a > b`` are the payoffs for the predictor fitting
or missing what a generator selected.  With random initialisation
k ~ Binomial(n, P_c); the predictor drifts towards the spurious optimum when
k < n - k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import bdtr

from .rng import stream


@dataclass(frozen=True)
class GameSpec:
    n: int
    k: int
    a: float
    b: float
    alpha: float = 0.5
    p_c: float = 0.67
    p_s: float = 0.1

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if not 0 <= self.k <= self.n:
            raise ValueError(f"k must lie in [0, n], got k={self.k}, n={self.n}")
        if not self.a > self.b:
            raise ValueError(f"payoffs need a > b, got a={self.a}, b={self.b}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not (0.0 < self.p_c < 1.0 and 0.0 < self.p_s < 1.0):
            raise ValueError("P_c and P_s must lie in (0, 1)")


def predictor_payoff(spec, alpha=None):
    """Expected predictor payoff R_P(alpha)."""
    al = spec.alpha if alpha is None else alpha
    n, k, a, b = spec.n, spec.k, spec.a, spec.b
    return k * al * a + k * (1 - al) * b + (n - k) * (1 - al) * a + (n - k) * al * b


def payoff_gradient(spec):
    """dR_P/dalpha = (a - b)(2k - n); positive exactly when k > n - k."""
    return (spec.a - spec.b) * (2 * spec.k - spec.n)


def spurious_upper_k(n):
    """Largest k with k < n - k: (n-1)/2 for odd n, n/2 - 1 for even n."""
    return (n + 1) // 2 - 1


def p_spurious(n, p_c):
    """P(k < n - k) for k ~ Binomial(n, p_c), via the regularized incomplete beta.

    Ties (k = n - k, even n) count as non-spurious.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0.0 < p_c < 1.0:
        raise ValueError(f"P_c must lie in (0, 1), got {p_c}")
    if n == 1:
        return 1.0 - p_c
    return float(bdtr(spurious_upper_k(n), n, p_c))


def min_generators(p_s, p_c, odd_only=True, n_max=100_000):
    """Smallest n with p_spurious(n, p_c) < p_s."""
    if p_c <= 0.5:
        raise ValueError(f"P_c must exceed 0.5 for the bound to be reachable, got {p_c}")
    if not 0.0 < p_s < 1.0:
        raise ValueError(f"P_s must lie in (0, 1), got {p_s}")
    step = 2 if odd_only else 1
    for n in range(1, n_max + 1, step):
        if p_spurious(n, p_c) < p_s:
            return n
    raise RuntimeError(f"no n <= {n_max} reaches P_s={p_s}")


@dataclass
class MonteCarloEstimate:
    mean: float
    stderr: float
    trials: int


def monte_carlo_spurious(n, p_c, trials, seed=0):
    """Empirical P(k < n - k) from ``trials`` binomial draws."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = stream(seed, "monte-carlo", n)
    k = rng.binomial(n, p_c, size=trials)
    hits = np.count_nonzero(k < n - k)
    mean = hits / trials
    return MonteCarloEstimate(mean, math.sqrt(mean * (1 - mean) / trials), trials)


def estimate_pc(correlated, decorrelated):
    """P_c from corpus counts: 1 - correlated / (2 * correlated + decorrelated)."""
    if correlated < 0 or decorrelated < 0:
        raise ValueError("counts must be non-negative")
    if correlated == 0 and decorrelated == 0:
        raise ValueError("at least one count must be positive")
    return 1.0 - correlated / (2.0 * correlated + decorrelated)


def sweep(p_c, n_max, trials=1_000_000, seed=0, odd_only=True):
    """Rows ``(n, P_c, exact, monte_carlo, stderr)`` for n = 1 .. n_max."""
    rows = []
    for n in range(1, n_max + 1, 2 if odd_only else 1):
        mc = monte_carlo_spurious(n, p_c, trials, seed)
        rows.append((n, p_c, p_spurious(n, p_c), mc.mean, mc.stderr))
    return rows


SWEEP_HEADER = ("n", "P_c", "p_spurious_exact", "p_spurious_mc", "stderr")
