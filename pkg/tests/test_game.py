import math
from fractions import Fraction

import numpy as np
import pytest

from mgr.game import (
    GameSpec,
    estimate_pc,
    min_generators,
    monte_carlo_spurious,
    p_spurious,
    payoff_gradient,
    predictor_payoff,
    sweep,
)


def exact_binomial_tail(n, p_c):
    """Rational-arithmetic oracle for P(k < n - k)."""
    p = Fraction(p_c).limit_denominator(10**6)
    return float(sum(math.comb(n, k) * p**k * (1 - p) ** (n - k) for k in range(n + 1) if k < n - k))


def test_payoff_examples():
    assert predictor_payoff(GameSpec(n=1, k=1, a=5, b=2, alpha=1.0)) == 5
    for al in (0.0, 0.3, 1.0):
        assert predictor_payoff(GameSpec(n=2, k=1, a=4, b=2, alpha=al)) == pytest.approx(6, abs=1e-12)
    assert predictor_payoff(GameSpec(n=3, k=3, a=7, b=1.5, alpha=0.0)) == 4.5


def test_gradient_examples():
    assert payoff_gradient(GameSpec(n=3, k=2, a=2, b=1)) == 1
    assert payoff_gradient(GameSpec(n=3, k=1, a=2, b=1)) == -1
    assert payoff_gradient(GameSpec(n=4, k=2, a=9, b=1)) == 0


def test_gradient_matches_finite_difference():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(1, 30))
        b = float(rng.normal())
        spec = GameSpec(n=n, k=int(rng.integers(0, n + 1)), a=b + float(rng.random()) + 0.01, b=b,
                        alpha=float(rng.uniform(0.1, 0.9)))
        h = 1e-4
        fd = (predictor_payoff(spec, spec.alpha + h) - predictor_payoff(spec, spec.alpha - h)) / (2 * h)
        assert abs(fd - payoff_gradient(spec)) < 1e-9 * max(1.0, abs(fd))


def test_game_spec_validation():
    with pytest.raises(ValueError, match="a > b"):
        GameSpec(n=3, k=1, a=1, b=2)
    with pytest.raises(ValueError):
        GameSpec(n=3, k=4, a=2, b=1)


def test_p_spurious_examples():
    for pc in np.arange(0.51, 1.0, 0.01):
        assert p_spurious(1, pc) == 1 - pc
    assert abs(p_spurious(3, 0.67) - 0.254826) < 1e-6
    assert abs(p_spurious(5, 0.67) - 0.204963) < 1e-6


def test_p_spurious_matches_rational_oracle():
    for n in range(1, 30):
        for pc in (0.3, 0.55, 0.67, 0.9):
            assert abs(p_spurious(n, pc) - exact_binomial_tail(n, pc)) < 1e-12


def test_p_spurious_large_n_does_not_overflow():
    v = p_spurious(801, 0.55)
    assert 0.0 < v < 0.01


def test_p_spurious_strictly_decreasing_over_odd_n():
    for pc in (0.55, 0.67, 0.9):
        vals = [p_spurious(n, pc) for n in range(1, 22, 2)]
        assert all(a > b for a, b in zip(vals, vals[1:]))
        assert all(v < 1 - pc for v in vals[1:])


def test_complement_with_roles_swapped_sums_to_one_for_odd_n():
    for n in range(1, 22, 2):
        for pc in (0.51, 0.67, 0.8):
            assert abs(p_spurious(n, pc) + p_spurious(n, 1 - pc) - 1.0) < 1e-12


def test_min_generators_examples():
    assert min_generators(0.34, 0.67) == 1
    assert min_generators(0.2, 0.67) == 7
    assert min_generators(0.2, 0.67, odd_only=False) == 2
    with pytest.raises(ValueError):
        min_generators(0.2, 0.5)


def test_monte_carlo_examples():
    assert monte_carlo_spurious(5, 1.0, 1000, seed=0).mean == 0.0
    mc = monte_carlo_spurious(1, 0.67, 10**6, seed=1)
    assert abs(mc.mean - 0.33) <= 3 * math.sqrt(0.33 * 0.67 / 1e6)
    mc = monte_carlo_spurious(3, 0.67, 10**6, seed=2)
    assert abs(mc.mean - 0.254826) <= 3 * mc.stderr
    with pytest.raises(ValueError):
        monte_carlo_spurious(3, 0.6, 0)


def test_monte_carlo_is_seeded():
    assert monte_carlo_spurious(7, 0.6, 5000, seed=4) == monte_carlo_spurious(7, 0.6, 5000, seed=4)


def test_estimate_pc_examples():
    assert abs(estimate_pc(15395, 15169) - 0.66503) < 1e-5
    assert estimate_pc(0, 10) == 1.0
    assert estimate_pc(10, 0) == 0.5
    with pytest.raises(ValueError):
        estimate_pc(0, 0)


def test_sweep_rows():
    rows = sweep(0.67, 9, trials=20_000, seed=0)
    assert [r[0] for r in rows] == [1, 3, 5, 7, 9]
    for n, pc, exact, mc, se in rows:
        assert exact == p_spurious(n, pc) and abs(mc - exact) < 4 * se + 1e-12
