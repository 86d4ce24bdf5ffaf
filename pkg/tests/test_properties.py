"""Property-based checks of the invariants that hold for every input."""

import json
import tempfile
from pathlib import Path

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mgr import autograd as ag
from mgr.data import load_dataset, mask_to_spans, spans_to_mask
from mgr.entropy import JointDistribution, entropy, mutual_information, verify_theorem2
from mgr.game import GameSpec, p_spurious, payoff_gradient, predictor_payoff
from mgr.metrics import generator_overlap, token_prf1
from mgr.optim import Adam
from mgr.training import omega

binary = st.lists(st.integers(0, 1), min_size=1, max_size=60)


@given(binary)
def test_mask_span_round_trip(mask):
    spans = mask_to_spans(mask)
    assert spans_to_mask(spans, len(mask)).tolist() == mask
    assert all(e > s for s, e in spans)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 300), st.integers(1, 300), st.data())
def test_truncation_keeps_mask_within_tokens(length, max_len, data):
    mask = data.draw(st.lists(st.integers(0, 1), min_size=length, max_size=length))
    spans = mask_to_spans(mask)
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "c.tsv"
        path.write_text(f"1\t{' '.join(['w'] * length)}\t{json.dumps(spans)}\n")
        ex = load_dataset(path, max_len=max_len).examples[0]
    assert len(ex.token_ids) == min(length, max_len)
    assert ex.gold_mask.tolist() == mask[:max_len]


@given(binary, st.floats(0.01, 0.99), st.floats(0, 5), st.floats(0, 5))
def test_omega_decomposes(mask, s, l1, l2):
    m = np.array(mask)
    got = omega(m, len(m), l1, l2, s)
    sp = omega(m, len(m), l1, 0.0, s)
    co = omega(m, len(m), 0.0, l2, s)
    assert got >= 0
    assert abs(got - sp - co) < 1e-12
    assert abs(co - l2 * (len(mask_to_spans(m)) * 2 - m[0] - m[-1])) < 1e-9


@given(st.lists(st.tuples(binary, binary), min_size=1, max_size=5))
def test_prf1_bounded_and_symmetric_swap(pairs):
    pairs = [(a[: min(len(a), len(b))], b[: min(len(a), len(b))]) for a, b in pairs]
    pred, gold = [p for p, _ in pairs], [g for _, g in pairs]
    p, r, f = token_prf1(pred, gold)
    assert 0 <= p <= 1 and 0 <= r <= 1 and 0 <= f <= 1
    p2, r2, f2 = token_prf1(gold, pred)
    assert (p, r) == (r2, p2) and abs(f - f2) < 1e-15


@given(binary, st.data())
def test_overlap_zero_iff_equal(a, data):
    b = data.draw(st.lists(st.integers(0, 1), min_size=len(a), max_size=len(a)))
    assert (generator_overlap(a, b) == 0.0) == (a == b)


@given(st.integers(1, 61), st.floats(1e-6, 1 - 1e-6))
def test_p_spurious_is_probability_and_odd_complement(n, pc):
    v = p_spurious(n, pc)
    assert 0.0 <= v <= 1.0
    if n % 2:
        assert abs(v + p_spurious(n, 1.0 - pc) - 1.0) < 1e-9


@given(st.integers(1, 40), st.data(), st.floats(-5, 5), st.floats(0.01, 5), st.floats(0, 1))
def test_payoff_linear_in_alpha(n, data, b, gap, alpha):
    k = data.draw(st.integers(0, n))
    spec = GameSpec(n=n, k=k, a=b + gap, b=b, alpha=alpha)
    lo, hi = predictor_payoff(spec, 0.0), predictor_payoff(spec, 1.0)
    assert abs(predictor_payoff(spec) - (lo + alpha * (hi - lo))) < 1e-9 * max(1, abs(lo), abs(hi))
    assert abs((hi - lo) - payoff_gradient(spec)) < 1e-9 * max(1, abs(hi - lo))


joint_tables = st.integers(2, 3).flatmap(
    lambda n: arrays(np.float64, st.tuples(*[st.integers(1, 4)] * n), elements=st.floats(0, 1))
).filter(lambda t: t.sum() > 1e-3)


@settings(max_examples=60)
@given(joint_tables)
def test_entropy_bounds_hold(table):
    d = JointDistribution(table / table.sum())
    r = verify_theorem2(d, tol=1e-9)
    assert r["lower_ok"] and r["upper_ok"]
    for i in range(d.n):
        for j in range(i + 1, d.n):
            mi = mutual_information(d, i, j)
            assert mi >= -1e-9
            assert mi <= min(entropy(d, [i]), entropy(d, [j])) + 1e-9


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (2, 3), elements=st.floats(-3, 3)), st.floats(1e-4, 1e-1))
def test_adam_zero_gradient_leaves_parameters(values, lr):
    p = ag.parameter(values.copy())
    p.grad = np.zeros_like(values)
    Adam([p], lr).step()
    assert np.array_equal(p.data, values)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_exclusion_certified_for_any_replacement(seed):
    from mgr.models import MgrModel, apply_mask, embed, predictor_logits

    rng = np.random.default_rng(seed)
    m = MgrModel(rng.normal(size=(12, 3)), n=1, hidden_size=3, seed=seed % 7)
    ids = rng.integers(2, 12, size=(1, 8))
    mask = (rng.random((1, 8)) < 0.5).astype(float)
    pad = np.ones((1, 8))
    before = predictor_logits(m.predictor, apply_mask(embed(m, ids), mask), mask, pad).data
    ids2 = np.where(mask > 0, ids, rng.integers(2, 12, size=(1, 8)))
    after = predictor_logits(m.predictor, apply_mask(embed(m, ids2), mask), mask, pad).data
    assert np.array_equal(before, after)
