import numpy as np
import pytest

from mgr import autograd as ag
from mgr.gradcheck import grad_check, standard_suite
from mgr.optim import Adam, AdamState, NonFiniteGradientError, adam_step


def test_sigmoid_at_zero():
    assert ag.sigmoid(ag.tensor(0.0)).item() == 0.5


def test_softmax_uniform_logits():
    np.testing.assert_array_equal(ag.softmax(ag.tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_identity_matmul():
    a = np.random.default_rng(0).normal(size=(3, 3))
    np.testing.assert_array_equal(ag.matmul(ag.tensor(np.eye(3)), ag.tensor(a)).data, a)


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ag.ShapeError, match=r"\(2, 3\).*\(4,\)"):
        ag.add(ag.tensor(np.ones((2, 3))), ag.tensor(np.ones(4)))
    with pytest.raises(ag.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ag.matmul(ag.tensor(np.ones((2, 3))), ag.tensor(np.ones((2, 3))))


def test_quadratic_gradient():
    x = ag.parameter([1.0, 2.0])
    ag.backward(ag.sum_(x * x))
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_sigmoid_gradient_at_zero():
    w = ag.parameter(0.0)
    ag.backward(ag.sigmoid(w) * 1.0)
    assert w.grad == 0.25


def test_non_scalar_loss_rejected():
    x = ag.parameter([1.0, 2.0])
    with pytest.raises(ag.ShapeError):
        ag.backward(x * 2.0)


def test_second_backward_without_reset_is_an_error():
    x = ag.parameter([1.0, 2.0])
    ag.backward(ag.sum_(x * x))
    with pytest.raises(ag.GradientAccumulationError):
        ag.backward(ag.sum_(x * x))


def test_explicit_accumulation_adds_gradients():
    x = ag.parameter([1.0, 2.0])
    ag.backward(ag.sum_(x * x))
    ag.backward(ag.sum_(x * x), accumulate=True)
    np.testing.assert_array_equal(x.grad, [4.0, 8.0])
    ag.zero_grad([x])
    ag.backward(ag.sum_(x * 3.0))
    np.testing.assert_array_equal(x.grad, [3.0, 3.0])


def test_reused_node_gradients_sum():
    x = ag.parameter(3.0)
    y = x * x
    ag.backward(y + y)
    assert x.grad == 12.0


def test_straight_through_forward_hard_backward_identity():
    soft = ag.parameter([0.2, 0.7, 0.9])
    hard = np.array([0.0, 1.0, 1.0])
    out = ag.straight_through(hard, soft)
    np.testing.assert_array_equal(out.data, hard)
    w = np.array([1.0, -2.0, 3.0])
    ag.backward(ag.sum_(out * w))
    np.testing.assert_array_equal(soft.grad, w)


def test_softmax_rows_sum_to_one():
    x = np.random.default_rng(1).normal(scale=30, size=(50, 7))
    s = ag.softmax(ag.tensor(x)).data
    assert np.all(s >= 0)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12, rtol=0)


def test_every_primitive_and_pipeline_pass_grad_check():
    results = standard_suite(seed=3)
    failed = [(name, r.max_rel_error) for name, r in results if not r.passed]
    assert not failed, failed


def test_random_two_layer_recurrent_net_matches_finite_differences():
    results = dict(standard_suite(seed=11))
    assert results["2-layer recurrent net"].max_rel_error < 1e-4


def test_grad_check_linear_layer_passes():
    rng = np.random.default_rng(0)
    w = ag.parameter(rng.normal(size=(4, 3)), "w")
    b = ag.parameter(rng.normal(size=3), "b")
    x = rng.normal(size=(5, 4))
    t = rng.normal(size=(5, 3))
    rep = grad_check(lambda: ag.sum_(ag.mul(ag.add(ag.matmul(ag.tensor(x), w), b), t)), [w, b], 1e-4)
    assert rep.passed and len(rep.params) == 2


def test_grad_check_catches_corrupted_gradient():
    w = ag.parameter([0.3, -0.4], "w")

    def bad_square(a):
        return ag._node(a.data ** 2, (a,), lambda g: (g * 2 * a.data + 0.1,))

    rep = grad_check(lambda: ag.sum_(bad_square(w)), [w], 1e-4)
    assert not rep.passed
    assert "FAIL" in rep.summary()


def test_grad_check_empty_fragment_passes_vacuously():
    rep = grad_check(lambda: ag.tensor(0.0), [], 1e-4)
    assert rep.passed and rep.params == []


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_grad_check_reports_non_finite_location():
    w = ag.parameter([1.0, -1.0], "w")
    rep = grad_check(lambda: ag.sum_(ag.log(w)), [w], 1e-4)
    assert not rep.passed
    assert any("non-finite" in (p.failure or "") for p in rep.params)


def test_adam_first_step_is_minus_lr():
    p = ag.parameter([0.0])
    adam_step(p, np.array([1.0]), AdamState.like(p), 0.001)
    np.testing.assert_allclose(p.data, [-0.001], rtol=1e-7)


def test_adam_zero_gradient_leaves_parameter():
    p = ag.parameter([1.5])
    _, st = adam_step(p, np.array([0.0]), AdamState.like(p), 0.01)
    assert p.data[0] == 1.5 and st.step_count == 1


def test_adam_first_step_linear_in_lr():
    g = np.random.default_rng(2).normal(size=(3, 2))
    a, b = ag.parameter(np.zeros((3, 2))), ag.parameter(np.zeros((3, 2)))
    adam_step(a, g, AdamState.like(a), 0.01)
    adam_step(b, g, AdamState.like(b), 0.02)
    np.testing.assert_array_equal(b.data, 2 * a.data)


def test_adam_groups_with_lr_and_double_lr():
    g = np.array([0.3, -1.2])
    p1, p2 = ag.parameter([0.0, 0.0]), ag.parameter([0.0, 0.0])
    p1.grad, p2.grad = g.copy(), g.copy()
    Adam([p1], 0.001).step()
    Adam([p2], 0.002).step()
    np.testing.assert_array_equal(p2.data, 2 * p1.data)


def test_adam_bitwise_deterministic():
    g = np.random.default_rng(4).normal(size=10)
    outs = []
    for _ in range(2):
        p = ag.parameter(np.linspace(-1, 1, 10))
        st = AdamState.like(p)
        for k in range(5):
            adam_step(p, g * (k + 1), st, 0.003)
        outs.append(p.data.tobytes())
    assert outs[0] == outs[1]


def test_adam_rejects_non_finite_gradient_untouched():
    p = ag.parameter([1.0, 2.0])
    st = AdamState.like(p)
    with pytest.raises(NonFiniteGradientError):
        adam_step(p, np.array([np.nan, 1.0]), st, 0.01)
    np.testing.assert_array_equal(p.data, [1.0, 2.0])
    assert st.step_count == 0 and not st.first_moment.any()


def test_adam_rejects_bad_inputs():
    p = ag.parameter([1.0])
    with pytest.raises(ValueError):
        adam_step(p, np.array([1.0, 2.0]), AdamState.like(p), 0.01)
    with pytest.raises(ValueError):
        adam_step(p, np.array([1.0]), AdamState.like(p), 0.0)
    with pytest.raises(ValueError):
        AdamState(np.zeros(1), np.zeros(1), beta1=1.0)


def test_gru_mask_carries_state_through_padding():
    rng = np.random.default_rng(0)
    D, H = 3, 4
    x = rng.normal(size=(1, 5, D))
    wx, wh, b = rng.normal(size=(D, 3 * H)), rng.normal(size=(H, 3 * H)), rng.normal(size=3 * H)
    m = np.array([[1, 1, 1, 0, 0]], dtype=float)
    h = ag.gru(ag.tensor(x), ag.tensor(wx), ag.tensor(wh), ag.tensor(b), m).data
    np.testing.assert_array_equal(h[0, 2], h[0, 4])
    short = ag.gru(ag.tensor(x[:, :3]), ag.tensor(wx), ag.tensor(wh), ag.tensor(b)).data
    np.testing.assert_allclose(h[0, :3], short[0], atol=1e-15)


def test_gru_group_matches_separate_cells():
    rng = np.random.default_rng(5)
    B, T, D, H = 3, 6, 4, 5
    x = rng.normal(size=(B, T, D))
    step = np.ones((B, T))
    step[2, 4:] = 0
    cells = [tuple(rng.normal(scale=0.4, size=s) for s in ((D, 3 * H), (H, 3 * H), (3 * H,))) for _ in range(3)]
    rev = [False, True, True]
    grouped = ag.gru_group(x, cells, step, rev).data
    for k, c in enumerate(cells):
        np.testing.assert_allclose(grouped[k], ag.gru(x, *c, step, reverse=rev[k]).data, rtol=0, atol=1e-14)
