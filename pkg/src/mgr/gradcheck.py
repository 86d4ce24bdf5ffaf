"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import backward, zero_grad


@dataclass
class ParamCheck:
    name: str
    coords_checked: int
    max_rel_error: float
    passed: bool
    failure: str | None = None


@dataclass
class GradCheckReport:
    tolerance: float
    params: list = field(default_factory=list)

    @property
    def passed(self):
        return all(p.passed for p in self.params)

    @property
    def max_rel_error(self):
        return max((p.max_rel_error for p in self.params), default=0.0)

    def summary(self):
        lines = [f"grad_check tol={self.tolerance:g}: {'PASS' if self.passed else 'FAIL'}"]
        for p in self.params:
            status = "ok" if p.passed else "FAIL"
            extra = f" ({p.failure})" if p.failure else ""
            lines.append(f"  {p.name:<28} n={p.coords_checked:<5d} max_rel={p.max_rel_error:.3e} {status}{extra}")
        return "\n".join(lines)


def relative_error(analytic, numeric, floor=1e-6):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(fn, params, tolerance=1e-4, step=1e-5, max_coords=None, seed=0):
    """Compare backprop gradients of ``fn()`` against central differences.

    ``fn`` must be deterministic and return a scalar Tensor.  Tensors with
    more than ``max_coords`` entries are checked on a fixed random subsample.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    params = list(params)
    report = GradCheckReport(tolerance)
    if not params:
        return report

    zero_grad(params)
    loss = fn()
    if not np.isfinite(loss.data).all():
        report.params.append(ParamCheck("<loss>", 0, float("inf"), False, "non-finite loss"))
        return report
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    zero_grad(params)

    rng = np.random.default_rng(seed)
    for i, (p, ga) in enumerate(zip(params, analytic)):
        name = p.name or f"param[{i}]"
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst, failure = 0.0, None
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            up = float(fn().data)
            flat[c] = orig - step
            down = float(fn().data)
            flat[c] = orig
            num = (up - down) / (2.0 * step)
            ana = float(ga.reshape(-1)[c])
            if not (np.isfinite(num) and np.isfinite(ana)):
                failure = f"non-finite value at index {np.unravel_index(c, p.shape)}"
                worst = float("inf")
                break
            err = relative_error(ana, num)
            if err > worst:
                worst = err
                if err > tolerance:
                    failure = f"worst at index {tuple(int(k) for k in np.unravel_index(c, p.shape))}"
        report.params.append(ParamCheck(name, len(coords), worst, worst <= tolerance, failure))
    return report


# ---------------------------------------------------------------------------
# built-in suite over the primitives and the full pipeline


def _primitive_cases(rng):
    from . import autograd as ag

    def p(*shape, name=None, lo=None):
        data = rng.normal(size=shape)
        if lo is not None:
            data = np.abs(data) + lo
        return ag.parameter(data, name)

    w = rng.normal(size=(3, 4))
    a, b = p(3, 4, name="a"), p(3, 4, name="b")
    pos = p(3, 4, name="pos", lo=0.5)
    row = p(4, name="row")
    m1, m2 = p(3, 5, name="m1"), p(5, 2, name="m2")
    t3 = p(2, 3, 4, name="t3")
    emb = p(6, 3, name="emb")
    ids = np.array([[0, 2, 2], [5, 1, 0]])
    away = ag.parameter(np.sign(rng.normal(size=(3, 4))) * (0.5 + rng.random((3, 4))), "away")

    def dot(t, weights=None):
        weights = rng.normal(size=t.shape) if weights is None else weights
        return ag.sum_(ag.mul(t, weights))

    w3 = rng.normal(size=(2, 3, 4))
    w2 = rng.normal(size=(3, 2))
    yield "add (broadcast)", lambda: dot(ag.add(a, row), w), [a, row]
    yield "sub (broadcast)", lambda: dot(ag.sub(a, row), w), [a, row]
    yield "mul", lambda: dot(ag.mul(a, b), w), [a, b]
    yield "div", lambda: dot(ag.div(a, pos), w), [a, pos]
    yield "neg", lambda: dot(ag.neg(a), w), [a]
    yield "matmul (2-D)", lambda: dot(ag.matmul(m1, m2), w2), [m1, m2]
    p42 = p(4, 2, name="p42")
    yield "matmul (batched)", lambda: dot(ag.matmul(t3, p42), w3[..., :2]), [t3, p42]
    yield "sigmoid", lambda: dot(ag.sigmoid(a), w), [a]
    yield "tanh", lambda: dot(ag.tanh(a), w), [a]
    yield "exp", lambda: dot(ag.exp(a), w), [a]
    yield "log", lambda: dot(ag.log(pos), w), [pos]
    yield "abs", lambda: dot(ag.abs_(away), w), [away]
    yield "softmax", lambda: dot(ag.softmax(a), w), [a]
    yield "log_softmax", lambda: dot(ag.log_softmax(a), w), [a]
    wc = rng.normal(size=(3, 8))
    yield "concat", lambda: dot(ag.concat([a, b], axis=1), wc), [a, b]
    w1 = rng.normal(size=(3,))
    yield "sum (axis)", lambda: dot(ag.sum_(a, axis=1), w1), [a]
    yield "mean", lambda: dot(ag.mean(t3, axis=1), w[:2]), [t3]
    yield "reshape", lambda: dot(ag.reshape(a, (4, 3)), w.reshape(4, 3)), [a]
    yield "flip", lambda: dot(ag.flip(t3, 1), w3), [t3]
    yield "slice", lambda: dot(ag.slice_axis(t3, 1, 3, 1), w3[:, 1:3]), [t3]
    we = rng.normal(size=(2, 3, 3))
    yield "embedding", lambda: dot(ag.embedding(emb, ids), we), [emb]
    sel = np.array([[1, 0, 1], [0, 1, 1]])
    yield "masked_max", lambda: dot(ag.masked_max(t3, sel), w3[:, 0]), [t3]


def _gru_case(rng, reverse):
    from . import autograd as ag

    B, T, D, H = 2, 5, 3, 4
    x = ag.parameter(rng.normal(size=(B, T, D)), "x")
    wx = ag.parameter(rng.normal(scale=0.5, size=(D, 3 * H)), "w_x")
    wh = ag.parameter(rng.normal(scale=0.5, size=(H, 3 * H)), "w_h")
    bias = ag.parameter(rng.normal(scale=0.1, size=(3 * H,)), "b")
    step = np.ones((B, T))
    step[1, 3:] = 0
    weights = rng.normal(size=(B, T, H))

    def fn():
        return ag.sum_(ag.mul(ag.gru(x, wx, wh, bias, step, reverse=reverse), weights))

    return fn, [x, wx, wh, bias]


def _gru_group_case(rng):
    """Three cells, mixed directions, over one masked input."""
    from . import autograd as ag

    B, T, D, H = 2, 5, 3, 3
    x = ag.parameter(rng.normal(size=(B, T, D)), "x")
    cells = [
        tuple(
            ag.parameter(rng.normal(scale=0.5, size=shape), f"c{k}.{name}")
            for name, shape in (("w_x", (D, 3 * H)), ("w_h", (H, 3 * H)), ("b", (3 * H,)))
        )
        for k in range(3)
    ]
    step = np.ones((B, T))
    step[0, 4:] = 0
    weights = rng.normal(size=(3, B, T, H))

    def fn():
        return ag.sum_(ag.mul(ag.gru_group(x, cells, step, [False, True, False]), weights))

    return fn, [x] + [p for c in cells for p in c]


def _recurrent_stack_case(rng):
    """Two stacked GRU layers feeding a softmax classifier."""
    from . import autograd as ag

    B, T, D, H = 2, 4, 3, 3
    x = rng.normal(size=(B, T, D))
    l1 = [ag.parameter(rng.normal(scale=0.5, size=s), f"l1.{k}") for k, s in (("wx", (D, 3 * H)), ("wh", (H, 3 * H)), ("b", (3 * H,)))]
    l2 = [ag.parameter(rng.normal(scale=0.5, size=s), f"l2.{k}") for k, s in (("wx", (H, 3 * H)), ("wh", (H, 3 * H)), ("b", (3 * H,)))]
    head = ag.parameter(rng.normal(size=(H, 2)), "head")
    onehot = np.eye(2)[[0, 1]]

    def fn():
        h = ag.gru(ag.gru(x, *l1), *l2)
        last = ag.reshape(ag.slice_axis(h, T - 1, T, 1), (B, H))
        return ag.neg(ag.sum_(ag.mul(ag.log_softmax(ag.matmul(last, head)), onehot)))

    return fn, l1 + l2 + [head]


def _pipeline_case(seed):
    """Generator + predictor loss on the relaxed mask path of a tiny model."""
    from . import autograd as ag
    from .data import Example, make_batch
    from .models import MgrModel, embed, generator_logits, mask_from_logits, apply_mask, predictor_logits

    rng = np.random.default_rng(seed)
    emb = rng.normal(size=(12, 4))
    emb[0] = 0.0
    model = MgrModel(emb, n=2, hidden_size=3, seed=seed)
    exs = [Example(rng.integers(2, 12, size=6), 0), Example(rng.integers(2, 12, size=4), 1)]
    batch = make_batch(exs)
    onehot = np.eye(2)[batch.labels]
    noise_seed = int(rng.integers(1 << 30))

    def fn():
        x = embed(model, batch.ids)
        total = None
        for i, g in enumerate(model.generators):
            logits = generator_logits(g, x, batch.pad)
            ms = mask_from_logits(logits, batch.pad, 1.0, "relaxed", np.random.default_rng(noise_seed + i))
            out = predictor_logits(model.predictor, apply_mask(x, ms), ms, batch.pad)
            ce = ag.neg(ag.mean(ag.sum_(ag.mul(ag.log_softmax(out), onehot), axis=1)))
            sp = ag.mean(ag.sum_(ms.value, axis=1))
            term = ag.add(ce, ag.mul(sp, 0.1))
            total = term if total is None else ag.add(total, term)
        return total

    return fn, list(model.named_params().values())


def standard_suite(seed=0, tolerance=1e-4, max_coords=40):
    """Grad-check every differentiable primitive plus the full pipeline.

    ``straight_through`` is left out: its forward value ignores the soft input
    by construction, so central differences cannot see the routed gradient.

    Returns ``[(case_name, GradCheckReport), ...]``.
    """
    rng = np.random.default_rng(seed)
    out = []
    for name, fn, params in _primitive_cases(rng):
        out.append((name, grad_check(fn, params, tolerance, max_coords=max_coords, seed=seed)))
    for rev in (False, True):
        fn, params = _gru_case(rng, rev)
        out.append((f"gru (masked{', reverse' if rev else ''})", grad_check(fn, params, tolerance, max_coords=max_coords, seed=seed)))
    fn, params = _gru_group_case(rng)
    out.append(("gru group (mixed directions)", grad_check(fn, params, tolerance, max_coords=max_coords, seed=seed)))
    fn, params = _recurrent_stack_case(rng)
    out.append(("2-layer recurrent net", grad_check(fn, params, tolerance, max_coords=max_coords, seed=seed)))
    fn, params = _pipeline_case(seed)
    out.append(("generator+predictor pipeline", grad_check(fn, params, tolerance, max_coords=max_coords, seed=seed)))
    return out
