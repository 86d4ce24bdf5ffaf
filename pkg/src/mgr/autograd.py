"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients.  :func:`backward`
walks the tape in reverse topological order.

Gradient semantics: a leaf gradient must be cleared (``zero_grad``) before the
next backward pass.  Calling :func:`backward` while a reachable leaf still holds
a gradient raises :class:`GradientAccumulationError` unless ``accumulate=True``
is passed, in which case gradients are summed into the existing buffers.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

__all__ = [
    "Tensor",
    "ShapeError",
    "GradientAccumulationError",
    "tensor",
    "parameter",
    "backward",
    "zero_grad",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "abs_",
    "softmax",
    "log_softmax",
    "concat",
    "sum_",
    "mean",
    "reshape",
    "flip",
    "slice_axis",
    "embedding",
    "straight_through",
    "masked_max",
    "gru",
]


class ShapeError(ValueError):
    pass


class GradientAccumulationError(RuntimeError):
    pass


class Tensor:
    """A float64 array node on the differentiation tape."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 0 and 0 in arr.shape:
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad=False, name=None):
    return Tensor(data, requires_grad=requires_grad, name=name)


def parameter(data, name=None):
    return Tensor(np.array(data, dtype=np.float64, copy=True), requires_grad=True, name=name)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn):
    parents = tuple(parents)
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# tape traversal


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, accumulate=False):
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``.

    Returns the list of leaves that received a gradient.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return []
    order = _topo_order(loss)
    leaves = [n for n in order if n._backward is None]
    if not accumulate:
        stale = [n for n in leaves if n.grad is not None]
        if stale:
            names = ", ".join(str(n.name or n.shape) for n in stale[:3])
            raise GradientAccumulationError(
                f"{len(stale)} parameter(s) already hold gradients ({names}); "
                "call zero_grad() first or pass accumulate=True"
            )
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return leaves


def zero_grad(params):
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "add")
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(out, (a, b), bw)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "sub")
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(out, (a, b), bw)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "mul")
    out = a.data * b.data

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(out, (a, b), bw)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data

    def bw(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(out, (a, b), bw)


def neg(a):
    a = _as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def matmul(a, b):
    """Matrix product; ``a`` may carry leading batch axes, ``b`` must be 2-D."""
    a, b = _as_tensor(a), _as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def bw(g):
        ga = g @ b.data.T
        a2 = a.data.reshape(-1, a.shape[-1])
        gb = a2.T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _node(out, (a, b), bw)


def sigmoid(a):
    a = _as_tensor(a)
    s = expit(a.data)
    return _node(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a):
    a = _as_tensor(a)
    t = np.tanh(a.data)
    return _node(t, (a,), lambda g: (g * (1.0 - t * t),))


def exp(a):
    a = _as_tensor(a)
    e = np.exp(a.data)
    return _node(e, (a,), lambda g: (g * e,))


def log(a):
    a = _as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def abs_(a):
    # subgradient 0 at the kink
    a = _as_tensor(a)
    return _node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def softmax(a):
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _node(s, (a,), bw)


def log_softmax(a):
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def bw(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return _node(out, (a,), bw)


# ---------------------------------------------------------------------------
# structural ops


def concat(tensors, axis=-1):
    tensors = [_as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        other = t.shape
        if len(other) != len(ref) or any(
            x != y for i, (x, y) in enumerate(zip(ref, other)) if i != ax
        ):
            raise ShapeError(f"concat: incompatible shapes {ref} and {other}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _node(out, tensors, bw)


def sum_(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), bw)


def mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def reshape(a, shape):
    a = _as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    return _node(out, (a,), lambda g: (g.reshape(a.shape),))


def flip(a, axis):
    a = _as_tensor(a)
    return _node(np.flip(a.data, axis=axis).copy(), (a,), lambda g: (np.flip(g, axis=axis).copy(),))


def slice_axis(a, start, stop, axis):
    a = _as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def bw(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _node(a.data[idx].copy(), (a,), bw)


def embedding(weight, ids):
    """Row lookup ``weight[ids]``; ``ids`` is an integer array of any shape."""
    weight = _as_tensor(weight)
    ids = np.asarray(ids)
    if weight.ndim != 2:
        raise ShapeError(f"embedding: weight must be 2-D, got {weight.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(f"embedding: ids outside [0, {weight.shape[0]})")
    out = weight.data[ids]

    def bw(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (gw,)

    return _node(out, (weight,), bw)


def straight_through(hard, soft):
    """Forward value ``hard`` (a constant array), gradient routed to ``soft``."""
    soft = _as_tensor(soft)
    hard = np.asarray(hard, dtype=np.float64)
    if hard.shape != soft.shape:
        raise ShapeError(f"straight_through: incompatible shapes {hard.shape} and {soft.shape}")
    return _node(hard.copy(), (soft,), lambda g: (g,))


def masked_max(h, mask):
    """Max over axis 1 of ``h`` (B, T, H) restricted to positions where mask > 0.5.

    Rows with no selected position pool to zero.
    """
    h = _as_tensor(h)
    sel = np.asarray(mask) > 0.5
    if sel.shape != h.shape[:2]:
        raise ShapeError(f"masked_max: incompatible shapes {h.shape} and {sel.shape}")
    filled = np.where(sel[:, :, None], h.data, -np.inf)
    idx = filled.argmax(axis=1)
    empty = ~sel.any(axis=1)
    out = np.take_along_axis(h.data, idx[:, None, :], axis=1)[:, 0, :]
    out[empty] = 0.0

    def bw(g):
        gh = np.zeros_like(h.data)
        g = np.where(empty[:, None], 0.0, g)
        np.put_along_axis(gh, idx[:, None, :], g[:, None, :], axis=1)
        return (gh,)

    return _node(out, (h,), bw)


# ---------------------------------------------------------------------------
# fused recurrent primitive


def gru(x, w_x, w_h, b, step_mask=None, reverse=False):
    """Run a GRU over ``x`` (B, T, D) and return all hidden states (B, T, H).

    Gate layout along the 3H axis is (reset, update, candidate).  Where
    ``step_mask`` is 0 the state is carried unchanged, so trailing padding
    leaves a forward pass untouched and keeps a reverse pass at zero until
    the first real token.
    """
    out = gru_group(x, [(w_x, w_h, b)], step_mask, [reverse])
    return reshape(out, out.shape[1:])


def gru_group(x, cells, step_mask=None, reverse=None):
    """Run G independent GRU cells over one shared input in a single time loop.

    ``cells`` is a list of (w_x, w_h, b) triples and ``reverse`` a matching
    list of direction flags.  Returns hidden states (G, B, T, H) in natural
    time order for every cell.
    """
    x = _as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"gru: input must be (B, T, D), got {x.shape}")
    cells = [tuple(_as_tensor(t) for t in c) for c in cells]
    G = len(cells)
    if G == 0:
        raise ValueError("gru_group: need at least one cell")
    rev = [False] * G if reverse is None else [bool(r) for r in reverse]
    if len(rev) != G:
        raise ValueError(f"gru_group: {G} cells but {len(rev)} direction flags")
    B, T, D = x.shape
    H = cells[0][1].shape[0]
    for w_x, w_h, b in cells:
        if w_x.shape != (D, 3 * H):
            raise ShapeError(f"gru: incompatible shapes {x.shape} and {w_x.shape}")
        if w_h.shape != (H, 3 * H):
            raise ShapeError(f"gru: recurrent weight must be {(H, 3 * H)}, got {w_h.shape}")
        if b.shape != (3 * H,):
            raise ShapeError(f"gru: bias must be {(3 * H,)}, got {b.shape}")
    if step_mask is None:
        m = None
    else:
        m = np.asarray(step_mask, dtype=np.float64)
        if m.shape != (B, T):
            raise ShapeError(f"gru: incompatible shapes {x.shape} and step mask {m.shape}")
        if m.all():
            m = None

    def order(a, g):
        # view of a time-major (B, T, ...) array in cell g's processing order
        return a[:, ::-1] if rev[g] else a

    Wx = np.concatenate([c[0].data for c in cells], axis=1)  # (D, G*3H)
    bias = np.concatenate([c[2].data for c in cells])
    nat = (x.data.reshape(B * T, D) @ Wx + bias).reshape(B, T, G, 3 * H)
    pre = np.stack([order(nat[:, :, g], g) for g in range(G)])  # (G, B, T, 3H)
    ms = None if m is None else np.stack([order(m, g) for g in range(G)])[..., None]
    Wh = np.stack([c[1].data for c in cells])  # (G, H, 3H)
    hs = np.zeros((G, B, T + 1, H))
    rz_s = np.empty((G, B, T, 2 * H))
    n_s = np.empty((G, B, T, H))
    hhn_s = np.empty((G, B, T, H))
    h = hs[:, :, 0]
    for t in range(T):
        hh = h @ Wh
        a = pre[:, :, t]
        rz = a[..., :2 * H] + hh[..., :2 * H]
        rz *= 0.5
        np.tanh(rz, out=rz)
        rz *= 0.5
        rz += 0.5
        hhn = hh[..., 2 * H:]
        n = np.tanh(a[..., 2 * H:] + rz[..., :H] * hhn)
        h_new = n + rz[..., H:] * (h - n)
        if ms is not None:
            h_new = h + ms[:, :, t] * (h_new - h)
        h = h_new
        hs[:, :, t + 1] = h
        rz_s[:, :, t] = rz
        n_s[:, :, t] = n
        hhn_s[:, :, t] = hhn
    out = np.stack([order(hs[g, :, 1:], g) for g in range(G)])

    def bw(g):
        gs = np.stack([order(g[k], k) for k in range(G)])
        d_pre = np.empty((G, B, T, 3 * H))
        d_hh = np.empty((G, B, T, 3 * H))
        WhT = np.swapaxes(Wh, 1, 2)
        carry = np.zeros((G, B, H))
        for t in range(T - 1, -1, -1):
            gt = gs[:, :, t] + carry
            rz = rz_s[:, :, t]
            r, z = rz[..., :H], rz[..., H:]
            n = n_s[:, :, t]
            if ms is None:
                g_new = gt
                d_prev = gt * z
            else:
                g_new = ms[:, :, t] * gt
                d_prev = gt - g_new + g_new * z
            dn_pre = g_new * (1.0 - z) * (1.0 - n * n)
            d_pre[:, :, t, H:2 * H] = g_new * (hs[:, :, t] - n) * z * (1.0 - z)
            d_pre[:, :, t, :H] = dn_pre * hhn_s[:, :, t] * r * (1.0 - r)
            d_pre[:, :, t, 2 * H:] = dn_pre
            dh = d_hh[:, :, t]
            dh[..., :2 * H] = d_pre[:, :, t, :2 * H]
            dh[..., 2 * H:] = dn_pre * r
            carry = d_prev + dh @ WhT
        d_nat = np.empty((B, T, G, 3 * H))
        for k in range(G):
            d_nat[:, :, k] = order(d_pre[k], k)
        flat = d_nat.reshape(B * T, G * 3 * H)
        dWx = x.data.reshape(B * T, D).T @ flat
        db = flat.sum(axis=0)
        dx = (flat @ Wx.T).reshape(B, T, D)
        grads_x, grads_h, grads_b = [], [], []
        for k in range(G):
            cols = slice(3 * H * k, 3 * H * (k + 1))
            grads_x.append(dWx[:, cols])
            grads_b.append(db[cols])
            grads_h.append(hs[k, :, :-1].reshape(-1, H).T @ d_hh[k].reshape(-1, 3 * H))
        return (dx, *[gr for k in range(G) for gr in (grads_x[k], grads_h[k], grads_b[k])])

    return _node(out, (x, *[t for c in cells for t in c]), bw)
