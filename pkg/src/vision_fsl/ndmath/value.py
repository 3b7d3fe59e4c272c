"""Dense float64 tensors with reverse-mode differentiation.

A ``Value`` wraps a numpy array and remembers the operation that produced it.
Graphs are rebuilt on every forward pass; ``backward`` walks one graph once.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

from ..errors import ContractError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording; results carry no parents and no grad buffers."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Value:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "_consumed", "__weakref__")

    def __init__(self, data, requires_grad=False, _parents=(), op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.op = op
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Value(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Populate ``.grad`` on every upstream Value that requires it."""
        if self.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise ContractError("backward already ran on this graph; rebuild it with a new forward pass")
        if not self.requires_grad:
            raise ContractError("loss does not depend on any Value with requires_grad")
        order, seen, stack = [], set(), [(self, False)]
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
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    # intermediate buffers are not needed once propagated
                    node.grad = None if node is not self else node.grad
        self._consumed = True

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    @property
    def T(self):
        return transpose(self)


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def _make(data, parents, op, backward):
    parents = tuple(parents)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out = Value(data, requires_grad=True, _parents=parents, op=op)
        out._backward = backward
        return out
    return Value(data, op=op)


def _accum(v: Value, g):
    if not v.requires_grad:
        return
    g = np.asarray(g, dtype=np.float64)
    if v.grad is None:
        v.grad = g.copy() if g.shape == v.data.shape else np.broadcast_to(g, v.data.shape).copy()
    else:
        v.grad += g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractError(f"{op}: shapes {a.shape} and {b.shape} are not broadcast-compatible") from None


# elementwise arithmetic

def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), "add", backward)


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), "sub", backward)


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), "mul", backward)


def div(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def backward(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), "div", backward)


def exp(a) -> Value:
    a = as_value(a)
    out = np.exp(a.data)
    return _make(out, (a,), "exp", lambda g: _accum(a, g * out))


def log(a) -> Value:
    a = as_value(a)
    if np.any(a.data <= 0):
        raise ContractError("log of a non-positive entry")
    return _make(np.log(a.data), (a,), "log", lambda g: _accum(a, g / a.data))


def sqrt(a) -> Value:
    a = as_value(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), "sqrt", lambda g: _accum(a, g * 0.5 / out))


def tanh(a) -> Value:
    a = as_value(a)
    out = np.tanh(a.data)
    return _make(out, (a,), "tanh", lambda g: _accum(a, g * (1.0 - out * out)))


def sigmoid(a) -> Value:
    a = as_value(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), "sigmoid", lambda g: _accum(a, g * out * (1.0 - out)))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Value:
    """Tanh-approximated GELU."""
    a = as_value(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        _accum(a, g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner))

    return _make(out, (a,), "gelu", backward)


def clamp(a, lo: float, hi: float) -> Value:
    if lo > hi:
        raise ContractError(f"clamp bounds inverted: {lo} > {hi}")
    a = as_value(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), "clamp", lambda g: _accum(a, g * inside))


# shape and reduction

def vsum(a, axis=None, keepdims=False) -> Value:
    a = as_value(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))

    return _make(out, (a,), "sum", backward)


def mean(a, axis=None, keepdims=False) -> Value:
    a = as_value(a)
    count = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(vsum(a, axis, keepdims), 1.0 / count)


def mean_rows(a) -> Value:
    """Column-wise mean over the rows of a matrix."""
    return mean(a, axis=0)


def reshape(a, shape) -> Value:
    a = as_value(a)
    return _make(a.data.reshape(shape), (a,), "reshape", lambda g: _accum(a, g.reshape(a.shape)))


def transpose(a, axes=None) -> Value:
    a = as_value(a)
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), "transpose", lambda g: _accum(a, np.transpose(g, inv)))


def concat(values, axis=-1) -> Value:
    values = [as_value(v) for v in values]
    ref = values[0].shape
    ax = axis % len(ref)
    for v in values[1:]:
        if v.ndim != len(ref) or any(s != r for i, (s, r) in enumerate(zip(v.shape, ref)) if i != ax):
            raise ContractError(f"concat: shapes {ref} and {v.shape} differ off axis {axis}")
    sizes = np.cumsum([v.shape[ax] for v in values])[:-1]

    def backward(g):
        for v, part in zip(values, np.split(g, sizes, axis=ax)):
            _accum(v, part)

    return _make(np.concatenate([v.data for v in values], axis=ax), values, "concat", backward)


def index(a, idx) -> Value:
    """Basic or integer-array indexing; repeated indices accumulate gradient."""
    a = as_value(a)

    def backward(g):
        if not a.requires_grad:
            return
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accum(a, full)

    return _make(a.data[idx], (a,), "index", backward)


def take_rows(a, rows) -> Value:
    return index(a, np.asarray(rows, dtype=np.int64))


# linear algebra

def matmul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ContractError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    if a.ndim < 2 or b.ndim < 2:
        raise ContractError(f"matmul needs operands with ndim >= 2, got {a.shape} and {b.shape}")

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(a.data @ b.data, (a, b), "matmul", backward)


def einsum(subscripts: str, *operands) -> Value:
    """Explicit-output einsum (``'ij,jk->ik'``) without repeated indices per operand."""
    operands = [as_value(o) for o in operands]
    ins, _, out_sub = subscripts.replace(" ", "").partition("->")
    in_subs = ins.split(",")
    if not _ or len(in_subs) != len(operands):
        raise ContractError(f"einsum: malformed subscripts {subscripts!r} for {len(operands)} operands")
    sizes = {}
    for s, o in zip(in_subs, operands):
        if len(s) != o.ndim or len(set(s)) != len(s):
            raise ContractError(f"einsum: subscript {s!r} does not fit shape {o.shape}")
        for ch, n in zip(s, o.shape):
            if sizes.setdefault(ch, n) != n:
                raise ContractError(f"einsum: index {ch!r} has sizes {sizes[ch]} and {n}")
    data = np.einsum(subscripts, *[o.data for o in operands], optimize=True)

    def backward(g):
        for i, (s, o) in enumerate(zip(in_subs, operands)):
            if not o.requires_grad:
                continue
            others = [(s2, o2.data) for j, (s2, o2) in enumerate(zip(in_subs, operands)) if j != i]
            avail = set(out_sub).union(*[set(s2) for s2, _ in others])
            kept = "".join(ch for ch in s if ch in avail)
            expr = ",".join([out_sub] + [s2 for s2, _ in others]) + "->" + kept
            gi = np.einsum(expr, g, *[d for _, d in others], optimize=True)
            if kept != s:
                shape = [sizes[ch] if ch in kept else 1 for ch in s]
                gi = np.broadcast_to(gi.reshape(shape), o.shape)
            _accum(o, gi)

    return _make(data, operands, "einsum", backward)


# normalizations

def softmax(a, axis=-1, mask=None) -> Value:
    """Softmax along ``axis``; entries where ``mask`` is False get probability 0."""
    a = as_value(a)
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask.any(axis=axis).all():
            raise ContractError("softmax: a slice has no unmasked entries")
        x = np.where(mask, x, -np.inf)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        _accum(a, out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _make(out, (a,), "softmax", backward)


def row_softmax(a) -> Value:
    return softmax(a, axis=-1)


def log_softmax(a, axis=-1) -> Value:
    a = as_value(a)
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def backward(g):
        _accum(a, g - p * g.sum(axis=axis, keepdims=True))

    return _make(out, (a,), "log_softmax", backward)


def logsumexp(a, axis=-1, mask=None) -> Value:
    """Log-sum-exp along ``axis`` restricted to entries where ``mask`` is True."""
    a = as_value(a)
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask.any(axis=axis).all():
            raise ContractError("logsumexp: a slice has no unmasked entries")
        x = np.where(mask, x, -np.inf)
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)
    w = e / s

    def backward(g):
        _accum(a, np.expand_dims(g, axis) * w)

    return _make(out, (a,), "logsumexp", backward)


def layer_norm(a, gamma=None, beta=None, eps=1e-5) -> Value:
    """Normalize over the last axis, then apply optional scale and shift."""
    a = as_value(a)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gxm = (g * xhat).mean(axis=-1, keepdims=True)
        _accum(a, inv * (g - gm - xhat * gxm))

    normed = _make(xhat, (a,), "layer_norm", backward)
    if gamma is not None:
        normed = mul(normed, gamma)
    if beta is not None:
        normed = add(normed, beta)
    return normed


def l2_normalize(a, axis=-1) -> Value:
    """Unit-normalize along ``axis``; an all-zero slice maps to zero with zero gradient."""
    a = as_value(a)
    x = a.data
    norm = np.sqrt((x * x).sum(axis=axis, keepdims=True))
    zero = norm == 0.0
    safe = np.where(zero, 1.0, norm)
    out = np.where(zero, 0.0, x / safe)

    def backward(g):
        proj = (g * out).sum(axis=axis, keepdims=True)
        _accum(a, np.where(zero, 0.0, (g - out * proj) / safe))

    return _make(out, (a,), "l2_normalize", backward)


def cosine_rows(a, b) -> Value:
    """Row-wise cosine similarity of two equally shaped matrices (zero rows give 0)."""
    a, b = as_value(a), as_value(b)
    if a.shape != b.shape:
        raise ContractError(f"cosine_rows: shapes {a.shape} and {b.shape} differ")
    return vsum(mul(l2_normalize(a), l2_normalize(b)), axis=-1)


def cosine_matrix(a, b) -> Value:
    """Pairwise cosine similarities between rows of ``a`` (n x d) and ``b`` (m x d)."""
    return matmul(l2_normalize(a), transpose(l2_normalize(b)))
