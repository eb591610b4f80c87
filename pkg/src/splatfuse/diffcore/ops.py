"""Differentiable primitives with hand-written vector-Jacobian products."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tape import DimensionError, Var, as_var, primitive

ACTIVATIONS = ("relu", "sigmoid", "softplus", "exp", "tanh")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Var, b: Var) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {a.shape} with {b.shape}") from exc


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    _check_broadcast(a, b)
    return primitive(a.value + b.value, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    _check_broadcast(a, b)
    return primitive(a.value - b.value, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    _check_broadcast(a, b)
    av, bv = a.value, b.value
    return primitive(av * bv, (a, b),
                     lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)))


def scale(a, c: float) -> Var:
    a = as_var(a)
    return primitive(a.value * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return primitive(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def linear(x, W, b) -> Var:
    """``x @ W + b`` for ``x`` of shape (N, Cin), ``W`` (Cin, Cout), ``b`` (Cout,)."""
    x, W, b = as_var(x), as_var(W), as_var(b)
    if x.value.ndim != 2 or W.value.ndim != 2 or x.shape[1] != W.shape[0]:
        raise DimensionError(f"linear: x {x.shape} does not conform to W {W.shape}")
    if b.shape != (W.shape[1],):
        raise DimensionError(f"linear: bias {b.shape} does not match W {W.shape}")
    xv, Wv = x.value, W.value
    return primitive(xv @ Wv + b.value, (x, W, b),
                     lambda g: (g @ Wv.T, xv.T @ g, g.sum(axis=0)))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_np(x) -> np.ndarray:
    return _sigmoid(np.asarray(x, dtype=np.float64))


def activation(x, kind: str) -> Var:
    x = as_var(x)
    xv = x.value
    if kind == "relu":
        y = np.maximum(xv, 0.0)
        return primitive(y, (x,), lambda g: (g * (xv > 0),))
    if kind == "sigmoid":
        y = _sigmoid(xv)
        return primitive(y, (x,), lambda g: (g * y * (1.0 - y),))
    if kind == "softplus":
        y = np.logaddexp(0.0, xv)
        return primitive(y, (x,), lambda g: (g * _sigmoid(xv),))
    if kind == "exp":
        y = np.exp(xv)
        return primitive(y, (x,), lambda g: (g * y,))
    if kind == "tanh":
        y = np.tanh(xv)
        return primitive(y, (x,), lambda g: (g * (1.0 - y * y),))
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def relu(x) -> Var:
    return activation(x, "relu")


def sigmoid(x) -> Var:
    return activation(x, "sigmoid")


def tanh(x) -> Var:
    return activation(x, "tanh")


def softmax_np(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(z) -> Var:
    """Row softmax over the last axis, max-subtracted."""
    z = as_var(z)
    s = softmax_np(z.value)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return primitive(s, (z,), vjp)


def sum_all(a) -> Var:
    a = as_var(a)
    shape = a.shape
    return primitive(np.array(a.value.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def mean_all(a) -> Var:
    a = as_var(a)
    shape, n = a.shape, a.value.size
    return primitive(np.array(a.value.mean()), (a,), lambda g: (np.full(shape, float(g) / n),))


def sum_axis(a, axis: int) -> Var:
    a = as_var(a)
    shape = a.shape
    return primitive(a.value.sum(axis=axis), (a,),
                     lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))


def abs_(a) -> Var:
    """Elementwise ``|a|``; the subgradient at zero is zero."""
    a = as_var(a)
    sgn = np.sign(a.value)
    return primitive(np.abs(a.value), (a,), lambda g: (g * sgn,))


def concat(parts: Sequence, axis: int = -1) -> Var:
    parts = [as_var(p) for p in parts]
    vals = [p.value for p in parts]
    out = np.concatenate(vals, axis=axis)
    ax = axis % out.ndim
    bounds = np.cumsum([v.shape[ax] for v in vals])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=ax))

    return primitive(out, parts, vjp)


def take_rows(a, idx) -> Var:
    """Gather rows ``a[idx]``; repeated indices accumulate in the backward pass."""
    a = as_var(a)
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return primitive(a.value[idx], (a,), vjp)


def take_cols(a, start: int, stop: int) -> Var:
    """Column slice ``a[:, start:stop]`` of a 2-D array."""
    a = as_var(a)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return primitive(a.value[:, start:stop], (a,), vjp)


def scatter_rows(a, idx, n_rows: int) -> Var:
    """Place rows of ``a`` at ``idx`` in a zero array with ``n_rows`` rows (indices unique)."""
    a = as_var(a)
    idx = np.asarray(idx, dtype=np.int64)
    out = np.zeros((n_rows,) + a.shape[1:])
    out[idx] = a.value
    return primitive(out, (a,), lambda g: (g[idx],))


def reshape(a, shape) -> Var:
    a = as_var(a)
    old = a.shape
    return primitive(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def stop_gradient(a) -> Var:
    return Var(as_var(a).value.copy())


def ste_round(x) -> Var:
    """Round half up in the forward pass; identity in the backward pass."""
    x = as_var(x)
    return primitive(np.floor(x.value + 0.5), (x,), lambda g: (g,))


def slot_mask(k, n_slots: int) -> Var:
    """Soft prefix mask ``clip(k - j, 0, 1)`` for slots ``j = 0..n_slots-1``.

    For integer ``k`` this is exactly the hard mask ``[j < k]``. Away from
    integers the derivative wrt ``k`` is 1 on the partially open slot. At an
    integer ``k`` it is the mean of the one-sided derivatives: 0.5 on the slot
    that would be admitted next and 0.5 on the last admitted one, so neither
    end of the range is a zero-gradient trap.
    """
    k = as_var(k)
    kv = k.value.reshape(-1, 1)
    diff = kv - np.arange(n_slots, dtype=np.float64)[None, :]
    m = np.clip(diff, 0.0, 1.0)
    dm = ((diff > 0.0) & (diff < 1.0)).astype(np.float64)
    dm[(diff == 0.0) | (diff == 1.0)] = 0.5
    kshape = k.shape
    return primitive(m, (k,), lambda g: ((g * dm).sum(axis=1).reshape(kshape),))


def custom(value, inputs: Sequence, vjp) -> Var:
    """Register an arbitrary primitive; ``vjp(g)`` must return one grad per input."""
    return primitive(value, [as_var(v) for v in inputs], vjp)
