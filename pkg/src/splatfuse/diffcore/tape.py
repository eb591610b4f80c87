"""Flat-tape reverse-mode differentiation.

Every differentiable primitive computes its forward value eagerly and, when a
:class:`Tape` is active and any input requires a gradient, appends one record
``(output, inputs, vjp)`` to the tape. :meth:`Tape.backward` walks the records
in reverse and calls each vector-Jacobian product once.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = ["Var", "Parameter", "Tape", "active_tape", "as_var", "primitive", "DimensionError"]


class DimensionError(ValueError):
    """Raised when operand shapes do not conform."""


class Var:
    """A float64 array node, either a leaf or the output of a recorded primitive."""

    __slots__ = ("value", "requires_grad", "grad", "name", "is_leaf")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self.is_leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __len__(self) -> int:
        return len(self.value)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Var(shape={self.value.shape}{tag}, requires_grad={self.requires_grad})"

    # arithmetic sugar, resolved lazily to avoid an import cycle with ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


class Parameter(Var):
    """A learnable leaf whose gradient accumulates across backward passes until zeroed."""

    __slots__ = ()

    def __init__(self, value, name: str):
        super().__init__(np.array(value, dtype=np.float64, copy=True), requires_grad=True, name=name)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape})"


_STACK: list["Tape"] = []


def active_tape() -> "Tape | None":
    return _STACK[-1] if _STACK else None


class Tape:
    """Records primitives executed inside its ``with`` block.

    Example:
        >>> with Tape() as tape:
        ...     y = ops.sum_all(ops.mul(x, x))
        >>> tape.backward(y)
    """

    def __init__(self):
        self.records: list[tuple[Var, tuple[Var, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _STACK.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self.records)

    def record(self, out: Var, inputs: tuple[Var, ...], vjp: Callable) -> None:
        self.records.append((out, inputs, vjp))

    def backward(self, out: Var, seed: np.ndarray | None = None) -> None:
        """Propagate ``seed`` (default: ones) from ``out`` to every leaf that requires a grad.

        Leaf gradients are *added* to ``leaf.grad``; intermediate gradients are
        discarded once consumed. Accumulation follows reverse tape order, so the
        result is deterministic.
        """
        if seed is None:
            seed = np.ones_like(out.value)
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != out.value.shape:
            raise DimensionError(f"seed shape {seed.shape} != output shape {out.value.shape}")
        if out.is_leaf:
            if out.requires_grad:
                _accumulate_leaf(out, seed)
            return
        pending: dict[int, np.ndarray] = {id(out): seed}
        for node, inputs, vjp in reversed(self.records):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            in_grads = vjp(g)
            for v, gv in zip(inputs, in_grads):
                if gv is None or not v.requires_grad:
                    continue
                if v.is_leaf:
                    _accumulate_leaf(v, gv)
                else:
                    key = id(v)
                    prev = pending.get(key)
                    pending[key] = gv if prev is None else prev + gv


def _accumulate_leaf(v: Var, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=np.float64)
    if g.shape != v.value.shape:
        raise DimensionError(f"gradient shape {g.shape} != leaf shape {v.value.shape} ({v.name})")
    if v.grad is None:
        v.grad = g.copy()
    else:
        v.grad = v.grad + g


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def primitive(value, inputs: Sequence[Var], vjp: Callable) -> Var:
    """Wrap a forward ``value`` and register ``vjp(g) -> tuple of input grads``.

    The record is only kept when a tape is active and some input needs a
    gradient; otherwise the output is a plain constant.
    """
    out = Var(value)
    tape = active_tape()
    if tape is not None and any(v.requires_grad for v in inputs):
        out.requires_grad = True
        out.is_leaf = False
        tape.record(out, tuple(inputs), vjp)
    return out
