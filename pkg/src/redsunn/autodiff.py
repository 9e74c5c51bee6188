"""Reverse-mode automatic differentiation on an eager numpy tape.

Every operation computes its float64 value immediately and, when any input
belongs to a live :class:`Tape`, appends the result node together with a
backward closure.  ``Tape.backward`` seeds the (scalar) root with adjoint 1
and replays the node list in reverse append order, so each node's closure
runs exactly once and sees the fully accumulated adjoint of its output.
Append order is a valid topological order because values are computed
eagerly: an input node always precedes every node that consumes it.

Tensors without a tape are constants; they take part in arithmetic but
receive no adjoint.  ``stop_gradient`` detaches a value explicitly.  Ops
accept plain ndarrays / Python scalars and wrap them as constants, and when
*all* inputs are constants the result is a constant too, so the same model
code runs in pure inference mode with no recording overhead.

Numpy-style broadcasting is supported by the elementwise ops (adjoints are
summed back over broadcast axes).  ``log`` clamps its input at ``LOG_CLAMP``
below; the clamped region has exact derivative zero and the adjoint honours
that.  Adjoints may be read-only views (e.g. through ``sum``); treat
gradient arrays as immutable.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

Array = np.ndarray

LOG_CLAMP = 1e-12


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse mode.

    ``tape`` is None for constants.  ``grad`` is populated by
    ``Tape.backward`` and holds the adjoint d(root)/d(self).
    """

    __slots__ = ("data", "tape", "grad", "_vjp")

    def __init__(self, data, tape: "Tape | None" = None,
                 vjp: Callable[[Array], None] | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.grad: Array | None = None
        self._vjp = vjp
        if tape is not None:
            tape._nodes.append(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        kind = "const" if self.tape is None else "node"
        return f"Tensor({kind}, shape={self.data.shape})"

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Append-only record of one forward pass."""

    def __init__(self):
        self._nodes: list[Tensor] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def leaf(self, data) -> Tensor:
        """Record a differentiable leaf (a parameter view)."""
        return Tensor(data, tape=self)

    def backward(self, root: Tensor) -> None:
        """Accumulate d(root)/d(node) into every node's ``grad``.

        The root must be a scalar recorded on this tape.  Each node's
        closure runs exactly once, in reverse append order.
        """
        if root.tape is not self:
            raise ValueError("root was not recorded on this tape")
        if root.data.shape != ():
            raise ValueError(f"backward root must be scalar, got shape {root.data.shape}")
        for node in self._nodes:
            node.grad = None
        root.grad = np.ones(())
        for node in reversed(self._nodes):
            if node._vjp is not None and node.grad is not None:
                node._vjp(node.grad)


def wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def stop_gradient(x) -> Tensor:
    """Detach: same value, no tape, no adjoint."""
    return Tensor(x.data if isinstance(x, Tensor) else x)


def _find_tape(tensors: Iterable[Tensor]) -> "Tape | None":
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ValueError("inputs belong to different tapes")
    return tape


def record_op(value: Array, inputs: Sequence[Tensor],
              vjp: Callable[[Array], None]) -> Tensor:
    """Create the output node for a custom op.

    ``vjp(g)`` receives the accumulated output adjoint and must push
    contributions into the inputs via :func:`accumulate`.  When every input
    is a constant the value passes through unrecorded.
    """
    tape = _find_tape(inputs)
    if tape is None:
        return Tensor(value)
    return Tensor(value, tape=tape, vjp=vjp)


def accumulate(t: Tensor, g: Array) -> None:
    """Add a contribution to a tensor's adjoint (no-op for constants)."""
    if t.tape is None:
        return
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum an adjoint down to the shape the input had before broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _expand_reduced(g: Array, shape: tuple[int, ...], axis, keepdims: bool) -> Array:
    """Broadcast a reduction adjoint back to the pre-reduction shape."""
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = tuple(a % len(shape) for a in axes)
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic (numpy broadcasting rules)

def add(a, b) -> Tensor:
    a, b = wrap(a), wrap(b)
    value = a.data + b.data

    def vjp(g):
        accumulate(a, _unbroadcast(g, a.data.shape))
        accumulate(b, _unbroadcast(g, b.data.shape))

    return record_op(value, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = wrap(a), wrap(b)
    value = a.data - b.data

    def vjp(g):
        accumulate(a, _unbroadcast(g, a.data.shape))
        accumulate(b, _unbroadcast(-g, b.data.shape))

    return record_op(value, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = wrap(a), wrap(b)
    value = a.data * b.data

    def vjp(g):
        accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return record_op(value, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = wrap(a), wrap(b)
    value = a.data / b.data

    def vjp(g):
        accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        accumulate(b, _unbroadcast(-g * value / b.data, b.data.shape))

    return record_op(value, (a, b), vjp)


def neg(a) -> Tensor:
    a = wrap(a)

    def vjp(g):
        accumulate(a, -g)

    return record_op(-a.data, (a,), vjp)


def square(a) -> Tensor:
    a = wrap(a)

    def vjp(g):
        accumulate(a, 2.0 * a.data * g)

    return record_op(a.data * a.data, (a,), vjp)


def exp(a) -> Tensor:
    a = wrap(a)
    value = np.exp(a.data)

    def vjp(g):
        accumulate(a, g * value)

    return record_op(value, (a,), vjp)


def log(a) -> Tensor:
    """Natural log with the input floored at LOG_CLAMP.

    In the floored region the function is constant, so the adjoint there
    is exactly zero.
    """
    a = wrap(a)
    clamped = np.maximum(a.data, LOG_CLAMP)
    value = np.log(clamped)

    def vjp(g):
        accumulate(a, np.where(a.data >= LOG_CLAMP, g / clamped, 0.0))

    return record_op(value, (a,), vjp)


def tanh(a) -> Tensor:
    a = wrap(a)
    value = np.tanh(a.data)

    def vjp(g):
        accumulate(a, g * (1.0 - value * value))

    return record_op(value, (a,), vjp)


def sigmoid(a) -> Tensor:
    a = wrap(a)
    value = expit(a.data)

    def vjp(g):
        accumulate(a, g * value * (1.0 - value))

    return record_op(value, (a,), vjp)


def relu(a) -> Tensor:
    a = wrap(a)
    value = np.maximum(a.data, 0.0)

    def vjp(g):
        accumulate(a, np.where(a.data > 0.0, g, 0.0))

    return record_op(value, (a,), vjp)


def clamp_min(a, floor: float) -> Tensor:
    a = wrap(a)
    value = np.maximum(a.data, floor)

    def vjp(g):
        accumulate(a, np.where(a.data >= floor, g, 0.0))

    return record_op(value, (a,), vjp)


def softmax(a, axis: int = -1) -> Tensor:
    """Row-stable softmax (max subtraction before exponentiation)."""
    a = wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * value).sum(axis=axis, keepdims=True)
        accumulate(a, value * (g - inner))

    return record_op(value, (a,), vjp)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b) -> Tensor:
    a, b = wrap(a), wrap(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    value = a.data @ b.data

    def vjp(g):
        accumulate(a, g @ b.data.T)
        accumulate(b, a.data.T @ g)

    return record_op(value, (a, b), vjp)


def linear(x, w, b=None) -> Tensor:
    """Affine map ``x @ w.T + b`` with ``w`` stored (n_out, n_in)."""
    x, w = wrap(x), wrap(w)
    value = x.data @ w.data.T
    if b is None:
        def vjp(g):
            accumulate(x, g @ w.data)
            accumulate(w, g.T @ x.data)

        return record_op(value, (x, w), vjp)

    b = wrap(b)
    value = value + b.data

    def vjp(g):
        accumulate(x, g @ w.data)
        accumulate(w, g.T @ x.data)
        accumulate(b, _unbroadcast(g, b.data.shape))

    return record_op(value, (x, w, b), vjp)


# ---------------------------------------------------------------------------
# reductions

def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = wrap(a)
    value = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        accumulate(a, _expand_reduced(g, a.data.shape, axis, keepdims))

    return record_op(value, (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = wrap(a)
    value = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size // max(value.size, 1)

    def vjp(g):
        accumulate(a, _expand_reduced(g, a.data.shape, axis, keepdims) / count)

    return record_op(value, (a,), vjp)


def l1norm(a, axis=None, keepdims: bool = False) -> Tensor:
    """Sum of absolute values; subgradient 0 at exact zeros."""
    a = wrap(a)
    value = np.abs(a.data).sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        accumulate(a, _expand_reduced(g, a.data.shape, axis, keepdims) * np.sign(a.data))

    return record_op(value, (a,), vjp)


# ---------------------------------------------------------------------------
# shape surgery

def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = wrap(a)
    value = a.data.reshape(shape)

    def vjp(g):
        accumulate(a, g.reshape(a.data.shape))

    return record_op(value, (a,), vjp)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [wrap(t) for t in tensors]
    value = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        for t, piece in zip(ts, np.split(g, offsets, axis=axis)):
            accumulate(t, piece)

    return record_op(value, ts, vjp)


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = wrap(a)
    index = (slice(None),) * (axis % a.ndim) + (slice(start, stop),)
    value = a.data[index]

    def vjp(g):
        full = np.zeros(a.data.shape)
        full[index] = g
        accumulate(a, full)

    return record_op(value, (a,), vjp)


def take0(a, i: int) -> Tensor:
    """Select index ``i`` along axis 0, dropping that axis."""
    a = wrap(a)
    value = a.data[i]

    def vjp(g):
        full = np.zeros(a.data.shape)
        full[i] = g
        accumulate(a, full)

    return record_op(value, (a,), vjp)
