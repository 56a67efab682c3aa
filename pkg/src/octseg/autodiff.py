"""Reverse-mode automatic differentiation over dense numpy tensors.

Tensors are plain C-contiguous (row-major) numpy arrays of float32 (training)
or float64 (gradient-check mode).  A :class:`Variable` pairs a value array
with a lazily allocated gradient accumulator; differentiable operations
executed under an open :class:`Tape` record a backward rule, and
:func:`backward` replays the tape in reverse to accumulate d(loss)/d(input)
into every participating variable exactly once per use.

Outside a tape, every operation is a plain numpy computation with no
recording overhead, which is what inference uses.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

FLOAT_DTYPES = (np.float32, np.float64)


class ShapeMismatch(ValueError):
    """Operands do not have compatible shapes."""


class NonScalarLoss(ValueError):
    """backward() was started from a tensor with more than one element."""


class NonFiniteValue(FloatingPointError):
    """A NaN or Inf appeared where the engine requires finite values."""


def check_finite(arr: np.ndarray, context: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"non-finite values in {context}")


_node_ids = itertools.count()


class Variable:
    """A tensor value paired with its gradient accumulator.

    The gradient array is allocated on first use and always matches the
    value's shape and dtype.  Gradients accumulate with ``+=`` across
    backward passes; call :meth:`zero_grad` (or :func:`zero_grads`) between
    optimizer steps.
    """

    __slots__ = ("value", "requires_grad", "node_id", "_grad", "_tape")

    def __init__(self, value, requires_grad: bool = False):
        arr = np.asarray(value)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        if not arr.flags["C_CONTIGUOUS"]:  # keep 0-d scalars 0-d
            arr = np.ascontiguousarray(arr)
        self.value: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_ids)
        self._grad: np.ndarray | None = None
        self._tape: "Tape | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    def zero_grad(self) -> None:
        if self._grad is not None:
            self._grad[...] = 0

    def accumulate_grad(self, g: np.ndarray) -> None:
        # First contribution copies: backward rules may hand out views or
        # share one array between two inputs (e.g. add), so aliasing with a
        # later += would corrupt siblings.
        if self._grad is None:
            self._grad = np.array(g, dtype=self.value.dtype, copy=True)
        else:
            self._grad += g

    def item(self) -> float:
        if self.value.size != 1:
            raise ValueError("item() requires a single-element tensor")
        return float(self.value.reshape(()))

    def __repr__(self) -> str:
        return (f"Variable(shape={self.value.shape}, dtype={self.value.dtype},"
                f" requires_grad={self.requires_grad}, node_id={self.node_id})")

    # Arithmetic sugar; scalars are allowed on either side.
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


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager around the forward computation; ops append
    themselves in execution (hence topological) order.  Replaying in reverse
    visits every op after all of its consumers, so each variable's gradient
    receives exactly one contribution per use.
    """

    def __init__(self) -> None:
        self._records: list[tuple[Variable, tuple, Callable]] = []

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _tape_stack.pop()
        assert popped is self, "tape stack out of order"

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Variable, inputs: tuple, backward_fn: Callable) -> None:
        out.requires_grad = True
        out._tape = self
        self._records.append((out, inputs, backward_fn))

    def backward(self, loss: Variable) -> None:
        if loss.value.size != 1:
            raise NonScalarLoss(
                f"loss must be a single element, got shape {loss.value.shape}")
        if not self._records:
            raise ValueError("tape is empty; nothing to differentiate")
        loss.accumulate_grad(np.ones_like(loss.value))
        for out, inputs, backward_fn in reversed(self._records):
            g = out._grad
            if g is None:
                continue  # not on any path to the loss
            for var, gi in zip(inputs, backward_fn(g)):
                if gi is not None:
                    var.accumulate_grad(gi)


_tape_stack: list[Tape] = []


def current_tape() -> Tape | None:
    return _tape_stack[-1] if _tape_stack else None


def record_op(out: Variable, inputs: Sequence, backward_fn: Callable) -> Variable:
    """Attach a backward rule to `out` if a tape is open and any input needs it.

    `backward_fn(g_out)` must return one gradient (or None) per entry of
    `inputs`, aligned positionally; entries that are not Variables are
    constants and must map to None.
    """
    tape = current_tape()
    if tape is not None and any(
            isinstance(v, Variable) and v.requires_grad for v in inputs):
        vars_only = tuple(v if isinstance(v, Variable) else _NULL for v in inputs)
        tape.record(out, vars_only, backward_fn)
    return out


class _NullVariable:
    """Sink for gradients of constant operands."""
    requires_grad = False

    def accumulate_grad(self, g):
        pass


_NULL = _NullVariable()


def as_variable(x) -> Variable:
    if isinstance(x, Variable):
        return x
    return Variable(np.asarray(x))


def _binary_operands(a, b):
    """Normalize operands: both Variables, or one Variable plus a scalar."""
    a_scalar = np.isscalar(a) and not isinstance(a, str)
    b_scalar = np.isscalar(b) and not isinstance(b, str)
    if a_scalar and b_scalar:
        raise TypeError("at least one operand must be a tensor")
    av = a if a_scalar else as_variable(a)
    bv = b if b_scalar else as_variable(b)
    if isinstance(av, Variable) and isinstance(bv, Variable):
        if av.value.shape != bv.value.shape:
            raise ShapeMismatch(
                f"operand shapes differ: {av.value.shape} vs {bv.value.shape}")
    return av, bv


def _val(x):
    return x.value if isinstance(x, Variable) else x


def _needs(x) -> bool:
    return isinstance(x, Variable) and x.requires_grad


def add(a, b) -> Variable:
    a, b = _binary_operands(a, b)
    out = Variable(_val(a) + _val(b))

    def backward_fn(g):
        return (g if _needs(a) else None, g if _needs(b) else None)

    return record_op(out, (a, b), backward_fn)


def sub(a, b) -> Variable:
    a, b = _binary_operands(a, b)
    out = Variable(_val(a) - _val(b))

    def backward_fn(g):
        return (g if _needs(a) else None, -g if _needs(b) else None)

    return record_op(out, (a, b), backward_fn)


def mul(a, b) -> Variable:
    a, b = _binary_operands(a, b)
    av, bv = _val(a), _val(b)
    out = Variable(av * bv)

    def backward_fn(g):
        return (g * bv if _needs(a) else None, g * av if _needs(b) else None)

    return record_op(out, (a, b), backward_fn)


def div(a, b) -> Variable:
    a, b = _binary_operands(a, b)
    av, bv = _val(a), _val(b)
    out_val = av / bv
    out = Variable(out_val)

    def backward_fn(g):
        ga = g / bv if _needs(a) else None
        gb = -g * out_val / bv if _needs(b) else None
        return (ga, gb)

    return record_op(out, (a, b), backward_fn)


def reduce_sum(a, axes=None) -> Variable:
    """Sum over the given axes (all axes when None).

    The backward rule broadcasts the incoming gradient back over the
    reduced axes.
    """
    a = as_variable(a)
    ndim = a.value.ndim
    if axes is None:
        norm_axes = tuple(range(ndim))
    else:
        if np.isscalar(axes):
            axes = (int(axes),)
        norm_axes = tuple(int(ax) % ndim if -ndim <= int(ax) < ndim
                          else _raise_axis(ax, ndim) for ax in axes)
        if len(set(norm_axes)) != len(norm_axes):
            raise ValueError(f"duplicate axes in {axes!r}")
    out = Variable(a.value.sum(axis=norm_axes))

    def backward_fn(g):
        if not _needs(a):
            return (None,)
        g_exp = np.expand_dims(g, norm_axes) if norm_axes else g
        return (np.broadcast_to(g_exp, a.value.shape),)

    return record_op(out, (a,), backward_fn)


def _raise_axis(ax, ndim):
    raise ValueError(f"axis {ax} invalid for a {ndim}-dimensional tensor")


def reduce_mean(a, axes=None) -> Variable:
    a = as_variable(a)
    if axes is None:
        count = a.value.size
    else:
        if np.isscalar(axes):
            axes = (axes,)
        count = int(np.prod([a.value.shape[int(ax)] for ax in axes]))
    return mul(reduce_sum(a, axes), 1.0 / count)


def backward(loss: Variable) -> None:
    """Populate gradients of everything reachable from `loss` on its tape."""
    if loss._tape is None:
        raise ValueError("loss was not recorded on a tape "
                         "(run the forward pass inside `with Tape():`)")
    loss._tape.backward(loss)


def zero_grads(params) -> None:
    """Zero the gradient accumulators of an iterable (or mapping) of Variables."""
    values = params.values() if hasattr(params, "values") else params
    for p in values:
        p.zero_grad()
