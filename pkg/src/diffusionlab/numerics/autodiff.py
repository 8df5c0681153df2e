"""Reverse-mode automatic differentiation on an append-only tape.

A Tensor is a float64 numpy array registered on an ADTape. Every operation
appends one node (operation id, parent indices, the context its local
partial derivatives need) and grad replays the tape in reverse, so parents
always precede children and one backward pass yields every leaf gradient.

Scope is deliberately small: arrays of rank <= 2, broadcasting only between
rank-2 and rank-1 (bias rows) or scalars, and the primitive set needed by
the denoiser and losses. Fractional powers assume positive bases; ln and
div assume nonzero arguments, as their closed-form partials do.

The op functions (add, mul, matmul, ...) also accept plain numpy inputs and
then compute plain numpy outputs, so model code written against them runs
with or without a tape.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import erf as _scipy_erf

from ..errors import NonScalarOutput, UnsupportedPrimitive

_TWO_OVER_SQRT_PI = 2.0 / np.sqrt(np.pi)


class ADTape:
    """Append-only record of operations and their forward values."""

    __slots__ = ("ops", "parents", "ctxs", "values")

    def __init__(self) -> None:
        self.ops: list[str] = []
        self.parents: list[tuple[int, ...]] = []
        self.ctxs: list[tuple] = []
        self.values: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self.ops)

    def append(self, op: str, parents: tuple[int, ...], ctx: tuple, value: np.ndarray) -> int:
        self.ops.append(op)
        self.parents.append(parents)
        self.ctxs.append(ctx)
        self.values.append(value)
        return len(self.ops) - 1

    def tensor(self, value) -> "Tensor":
        """Register a differentiable leaf."""
        arr = np.asarray(value, dtype=np.float64)
        return Tensor(self, self.append("leaf", (), (), arr))


class Tensor:
    """Handle to one tape node; wraps a float64 array in row-major order."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: ADTape, index: int) -> None:
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.index]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node={self.index})"

    # arithmetic sugar; scalars take the cheap shift/scale paths
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)


def _value(x) -> np.ndarray:
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _tape_of(*args) -> ADTape | None:
    for a in args:
        if isinstance(a, Tensor):
            return a.tape
    return None


def _index_on(tape: ADTape, x) -> int:
    if isinstance(x, Tensor):
        if x.tape is not tape:
            raise ValueError("operands live on different tapes")
        return x.index
    return tape.append("leaf", (), (), np.asarray(x, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape` (inverse of rank-2 (op) rank-1/scalar broadcast)."""
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _binary(op: str, a, b, fn):
    tape = _tape_of(a, b)
    if tape is None:
        return fn(_value(a), _value(b))
    ia, ib = _index_on(tape, a), _index_on(tape, b)
    return Tensor(tape, tape.append(op, (ia, ib), (), fn(tape.values[ia], tape.values[ib])))


def _unary(op: str, a, fn, ctx: tuple = ()):
    if not isinstance(a, Tensor):
        return fn(_value(a))
    t = a.tape
    return Tensor(t, t.append(op, (a.index,), ctx, fn(a.value)))


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


# ------------------------------------------------------------ primitives

def add(a, b):
    if isinstance(a, Tensor) and _is_scalar(b):
        return _unary("shift", a, lambda v: v + b, (float(b),))
    if isinstance(b, Tensor) and _is_scalar(a):
        return _unary("shift", b, lambda v: v + a, (float(a),))
    return _binary("add", a, b, np.add)


def sub(a, b):
    if isinstance(a, Tensor) and _is_scalar(b):
        return _unary("shift", a, lambda v: v - b, (float(-b),))
    if isinstance(b, Tensor) and _is_scalar(a):
        return neg(_unary("shift", b, lambda v: v - a, (float(-a),)))
    return _binary("sub", a, b, np.subtract)


def mul(a, b):
    if isinstance(a, Tensor) and _is_scalar(b):
        return _unary("scale", a, lambda v: v * b, (float(b),))
    if isinstance(b, Tensor) and _is_scalar(a):
        return _unary("scale", b, lambda v: v * a, (float(a),))
    return _binary("mul", a, b, np.multiply)


def div(a, b):
    if isinstance(a, Tensor) and _is_scalar(b):
        return _unary("scale", a, lambda v: v / b, (1.0 / float(b),))
    return _binary("div", a, b, np.divide)


def neg(a):
    return _unary("scale", a, np.negative, (-1.0,)) if isinstance(a, Tensor) else -_value(a)


def matmul(a, b):
    return _binary("matmul", a, b, np.matmul)


def exp(a):
    return _unary("exp", a, np.exp)


def ln(a):
    """Natural logarithm; argument must be strictly positive."""
    return _unary("ln", a, np.log)


def tanh(a):
    return _unary("tanh", a, np.tanh)


def erf(a):
    return _unary("erf", a, _scipy_erf)


def clip_min(a, floor: float):
    """Elementwise max(a, floor); the clamped region gets zero gradient."""
    floor = float(floor)
    return _unary("clip_min", a, lambda v: np.maximum(v, floor), (floor,))


def power(a, p):
    """Elementwise a**p for a constant exponent p."""
    p = float(p)
    return _unary("power", a, lambda v: np.power(v, p), (p,))


def sqrt(a):
    return power(a, 0.5)


def total(a):
    """Sum of every entry (scalar)."""
    return _unary("sum", a, lambda v: np.asarray(np.sum(v)), (None, _value(a).shape))


def sum_axis(a, axis: int):
    return _unary("sum", a, lambda v: np.sum(v, axis=axis), (axis, _value(a).shape))


def mean(a):
    """Mean of every entry (scalar)."""
    n = float(_value(a).size)
    return _unary("mean", a, lambda v: np.asarray(np.mean(v)), (n, _value(a).shape))


def softmax(a, axis: int = -1):
    def fn(v):
        m = np.max(v, axis=axis, keepdims=True)
        e = np.exp(v - m)
        return e / np.sum(e, axis=axis, keepdims=True)

    return _unary("softmax", a, fn, (axis,))


def transpose(a):
    return _unary("transpose", a, lambda v: v.T.copy())


def reshape(a, shape):
    shape = tuple(shape)
    return _unary("reshape", a, lambda v: v.reshape(shape), (_value(a).shape,))


def slice_axis(a, axis: int, start: int, stop: int):
    """Contiguous slice along one axis."""

    def fn(v):
        sl = [slice(None)] * v.ndim
        sl[axis] = slice(start, stop)
        return v[tuple(sl)].copy()

    return _unary("slice", a, fn, (axis, start, stop, _value(a).shape))


def concat(parts: Sequence, axis: int = 0):
    tape = _tape_of(*parts)
    if tape is None:
        return np.concatenate([_value(p) for p in parts], axis=axis)
    idx = tuple(_index_on(tape, p) for p in parts)
    vals = [tape.values[i] for i in idx]
    sizes = tuple(v.shape[axis] for v in vals)
    out = np.concatenate(vals, axis=axis)
    return Tensor(tape, tape.append("concat", idx, (axis, sizes), out))


# ------------------------------------------------------------ backward

def _vjp_add(g, out, pv, ctx):
    return _unbroadcast(g, pv[0].shape), _unbroadcast(g, pv[1].shape)


def _vjp_sub(g, out, pv, ctx):
    return _unbroadcast(g, pv[0].shape), _unbroadcast(-g, pv[1].shape)


def _vjp_mul(g, out, pv, ctx):
    return _unbroadcast(g * pv[1], pv[0].shape), _unbroadcast(g * pv[0], pv[1].shape)


def _vjp_div(g, out, pv, ctx):
    a, b = pv
    return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)


def _vjp_shift(g, out, pv, ctx):
    return (g,)


def _vjp_scale(g, out, pv, ctx):
    return (g * ctx[0],)


def _vjp_matmul(g, out, pv, ctx):
    a, b = pv
    if a.ndim == 2 and b.ndim == 2:
        return g @ b.T, a.T @ g
    if a.ndim == 1 and b.ndim == 2:
        return g @ b.T, np.outer(a, g)
    if a.ndim == 2 and b.ndim == 1:
        return np.outer(g, b), a.T @ g
    # 1-D @ 1-D inner product
    return g * b, g * a


def _vjp_exp(g, out, pv, ctx):
    return (g * out,)


def _vjp_ln(g, out, pv, ctx):
    return (g / pv[0],)


def _vjp_tanh(g, out, pv, ctx):
    return (g * (1.0 - out * out),)


def _vjp_erf(g, out, pv, ctx):
    x = pv[0]
    return (g * _TWO_OVER_SQRT_PI * np.exp(-x * x),)


def _vjp_clip_min(g, out, pv, ctx):
    return (g * (pv[0] > ctx[0]),)


def _vjp_power(g, out, pv, ctx):
    p = ctx[0]
    return (g * p * np.power(pv[0], p - 1.0),)


def _vjp_sum(g, out, pv, ctx):
    axis, in_shape = ctx
    if axis is None:
        return (np.broadcast_to(g, in_shape).copy(),)
    return (np.broadcast_to(np.expand_dims(g, axis), in_shape).copy(),)


def _vjp_mean(g, out, pv, ctx):
    n, in_shape = ctx
    return (np.broadcast_to(g / n, in_shape).copy(),)


def _vjp_softmax(g, out, pv, ctx):
    axis = ctx[0]
    return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)


def _vjp_transpose(g, out, pv, ctx):
    return (g.T.copy(),)


def _vjp_reshape(g, out, pv, ctx):
    return (g.reshape(ctx[0]),)


def _vjp_slice(g, out, pv, ctx):
    axis, start, stop, in_shape = ctx
    full = np.zeros(in_shape, dtype=np.float64)
    sl = [slice(None)] * len(in_shape)
    sl[axis] = slice(start, stop)
    full[tuple(sl)] = g
    return (full,)


def _vjp_concat(g, out, pv, ctx):
    axis, sizes = ctx
    grads = []
    offset = 0
    sl = [slice(None)] * g.ndim
    for s in sizes:
        sl[axis] = slice(offset, offset + s)
        grads.append(g[tuple(sl)].copy())
        offset += s
    return tuple(grads)


_VJP = {
    "add": _vjp_add,
    "sub": _vjp_sub,
    "mul": _vjp_mul,
    "div": _vjp_div,
    "shift": _vjp_shift,
    "scale": _vjp_scale,
    "matmul": _vjp_matmul,
    "exp": _vjp_exp,
    "ln": _vjp_ln,
    "tanh": _vjp_tanh,
    "erf": _vjp_erf,
    "clip_min": _vjp_clip_min,
    "power": _vjp_power,
    "sum": _vjp_sum,
    "mean": _vjp_mean,
    "softmax": _vjp_softmax,
    "transpose": _vjp_transpose,
    "reshape": _vjp_reshape,
    "slice": _vjp_slice,
    "concat": _vjp_concat,
}


def grad(f: Tensor, leaves: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of the scalar expression f with respect to each leaf.

    Reverse accumulation over the tape; f's forward value is left untouched.
    """
    if not isinstance(f, Tensor):
        raise TypeError("grad target must be a Tensor on a tape")
    if f.value.size != 1:
        raise NonScalarOutput(f"grad target has shape {f.shape}, expected a scalar")
    tape = f.tape
    for leaf in leaves:
        if leaf.tape is not tape:
            raise ValueError("all leaves must live on the target's tape")

    adjoint: list[np.ndarray | None] = [None] * (f.index + 1)
    adjoint[f.index] = np.ones_like(f.value)
    ops, parents, ctxs, values = tape.ops, tape.parents, tape.ctxs, tape.values

    for i in range(f.index, -1, -1):
        g = adjoint[i]
        if g is None or ops[i] == "leaf":
            continue
        vjp = _VJP.get(ops[i])
        if vjp is None:
            raise UnsupportedPrimitive(f"no derivative rule for operation {ops[i]!r}")
        par = parents[i]
        contribs = vjp(g, values[i], [values[p] for p in par], ctxs[i])
        for p, c in zip(par, contribs):
            if adjoint[p] is None:
                adjoint[p] = np.array(c, dtype=np.float64, copy=True)
            else:
                adjoint[p] = adjoint[p] + c

    out = []
    for leaf in leaves:
        g = adjoint[leaf.index] if leaf.index <= f.index else None
        out.append(np.zeros_like(leaf.value) if g is None else np.asarray(g))
    return out
