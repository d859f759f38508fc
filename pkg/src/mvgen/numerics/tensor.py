"""Dense-tensor reverse-mode differentiation over numpy arrays.

A `Tensor` wraps a float32/float64 ndarray plus an optional backward closure;
`backward()` on a scalar loss topologically walks the graph and accumulates
exact partial derivatives into every reachable tensor with `requires_grad`.
Every op output is checked for NaN/Inf (a contract violation) unless the check
is disabled for speed.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np


class NumericError(RuntimeError):
    """Non-finite values or diverging computation."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


_GRAD_ENABLED = True
_NAN_CHECKS = True


def set_nan_checks(enabled: bool) -> bool:
    """Toggle per-op finiteness checks; returns the previous setting."""
    global _NAN_CHECKS
    previous = _NAN_CHECKS
    _NAN_CHECKS = enabled
    return previous


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (forward values only)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the shape of its source operand."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, values, requires_grad: bool = False, *,
                 _parents: tuple = (), _backward: Callable | None = None, _op: str = "leaf"):
        arr = np.asarray(values)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.values = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    # -- basics ---------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.values.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError("item() requires a single-element tensor")
        return float(self.values.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.values, False, _op="detach")

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        grad = _unbroadcast(np.asarray(grad), self.values.shape)
        if self.grad is None:
            self.grad = grad.astype(self.values.dtype, copy=True)
        else:
            self.grad += grad

    def backward(self) -> None:
        """Populate gradients of the scalar loss w.r.t. every reachable tensor."""
        if self.values.size != 1:
            raise ContractError("backward() requires a scalar loss")
        if not np.isfinite(self.values).all():
            raise NumericError("loss is non-finite")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.values)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, key):
        return index(self, key)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else None)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64 if dtype is None else dtype)
    return Tensor(arr)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Coerce a binary op's operands; scalars adopt the tensor operand's dtype
    so float32 graphs are not silently promoted to float64."""
    if isinstance(a, Tensor):
        return a, (b if isinstance(b, Tensor) else as_tensor(b, dtype=a.values.dtype))
    if isinstance(b, Tensor):
        return as_tensor(a, dtype=b.values.dtype), b
    return as_tensor(a), as_tensor(b)


def _make(values: np.ndarray, parents: tuple, backward: Callable, op: str) -> Tensor:
    if _NAN_CHECKS:
        # a float64 sum is finite iff every element is finite at our magnitudes;
        # one fused pass, no temporary, unlike isfinite().all()
        if not np.isfinite(values.sum(dtype=np.float64)):
            raise NumericError(f"non-finite values produced by op '{op}'")
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(values, True, _parents=parents, _backward=backward, _op=op)
    return Tensor(values, False, _op=op)


# -- elementwise ----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.values + b.values

    def backward(g):
        a._accum(g)
        b._accum(g)

    return _make(out, (a, b), backward, "add")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.values * b.values

    def backward(g):
        a._accum(g * b.values)
        b._accum(g * a.values)

    return _make(out, (a, b), backward, "mul")


def _fast_pow(x: np.ndarray, p: float) -> np.ndarray:
    # np.power's generic path is slow; special-case the exponents we use
    if p == 1.0:
        return x.copy()
    if p == 2.0:
        return x * x
    if p == 3.0:
        return x * x * x
    if p == -1.0:
        return 1.0 / x
    if p == 0.5:
        return np.sqrt(x)
    return x ** p


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = _fast_pow(a.values, p)

    def backward(g):
        a._accum(g * p * _fast_pow(a.values, p - 1.0))

    return _make(out, (a,), backward, "power")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.values)

    def backward(g):
        a._accum(g * out)

    return _make(out, (a,), backward, "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(a.values)

    def backward(g):
        a._accum(g / a.values)

    return _make(out, (a,), backward, "log")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.values)

    def backward(g):
        a._accum(g * (1.0 - out * out))

    return _make(out, (a,), backward, "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.values, 0.0)

    def backward(g):
        a._accum(g * (a.values > 0))

    return _make(out, (a,), backward, "relu")


_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def gelu(a) -> Tensor:
    a = as_tensor(a)
    x = a.values
    inner = _GELU_C * (x + 0.044715 * (x * x * x))
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * (x * x))
        da = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        a._accum(g * da)

    return _make(out, (a,), backward, "gelu")


def stop_gradient(a) -> Tensor:
    return as_tensor(a).detach()


# -- shape ops -------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.values.reshape(shape)
    src_shape = a.values.shape

    def backward(g):
        a._accum(g.reshape(src_shape))

    return _make(out, (a,), backward, "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.values, axes)
    if axes is None:
        inverse = None
    else:
        inverse = tuple(np.argsort(axes))

    def backward(g):
        a._accum(np.transpose(g, inverse))

    return _make(out, (a,), backward, "transpose")


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(p) for p in parts]
    out = np.concatenate([t.values for t in tensors], axis=axis)
    sizes = [t.values.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accum(piece)

    return _make(out, tuple(tensors), backward, "concat")


def index(a, key) -> Tensor:
    a = as_tensor(a)
    out = a.values[key]
    src_shape = a.values.shape

    def backward(g):
        full = np.zeros(src_shape, dtype=g.dtype)
        np.add.at(full, key, g)
        a._accum(full)

    return _make(out, (a,), backward, "index")


def take(a, indices: np.ndarray, axis: int = 0) -> Tensor:
    """Gather along an axis with integer indices (embedding lookup)."""
    a = as_tensor(a)
    idx = np.asarray(indices)
    out = np.take(a.values, idx, axis=axis)
    src_shape = a.values.shape

    def backward(g):
        full = np.zeros(src_shape, dtype=g.dtype)
        if axis == 0:
            np.add.at(full, idx, g)
        else:
            moved = np.moveaxis(full, axis, 0)
            np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        a._accum(full)

    return _make(out, (a,), backward, "take")


def take_along_last(a, indices: np.ndarray) -> Tensor:
    """out[..., i] = a[..., i, indices[..., i]] for a trailing vocabulary axis."""
    a = as_tensor(a)
    idx = np.asarray(indices)
    out = np.take_along_axis(a.values, idx[..., None], axis=-1)[..., 0]
    src_shape = a.values.shape

    def backward(g):
        full = np.zeros(src_shape, dtype=g.dtype)
        np.put_along_axis(full, idx[..., None], g[..., None], axis=-1)
        a._accum(full)

    return _make(out, (a,), backward, "take_along_last")


# -- reductions and linear algebra ------------------------------------------


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.values.sum(axis=axis, keepdims=keepdims)
    src_shape = a.values.shape

    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        a._accum(np.broadcast_to(g, src_shape))

    return _make(out, (a,), backward, "sum")


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.values.mean(axis=axis, keepdims=keepdims)
    src_shape = a.values.shape
    count = a.values.size if axis is None else int(np.prod(
        [src_shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]))

    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        a._accum(np.broadcast_to(g, src_shape) / count)

    return _make(out, (a,), backward, "mean")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.values, b.values
    if av.ndim < 2 or bv.ndim < 2:
        raise ContractError("matmul requires operands with at least 2 dimensions")
    # collapse leading dims to a single BLAS call when the rhs is a plain matrix
    if bv.ndim == 2 and av.ndim > 2:
        out = (av.reshape(-1, av.shape[-1]) @ bv).reshape(av.shape[:-1] + (bv.shape[-1],))
    else:
        out = av @ bv

    def backward(g):
        if a.requires_grad:
            if bv.ndim == 2:
                g2 = g.reshape(-1, g.shape[-1])
                a._accum((g2 @ bv.T).reshape(av.shape))
            else:
                a._accum(g @ np.swapaxes(bv, -1, -2))
        if b.requires_grad:
            if bv.ndim == 2 and av.ndim >= 2:
                a2 = av.reshape(-1, av.shape[-1])
                g2 = g.reshape(-1, g.shape[-1])
                b._accum(a2.T @ g2)
            else:
                b._accum(np.swapaxes(av, -1, -2) @ g)

    return _make(out, (a, b), backward, "matmul")


# -- normalization and softmax ------------------------------------------------


def layernorm(a, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine)."""
    a = as_tensor(a)
    x = a.values
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    inv = 1.0 / np.sqrt(centered.var(axis=-1, keepdims=True) + eps)
    out = centered * inv

    def backward(g):
        a._accum(inv * (g - g.mean(axis=-1, keepdims=True)
                        - out * (g * out).mean(axis=-1, keepdims=True)))

    return _make(out, (a,), backward, "layernorm")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    x = a.values
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        a._accum(g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return _make(out, (a,), backward, "log_softmax")


def softmax(a, axis: int = -1) -> Tensor:
    return exp(log_softmax(a, axis))


def l2_normalize(a, axis: int = -1) -> Tensor:
    """Scale vectors along `axis` to unit L2 norm; zero vectors stay zero."""
    a = as_tensor(a)
    x = a.values
    norm = np.sqrt((x * x).sum(axis=axis, keepdims=True))
    inv = np.where(norm > 0, 1.0 / np.where(norm > 0, norm, 1.0), 0.0)
    out = x * inv

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        a._accum((g - out * dot) * inv)

    return _make(out, (a,), backward, "l2_normalize")
