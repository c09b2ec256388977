"""Dense numpy tensors with define-by-run reverse-mode differentiation.

Only the operations the model needs are provided. Every differentiable op
records itself with a monotonically increasing id; :meth:`Tensor.backward`
replays the recorded ops reachable from the loss in exact reverse order.

Thread-local state (grad mode, kink recording) keeps independent tapes on
different threads from interfering.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
import warnings
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DegenerateRowError, NumericError, ShapeError

_ids = itertools.count(1)
_state = threading.local()
_default_dtype = np.float64


def set_default_dtype(dtype) -> None:
    """Select float64 (default) or float32 for newly created tensors."""
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ConfigError(f"unsupported dtype {dtype}; use float32 or float64")
    _default_dtype = dtype.type


def get_default_dtype():
    return _default_dtype


def _grad_enabled() -> bool:
    return getattr(_state, "grad", True)


@contextlib.contextmanager
def no_grad():
    """Disable recording; ops inside return untracked tensors."""
    prev = _grad_enabled()
    _state.grad = False
    try:
        yield
    finally:
        _state.grad = prev


@contextlib.contextmanager
def record_kinks():
    """Collect the activation pattern of every non-smooth op evaluated inside.

    Yields a list that receives one boolean/int array per relu, abs and
    top-k style mask. Two evaluations with equal patterns lie on the same
    smooth piece of the function.
    """
    prev = getattr(_state, "kinks", None)
    log: list[np.ndarray] = []
    _state.kinks = log
    try:
        yield log
    finally:
        _state.kinks = prev


def _log_kink(pattern: np.ndarray) -> None:
    log = getattr(_state, "kinks", None)
    if log is not None:
        log.append(pattern)


def _check(data: np.ndarray, op: str, allow_neginf: bool = False) -> None:
    if allow_neginf:
        bad = np.isnan(data).any() or np.isposinf(data).any()
    else:
        bad = not np.isfinite(data).all()
    if bad:
        raise NumericError(f"non-finite value produced by {op}")


class Tensor:
    """An n-dimensional array plus optional gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_id", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype != _default_dtype:
            arr = arr.astype(_default_dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._id = 0
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{tag})"

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

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every tracked leaf."""
        if grad is None:
            if self.size != 1:
                raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return
        nodes = _collect(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in nodes:
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


def _collect(root: Tensor) -> list[Tensor]:
    """All tracked tensors reachable from root, newest recording first.

    Leaves carry id 0 and are visited after every op that consumes them.
    """
    seen: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen or not t.requires_grad:
            continue
        seen[id(t)] = t
        stack.extend(t._parents)
    return sorted(seen.values(), key=lambda t: t._id, reverse=True)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str,
            allow_neginf: bool = False) -> Tensor:
    _check(data, op, allow_neginf)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._op = op
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._id = next(_ids)
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        out._id = 0
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ----------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from exc
    return _result(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError as exc:
        raise ShapeError(f"sub: cannot broadcast {a.shape} with {b.shape}") from exc
    return _result(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from exc
    return _result(
        data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def scalar_mul(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), lambda g: (g * c,), "scalar_mul")


def relu(a: Tensor) -> Tensor:
    # relu'(0) == 0
    mask = a.data > 0
    _log_kink(mask)
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def abs(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    sign = np.sign(a.data)
    _log_kink(sign.astype(np.int8))
    return _result(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def dropout(a: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    if rng is None:
        raise ConfigError("dropout in training mode needs a random generator")
    keep = rng.random(a.shape) >= p
    scale = keep / (1.0 - p)
    return _result(a.data * scale, (a,), lambda g: (g * scale,), "dropout")


# ----------------------------------------------------------------- reductions

def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    data = np.sum(a.data, axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(np.asarray(data), (a,), back, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scalar_mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


# ----------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes; batch axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul batch dimensions do not broadcast: {a.shape} @ {b.shape}") from exc

    def back(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _result(data, (a, b), back, "matmul")


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax over the last axis; ``-inf`` entries act as masks and map to 0."""
    x = a.data
    m = np.max(x, axis=-1, keepdims=True)
    if np.isneginf(m).any():
        raise DegenerateRowError("softmax row has no finite entry (empty attention row)")
    e = np.exp(x - m)
    y = e / np.sum(e, axis=-1, keepdims=True)

    def back(g):
        return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)

    return _result(y, (a,), back, "softmax_rows")


def masked_fill_neginf(a: Tensor, keep: np.ndarray) -> Tensor:
    """Keep entries where ``keep`` is true, set the rest to ``-inf``.

    The mask is a constant: gradients pass through kept entries only.
    """
    keep = np.broadcast_to(np.asarray(keep, dtype=bool), a.shape)
    data = np.where(keep, a.data, -np.inf)
    return _result(data, (a,), lambda g: (np.where(keep, g, 0.0),), "masked_fill", allow_neginf=True)


# ----------------------------------------------------------------- shape ops

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} to {tuple(shape)}") from exc
    return _result(data, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def flip(a: Tensor, axis: int) -> Tensor:
    """Reverse index order along one axis."""
    return _result(np.flip(a.data, axis=axis).copy(), (a,), lambda g: (np.flip(g, axis=axis).copy(),), "flip")


def concat(tensors: Iterable[Tensor], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def back(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return _result(data, tensors, back, "concat")


def slice(a: Tensor, axis: int, start: int, stop: int) -> Tensor:  # noqa: A001
    """Contiguous range ``[start, stop)`` along ``axis``."""
    if not 0 <= start <= stop <= a.shape[axis]:
        raise ShapeError(f"slice [{start}, {stop}) out of range for axis {axis} of {a.shape}")
    index = [np.s_[:]] * a.ndim
    index[axis] = np.s_[start:stop]
    index = tuple(index)

    def back(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _result(a.data[index].copy(), (a,), back, "slice")


# ----------------------------------------------------------------- convolution

def conv1d_dilated(x: Tensor, w: Tensor, bias: Tensor | None, dilation: int = 1,
                   causal_pad: bool = True) -> Tensor:
    """Dilated 1-D convolution ``y[b,o,t] = bias[o] + sum_{c,j} w[o,c,j] x[b,c,t - d*j]``.

    With ``causal_pad`` the time axis is left-padded with ``(K-1)*d`` zeros so
    the output keeps length T and step t only sees inputs at steps <= t.
    Without it the convolution is 'valid' and the output has length
    ``T - (K-1)*d``.
    """
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d_dilated expects x[B,C,T] and w[O,C,K], got {x.shape} and {w.shape}")
    B, C, T = x.shape
    O, C_w, K = w.shape
    if C != C_w:
        raise ShapeError(f"conv1d_dilated channel mismatch: x {x.shape} vs w {w.shape}")
    if K < 1 or dilation < 1:
        raise ShapeError(f"kernel size and dilation must be >= 1, got K={K}, d={dilation}")
    if bias is not None and bias.shape != (O,):
        raise ShapeError(f"bias shape {bias.shape} does not match {O} output channels")
    reach = (K - 1) * dilation
    if reach >= T:
        warnings.warn(f"dilated kernel reach {reach} >= sequence length {T}; reads are padding only",
                      stacklevel=2)
    if causal_pad:
        xp = np.zeros((B, C, T + reach), dtype=x.data.dtype)
        xp[:, :, reach:] = x.data
        T_out = T
    else:
        if reach >= T:
            raise ShapeError(f"valid convolution with reach {reach} leaves no output for T={T}")
        xp = x.data
        T_out = T - reach
    offsets = [reach - dilation * j for j in range(K)]
    # im2col: rows (c, j), columns (b, t); one GEMM per call
    cols = np.stack([xp[:, :, off:off + T_out] for off in offsets], axis=2)
    cols = np.ascontiguousarray(cols.transpose(1, 2, 0, 3)).reshape(C * K, B * T_out)
    w2 = w.data.reshape(O, C * K)
    y = (w2 @ cols).reshape(O, B, T_out).transpose(1, 0, 2)
    if bias is not None:
        y = y + bias.data[None, :, None]
    else:
        y = np.ascontiguousarray(y)
    parents = (x, w) if bias is None else (x, w, bias)

    def back(g):
        gx = gw = gb = None
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2)).reshape(O, B * T_out)
        if x.requires_grad:
            gcols = (w2.T @ g2).reshape(C, K, B, T_out).transpose(2, 0, 1, 3)
            gxp = np.zeros_like(xp)
            for j, off in enumerate(offsets):
                gxp[:, :, off:off + T_out] += gcols[:, :, j]
            gx = gxp[:, :, reach:] if causal_pad else gxp
        if w.requires_grad:
            gw = (g2 @ cols.T).reshape(O, C, K)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _result(y, parents, back, "conv1d_dilated")


# ----------------------------------------------------------------- debug output

def dump(t: Tensor) -> str:
    """Shape line, then row-major values with 17 significant digits."""
    head = " ".join(str(n) for n in t.shape)
    body = " ".join(f"{v:.17g}" for v in np.ravel(t.data))
    return f"{head}\n{body}\n"


def parse_dump(text: str) -> Tensor:
    lines = text.splitlines()
    shape = tuple(int(s) for s in lines[0].split())
    values = np.array([float(s) for s in lines[1].split()]) if len(lines) > 1 else np.array([])
    return Tensor(values.reshape(shape))
