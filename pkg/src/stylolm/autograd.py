"""Dense tensors with reverse-mode automatic differentiation.

Storage defaults to float32; reductions (sums, means, log-sum-exp,
normalization statistics) accumulate in float64 and cast back, so
loss values are comparable across dtypes. Matrix products use the
BLAS accumulator of the storage dtype.

A computation graph belongs to a single training run: building it is
not thread-safe, but evaluating frozen parameters under ``no_grad()``
is reentrant.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import GradientError, ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (evaluation mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-dimensional array node in a reverse-mode differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        # Leaves that require grad always carry a zero-initialized buffer so
        # parameters untouched by a backward pass read as zero gradient.
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- gradient plumbing ---------------------------------------------

    def zero_grad_(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Populate ``grad`` on every reachable tensor that requires it."""
        if self.data.size != 1:
            raise GradientError(f"backward requires a scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other, self.dtype), -1.0))

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def transpose(self, axes=None):
        return transpose(self, axes)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)


def _as_tensor(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def _check_same_dtype(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"{op}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")


def _make(out_data: np.ndarray, parents: Sequence[Tensor],
          backward_fn: Callable[[np.ndarray], None] | None) -> Tensor:
    out = Tensor(out_data)
    if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = False  # only leaves flagged by the caller carry persistent grads
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise and structural ops --------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    _check_same_dtype(a, b, "add")
    out = a.data + b.data

    def backward(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(out, (a, b), backward)


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    _check_same_dtype(a, b, "mul")
    out = a.data * b.data

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = a.data * a.data.dtype.type(c)

    def backward(g):
        a._accumulate(g * a.data.dtype.type(c))

    return _make(out, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "matmul")
    if a.data.ndim < 1 or b.data.ndim < 2:
        raise ShapeError(f"matmul: unsupported ranks {a.data.ndim} and {b.data.ndim}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        a._accumulate(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape))
        b._accumulate(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape))

    return _make(out, (a, b), backward)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    perm = tuple(axes) if axes is not None else tuple(reversed(range(a.data.ndim)))
    inv = np.argsort(perm)
    out = np.transpose(a.data, perm)

    def backward(g):
        a._accumulate(np.transpose(g, inv))

    return _make(out, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.data.shape))

    return _make(out, (a,), backward)


def slice_(a: Tensor, key) -> Tensor:
    """Basic slicing (slices / ints / tuples thereof) with scatter-add backward."""
    out = a.data[key]

    def backward(g):
        buf = np.zeros_like(a.data)
        buf[key] = g
        a._accumulate(buf)

    return _make(np.ascontiguousarray(out), (a,), backward)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise ShapeError("concat of zero tensors")
    for t in ts[1:]:
        _check_same_dtype(ts[0], t, "concat")
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            t._accumulate(g[tuple(idx)])

    return _make(out, ts, backward)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ShapeError(f"embedding_lookup: id out of range [0, {table.data.shape[0]})")
    out = table.data[ids]

    def backward(g):
        buf = np.zeros_like(table.data)
        np.add.at(buf, ids, g)
        table._accumulate(buf)

    return _make(out, (table,), backward)


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(dtype=np.float64), dtype=a.dtype)

    def backward(g):
        a._accumulate(np.broadcast_to(g, a.data.shape).astype(a.dtype))

    return _make(out, (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = np.asarray(a.data.mean(dtype=np.float64), dtype=a.dtype)

    def backward(g):
        a._accumulate(np.broadcast_to(g / n, a.data.shape).astype(a.dtype))

    return _make(out, (a,), backward)


def add_const(a: Tensor, const: np.ndarray) -> Tensor:
    """Add an untracked constant (broadcastable), e.g. an attention mask."""
    out = a.data + np.asarray(const, dtype=a.dtype)

    def backward(g):
        a._accumulate(_unbroadcast(g, a.data.shape))

    return _make(out, (a,), backward)


# -- neural-net ops -------------------------------------------------------

_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu(a: Tensor) -> Tensor:
    x = a.data
    u = _GELU_C * (x + _GELU_A * x**3)
    th = np.tanh(u)
    out = 0.5 * x * (1.0 + th)

    def backward(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)
        local = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * du
        a._accumulate((g * local).astype(a.dtype))

    return _make(out.astype(a.dtype), (a,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True, dtype=np.float64)
    var = np.square(x.data.astype(np.float64) - mu).mean(axis=-1, keepdims=True)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = ((x.data - mu.astype(x.dtype)) * inv).astype(x.dtype)
    out = gain.data * xhat + bias.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        gain._accumulate((g * xhat).sum(axis=lead))
        bias._accumulate(g.sum(axis=lead))
        dxhat = g * gain.data
        s1 = dxhat.sum(axis=-1, keepdims=True, dtype=np.float64)
        s2 = (dxhat * xhat).sum(axis=-1, keepdims=True, dtype=np.float64)
        dx = (inv / d) * (d * dxhat - s1 - xhat * s2)
        x._accumulate(dx.astype(x.dtype))

    return _make(out, (x, gain, bias), backward)


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = (e / e.sum(axis=-1, keepdims=True, dtype=np.float64)).astype(a.dtype)

    def backward(g):
        dot = (g * s).sum(axis=-1, keepdims=True, dtype=np.float64)
        a._accumulate((s * (g - dot)).astype(a.dtype))

    return _make(s, (a,), backward)


def cross_entropy_mean(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-probability of ``targets`` under row-wise softmax, in nats.

    ``logits`` is (N, V); ``targets`` is an int array of N class indices.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy_mean: logits must be 2-D, got {logits.shape}")
    targets = np.asarray(targets)
    n, v = logits.data.shape
    if targets.shape != (n,):
        raise ShapeError(f"cross_entropy_mean: targets must have shape ({n},)")
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        raise ShapeError(f"cross_entropy_mean: target id out of range [0, {v})")
    z = logits.data.astype(np.float64)
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    picked = z[np.arange(n), targets]
    out = np.asarray((lse - picked).mean(), dtype=logits.dtype)

    def backward(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(n), targets] -= 1.0
        logits._accumulate((float(g) / n * p).astype(logits.dtype))

    return _make(out, (logits,), backward)
