"""Dense float tensors with reverse-mode autodiff.

A Tensor wraps a contiguous numpy array of rank 0..4 (NCHW for feature
maps). Every primitive records its inputs and an adjoint closure; backward
replays the recorded ops in reverse execution order, accumulating into
``.grad`` additively when a tensor is used more than once. Forward math
runs in float32 by default; ops preserve float64 operands so the
finite-difference oracle in :func:`grad_check` can re-evaluate in 64-bit.
"""
from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

_SEQ = itertools.count()

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """Rank-0..4 dense array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        if arr.ndim > 4:
            raise DimensionError(f"tensors are rank 0..4, got shape {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple = ()
        self._backward = None
        self._seq = next(_SEQ)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        req = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{req})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    # operator sugar; the named functions below are the primitives
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return sub(self, other)


class GradTape:
    """Execution-ordered record of the ops reachable from a root tensor.

    Replaying the record in reverse visits every node after all of its
    consumers, so each ``.grad`` is complete before it is propagated.
    """

    def __init__(self, root: Tensor):
        nodes = []
        seen = set()
        stack = [root]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(t._parents)
        nodes.sort(key=lambda t: t._seq)
        self.nodes = nodes

    def replay(self, root: Tensor, release: bool = True) -> None:
        for t in self.nodes:
            t.grad = None
        root.grad = np.ones_like(root.data)
        for t in reversed(self.nodes):
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)
            if release:
                t._parents = ()
                t._backward = None


def backward(loss: Tensor, release: bool = True) -> None:
    """Populate ``.grad`` of every requires_grad leaf with d(loss)/d(leaf).

    ``loss`` must be a scalar attached to the tape. Grads from any earlier
    backward call are discarded first; within one call, contributions from
    multiple uses of the same tensor accumulate additively. By default the
    graph links are released afterwards (one backward per graph).
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not connected to any requires_grad tensor")
    GradTape(loss).replay(loss, release=release)


def _accum(t: Tensor, g: np.ndarray) -> None:
    # never in-place: a fresh array avoids aliasing views of consumer grads
    t.grad = g if t.grad is None else t.grad + g


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    out._seq = next(_SEQ)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g over axes that were broadcast to reach g's shape."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, (gs, ts) in enumerate(zip(g.shape, shape)) if ts == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise suite
# ---------------------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    """Elementwise sum; the usual broadcast rules apply."""
    b = _as_tensor(b, a)
    try:
        data = a.data + b.data
    except ValueError:
        raise DimensionError(f"add cannot broadcast {a.shape} with {b.shape}") from None

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _node(data, (a, b), bw)


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; broadcasting as in :func:`add`."""
    b = _as_tensor(b, a)
    try:
        data = a.data * b.data
    except ValueError:
        raise DimensionError(f"mul cannot broadcast {a.shape} with {b.shape}") from None

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, -g)

    return _node(-a.data, (a,), bw)


def sub(a: Tensor, b) -> Tensor:
    return add(a, neg(_as_tensor(b, a)))


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar."""
    c = float(c)

    def bw(g):
        _accum(a, g * c)

    return _node(a.data * np.asarray(c, dtype=a.data.dtype), (a,), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    data = np.where(mask, a.data, np.asarray(0, dtype=a.data.dtype))

    def bw(g):
        _accum(a, g * mask)

    return _node(data, (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    """Concatenate along ``axis``; all other extents must agree."""
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    ref = tensors[0].data.shape
    for t in tensors[1:]:
        s = t.data.shape
        if len(s) != len(ref) or any(x != y for i, (x, y) in enumerate(zip(s, ref)) if i != axis % len(ref)):
            raise DimensionError(f"concat along axis {axis} cannot join {ref} with {s}")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _accum(t, g[tuple(sl)])

    return _node(data, tuple(tensors), bw)


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    """Stack NCHW feature maps along the channel axis."""
    return concat(tensors, axis=1)


def mean_along(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Mean over one axis (sum divided by the extent)."""
    if axis >= a.data.ndim or axis < -a.data.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {a.shape}")
    n = a.data.shape[axis]
    data = a.data.mean(axis=axis, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape) / n)

    return _node(data, (a,), bw)


def sum_all(a: Tensor) -> Tensor:
    """Sum of every element, as a rank-0 tensor."""
    data = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def bw(g):
        _accum(a, np.broadcast_to(g, a.data.shape))

    return _node(data, (a,), bw)


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.data.size)


# ---------------------------------------------------------------------------
# shape movement
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.data.size:
        raise DimensionError(f"cannot reshape {a.shape} ({a.data.size} elements) to {shape}")
    if len(shape) > 4:
        raise DimensionError(f"tensors are rank 0..4, got target shape {shape}")
    old = a.data.shape

    def bw(g):
        _accum(a, g.reshape(old))

    return _node(a.data.reshape(shape), (a,), bw)


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(x) for x in axes)
    if sorted(axes) != list(range(a.data.ndim)):
        raise DimensionError(f"{axes} is not a permutation of the axes of {a.shape}")
    inverse = tuple(np.argsort(axes))

    def bw(g):
        _accum(a, g.transpose(inverse))

    return _node(np.ascontiguousarray(a.data.transpose(axes)), (a,), bw)


def transpose2d(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose2d needs a matrix, got {a.shape}")
    return permute(a, (1, 0))


# ---------------------------------------------------------------------------
# contractions and normalizers
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; rank-2 operands, or rank-3 for a stacked batch."""
    if a.data.ndim != b.data.ndim or a.data.ndim not in (2, 3):
        raise DimensionError(f"matmul needs two matrices or two stacked batches, got {a.shape} and {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2] or a.data.shape[:-2] != b.data.shape[:-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} vs {b.shape}")
    data = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            _accum(a, g @ b.data.swapaxes(-1, -2))
        if b.requires_grad:
            _accum(b, a.data.swapaxes(-1, -2) @ g)

    return _node(data, (a, b), bw)


def softmax_along(a: Tensor, axis: int) -> Tensor:
    """Softmax over one axis, computed with max-subtraction."""
    if axis >= a.data.ndim or axis < -a.data.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {a.shape}")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accum(a, y * (g - dot))

    return _node(y, (a,), bw)


def log_softmax_along(a: Tensor, axis: int) -> Tensor:
    if axis >= a.data.ndim or axis < -a.data.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {a.shape}")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    data = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = np.exp(data)

    def bw(g):
        _accum(a, g - y * g.sum(axis=axis, keepdims=True))

    return _node(data, (a,), bw)


# ---------------------------------------------------------------------------
# gradient oracle
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between the analytic gradient of ``f`` and a
    64-bit central-difference oracle.

    The analytic pass runs in the package's training precision (float32);
    the oracle re-evaluates ``f`` in float64 at ``x +- h`` per coordinate.
    Error per coordinate is |analytic - fd| / max(1, |fd|).
    """
    xa = Tensor(np.asarray(x.data, dtype=np.float32).copy(), requires_grad=True)
    loss = f(xa)
    backward(loss)
    if xa.grad is None:
        raise ContractError("f does not depend on x")
    analytic = np.asarray(xa.grad, dtype=np.float64).ravel()

    base = np.asarray(x.data, dtype=np.float64).copy()
    flat = base.ravel()
    fd = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(Tensor(base.copy(), dtype=np.float64)).item()
        flat[i] = orig - h
        lo = f(Tensor(base.copy(), dtype=np.float64)).item()
        flat[i] = orig
        fd[i] = (hi - lo) / (2.0 * h)

    denom = np.maximum(1.0, np.abs(fd))
    return float(np.max(np.abs(analytic - fd) / denom)) if flat.size else 0.0
