"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation returns a new :class:`Tensor`.  When at least one input
requires a gradient, the result keeps a reference to its parents and a
closure that maps the output adjoint to the input adjoints.  Calling
:func:`backward` on a scalar walks the graph in reverse topological order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

ArrayLike = Union[np.ndarray, float, int, Sequence]

DTYPE = np.float64


class Tensor:
    """A float64 array plus an optional node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        _parents: Tuple["Tensor", ...] = (),
        _backward: Optional[Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]] = None,
        op: str = "leaf",
    ):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_not_scalar()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def _raise_not_scalar():
    raise ValueError("item() requires a single-element tensor")


def as_tensor(x: Union[Tensor, ArrayLike]) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Tuple[Tensor, ...], backward, op: str) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward, op=op)
    return Tensor(data, op=op)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}") from exc


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def backward(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    if np.any(b.data == 0):
        raise ValueError("division by zero")
    out = a.data / b.data

    def backward(g):
        return unbroadcast(g / b.data, a.shape), unbroadcast(-g * out / b.data, b.shape)

    return _make(out, (a, b), backward, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise ValueError("log of non-positive value")
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def clamp(a, lo: Optional[float] = None, hi: Optional[float] = None) -> Tensor:
    """Saturate into ``[lo, hi]``; gradient is zero where the bound is active."""
    a = as_tensor(a)
    lo_ = -np.inf if lo is None else lo
    hi_ = np.inf if hi is None else hi
    if lo_ > hi_:
        raise ValueError("clamp requires lo <= hi")
    out = np.clip(a.data, lo_, hi_)
    inside = (a.data >= lo_) & (a.data <= hi_)
    return _make(out, (a,), lambda g: (g * inside,), "clamp")


def sign(a) -> Tensor:
    # Used only after differentiation, so the gradient is defined as zero.
    a = as_tensor(a)
    return _make(np.sign(a.data), (a,), lambda g: (np.zeros_like(a.data),), "sign")


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "exp": exp,
    "log": log,
    "relu": relu,
    "sign": sign,
    "square": square,
}


def elementwise(op_kind: str, a, b=None, **kwargs) -> Tensor:
    """Dispatch an elementwise op by name (``clamp`` takes ``lo``/``hi``)."""
    if op_kind == "clamp":
        return clamp(a, **kwargs)
    try:
        fn = _ELEMENTWISE[op_kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op_kind!r}") from None
    if op_kind in ("add", "sub", "mul", "div"):
        if b is None:
            raise ValueError(f"{op_kind} needs two operands")
        return fn(a, b)
    return fn(a)


# ---------------------------------------------------------------- reductions / shape


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / float(count))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ValueError("transpose expects a 2-D tensor")
    return _make(a.data.T, (a,), lambda g: (g.T,), "transpose")


def gather(a, index: np.ndarray) -> Tensor:
    """Pick entries along the last axis of a 2-D tensor: ``out[i, j] = a[i, index[i, j]]``.

    Indices are plain integers (not differentiated); values are.
    """
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if a.ndim != 2 or index.ndim != 2 or index.shape[0] != a.shape[0]:
        raise ValueError(f"gather shape mismatch: {a.shape} with index {index.shape}")
    out = np.take_along_axis(a.data, index, axis=1)

    def backward(g):
        ga = np.zeros_like(a.data)
        rows = np.repeat(np.arange(a.shape[0]), index.shape[1])
        np.add.at(ga, (rows, index.reshape(-1)), g.reshape(-1))
        return (ga,)

    return _make(out, (a,), backward, "gather")


def norm(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm along ``axis``; the gradient at the origin is taken as zero."""
    a = as_tensor(a)
    out = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))

    def backward(g):
        g = g if keepdims else np.expand_dims(g, axis)
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g * a.data / safe, 0.0),)

    return _make(out if keepdims else np.squeeze(out, axis=axis), (a,), backward, "norm")


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def softmax(logits) -> Tensor:
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ValueError(f"softmax expects [batch, K], got {logits.shape}")
    if logits.shape[1] < 2:
        raise ValueError("softmax needs K >= 2")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _make(out, (logits,), backward, "softmax")


def logsumexp(a) -> Tensor:
    """Row-wise log-sum-exp of a [batch, K] tensor with max subtraction."""
    a = as_tensor(a)
    m = a.data.max(axis=1, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=1, keepdims=True)
    out = (np.log(s) + m)[:, 0]

    def backward(g):
        return (g[:, None] * (e / s),)

    return _make(out, (a,), backward, "logsumexp")


# ---------------------------------------------------------------- convolution


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> Tuple[np.ndarray, int, int]:
    n, c, h, w = x.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols, oh, ow


def _col2im(cols: np.ndarray, shape, stride: int, padding: int) -> np.ndarray:
    n, c, h, w = shape
    _, _, kh, kw, oh, ow = cols.shape
    xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols[:, :, i, j]
    if padding:
        return xp[:, :, padding:-padding, padding:-padding]
    return xp


def conv2d(x, kernel, stride: int = 1, padding: int = 0) -> Tensor:
    """Direct 2-D cross-correlation, ``x: [N, C, H, W]``, ``kernel: [F, C, kh, kw]``."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError("conv2d expects 4-D input and kernel")
    n, c, h, w = x.shape
    f, kc, kh, kw = kernel.shape
    if kc != c:
        raise ValueError(f"channel mismatch: input {c}, kernel {kc}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ValueError("kernel larger than padded input")
    cols, oh, ow = _im2col(x.data, kh, kw, stride, padding)
    flat = cols.reshape(n, c * kh * kw, oh * ow)
    kmat = kernel.data.reshape(f, c * kh * kw)
    out = np.einsum("fk,nkp->nfp", kmat, flat).reshape(n, f, oh, ow)

    def backward(g):
        gflat = g.reshape(n, f, oh * ow)
        gk = np.einsum("nfp,nkp->fk", gflat, flat).reshape(kernel.shape)
        gcols = np.einsum("fk,nfp->nkp", kmat, gflat).reshape(n, c, kh, kw, oh, ow)
        gx = _col2im(gcols, x.shape, stride, padding)
        return gx, gk

    return _make(out, (x, kernel), backward, "conv2d")


# ---------------------------------------------------------------- backward pass


@dataclass
class Tape:
    """Reverse-topologically ordered view of the graph under a scalar root."""

    nodes: list = field(default_factory=list)
    root: Optional[Tensor] = None

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        order: list = []
        seen = set()
        stack = [(root, False)]
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
        return cls(nodes=order, root=root)


def backward(root: Tensor) -> Tape:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if root.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    tape = Tape.from_root(root)
    if not root.requires_grad:
        return tape
    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    return tape


def grad_of(fn: Callable[[Tensor], Tensor], x: np.ndarray) -> Tuple[float, np.ndarray]:
    """Value and gradient of scalar ``fn`` at ``x`` (a fresh leaf)."""
    leaf = Tensor(np.array(x, dtype=DTYPE), requires_grad=True)
    out = fn(leaf)
    backward(out)
    g = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
    return float(out.data.reshape(-1)[0]), g
