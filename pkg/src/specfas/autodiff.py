"""Dense float64 tensors with reverse-mode differentiation.

Every op builds a node holding its parents and a closure mapping the output
gradient to per-parent gradients. ``Tensor.backward`` walks the graph once in
reverse topological order.

Gradient policy: leaf gradients *accumulate* across ``backward`` calls, the
same way as in the mainstream frameworks. Call ``zero_grad`` (or
``Tensor.zero_grad`` on each parameter) between steps. Interior nodes never
keep gradients.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

DTYPE = np.float64


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        joined = " vs ".join(str(list(s)) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class DomainError(ValueError):
    """Input lies outside the domain of the op (log of <= 0, zero-norm rows)."""


class GraphError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE, copy=True) if not isinstance(data, np.ndarray) else data.astype(DTYPE, copy=True)
        arr.flags.writeable = False
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"
        self.name = name

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        out = cls.__new__(cls)
        data = np.asarray(data, dtype=DTYPE)
        data.flags.writeable = False
        out.data = data
        out.grad = None
        out.name = None
        out.op = op
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- basic properties -------------------------------------------------
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
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}, op={self.op}{flag})"

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __pow__(self, p):
        return power(self, float(p))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return slice_(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    # -- backward ---------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf that requires grad."""
        if grad is None:
            if self.data.size != 1:
                raise GraphError(f"backward() needs a scalar loss, got shape {list(self.shape)}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=DTYPE)
            if grad.shape != self.shape:
                raise ShapeError("backward", grad.shape, self.shape)
        if not self.requires_grad:
            raise GraphError("loss does not depend on any tensor with requires_grad=True")

        order = topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
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


def topo_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``; each node appears after all of its inputs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# -- elementwise binary ----------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return Tensor._from_op(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return Tensor._from_op(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return Tensor._from_op(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    out = a.data / b.data
    return Tensor._from_op(
        out, (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)), "div")


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a Python scalar that is not part of the graph."""
    c = float(c)
    return Tensor._from_op(a.data * c, (a,), lambda g: (g * c,), "scale")


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError("broadcast_to", a.shape, shape) from None
    return Tensor._from_op(out, (a,), lambda g: (_unbroadcast(g, a.shape),), "broadcast_to")


# -- elementwise unary -----------------------------------------------------
def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._from_op(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError(f"log: input has {int(np.sum(a.data <= 0))} non-positive entries")
    return Tensor._from_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def power(a: Tensor, p: float) -> Tensor:
    """``a ** p``. Integer ``p`` accepts any base (nonzero when ``p < 0``); other
    exponents need a positive base, or a non-negative one when ``p > 0``."""
    p = float(p)
    if p == 0.0:
        return Tensor._from_op(np.ones_like(a.data), (a,), lambda g: (None,), "power")
    if p < 0 and np.any(a.data == 0):
        raise DomainError("power: negative exponent of zero")
    if not p.is_integer() and np.any(a.data < 0):
        raise DomainError("power: fractional exponent of a negative base")
    out = a.data ** p
    if p >= 1.0 or p < 0:
        deriv = p * a.data ** (p - 1.0)
    else:
        with np.errstate(divide="ignore"):
            deriv = np.where(a.data > 0, p * a.data ** (p - 1.0), 0.0)
    return Tensor._from_op(out, (a,), lambda g: (g * deriv,), "power")


def clip(a: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clamp values; gradient is passed only where the input was inside the range."""
    inside = np.ones(a.shape, dtype=bool)
    if lo is not None:
        inside &= a.data >= lo
    if hi is not None:
        inside &= a.data <= hi
    out = np.clip(a.data, lo, hi)
    return Tensor._from_op(out, (a,), lambda g: (g * inside,), "clip")


# -- reductions ------------------------------------------------------------
def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._from_op(out, (a,), back, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return scale(sum_(a, axis, keepdims), 1.0 / n)


# -- shape manipulation ----------------------------------------------------
def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    return Tensor._from_op(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor._from_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def slice_(a: Tensor, idx) -> Tensor:
    out = a.data[idx]

    def back(g):
        full = np.zeros(a.shape, dtype=DTYPE)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._from_op(out, (a,), back, "slice")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat: need at least one tensor")
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(t.shape[d] != ref.shape[d] for d in range(ref.ndim) if d != ax):
            raise ShapeError("concat", ref.shape, t.shape)
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return [np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors))]

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=ax), tensors, back, "concat")


# -- linear algebra --------------------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._from_op(a.data @ b.data, (a, b), back, "matmul")


def _windows(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    # [N, Hp, Wp, C] -> [N, oh, ow, C, k, k] view
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    return win[:, ::stride, ::stride]


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """NHWC convolution with kernel laid out as ``[k, k, c_in, c_out]``."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or w.shape[0] != w.shape[1] or x.shape[3] != w.shape[2]:
        raise ShapeError("conv2d", x.shape, w.shape)
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: stride must be >= 1 and padding >= 0")
    n, h, wd, cin = x.shape
    k, cout = w.shape[0], w.shape[3]
    hp, wp = h + 2 * padding, wd + 2 * padding
    if hp < k or wp < k:
        raise ShapeError("conv2d", x.shape, w.shape)
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x.data
    win = _windows(xp, k, stride)
    oh, ow = win.shape[1], win.shape[2]
    # cols: [N*oh*ow, k*k*cin] ordered (ki, kj, c) to match w's layout
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * oh * ow, k * k * cin)
    wmat = w.data.reshape(k * k * cin, cout)
    out = (cols @ wmat).reshape(n, oh, ow, cout)

    def back(g):
        g2 = g.reshape(n * oh * ow, cout)
        gw = (cols.T @ g2).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wmat.T).reshape(n, oh, ow, k, k, cin)
            gxp = np.zeros((n, hp, wp, cin), dtype=DTYPE)
            for i in range(k):
                for j in range(k):
                    gxp[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :] += gcols[:, :, :, i, j, :]
            gx = gxp[:, padding:padding + h, padding:padding + wd, :] if padding else gxp
        return gx, gw

    return Tensor._from_op(out, (x, w), back, "conv2d")


# -- normalizations --------------------------------------------------------
def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(out, (a,), back, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(a.data - m).sum(axis=axis, keepdims=True))
    out = a.data - lse
    sm = np.exp(out)

    def back(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (a,), back, "log_softmax")


def l2_normalize(a: Tensor, axis: int = -1) -> Tensor:
    norm = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    if np.any(norm == 0):
        raise DomainError("l2_normalize: zero-norm row")
    out = a.data / norm

    def back(g):
        return ((g - out * (g * out).sum(axis=axis, keepdims=True)) / norm,)

    return Tensor._from_op(out, (a,), back, "l2_normalize")


# -- gradient checking -----------------------------------------------------
@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: list[tuple[tuple[int, ...], float, float, float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.max_rel_error < 1e-4


def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5, tol: float = 1e-4,
               n_worst: int = 5, indices: Sequence[int] | None = None) -> GradCheckReport:
    """Compare analytic gradients of scalar ``f`` with central differences.

    Relative error per element is ``|a - n| / max(|a|, |n|, 1e-6 * max(1, |f(x)|))``.
    The floor tracks the round-off of the difference quotient, which scales with
    ``|f|``, so near-zero gradient entries are compared absolutely.
    ``worst`` lists ``(index, analytic, numeric, rel_err)`` for the largest
    offenders. ``indices`` restricts the comparison to those flat positions,
    which keeps checks of large inputs affordable.
    """
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=DTYPE)
    xt = Tensor(base, requires_grad=True)
    out = f(xt)
    fx = abs(out.item())
    out.backward()
    analytic = xt.grad if xt.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    positions = np.arange(flat.size) if indices is None else np.asarray(indices, dtype=np.int64)
    for i in positions:
        orig = flat[i]
        flat[i] = orig + h
        fp = f(Tensor(base)).item()
        flat[i] = orig - h
        fm = f(Tensor(base)).item()
        flat[i] = orig
        numeric.reshape(-1)[i] = (fp - fm) / (2 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6 * max(1.0, fx))
    rel = np.zeros(base.shape)
    rel.reshape(-1)[positions] = (np.abs(analytic - numeric) / denom).reshape(-1)[positions]
    order = np.argsort(rel.reshape(-1), kind="stable")[::-1][:n_worst]
    worst = [(tuple(int(v) for v in np.unravel_index(i, base.shape)), float(analytic.reshape(-1)[i]),
              float(numeric.reshape(-1)[i]), float(rel.reshape(-1)[i])) for i in order]
    report = GradCheckReport(float(rel.max()) if rel.size else 0.0, worst)
    if report.max_rel_error >= tol:
        logger.debug("grad_check above tolerance %.3g: %s", tol, worst)
    return report
