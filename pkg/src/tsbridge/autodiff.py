"""Minimal reverse-mode autodiff over float64 numpy arrays.

Every primitive registers a backward rule expressed in terms of the
primitives themselves, so gradients produced with ``create_graph=True``
are ordinary graph nodes and can be differentiated once more (enough to
differentiate through a single unrolled gradient-descent step).
Graphs are per-call: nothing is retained across iterations beyond the
tensors the caller keeps alive.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to a primitive's rule."""

    def __init__(self, primitive: str, *shapes):
        self.primitive = primitive
        self.shapes = shapes
        super().__init__(
            f"{primitive}: incompatible shapes " + " vs ".join(str(s) for s in shapes)
        )


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def _grad_mode(enabled: bool):
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = enabled
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Shaped float64 array, optionally attached to a computation graph.

    Leaves are created directly; non-leaves are produced by primitives and
    carry a backward rule plus references to their parents. A tensor with
    ``requires_grad=False`` never accumulates a gradient.
    """

    __slots__ = ("data", "requires_grad", "_parents", "_rule", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._rule: Callable[["Tensor"], tuple] | None = None
        self._op: str | None = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def is_leaf(self) -> bool:
        return self._rule is None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        op = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{op})"

    # -- operator sugar -------------------------------------------------
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op: str, data: np.ndarray, parents: tuple[Tensor, ...], rule) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._rule = rule
        out._op = op
    else:
        out.requires_grad = False
        out._parents = ()
        out._rule = None
        out._op = None
    return out


def _reduce_to(grad: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Sum-reduce a broadcast gradient back to ``shape`` (differentiable)."""
    if grad.shape == shape:
        return grad
    extra = grad.data.ndim - len(shape)
    if extra > 0:
        grad = tsum(grad, axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = tsum(grad, axis=axes, keepdims=True)
    if grad.shape != shape:
        grad = reshape(grad, shape)
    return grad


# -- arithmetic ---------------------------------------------------------

def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)

    def rule(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _make("add", a.data + b.data, (a, b), rule)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)

    def rule(g):
        return _reduce_to(g, a.shape), _reduce_to(neg(g), b.shape)

    return _make("sub", a.data - b.data, (a, b), rule)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)

    def rule(g):
        return _reduce_to(mul(g, b), a.shape), _reduce_to(mul(g, a), b.shape)

    return _make("mul", a.data * b.data, (a, b), rule)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)

    def rule(g):
        ga = div(g, b)
        gb = neg(div(mul(g, a), mul(b, b)))
        return _reduce_to(ga, a.shape), _reduce_to(gb, b.shape)

    return _make("div", a.data / b.data, (a, b), rule)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def rule(g):
        return (neg(g),)

    return _make("neg", -a.data, (a,), rule)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def rule(g):
        return matmul(g, transpose(b)), matmul(transpose(a), g)

    return _make("matmul", a.data @ b.data, (a, b), rule)


def axis_dot(a, w, axis: int) -> Tensor:
    """Contract ``axis`` of ``a`` with the first axis of the 2-D ``w``; the
    result carries ``w``'s second axis in the same position."""
    a, w = as_tensor(a), as_tensor(w)
    axis = axis % a.data.ndim
    if w.data.ndim != 2 or a.shape[axis] != w.shape[0]:
        raise ShapeError("axis_dot", a.shape, w.shape)

    def rule(g):
        return axis_dot(g, transpose(w), axis), _axis_outer(a, g, axis)

    # batched gemm over the swapped view avoids tensordot's full-array copy
    data = np.matmul(np.swapaxes(a.data, axis, -1), w.data).swapaxes(axis, -1)
    return _make("axis_dot", data, (a, w), rule)


def _axis_outer(a: Tensor, g: Tensor, axis: int) -> Tensor:
    """out[p, q] = sum over all other indices of a[.., p, ..] * g[.., q, ..];
    the weight gradient of axis_dot."""

    def rule(u):
        return axis_dot(g, transpose(u), axis), axis_dot(a, u, axis)

    flat_a = np.moveaxis(a.data, axis, 0).reshape(a.shape[axis], -1)
    flat_g = np.moveaxis(g.data, axis, 0).reshape(g.shape[axis], -1)
    return _make("axis_outer", flat_a @ flat_g.T, (a, g), rule)


# -- reductions and shape ops --------------------------------------------

def _norm_axes(axis, ndim) -> tuple[int, ...] | None:
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.data.ndim)

    def rule(g):
        if not keepdims and axes is not None:
            kshape = list(a.shape)
            for ax in axes:
                kshape[ax] = 1
            g = reshape(g, tuple(kshape))
        return (broadcast_to(g, a.shape),)

    return _make("sum", np.sum(a.data, axis=axes, keepdims=keepdims), (a,), rule)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.data.ndim)
    if axes is None:
        count = a.size
    else:
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axes, keepdims=keepdims), 1.0 / count)


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        data = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError("broadcast", a.shape, shape) from None

    def rule(g):
        return (_reduce_to(g, a.shape),)

    return _make("broadcast", data, (a,), rule)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    orig = a.shape

    def rule(g):
        return (reshape(g, orig),)

    return _make("reshape", data, (a,), rule)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    axes = tuple(axes)
    inverse = tuple(int(i) for i in np.argsort(axes))

    def rule(g):
        return (transpose(g, inverse),)

    return _make("transpose", a.data.transpose(axes), (a,), rule)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    parts = tuple(as_tensor(t) for t in tensors)
    if not parts:
        raise ShapeError("concat")
    ndim = parts[0].data.ndim
    axis = axis % ndim
    for p in parts[1:]:
        if p.data.ndim != ndim:
            raise ShapeError("concat", parts[0].shape, p.shape)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def rule(g):
        return tuple(
            slice_axis(g, axis, int(offsets[i]), int(offsets[i + 1]))
            for i in range(len(parts))
        )

    return _make("concat", np.concatenate([p.data for p in parts], axis=axis), parts, rule)


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    axis = axis % a.data.ndim
    if not (0 <= start <= stop <= a.shape[axis]):
        raise ShapeError("slice", a.shape, (start, stop))
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, stop)
    total = a.shape[axis]

    def rule(g):
        return (_embed_axis(g, axis, start, total),)

    return _make("slice", a.data[tuple(index)], (a,), rule)


def _embed_axis(a: Tensor, axis: int, start: int, total: int) -> Tensor:
    """Place ``a`` into a zero tensor of extent ``total`` along ``axis``."""
    length = a.shape[axis]
    before = list(a.shape)
    before[axis] = start
    after = list(a.shape)
    after[axis] = total - start - length
    parts = []
    if before[axis]:
        parts.append(Tensor(np.zeros(before)))
    parts.append(a)
    if after[axis]:
        parts.append(Tensor(np.zeros(after)))
    return concat(parts, axis=axis) if len(parts) > 1 else a


def pad_axis(a, axis: int, target: int) -> Tensor:
    """Append zeros along ``axis`` until its extent reaches ``target``."""
    a = as_tensor(a)
    axis = axis % a.data.ndim
    if target < a.shape[axis]:
        raise ShapeError("pad", a.shape, (target,))
    if target == a.shape[axis]:
        return a
    return _embed_axis(a, axis, 0, target)


def gather(a, indices, axis: int = 0) -> Tensor:
    """Select entries along ``axis`` by integer index (with repetition)."""
    a = as_tensor(a)
    axis = axis % a.data.ndim
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= a.shape[axis])):
        raise ShapeError("gather", a.shape, idx.shape)
    size = a.shape[axis]

    def rule(g):
        return (_scatter_add(g, idx, axis, size),)

    return _make("gather", np.take(a.data, idx, axis=axis), (a,), rule)


def _scatter_add(g: Tensor, idx: np.ndarray, axis: int, size: int) -> Tensor:
    shape = list(g.shape)
    shape[axis] = size
    out = np.zeros(shape)
    np.add.at(out, tuple(idx if d == axis else slice(None) for d in range(len(shape))), g.data)

    def rule(gg):
        return (gather(gg, idx, axis=axis),)

    return _make("scatter_add", out, (g,), rule)


# -- nonlinearities -------------------------------------------------------

def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    data = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)
    holder: list[Tensor] = []

    def rule(g):
        y = holder[0]
        return (mul(g, mul(y, sub(1.0, y))),)

    out = _make("sigmoid", data, (a,), rule)
    holder.append(out)
    return out


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    data = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def rule(g):
        return (mul(g, sigmoid(a)),)

    return _make("softplus", data, (a,), rule)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    holder: list[Tensor] = []

    def rule(g):
        y = holder[0]
        return (mul(g, sub(1.0, mul(y, y))),)

    out = _make("tanh", np.tanh(a.data), (a,), rule)
    holder.append(out)
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = (a.data > 0).astype(np.float64)

    def rule(g):
        return (mul(g, Tensor(mask)),)

    return _make("relu", a.data * mask, (a,), rule)


def exp(a) -> Tensor:
    a = as_tensor(a)
    holder: list[Tensor] = []

    def rule(g):
        return (mul(g, holder[0]),)

    out = _make("exp", np.exp(a.data), (a,), rule)
    holder.append(out)
    return out


def log(a) -> Tensor:
    a = as_tensor(a)

    def rule(g):
        return (div(g, a),)

    return _make("log", np.log(a.data), (a,), rule)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    axis = axis % a.data.ndim
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / np.sum(e, axis=axis, keepdims=True)
    holder: list[Tensor] = []

    def rule(g):
        y = holder[0]
        gy = mul(g, y)
        return (sub(gy, mul(y, tsum(gy, axis=axis, keepdims=True))),)

    out = _make("softmax", data, (a,), rule)
    holder.append(out)
    return out


# -- backward -------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(output: Tensor, wrt: Iterable[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Gradients of a scalar ``output`` with respect to each tensor in ``wrt``.

    With ``create_graph=True`` the returned gradients are graph nodes that
    can be differentiated again. Tensors in ``wrt`` that the graph never
    reaches get explicit zero gradients.
    """
    wrt = list(wrt)
    if output.size != 1:
        raise ValueError(f"backward requires a scalar output, got shape {output.shape}")
    for i, leaf in enumerate(wrt):
        if not leaf.requires_grad:
            raise ValueError(f"wrt[{i}] does not require grad")
    wrt_ids = {id(t) for t in wrt}
    grads: dict[int, Tensor] = {id(output): Tensor(np.ones(output.shape))}
    if output.requires_grad:
        with _grad_mode(create_graph):
            for node in reversed(_topo_order(output)):
                if node._rule is None:
                    continue
                g = grads.get(id(node)) if id(node) in wrt_ids else grads.pop(id(node), None)
                if g is None:
                    continue
                for parent, pg in zip(node._parents, node._rule(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    prev = grads.get(id(parent))
                    grads[id(parent)] = pg if prev is None else add(prev, pg)
    return [
        grads[id(leaf)] if id(leaf) in grads else Tensor(np.zeros(leaf.shape))
        for leaf in wrt
    ]


def finite_difference_check(
    fn: Callable[[Sequence[Tensor]], Tensor],
    leaves: Sequence[Tensor],
    step: float = 1e-4,
) -> float:
    """Max over leaves of max|analytic - central difference| / (max|analytic| + 1e-8).

    ``fn`` takes the leaf list and must be deterministic. Raises on
    non-finite analytic or numeric values, naming the offending leaf.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    leaves = list(leaves)
    analytic = backward(fn(leaves), leaves)
    worst = 0.0
    for i, (leaf, ga) in enumerate(zip(leaves, analytic)):
        if not np.all(np.isfinite(ga.data)):
            raise FloatingPointError(f"non-finite analytic gradient at leaf {i}")
        # note: re-evaluations run with recording enabled because fn may
        # itself differentiate (bi-level objectives)
        numeric = np.zeros(leaf.shape).reshape(-1)
        for j in range(leaf.size):
            orig = leaf.data.flat[j]
            leaf.data.flat[j] = orig + step
            hi = fn(leaves).item()
            leaf.data.flat[j] = orig - step
            lo = fn(leaves).item()
            leaf.data.flat[j] = orig
            numeric[j] = (hi - lo) / (2.0 * step)
        if not np.all(np.isfinite(numeric)):
            raise FloatingPointError(f"non-finite numeric gradient at leaf {i}")
        diff = float(np.max(np.abs(ga.data.reshape(-1) - numeric)))
        scale = float(np.max(np.abs(ga.data))) + 1e-8
        worst = max(worst, diff / scale)
    return worst
