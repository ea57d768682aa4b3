"""Dense float64 tensors with reverse-mode automatic differentiation.

Tensors are C-contiguous float64 numpy arrays. A ``GraphNode`` wraps one
tensor value together with its parents and the vector-Jacobian rule of the
operation that produced it, so a scalar loss can be differentiated exactly
with a single reverse sweep. Graph construction and ``backward`` are
single-threaded per graph; distinct graphs may live on distinct threads as
long as they share only read-only parameter values.

Every operation validates shapes up front and checks its output for
non-finite values: silent NaN/inf propagation is treated as a bug in the
caller and raised immediately.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "GraphNode",
    "ShapeError",
    "NonFiniteError",
    "BackwardError",
    "as_tensor",
    "leaf",
    "constant",
    "forward_op",
    "backward",
    "zero_grads",
    "scalar_value",
    "matmul",
    "add",
    "mul",
    "mul_scalar",
    "row_softmax",
    "log",
    "gather_rows",
    "tsum",
    "concat",
    "relu",
    "conv_window",
    "transpose",
    "logsumexp_rows",
    "pick",
]


class ShapeError(ValueError):
    """Operand shapes do not conform to an operation's shape rule."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or infinity."""


class BackwardError(RuntimeError):
    """Backward called on an invalid root or without resetting gradients."""


def as_tensor(x) -> np.ndarray:
    """Coerce to a C-contiguous float64 array (the tensor representation)."""
    return np.ascontiguousarray(x, dtype=np.float64)


class GraphNode:
    """One value in the computation graph.

    ``grad`` is the gradient accumulator; ``None`` means zero (it is
    allocated lazily on first accumulation). Accumulation is additive, so a
    parameter used at many positions receives the sum of all contributions.
    """

    __slots__ = ("value", "parents", "op", "grad", "requires_grad", "_vjp", "_backward_done")

    def __init__(self, value, parents=(), op="leaf", requires_grad=False, vjp=None):
        self.value = value
        self.parents = parents
        self.op = op
        self.grad = None
        self.requires_grad = requires_grad
        self._vjp = vjp
        self._backward_done = False

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g):
        if self.grad is None:
            # np.zeros uses calloc; zeros_like would touch every page
            self.grad = np.zeros(self.value.shape)
        self.grad += g

    def __repr__(self):
        return f"GraphNode(op={self.op!r}, shape={self.value.shape})"


def leaf(value, requires_grad=True) -> GraphNode:
    """Wrap a tensor as a graph leaf (a trainable parameter by default)."""
    return GraphNode(as_tensor(value), op="leaf", requires_grad=requires_grad)


def constant(value) -> GraphNode:
    """Wrap a tensor as a non-differentiable graph input."""
    return GraphNode(as_tensor(value), op="const", requires_grad=False)


def _check_finite(kind, value):
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{kind} produced non-finite values")


def _unbroadcast(g, shape):
    """Sum gradient ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _window_cols(x, width):
    """Stack each row's centered window of ``width`` rows, zero-padded."""
    n, d = x.shape
    half = width // 2
    cols = np.zeros((n, width * d))
    for o in range(width):
        shift = o - half
        lo, hi = max(0, -shift), min(n, n - shift)
        if lo < hi:
            cols[lo:hi, o * d : (o + 1) * d] = x[lo + shift : hi + shift]
    return cols


# --- operation builders -------------------------------------------------
#
# Each builder returns (value, vjp). The vjp closure receives the gradient
# at the output and accumulates into the parents.


def _op_matmul(a, b):
    va, vb = a.value, b.value
    if va.ndim != 2 or vb.ndim != 2 or va.shape[1] != vb.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {va.shape} and {vb.shape}")
    out = va @ vb

    def vjp(g):
        if a.requires_grad:
            a.accumulate(g @ vb.T)
        if b.requires_grad:
            b.accumulate(va.T @ g)

    return out, vjp


def _op_add(a, b):
    va, vb = a.value, b.value
    try:
        out = va + vb
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {va.shape} and {vb.shape}") from None

    def vjp(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, va.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, vb.shape))

    return out, vjp


def _op_mul(a, b):
    va, vb = a.value, b.value
    try:
        out = va * vb
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {va.shape} and {vb.shape}") from None

    def vjp(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * vb, va.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * va, vb.shape))

    return out, vjp


def _op_mul_scalar(a, scalar):
    s = float(scalar)
    out = a.value * s

    def vjp(g):
        if a.requires_grad:
            a.accumulate(g * s)

    return out, vjp


def _op_row_softmax(a):
    v = a.value
    if v.ndim != 2:
        raise ShapeError(f"row_softmax: expected a 2-D input, got shape {v.shape}")
    shifted = v - v.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        if a.requires_grad:
            a.accumulate(out * (g - (g * out).sum(axis=1, keepdims=True)))

    return out, vjp


def _op_log(a):
    out = np.log(a.value)  # non-finite output raises in forward_op

    def vjp(g):
        if a.requires_grad:
            a.accumulate(g / a.value)

    return out, vjp


def _op_relu(a):
    out = np.maximum(a.value, 0.0)

    def vjp(g):
        if a.requires_grad:
            a.accumulate(g * (a.value > 0.0))

    return out, vjp


def _op_sum(a):
    out = np.asarray(a.value.sum())

    def vjp(g):
        if a.requires_grad:
            a.accumulate(np.broadcast_to(g, a.value.shape))

    return out, vjp


def _op_gather_rows(a, indices):
    v = a.value
    if v.ndim != 2:
        raise ShapeError(f"gather_rows: expected a 2-D input, got shape {v.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    out = v[idx]

    def vjp(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros(v.shape)
            np.add.at(a.grad, idx, g)

    return out, vjp


def _op_pick(a, rows, cols):
    v = a.value
    if v.ndim != 2:
        raise ShapeError(f"pick: expected a 2-D input, got shape {v.shape}")
    r = np.asarray(rows, dtype=np.intp)
    c = np.asarray(cols, dtype=np.intp)
    out = v[r, c]

    def vjp(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros(v.shape)
            np.add.at(a.grad, (r, c), g)

    return out, vjp


def _op_concat(*nodes):
    vals = [n.value for n in nodes]
    widths = {v.shape[1:] for v in vals}
    if len(widths) != 1:
        raise ShapeError(f"concat: trailing dimensions differ: {[v.shape for v in vals]}")
    out = np.concatenate(vals, axis=0)
    offsets = np.cumsum([0] + [v.shape[0] for v in vals])

    def vjp(g):
        for node, lo, hi in zip(nodes, offsets[:-1], offsets[1:]):
            if node.requires_grad:
                node.accumulate(g[lo:hi])

    return out, vjp


def _op_transpose(a):
    v = a.value
    if v.ndim != 2:
        raise ShapeError(f"transpose: expected a 2-D input, got shape {v.shape}")
    out = np.ascontiguousarray(v.T)

    def vjp(g):
        if a.requires_grad:
            a.accumulate(g.T)

    return out, vjp


def _op_logsumexp_rows(a):
    v = a.value
    if v.ndim != 2:
        raise ShapeError(f"logsumexp_rows: expected a 2-D input, got shape {v.shape}")
    m = v.max(axis=1, keepdims=True)
    e = np.exp(v - m)
    s = e.sum(axis=1, keepdims=True)
    out = m + np.log(s)

    def vjp(g):
        if a.requires_grad:
            a.accumulate(g * (e / s))

    return out, vjp


def _op_conv_window(x, w, width):
    vx, vw = x.value, w.value
    if width < 1 or width % 2 == 0:
        raise ShapeError(f"conv_window: width must be odd and positive, got {width}")
    if vx.ndim != 2 or vw.ndim != 2 or vw.shape[0] != width * vx.shape[1]:
        raise ShapeError(
            f"conv_window: input {vx.shape} and weight {vw.shape} "
            f"do not conform for width {width}"
        )
    cols = _window_cols(vx, width)
    out = cols @ vw

    def vjp(g):
        if w.requires_grad:
            w.accumulate(cols.T @ g)
        if x.requires_grad:
            n, d = vx.shape
            half = width // 2
            gcols = g @ vw.T
            gx = np.zeros(vx.shape)
            for o in range(width):
                shift = o - half
                lo, hi = max(0, -shift), min(n, n - shift)
                if lo < hi:
                    gx[lo + shift : hi + shift] += gcols[lo:hi, o * d : (o + 1) * d]
            x.accumulate(gx)

    return out, vjp


_OPS = {
    "matmul": _op_matmul,
    "add": _op_add,
    "mul": _op_mul,
    "mul_scalar": _op_mul_scalar,
    "row_softmax": _op_row_softmax,
    "log": _op_log,
    "relu": _op_relu,
    "sum": _op_sum,
    "gather_rows": _op_gather_rows,
    "pick": _op_pick,
    "concat": _op_concat,
    "transpose": _op_transpose,
    "logsumexp_rows": _op_logsumexp_rows,
    "conv_window": _op_conv_window,
}


def forward_op(kind: str, inputs, **attrs) -> GraphNode:
    """Apply operation ``kind`` to ``inputs`` and record it in the graph."""
    builder = _OPS.get(kind)
    if builder is None:
        raise ValueError(f"unknown operation kind {kind!r}")
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        value, vjp = builder(*inputs, **attrs)
    _check_finite(kind, value)
    rg = any(n.requires_grad for n in inputs)
    return GraphNode(value, parents=tuple(inputs), op=kind, requires_grad=rg, vjp=vjp)


# Thin wrappers so call sites read like expressions.


def matmul(a, b):
    return forward_op("matmul", (a, b))


def add(a, b):
    return forward_op("add", (a, b))


def mul(a, b):
    return forward_op("mul", (a, b))


def mul_scalar(a, scalar):
    return forward_op("mul_scalar", (a,), scalar=scalar)


def row_softmax(a):
    return forward_op("row_softmax", (a,))


def log(a):
    return forward_op("log", (a,))


def relu(a):
    return forward_op("relu", (a,))


def tsum(a):
    return forward_op("sum", (a,))


def gather_rows(a, indices):
    return forward_op("gather_rows", (a,), indices=indices)


def pick(a, rows, cols):
    return forward_op("pick", (a,), rows=rows, cols=cols)


def concat(nodes):
    return forward_op("concat", tuple(nodes))


def transpose(a):
    return forward_op("transpose", (a,))


def logsumexp_rows(a):
    return forward_op("logsumexp_rows", (a,))


def conv_window(x, w, width):
    return forward_op("conv_window", (x, w), width=width)


def scalar_value(node) -> float:
    """Extract the python float from a size-1 node or array."""
    value = node.value if isinstance(node, GraphNode) else node
    return float(np.asarray(value).reshape(()))


def _toposort(root):
    """Deterministic post-order over the subgraph reaching ``root``.

    Iterative DFS; raises on cycles (possible only if a caller mutates
    ``parents`` by hand).
    """
    order = []
    state = {}  # id -> 1 while on stack, 2 when finished
    stack = [(root, iter(root.parents))]
    state[id(root)] = 1
    while stack:
        node, it = stack[-1]
        advanced = False
        for parent in it:
            s = state.get(id(parent))
            if s == 1:
                raise BackwardError("cycle detected in computation graph")
            if s is None:
                state[id(parent)] = 1
                stack.append((parent, iter(parent.parents)))
                advanced = True
                break
        if not advanced:
            stack.pop()
            state[id(node)] = 2
            order.append(node)
    return order


def backward(root: GraphNode) -> None:
    """Populate gradient accumulators of every node reachable from ``root``.

    ``root`` must be scalar-valued. Calling twice on the same root without
    a ``zero_grads`` reset is an error (it would silently double-count).
    """
    if root.value.size != 1:
        raise BackwardError(f"backward root must be scalar, got shape {root.value.shape}")
    if root._backward_done:
        raise BackwardError("backward already ran for this root; call zero_grads first")
    root._backward_done = True
    root.accumulate(np.ones_like(root.value))
    for node in reversed(_toposort(root)):
        if node._vjp is not None and node.requires_grad and node.grad is not None:
            node._vjp(node.grad)


def zero_grads(nodes) -> None:
    """Reset gradient accumulators (and backward markers) to zero."""
    for node in nodes:
        node.grad = None
        node._backward_done = False
