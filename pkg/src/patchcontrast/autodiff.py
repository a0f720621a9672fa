"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A computation is described as a DAG of :class:`Node` objects built with the
op constructors below (``conv2d``, ``relu``, ``matmul``, ``avg_pool``,
``upsample_bilinear``, ``softmax``, ``log``, elementwise arithmetic,
reductions, and a few gather/normalize helpers needed by the loss suite).
Wrapping the designated output node in a :class:`Graph` gives three
operations:

* :func:`evaluate`  -- forward pass, returns values of all named nodes
* :func:`backward`  -- gradients of the scalar output w.r.t. every leaf
* :func:`grad_check` -- central finite-difference verification

Everything is computed in 64-bit floats; tensors are plain ``numpy``
arrays (row-major).  Graphs and nodes are immutable once built and safe to
share read-only; evaluation keeps its state in locals so one graph may be
evaluated concurrently.  Broadcasting is deliberately restricted: binary
ops accept equal shapes or one scalar operand, and ``bias_add`` is the only
vector broadcast.
"""

from __future__ import annotations

import itertools

import numpy as np


class GraphError(Exception):
    """Structural or shape problem in a graph, naming the offending node."""

    def __init__(self, message, node=None):
        self.node = node
        if node is not None:
            message = f"{message} (node {node.debug_name()})"
        super().__init__(message)


class NonFiniteError(GraphError):
    """An intermediate value contained NaN or infinity."""


_ids = itertools.count()


class Node:
    """One operation record: op kind, input nodes, and static parameters."""

    __slots__ = ("id", "op", "inputs", "params", "name")

    def __init__(self, op, inputs=(), params=None, name=None):
        self.id = next(_ids)
        self.op = op
        self.inputs = tuple(inputs)
        self.params = params or {}
        self.name = name

    def named(self, name):
        """Attach a fetch name; named node values are returned by evaluate."""
        self.name = name
        return self

    def debug_name(self):
        label = f"#{self.id}:{self.op}"
        return f"{label}:{self.name}" if self.name else label

    def __repr__(self):
        return f"Node({self.debug_name()})"

    # Operator sugar so loss combiners can work on nodes and floats alike.
    def __add__(self, other):
        if isinstance(other, Node):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Node):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __rsub__(self, other):
        return add_scalar(scale(self, -1.0), float(other))

    def __mul__(self, other):
        if isinstance(other, Node):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Node):
            return div(self, other)
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __pow__(self, p):
        return power(self, float(p))


def leaf(name):
    """Named input/parameter tensor; gradients are computed w.r.t. leaves."""
    return Node("leaf", name=name)


def const(value, name=None):
    """Fixed tensor baked into the graph; no gradient flows into it."""
    arr = np.asarray(value, dtype=np.float64)
    return Node("const", params={"value": arr}, name=name)


def _as_node(x):
    return x if isinstance(x, Node) else const(x)


# ---------------------------------------------------------------------------
# Op constructors


def add(a, b):
    return Node("add", (_as_node(a), _as_node(b)))


def sub(a, b):
    return Node("sub", (_as_node(a), _as_node(b)))


def mul(a, b):
    return Node("mul", (_as_node(a), _as_node(b)))


def div(a, b):
    return Node("div", (_as_node(a), _as_node(b)))


def scale(x, c):
    return Node("scale", (x,), {"c": float(c)})


def add_scalar(x, c):
    return Node("add_scalar", (x,), {"c": float(c)})


def power(x, p):
    return Node("power", (x,), {"p": float(p)})


def log(x):
    return Node("log", (x,))


def exp(x):
    return Node("exp", (x,))


def relu(x):
    return Node("relu", (x,))


def matmul(a, b):
    return Node("matmul", (a, b))


def conv2d(x, w, stride=1, padding=0):
    """2-D convolution (cross-correlation): x [C,H,W], w [OC,C,kh,kw]."""
    return Node("conv2d", (x, w), {"stride": int(stride), "padding": int(padding)})


def bias_add(x, b, axis):
    """Add 1-D bias b along the given axis of x."""
    return Node("bias_add", (x, b), {"axis": int(axis)})


def avg_pool(x, kh, kw):
    """Non-overlapping average pooling of x [C,H,W] with window (kh,kw)."""
    return Node("avg_pool", (x,), {"kh": int(kh), "kw": int(kw)})


def upsample_bilinear(x, out_h, out_w):
    """Bilinear upsampling of x [C,h,w] to [C,out_h,out_w] (half-pixel grid)."""
    return Node("upsample_bilinear", (x,), {"out_h": int(out_h), "out_w": int(out_w)})


def softmax(x, axis=0):
    return Node("softmax", (x,), {"axis": int(axis)})


def logsumexp(x, axis=None):
    return Node("logsumexp", (x,), {"axis": axis if axis is None else int(axis)})


def reduce_sum(x, axis=None):
    return Node("reduce_sum", (x,), {"axis": _norm_axis(axis)})


def reduce_mean(x, axis=None):
    return Node("reduce_mean", (x,), {"axis": _norm_axis(axis)})


def reshape(x, shape):
    return Node("reshape", (x,), {"shape": tuple(int(s) for s in shape)})


def transpose(x, axes):
    return Node("transpose", (x,), {"axes": tuple(int(a) for a in axes)})


def take_rows(x, indices):
    """Gather rows of x along axis 0; gradient scatter-adds back."""
    idx = np.asarray(indices, dtype=np.intp)
    return Node("take_rows", (x,), {"indices": idx})


def take_pairs(x, rows, cols):
    """Gather entries x[rows[i], cols[i]] of a 2-D array into a vector."""
    r = np.asarray(rows, dtype=np.intp)
    c = np.asarray(cols, dtype=np.intp)
    if r.shape != c.shape or r.ndim != 1:
        raise ValueError("rows and cols must be equal-length 1-D index arrays")
    return Node("take_pairs", (x,), {"rows": r, "cols": c})


def stack(nodes):
    """Stack equal-shape nodes along a new leading axis."""
    return Node("stack", tuple(nodes))


def normalize_rows(x):
    """Scale each row of x [m,d] to unit L2 norm; zero rows are an error."""
    return Node("normalize_rows", (x,))


def _norm_axis(axis):
    if axis is None:
        return None
    if isinstance(axis, int):
        return (axis,)
    return tuple(int(a) for a in axis)


# ---------------------------------------------------------------------------
# Forward implementations


def _scalar_ok(a, b):
    return a.shape == b.shape or a.size == 1 or b.size == 1


def _check_binary(node, a, b):
    if not _scalar_ok(a, b):
        raise GraphError(f"shape mismatch {a.shape} vs {b.shape}", node)


def _fwd_add(node, a, b):
    _check_binary(node, a, b)
    return a + b


def _fwd_sub(node, a, b):
    _check_binary(node, a, b)
    return a - b


def _fwd_mul(node, a, b):
    _check_binary(node, a, b)
    return a * b


def _fwd_div(node, a, b):
    _check_binary(node, a, b)
    return a / b


def _fwd_matmul(node, a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise GraphError(f"matmul shapes {a.shape} @ {b.shape}", node)
    return a @ b


def _im2col(xp, kh, kw, stride, oh, ow):
    c = xp.shape[0]
    cols = np.empty((c, kh, kw, oh, ow), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols


def _fwd_conv2d(node, x, w):
    if x.ndim != 3 or w.ndim != 4 or x.shape[0] != w.shape[1]:
        raise GraphError(f"conv2d shapes x{x.shape} w{w.shape}", node)
    s = node.params["stride"]
    p = node.params["padding"]
    _, h, wd = x.shape
    oc, _, kh, kw = w.shape
    oh = (h + 2 * p - kh) // s + 1
    ow = (wd + 2 * p - kw) // s + 1
    if oh < 1 or ow < 1:
        raise GraphError(f"conv2d output collapses for input {x.shape}", node)
    xp = np.pad(x, ((0, 0), (p, p), (p, p))) if p else x
    cols = _im2col(xp, kh, kw, s, oh, ow)
    y = w.reshape(oc, -1) @ cols.reshape(-1, oh * ow)
    return y.reshape(oc, oh, ow)


def _fwd_bias_add(node, x, b):
    axis = node.params["axis"]
    if b.ndim != 1 or axis >= x.ndim or b.shape[0] != x.shape[axis]:
        raise GraphError(f"bias_add shapes x{x.shape} b{b.shape} axis={axis}", node)
    shape = [1] * x.ndim
    shape[axis] = -1
    return x + b.reshape(shape)


def _fwd_avg_pool(node, x):
    kh, kw = node.params["kh"], node.params["kw"]
    if x.ndim != 3 or x.shape[1] % kh or x.shape[2] % kw:
        raise GraphError(f"avg_pool window ({kh},{kw}) on {x.shape}", node)
    c, h, w = x.shape
    return x.reshape(c, h // kh, kh, w // kw, kw).mean(axis=(2, 4))


_interp_cache = {}


def _interp_matrix(n_in, n_out):
    """Dense 1-D bilinear interpolation matrix [n_out, n_in], rows sum to 1."""
    key = (n_in, n_out)
    m = _interp_cache.get(key)
    if m is None:
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        i0 = np.floor(src).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        f = src - i0
        m = np.zeros((n_out, n_in))
        m[np.arange(n_out), i0] += 1.0 - f
        m[np.arange(n_out), i1] += f
        _interp_cache[key] = m
    return m


def _fwd_upsample(node, x):
    if x.ndim != 3:
        raise GraphError(f"upsample_bilinear expects [C,h,w], got {x.shape}", node)
    uh = _interp_matrix(x.shape[1], node.params["out_h"])
    uw = _interp_matrix(x.shape[2], node.params["out_w"])
    t = np.tensordot(uh, x, axes=(1, 1))        # [H, C, w]
    y = np.tensordot(t, uw, axes=(2, 1))        # [H, C, W]
    return np.ascontiguousarray(y.transpose(1, 0, 2))


def _fwd_softmax(node, x):
    axis = node.params["axis"]
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _fwd_logsumexp(node, x):
    axis = node.params["axis"]
    m = x.max(axis=axis, keepdims=axis is not None)
    y = np.log(np.exp(x - m).sum(axis=axis, keepdims=axis is not None)) + m
    return y if axis is None else np.squeeze(y, axis=axis)


def _fwd_reduce_sum(node, x):
    return np.asarray(x.sum(axis=node.params["axis"]))


def _fwd_reduce_mean(node, x):
    return np.asarray(x.mean(axis=node.params["axis"]))


def _fwd_reshape(node, x):
    try:
        return x.reshape(node.params["shape"])
    except ValueError as e:
        raise GraphError(str(e), node) from None


def _fwd_take_rows(node, x):
    idx = node.params["indices"]
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise GraphError(f"row index out of range for shape {x.shape}", node)
    return x[idx]


def _fwd_take_pairs(node, x):
    if x.ndim != 2:
        raise GraphError(f"take_pairs expects a 2-D array, got {x.shape}", node)
    return x[node.params["rows"], node.params["cols"]]


def _fwd_normalize_rows(node, x):
    if x.ndim != 2:
        raise GraphError(f"normalize_rows expects [m,d], got {x.shape}", node)
    norms = np.sqrt((x * x).sum(axis=1))
    if np.any(norms < 1e-300):
        raise GraphError("zero-norm row cannot be normalized", node)
    return x / norms[:, None]


_FORWARD = {
    "add": _fwd_add,
    "sub": _fwd_sub,
    "mul": _fwd_mul,
    "div": _fwd_div,
    "scale": lambda node, x: x * node.params["c"],
    "add_scalar": lambda node, x: x + node.params["c"],
    "power": lambda node, x: x ** node.params["p"],
    "log": lambda node, x: np.log(x),
    "exp": lambda node, x: np.exp(x),
    "relu": lambda node, x: np.maximum(x, 0.0),
    "matmul": _fwd_matmul,
    "conv2d": _fwd_conv2d,
    "bias_add": _fwd_bias_add,
    "avg_pool": _fwd_avg_pool,
    "upsample_bilinear": _fwd_upsample,
    "softmax": _fwd_softmax,
    "logsumexp": _fwd_logsumexp,
    "reduce_sum": _fwd_reduce_sum,
    "reduce_mean": _fwd_reduce_mean,
    "reshape": _fwd_reshape,
    "transpose": lambda node, x: x.transpose(node.params["axes"]),
    "take_rows": _fwd_take_rows,
    "take_pairs": _fwd_take_pairs,
    "stack": lambda node, *xs: np.stack(xs),
    "normalize_rows": _fwd_normalize_rows,
}


# ---------------------------------------------------------------------------
# Backward implementations
#
# Each returns one gradient per input (None when that input needs no
# gradient).  `g` is dL/d(out); `out` the forward value; `vals` the inputs.


def _unbroadcast(g, shape):
    # Inverse of the scalar broadcast allowed in binary ops.
    if g.shape == tuple(shape):
        return g
    return np.asarray(g.sum()).reshape(shape)


def _bwd_add(node, g, out, vals, needs):
    a, b = vals
    return (
        _unbroadcast(g, a.shape) if needs[0] else None,
        _unbroadcast(g, b.shape) if needs[1] else None,
    )


def _bwd_sub(node, g, out, vals, needs):
    a, b = vals
    return (
        _unbroadcast(g, a.shape) if needs[0] else None,
        _unbroadcast(-g, b.shape) if needs[1] else None,
    )


def _bwd_mul(node, g, out, vals, needs):
    a, b = vals
    return (
        _unbroadcast(g * b, a.shape) if needs[0] else None,
        _unbroadcast(g * a, b.shape) if needs[1] else None,
    )


def _bwd_div(node, g, out, vals, needs):
    a, b = vals
    return (
        _unbroadcast(g / b, a.shape) if needs[0] else None,
        _unbroadcast(-g * a / (b * b), b.shape) if needs[1] else None,
    )


def _bwd_matmul(node, g, out, vals, needs):
    a, b = vals
    return (
        g @ b.T if needs[0] else None,
        a.T @ g if needs[1] else None,
    )


def _bwd_conv2d(node, g, out, vals, needs):
    x, w = vals
    s, p = node.params["stride"], node.params["padding"]
    oc, _, kh, kw = w.shape
    _, oh, ow = g.shape
    xp = np.pad(x, ((0, 0), (p, p), (p, p))) if p else x
    g2 = g.reshape(oc, -1)
    dw = dx = None
    if needs[1]:
        cols = _im2col(xp, kh, kw, s, oh, ow)
        dw = (g2 @ cols.reshape(-1, oh * ow).T).reshape(w.shape)
    if needs[0]:
        dcols = (w.reshape(oc, -1).T @ g2).reshape(x.shape[0], kh, kw, oh, ow)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i : i + s * oh : s, j : j + s * ow : s] += dcols[:, i, j]
        dx = dxp[:, p : p + x.shape[1], p : p + x.shape[2]] if p else dxp
    return dx, dw


def _bwd_bias_add(node, g, out, vals, needs):
    x, b = vals
    axes = tuple(i for i in range(x.ndim) if i != node.params["axis"])
    return (
        g if needs[0] else None,
        g.sum(axis=axes) if needs[1] else None,
    )


def _bwd_avg_pool(node, g, out, vals, needs):
    (x,) = vals
    kh, kw = node.params["kh"], node.params["kw"]
    c, h, w = x.shape
    gexp = np.broadcast_to(
        g[:, :, None, :, None], (c, h // kh, kh, w // kw, kw)
    )
    return (gexp.reshape(x.shape) / (kh * kw),)


def _bwd_upsample(node, g, out, vals, needs):
    (x,) = vals
    uh = _interp_matrix(x.shape[1], node.params["out_h"])
    uw = _interp_matrix(x.shape[2], node.params["out_w"])
    t = np.tensordot(uh.T, g, axes=(1, 1))      # [h, C, W]
    dx = np.tensordot(t, uw, axes=(2, 0))       # [h, C, w]
    return (np.ascontiguousarray(dx.transpose(1, 0, 2)),)


def _bwd_softmax(node, g, out, vals, needs):
    axis = node.params["axis"]
    dot = (g * out).sum(axis=axis, keepdims=True)
    return (out * (g - dot),)


def _bwd_logsumexp(node, g, out, vals, needs):
    (x,) = vals
    axis = node.params["axis"]
    if axis is None:
        return ((g * np.exp(x - out)),)
    ge = np.expand_dims(np.asarray(g), axis)
    oe = np.expand_dims(np.asarray(out), axis)
    return (ge * np.exp(x - oe),)


def _expand_reduced(g, x_shape, axis):
    if axis is None:
        return np.broadcast_to(np.asarray(g), x_shape)
    g = np.asarray(g)
    for a in sorted(a % len(x_shape) for a in axis):
        g = np.expand_dims(g, a)
    return np.broadcast_to(g, x_shape)


def _bwd_reduce_sum(node, g, out, vals, needs):
    (x,) = vals
    return (_expand_reduced(g, x.shape, node.params["axis"]),)


def _bwd_reduce_mean(node, g, out, vals, needs):
    (x,) = vals
    axis = node.params["axis"]
    n = x.size if axis is None else np.prod([x.shape[a] for a in axis])
    return (_expand_reduced(g, x.shape, axis) / n,)


def _bwd_take_rows(node, g, out, vals, needs):
    (x,) = vals
    dx = np.zeros_like(x)
    np.add.at(dx, node.params["indices"], g)
    return (dx,)


def _bwd_take_pairs(node, g, out, vals, needs):
    (x,) = vals
    dx = np.zeros_like(x)
    np.add.at(dx, (node.params["rows"], node.params["cols"]), g)
    return (dx,)


def _bwd_normalize_rows(node, g, out, vals, needs):
    (x,) = vals
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    dot = (g * out).sum(axis=1, keepdims=True)
    return ((g - dot * out) / norms,)


_BACKWARD = {
    "add": _bwd_add,
    "sub": _bwd_sub,
    "mul": _bwd_mul,
    "div": _bwd_div,
    "scale": lambda node, g, out, vals, needs: (g * node.params["c"],),
    "add_scalar": lambda node, g, out, vals, needs: (g,),
    "power": lambda node, g, out, vals, needs: (
        g * node.params["p"] * vals[0] ** (node.params["p"] - 1.0),
    ),
    "log": lambda node, g, out, vals, needs: (g / vals[0],),
    "exp": lambda node, g, out, vals, needs: (g * out,),
    "relu": lambda node, g, out, vals, needs: (g * (vals[0] > 0),),
    "matmul": _bwd_matmul,
    "conv2d": _bwd_conv2d,
    "bias_add": _bwd_bias_add,
    "avg_pool": _bwd_avg_pool,
    "upsample_bilinear": _bwd_upsample,
    "softmax": _bwd_softmax,
    "logsumexp": _bwd_logsumexp,
    "reduce_sum": _bwd_reduce_sum,
    "reduce_mean": _bwd_reduce_mean,
    "reshape": lambda node, g, out, vals, needs: (g.reshape(vals[0].shape),),
    "transpose": lambda node, g, out, vals, needs: (
        g.transpose(np.argsort(node.params["axes"])),
    ),
    "take_rows": _bwd_take_rows,
    "take_pairs": _bwd_take_pairs,
    "stack": lambda node, g, out, vals, needs: tuple(
        g[i] if needs[i] else None for i in range(len(vals))
    ),
    "normalize_rows": _bwd_normalize_rows,
}


# ---------------------------------------------------------------------------
# Graph


class Graph:
    """A frozen DAG with one designated output node.

    The output may be any shape for evaluation; ``backward`` additionally
    requires it to be scalar (size 1).
    """

    def __init__(self, output):
        self.output = output
        if output.name is None:
            output.named("output")
        self.nodes = self._toposort(output)
        self.leaf_names = {n.name for n in self.nodes if n.op == "leaf"}
        seen = {}
        for n in self.nodes:
            if n.name is not None:
                if n.name in seen:
                    raise GraphError(f"duplicate node name {n.name!r}", n)
                seen[n.name] = n
        self._named = seen
        # Gradient flows only into subtrees containing leaves.
        self._needs = needs = {}
        for n in self.nodes:
            if n.op == "leaf":
                needs[n.id] = True
            elif n.op == "const":
                needs[n.id] = False
            else:
                needs[n.id] = any(needs[i.id] for i in n.inputs)

    @staticmethod
    def _toposort(output):
        order, state = [], {}
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                state[node.id] = 2
                order.append(node)
                continue
            mark = state.get(node.id, 0)
            if mark == 2:
                continue
            if mark == 1:
                raise GraphError("cycle detected in graph", node)
            state[node.id] = 1
            stack.append((node, True))
            for inp in node.inputs:
                if state.get(inp.id, 0) == 0:
                    stack.append((inp, False))
                elif state.get(inp.id) == 1:
                    raise GraphError("cycle detected in graph", inp)
        return order

    def node_by_name(self, name):
        return self._named[name]


def _forward_values(graph, bindings, check_finite, op_hook=None):
    values = {}
    for node in graph.nodes:
        if node.op == "leaf":
            try:
                v = bindings[node.name]
            except KeyError:
                raise GraphError(f"leaf {node.name!r} is not bound", node) from None
            v = np.asarray(v, dtype=np.float64)
        elif node.op == "const":
            v = node.params["value"]
        else:
            args = [values[i.id] for i in node.inputs]
            # Non-finite results are reported via check_finite, so numpy's
            # own warnings (log of negatives, overflow) are just noise here.
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                v = _FORWARD[node.op](node, *args)
            if op_hook is not None:
                op_hook(node)
        if check_finite and not np.all(np.isfinite(v)):
            raise NonFiniteError("non-finite value produced", node)
        values[node.id] = v
    return values


def evaluate(graph, bindings, check_finite=True, op_hook=None):
    """Run the forward pass; returns {name: value} for every named node.

    Deterministic and pure: identical bindings give bit-identical results.
    """
    values = _forward_values(graph, bindings, check_finite, op_hook)
    return {name: values[node.id] for name, node in graph._named.items()}


def forward_backward(graph, bindings, check_finite=True):
    """One forward pass plus gradients: ({name: value}, {binding: grad}).

    Cheaper than evaluate + backward when both the named intermediate
    values and the gradients of a step are needed.
    """
    values = _forward_values(graph, bindings, check_finite)
    named = {name: values[node.id] for name, node in graph._named.items()}
    out_val = values[graph.output.id]
    if out_val.size != 1:
        raise GraphError(
            f"backward requires a scalar output, got shape {out_val.shape}",
            graph.output,
        )
    grads = {graph.output.id: np.ones_like(out_val)}
    needs = graph._needs
    for node in reversed(graph.nodes):
        g = grads.pop(node.id, None)
        if g is None or node.op in ("leaf", "const") or not needs[node.id]:
            if node.op == "leaf" and g is not None:
                grads[node.id] = g  # keep leaf grads
            continue
        vals = [values[i.id] for i in node.inputs]
        need_in = [needs[i.id] for i in node.inputs]
        gins = _BACKWARD[node.op](node, g, values[node.id], vals, need_in)
        for inp, gin in zip(node.inputs, gins):
            if gin is None or not needs[inp.id]:
                continue
            if inp.id in grads:
                grads[inp.id] = grads[inp.id] + gin
            else:
                grads[inp.id] = gin

    leaf_grads = {}
    id_by_name = {n.name: n.id for n in graph.nodes if n.op == "leaf"}
    for name, value in bindings.items():
        nid = id_by_name.get(name)
        if nid is not None and nid in grads:
            leaf_grads[name] = grads[nid]
        else:
            leaf_grads[name] = np.zeros_like(np.asarray(value, dtype=np.float64))
    return named, leaf_grads


def backward(graph, bindings, check_finite=True):
    """Gradients of the scalar output w.r.t. every binding.

    Bindings that are not used by the graph get zero gradients of their own
    shape.
    """
    return forward_backward(graph, bindings, check_finite)[1]


def grad_check(graph, bindings, eps=1e-5, max_coords_per_leaf=8, seed=0):
    """Max relative error between analytic and central-difference gradients.

    Samples up to ``max_coords_per_leaf`` coordinates per used leaf; the
    relative error is |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    if not 0.0 < eps <= 1e-2:
        raise ValueError("eps must be in (0, 1e-2]")
    analytic = backward(graph, bindings)
    rng = np.random.default_rng(seed)
    bound = {k: np.asarray(v, dtype=np.float64).copy() for k, v in bindings.items()}

    def f():
        values = _forward_values(graph, bound, check_finite=False)
        return float(values[graph.output.id])

    worst = 0.0
    for name in sorted(graph.leaf_names):
        if name not in bound:
            continue
        arr = bound[name]
        n = arr.size
        coords = (
            np.arange(n)
            if n <= max_coords_per_leaf
            else rng.choice(n, size=max_coords_per_leaf, replace=False)
        )
        flat = arr.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            fp = f()
            flat[c] = orig - eps
            fm = f()
            flat[c] = orig
            numeric = (fp - fm) / (2.0 * eps)
            a = float(a_flat[c])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
