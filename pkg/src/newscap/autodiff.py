"""Dense-tensor compute graphs with reverse-mode differentiation.

Graphs are built symbolically: leaves are named placeholders (optionally
marked as trainable parameters), every operation appends a node, and the
node creation order is already a valid topological order.  ``evaluate``
binds leaf names to numpy arrays and runs the graph forward; ``backward``
walks it in reverse and returns one gradient array per parameter leaf.
Training runs in float32; ``finite_difference_check`` re-evaluates in
float64 to verify analytic gradients.
"""

from __future__ import annotations

import numpy as np

LAYER_NORM_EPS = 1e-5
MASK_FILL = -1e9


class GraphError(Exception):
    """Raised for malformed graphs or bad bindings."""


class ShapeMismatch(GraphError):
    """Raised when an operation receives incompatibly shaped inputs."""


class Node:
    __slots__ = ("graph", "idx", "op", "inputs", "meta", "name", "param", "integer")

    def __init__(self, graph, idx, op, inputs, meta=None, name=None,
                 param=False, integer=False):
        self.graph = graph
        self.idx = idx
        self.op = op
        self.inputs = inputs
        self.meta = meta or {}
        self.name = name
        self.param = param
        self.integer = integer

    @property
    def label(self):
        if self.name is not None:
            return f"{self.op}({self.name})"
        return f"{self.op}#{self.idx}"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"<Node {self.label}>"


class ComputeGraph:
    """An append-only operation list; creation order is topological order."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.root: Node | None = None
        self._values: list | None = None
        self._dtype = np.float32

    def _append(self, op, inputs, meta=None, name=None, param=False, integer=False):
        for inp in inputs:
            if inp.graph is not self:
                raise GraphError(f"node {inp.label} belongs to a different graph")
        node = Node(self, len(self.nodes), op, list(inputs), meta, name, param, integer)
        self.nodes.append(node)
        self.root = node
        return node

    def leaf(self, name, *, param=False, integer=False):
        if any(n.op == "leaf" and n.name == name for n in self.nodes):
            raise GraphError(f"duplicate leaf name {name!r}")
        return self._append("leaf", [], name=name, param=param, integer=integer)

    def const(self, value):
        arr = np.asarray(value)
        return self._append("const", [], meta={"value": arr})

    def leaves(self):
        return [n for n in self.nodes if n.op == "leaf"]

    def param_leaves(self):
        return [n for n in self.nodes if n.op == "leaf" and n.param]

    def value(self, node):
        """Cached forward value of a node from the last evaluate call."""
        if self._values is None:
            raise GraphError("evaluate has not been run")
        return self._values[node.idx]

    def evaluate(self, bindings, dtype=np.float32, root=None):
        return evaluate(self, bindings, dtype=dtype, root=root)

    def backward(self):
        return backward(self)


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the original shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _stable_sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _softmax_last(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _require_broadcastable(a, b, node):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(
            f"{node.label}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# forward / backward rules, keyed by op kind

def _fw_add(node, a, b):
    _require_broadcastable(a, b, node)
    return a + b


def _fw_sub(node, a, b):
    _require_broadcastable(a, b, node)
    return a - b


def _fw_mul(node, a, b):
    _require_broadcastable(a, b, node)
    return a * b


def _fw_matmul(node, a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"{node.label}: matmul needs rank >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"{node.label}: inner dims differ, {a.shape} @ {b.shape}")
    return a @ b


def _fw_concat(node, *parts):
    axis = node.meta["axis"]
    return np.concatenate(parts, axis=axis)


def _fw_slice0(node, x):
    start, stop = node.meta["start"], node.meta["stop"]
    if not (0 <= start <= stop <= x.shape[0]):
        raise ShapeMismatch(f"{node.label}: rows [{start},{stop}) outside extent {x.shape[0]}")
    return x[start:stop]


def _fw_reshape(node, x):
    shape = node.meta["shape"]
    if x.size != int(np.prod(shape)):
        raise ShapeMismatch(f"{node.label}: cannot reshape {x.shape} to {shape}")
    return x.reshape(shape)


def _resolve_perm(node, x):
    perm = node.meta["perm"]
    if perm == "swap_last":
        if x.ndim < 2:
            raise ShapeMismatch(f"{node.label}: rank {x.ndim} has no last two axes")
        return tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    if len(perm) != x.ndim:
        raise ShapeMismatch(f"{node.label}: perm {perm} does not match rank {x.ndim}")
    return perm


def _fw_transpose(node, x):
    return np.transpose(x, _resolve_perm(node, x))


def _fw_mean(node, x):
    return x.mean(axis=node.meta["axis"])


def _fw_sum(node, x):
    return x.sum(axis=node.meta["axis"])


def _fw_relu(node, x):
    return np.maximum(x, 0)


def _fw_sigmoid(node, x):
    return _stable_sigmoid(x)


def _fw_softmax(node, x):
    return _softmax_last(x)


def _fw_layer_norm(node, x, gamma, beta):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    xhat = (x - mu) / np.sqrt(var + LAYER_NORM_EPS)
    return gamma * xhat + beta


def _fw_lookup(node, table, ids):
    if ids.ndim != 1:
        raise ShapeMismatch(f"{node.label}: ids must be 1-D, got {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise GraphError(f"{node.label}: id outside table of {table.shape[0]} rows")
    return table[ids]


def _fw_cross_entropy(node, logits, ids):
    if logits.ndim != 2 or ids.ndim != 1 or logits.shape[0] != ids.shape[0]:
        raise ShapeMismatch(
            f"{node.label}: expected (n,k) logits with (n,) ids, got {logits.shape}, {ids.shape}")
    m = logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(logits - m).sum(axis=-1)) + m[:, 0]
    picked = logits[np.arange(logits.shape[0]), ids]
    return np.asarray((lse - picked).mean())


def _fw_sigmoid_bce(node, logits, targets):
    if logits.shape != targets.shape:
        raise ShapeMismatch(f"{node.label}: logits {logits.shape} vs targets {targets.shape}")
    per = np.maximum(logits, 0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))
    return np.asarray(per.mean())


_FORWARD = {
    "add": _fw_add,
    "sub": _fw_sub,
    "mul": _fw_mul,
    "matmul": _fw_matmul,
    "concat": _fw_concat,
    "slice0": _fw_slice0,
    "reshape": _fw_reshape,
    "transpose": _fw_transpose,
    "mean": _fw_mean,
    "sum": _fw_sum,
    "relu": _fw_relu,
    "sigmoid": _fw_sigmoid,
    "softmax": _fw_softmax,
    "layer_norm": _fw_layer_norm,
    "lookup": _fw_lookup,
    "cross_entropy": _fw_cross_entropy,
    "sigmoid_bce": _fw_sigmoid_bce,
}


def _bw_add(node, g, ins, out):
    a, b = ins
    return [_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)]


def _bw_sub(node, g, ins, out):
    a, b = ins
    return [_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)]


def _bw_mul(node, g, ins, out):
    a, b = ins
    return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]


def _bw_matmul(node, g, ins, out):
    a, b = ins
    da = g @ np.swapaxes(b, -1, -2)
    db = np.swapaxes(a, -1, -2) @ g
    return [_unbroadcast(da, a.shape), _unbroadcast(db, b.shape)]


def _bw_concat(node, g, ins, out):
    axis = node.meta["axis"]
    sizes = [x.shape[axis] for x in ins]
    splits = np.cumsum(sizes)[:-1]
    return list(np.split(g, splits, axis=axis))


def _bw_slice0(node, g, ins, out):
    (x,) = ins
    dx = np.zeros_like(x)
    dx[node.meta["start"]:node.meta["stop"]] = g
    return [dx]


def _bw_reshape(node, g, ins, out):
    return [g.reshape(ins[0].shape)]


def _bw_transpose(node, g, ins, out):
    inv = np.argsort(_resolve_perm(node, ins[0]))
    return [np.transpose(g, inv)]


def _bw_mean(node, g, ins, out):
    (x,) = ins
    axis = node.meta["axis"]
    n = x.shape[axis]
    return [np.broadcast_to(np.expand_dims(g, axis), x.shape) / n]


def _bw_sum(node, g, ins, out):
    (x,) = ins
    axis = node.meta["axis"]
    if axis is None:
        return [np.broadcast_to(g, x.shape).copy()]
    return [np.broadcast_to(np.expand_dims(g, axis), x.shape).copy()]


def _bw_relu(node, g, ins, out):
    return [g * (ins[0] > 0)]


def _bw_sigmoid(node, g, ins, out):
    return [g * out * (1 - out)]


def _bw_softmax(node, g, ins, out):
    s = out
    return [s * (g - (g * s).sum(axis=-1, keepdims=True))]


def _bw_layer_norm(node, g, ins, out):
    x, gamma, beta = ins
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = (x - mu) * inv
    dgamma = _unbroadcast(g * xhat, gamma.shape)
    dbeta = _unbroadcast(g, beta.shape)
    dxhat = g * gamma
    dx = (dxhat - dxhat.mean(axis=-1, keepdims=True)
          - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)) * inv
    return [dx, dgamma, dbeta]


def _bw_lookup(node, g, ins, out):
    table, ids = ins
    dtable = np.zeros_like(table)
    np.add.at(dtable, ids, g)
    return [dtable, None]


def _bw_cross_entropy(node, g, ins, out):
    logits, ids = ins
    n = logits.shape[0]
    p = _softmax_last(logits)
    p[np.arange(n), ids] -= 1.0
    return [p * (g / n), None]


def _bw_sigmoid_bce(node, g, ins, out):
    logits, targets = ins
    s = _stable_sigmoid(logits)
    d = (s - targets) * (g / logits.size)
    return [d, _unbroadcast(-logits * (g / logits.size), targets.shape)]


_BACKWARD = {
    "add": _bw_add,
    "sub": _bw_sub,
    "mul": _bw_mul,
    "matmul": _bw_matmul,
    "concat": _bw_concat,
    "slice0": _bw_slice0,
    "reshape": _bw_reshape,
    "transpose": _bw_transpose,
    "mean": _bw_mean,
    "sum": _bw_sum,
    "relu": _bw_relu,
    "sigmoid": _bw_sigmoid,
    "softmax": _bw_softmax,
    "layer_norm": _bw_layer_norm,
    "lookup": _bw_lookup,
    "cross_entropy": _bw_cross_entropy,
    "sigmoid_bce": _bw_sigmoid_bce,
}


# ---------------------------------------------------------------------------
# graph-building helpers

def _wrap(graph, x):
    if isinstance(x, Node):
        return x
    return graph.const(x)


def add(a, b):
    return a.graph._append("add", [a, _wrap(a.graph, b)])


def sub(a, b):
    return a.graph._append("sub", [a, _wrap(a.graph, b)])


def mul(a, b):
    return a.graph._append("mul", [a, _wrap(a.graph, b)])


def matmul(a, b):
    return a.graph._append("matmul", [a, b])


def scale(a, factor):
    return mul(a, a.graph.const(float(factor)))


def concat(nodes, axis=-1):
    if not nodes:
        raise GraphError("concat of zero nodes")
    return nodes[0].graph._append("concat", list(nodes), meta={"axis": axis})


def slice_rows(x, start, stop):
    return x.graph._append("slice0", [x], meta={"start": start, "stop": stop})


def reshape(x, shape):
    return x.graph._append("reshape", [x], meta={"shape": tuple(shape)})


def transpose(x, perm):
    return x.graph._append("transpose", [x], meta={"perm": tuple(perm)})


def mean(x, axis):
    return x.graph._append("mean", [x], meta={"axis": axis})


def sum_(x, axis=None):
    return x.graph._append("sum", [x], meta={"axis": axis})


def relu(x):
    return x.graph._append("relu", [x])


def sigmoid(x):
    return x.graph._append("sigmoid", [x])


def softmax(x):
    return x.graph._append("softmax", [x])


def layer_norm(x, gamma, beta):
    return x.graph._append("layer_norm", [x, gamma, beta])


def lookup(table, ids):
    return table.graph._append("lookup", [table, ids])


def cross_entropy(logits, ids):
    return logits.graph._append("cross_entropy", [logits, ids])


def sigmoid_bce(logits, targets):
    return logits.graph._append("sigmoid_bce", [logits, targets])


def scaled_dot_attention(q, k, v, head_dim, mask=None):
    """softmax(q kᵀ / sqrt(head_dim) [+ mask]) v, built from primitives.

    q: (..., n, d), k/v: (..., m, d); mask broadcasts against the (..., n, m)
    score matrix and is applied additively before the softmax.
    """
    kt = transpose_last_two(k)
    scores = scale(matmul(q, kt), 1.0 / np.sqrt(head_dim))
    if mask is not None:
        scores = add(scores, mask)
    return matmul(softmax(scores), v)


def transpose_last_two(x):
    """Swap the last two axes; the rank is resolved at evaluation time."""
    return x.graph._append("transpose", [x], meta={"perm": "swap_last"})


def evaluate(graph, bindings, dtype=np.float32, root=None):
    """Run the graph forward; returns the root node's value.

    Float leaves and constants are cast to ``dtype``; integer leaves stay
    int64.  Raises GraphError for unbound leaves, ShapeMismatch for
    incompatible operands.
    """
    values = [None] * len(graph.nodes)
    _run_nodes(graph, graph.nodes, values, bindings, dtype)
    graph._values = values
    graph._dtype = dtype
    target = root if root is not None else graph.root
    return values[target.idx]


def _run_nodes(graph, nodes, values, bindings, dtype):
    for node in nodes:
        if node.op == "leaf":
            if node.name not in bindings:
                raise GraphError(f"unbound leaf {node.name!r}")
            arr = np.asarray(bindings[node.name])
            values[node.idx] = (arr.astype(np.int64, copy=False) if node.integer
                                else arr.astype(dtype, copy=False))
            continue
        if node.op == "const":
            arr = node.meta["value"]
            values[node.idx] = arr if arr.dtype.kind in "iu" else arr.astype(dtype, copy=False)
            continue
        ins = [values[inp.idx] for inp in node.inputs]
        try:
            values[node.idx] = _FORWARD[node.op](node, *ins)
        except (ShapeMismatch, GraphError):
            raise
        except ValueError as exc:
            raise ShapeMismatch(f"{node.label}: {exc}") from None


def backward(graph):
    """Gradient of the scalar root w.r.t. every parameter leaf.

    Unused parameter leaves get zero tensors.  Must follow evaluate.
    """
    if graph._values is None:
        raise GraphError("backward before evaluate")
    values = graph._values
    root = graph.root
    root_val = values[root.idx]
    if np.size(root_val) != 1:
        raise GraphError(f"root {root.label} is not scalar (shape {np.shape(root_val)})")

    grads = [None] * len(graph.nodes)
    grads[root.idx] = np.ones_like(np.asarray(root_val))
    for node in reversed(graph.nodes):
        g = grads[node.idx]
        if g is None or node.op in ("leaf", "const"):
            continue
        ins = [values[inp.idx] for inp in node.inputs]
        in_grads = _BACKWARD[node.op](node, g, ins, values[node.idx])
        for inp, ig in zip(node.inputs, in_grads):
            if ig is None or inp.integer:
                continue
            if grads[inp.idx] is None:
                grads[inp.idx] = ig
            else:
                grads[inp.idx] = grads[inp.idx] + ig

    out = {}
    for leaf in graph.param_leaves():
        g = grads[leaf.idx]
        out[leaf.name] = g if g is not None else np.zeros_like(values[leaf.idx])
    return out


def finite_difference_check(graph, bindings, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    Evaluates in float64 and perturbs every element of every parameter
    leaf; error is |analytic - fd| / max(1, |fd|).
    """
    base_values = [None] * len(graph.nodes)
    _run_nodes(graph, graph.nodes, base_values, bindings, np.float64)
    graph._values = base_values
    graph._dtype = np.float64
    analytic = backward(graph)
    root_idx = graph.root.idx

    worst = 0.0
    for leaf in graph.param_leaves():
        # only nodes downstream of this leaf can change under perturbation
        dirty = {leaf.idx}
        for node in graph.nodes:
            if any(inp.idx in dirty for inp in node.inputs):
                dirty.add(node.idx)
        if root_idx not in dirty:
            fd = np.zeros_like(np.asarray(bindings[leaf.name], dtype=np.float64))
        else:
            affected = [n for n in graph.nodes if n.idx in dirty]
            base = np.asarray(bindings[leaf.name], dtype=np.float64)
            work = base.copy()
            flat = work.reshape(-1)
            fd = np.zeros(flat.size)
            perturbed = dict(bindings)
            perturbed[leaf.name] = work
            scratch = list(base_values)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                _run_nodes(graph, affected, scratch, perturbed, np.float64)
                up = float(scratch[root_idx])
                flat[i] = orig - h
                _run_nodes(graph, affected, scratch, perturbed, np.float64)
                down = float(scratch[root_idx])
                flat[i] = orig
                fd[i] = (up - down) / (2 * h)
            fd = fd.reshape(base.shape)
        err = np.abs(analytic[leaf.name] - fd) / np.maximum(1.0, np.abs(fd))
        if err.size:
            worst = max(worst, float(err.max()))
    # restore caches for the unperturbed point
    graph._values = base_values
    return worst
