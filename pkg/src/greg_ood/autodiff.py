"""Reverse-mode autodiff on an explicit operation graph.

Nodes hold eagerly computed float64 numpy values. The backward pass is itself
recorded as graph operations, so a gradient node can be differentiated again
(reverse-over-reverse). That is what makes d/dtheta of ||d score/d x|| work:
the input-gradient subgraph is ordinary graph structure, and a second backward
pass over it yields parameter gradients of the gradient-norm penalty.

Conventions kept deliberately narrow (this is a desk-scale engine, not a
framework): tensors are rank 0/1/2, elementwise broadcasting is limited to
scalar, (1, n) row and (m, 1) column operands, and axis reductions keep the
reduced axis with size one so every backward rule closes over the same
broadcast set without a reshape primitive.
"""

import numpy as np

Tensor = np.ndarray  # dense float64 array, rank <= 2


class GraphError(ValueError):
    """Misuse of the graph API: bad op, bad shape, bad node id."""


class NonFiniteError(ArithmeticError):
    """An op produced NaN or Inf. Surfaced immediately, never propagated."""


def as_tensor(value) -> Tensor:
    t = np.asarray(value, dtype=np.float64)
    if t.ndim > 2:
        raise GraphError(f"rank {t.ndim} tensor not supported (max rank 2)")
    return t


class Node:
    """One recorded operation: op tag, parent ids, eager value, attrs."""

    __slots__ = ("id", "op", "parents", "value", "requires_grad", "attrs")

    def __init__(self, nid, op, parents, value, requires_grad, attrs):
        self.id = nid
        self.op = op
        self.parents = parents
        self.value = value
        self.requires_grad = requires_grad
        self.attrs = attrs


def _broadcastable(sa: tuple, sb: tuple) -> bool:
    if sa == sb or sa == () or sb == ():
        return True
    if len(sa) == 2 and len(sb) == 2:
        if sa[1] == sb[1] and (sa[0] == 1 or sb[0] == 1):
            return True
        if sa[0] == sb[0] and (sa[1] == 1 or sb[1] == 1):
            return True
    return False


def _reduced_shape(shape: tuple, axis) -> tuple:
    if axis is None:
        return ()
    if len(shape) != 2:
        raise GraphError(f"axis reduction needs a rank-2 operand, got shape {shape}")
    if axis == 0:
        return (1, shape[1])
    if axis == 1:
        return (shape[0], 1)
    raise GraphError(f"axis must be None, 0 or 1, got {axis!r}")


class Graph:
    """Append-only op tape. One graph per mini-batch; reset() invalidates ids."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.generation = 0

    def __len__(self):
        return len(self.nodes)

    def reset(self):
        self.nodes = []
        self.generation += 1

    def node(self, nid: int) -> Node:
        if not 0 <= nid < len(self.nodes):
            raise GraphError(f"node id {nid} not in graph")
        return self.nodes[nid]

    def value(self, nid: int) -> Tensor:
        return self.node(nid).value

    # -- recording ---------------------------------------------------------

    def record(self, op: str, parents=(), value=None, requires_grad=False, **attrs) -> int:
        """Append one op node, computing its value eagerly.

        `value` is only meaningful for op == "constant"; every other op derives
        its value from its parents. Returns the new node id.
        """
        if op == "constant":
            if parents:
                raise GraphError("constant takes no parents")
            val = as_tensor(value)
            rg = bool(requires_grad)
        else:
            if op not in _FORWARD:
                raise GraphError(f"unsupported op {op!r}")
            pnodes = [self.node(p) for p in parents]
            with np.errstate(all="ignore"):  # bad values raise NonFiniteError below
                val = _FORWARD[op]([p.value for p in pnodes], attrs)
            if op == "stop_gradient":
                rg = False
            else:
                rg = any(p.requires_grad for p in pnodes)
        if not np.all(np.isfinite(val)):
            raise NonFiniteError(f"op {op!r} produced a non-finite value")
        nid = len(self.nodes)
        self.nodes.append(Node(nid, op, tuple(parents), val, rg, attrs or None))
        return nid

    # -- op helpers --------------------------------------------------------

    def constant(self, value, requires_grad=False) -> int:
        return self.record("constant", value=value, requires_grad=requires_grad)

    def variable(self, value) -> int:
        """Leaf that gradients flow into (an input or a parameter)."""
        return self.record("constant", value=value, requires_grad=True)

    def add(self, a: int, b: int) -> int:
        return self.record("add", (a, b))

    def mul(self, a: int, b: int) -> int:
        return self.record("mul", (a, b))

    def matmul(self, a: int, b: int, transpose_a=False, transpose_b=False) -> int:
        return self.record("matmul", (a, b), ta=bool(transpose_a), tb=bool(transpose_b))

    def relu(self, a: int) -> int:
        return self.record("relu", (a,))

    def leaky_relu(self, a: int, slope: float = 0.01) -> int:
        return self.record("leaky_relu", (a,), slope=float(slope))

    def exp(self, a: int) -> int:
        return self.record("exp", (a,))

    def log(self, a: int) -> int:
        return self.record("log", (a,))

    def sqrt(self, a: int) -> int:
        return self.record("sqrt", (a,))

    def recip(self, a: int) -> int:
        return self.record("recip", (a,))

    def neg(self, a: int) -> int:
        return self.record("neg", (a,))

    def scale(self, a: int, c: float) -> int:
        return self.record("scale", (a,), c=float(c))

    def sum(self, a: int, axis=None) -> int:
        return self.record("sum", (a,), axis=axis)

    def max(self, a: int, axis=None) -> int:
        return self.record("max", (a,), axis=axis)

    def logsumexp(self, a: int, axis=None) -> int:
        return self.record("logsumexp", (a,), axis=axis)

    def dot(self, a: int, b: int) -> int:
        return self.record("dot", (a, b))

    def stop_gradient(self, a: int) -> int:
        return self.record("stop_gradient", (a,))

    def sub(self, a: int, b: int) -> int:
        return self.add(a, self.neg(b))


# -- forward rules ----------------------------------------------------------


def _check_broadcast(vals):
    a, b = vals
    if not _broadcastable(a.shape, b.shape):
        raise GraphError(f"shapes {a.shape} and {b.shape} do not broadcast")


def _fwd_add(vals, attrs):
    _check_broadcast(vals)
    return vals[0] + vals[1]


def _fwd_mul(vals, attrs):
    _check_broadcast(vals)
    return vals[0] * vals[1]


def _fwd_matmul(vals, attrs):
    a, b = vals
    if a.ndim != 2 or b.ndim != 2:
        raise GraphError("matmul operands must be rank 2")
    a = a.T if attrs["ta"] else a
    b = b.T if attrs["tb"] else b
    if a.shape[1] != b.shape[0]:
        raise GraphError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    return a @ b


def _fwd_sum(vals, attrs):
    (a,) = vals
    axis = attrs["axis"]
    shape = _reduced_shape(a.shape, axis)
    return np.sum(a, axis=axis, keepdims=True).reshape(shape)


def _fwd_max(vals, attrs):
    (a,) = vals
    axis = attrs["axis"]
    if a.size == 0:
        raise GraphError("max of an empty tensor")
    shape = _reduced_shape(a.shape, axis)
    return np.max(a, axis=axis, keepdims=True).reshape(shape)


def _fwd_logsumexp(vals, attrs):
    (a,) = vals
    axis = attrs["axis"]
    if a.size == 0:
        raise GraphError("logsumexp of an empty tensor")
    shape = _reduced_shape(a.shape, axis)
    # shifted form: exp never overflows, exact at large magnitudes
    m = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return out.reshape(shape)


_FORWARD = {
    "add": _fwd_add,
    "mul": _fwd_mul,
    "matmul": _fwd_matmul,
    "relu": lambda v, a: np.maximum(v[0], 0.0),
    "leaky_relu": lambda v, a: np.where(v[0] >= 0.0, v[0], a["slope"] * v[0]),
    "exp": lambda v, a: np.exp(v[0]),
    "log": lambda v, a: np.log(v[0]),
    "sqrt": lambda v, a: np.sqrt(v[0]),
    "recip": lambda v, a: 1.0 / v[0],
    "neg": lambda v, a: -v[0],
    "scale": lambda v, a: v[0] * a["c"],
    "sum": _fwd_sum,
    "max": _fwd_max,
    "logsumexp": _fwd_logsumexp,
    "dot": lambda v, a: _fwd_dot(v),
    "stop_gradient": lambda v, a: v[0].copy(),
}


def _fwd_dot(vals):
    u, v = vals
    if u.ndim != 1 or v.ndim != 1 or u.shape != v.shape:
        raise GraphError(f"dot needs equal-length rank-1 operands, got {u.shape} and {v.shape}")
    return np.asarray(u @ v)


# -- backward rules ----------------------------------------------------------
# Each rule receives the adjoint node id `gid` of the output and returns one
# thunk per parent (aligned with node.parents). A thunk emits the graph ops
# for that parent's contribution, so gradients stay differentiable and the
# caller can skip parents the requested gradient never flows into.


def _reduce_to(g: Graph, gid: int, target_shape: tuple) -> int:
    """Sum a broadcast adjoint back down to the parent's shape."""
    if g.value(gid).shape == target_shape:
        return gid
    if target_shape == ():
        return g.sum(gid)
    out = gid
    if target_shape[0] == 1 and g.value(out).shape[0] != 1:
        out = g.sum(out, axis=0)
    if target_shape[1] == 1 and g.value(out).shape[1] != 1:
        out = g.sum(out, axis=1)
    if g.value(out).shape != target_shape:
        raise GraphError(f"cannot reduce adjoint {g.value(gid).shape} to {target_shape}")
    return out


def _vjp_add(g, node, gid):
    pa, pb = node.parents
    return [
        lambda: _reduce_to(g, gid, g.value(pa).shape),
        lambda: _reduce_to(g, gid, g.value(pb).shape),
    ]


def _vjp_mul(g, node, gid):
    pa, pb = node.parents
    return [
        lambda: _reduce_to(g, g.mul(gid, pb), g.value(pa).shape),
        lambda: _reduce_to(g, g.mul(gid, pa), g.value(pb).shape),
    ]


def _vjp_matmul(g, node, gid):
    pa, pb = node.parents
    ta, tb = node.attrs["ta"], node.attrs["tb"]
    if not ta and not tb:
        return [
            lambda: g.matmul(gid, pb, transpose_b=True),
            lambda: g.matmul(pa, gid, transpose_a=True),
        ]
    if not ta and tb:
        return [
            lambda: g.matmul(gid, pb),
            lambda: g.matmul(gid, pa, transpose_a=True),
        ]
    if ta and not tb:
        return [
            lambda: g.matmul(pb, gid, transpose_b=True),
            lambda: g.matmul(pa, gid),
        ]
    return [
        lambda: g.matmul(pb, gid, transpose_a=True, transpose_b=True),
        lambda: g.matmul(gid, pa, transpose_a=True, transpose_b=True),
    ]


def _vjp_relu(g, node, gid):
    # subgradient at 0 fixed to the right derivative; the mask is a constant,
    # which is the exact a.e. second derivative (zero) under double backprop
    pa = node.parents[0]
    return [lambda: g.mul(gid, g.constant((g.value(pa) >= 0.0).astype(np.float64)))]


def _vjp_leaky_relu(g, node, gid):
    pa = node.parents[0]
    s = node.attrs["slope"]
    return [lambda: g.mul(gid, g.constant(np.where(g.value(pa) >= 0.0, 1.0, s)))]


def _vjp_max(g, node, gid):
    def build():
        a = g.value(node.parents[0])
        axis = node.attrs["axis"]
        hot = np.zeros_like(a)
        if axis is None:
            hot.flat[np.argmax(a)] = 1.0  # first max wins on ties
        elif axis == 0:
            hot[np.argmax(a, axis=0), np.arange(a.shape[1])] = 1.0
        else:
            hot[np.arange(a.shape[0]), np.argmax(a, axis=1)] = 1.0
        return g.mul(g.constant(hot), gid)

    return [build]


def _vjp_logsumexp(g, node, gid):
    # softmax of the shifted operand, built from live nodes so the rule stays
    # differentiable: p = exp(a - lse(a))
    pa = node.parents[0]
    return [lambda: g.mul(g.exp(g.sub(pa, node.id)), gid)]


def _vjp_sum(g, node, gid):
    pa = node.parents[0]
    return [lambda: g.mul(g.constant(np.ones_like(g.value(pa))), gid)]


_VJP = {
    "add": _vjp_add,
    "mul": _vjp_mul,
    "matmul": _vjp_matmul,
    "relu": _vjp_relu,
    "leaky_relu": _vjp_leaky_relu,
    "exp": lambda g, n, gid: [lambda: g.mul(gid, n.id)],
    "log": lambda g, n, gid: [lambda: g.mul(gid, g.recip(n.parents[0]))],
    "sqrt": lambda g, n, gid: [lambda: g.scale(g.mul(gid, g.recip(n.id)), 0.5)],
    "recip": lambda g, n, gid: [lambda: g.neg(g.mul(gid, g.mul(n.id, n.id)))],
    "neg": lambda g, n, gid: [lambda: g.neg(gid)],
    "scale": lambda g, n, gid: [lambda: g.scale(gid, n.attrs["c"])],
    "sum": _vjp_sum,
    "max": _vjp_max,
    "logsumexp": _vjp_logsumexp,
    "dot": lambda g, n, gid: [
        lambda: g.mul(n.parents[1], gid),
        lambda: g.mul(n.parents[0], gid),
    ],
}


def gradient(graph: Graph, output: int, wrt, create_graph: bool = False) -> list[int]:
    """Reverse-mode gradients of a scalar output w.r.t. each node in `wrt`.

    Returns one node id per wrt entry. With create_graph=True the returned
    nodes stay connected to the tape and can be differentiated again; with
    create_graph=False they are detached constants holding the same values.
    A wrt leaf the output does not depend on gets a zero tensor, not an error.
    Backward work is pruned to the subgraph between the output and the wrt
    leaves, so unrelated variables (e.g. parameters, when asking for an input
    gradient) cost nothing.
    """
    out_node = graph.node(output)
    if out_node.value.size != 1:
        raise GraphError(f"gradient needs a scalar output, got shape {out_node.value.shape}")
    wrt = list(wrt)
    for w in wrt:
        if not graph.node(w).requires_grad:
            raise GraphError(f"wrt node {w} does not require grad; build it with variable()")

    # depends[n]: some wrt leaf is an ancestor of n, through live (non-stopped) edges
    depends = bytearray(output + 1)
    for w in wrt:
        if w <= output:
            depends[w] = 1
    start = min(wrt) if wrt else 0
    for nid in range(start, output + 1):
        node = graph.nodes[nid]
        if depends[nid] or node.op in ("constant", "stop_gradient"):
            continue
        depends[nid] = any(depends[p] for p in node.parents)

    adjoint: dict[int, int] = {}
    if depends[output]:
        adjoint[output] = graph.constant(np.ones_like(out_node.value))
    for nid in range(output, -1, -1):
        gid = adjoint.get(nid)
        if gid is None:
            continue
        node = graph.nodes[nid]
        if not node.parents or node.op in ("constant", "stop_gradient"):
            continue
        for pid, thunk in zip(node.parents, _VJP[node.op](graph, node, gid)):
            if not depends[pid]:
                continue
            contrib = thunk()
            prev = adjoint.get(pid)
            adjoint[pid] = contrib if prev is None else graph.add(prev, contrib)

    out = []
    for w in wrt:
        gid = adjoint.get(w)
        if gid is None:
            gid = graph.constant(np.zeros_like(graph.value(w)))
        elif not create_graph:
            gid = graph.constant(graph.value(gid).copy())
        out.append(gid)
    return out
