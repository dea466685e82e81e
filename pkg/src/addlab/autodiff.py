"""Reverse-mode automatic differentiation over small static graphs.

Float64 everywhere. A Graph records primitive operations in creation order;
node ids are topological by construction. Backward appends gradient nodes
built from the same primitive set, so gradients are themselves
differentiable (needed for gradient penalties).
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Graph",
    "Ref",
    "GraphError",
    "ShapeError",
    "NonFiniteError",
    "BackwardBeforeForward",
    "GradCheckReport",
    "as_tensor",
    "forward",
    "backward",
    "grad_check",
    "OPS",
]


class GraphError(Exception):
    """Base error for graph construction and execution."""


class ShapeError(GraphError):
    pass


class NonFiniteError(GraphError):
    pass


class BackwardBeforeForward(GraphError):
    pass


def as_tensor(x) -> np.ndarray:
    """Coerce to a contiguous float64 array (rank 0, 1, or 2)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim > 2:
        raise ShapeError(f"rank {arr.ndim} tensors unsupported (max 2)")
    if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


# Registered differentiable primitives. Tests iterate this to gradient-check
# every op; the values are the names used in Node.op.
OPS = (
    "add",
    "mul",
    "matmul",
    "transpose",
    "scale",
    "shift",
    "sigmoid",
    "silu",
    "sum",
    "mean",
    "sqnorm",
    "concat",
    "slice",
    "broadcast_to",
)

# Ops whose inputs receive no gradient.
NONDIFF_OPS = ("stop_grad", "posmask")

LEAF_OPS = ("input", "param", "const")


class Node:
    __slots__ = ("op", "args", "shape", "value", "grad", "requires_grad", "payload", "name")

    def __init__(self, op, args, shape, value, requires_grad, payload=None, name=None):
        self.op = op
        self.args = args
        self.shape = shape
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self.payload = payload
        self.name = name

    def label(self, idx: int) -> str:
        base = f"#{idx}:{self.op}"
        return f"{base}({self.name})" if self.name else base


class Ref:
    """Handle to a node in a Graph, with operator sugar for common ops."""

    __slots__ = ("graph", "idx")

    def __init__(self, graph: "Graph", idx: int):
        self.graph = graph
        self.idx = idx

    @property
    def shape(self):
        return self.graph.nodes[self.idx].shape

    @property
    def value(self):
        return self.graph.value(self)

    def __add__(self, other):
        return self.graph.add(self, other)

    def __sub__(self, other):
        return self.graph.sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Ref):
            return self.graph.mul(self, other)
        return self.graph.scale(self, float(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return self.graph.scale(self, -1.0)

    def __matmul__(self, other):
        return self.graph.matmul(self, other)

    def __repr__(self):
        node = self.graph.nodes[self.idx]
        return f"Ref({node.label(self.idx)}, shape={node.shape})"


def _broadcast_result(sa: tuple, sb: tuple) -> tuple:
    """Allowed elementwise pairings: equal shapes, matrix+row-vector, x+scalar."""
    if sa == sb:
        return sa
    if sb == ():
        return sa
    if sa == ():
        return sb
    if len(sa) == 2 and sb == (sa[1],):
        return sa
    if len(sb) == 2 and sa == (sb[1],):
        return sb
    raise ShapeError(f"incompatible elementwise shapes {sa} and {sb}")


class Graph:
    """Operation tape. Values evaluate eagerly when all inputs are bound;
    placeholders defer evaluation to forward()."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.inputs: list[int] = []
        self.params: dict[str, int] = {}

    # -- construction ------------------------------------------------------

    def _append(self, node: Node) -> Ref:
        self.nodes.append(node)
        return Ref(self, len(self.nodes) - 1)

    def _node(self, ref: Ref) -> Node:
        if ref.graph is not self:
            raise GraphError("ref belongs to a different graph")
        return self.nodes[ref.idx]

    def value(self, ref: Ref) -> np.ndarray:
        node = self._node(ref)
        if node.value is None:
            raise BackwardBeforeForward(
                f"node {node.label(ref.idx)} has no value; call forward() first"
            )
        return node.value

    def input(self, value, name=None, differentiable=False) -> Ref:
        """Bound input leaf. Marked differentiable inputs receive gradients."""
        arr = as_tensor(value)
        ref = self._append(Node("input", (), arr.shape, arr, differentiable, name=name))
        self.inputs.append(ref.idx)
        return ref

    def placeholder(self, shape, name=None, differentiable=False) -> Ref:
        """Input leaf with no value; bound later by forward()."""
        ref = self._append(Node("input", (), tuple(shape), None, differentiable, name=name))
        self.inputs.append(ref.idx)
        return ref

    def param(self, name: str, value) -> Ref:
        """Trainable leaf. The array is referenced, not copied."""
        if name in self.params:
            raise GraphError(f"duplicate parameter name {name!r}")
        arr = as_tensor(value)
        ref = self._append(Node("param", (), arr.shape, arr, True, name=name))
        self.params[name] = ref.idx
        return ref

    def const(self, value, name=None) -> Ref:
        arr = as_tensor(value)
        return self._append(Node("const", (), arr.shape, arr, False, name=name))

    def set_param(self, name: str, value) -> None:
        idx = self.params[name]
        arr = as_tensor(value)
        if arr.shape != self.nodes[idx].shape:
            raise ShapeError(f"param {name!r} expects shape {self.nodes[idx].shape}, got {arr.shape}")
        self.nodes[idx].value = arr

    # -- primitive ops -----------------------------------------------------

    def _op(self, op, args, shape, payload=None, differentiable=True) -> Ref:
        arg_nodes = [self._node(a) for a in args]
        requires = differentiable and any(n.requires_grad for n in arg_nodes)
        values = [n.value for n in arg_nodes]
        value = None
        if all(v is not None for v in values):
            with np.errstate(over="ignore", invalid="ignore"):
                value = _EVAL[op](values, payload)
            if not np.all(np.isfinite(value)):
                raise NonFiniteError(f"non-finite value at new node #{len(self.nodes)}:{op}")
        node = Node(op, tuple(a.idx for a in args), shape, value, requires, payload)
        return self._append(node)

    def add(self, a: Ref, b: Ref) -> Ref:
        shape = _broadcast_result(self._node(a).shape, self._node(b).shape)
        return self._op("add", (a, b), shape)

    def mul(self, a: Ref, b: Ref) -> Ref:
        shape = _broadcast_result(self._node(a).shape, self._node(b).shape)
        return self._op("mul", (a, b), shape)

    def matmul(self, a: Ref, b: Ref) -> Ref:
        sa, sb = self._node(a).shape, self._node(b).shape
        if len(sa) != 2 or len(sb) != 2 or sa[1] != sb[0]:
            raise ShapeError(f"matmul needs (m,k)@(k,n), got {sa} @ {sb}")
        return self._op("matmul", (a, b), (sa[0], sb[1]))

    def transpose(self, a: Ref) -> Ref:
        sa = self._node(a).shape
        if len(sa) != 2:
            raise ShapeError(f"transpose needs a matrix, got shape {sa}")
        return self._op("transpose", (a,), (sa[1], sa[0]))

    def scale(self, a: Ref, c: float) -> Ref:
        return self._op("scale", (a,), self._node(a).shape, payload=float(c))

    def shift(self, a: Ref, c: float) -> Ref:
        return self._op("shift", (a,), self._node(a).shape, payload=float(c))

    def sigmoid(self, a: Ref) -> Ref:
        return self._op("sigmoid", (a,), self._node(a).shape)

    def silu(self, a: Ref) -> Ref:
        return self._op("silu", (a,), self._node(a).shape)

    def sum(self, a: Ref, axis=None) -> Ref:
        shape = self._sum_shape(a, axis)
        return self._op("sum", (a,), shape, payload=axis)

    def mean(self, a: Ref, axis=None) -> Ref:
        shape = self._sum_shape(a, axis)
        return self._op("mean", (a,), shape, payload=axis)

    def _sum_shape(self, a: Ref, axis) -> tuple:
        sa = self._node(a).shape
        if axis is None:
            return ()
        if axis != 0:
            raise ShapeError("reductions support axis=None or axis=0 only")
        if len(sa) == 0:
            raise ShapeError("axis=0 reduction of a scalar")
        return sa[1:]

    def sqnorm(self, a: Ref) -> Ref:
        return self._op("sqnorm", (a,), ())

    def concat(self, parts: list[Ref], axis: int = 0) -> Ref:
        if not parts:
            raise ShapeError("concat of zero tensors")
        shapes = [self._node(p).shape for p in parts]
        rank = len(shapes[0])
        if any(len(s) != rank for s in shapes) or axis >= rank:
            raise ShapeError(f"concat rank/axis mismatch: {shapes}, axis={axis}")
        for d in range(rank):
            if d != axis and any(s[d] != shapes[0][d] for s in shapes):
                raise ShapeError(f"concat off-axis mismatch: {shapes}")
        out = list(shapes[0])
        out[axis] = sum(s[axis] for s in shapes)
        return self._op("concat", tuple(parts), tuple(out), payload=axis)

    def slice(self, a: Ref, axis: int, start: int, stop: int) -> Ref:
        sa = self._node(a).shape
        if axis >= len(sa) or not (0 <= start < stop <= sa[axis]):
            raise ShapeError(f"bad slice [{start}:{stop}] on axis {axis} of {sa}")
        out = list(sa)
        out[axis] = stop - start
        return self._op("slice", (a,), tuple(out), payload=(axis, start, stop))

    def broadcast_to(self, a: Ref, shape) -> Ref:
        sa = self._node(a).shape
        shape = tuple(shape)
        if sa == shape:
            return a
        if sa != () and not (len(shape) == 2 and sa == (shape[1],)):
            raise ShapeError(f"cannot broadcast {sa} to {shape}")
        return self._op("broadcast_to", (a,), shape, payload=shape)

    def stop_grad(self, a: Ref) -> Ref:
        return self._op("stop_grad", (a,), self._node(a).shape, differentiable=False)

    def posmask(self, a: Ref) -> Ref:
        """Indicator of x > 0. Zero derivative, like stop_grad."""
        return self._op("posmask", (a,), self._node(a).shape, differentiable=False)

    # -- composed convenience ops -------------------------------------------

    def sub(self, a: Ref, b: Ref) -> Ref:
        return self.add(a, self.scale(b, -1.0))

    def relu(self, a: Ref) -> Ref:
        return self.mul(a, self.posmask(a))

    def zeros(self, shape) -> Ref:
        return self.const(np.zeros(shape))

    # -- evaluation ----------------------------------------------------------

    def _eval_node(self, idx: int) -> None:
        node = self.nodes[idx]
        if node.op in LEAF_OPS:
            if node.value is None:
                raise BackwardBeforeForward(f"unbound input {node.label(idx)}")
            return
        values = []
        for a in node.args:
            v = self.nodes[a].value
            if v is None:
                raise BackwardBeforeForward(f"upstream of {node.label(idx)} unbound")
            values.append(v)
        with np.errstate(over="ignore", invalid="ignore"):
            node.value = _EVAL[node.op](values, node.payload)
        if not np.all(np.isfinite(node.value)):
            raise NonFiniteError(f"non-finite value at node {node.label(idx)}")

    def forward(self, inputs=None, output: Ref | None = None) -> np.ndarray:
        """Re-evaluate the graph, optionally rebinding inputs (creation order)."""
        if inputs is not None:
            if len(inputs) != len(self.inputs):
                raise ShapeError(
                    f"graph declares {len(self.inputs)} inputs, got {len(inputs)}"
                )
            for idx, val in zip(self.inputs, inputs):
                arr = as_tensor(val)
                node = self.nodes[idx]
                if node.shape != arr.shape:
                    raise ShapeError(
                        f"input {node.label(idx)} expects shape {node.shape}, got {arr.shape}"
                    )
                node.value = arr
        for idx in range(len(self.nodes)):
            self._eval_node(idx)
        out = output if output is not None else Ref(self, len(self.nodes) - 1)
        return self.value(out)

    # -- differentiation -----------------------------------------------------

    def grad(self, y: Ref, wrt: list[Ref], seed: Ref | None = None) -> list[Ref]:
        """Append gradient nodes of y w.r.t. each node in wrt.

        Visits existing nodes once, in reverse creation order. Nodes with no
        path to y get an exact-zero constant of the right shape. Gradients are
        taken w.r.t. the requested nodes even when those are not marked
        differentiable (e.g. a feature input under a gradient penalty).
        """
        ynode = self._node(y)
        if seed is None:
            seed = self.const(np.ones(ynode.shape))
        elif self._node(seed).shape != ynode.shape:
            raise ShapeError("seed shape must match output shape")
        # Nodes through which a path to some wrt runs.
        active = {w.idx for w in wrt}
        for idx in range(y.idx + 1):
            node = self.nodes[idx]
            if node.op in LEAF_OPS or node.op in NONDIFF_OPS:
                continue
            if any(a in active for a in node.args):
                active.add(idx)
        cotangent: dict[int, Ref] = {y.idx: seed}
        for idx in range(y.idx, -1, -1):
            node = self.nodes[idx]
            if idx not in cotangent:
                continue
            if node.op in LEAF_OPS or node.op in NONDIFF_OPS:
                continue
            out_g = cotangent[idx]
            for arg_idx, g in _VJP[node.op](self, node, Ref(self, idx), out_g):
                if arg_idx not in active and not self.nodes[arg_idx].requires_grad:
                    continue
                if arg_idx in cotangent:
                    cotangent[arg_idx] = self.add(cotangent[arg_idx], g)
                else:
                    cotangent[arg_idx] = g
        out = []
        for w in wrt:
            ref = cotangent.get(w.idx)
            out.append(ref if ref is not None else self.zeros(self._node(w).shape))
        return out

    def backward(self, output_grad, output: Ref | None = None) -> dict:
        """Populate .grad for every param and differentiable input.

        Returns {"params": {name: array}, "inputs": {input position: array}}.
        """
        out = output if output is not None else Ref(self, len(self.nodes) - 1)
        onode = self._node(out)
        if onode.value is None:
            raise BackwardBeforeForward("backward before forward")
        garr = as_tensor(output_grad)
        if garr.shape != onode.shape:
            raise ShapeError(f"output_grad shape {garr.shape} != output shape {onode.shape}")

        wrt_idx = list(self.params.values()) + [
            i for i in self.inputs if self.nodes[i].requires_grad
        ]
        wrt = [Ref(self, i) for i in wrt_idx]
        refs = self.grad(out, wrt, seed=self.const(garr))
        result = {"params": {}, "inputs": {}}
        name_of = {idx: name for name, idx in self.params.items()}
        for w, r in zip(wrt, refs):
            arr = self.value(r)
            self.nodes[w.idx].grad = arr
            if w.idx in name_of:
                result["params"][name_of[w.idx]] = arr
            else:
                result["inputs"][self.inputs.index(w.idx)] = arr
        return result


# -- primitive evaluation table ----------------------------------------------


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_EVAL = {
    "add": lambda v, p: v[0] + v[1],
    "mul": lambda v, p: v[0] * v[1],
    "matmul": lambda v, p: v[0] @ v[1],
    "transpose": lambda v, p: np.ascontiguousarray(v[0].T),
    "scale": lambda v, p: v[0] * p,
    "shift": lambda v, p: v[0] + p,
    "sigmoid": lambda v, p: _sigmoid(v[0]),
    "silu": lambda v, p: v[0] * _sigmoid(v[0]),
    "sum": lambda v, p: np.sum(v[0], axis=p),
    "mean": lambda v, p: np.mean(v[0], axis=p),
    "sqnorm": lambda v, p: np.sum(v[0] * v[0]),
    "concat": lambda v, p: np.concatenate(v, axis=p),
    "slice": lambda v, p: np.ascontiguousarray(
        v[0][p[1]:p[2]] if p[0] == 0 else v[0][:, p[1]:p[2]]
    ),
    "broadcast_to": lambda v, p: np.broadcast_to(v[0], p).copy(),
    "stop_grad": lambda v, p: v[0],
    "posmask": lambda v, p: (v[0] > 0).astype(np.float64),
}


# -- vjp builders --------------------------------------------------------------
# Each returns [(arg node id, gradient Ref)] built from primitive ops, so the
# gradient graph is itself differentiable.


def _unbroadcast(g: Graph, ref: Ref, target_shape: tuple) -> Ref:
    shape = g.nodes[ref.idx].shape
    if shape == target_shape:
        return ref
    if target_shape == ():
        return g.sum(ref)
    # (B, n) reduced to (n,)
    return g.sum(ref, axis=0)


def _vjp_add(g, node, ref, og):
    a, b = node.args
    return [
        (a, _unbroadcast(g, og, g.nodes[a].shape)),
        (b, _unbroadcast(g, og, g.nodes[b].shape)),
    ]


def _vjp_mul(g, node, ref, og):
    a, b = node.args
    ra, rb = Ref(g, a), Ref(g, b)
    return [
        (a, _unbroadcast(g, g.mul(og, rb), g.nodes[a].shape)),
        (b, _unbroadcast(g, g.mul(og, ra), g.nodes[b].shape)),
    ]


def _vjp_matmul(g, node, ref, og):
    a, b = node.args
    ra, rb = Ref(g, a), Ref(g, b)
    return [
        (a, g.matmul(og, g.transpose(rb))),
        (b, g.matmul(g.transpose(ra), og)),
    ]


def _vjp_transpose(g, node, ref, og):
    return [(node.args[0], g.transpose(og))]


def _vjp_scale(g, node, ref, og):
    return [(node.args[0], g.scale(og, node.payload))]


def _vjp_shift(g, node, ref, og):
    return [(node.args[0], og)]


def _vjp_sigmoid(g, node, ref, og):
    s = ref
    ds = g.mul(s, g.shift(g.scale(s, -1.0), 1.0))
    return [(node.args[0], g.mul(og, ds))]


def _vjp_silu(g, node, ref, og):
    x = Ref(g, node.args[0])
    s = g.sigmoid(x)
    one_minus_s = g.shift(g.scale(s, -1.0), 1.0)
    ds = g.add(s, g.mul(g.mul(x, s), one_minus_s))
    return [(node.args[0], g.mul(og, ds))]


def _vjp_sum(g, node, ref, og):
    a = node.args[0]
    return [(a, g.broadcast_to(og, g.nodes[a].shape))]


def _vjp_mean(g, node, ref, og):
    a = node.args[0]
    shape = g.nodes[a].shape
    n = int(np.prod(shape)) if node.payload is None else shape[0]
    return [(a, g.scale(g.broadcast_to(og, shape), 1.0 / n))]


def _vjp_sqnorm(g, node, ref, og):
    a = node.args[0]
    ra = Ref(g, a)
    return [(a, g.scale(g.mul(g.broadcast_to(og, g.nodes[a].shape), ra), 2.0))]


def _vjp_concat(g, node, ref, og):
    axis = node.payload
    out = []
    offset = 0
    for a in node.args:
        width = g.nodes[a].shape[axis]
        out.append((a, g.slice(og, axis, offset, offset + width)))
        offset += width
    return out


def _vjp_slice(g, node, ref, og):
    a = node.args[0]
    axis, start, stop = node.payload
    shape = g.nodes[a].shape
    parts = []
    if start > 0:
        left = list(shape)
        left[axis] = start
        parts.append(g.zeros(left))
    parts.append(og)
    if stop < shape[axis]:
        right = list(shape)
        right[axis] = shape[axis] - stop
        parts.append(g.zeros(right))
    return [(a, g.concat(parts, axis=axis) if len(parts) > 1 else og)]


def _vjp_broadcast_to(g, node, ref, og):
    a = node.args[0]
    return [(a, _unbroadcast(g, og, g.nodes[a].shape))]


_VJP = {
    "add": _vjp_add,
    "mul": _vjp_mul,
    "matmul": _vjp_matmul,
    "transpose": _vjp_transpose,
    "scale": _vjp_scale,
    "shift": _vjp_shift,
    "sigmoid": _vjp_sigmoid,
    "silu": _vjp_silu,
    "sum": _vjp_sum,
    "mean": _vjp_mean,
    "sqnorm": _vjp_sqnorm,
    "concat": _vjp_concat,
    "slice": _vjp_slice,
    "broadcast_to": _vjp_broadcast_to,
}


# -- module-level contract functions ------------------------------------------


def forward(graph: Graph, inputs=None, output: Ref | None = None) -> np.ndarray:
    return graph.forward(inputs, output)


def backward(graph: Graph, output_grad, output: Ref | None = None) -> dict:
    return graph.backward(output_grad, output)


class GradCheckReport:
    """Per-parameter max relative error of analytic vs central-difference grads."""

    def __init__(self, per_param: dict[str, float], tolerance: float):
        self.per_param = per_param
        self.tolerance = tolerance
        self.worst = max(per_param.values()) if per_param else 0.0
        self.passed = self.worst < tolerance

    def __repr__(self):
        status = "pass" if self.passed else "FAIL"
        return f"GradCheckReport(worst={self.worst:.3e}, tol={self.tolerance:.0e}, {status})"


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(1.0, abs(a), abs(n))


def grad_check(
    graph: Graph,
    tolerance: float = 1e-6,
    output: Ref | None = None,
    h: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic parameter gradients against central finite differences.

    The check target is the output summed to a scalar. Relative error is
    normalized by max(1, |analytic|, |numeric|). Intended for small graphs:
    cost is two forward passes per parameter element.
    """
    if not graph.params:
        raise GraphError("grad_check needs at least one parameter")
    out = output if output is not None else Ref(graph, len(graph.nodes) - 1)
    if graph._node(out).shape != ():
        out = graph.sum(out)
    graph.forward()
    grads = graph.backward(np.ones(()), output=out)["params"]

    per_param = {}
    for name, idx in graph.params.items():
        base = graph.nodes[idx].value.copy()
        analytic = grads[name]
        if not np.all(np.isfinite(analytic)):
            raise NonFiniteError(f"non-finite analytic gradient for param {name!r}")
        worst = 0.0
        flat = base.reshape(-1)
        work = base.copy()
        for i in range(flat.size):
            orig = flat[i]
            work.reshape(-1)[i] = orig + h
            graph.set_param(name, work)
            fp = float(graph.forward(output=out))
            work.reshape(-1)[i] = orig - h
            graph.set_param(name, work)
            fm = float(graph.forward(output=out))
            work.reshape(-1)[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            if not np.isfinite(numeric):
                raise NonFiniteError(f"non-finite numeric gradient for param {name!r}")
            worst = max(worst, _rel_err(float(analytic.reshape(-1)[i]), numeric))
        graph.set_param(name, base)
        per_param[name] = worst
    graph.forward()
    return GradCheckReport(per_param, tolerance)
