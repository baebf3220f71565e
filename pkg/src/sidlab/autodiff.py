"""Reverse-mode automatic differentiation over dense float64 matrices.

A ComputeGraph is a tape of shape-checked operations built around named
leaves. ``evaluate`` binds the leaves and runs the forward pass, caching
every intermediate; ``backward`` then accumulates vector-Jacobian products
in reverse node order, which makes gradients bitwise reproducible.
"""

from __future__ import annotations

import numpy as np


class GraphError(Exception):
    """Base class for graph construction and execution errors."""


class ShapeMismatchError(GraphError):
    pass


class NonFiniteError(GraphError):
    pass


class UnboundLeafError(GraphError):
    pass


def _as_matrix(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, arr.size)
    elif arr.ndim != 2:
        raise ShapeMismatchError(f"expected rank <= 2, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


class Tensor:
    """Immutable (rows, cols) float64 array, finite by construction."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = _as_matrix(data).copy()
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor contains NaN or Inf")
        arr.flags.writeable = False
        self.data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # internal fast path: arr already validated 2-D float64
        obj = object.__new__(cls)
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(obj, "data", arr)
        return obj

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatchError(f"item() on tensor of shape {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


def _broadcast_shape(a: tuple, b: tuple, what: str) -> tuple:
    out = []
    for da, db in zip(a, b):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise ShapeMismatchError(f"{what}: cannot broadcast {a} with {b}")
    return tuple(out)


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    # undo broadcasting: sum gradient over expanded axes
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


class _Node:
    __slots__ = ("op", "inputs", "shape", "payload", "name", "param", "needs_grad")

    def __init__(self, op, inputs, shape, payload=None, name=None, param=False,
                 needs_grad=False):
        self.op = op
        self.inputs = inputs
        self.shape = shape
        self.payload = payload
        self.name = name
        self.param = param
        self.needs_grad = needs_grad


class NodeRef:
    """Handle to a node in a ComputeGraph; supports arithmetic operators."""

    __slots__ = ("graph", "id")

    def __init__(self, graph: "ComputeGraph", node_id: int):
        self.graph = graph
        self.id = node_id

    @property
    def shape(self) -> tuple[int, int]:
        return self.graph._nodes[self.id].shape

    def __add__(self, other):
        return self.graph.add(self, other)

    def __sub__(self, other):
        return self.graph.sub(self, other)

    def __mul__(self, other):
        return self.graph.mul(self, other)

    def __matmul__(self, other):
        return self.graph.matmul(self, other)

    def __neg__(self):
        return self.graph.scale(self, -1.0)


class ComputeGraph:
    """Tape of differentiable matrix operations with named leaves.

    Leaves are either bound at evaluate time (``leaf``) or fixed at build
    time (``constant``). Nodes are appended in topological order; backward
    walks the tape in exact reverse order with a fixed accumulation order.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._leaf_ids: dict[str, int] = {}
        self._values: list | None = None
        self._evaluated_root: int | None = None

    # ------------------------------------------------------------------
    # construction

    def _append(self, node: _Node) -> NodeRef:
        self._nodes.append(node)
        self._values = None
        return NodeRef(self, len(self._nodes) - 1)

    def _ref(self, x) -> NodeRef:
        if isinstance(x, NodeRef):
            if x.graph is not self:
                raise GraphError("node belongs to a different graph")
            return x
        return self.constant(x)

    def leaf(self, name: str, shape, param: bool = False) -> NodeRef:
        """Declare a named leaf of fixed shape, bound at evaluate time."""
        if name in self._leaf_ids:
            raise GraphError(f"duplicate leaf name {name!r}")
        shape = (int(shape[0]), int(shape[1]))
        ref = self._append(_Node("leaf", (), shape, name=name, param=param,
                                 needs_grad=param))
        self._leaf_ids[name] = ref.id
        return ref

    def constant(self, value) -> NodeRef:
        arr = _as_matrix(value)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("constant contains NaN or Inf")
        return self._append(_Node("const", (), arr.shape, payload=arr))

    def _binary(self, op: str, a, b) -> NodeRef:
        a, b = self._ref(a), self._ref(b)
        shape = _broadcast_shape(a.shape, b.shape, op)
        ng = self._nodes[a.id].needs_grad or self._nodes[b.id].needs_grad
        return self._append(_Node(op, (a.id, b.id), shape, needs_grad=ng))

    def add(self, a, b) -> NodeRef:
        return self._binary("add", a, b)

    def sub(self, a, b) -> NodeRef:
        return self._binary("sub", a, b)

    def mul(self, a, b) -> NodeRef:
        """Elementwise product with (n,1)/(1,m) broadcasting."""
        return self._binary("mul", a, b)

    def scale(self, a, c: float) -> NodeRef:
        a = self._ref(a)
        return self._append(_Node("scale", (a.id,), a.shape, payload=float(c),
                                  needs_grad=self._nodes[a.id].needs_grad))

    def matmul(self, a, b) -> NodeRef:
        a, b = self._ref(a), self._ref(b)
        if a.shape[1] != b.shape[0]:
            raise ShapeMismatchError(
                f"matmul: inner dims {a.shape} @ {b.shape}")
        ng = self._nodes[a.id].needs_grad or self._nodes[b.id].needs_grad
        return self._append(_Node("matmul", (a.id, b.id),
                                  (a.shape[0], b.shape[1]), needs_grad=ng))

    def affine(self, x, w, b) -> NodeRef:
        """x @ w + b with b a (1, out) row broadcast over the batch."""
        x, w, b = self._ref(x), self._ref(w), self._ref(b)
        if x.shape[1] != w.shape[0]:
            raise ShapeMismatchError(f"affine: {x.shape} @ {w.shape}")
        if b.shape != (1, w.shape[1]):
            raise ShapeMismatchError(f"affine: bias {b.shape} vs out {w.shape[1]}")
        ng = (self._nodes[x.id].needs_grad or self._nodes[w.id].needs_grad
              or self._nodes[b.id].needs_grad)
        return self._append(_Node("affine", (x.id, w.id, b.id),
                                  (x.shape[0], w.shape[1]), needs_grad=ng))

    def _unary(self, op: str, a, payload=None) -> NodeRef:
        a = self._ref(a)
        return self._append(_Node(op, (a.id,), a.shape, payload=payload,
                                  needs_grad=self._nodes[a.id].needs_grad))

    def silu(self, a) -> NodeRef:
        return self._unary("silu", a)

    def abs(self, a) -> NodeRef:
        return self._unary("abs", a)

    def maximum(self, a, floor: float) -> NodeRef:
        """Elementwise max(a, floor) against a scalar."""
        return self._unary("maxs", a, payload=float(floor))

    def reciprocal(self, a) -> NodeRef:
        return self._unary("recip", a)

    def sum(self, a, axis: int | None = None) -> NodeRef:
        a = self._ref(a)
        if axis is None:
            shape = (1, 1)
        elif axis == 0:
            shape = (1, a.shape[1])
        elif axis == 1:
            shape = (a.shape[0], 1)
        else:
            raise GraphError(f"sum: invalid axis {axis}")
        return self._append(_Node("sum", (a.id,), shape, payload=axis,
                                  needs_grad=self._nodes[a.id].needs_grad))

    def mean(self, a) -> NodeRef:
        a = self._ref(a)
        return self._append(_Node("mean", (a.id,), (1, 1),
                                  needs_grad=self._nodes[a.id].needs_grad))

    def concat_cols(self, parts) -> NodeRef:
        parts = [self._ref(p) for p in parts]
        rows = parts[0].shape[0]
        for p in parts:
            if p.shape[0] != rows:
                raise ShapeMismatchError("concat: row counts differ")
        cols = sum(p.shape[1] for p in parts)
        ng = any(self._nodes[p.id].needs_grad for p in parts)
        return self._append(_Node("concat", tuple(p.id for p in parts),
                                  (rows, cols), needs_grad=ng))

    def stop_gradient(self, a) -> NodeRef:
        a = self._ref(a)
        return self._append(_Node("stopgrad", (a.id,), a.shape,
                                  needs_grad=False))

    # composite reductions -------------------------------------------------

    def sq_norm(self, a, axis: int | None = None) -> NodeRef:
        """Squared L2 norm, global or per row/column."""
        return self.sum(self.mul(a, a), axis=axis)

    def l1_norm(self, a, axis: int | None = None) -> NodeRef:
        return self.sum(self.abs(a), axis=axis)

    def dot(self, a, b, axis: int | None = None) -> NodeRef:
        return self.sum(self.mul(a, b), axis=axis)

    # ------------------------------------------------------------------
    # execution

    def evaluate(self, root: NodeRef, bindings: dict) -> Tensor:
        """Bind all leaves, run the forward pass, cache intermediates."""
        if root.graph is not self:
            raise GraphError("root belongs to a different graph")
        bound = {}
        for name, value in bindings.items():
            if name not in self._leaf_ids:
                raise UnboundLeafError(f"binding for unknown leaf {name!r}")
            arr = value.data if isinstance(value, Tensor) else _as_matrix(value)
            want = self._nodes[self._leaf_ids[name]].shape
            if arr.shape != want:
                raise ShapeMismatchError(
                    f"leaf {name!r}: bound shape {arr.shape}, declared {want}")
            bound[name] = arr
        values: list = [None] * len(self._nodes)
        # overflow produces inf, which the per-node finiteness check reports
        with np.errstate(over="ignore", invalid="ignore"):
            for i, node in enumerate(self._nodes):
                values[i] = self._forward_one(i, node, values, bound)
        self._values = values
        self._evaluated_root = root.id
        return Tensor._wrap(values[root.id].copy())

    def _forward_one(self, i, node, values, bound):
        op = node.op
        if op == "leaf":
            if node.name not in bound:
                raise UnboundLeafError(f"leaf {node.name!r} not bound")
            return bound[node.name]
        if op == "const":
            return node.payload
        ins = [values[j] for j in node.inputs]
        if op == "add":
            out = ins[0] + ins[1]
        elif op == "sub":
            out = ins[0] - ins[1]
        elif op == "mul":
            out = ins[0] * ins[1]
        elif op == "scale":
            out = ins[0] * node.payload
        elif op == "matmul":
            out = ins[0] @ ins[1]
        elif op == "affine":
            out = ins[0] @ ins[1] + ins[2]
        elif op == "silu":
            # tanh form of the sigmoid saturates without overflow
            s = 0.5 * (1.0 + np.tanh(0.5 * ins[0]))
            out = ins[0] * s
        elif op == "abs":
            out = np.abs(ins[0])
        elif op == "maxs":
            out = np.maximum(ins[0], node.payload)
        elif op == "recip":
            with np.errstate(divide="ignore"):
                out = 1.0 / ins[0]
        elif op == "sum":
            axis = node.payload
            out = ins[0].sum(axis=axis, keepdims=True) if axis is not None \
                else ins[0].sum().reshape(1, 1)
        elif op == "mean":
            out = ins[0].mean().reshape(1, 1)
        elif op == "concat":
            out = np.concatenate(ins, axis=1)
        elif op == "stopgrad":
            out = ins[0]
        else:  # pragma: no cover
            raise GraphError(f"unknown op {op!r}")
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(f"non-finite output at node {i} ({op})")
        return out

    def value_of(self, node: NodeRef) -> Tensor:
        """Cached value of any node from the last evaluate call."""
        if self._values is None:
            raise GraphError("evaluate must run before value_of")
        return Tensor._wrap(self._values[node.id].copy())

    def backward(self, root: NodeRef) -> dict[str, Tensor]:
        """Gradients of a scalar root for every parameter leaf.

        Leaves reachable only through stop-gradient nodes get exact zeros.
        Accumulation follows reverse node order, so results are bitwise
        deterministic.
        """
        if self._values is None or self._evaluated_root != root.id:
            raise GraphError("evaluate must run before backward")
        if self._nodes[root.id].shape != (1, 1):
            raise ShapeMismatchError(
                f"backward root must be scalar, got {self._nodes[root.id].shape}")
        values = self._values
        grads: list = [None] * len(self._nodes)
        grads[root.id] = np.ones((1, 1))
        for i in range(root.id, -1, -1):
            g = grads[i]
            if g is None:
                continue
            node = self._nodes[i]
            self._backward_one(i, node, g, values, grads)
        out = {}
        for name, idx in self._leaf_ids.items():
            node = self._nodes[idx]
            if not node.param:
                continue
            g = grads[idx]
            if g is None:
                g = np.zeros(node.shape)
            out[name] = Tensor._wrap(g)
        return out

    def _backward_one(self, i, node, g, values, grads):
        op = node.op
        nodes = self._nodes

        def push(j, contribution):
            if not nodes[j].needs_grad:
                return
            contribution = _reduce_to(contribution, nodes[j].shape)
            if grads[j] is None:
                grads[j] = contribution
            else:
                grads[j] = grads[j] + contribution

        if op in ("leaf", "const", "stopgrad"):
            return
        a = node.inputs[0]
        if op == "add":
            push(a, g)
            push(node.inputs[1], g)
        elif op == "sub":
            push(a, g)
            push(node.inputs[1], -g)
        elif op == "mul":
            push(a, g * values[node.inputs[1]])
            push(node.inputs[1], g * values[a])
        elif op == "scale":
            push(a, g * node.payload)
        elif op == "matmul":
            b = node.inputs[1]
            if nodes[a].needs_grad:
                push(a, g @ values[b].T)
            if nodes[b].needs_grad:
                push(b, values[a].T @ g)
        elif op == "affine":
            x, w, b = node.inputs
            if nodes[x].needs_grad:
                push(x, g @ values[w].T)
            if nodes[w].needs_grad:
                push(w, values[x].T @ g)
            if nodes[b].needs_grad:
                push(b, g.sum(axis=0, keepdims=True))
        elif op == "silu":
            x = values[a]
            s = 0.5 * (1.0 + np.tanh(0.5 * x))
            push(a, g * (s * (1.0 + x * (1.0 - s))))
        elif op == "abs":
            push(a, g * np.sign(values[a]))
        elif op == "maxs":
            push(a, g * (values[a] > node.payload))
        elif op == "recip":
            x = values[a]
            push(a, -g / (x * x))
        elif op == "sum":
            push(a, np.broadcast_to(g, nodes[a].shape))
        elif op == "mean":
            n = nodes[a].shape[0] * nodes[a].shape[1]
            push(a, np.broadcast_to(g / n, nodes[a].shape))
        elif op == "concat":
            col = 0
            for j in node.inputs:
                w = nodes[j].shape[1]
                push(j, g[:, col:col + w])
                col += w
        else:  # pragma: no cover
            raise GraphError(f"unknown op {op!r}")


def grad_check(fn, point: dict, fd_step: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``fn`` maps a {name: array} point to ``(value, grads)`` with a scalar
    value and grads of the same shapes as the point. Relative error uses a
    ``max(|a|, |b|, 1e-12)`` denominator componentwise.
    """
    if fd_step <= 0:
        raise ValueError("fd_step must be positive")
    point = {k: _as_matrix(v).copy() for k, v in point.items()}
    _, grads = fn(point)
    worst = 0.0
    for name, arr in point.items():
        g = grads[name]
        g = g.data if isinstance(g, Tensor) else _as_matrix(g)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + fd_step
            f_plus = fn(point)[0]
            arr[idx] = orig - fd_step
            f_minus = fn(point)[0]
            arr[idx] = orig
            fd = (f_plus - f_minus) / (2.0 * fd_step)
            ad = g[idx]
            rel = abs(ad - fd) / max(abs(ad), abs(fd), 1e-12)
            worst = max(worst, rel)
    return worst
