"""Reverse-mode automatic differentiation over dense float64 tensors.

The engine is a per-example tape: a :class:`Graph` records every operation
in insertion order, and :meth:`Graph.backward` replays the tape once in
reverse, accumulating gradients across fan-out. There is no broadcasting;
all shape adaptation is explicit through concat/slice operations, which
keeps every backward rule a two-liner you can audit.

A Graph and the tensors it produces are confined to one thread for the
duration of a forward/backward pass. Leaf tensors (parameters, constants)
carry no graph reference and may be shared read-only across graphs.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class Tensor:
    """Dense float64 array with an optional gradient buffer.

    ``data`` is stored row-major; ``grad``, when present, matches ``data``
    elementwise. ``requires_grad`` marks tensors whose gradient should be
    materialized into ``grad`` by a backward pass (parameters, typically).
    """

    __slots__ = ("data", "requires_grad", "grad", "node", "_live")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None
        self._live = self.requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Node:
    """One recorded operation: inputs, output, and its backward rule."""

    __slots__ = ("kind", "inputs", "out", "bwd", "graph")

    def __init__(self, kind, inputs, out, bwd, graph):
        self.kind = kind
        self.inputs = inputs
        self.out = out
        self.bwd = bwd
        self.graph = graph


class Graph:
    """Append-only operation tape with reverse-order backward replay."""

    def __init__(self):
        self.nodes: list[Node] = []

    def record(self, kind: str, inputs, out_data, backward_fn) -> Tensor:
        """Append an operation to the tape and return its output tensor.

        ``backward_fn(gout)`` must return one gradient array (or None) per
        input, in input order. Returned arrays are treated as immutable by
        the engine; closures may hand out views.
        """
        out = Tensor(out_data)
        out._live = any(t._live for t in inputs)
        node = Node(kind, tuple(inputs), out, backward_fn, self)
        out.node = node
        self.nodes.append(node)
        return out

    def backward(self, root: Tensor) -> None:
        """Fill ``grad`` on every requires_grad tensor with d(root)/d(tensor).

        Visits nodes exactly once, in reverse insertion order. Gradients sum
        across fan-out; repeated backward calls accumulate into ``grad``.
        """
        if root.size != 1:
            raise ValueError(f"backward: root must be a scalar, got shape {root.shape}")
        if root.node is None or root.node.graph is not self:
            raise ValueError("backward: root was not produced by this graph")
        grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        owners: dict[int, Tensor] = {id(root): root}
        for node in reversed(self.nodes):
            gout = grads.get(id(node.out))
            if gout is None:
                continue
            for t, gi in zip(node.inputs, node.bwd(gout)):
                if gi is None or not t._live:
                    continue
                tid = id(t)
                cur = grads.get(tid)
                if cur is None:
                    grads[tid] = gi
                    owners[tid] = t
                else:
                    grads[tid] = cur + gi
        for tid, t in owners.items():
            if t.requires_grad:
                g = grads[tid]
                t.grad = np.array(g) if t.grad is None else t.grad + g

    # -- elementwise -------------------------------------------------------

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.shape != b.data.shape:
            raise ShapeError(f"add: shapes {a.data.shape} and {b.data.shape} do not match")
        return self.record("add", (a, b), a.data + b.data, lambda g: (g, g))

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.shape != b.data.shape:
            raise ShapeError(f"sub: shapes {a.data.shape} and {b.data.shape} do not match")
        return self.record("sub", (a, b), a.data - b.data, lambda g: (g, -g))

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.shape != b.data.shape:
            raise ShapeError(f"mul_elementwise: shapes {a.data.shape} and {b.data.shape} do not match")
        ad, bd = a.data, b.data
        return self.record("mul_elementwise", (a, b), ad * bd, lambda g: (g * bd, g * ad))

    def tanh(self, a: Tensor) -> Tensor:
        out = np.tanh(a.data)
        return self.record("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))

    def sigmoid(self, a: Tensor) -> Tensor:
        out = expit(a.data)
        return self.record("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))

    def relu_hinge(self, a: Tensor) -> Tensor:
        # Subgradient at exactly 0 is 0: a margin met exactly contributes
        # no gradient (inactive-constraint convention).
        ad = a.data
        out = np.maximum(ad, 0.0)
        return self.record("relu_hinge", (a,), out, lambda g: (g * (ad > 0.0),))

    def scalar_mul(self, a: Tensor, scalar: float) -> Tensor:
        c = float(scalar)
        return self.record("scalar_mul", (a,), c * a.data, lambda g: (c * g,))

    # -- reductions and contractions ----------------------------------------

    def sum(self, a: Tensor) -> Tensor:
        ad = a.data
        return self.record("sum", (a,), np.asarray(ad.sum()), lambda g: (g * np.ones_like(ad),))

    def dot(self, a: Tensor, b: Tensor) -> Tensor:
        ad, bd = a.data, b.data
        if ad.ndim != 1 or bd.ndim != 1 or ad.shape != bd.shape:
            raise ShapeError(f"dot: expected equal-length vectors, got {ad.shape} and {bd.shape}")
        return self.record("dot", (a, b), np.asarray(ad @ bd), lambda g: (g * bd, g * ad))

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        ad, bd = a.data, b.data
        if ad.ndim == 2 and bd.ndim == 2:
            if ad.shape[1] != bd.shape[0]:
                raise ShapeError(f"matmul: inner dimensions of {ad.shape} and {bd.shape} do not match")

            def bwd(g):
                return g @ bd.T, ad.T @ g

        elif ad.ndim == 2 and bd.ndim == 1:
            if ad.shape[1] != bd.shape[0]:
                raise ShapeError(f"matmul: inner dimensions of {ad.shape} and {bd.shape} do not match")

            def bwd(g):
                return np.outer(g, bd), ad.T @ g

        else:
            raise ShapeError(f"matmul: unsupported operand ranks {ad.shape} and {bd.shape}")
        return self.record("matmul", (a, b), ad @ bd, bwd)

    # -- shape plumbing ------------------------------------------------------

    def concat(self, *tensors: Tensor) -> Tensor:
        if len(tensors) < 2:
            raise ShapeError("concat_last_axis: needs at least two inputs")
        ndim = tensors[0].data.ndim
        if ndim not in (1, 2) or any(t.data.ndim != ndim for t in tensors):
            raise ShapeError(
                "concat_last_axis: inputs must all be vectors or all matrices, got "
                + str([t.data.shape for t in tensors])
            )
        if ndim == 2 and any(t.data.shape[0] != tensors[0].data.shape[0] for t in tensors):
            raise ShapeError(
                "concat_last_axis: matrix row counts differ: "
                + str([t.data.shape for t in tensors])
            )
        widths = [t.data.shape[-1] for t in tensors]
        offsets = np.cumsum([0] + widths[:-1])
        out = np.concatenate([t.data for t in tensors], axis=-1)

        def bwd(g):
            return tuple(g[..., o : o + w] for o, w in zip(offsets, widths))

        return self.record("concat_last_axis", tensors, out, bwd)

    def slice_row(self, a: Tensor, index: int) -> Tensor:
        ad = a.data
        if ad.ndim != 2:
            raise ShapeError(f"slice_row: expected a matrix, got shape {ad.shape}")
        if not 0 <= index < ad.shape[0]:
            raise ShapeError(f"slice_row: row {index} out of range for shape {ad.shape}")

        def bwd(g):
            z = np.zeros_like(ad)
            z[index] = g
            return (z,)

        return self.record("slice_row", (a,), ad[index], bwd)

    def slice_col(self, a: Tensor, index: int) -> Tensor:
        ad = a.data
        if ad.ndim != 2:
            raise ShapeError(f"slice_col: expected a matrix, got shape {ad.shape}")
        if not 0 <= index < ad.shape[1]:
            raise ShapeError(f"slice_col: column {index} out of range for shape {ad.shape}")

        def bwd(g):
            z = np.zeros_like(ad)
            z[:, index] = g
            return (z,)

        return self.record("slice_col", (a,), ad[:, index], bwd)

    def slice_range(self, a: Tensor, start: int, stop: int) -> Tensor:
        ad = a.data
        if ad.ndim != 1:
            raise ShapeError(f"slice_range: expected a vector, got shape {ad.shape}")
        if not 0 <= start < stop <= ad.shape[0]:
            raise ShapeError(f"slice_range: [{start}, {stop}) out of range for length {ad.shape[0]}")

        def bwd(g):
            z = np.zeros_like(ad)
            z[start:stop] = g
            return (z,)

        return self.record("slice_range", (a,), ad[start:stop], bwd)

    def pick(self, a: Tensor, row: int, col: int) -> Tensor:
        ad = a.data
        if ad.ndim != 2:
            raise ShapeError(f"pick: expected a matrix, got shape {ad.shape}")
        if not (0 <= row < ad.shape[0] and 0 <= col < ad.shape[1]):
            raise ShapeError(f"pick: entry ({row}, {col}) out of range for shape {ad.shape}")

        def bwd(g):
            z = np.zeros_like(ad)
            z[row, col] = g
            return (z,)

        return self.record("pick", (a,), np.asarray(ad[row, col]), bwd)

    def gather_rows(self, table: Tensor, ids) -> Tensor:
        td = table.data
        if td.ndim != 2:
            raise ShapeError(f"gather_rows: expected a matrix table, got shape {td.shape}")
        idx = np.asarray(ids, dtype=np.intp)
        if idx.ndim != 1 or idx.size == 0:
            raise ValueError("gather_rows: ids must be a non-empty sequence")
        if idx.min() < 0 or idx.max() >= td.shape[0]:
            raise ValueError(f"gather_rows: id out of range [0, {td.shape[0]}): {ids}")

        def bwd(g):
            z = np.zeros_like(td)
            np.add.at(z, idx, g)
            return (z,)

        return self.record("gather_rows", (table,), td[idx], bwd)

    def stack_rows(self, vectors) -> Tensor:
        vectors = tuple(vectors)
        if not vectors:
            raise ShapeError("stack_rows: needs at least one vector")
        width = vectors[0].data.shape
        if any(v.data.ndim != 1 or v.data.shape != width for v in vectors):
            raise ShapeError(
                "stack_rows: inputs must be equal-length vectors, got "
                + str([v.data.shape for v in vectors])
            )
        out = np.stack([v.data for v in vectors])

        def bwd(g):
            return tuple(g[k] for k in range(len(vectors)))

        return self.record("stack_rows", vectors, out, bwd)

    def stack_scalars(self, scalars) -> Tensor:
        scalars = tuple(scalars)
        if not scalars:
            raise ShapeError("stack_scalars: needs at least one scalar")
        if any(s.size != 1 for s in scalars):
            raise ShapeError("stack_scalars: inputs must be scalars")
        out = np.array([s.data.reshape(()) for s in scalars])

        def bwd(g):
            return tuple(np.asarray(g[k]) for k in range(len(scalars)))

        return self.record("stack_scalars", scalars, out, bwd)

    def transpose(self, a: Tensor) -> Tensor:
        ad = a.data
        if ad.ndim != 2:
            raise ShapeError(f"transpose: expected a matrix, got shape {ad.shape}")
        return self.record("transpose", (a,), ad.T, lambda g: (g.T,))


_OP_TABLE = {
    "add": (Graph.add, 2),
    "sub": (Graph.sub, 2),
    "mul_elementwise": (Graph.mul, 2),
    "matmul": (Graph.matmul, 2),
    "concat_last_axis": (Graph.concat, None),
    "tanh": (Graph.tanh, 1),
    "sigmoid": (Graph.sigmoid, 1),
    "relu_hinge": (Graph.relu_hinge, 1),
    "sum": (Graph.sum, 1),
    "scalar_mul": (Graph.scalar_mul, 1),
    "slice_row": (Graph.slice_row, 1),
    "slice_col": (Graph.slice_col, 1),
    "dot": (Graph.dot, 2),
}


def tensor_op(graph: Graph, kind: str, inputs, **kwargs) -> Tensor:
    """Apply a named primitive to ``inputs`` on ``graph``.

    Extra arguments (``scalar`` for scalar_mul, ``index`` for the slice
    kinds) pass through as keywords. Unknown kinds are rejected.
    """
    entry = _OP_TABLE.get(kind)
    if entry is None:
        raise ValueError(f"tensor_op: unknown op kind '{kind}'")
    method, arity = entry
    if arity is not None and len(inputs) != arity:
        raise ShapeError(f"tensor_op: '{kind}' takes {arity} inputs, got {len(inputs)}")
    return method(graph, *inputs, **kwargs)


def grad_check(function, params, epsilon: float = 1e-5) -> float:
    """Compare analytic gradients of ``function(params)`` against central differences.

    ``function`` must build a fresh graph on each call and return its scalar
    root; it must be deterministic given ``params`` (fix any RNG draws in the
    closure). Returns the max over all parameter entries of
    ``|analytic - fd| / max(1e-8, |analytic| + |fd|)``.
    """
    if epsilon <= 0:
        raise ValueError(f"grad_check: epsilon must be positive, got {epsilon}")
    for p in params:
        p.grad = None
    root = function(params)
    if root.node is None:
        raise ValueError("grad_check: function output was not produced by a graph")
    root.node.graph.backward(root)
    analytic = [
        np.zeros_like(p.data) if p.grad is None else np.array(p.grad) for p in params
    ]
    max_err = 0.0
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        aflat = analytic[pi].reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + epsilon
            f_plus = function(params).item()
            flat[idx] = orig - epsilon
            f_minus = function(params).item()
            flat[idx] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise ValueError(
                    f"grad_check: function is non-finite at a perturbation of "
                    f"parameter {pi}, entry {idx}"
                )
            fd = (f_plus - f_minus) / (2.0 * epsilon)
            err = abs(aflat[idx] - fd) / max(1e-8, abs(aflat[idx]) + abs(fd))
            if err > max_err:
                max_err = err
    return max_err
