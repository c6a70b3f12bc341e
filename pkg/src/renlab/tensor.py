"""Dense rank-<=2 float64 tensors with tape-based reverse-mode autodiff.

Everything is define-by-run: each operation appends one node to a Graph and
``Graph.backward`` walks the tape in exact reverse construction order, so a
given graph always produces bitwise-identical gradients.  The op set is the
minimum needed for small MLPs and the adversarial / consistency losses built
on top of them, plus ``grad_reverse`` which turns the discriminator's
maximization into a single minimization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .exceptions import ContractError, NonFiniteError, ShapeError


def as_matrix(values) -> np.ndarray:
    """Coerce scalar / 1-D / 2-D input to a C-contiguous float64 matrix.

    1-D input becomes a single row; rank > 2 is rejected.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim > 2:
        raise ShapeError(f"rank-{arr.ndim} input not supported (rank <= 2 only)")
    return np.ascontiguousarray(arr)


def stable_softmax(arr: np.ndarray) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction (overflow safe)."""
    shifted = arr - arr.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


class Tensor:
    """A 2-D float64 array, optionally attached to a graph node.

    Values are treated as immutable once the tensor sits on a graph; ops
    always allocate fresh output arrays.
    """

    __slots__ = ("values", "graph", "node_id")

    def __init__(self, values, graph: "Graph | None" = None, node_id: int | None = None):
        arr = as_matrix(values)
        if arr.size and not np.isfinite(arr).all():
            raise NonFiniteError("tensor contains NaN or infinity")
        self.values = arr
        self.graph = graph
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def grad(self) -> np.ndarray | None:
        """Gradient buffer populated by the last backward pass (or None)."""
        if self.graph is None or self.node_id is None:
            return None
        return self.graph.nodes[self.node_id].grad

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.values[0, 0])

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, graph={'yes' if self.graph else 'no'})"


class Node:
    """One operation record on the tape."""

    __slots__ = ("op", "input_ids", "tensor", "backward_fn", "is_param", "name", "grad")

    def __init__(self, op, input_ids, tensor, backward_fn, is_param=False, name=None):
        self.op = op
        self.input_ids = input_ids
        self.tensor = tensor
        self.backward_fn = backward_fn
        self.is_param = is_param
        self.name = name
        self.grad: np.ndarray | None = None


class Graph:
    """Tape of operation records in construction order.

    Every node's inputs precede it by construction; the backward pass visits
    nodes in exact reverse construction order.  A graph must only ever be
    mutated from a single thread.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def _record(self, op, input_ids, values, backward_fn, is_param=False, name=None) -> Tensor:
        arr = as_matrix(values)
        if arr.size and not np.isfinite(arr).all():
            raise NonFiniteError(f"op '{op}' produced NaN or infinity")
        t = Tensor.__new__(Tensor)
        t.values = arr
        t.graph = self
        t.node_id = len(self.nodes)
        self.nodes.append(Node(op, input_ids, t, backward_fn, is_param, name))
        return t

    def parameter(self, values, name: str) -> Tensor:
        """Register a trainable leaf; backward will populate its gradient."""
        return self._record("param", (), values, None, is_param=True, name=name)

    def constant(self, values) -> Tensor:
        """Register a non-trainable leaf; gradients are not tracked for it."""
        return self._record("const", (), values, None)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [(n.name, n.tensor) for n in self.nodes if n.is_param]

    def _accumulate(self, node_id: int, delta: np.ndarray) -> None:
        node = self.nodes[node_id]
        if node.op == "const":
            return  # non-parameter leaves are skipped
        if node.grad is None:
            node.grad = np.zeros_like(node.tensor.values)
        node.grad += delta

    def backward(self, loss: Tensor) -> None:
        """Reverse-mode sweep from a scalar loss node.

        Populates gradients for every parameter leaf (zeros if the loss does
        not depend on it).
        """
        if loss.graph is not self:
            raise ContractError("loss tensor does not belong to this graph")
        if loss.shape != (1, 1):
            raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
        for node in self.nodes:
            node.grad = None
        self.nodes[loss.node_id].grad = np.ones((1, 1))
        for node in reversed(self.nodes[: loss.node_id + 1]):
            if node.grad is None or node.backward_fn is None:
                continue
            node.backward_fn(node.grad)
        for node in self.nodes:
            if node.is_param and node.grad is None:
                node.grad = np.zeros_like(node.tensor.values)


def _graph_of(*tensors: Tensor) -> Graph:
    graph = tensors[0].graph
    if graph is None:
        raise ContractError("operation requires tensors attached to a graph")
    for t in tensors[1:]:
        if t.graph is not graph:
            raise ContractError("operands belong to different graphs")
    return graph


# ---------------------------------------------------------------------------
# primitive operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; gradients d(a) = g @ b^T, d(b) = a^T @ g."""
    g = _graph_of(a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not chain")
    av, bv = a.values, b.values
    aid, bid = a.node_id, b.node_id

    def backward(grad):
        g._accumulate(aid, grad @ bv.T)
        g._accumulate(bid, av.T @ grad)

    return g._record("matmul", (aid, bid), av @ bv, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; b may be a 1xN row broadcast over a's rows (bias)."""
    g = _graph_of(a, b)
    broadcast = b.shape != a.shape
    if broadcast and not (b.shape == (1, a.shape[1])):
        raise ShapeError(f"add shapes {a.shape} and {b.shape} incompatible")
    aid, bid = a.node_id, b.node_id

    def backward(grad):
        g._accumulate(aid, grad)
        g._accumulate(bid, grad.sum(axis=0, keepdims=True) if broadcast else grad)

    return g._record("add", (aid, bid), a.values + b.values, backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    g = _graph_of(a, b)
    broadcast = b.shape != a.shape
    if broadcast and not (b.shape == (1, a.shape[1])):
        raise ShapeError(f"sub shapes {a.shape} and {b.shape} incompatible")
    aid, bid = a.node_id, b.node_id

    def backward(grad):
        g._accumulate(aid, grad)
        g._accumulate(bid, -(grad.sum(axis=0, keepdims=True) if broadcast else grad))

    return g._record("sub", (aid, bid), a.values - b.values, backward)


def scale(x: Tensor, c: float) -> Tensor:
    g = _graph_of(x)
    c = float(c)
    xid = x.node_id

    def backward(grad):
        g._accumulate(xid, c * grad)

    return g._record("scale", (xid,), c * x.values, backward)


def neg(x: Tensor) -> Tensor:
    return scale(x, -1.0)


def rsub_const(c: float, x: Tensor) -> Tensor:
    """c - x for a python scalar c."""
    g = _graph_of(x)
    xid = x.node_id

    def backward(grad):
        g._accumulate(xid, -grad)

    return g._record("rsub_const", (xid,), float(c) - x.values, backward)


def square(x: Tensor) -> Tensor:
    g = _graph_of(x)
    xid, xv = x.node_id, x.values

    def backward(grad):
        g._accumulate(xid, 2.0 * xv * grad)

    return g._record("square", (xid,), xv * xv, backward)


def sqrt(x: Tensor) -> Tensor:
    """Elementwise square root; subgradient at exactly 0 is defined as 0."""
    g = _graph_of(x)
    out = np.sqrt(x.values)
    xid = x.node_id

    def backward(grad):
        d = np.zeros_like(out)
        nz = out > 0
        d[nz] = grad[nz] * 0.5 / out[nz]
        g._accumulate(xid, d)

    return g._record("sqrt", (xid,), out, backward)


def log(x: Tensor) -> Tensor:
    g = _graph_of(x)
    xid, xv = x.node_id, x.values

    def backward(grad):
        g._accumulate(xid, grad / xv)

    return g._record("log", (xid,), np.log(x.values), backward)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); subgradient at exactly 0 is defined as 0."""
    g = _graph_of(x)
    xid = x.node_id
    mask = x.values > 0

    def backward(grad):
        g._accumulate(xid, grad * mask)

    return g._record("relu", (xid,), np.maximum(x.values, 0.0), backward)


def sigmoid(x: Tensor) -> Tensor:
    g = _graph_of(x)
    v = x.values
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    xid = x.node_id

    def backward(grad):
        g._accumulate(xid, grad * out * (1.0 - out))

    return g._record("sigmoid", (xid,), out, backward)


def clamp(x: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip to [lo, hi]; gradient passes only where strictly inside."""
    g = _graph_of(x)
    v = x.values
    mask = np.ones(v.shape, dtype=bool)
    if lo is not None:
        mask &= v > lo
    if hi is not None:
        mask &= v < hi
    xid = x.node_id

    def backward(grad):
        g._accumulate(xid, grad * mask)

    return g._record("clamp", (xid,), np.clip(v, lo, hi), backward)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax; rows sum to 1 within 1e-12 for any finite input."""
    g = _graph_of(x)
    if x.shape[1] < 1:
        raise ShapeError("softmax_rows requires at least one column")
    p = stable_softmax(x.values)
    xid = x.node_id

    def backward(grad):
        inner = (grad * p).sum(axis=1, keepdims=True)
        g._accumulate(xid, p * (grad - inner))

    return g._record("softmax_rows", (xid,), p, backward)


def grad_reverse(x: Tensor, lam: float) -> Tensor:
    """Identity forward; backward multiplies the incoming gradient by -lam."""
    lam = float(lam)
    if lam < 0:
        raise ContractError(f"grad_reverse factor must be >= 0, got {lam}")
    g = _graph_of(x)
    xid = x.node_id

    def backward(grad):
        g._accumulate(xid, -lam * grad)

    return g._record("grad_reverse", (xid,), x.values.copy(), backward)


def gather_rows(p: Tensor, labels) -> Tensor:
    """Pick one entry per row: out[i, 0] = p[i, labels[i]]."""
    g = _graph_of(p)
    idx = np.asarray(labels, dtype=np.int64).reshape(-1)
    m, c = p.shape
    if idx.shape[0] != m:
        raise ShapeError(f"{idx.shape[0]} labels for {m} rows")
    if m and (idx.min() < 0 or idx.max() >= c):
        raise ContractError(f"label out of range [0, {c})")
    rows = np.arange(m)
    pid = p.node_id

    def backward(grad):
        buf = np.zeros((m, c))
        np.add.at(buf, (rows, idx), grad[:, 0])
        g._accumulate(pid, buf)

    return g._record("gather_rows", (pid,), p.values[rows, idx].reshape(m, 1), backward)


def sum_all(x: Tensor) -> Tensor:
    g = _graph_of(x)
    xid, shape = x.node_id, x.shape

    def backward(grad):
        g._accumulate(xid, np.full(shape, grad[0, 0]))

    return g._record("sum_all", (xid,), [[x.values.sum()]], backward)


def mean_all(x: Tensor) -> Tensor:
    g = _graph_of(x)
    n = x.values.size
    if n == 0:
        raise ContractError("mean over an empty tensor")
    xid, shape = x.node_id, x.shape

    def backward(grad):
        g._accumulate(xid, np.full(shape, grad[0, 0] / n))

    return g._record("mean_all", (xid,), [[x.values.mean()]], backward)


def sum_rows(x: Tensor) -> Tensor:
    """Per-row sum, shape m x 1."""
    g = _graph_of(x)
    xid, shape = x.node_id, x.shape

    def backward(grad):
        g._accumulate(xid, np.broadcast_to(grad, shape).copy())

    return g._record("sum_rows", (xid,), x.values.sum(axis=1, keepdims=True), backward)


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    g = _graph_of(a, b)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"concat_rows widths differ: {a.shape} vs {b.shape}")
    ma = a.shape[0]
    aid, bid = a.node_id, b.node_id

    def backward(grad):
        g._accumulate(aid, grad[:ma])
        g._accumulate(bid, grad[ma:])

    return g._record("concat_rows", (aid, bid), np.vstack([a.values, b.values]), backward)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    g = _graph_of(x)
    m, n = x.shape
    if not (0 <= start <= stop <= m):
        raise ShapeError(f"row slice [{start}:{stop}] out of bounds for {m} rows")
    xid = x.node_id

    def backward(grad):
        buf = np.zeros((m, n))
        buf[start:stop] = grad
        g._accumulate(xid, buf)

    return g._record("slice_rows", (xid,), x.values[start:stop].copy(), backward)


def multilinear(f: Tensor, p: Tensor) -> Tensor:
    """Row-wise flattened outer product: out[i, j*c + k] = f[i, j] * p[i, k]."""
    g = _graph_of(f, p)
    if f.shape[0] != p.shape[0]:
        raise ShapeError(f"batch sizes differ: {f.shape} vs {p.shape}")
    m, d = f.shape
    c = p.shape[1]
    fv, pv = f.values, p.values
    fid, pid = f.node_id, p.node_id
    out = np.einsum("ij,ik->ijk", fv, pv).reshape(m, d * c)

    def backward(grad):
        cube = grad.reshape(m, d, c)
        g._accumulate(fid, np.einsum("ijk,ik->ij", cube, pv))
        g._accumulate(pid, np.einsum("ijk,ij->ik", cube, fv))

    return g._record("multilinear", (fid, pid), out, backward)


# ---------------------------------------------------------------------------
# finite-difference verification oracle


@dataclass
class GradCheckReport:
    """Worst-case comparison of analytic gradients against central differences."""

    max_rel_error: float
    worst_param: str
    worst_index: tuple[int, int]
    per_param: dict[str, float]
    h: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def _rel_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1.0)


def finite_diff_check(
    loss_fn: Callable[[], tuple[float, Mapping[str, np.ndarray]]],
    params: Mapping[str, np.ndarray],
    h: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients with (L(t+h) - L(t-h)) / 2h per entry.

    ``loss_fn`` must re-read the arrays in ``params`` on every call and
    return ``(loss, grads)`` with one gradient array per parameter name.
    The arrays are perturbed in place and restored before returning.
    """
    if h <= 0:
        raise ContractError(f"finite difference step must be positive, got {h}")
    _, grads = loss_fn()
    worst = 0.0
    worst_param = ""
    worst_index = (0, 0)
    per_param: dict[str, float] = {}
    for name, arr in params.items():
        analytic = grads[name]
        local_worst = 0.0
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            lp, _ = loss_fn()
            arr[idx] = orig - h
            lm, _ = loss_fn()
            arr[idx] = orig
            numeric = (lp - lm) / (2.0 * h)
            rel = _rel_error(float(analytic[idx]), numeric)
            if rel > local_worst:
                local_worst = rel
            if rel > worst:
                worst, worst_param, worst_index = rel, name, idx
        per_param[name] = local_worst
    return GradCheckReport(worst, worst_param, worst_index, per_param, h, tol)
