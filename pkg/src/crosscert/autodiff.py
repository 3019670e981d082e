"""Minimal reverse-mode autodiff over matrix-level primitives.

A GradTape records the forward pass as a list of nodes in evaluation order,
which is already a topological order, so the backward sweep is a single
reversed loop. Only the handful of primitives the models need exist:
matmul, elementwise add/sub/mul, scalar scaling, row-broadcast bias,
group-wise sorting, softmax, fused softmax cross-entropy, full sum, and the
Cayley map from a raw square matrix to an orthogonal one.

Operands may be Node instances or plain ndarrays; plain arrays are treated
as constants and receive no gradient.
"""

from __future__ import annotations

import numpy as np

from . import linalg
from .errors import ShapeError


class Node:
    __slots__ = ("value", "parents", "vjp", "grad")

    def __init__(self, value, parents=(), vjp=None):
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.grad = None

    @property
    def shape(self):
        return np.shape(self.value)


def _val(x):
    return x.value if isinstance(x, Node) else x


def groupsort_forward(x: np.ndarray, group_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Sort within contiguous groups along the last axis.

    Returns the sorted array and the permutation indices needed to route
    gradients back. Stable sort keeps tie handling deterministic.
    """
    if group_size < 1:
        raise ShapeError(f"group size must be >= 1, got {group_size}")
    n = x.shape[-1]
    if n % group_size != 0:
        raise ShapeError(f"last dimension {n} not divisible by group size {group_size}")
    grouped = x.reshape(x.shape[:-1] + (n // group_size, group_size))
    idx = np.argsort(grouped, axis=-1, kind="stable")
    out = np.take_along_axis(grouped, idx, axis=-1)
    return out.reshape(x.shape), idx


class GradTape:
    """Recorder for one forward pass plus its reverse sweep."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.leaves: list[Node] = []

    def _record(self, value, parents, vjp) -> Node:
        node = Node(value, parents, vjp)
        self.nodes.append(node)
        return node

    def leaf(self, value: np.ndarray) -> Node:
        """Register a trainable parameter."""
        node = self._record(np.asarray(value, dtype=np.float64), (), None)
        self.leaves.append(node)
        return node

    def constant(self, value: np.ndarray) -> Node:
        """Record a value that participates in the graph but takes no gradient."""
        return self._record(np.asarray(value, dtype=np.float64), (), None)

    # ---- primitives ----

    def matmul(self, a, b) -> Node:
        av, bv = _val(a), _val(b)
        if av.shape[-1] != bv.shape[0]:
            raise ShapeError(f"cannot multiply {av.shape} by {bv.shape}: inner dims differ")
        out = av @ bv

        def vjp(g):
            pairs = []
            if isinstance(a, Node):
                pairs.append((a, g @ bv.T))
            if isinstance(b, Node):
                pairs.append((b, av.T @ g))
            return pairs

        return self._record(out, _parents(a, b), vjp)

    def add(self, a, b) -> Node:
        av, bv = _val(a), _val(b)

        def vjp(g):
            pairs = []
            if isinstance(a, Node):
                pairs.append((a, g))
            if isinstance(b, Node):
                pairs.append((b, g))
            return pairs

        return self._record(av + bv, _parents(a, b), vjp)

    def transpose(self, a: Node) -> Node:
        av = _val(a)

        def vjp(g):
            if not isinstance(a, Node):
                return []
            return [(a, g.T)]

        return self._record(av.T, _parents(a), vjp)

    def sub(self, a, b) -> Node:
        av, bv = _val(a), _val(b)

        def vjp(g):
            pairs = []
            if isinstance(a, Node):
                pairs.append((a, g))
            if isinstance(b, Node):
                pairs.append((b, -g))
            return pairs

        return self._record(av - bv, _parents(a, b), vjp)

    def mul(self, a, b) -> Node:
        av, bv = _val(a), _val(b)

        def vjp(g):
            pairs = []
            if isinstance(a, Node):
                pairs.append((a, g * bv))
            if isinstance(b, Node):
                pairs.append((b, g * av))
            return pairs

        return self._record(av * bv, _parents(a, b), vjp)

    def scale(self, a: Node, c: float) -> Node:
        c = float(c)
        return self._record(_val(a) * c, _parents(a), lambda g: [(a, g * c)] if isinstance(a, Node) else [])

    def add_row(self, a, bias) -> Node:
        """Add a 1-D bias row to every row of a 2-D activation."""
        av, bv = _val(a), _val(bias)
        if av.shape[-1] != bv.shape[-1]:
            raise ShapeError(f"bias length {bv.shape} does not match activations {av.shape}")

        def vjp(g):
            pairs = []
            if isinstance(a, Node):
                pairs.append((a, g))
            if isinstance(bias, Node):
                pairs.append((bias, g.sum(axis=0)))
            return pairs

        return self._record(av + bv, _parents(a, bias), vjp)

    def group_sort(self, a: Node, group_size: int) -> Node:
        av = _val(a)
        out, idx = groupsort_forward(av, group_size)
        n = av.shape[-1]
        grouped_shape = av.shape[:-1] + (n // group_size, group_size)

        def vjp(g):
            if not isinstance(a, Node):
                return []
            back = np.empty(grouped_shape)
            np.put_along_axis(back, idx, g.reshape(grouped_shape), axis=-1)
            return [(a, back.reshape(av.shape))]

        return self._record(out, _parents(a), vjp)

    def softmax(self, a: Node) -> Node:
        av = _val(a)
        shifted = av - av.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        p = e / e.sum(axis=-1, keepdims=True)

        def vjp(g):
            if not isinstance(a, Node):
                return []
            inner = (g * p).sum(axis=-1, keepdims=True)
            return [(a, p * (g - inner))]

        return self._record(p, _parents(a), vjp)

    def softmax_cross_entropy(self, logits: Node, onehot: np.ndarray) -> Node:
        """Mean softmax cross-entropy of a logit batch against one-hot rows."""
        lv = _val(logits)
        y = np.asarray(onehot, dtype=np.float64)
        if lv.shape != y.shape:
            raise ShapeError(f"logits {lv.shape} and targets {y.shape} differ")
        m = lv.max(axis=-1, keepdims=True)
        lse = m + np.log(np.exp(lv - m).sum(axis=-1, keepdims=True))
        batch = lv.shape[0]
        loss = float((lse.ravel() - (lv * y).sum(axis=-1)).sum() / batch)
        p = np.exp(lv - lse)

        def vjp(g):
            if not isinstance(logits, Node):
                return []
            return [(logits, (g / batch) * (p - y))]

        return self._record(loss, _parents(logits), vjp)

    def sum_all(self, a: Node) -> Node:
        av = _val(a)

        def vjp(g):
            if not isinstance(a, Node):
                return []
            return [(a, np.full(av.shape, g))]

        return self._record(float(np.sum(av)), _parents(a), vjp)

    def cayley(self, raw: Node) -> Node:
        """Orthogonal matrix from an unconstrained square parameter."""
        rv = _val(raw)
        a = linalg.skew_part(rv)
        w = linalg.cayley_orthogonal(a)

        def vjp(g):
            if not isinstance(raw, Node):
                return []
            a_bar = linalg.cayley_vjp(a, w, g)
            return [(raw, 0.5 * (a_bar - a_bar.T))]

        return self._record(w, _parents(raw), vjp)


def _parents(*ops) -> tuple:
    return tuple(op for op in ops if isinstance(op, Node))


def backward(tape: GradTape, loss: Node) -> dict[int, np.ndarray]:
    """Reverse sweep from a scalar loss node.

    Populates .grad on every node reachable from the loss and returns a map
    from id(leaf) to the leaf's gradient array (zeros if unreachable).
    """
    if np.shape(loss.value) != ():
        raise ShapeError(f"backward needs a scalar loss, got shape {np.shape(loss.value)}")
    for node in tape.nodes:
        node.grad = None
    loss.grad = 1.0
    for node in reversed(tape.nodes):
        if node.grad is None or node.vjp is None:
            continue
        for parent, contribution in node.vjp(node.grad):
            if parent.grad is None:
                parent.grad = np.array(contribution, dtype=np.float64)
            else:
                parent.grad = parent.grad + contribution
    return {id(leaf): (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value))
            for leaf in tape.leaves}
