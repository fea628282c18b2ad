"""Reverse-mode differentiation over a dynamic tape of dense float64 matrices.

A :class:`Graph` is rebuilt for every training step: leaves (``param`` /
``const``) are appended first, operation nodes after, so the tape is acyclic
by construction and the backward pass is a single reverse sweep over the node
list.  Values are plain 2-D ``numpy`` arrays in row-major order; scalars are
1x1 matrices.

Supported operations: matrix multiply, add / subtract (with broadcast of a
1xC row over rows), element-wise LeakyReLU and square, full-matrix mean and
sum, multiplication by a Python scalar, and the quadratic form
``sum_j r_j^T K r_j`` over the columns of a matrix.
"""

from __future__ import annotations

import numpy as np


class GraphError(RuntimeError):
    """Raised on malformed tapes: shape mismatches, unknown op-kinds, non-scalar loss."""


class Node:
    __slots__ = ("op", "inputs", "value", "adjoint", "payload")

    def __init__(self, op: str, inputs: tuple, value: np.ndarray, payload=None):
        self.op = op
        self.inputs = inputs
        self.value = value
        self.adjoint: np.ndarray | None = None
        self.payload = payload

    def __repr__(self) -> str:  # pragma: no cover
        return f"Node({self.op}, shape={self.value.shape})"


def _as_matrix(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 2:
        raise GraphError(f"graph values must be 2-D matrices, got shape {arr.shape}")
    return arr


class Graph:
    """Append-only computation tape."""

    def __init__(self):
        self.nodes: list[Node] = []

    def _push(self, node: Node) -> Node:
        self.nodes.append(node)
        return node

    # ---- leaves ----

    def param(self, value) -> Node:
        return self._push(Node("param", (), _as_matrix(value)))

    def constant(self, value) -> Node:
        return self._push(Node("const", (), _as_matrix(value)))

    # ---- operations ----

    def matmul(self, a: Node, b: Node) -> Node:
        if a.value.shape[1] != b.value.shape[0]:
            raise GraphError(f"matmul shape mismatch: {a.value.shape} @ {b.value.shape}")
        return self._push(Node("matmul", (a, b), a.value @ b.value))

    def _addlike(self, op: str, a: Node, b: Node, sign: float) -> Node:
        if b.value.shape != a.value.shape and b.value.shape != (1, a.value.shape[1]):
            raise GraphError(f"{op} shape mismatch: {a.value.shape} vs {b.value.shape}")
        return self._push(Node(op, (a, b), a.value + sign * b.value))

    def add(self, a: Node, b: Node) -> Node:
        """a + b, where b may be a 1xC row broadcast over the rows of a."""
        return self._addlike("add", a, b, 1.0)

    def sub(self, a: Node, b: Node) -> Node:
        return self._addlike("sub", a, b, -1.0)

    def leaky_relu(self, a: Node, slope: float = 0.01) -> Node:
        return self._push(Node("lrelu", (a,), np.where(a.value > 0.0, a.value, slope * a.value), slope))

    def square(self, a: Node) -> Node:
        return self._push(Node("square", (a,), a.value * a.value))

    def mean(self, a: Node) -> Node:
        return self._push(Node("mean", (a,), np.array([[a.value.mean()]])))

    def sum(self, a: Node) -> Node:
        return self._push(Node("sum", (a,), np.array([[a.value.sum()]])))

    def smul(self, c: float, a: Node) -> Node:
        return self._push(Node("smul", (a,), float(c) * a.value, float(c)))

    def quad_form(self, r: Node, kernel: np.ndarray) -> Node:
        """sum over columns j of r[:, j]^T @ kernel @ r[:, j], as a 1x1 node."""
        kernel = np.asarray(kernel, dtype=np.float64)
        n = r.value.shape[0]
        if kernel.shape != (n, n):
            raise GraphError(f"quad_form kernel shape {kernel.shape} incompatible with {r.value.shape}")
        kr = kernel @ r.value
        return self._push(Node("quad", (r,), np.array([[float(np.sum(r.value * kr))]]), kernel))

    # ---- reverse sweep ----

    def backward(self, loss: Node) -> None:
        """Populate ``adjoint`` with d(loss)/d(node) for every node feeding ``loss``."""
        if loss.value.shape != (1, 1):
            raise GraphError(f"loss node must hold a 1x1 value, got shape {loss.value.shape}")
        for node in self.nodes:
            node.adjoint = None
        loss.adjoint = np.ones((1, 1))
        for node in reversed(self.nodes):
            if node.adjoint is None or not node.inputs:
                continue
            vjp = _VJP.get(node.op)
            if vjp is None:
                raise GraphError(f"unknown op-kind: {node.op!r}")
            for inp, grad in zip(node.inputs, vjp(node)):
                if grad is None or inp.op == "const":
                    continue
                inp.adjoint = grad if inp.adjoint is None else inp.adjoint + grad


def _vjp_matmul(node: Node):
    a, b = node.inputs
    g = node.adjoint
    ga = None if a.op == "const" else g @ b.value.T
    gb = None if b.op == "const" else a.value.T @ g
    return ga, gb


def _vjp_addlike(sign: float):
    def vjp(node: Node):
        a, b = node.inputs
        g = node.adjoint
        gb = g if b.value.shape == g.shape else g.sum(axis=0, keepdims=True)
        return g, sign * gb

    return vjp


def _vjp_lrelu(node: Node):
    (a,) = node.inputs
    return (node.adjoint * np.where(a.value > 0.0, 1.0, node.payload),)


def _vjp_square(node: Node):
    (a,) = node.inputs
    return (2.0 * a.value * node.adjoint,)


def _vjp_mean(node: Node):
    (a,) = node.inputs
    return (np.full(a.value.shape, node.adjoint[0, 0] / a.value.size),)


def _vjp_sum(node: Node):
    (a,) = node.inputs
    return (np.full(a.value.shape, node.adjoint[0, 0]),)


def _vjp_smul(node: Node):
    return (node.payload * node.adjoint,)


def _vjp_quad(node: Node):
    (r,) = node.inputs
    kernel = node.payload
    # exact for non-symmetric kernels too; kernel matrices in practice are symmetric
    return (node.adjoint[0, 0] * ((kernel + kernel.T) @ r.value),)


_VJP = {
    "matmul": _vjp_matmul,
    "add": _vjp_addlike(1.0),
    "sub": _vjp_addlike(-1.0),
    "lrelu": _vjp_lrelu,
    "square": _vjp_square,
    "mean": _vjp_mean,
    "sum": _vjp_sum,
    "smul": _vjp_smul,
    "quad": _vjp_quad,
}
