"""Scalar reverse-mode automatic differentiation with gradient-scale hooks.

Every value on a :class:`Tape` is a :class:`Node`.  Nodes are appended in
evaluation order, so the arena order is a valid topological order and the
backward sweep simply walks it in reverse.

A node may carry a multiplicative ``grad_scale``.  When the backward sweep
reaches such a node, the adjoint it has accumulated is multiplied by the
scale before being handed to its parents.  This is how the depth kernel
re-weights the gradients of density and colour samples without touching the
forward pass.

Example::

    tape = Tape()
    x = tape.variable(2.0)
    y = tape.apply("mul", x, x)
    grads = tape.backward(y)      # x.grad == 4.0
"""
from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

DIV_EPS = 1e-300


class DomainError(ValueError):
    """An op was evaluated outside its mathematical domain."""


class BackwardError(ArithmeticError):
    """A non-finite adjoint appeared during the backward sweep."""


def _softplus(x: float) -> float:
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _check_log(a):
    if not a[0] > 0:
        raise DomainError(f"log of non-positive value {a[0]!r}")


def _check_div(a):
    if not abs(a[1]) >= DIV_EPS:
        raise DomainError(f"division by {a[1]!r}")


def _check_sqrt(a):
    if not a[0] >= 0:
        raise DomainError(f"sqrt of negative value {a[0]!r}")


# kind -> (arity, forward(values, *extra), local_derivative(values, out, *extra))
# ``extra`` carries non-differentiable constants (clamp bounds).
FORWARD: dict[str, Callable] = {
    "add": lambda a: a[0] + a[1],
    "sub": lambda a: a[0] - a[1],
    "mul": lambda a: a[0] * a[1],
    "div": lambda a: a[0] / a[1],
    "neg": lambda a: -a[0],
    "exp": lambda a: math.exp(a[0]),
    "log": lambda a: math.log(a[0]),
    "pow2": lambda a: a[0] * a[0],
    "sqrt": lambda a: math.sqrt(a[0]),
    "min": lambda a: a[0] if a[0] <= a[1] else a[1],
    "max": lambda a: a[0] if a[0] >= a[1] else a[1],
    "clamp": lambda a, lo, hi: min(max(a[0], lo), hi),
    "softplus": lambda a: _softplus(a[0]),
    "sigmoid": lambda a: _sigmoid(a[0]),
    "tanh": lambda a: math.tanh(a[0]),
}

DERIVATIVE: dict[str, Callable] = {
    "add": lambda a, y: (1.0, 1.0),
    "sub": lambda a, y: (1.0, -1.0),
    "mul": lambda a, y: (a[1], a[0]),
    "div": lambda a, y: (1.0 / a[1], -a[0] / (a[1] * a[1])),
    "neg": lambda a, y: (-1.0,),
    "exp": lambda a, y: (y,),
    "log": lambda a, y: (1.0 / a[0],),
    "pow2": lambda a, y: (2.0 * a[0],),
    "sqrt": lambda a, y: (0.5 / y if y > 0 else math.inf,),
    "min": lambda a, y: (1.0, 0.0) if a[0] <= a[1] else (0.0, 1.0),
    "max": lambda a, y: (1.0, 0.0) if a[0] >= a[1] else (0.0, 1.0),
    "clamp": lambda a, y, lo, hi: (1.0 if lo < a[0] < hi else 0.0,),
    "softplus": lambda a, y: (_sigmoid(a[0]),),
    "sigmoid": lambda a, y: (y * (1.0 - y),),
    "tanh": lambda a, y: (1.0 - y * y,),
}

ARITY = {k: 2 if k in ("add", "sub", "mul", "div", "min", "max") else 1 for k in FORWARD}

_DOMAIN_CHECKS = {"log": _check_log, "div": _check_div, "sqrt": _check_sqrt}


class Node:
    """One scalar on a tape."""

    __slots__ = ("tape", "index", "value", "grad", "kind", "parents", "partials", "grad_scale")

    def __init__(self, tape, index, value, kind, parents=(), partials=()):
        self.tape = tape
        self.index = index
        self.value = value
        self.grad = 0.0
        self.kind = kind
        self.parents = parents
        self.partials = partials
        self.grad_scale = 1.0

    def __repr__(self):
        return f"Node(#{self.index} {self.kind} value={self.value!r} grad={self.grad!r})"

    def _lift(self, other):
        return other if isinstance(other, Node) else self.tape.constant(other)

    def __add__(self, other):
        return self.tape.apply("add", self, self._lift(other))

    def __radd__(self, other):
        return self.tape.apply("add", self._lift(other), self)

    def __sub__(self, other):
        return self.tape.apply("sub", self, self._lift(other))

    def __rsub__(self, other):
        return self.tape.apply("sub", self._lift(other), self)

    def __mul__(self, other):
        return self.tape.apply("mul", self, self._lift(other))

    def __rmul__(self, other):
        return self.tape.apply("mul", self._lift(other), self)

    def __truediv__(self, other):
        return self.tape.apply("div", self, self._lift(other))

    def __rtruediv__(self, other):
        return self.tape.apply("div", self._lift(other), self)

    def __neg__(self):
        return self.tape.apply("neg", self)


class ParameterBuffer:
    """A flat float64 parameter array whose entries become leaves on demand."""

    def __init__(self, tape: "Tape", name: str, values: np.ndarray):
        self.tape = tape
        self.name = name
        self.values = np.asarray(values, dtype=np.float64)
        self._leaves: dict[int, Node] = {}

    def __getitem__(self, index) -> Node:
        flat = int(np.ravel_multi_index(index, self.values.shape)) if isinstance(index, tuple) else int(index)
        leaf = self._leaves.get(flat)
        if leaf is None:
            leaf = self.tape._push(float(self.values.flat[flat]), "leaf")
            self._leaves[flat] = leaf
        return leaf

    def gradient(self) -> np.ndarray:
        out = np.zeros(self.values.size, dtype=np.float64)
        for flat, leaf in self._leaves.items():
            out[flat] = leaf.grad
        return out.reshape(self.values.shape)


class Tape:
    """Append-only arena of scalar nodes."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.buffers: dict[str, ParameterBuffer] = {}
        self._swept = False

    def __len__(self):
        return len(self.nodes)

    def _push(self, value, kind, parents=(), partials=()):
        node = Node(self, len(self.nodes), value, kind, parents, partials)
        self.nodes.append(node)
        return node

    def constant(self, value: float) -> Node:
        return self._push(float(value), "const")

    def variable(self, value: float) -> Node:
        return self._push(float(value), "leaf")

    def parameters(self, name: str, values: np.ndarray) -> ParameterBuffer:
        if name in self.buffers:
            raise ValueError(f"parameter buffer {name!r} already registered")
        buf = ParameterBuffer(self, name, values)
        self.buffers[name] = buf
        return buf

    def apply(self, kind: str, *inputs: Node, lo: float | None = None, hi: float | None = None) -> Node:
        """Evaluate ``kind`` on ``inputs`` and record the local derivatives."""
        if kind not in FORWARD:
            raise ValueError(f"unknown op {kind!r}")
        if len(inputs) != ARITY[kind]:
            raise ValueError(f"{kind} takes {ARITY[kind]} inputs, got {len(inputs)}")
        for node in inputs:
            if node.tape is not self:
                raise ValueError("inputs live on a different tape")
        args = tuple(n.value for n in inputs)
        check = _DOMAIN_CHECKS.get(kind)
        if check is not None:
            check(args)
        extra = ()
        if kind == "clamp":
            if lo is None or hi is None or lo > hi:
                raise ValueError("clamp needs bounds lo <= hi")
            extra = (lo, hi)
        try:
            out = FORWARD[kind](args, *extra)
        except OverflowError as exc:
            raise DomainError(f"{kind} overflowed at {args!r}") from exc
        if not math.isfinite(out):
            raise DomainError(f"{kind}{args!r} is not finite")
        partials = DERIVATIVE[kind](args, out, *extra)
        return self._push(out, kind, inputs, partials)

    def sum(self, nodes: Iterable[Node]) -> Node:
        nodes = list(nodes)
        if not nodes:
            return self.constant(0.0)
        acc = nodes[0]
        for n in nodes[1:]:
            acc = self.apply("add", acc, n)
        return acc

    def dot(self, weights: Sequence[Node], inputs: Sequence[Node]) -> Node:
        return self.sum(self.apply("mul", w, x) for w, x in zip(weights, inputs))

    def backward(self, root: Node) -> dict[str, np.ndarray]:
        """Sweep adjoints from ``root`` to every leaf.

        Returns the gradient of each registered parameter buffer; individual
        nodes keep their (scaled) adjoint in ``node.grad``.
        """
        if root.tape is not self:
            raise ValueError("root lives on a different tape")
        if self._swept:
            raise RuntimeError("backward already ran on this tape")
        self._swept = True
        for node in self.nodes:
            node.grad = 0.0
        root.grad = 1.0
        nodes = self.nodes
        for i in range(root.index, -1, -1):
            node = nodes[i]
            adj = node.grad
            if adj == 0.0:
                continue
            if node.grad_scale != 1.0:
                adj = adj * node.grad_scale
                node.grad = adj
            if not math.isfinite(adj):
                raise BackwardError(f"non-finite adjoint {adj!r} at node {i} ({node.kind})")
            for parent, partial in zip(node.parents, node.partials):
                parent.grad += adj * partial
        return {name: buf.gradient() for name, buf in self.buffers.items()}


def set_grad_scale(node: Node, factor: float) -> None:
    """Multiply the adjoint leaving ``node`` by ``factor`` during backward."""
    factor = float(factor)
    if not (math.isfinite(factor) and factor > 0):
        raise ValueError(f"grad scale must be positive and finite, got {factor!r}")
    if node.tape._swept:
        raise RuntimeError("cannot hook a node after backward has run")
    node.grad_scale = factor


def merge_gradients(chunks: Sequence[dict[str, np.ndarray]]) -> dict[str, np.ndarray]:
    """Sum per-chunk gradient buffers in the given (fixed) chunk order."""
    merged: dict[str, np.ndarray] = {}
    for chunk in chunks:
        for name, grad in chunk.items():
            if name in merged:
                merged[name] = merged[name] + grad
            else:
                merged[name] = np.array(grad, dtype=np.float64, copy=True)
    return merged
