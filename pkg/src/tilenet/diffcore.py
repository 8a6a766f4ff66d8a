"""Dense float64 tensors with an explicit reverse-mode tape and Adam.

Only the handful of primitives needed by the sinusoidal networks are
provided. Binary operations require identical shapes; the only implicit
broadcast is multiplication by a Python scalar (``scale``). Row vectors such
as biases are broadcast over a batch with ``matmul(ones, b)``.

A ``Tape`` built with ``record=False`` evaluates the same expressions without
storing anything, which is how networks are evaluated outside of training.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class TapeError(RuntimeError):
    """A tape was used against its contract (e.g. non-scalar loss)."""


class Tensor:
    """A float64 array plus autodiff bookkeeping.

    ``node`` and ``tape`` are set only on tensors produced by a recording tape.
    Leaf tensors with ``requires_grad`` are registered lazily on first use.
    """

    __slots__ = ("data", "requires_grad", "node", "tape", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.node: int | None = None
        self.tape: Tape | None = None
        self.name = name

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = False
        t.node = None
        t.tape = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"


@dataclass
class Node:
    op: str
    inputs: tuple[int | None, ...]
    saved: tuple = ()
    shape: tuple[int, ...] = ()


def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


class Tape:
    """Append-only record of primitive applications.

    Node ids are list indices, so every node's inputs precede it. Running a
    forward pass twice on one tape just appends a second, independent range.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self.nodes: list[Node] = []
        self._leaf_ids: dict[int, int] = {}
        self._leaves: list[Tensor] = []

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def leaves(self) -> list[Tensor]:
        return list(self._leaves)

    # -- bookkeeping ---------------------------------------------------------

    def _ref(self, t: Tensor) -> int | None:
        if t.tape is self and t.node is not None:
            return t.node
        if t.tape is not None and t.node is not None:
            raise TapeError("tensor belongs to a different tape")
        if not t.requires_grad:
            return None
        key = id(t)
        if key not in self._leaf_ids:
            self._leaf_ids[key] = len(self.nodes)
            self._leaves.append(t)
            self.nodes.append(Node("leaf", (), (), t.shape))
        return self._leaf_ids[key]

    def _emit(self, op: str, data: np.ndarray, inputs: Iterable[Tensor], saved=()) -> Tensor:
        out = Tensor._wrap(data)
        if not self.record:
            return out
        ids = tuple(self._ref(t) for t in inputs)
        if all(i is None for i in ids):
            return out
        out.requires_grad = True
        out.tape = self
        out.node = len(self.nodes)
        self.nodes.append(Node(op, ids, saved, data.shape))
        return out

    # -- primitives ----------------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
        return self._emit("matmul", a.data @ b.data, (a, b), (a.data, b.data))

    def transpose(self, a: Tensor) -> Tensor:
        if a.data.ndim != 2:
            raise ShapeError(f"transpose: expected a matrix, got {a.shape}")
        return self._emit("transpose", a.data.T, (a,))

    def sin(self, a: Tensor) -> Tensor:
        return self._emit("sin", np.sin(a.data), (a,), (a.data,))

    def cos(self, a: Tensor) -> Tensor:
        return self._emit("cos", np.cos(a.data), (a,), (a.data,))

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        _check_same("add", a, b)
        return self._emit("add", a.data + b.data, (a, b))

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        _check_same("sub", a, b)
        return self._emit("sub", a.data - b.data, (a, b))

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        _check_same("mul", a, b)
        return self._emit("mul", a.data * b.data, (a, b), (a.data, b.data))

    def scale(self, a: Tensor, s: float) -> Tensor:
        s = float(s)
        return self._emit("scale", a.data * s, (a,), (s,))

    def clamp01(self, a: Tensor) -> Tensor:
        return self._emit("clamp01", np.clip(a.data, 0.0, 1.0), (a,), (a.data,))

    def sum(self, a: Tensor) -> Tensor:
        """Sum of all entries, as a shape-() tensor."""
        return self._emit("sum", np.array(a.data.sum()), (a,), (a.shape,))

    def elementwise(self, op: str, *args, **kwargs) -> Tensor:
        if op not in _ELEMENTWISE:
            raise ValueError(f"unknown elementwise op {op!r}")
        return getattr(self, op)(*args, **kwargs)

    # -- reverse pass --------------------------------------------------------

    def backward(self, loss: Tensor, params: Iterable[Tensor] = ()) -> dict[Tensor, Tensor]:
        return backward(self, loss, params)


_ELEMENTWISE = frozenset({"sin", "cos", "add", "sub", "mul", "scale", "clamp01"})


def _vjp(node: Node, g: np.ndarray) -> tuple[np.ndarray | None, ...]:
    op = node.op
    if op == "matmul":
        a, b = node.saved
        ga = g @ b.T if node.inputs[0] is not None else None
        gb = a.T @ g if node.inputs[1] is not None else None
        return ga, gb
    if op == "transpose":
        return (g.T,)
    if op == "sin":
        return (g * np.cos(node.saved[0]),)
    if op == "cos":
        return (-g * np.sin(node.saved[0]),)
    if op == "add":
        return g, g
    if op == "sub":
        return g, -g
    if op == "mul":
        a, b = node.saved
        return g * b, g * a
    if op == "scale":
        return (g * node.saved[0],)
    if op == "clamp01":
        x = node.saved[0]
        return (g * ((x > 0.0) & (x < 1.0)),)
    if op == "sum":
        return (np.full(node.saved[0], float(g)),)
    raise TapeError(f"no backward rule for {op!r}")


def backward(tape: Tape, loss: Tensor, params: Iterable[Tensor] = ()) -> dict[Tensor, Tensor]:
    """Reverse-mode gradients of a scalar ``loss`` w.r.t. every leaf on ``tape``.

    Extra ``params`` that never touched the tape get zero gradients, so the
    result always covers the full parameter list handed to the optimizer.
    """
    if loss.data.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    params = list(params)
    grads: dict[Tensor, Tensor] = {}
    if loss.tape is tape and loss.node is not None:
        adj: list[np.ndarray | None] = [None] * (loss.node + 1)
        adj[loss.node] = np.ones(loss.shape)
        for idx in range(loss.node, -1, -1):
            g = adj[idx]
            node = tape.nodes[idx]
            if g is None or node.op == "leaf":
                continue
            for src, gi in zip(node.inputs, _vjp(node, g)):
                if src is None or gi is None:
                    continue
                adj[src] = gi if adj[src] is None else adj[src] + gi
        for leaf in tape._leaves:
            nid = tape._leaf_ids[id(leaf)]
            g = adj[nid] if nid < len(adj) else None
            grads[leaf] = Tensor._wrap(np.zeros(leaf.shape) if g is None else np.asarray(g, dtype=np.float64))
    else:
        for leaf in tape._leaves:
            grads[leaf] = Tensor._wrap(np.zeros(leaf.shape))
    for p in params:
        if not p.requires_grad:
            raise TapeError(f"{p!r} does not require grad")
        grads.setdefault(p, Tensor._wrap(np.zeros(p.shape)))
    return grads


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in (0, 1)")


def adam_step(params: list[Tensor], grads: dict[Tensor, Tensor], state: AdamState) -> None:
    """One Adam update with bias correction, in place on ``params`` and ``state``.

    Moments are keyed by position in ``params``, so pass the same list every
    step. Parameters absent from ``grads`` see a zero gradient.
    """
    extra = [k for k in grads if not any(k is p for p in params)]
    if extra:
        raise KeyError(f"gradient for unknown parameter {extra[0]!r}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for i, p in enumerate(params):
        g = grads.get(p)
        g = np.zeros(p.shape) if g is None else g.data
        if g.shape != p.shape:
            raise ShapeError(f"adam: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(i)
        v = state.v.get(i)
        if m is None:
            m = np.zeros(p.shape)
            v = np.zeros(p.shape)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[i] = m
        state.v[i] = v
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
