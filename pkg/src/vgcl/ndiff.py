"""Differentiable numerics core: a rebuilt-per-step reverse-mode tape over
float64 numpy arrays, sparse-dense products, and Adam.

Every operation returns a :class:`Node`; leaves that receive gradients are
:class:`Param`. A fresh graph is built for every training step because the
stochastic augmentations change the sparsity pattern each time, so there is
no graph reuse machinery.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

# When enabled, every op asserts its output is finite. Slow; meant for tests.
DEBUG_CHECK_FINITE = False


class GradientError(RuntimeError):
    """Misuse of the tape (double backward, non-scalar loss, ...)."""


def _check(value: np.ndarray) -> np.ndarray:
    if DEBUG_CHECK_FINITE and not np.all(np.isfinite(value)):
        raise FloatingPointError("non-finite value produced by an op")
    return value


class Node:
    """One recorded operation result.

    ``parents`` are the differentiable inputs; ``vjp`` maps the incoming
    gradient to one gradient per parent (aligned by position). Constants have
    no parents and no vjp.
    """

    __slots__ = ("value", "parents", "vjp", "grad", "_backward_done")

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.vjp = vjp
        self.grad = None
        self._backward_done = False

    @property
    def shape(self):
        return self.value.shape

    # Small amount of sugar so composite losses stay readable.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Node):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


class Param(Node):
    """Leaf with a persistent gradient buffer; the optimizer updates .value."""

    __slots__ = ("name",)

    def __init__(self, value, name=""):
        super().__init__(value)
        self.name = name
        self.grad = np.zeros_like(self.value)


def constant(x) -> Node:
    return Node(x)


def _wrap(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


# ---------------------------------------------------------------------------
# primitive ops


def add(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    if a.value.shape != b.value.shape:
        raise ValueError(f"add: shape mismatch {a.value.shape} vs {b.value.shape}")
    return Node(_check(a.value + b.value), (a, b), lambda g: (g, g))


def sub(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    if a.value.shape != b.value.shape:
        raise ValueError(f"sub: shape mismatch {a.value.shape} vs {b.value.shape}")
    return Node(_check(a.value - b.value), (a, b), lambda g: (g, -g))


def mul(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    if a.value.shape != b.value.shape:
        raise ValueError(f"mul: shape mismatch {a.value.shape} vs {b.value.shape}")
    return Node(_check(a.value * b.value), (a, b), lambda g: (g * b.value, g * a.value))


def scale(a, c: float) -> Node:
    a = _wrap(a)
    c = float(c)
    return Node(_check(a.value * c), (a,), lambda g: (g * c,))


def add_scalar(a, c: float) -> Node:
    a = _wrap(a)
    c = float(c)
    return Node(_check(a.value + c), (a,), lambda g: (g,))


def matmul(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    if a.value.shape[-1] != b.value.shape[0]:
        raise ValueError(f"matmul: inner dims {a.value.shape} x {b.value.shape}")
    return Node(
        _check(a.value @ b.value),
        (a, b),
        lambda g: (g @ b.value.T, a.value.T @ g),
    )


def spmm(s, d) -> Node:
    """Sparse @ dense. The sparse operand is a constant (adjacency/features);
    gradients flow to the dense side only."""
    if not sp.issparse(s):
        raise TypeError("spmm: left operand must be a scipy sparse matrix")
    d = _wrap(d)
    if s.shape[1] != d.value.shape[0]:
        raise ValueError(f"spmm: inner dims {s.shape} x {d.value.shape}")
    s = s.tocsr()
    return Node(
        _check(np.asarray(s @ d.value)),
        (d,),
        lambda g: (np.asarray(s.T @ g),),
    )


def add_rowvec(a, b) -> Node:
    """a (n, d) + b (d,) broadcast over rows; used for projection-head biases."""
    a, b = _wrap(a), _wrap(b)
    if a.value.ndim != 2 or b.value.shape != (a.value.shape[1],):
        raise ValueError(f"add_rowvec: {a.value.shape} vs {b.value.shape}")
    return Node(
        _check(a.value + b.value[None, :]),
        (a, b),
        lambda g: (g, g.sum(axis=0)),
    )


def relu(a) -> Node:
    a = _wrap(a)
    mask = a.value > 0
    return Node(_check(np.where(mask, a.value, 0.0)), (a,), lambda g: (g * mask,))


def elu(a) -> Node:
    a = _wrap(a)
    neg = np.expm1(np.minimum(a.value, 0.0))
    out = np.where(a.value > 0, a.value, neg)
    return Node(
        _check(out),
        (a,),
        lambda g: (np.where(a.value > 0, g, g * (neg + 1.0)),),
    )


def exp(a) -> Node:
    a = _wrap(a)
    out = np.exp(a.value)
    return Node(_check(out), (a,), lambda g: (g * out,))


def log(a) -> Node:
    a = _wrap(a)
    if np.any(a.value <= 0):
        raise ValueError("log: input must be strictly positive")
    return Node(_check(np.log(a.value)), (a,), lambda g: (g / a.value,))


def softplus(a) -> Node:
    """log(1 + e^x), computed as max(x, 0) + log1p(e^{-|x|}) so it neither
    overflows nor loses precision for |x| up to ~700."""
    a = _wrap(a)
    out = np.maximum(a.value, 0.0) + np.log1p(np.exp(-np.abs(a.value)))
    return Node(_check(out), (a,), lambda g: (g * expit(a.value),))


def row_l2_normalize(a) -> Node:
    """Scale every row to unit Euclidean norm. Rows with norm below 1e-12 get
    1e-12 added to the norm instead of dividing by zero."""
    a = _wrap(a)
    if a.value.ndim != 2:
        raise ValueError("row_l2_normalize expects a 2-d matrix")
    norms = np.linalg.norm(a.value, axis=1)
    norms = np.where(norms < 1e-12, norms + 1e-12, norms)
    out = a.value / norms[:, None]

    def vjp(g):
        dot = np.sum(g * out, axis=1, keepdims=True)
        return ((g - out * dot) / norms[:, None],)

    return Node(_check(out), (a,), vjp)


def nsum(a) -> Node:
    a = _wrap(a)
    shape = a.value.shape
    return Node(
        _check(np.sum(a.value)),
        (a,),
        lambda g: (np.full(shape, g, dtype=np.float64),),
    )


def nmean(a) -> Node:
    a = _wrap(a)
    shape = a.value.shape
    size = a.value.size
    return Node(
        _check(np.mean(a.value)),
        (a,),
        lambda g: (np.full(shape, g / size, dtype=np.float64),),
    )


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable Param's .grad.

    The graph is walked once in reverse topological order. Calling backward a
    second time on the same loss node is an error; accumulating several
    independent losses into the same Params (one backward call each) is fine.
    """
    if loss.value.shape != ():
        raise GradientError("backward requires a scalar loss node")
    if loss._backward_done:
        raise GradientError("backward called twice on the same node")
    loss._backward_done = True

    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.array(1.0)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Param):
            node.grad += g
            continue
        if node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None:
                continue
            acc = grads.get(id(parent))
            if acc is None:
                grads[id(parent)] = np.asarray(pg, dtype=np.float64).copy()
            else:
                acc += pg


def zero_grad(params) -> None:
    for p in params:
        p.grad[...] = 0.0


# ---------------------------------------------------------------------------
# Adam


class AdamState:
    """Adam with bias correction; defaults beta1=0.9, beta2=0.999, eps=1e-8."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(state: AdamState, params) -> None:
    """One Adam update for every param, reading gradients from .grad."""
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for p in params:
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.value)
        v = state.v.get(p.name)
        if v is None:
            v = state.v[p.name] = np.zeros_like(p.value)
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.value -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
