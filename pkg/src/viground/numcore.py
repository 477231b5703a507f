"""Dense float64 matrices with a reverse-mode tape and the NAdam update.

Values are plain 2-D ``numpy`` arrays.  Operations accept either arrays
(constants) or :class:`Node` objects recorded on a :class:`Tape`; when no
operand is a node the operation is evaluated eagerly and an array comes back,
so the same forward code serves training and pure evaluation.

    tape = Tape()
    w = tape.param(np.ones((1, 3)), "w")
    grads = backward(tape, sum_all(w))   # {"w": [[1., 1., 1.]]}
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DivergenceError, ShapeError

DTYPE = np.float64


def as_matrix(x) -> np.ndarray:
    """Coerce scalars, vectors and nested lists to a read-only 2-D float64 array."""
    arr = np.array(x, dtype=DTYPE)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise DivergenceError("non-finite value produced")
    arr.setflags(write=False)
    return arr


class Node:
    """A matrix value recorded on a tape, with the local rule to push gradients back."""

    __slots__ = ("value", "tape", "parents", "grad_fn", "name", "index")

    def __init__(self, value, tape, parents=(), grad_fn=None, name=None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.grad_fn = grad_fn
        self.name = name
        self.index = tape._record(self)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label} shape={self.value.shape}"


class Tape:
    """Ordered record of the operations applied to tracked matrices.

    A tape is built for one forward pass and discarded after :func:`backward`.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    def _record(self, node):
        self.nodes.append(node)
        return len(self.nodes) - 1

    def param(self, value, name: str) -> Node:
        if name in self.params:
            raise ContractError(f"parameter {name!r} already tracked on this tape")
        node = Node(as_matrix(value), self, name=name)
        self.params[name] = node
        return node

    def const(self, value) -> Node:
        return Node(as_matrix(value), self)


def value_of(x) -> np.ndarray:
    if isinstance(x, Node):
        return x.value
    if isinstance(x, np.ndarray) and x.ndim == 2 and x.dtype == DTYPE:
        return x
    return as_matrix(x)


def _tape_of(*xs):
    tape = None
    for x in xs:
        if isinstance(x, Node):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ContractError("operands recorded on different tapes")
    return tape


def _emit(out, operands, grad_fn):
    out = _frozen(out)
    tape = _tape_of(*operands)
    if tape is None:
        return out
    return Node(out, tape, tuple(operands), grad_fn)


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {av.shape} by {bv.shape}")
    return _emit(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def add(a, b):
    av, bv = value_of(a), value_of(b)
    _same_shape(av, bv, "add")
    return _emit(av + bv, (a, b), lambda g: (g, g))


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    _same_shape(av, bv, "sub")
    return _emit(av - bv, (a, b), lambda g: (g, -g))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    _same_shape(av, bv, "mul")
    return _emit(av * bv, (a, b), lambda g: (g * bv, g * av))


def tanh(a):
    out = np.tanh(value_of(a))
    return _emit(out, (a,), lambda g: (g * (1.0 - out * out),))


def _logistic(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    out = _logistic(value_of(a))
    return _emit(out, (a,), lambda g: (g * out * (1.0 - out),))


_UNARY = {"tanh": tanh, "sigmoid": sigmoid}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, a, b=None):
    """Dispatch by name to one of add, sub, mul, tanh, sigmoid."""
    if op in _UNARY:
        if b is not None:
            raise ContractError(f"{op} takes one operand")
        return _UNARY[op](a)
    if op in _BINARY:
        if b is None:
            raise ContractError(f"{op} takes two operands")
        return _BINARY[op](a, b)
    raise ContractError(f"unknown elementwise op {op!r}")


def add_row(a, row):
    """Add a 1 x n row (a bias) to every row of an m x n matrix."""
    av, rv = value_of(a), value_of(row)
    if rv.shape != (1, av.shape[1]):
        raise ShapeError(f"add_row: row {rv.shape} does not broadcast over {av.shape}")
    return _emit(av + rv, (a, row), lambda g: (g, g.sum(axis=0, keepdims=True)))


def select_rows(mask, a, b):
    """Row-wise choice: rows of ``a`` where ``mask`` is true, rows of ``b`` elsewhere.

    ``mask`` is a constant boolean vector with one entry per row.
    """
    av, bv = value_of(a), value_of(b)
    _same_shape(av, bv, "select_rows")
    keep = np.asarray(mask, dtype=bool).reshape(-1, 1)
    if keep.shape[0] != av.shape[0]:
        raise ShapeError(f"select_rows: mask of length {keep.shape[0]} for {av.shape[0]} rows")
    out = np.where(keep, av, bv)
    return _emit(out, (a, b), lambda g: (np.where(keep, g, 0.0), np.where(keep, 0.0, g)))


def scale(a, factor: float):
    f = float(factor)
    return _emit(value_of(a) * f, (a,), lambda g: (g * f,))


def sum_all(a):
    av = value_of(a)
    return _emit(np.array([[av.sum()]]), (a,), lambda g: (np.full(av.shape, g[0, 0]),))


def mse_loss(pred, target):
    """Mean of squared differences over every element, as a 1 x 1 matrix."""
    pv, tv = value_of(pred), value_of(target)
    _same_shape(pv, tv, "mse_loss")
    diff = pv - tv
    n = diff.size
    out = np.array([[np.sum(diff * diff) / n]])
    return _emit(out, (pred, target), lambda g: (g[0, 0] * 2.0 / n * diff, -g[0, 0] * 2.0 / n * diff))


def backward(tape: Tape, loss: Node) -> dict[str, np.ndarray]:
    """Gradient of a scalar ``loss`` with respect to every parameter on ``tape``.

    Parameters that do not feed the loss get an exact zero array.
    """
    if not isinstance(loss, Node) or loss.tape is not tape:
        raise ContractError("loss must be a node recorded on this tape")
    if loss.value.shape != (1, 1):
        raise ContractError(f"loss must be scalar (1 x 1), got {loss.value.shape}")
    grads: dict[int, np.ndarray] = {loss.index: np.ones((1, 1))}
    for node in reversed(tape.nodes[: loss.index + 1]):
        g = grads.get(node.index)
        if g is None or node.grad_fn is None:
            continue
        for parent, pg in zip(node.parents, node.grad_fn(g)):
            if not isinstance(parent, Node):
                continue
            if parent.index in grads:
                grads[parent.index] = grads[parent.index] + pg
            else:
                grads[parent.index] = pg
    out = {}
    for name, node in tape.params.items():
        g = grads.get(node.index)
        out[name] = np.zeros_like(node.value) if g is None else np.array(g, dtype=DTYPE)
    return out


@dataclass
class NAdamState:
    """Moments and step count for Nesterov-accelerated Adam.

    ``momentum_decay`` sets the warm-up schedule
    mu_t = beta1 * (1 - 0.5 * 0.96 ** (t * momentum_decay)).
    """

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum_decay: float = 0.004
    step: int = 0
    mu_product: float = 1.0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def _mu(state, t):
    return state.beta1 * (1.0 - 0.5 * 0.96 ** (t * state.momentum_decay))


def nadam_step(state: NAdamState, params: dict, grads: dict) -> tuple[dict, NAdamState]:
    """One NAdam update; returns new parameter arrays and a new state.

    Neither the input parameters nor the input state are modified.
    """
    if set(params) != set(grads):
        raise ContractError("params and grads must have the same keys")
    t = state.step + 1
    mu_t, mu_next = _mu(state, t), _mu(state, t + 1)
    mu_product = state.mu_product * mu_t
    mu_product_next = mu_product * mu_next
    bias2 = 1.0 - state.beta2**t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=DTYPE)
        if g.shape != p.shape:
            raise ShapeError(f"nadam_step: gradient {g.shape} does not match parameter {name!r} {p.shape}")
        m_prev = state.m.get(name)
        v_prev = state.v.get(name)
        if m_prev is None:
            m_prev = np.zeros_like(p)
            v_prev = np.zeros_like(p)
        elif m_prev.shape != p.shape:
            raise ShapeError(f"nadam_step: moment {m_prev.shape} does not match parameter {name!r} {p.shape}")
        m = state.beta1 * m_prev + (1.0 - state.beta1) * g
        v = state.beta2 * v_prev + (1.0 - state.beta2) * g * g
        m_hat = mu_next * m / (1.0 - mu_product_next) + (1.0 - mu_t) * g / (1.0 - mu_product)
        v_hat = v / bias2
        updated = p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
        new_params[name] = _frozen(updated)
        new_m[name], new_v[name] = m, v
    new_state = NAdamState(
        learning_rate=state.learning_rate,
        beta1=state.beta1,
        beta2=state.beta2,
        eps=state.eps,
        momentum_decay=state.momentum_decay,
        step=t,
        mu_product=mu_product,
        m=new_m,
        v=new_v,
    )
    return new_params, new_state


def clip_global_norm(grads: dict, max_norm: float) -> dict:
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads
    factor = max_norm / total
    return {k: g * factor for k, g in grads.items()}
