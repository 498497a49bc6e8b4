"""Reverse-mode automatic differentiation on a recorded graph of dense arrays.

Gradients are themselves built from graph operations, so ``grad`` can be
applied to its own output (gradients of gradients). All values are float64.

The subgradient of ``relu`` at exactly 0 is defined as 0, which keeps the
pinball-loss gradient bounded in [-q, 1-q]; tests must avoid perturbing
across the kink.
"""

from __future__ import annotations

import warnings
from typing import Callable, Sequence

import numpy as np

from . import kernels


class ShapeMismatchError(ValueError):
    """Raised when operand shapes are not conformable for an operation."""

    def __init__(self, op: str, *shapes):
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(s) for s in shapes)}")


class NonScalarOutputError(ValueError):
    """grad() requires a scalar (0-d) output."""


class ReplayMismatchError(RuntimeError):
    """Tape replay produced a value different from the recorded one."""


class DetachedParameterWarning(UserWarning):
    """A requested parameter did not participate in the graph; gradient is zero."""


class Variable:
    """A value in the computation graph.

    ``parents`` holds ``(parent, vjp)`` pairs where ``vjp`` maps the adjoint
    of this variable to the adjoint contribution for that parent. Leaves
    have no parents.
    """

    __slots__ = ("value", "parents", "requires_grad", "op")

    def __init__(self, value, requires_grad: bool = False, parents=(), op: str = "leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.parents = parents
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def detach(self) -> "Variable":
        return Variable(self.value.copy(), requires_grad=self.requires_grad)

    def __repr__(self):
        return f"Variable(op={self.op!r}, shape={self.value.shape})"


def constant(value) -> Variable:
    return Variable(value, requires_grad=False)


def parameter(value) -> Variable:
    return Variable(value, requires_grad=True)


# ---------------------------------------------------------------------------
# Tape recording


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Append-only record of primitive operations, in topological order.

    Used as a context manager; every operation executed inside the block is
    recorded. ``replay`` recomputes each node from its operands and checks
    bit-exact agreement with the recorded value.
    """

    def __init__(self):
        self.nodes: list[tuple[str, Callable, tuple[Variable, ...], Variable]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def replay(self):
        for op, fn, inputs, out in self.nodes:
            redone = np.asarray(fn(*[v.value for v in inputs]), dtype=np.float64)
            if not np.array_equal(redone, out.value):
                raise ReplayMismatchError(f"replay of {op!r} diverged from recorded value")


def _emit(op: str, value, parents, fn: Callable, inputs: tuple[Variable, ...]) -> Variable:
    rg = any(p.requires_grad for p, _ in parents)
    out = Variable(value, requires_grad=rg, parents=tuple(parents), op=op)
    if _TAPE_STACK:
        _TAPE_STACK[-1].nodes.append((op, fn, inputs, out))
    return out


# ---------------------------------------------------------------------------
# Primitive operations


def _as_var(x) -> Variable:
    return x if isinstance(x, Variable) else constant(x)


def _binary_shapes(op: str, a: Variable, b: Variable):
    if a.shape != b.shape and a.value.ndim != 0 and b.value.ndim != 0:
        raise ShapeMismatchError(op, a.shape, b.shape)


def _reduce_to(parent: Variable, make):
    # Wrap a vjp so that a 0-d operand broadcast against an array collapses
    # its adjoint back to a scalar.
    if parent.value.ndim == 0:
        return lambda g: sum_(make(g)) if g.value.ndim != 0 else make(g)
    return make


def add(a, b) -> Variable:
    a, b = _as_var(a), _as_var(b)
    _binary_shapes("add", a, b)
    return _emit(
        "add", a.value + b.value,
        [(a, _reduce_to(a, lambda g: g)), (b, _reduce_to(b, lambda g: g))],
        lambda x, y: x + y, (a, b))


def sub(a, b) -> Variable:
    a, b = _as_var(a), _as_var(b)
    _binary_shapes("sub", a, b)
    return _emit(
        "sub", a.value - b.value,
        [(a, _reduce_to(a, lambda g: g)), (b, _reduce_to(b, lambda g: neg(g)))],
        lambda x, y: x - y, (a, b))


def neg(a) -> Variable:
    a = _as_var(a)
    return _emit("neg", -a.value, [(a, lambda g: neg(g))], lambda x: -x, (a,))


def mul(a, b) -> Variable:
    a, b = _as_var(a), _as_var(b)
    _binary_shapes("mul", a, b)
    return _emit(
        "mul", a.value * b.value,
        [(a, _reduce_to(a, lambda g: mul(g, b))), (b, _reduce_to(b, lambda g: mul(g, a)))],
        lambda x, y: x * y, (a, b))


def cmul(a, c) -> Variable:
    """Multiply by a non-differentiated constant (scalar or broadcastable array)."""
    a = _as_var(a)
    c = np.asarray(c, dtype=np.float64)
    try:
        value = a.value * c
    except ValueError as exc:
        raise ShapeMismatchError("cmul", a.shape, c.shape) from exc
    if value.shape != a.shape:
        raise ShapeMismatchError("cmul", a.shape, c.shape)
    return _emit("cmul", value, [(a, lambda g: cmul(g, c))], lambda x: x * c, (a,))


def add_const(a, c) -> Variable:
    a = _as_var(a)
    c = np.asarray(c, dtype=np.float64)
    value = a.value + c
    if value.shape != a.shape:
        raise ShapeMismatchError("add_const", a.shape, c.shape)
    return _emit("add_const", value, [(a, lambda g: g)], lambda x: x + c, (a,))


def matmul(a, b) -> Variable:
    a, b = _as_var(a), _as_var(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    return _emit(
        "matmul", a.value @ b.value,
        [(a, lambda g: matmul(g, transpose(b))),
         (b, lambda g: matmul(transpose(a), g))],
        lambda x, y: x @ y, (a, b))


def matvec(a, x) -> Variable:
    a, x = _as_var(a), _as_var(x)
    if a.value.ndim != 2 or x.value.ndim != 1 or a.shape[1] != x.shape[0]:
        raise ShapeMismatchError("matvec", a.shape, x.shape)
    return _emit(
        "matvec", a.value @ x.value,
        [(a, lambda g: outer(g, x)),
         (x, lambda g: matvec(transpose(a), g))],
        lambda m, v: m @ v, (a, x))


def outer(u, v) -> Variable:
    u, v = _as_var(u), _as_var(v)
    if u.value.ndim != 1 or v.value.ndim != 1:
        raise ShapeMismatchError("outer", u.shape, v.shape)
    return _emit(
        "outer", np.outer(u.value, v.value),
        [(u, lambda g: matvec(g, v)),
         (v, lambda g: matvec(transpose(g), u))],
        lambda x, y: np.outer(x, y), (u, v))


def transpose(a) -> Variable:
    a = _as_var(a)
    if a.value.ndim != 2:
        raise ShapeMismatchError("transpose", a.shape)
    return _emit("transpose", a.value.T.copy(), [(a, lambda g: transpose(g))],
                 lambda x: x.T.copy(), (a,))


def sigmoid(a) -> Variable:
    a = _as_var(a)
    out = _emit("sigmoid", kernels.sigmoid(a.value), [], lambda x: kernels.sigmoid(x), (a,))
    out.parents = ((a, lambda g: mul(g, mul(out, add_const(neg(out), 1.0)))),)
    out.requires_grad = a.requires_grad
    return out


def tanh(a) -> Variable:
    a = _as_var(a)
    out = _emit("tanh", kernels.tanh(a.value), [], lambda x: kernels.tanh(x), (a,))
    out.parents = ((a, lambda g: mul(g, add_const(neg(mul(out, out)), 1.0))),)
    out.requires_grad = a.requires_grad
    return out


def relu(a) -> Variable:
    """max(0, x); subgradient at the kink is 0."""
    a = _as_var(a)
    mask = (a.value > 0.0).astype(np.float64)
    return _emit("relu", kernels.relu(a.value), [(a, lambda g: cmul(g, mask))],
                 lambda x: kernels.relu(x), (a,))


def sum_(a) -> Variable:
    a = _as_var(a)
    if a.value.ndim == 0:
        return a
    shape = a.shape
    return _emit("sum", a.value.sum(), [(a, lambda g: expand(g, shape))],
                 lambda x: x.sum(), (a,))


def expand(s, shape) -> Variable:
    s = _as_var(s)
    if s.value.ndim != 0:
        raise ShapeMismatchError("expand", s.shape)
    return _emit("expand", np.full(shape, float(s.value)), [(s, lambda g: sum_(g))],
                 lambda x: np.full(shape, float(x)), (s,))


def sum_rows(m) -> Variable:
    """Sum a 2-d array over axis 0, yielding a row vector."""
    m = _as_var(m)
    if m.value.ndim != 2:
        raise ShapeMismatchError("sum_rows", m.shape)
    nrows = m.shape[0]
    return _emit("sum_rows", m.value.sum(axis=0), [(m, lambda g: expand_rows(g, nrows))],
                 lambda x: x.sum(axis=0), (m,))


def expand_rows(v, nrows: int) -> Variable:
    v = _as_var(v)
    if v.value.ndim != 1:
        raise ShapeMismatchError("expand_rows", v.shape)
    return _emit(
        "expand_rows", np.repeat(v.value[None, :], nrows, axis=0),
        [(v, lambda g: sum_rows(g))],
        lambda x: np.repeat(x[None, :], nrows, axis=0), (v,))


def add_bias(m, b) -> Variable:
    m, b = _as_var(m), _as_var(b)
    if m.value.ndim != 2 or b.value.ndim != 1 or m.shape[1] != b.shape[0]:
        raise ShapeMismatchError("add_bias", m.shape, b.shape)
    return _emit(
        "add_bias", m.value + b.value[None, :],
        [(m, lambda g: g), (b, lambda g: sum_rows(g))],
        lambda x, y: x + y[None, :], (m, b))


def slice_cols(m, j0: int, j1: int) -> Variable:
    m = _as_var(m)
    if m.value.ndim != 2 or not (0 <= j0 <= j1 <= m.shape[1]):
        raise ShapeMismatchError("slice_cols", m.shape, (j0, j1))
    ncols = m.shape[1]
    return _emit(
        "slice_cols", m.value[:, j0:j1].copy(),
        [(m, lambda g: pad_cols(g, j0, ncols))],
        lambda x: x[:, j0:j1].copy(), (m,))


def pad_cols(g, j0: int, ncols: int) -> Variable:
    g = _as_var(g)
    if g.value.ndim != 2 or j0 + g.shape[1] > ncols:
        raise ShapeMismatchError("pad_cols", g.shape, (j0, ncols))
    width = g.shape[1]

    def fwd(x):
        out = np.zeros((x.shape[0], ncols))
        out[:, j0:j0 + width] = x
        return out

    return _emit("pad_cols", fwd(g.value),
                 [(g, lambda h: slice_cols(h, j0, j0 + width))], fwd, (g,))


def dot(a, b) -> Variable:
    return sum_(mul(a, b))


def mean_(a) -> Variable:
    a = _as_var(a)
    n = a.value.size
    return cmul(sum_(a), 1.0 / n)


# ---------------------------------------------------------------------------
# Reverse pass


def _topo_order(output: Variable) -> list[Variable]:
    order: list[Variable] = []
    seen: set[int] = set()
    stack: list[tuple[Variable, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def grad(output: Variable, wrt: Sequence[Variable], warn_detached: bool = True) -> list[Variable]:
    """Adjoints of a scalar output with respect to each variable in ``wrt``.

    Results are Variables participating in the graph, so ``grad`` may be
    applied to (functions of) them again for higher-order derivatives.
    Parameters that did not participate get a zero gradient and a
    ``DetachedParameterWarning``.
    """
    if output.value.ndim != 0:
        raise NonScalarOutputError(f"grad requires a scalar output, got shape {output.shape}")
    adjoints: dict[int, Variable] = {id(output): constant(1.0)}
    if output.requires_grad:
        for node in reversed(_topo_order(output)):
            g = adjoints.get(id(node))
            if g is None:
                continue
            for parent, vjp in node.parents:
                if not parent.requires_grad:
                    continue
                contrib = vjp(g)
                prev = adjoints.get(id(parent))
                adjoints[id(parent)] = contrib if prev is None else add(prev, contrib)
    results = []
    for w in wrt:
        gw = adjoints.get(id(w))
        if gw is None:
            if warn_detached:
                warnings.warn("parameter did not participate in the graph; gradient is zero",
                              DetachedParameterWarning, stacklevel=2)
            gw = constant(np.zeros_like(w.value))
        results.append(gw)
    return results


def grad_check(f: Callable[[list[Variable]], Variable], point: Sequence[np.ndarray],
               h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a list of Variables to a scalar Variable; ``point`` gives the
    values (the caller is responsible for avoiding kinks within ``h``).
    """
    arrays = [np.asarray(p, dtype=np.float64) for p in point]
    vars_ = [parameter(a.copy()) for a in arrays]
    out = f(vars_)
    if not np.isfinite(out.value):
        raise ValueError("grad_check: function returned a non-finite value")
    analytic = [g.value for g in grad(out, vars_, warn_detached=False)]

    worst = 0.0
    for k, a in enumerate(arrays):
        flat = a.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = f([constant(x) for x in arrays]).item()
            flat[idx] = orig - h
            down = f([constant(x) for x in arrays]).item()
            flat[idx] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise ValueError("grad_check: non-finite value during differencing")
            numeric = (up - down) / (2.0 * h)
            ana = analytic[k].reshape(-1)[idx]
            err = abs(ana - numeric) / max(1.0, abs(ana))
            worst = max(worst, err)
    return worst
