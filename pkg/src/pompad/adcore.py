"""Minimal reverse-mode automatic differentiation on an operation tape.

Values are wrapped in :class:`Dual` objects whose arithmetic records nodes
on a :class:`Tape`.  A node stores its op kind, at most two parent ids and
the local partial derivatives evaluated eagerly at forward time, so one
reverse sweep over the tape yields the gradient of a scalar output with
respect to every input variable.

Node values may be Python floats or 1-d numpy arrays; elementwise ops
broadcast a scalar against an array.  This keeps the tape small when the
same scalar expression is evaluated across a particle population: one node
covers the whole population instead of one node per particle, while the
semantics (including :func:`stop_gradient`) stay exactly those of a scalar
tape.

Two properties are load-bearing for the filtering code built on top:

* arithmetic on constants yields constants — no tape growth, so a run with
  no live parameters costs no memory;
* :func:`stop_gradient` returns a value-identical constant, so quantities
  routed through it contribute to forward values bitwise but never to
  derivatives.

Domain violations (``log`` of a non-positive number, division by zero)
raise :class:`~pompad.errors.DomainError` immediately instead of emitting
NaN.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, UsageError

# Op kinds.  Parent count and backward rule are fixed per kind.
OP_INPUT = 0
OP_ADD = 1
OP_SUB = 2
OP_MUL = 3
OP_DIV = 4
OP_NEG = 5
OP_EXP = 6
OP_LOG = 7
OP_POW = 8
OP_SQRT = 9
OP_TANH = 10
OP_SOFTPLUS = 11
OP_MAXIMUM = 12
OP_SUM = 13
OP_GATHER = 14

_OP_NAMES = {
    "add": OP_ADD, "sub": OP_SUB, "mul": OP_MUL, "div": OP_DIV,
    "neg": OP_NEG, "exp": OP_EXP, "log": OP_LOG, "pow": OP_POW,
    "sqrt": OP_SQRT, "tanh": OP_TANH,
}

_CONSTANT = -1


class Tape:
    """Append-only record of differentiable operations.

    Parent ids are strictly less than a node's own id, so the node list is
    already in topological order and a single reverse pass suffices.
    A tape is single-writer: one filter run owns one tape.
    """

    __slots__ = ("ops", "parents", "partials", "shapes", "inputs")

    def __init__(self):
        self.ops: list[int] = []
        self.parents: list[tuple] = []
        self.partials: list[tuple] = []
        self.shapes: list[tuple] = []
        self.inputs: list[int] = []

    def __len__(self) -> int:
        return len(self.ops)

    def _append(self, op: int, parents: tuple, partials: tuple, shape: tuple) -> int:
        self.ops.append(op)
        self.parents.append(parents)
        self.partials.append(partials)
        self.shapes.append(shape)
        return len(self.ops) - 1


class Dual:
    """A value plus its location on a tape (or the CONSTANT marker)."""

    __slots__ = ("value", "node", "tape")

    def __init__(self, value, node: int = _CONSTANT, tape: Tape | None = None):
        self.value = value
        self.node = node
        self.tape = tape

    @property
    def is_constant(self) -> bool:
        return self.node == _CONSTANT

    def __repr__(self):
        tag = "const" if self.is_constant else f"node {self.node}"
        return f"Dual({self.value!r}, {tag})"

    # Operator sugar; all dispatch to the module-level functions so plain
    # numbers and Duals mix freely.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, other):
        return power(self, other)


def _shape(v) -> tuple:
    return v.shape if isinstance(v, np.ndarray) else ()


def _as_dual(x) -> Dual:
    if isinstance(x, Dual):
        return x
    return Dual(x)


def _tape_of(*xs: Dual) -> Tape | None:
    tape = None
    for x in xs:
        if x.tape is not None:
            if tape is not None and tape is not x.tape:
                raise UsageError("operands live on different tapes")
            tape = x.tape
    return tape


def lift(value: float, tape: Tape) -> Dual:
    """Record ``value`` as a fresh input variable on ``tape``."""
    if tape is None:
        raise UsageError("lift requires a live tape")
    node = tape._append(OP_INPUT, (), (), _shape(value))
    tape.inputs.append(node)
    return Dual(value, node, tape)


def constant(value) -> Dual:
    """Wrap ``value`` as a CONSTANT Dual (contributes no derivative)."""
    return Dual(value)


def stop_gradient(x) -> Dual:
    """Return a value-identical constant: derivatives do not flow through."""
    if isinstance(x, Dual):
        return Dual(x.value)
    return Dual(x)


def value_of(x):
    """Underlying value of a Dual, or ``x`` itself if already plain."""
    return x.value if isinstance(x, Dual) else x


def _unary(x, op: int, fval, fpartial, check: Callable | None = None,
           opname: str = "") -> Dual:
    x = _as_dual(x)
    if check is not None:
        check(x.value, opname)
    v = fval(x.value)
    if x.is_constant:
        return Dual(v)
    tape = x.tape
    node = tape._append(op, (x.node,), (fpartial(x.value, v),), _shape(v))
    return Dual(v, node, tape)


def _binary(a, b, op: int, fval, fpartials, check: Callable | None = None,
            opname: str = "") -> Dual:
    a = _as_dual(a)
    b = _as_dual(b)
    if check is not None:
        check(a.value, b.value, opname)
    v = fval(a.value, b.value)
    if a.is_constant and b.is_constant:
        return Dual(v)
    tape = _tape_of(a, b)
    da, db = fpartials(a.value, b.value, v)
    node = tape._append(op, (a.node, b.node), (da, db), _shape(v))
    return Dual(v, node, tape)


def _check_positive(v, opname):
    if np.min(v) <= 0.0:
        raise DomainError(opname, float(np.min(v)))


def _check_nonzero_denom(_a, b, opname):
    if np.any(b == 0.0):
        raise DomainError(opname, 0.0)


def add(a, b) -> Dual:
    return _binary(a, b, OP_ADD, lambda x, y: x + y,
                   lambda x, y, v: (None, None))


def sub(a, b) -> Dual:
    return _binary(a, b, OP_SUB, lambda x, y: x - y,
                   lambda x, y, v: (None, -1.0))


def mul(a, b) -> Dual:
    return _binary(a, b, OP_MUL, lambda x, y: x * y,
                   lambda x, y, v: (y, x))


def div(a, b) -> Dual:
    def fval(x, y):
        return x / y

    def fpartials(x, y, v):
        inv = 1.0 / y
        return inv, -v * inv

    return _binary(a, b, OP_DIV, fval, fpartials,
                   check=_check_nonzero_denom, opname="div")


def neg(x) -> Dual:
    return _unary(x, OP_NEG, lambda v: -v, lambda v, out: -1.0)


def exp(x) -> Dual:
    return _unary(x, OP_EXP, np.exp, lambda v, out: out)


def log(x) -> Dual:
    return _unary(x, OP_LOG, np.log, lambda v, out: 1.0 / v,
                  check=lambda v, n: _check_positive(v, n), opname="log")


def sqrt(x) -> Dual:
    return _unary(x, OP_SQRT, np.sqrt, lambda v, out: 0.5 / out,
                  check=lambda v, n: _check_positive(v, n), opname="sqrt")


def tanh(x) -> Dual:
    return _unary(x, OP_TANH, np.tanh, lambda v, out: 1.0 - out * out)


def softplus(x) -> Dual:
    """Numerically stable ``log(1 + exp(x))`` with partial ``sigmoid(x)``."""

    def fval(v):
        return np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))

    def fpartial(v, out):
        # sigmoid via tanh keeps the partial stable for |v| large
        return 0.5 * (1.0 + np.tanh(0.5 * v))

    return _unary(x, OP_SOFTPLUS, fval, fpartial)


def power(x, c) -> Dual:
    """``x ** c``.  The exponent may itself be a Dual (via exp/log) only
    for positive bases; a plain-number exponent is handled directly."""
    if isinstance(c, Dual) and not c.is_constant:
        return exp(mul(c, log(x)))
    c = value_of(c)
    x = _as_dual(x)
    cf = float(c)
    if not cf.is_integer() or cf < 0:
        vmin = np.min(x.value)
        if vmin < 0 or (vmin == 0 and cf < 1):
            raise DomainError("pow", float(vmin))

    def fval(v):
        return v ** c

    def fpartial(v, out):
        return c * v ** (c - 1.0)

    return _unary(x, OP_POW, fval, fpartial)


def maximum(a, b) -> Dual:
    """Elementwise max; the subgradient follows the larger branch (ties
    go to the first argument)."""

    def fpartials(x, y, v):
        mask = np.asarray(x >= y, dtype=float) if (
            isinstance(x, np.ndarray) or isinstance(y, np.ndarray)
        ) else float(x >= y)
        return mask, 1.0 - mask

    return _binary(a, b, OP_MAXIMUM, np.maximum, fpartials)


def dsum(x) -> Dual:
    """Sum of all elements, as a scalar Dual."""
    x = _as_dual(x)
    v = float(np.sum(x.value))
    if x.is_constant:
        return Dual(v)
    tape = x.tape
    node = tape._append(OP_SUM, (x.node,), (_shape(x.value),), ())
    return Dual(v, node, tape)


def gather(x, idx: np.ndarray) -> Dual:
    """``x[idx]`` for an array-valued Dual; adjoints scatter-add back."""
    x = _as_dual(x)
    v = x.value[idx]
    if x.is_constant:
        return Dual(v)
    tape = x.tape
    node = tape._append(OP_GATHER, (x.node,), ((idx, _shape(x.value)),), _shape(v))
    return Dual(v, node, tape)


def logsumexp(x) -> Dual:
    """``log(sum(exp(x)))`` with max-subtraction for stability.

    The subtracted max passes through :func:`stop_gradient`, which leaves
    the derivative exact (the shift cancels in the true gradient).
    """
    x = _as_dual(x)
    m = stop_gradient(constant(float(np.max(x.value))))
    return add(log(dsum(exp(sub(x, m)))), m)


def logsumexp_values(x: np.ndarray) -> float:
    """Plain-float twin of :func:`logsumexp`; same operation order, so the
    two agree bitwise on identical inputs."""
    m = float(np.max(x))
    return float(np.log(np.sum(np.exp(x - m))) + m)


def apply(op: str, *args) -> Dual:
    """Apply a named elementary op to Dual (or plain) arguments."""
    table = {
        "add": add, "sub": sub, "mul": mul, "div": div, "neg": neg,
        "exp": exp, "log": log, "pow": power, "sqrt": sqrt, "tanh": tanh,
    }
    if op not in table:
        raise UsageError(f"unknown op {op!r}")
    return table[op](*args)


def _unbroadcast(g, shape: tuple):
    if _shape(g) == shape:
        return g
    if shape == ():
        return float(np.sum(g))
    return g  # scalar adjoint against array parent: broadcasting handles it


def backward(tape: Tape, output: Dual) -> np.ndarray:
    """Single reverse sweep: d(output)/d(input) for every input variable.

    The tape itself is not modified; adjoints live in a separate buffer.
    Returns the gradient ordered as the inputs were lifted.
    """
    if output.is_constant:
        return np.zeros(len(tape.inputs))
    if output.tape is not tape or output.node >= len(tape):
        raise UsageError("output does not belong to this tape")
    if _shape(output.value) != ():
        raise UsageError("backward expects a scalar output")

    n = output.node + 1
    adj: list = [None] * n
    adj[output.node] = 1.0
    ops, parents, partials, shapes = tape.ops, tape.parents, tape.partials, tape.shapes

    def acc(i, g):
        cur = adj[i]
        if cur is None:
            adj[i] = g
        else:
            adj[i] = cur + g

    for i in range(output.node, -1, -1):
        a = adj[i]
        if a is None:
            continue
        op = ops[i]
        if op == OP_INPUT:
            continue
        ps = parents[i]
        ds = partials[i]
        if op == OP_SUM:
            (pshape,) = ds
            acc(ps[0], np.full(pshape, a) if pshape != () else a)
        elif op == OP_GATHER:
            idx, pshape = ds[0]
            buf = np.zeros(pshape)
            np.add.at(buf, idx, a)
            acc(ps[0], buf)
        else:
            for p, d in zip(ps, ds):
                if p == _CONSTANT:
                    continue
                g = a if d is None else d * a
                acc(p, _unbroadcast(g, shapes[p]))

    out = np.zeros(len(tape.inputs))
    for k, node in enumerate(tape.inputs):
        if node < n and adj[node] is not None:
            out[k] = float(np.sum(adj[node]))
    return out


def grad(f: Callable, x: Sequence[float]) -> tuple[float, np.ndarray]:
    """Evaluate ``f`` on lifted inputs and return ``(value, gradient)``."""
    tape = Tape()
    duals = [lift(float(xi), tape) for xi in x]
    out = f(duals)
    if not isinstance(out, Dual):
        out = constant(out)
    return float(value_of(out)), backward(tape, out)


def fd_gradient(f: Callable, x: Sequence[float], h: float) -> np.ndarray:
    """Central finite differences of a plain-value function."""
    x = np.asarray(x, dtype=float)
    g = np.zeros(x.size)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        fp = f(list(xp))
        fm = f(list(xm))
        g[i] = (value_of(fp) - value_of(fm)) / (2.0 * h)
    return g


def finite_diff_check(f: Callable, x: Sequence[float], h: float) -> float:
    """Max relative error between the AD gradient of ``f`` and central
    differences at ``x``: ``max_i |g_AD - g_FD| / max(1, |g_FD|)``."""
    if h <= 0:
        raise UsageError("finite_diff_check requires h > 0")
    _, g_ad = grad(f, x)
    g_fd = fd_gradient(f, x, h)
    denom = np.maximum(1.0, np.abs(g_fd))
    return float(np.max(np.abs(g_ad - g_fd) / denom))


def fd_hessian(grad_fn: Callable, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a gradient function, symmetrized.

    Used for the optional curvature-based optimizer step; a floored
    approximation is all that is required downstream.
    """
    x = np.asarray(x, dtype=float)
    p = x.size
    H = np.zeros((p, p))
    for i in range(p):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        H[:, i] = (grad_fn(xp) - grad_fn(xm)) / (2.0 * h)
    return 0.5 * (H + H.T)
