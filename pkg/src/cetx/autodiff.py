"""Reverse-mode differentiation over a closed set of array primitives.

A computation is recorded implicitly while it runs: every operation on a
:class:`Var` produces a new node holding its value and vector-Jacobian
callbacks into its parents, so the resulting object graph is the tape.  One
backward sweep from a scalar output then yields gradients with respect to
every designated input at once, which is what makes optimizing a scalar loss
over many intervention cells cheap.

The primitive set is closed.  It consists of

* add / subtract / negate,
* elementwise multiply (with numpy broadcasting),
* affine maps via ``matmul`` (vector-vector, matrix-vector, vector-matrix,
  matrix-matrix),
* ``tanh`` and ``sigmoid``,
* ``spow``: elementwise power with sign-preserving extension
  ``sign(x) * |x|**p`` (exponent ``p >= 1``),
* ``absolute`` (subgradient 0 at the kink),
* ``vsum``: reduction to a scalar,
* structural ops: ``stack`` (scalars to vector), indexing/slicing.

Squared-error reductions are compositions of the above.  Fixed-length loops
are fine; data-dependent control flow is not supported.  All helpers below
dispatch on type, so the same model code runs on plain numpy inputs (fast,
no recording) and on :class:`Var` inputs (recorded, differentiable).

A graph is single-use: call :func:`backward` (or the higher-level
:func:`evaluate_with_gradient`) once per forward pass.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, NumericError


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    grad = np.asarray(grad)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Var:
    """A node in the recorded computation: a value plus backward callbacks.

    ``parents`` holds ``(parent, vjp)`` pairs where ``vjp`` maps the gradient
    at this node to the gradient contribution for that parent.
    """

    __slots__ = ("value", "parents", "grad")

    # Make `ndarray <op> Var` defer to Var's reflected operators instead of
    # numpy trying to absorb the Var into an object array.
    __array_ufunc__ = None

    def __init__(self, value, parents: tuple = (), op: str = "input"):
        v = np.asarray(value, dtype=np.float64)
        if not np.isfinite(v).all():
            raise NumericError(f"non-finite value produced by '{op}' node")
        self.value = v
        self.parents = parents
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __len__(self) -> int:
        return len(self.value)

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Var):
            return Var(
                self.value + other.value,
                (
                    (self, lambda g: _unbroadcast(g, self.value.shape)),
                    (other, lambda g: _unbroadcast(g, other.value.shape)),
                ),
                "add",
            )
        o = np.asarray(other, dtype=np.float64)
        return Var(
            self.value + o,
            ((self, lambda g: _unbroadcast(g, self.value.shape)),),
            "add",
        )

    __radd__ = __add__

    def __neg__(self):
        return Var(-self.value, ((self, lambda g: -np.asarray(g)),), "neg")

    def __sub__(self, other):
        return self + (-other if isinstance(other, Var) else -np.asarray(other, dtype=np.float64))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Var):
            return Var(
                self.value * other.value,
                (
                    (self, lambda g: _unbroadcast(g * other.value, self.value.shape)),
                    (other, lambda g: _unbroadcast(g * self.value, other.value.shape)),
                ),
                "mul",
            )
        o = np.asarray(other, dtype=np.float64)
        return Var(
            self.value * o,
            ((self, lambda g: _unbroadcast(g * o, self.value.shape)),),
            "mul",
        )

    __rmul__ = __mul__

    def __matmul__(self, other):
        a = self.value
        b = other.value if isinstance(other, Var) else np.asarray(other, dtype=np.float64)
        parents = [(self, lambda g: _matmul_vjp_left(g, a, b))]
        if isinstance(other, Var):
            parents.append((other, lambda g: _matmul_vjp_right(g, a, b)))
        return Var(a @ b, tuple(parents), "matmul")

    def __rmatmul__(self, other):
        a = np.asarray(other, dtype=np.float64)
        b = self.value
        return Var(a @ b, ((self, lambda g: _matmul_vjp_right(g, a, b)),), "matmul")

    def __getitem__(self, key):
        shape = self.value.shape

        def vjp(g):
            out = np.zeros(shape)
            out[key] = g
            return out

        return Var(self.value[key], ((self, vjp),), "index")

    # -- nonlinearities ---------------------------------------------------

    def tanh(self):
        t = np.tanh(self.value)
        return Var(t, ((self, lambda g: g * (1.0 - t * t)),), "tanh")

    def sigmoid(self):
        s = 1.0 / (1.0 + np.exp(-self.value))
        return Var(s, ((self, lambda g: g * s * (1.0 - s)),), "sigmoid")

    def spow(self, p: float):
        v = self.value
        out = np.sign(v) * np.abs(v) ** p
        return Var(out, ((self, lambda g: g * p * np.abs(v) ** (p - 1.0)),), "spow")

    def abs(self):
        return Var(np.abs(self.value), ((self, lambda g: g * np.sign(self.value)),), "abs")

    def sum(self):
        shape = self.value.shape
        return Var(self.value.sum(), ((self, lambda g: np.broadcast_to(g, shape).copy()),), "sum")


def _matmul_vjp_left(g, a, b):
    g = np.asarray(g)
    if a.ndim == 1 and b.ndim == 1:      # dot -> scalar
        return g * b
    if a.ndim == 2 and b.ndim == 1:      # (M,N)@(N,) -> (M,)
        return np.outer(g, b)
    if a.ndim == 1 and b.ndim == 2:      # (N,)@(N,P) -> (P,)
        return g @ b.T
    return g @ b.T                       # (M,N)@(N,P) -> (M,P)


def _matmul_vjp_right(g, a, b):
    g = np.asarray(g)
    if a.ndim == 1 and b.ndim == 1:
        return g * a
    if a.ndim == 2 and b.ndim == 1:
        return a.T @ g
    if a.ndim == 1 and b.ndim == 2:      # (N,)@(N,P): dB = outer(a, g)
        return np.outer(a, g)
    return a.T @ g


# ---------------------------------------------------------------------------
# Type-dispatching helpers: same call works on floats/ndarrays and Vars.
# ---------------------------------------------------------------------------


def tanh(x):
    return x.tanh() if isinstance(x, Var) else np.tanh(x)


def sigmoid(x):
    if isinstance(x, Var):
        return x.sigmoid()
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def spow(x, p: float):
    """Sign-preserving power ``sign(x) * |x|**p``; smooth for p >= 1."""
    if isinstance(x, Var):
        return x.spow(p)
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.abs(x) ** p


def absolute(x):
    return x.abs() if isinstance(x, Var) else np.abs(x)


def vsum(x):
    return x.sum() if isinstance(x, Var) else float(np.sum(x))


def matmul(a, b):
    if isinstance(a, Var):
        return a @ b
    if isinstance(b, Var):
        return b.__rmatmul__(np.asarray(a, dtype=np.float64))
    return np.asarray(a) @ np.asarray(b)


def stack(items: Sequence) -> "Var | np.ndarray":
    """Build a 1-D vector from scalars; differentiable w.r.t. Var entries."""
    if not any(isinstance(v, Var) for v in items):
        return np.asarray(items, dtype=np.float64)
    values = np.array(
        [v.value if isinstance(v, Var) else v for v in items], dtype=np.float64
    )
    parents = []
    for i, v in enumerate(items):
        if isinstance(v, Var):
            parents.append((v, _pick_vjp(i)))
    return Var(values, tuple(parents), "stack")


def _pick_vjp(i: int) -> Callable:
    return lambda g: np.asarray(g)[i]


# ---------------------------------------------------------------------------
# Backward pass and the public gradient API.
# ---------------------------------------------------------------------------


def _topo_order(root: Var) -> list[Var]:
    order: list[Var] = []
    seen: set[int] = set()
    stack_: list[tuple[Var, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack_.append((parent, False))
    return order


def backward(out: Var) -> None:
    """Accumulate gradients from a scalar output into ``.grad`` fields.

    Each node is visited exactly once, in reverse topological order.
    """
    if out.value.shape != ():
        raise DomainError("backward() requires a scalar output")
    order = _topo_order(out)
    out.grad = np.ones(())
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            if parent.grad is None:
                parent.grad = np.array(contrib, dtype=np.float64)
            else:
                parent.grad = parent.grad + contrib


def evaluate_with_gradient(
    fn: Callable[[Var], Var], inputs: np.ndarray
) -> tuple[float, np.ndarray]:
    """Evaluate ``fn`` at ``inputs`` and return ``(value, gradient)``.

    ``fn`` must map a 1-D :class:`Var` to a scalar :class:`Var` using only the
    supported primitives.  The gradient has the same length as ``inputs``;
    coordinates the output does not depend on get gradient zero.
    """
    x = Var(np.asarray(inputs, dtype=np.float64))
    out = fn(x)
    if not isinstance(out, Var) or out.value.shape != ():
        raise DomainError("fn must return a scalar Var")
    backward(out)
    grad = x.grad if x.grad is not None else np.zeros_like(x.value)
    return float(out.value), np.asarray(grad, dtype=np.float64)


def finite_diff_gradient(
    fn: Callable[[np.ndarray], float], inputs: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient ``(fn(u+h e_i) - fn(u-h e_i)) / 2h``.

    The verification oracle for :func:`evaluate_with_gradient`; ``fn`` here is
    a plain numpy function.  Default step suits unit-scale 64-bit inputs.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    u = np.asarray(inputs, dtype=np.float64)
    grad = np.zeros_like(u)
    for i in range(u.size):
        up = u.copy()
        dn = u.copy()
        up.flat[i] += h
        dn.flat[i] -= h
        grad.flat[i] = (fn(up) - fn(dn)) / (2.0 * h)
    return grad
