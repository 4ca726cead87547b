"""Reverse-mode automatic differentiation over numpy float64 arrays.

A Var wraps an array value together with the closure that routes output
gradients back to its parents.  Graphs are rebuilt on every forward pass
(define-by-run), backward walks the tape once in reverse topological order,
and broadcasting in any binary op is undone by summing the gradient over the
broadcast axes.  The primitive set is exactly what the trajectory model
needs: arithmetic, matmul, pointwise nonlinearities, trigonometry for the
sphere decoding, and shape plumbing (reshape/concat/slice/repeat/reductions).
"""

from dataclasses import dataclass

import numpy as np

_FINITE_CHECKS = False


def set_finite_checks(enabled):
    """Toggle per-node finiteness validation; returns the previous setting.

    Off by default: the check costs a full pass over every intermediate.
    Tests and debugging turn it on so a NaN is reported at the op that made
    it rather than at the loss.
    """
    global _FINITE_CHECKS
    previous = _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)
    return previous


def _unbroadcast(grad, shape):
    # undo numpy broadcasting: sum over prepended axes, then over axes of
    # size 1 that were stretched
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    stretched = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if stretched:
        grad = grad.sum(axis=stretched, keepdims=True)
    return grad


class Var:
    """One node of the computation graph: float64 array plus backward rule."""

    __slots__ = ("value", "grad", "op", "_parents", "_backward")
    __array_ufunc__ = None  # keep numpy from absorbing Var into object arrays

    def __init__(self, value, parents=(), backward=None, op="leaf"):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.op = op
        self._parents = parents
        self._backward = backward
        if _FINITE_CHECKS and not np.all(np.isfinite(self.value)):
            raise FloatingPointError(f"non-finite value produced by op {op!r}")

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(op={self.op!r}, shape={self.value.shape})"

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = lift(other)
        return Var(
            self.value + other.value,
            (self, other),
            lambda g: (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape)),
            "add",
        )

    __radd__ = __add__

    def __sub__(self, other):
        other = lift(other)
        return Var(
            self.value - other.value,
            (self, other),
            lambda g: (_unbroadcast(g, self.shape), _unbroadcast(-g, other.shape)),
            "sub",
        )

    def __rsub__(self, other):
        return lift(other).__sub__(self)

    def __mul__(self, other):
        other = lift(other)
        return Var(
            self.value * other.value,
            (self, other),
            lambda g: (
                _unbroadcast(g * other.value, self.shape),
                _unbroadcast(g * self.value, other.shape),
            ),
            "mul",
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = lift(other)
        return Var(
            self.value / other.value,
            (self, other),
            lambda g: (
                _unbroadcast(g / other.value, self.shape),
                _unbroadcast(-g * self.value / other.value**2, other.shape),
            ),
            "div",
        )

    def __rtruediv__(self, other):
        return lift(other).__truediv__(self)

    def __neg__(self):
        return Var(-self.value, (self,), lambda g: (-g,), "neg")

    def __pow__(self, exponent):
        if isinstance(exponent, Var):
            raise TypeError("only constant exponents are supported")
        c = float(exponent)
        return Var(
            self.value**c,
            (self,),
            lambda g: (g * c * self.value ** (c - 1.0),),
            "pow",
        )

    def __matmul__(self, other):
        other = lift(other)
        if self.ndim != 2 or other.ndim != 2:
            raise ValueError("matmul expects 2-D operands")
        return Var(
            self.value @ other.value,
            (self, other),
            lambda g: (g @ other.value.T, self.value.T @ g),
            "matmul",
        )

    def __rmatmul__(self, other):
        return lift(other).__matmul__(self)

    def __getitem__(self, index):
        def bwd(g):
            full = np.zeros_like(self.value)
            np.add.at(full, index, g)
            return (full,)

        return Var(self.value[index], (self,), bwd, "getitem")

    # -- shape plumbing ------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Var(
            self.value.reshape(shape),
            (self,),
            lambda g: (g.reshape(self.value.shape),),
            "reshape",
        )

    def sum(self, axis=None, keepdims=False):
        def bwd(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, self.value.shape),)

        return Var(self.value.sum(axis=axis, keepdims=keepdims), (self,), bwd, "sum")

    def mean(self, axis=None, keepdims=False):
        ratio = self.value.size / self.value.sum(axis=axis, keepdims=keepdims).size

        def bwd(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g / ratio, self.value.shape),)

        return Var(self.value.mean(axis=axis, keepdims=keepdims), (self,), bwd, "mean")


def lift(x):
    """Wrap a number or array as a constant node; Vars pass through."""
    return x if isinstance(x, Var) else Var(x, op="const")


def _pointwise(name, fn, dfn):
    def op(x):
        x = lift(x)
        y = fn(x.value)
        return Var(y, (x,), lambda g: (g * dfn(x.value, y),), name)

    op.__name__ = name
    op.__doc__ = f"Elementwise {name} with exact analytic backward."
    return op


tanh = _pointwise("tanh", np.tanh, lambda x, y: 1.0 - y * y)
sigmoid = _pointwise("sigmoid", lambda x: 1.0 / (1.0 + np.exp(-x)), lambda x, y: y * (1.0 - y))
sin = _pointwise("sin", np.sin, lambda x, y: np.cos(x))
cos = _pointwise("cos", np.cos, lambda x, y: -np.sin(x))
tan = _pointwise("tan", np.tan, lambda x, y: 1.0 + y * y)
exp = _pointwise("exp", np.exp, lambda x, y: y)


def affine(x, w, b):
    """x @ w + b as a single node; skips materializing the product."""
    x, w, b = lift(x), lift(w), lift(b)
    if x.ndim != 2 or w.ndim != 2:
        raise ValueError("affine expects 2-D x and w")

    def bwd(g):
        return g @ w.value.T, x.value.T @ g, _unbroadcast(g, b.value.shape)

    return Var(x.value @ w.value + b.value, (x, w, b), bwd, "affine")


def tanh_affine(x, w, b):
    """tanh(x @ w + b) as a single node; the preactivation is never stored."""
    x, w, b = lift(x), lift(w), lift(b)
    if x.ndim != 2 or w.ndim != 2:
        raise ValueError("tanh_affine expects 2-D x and w")
    y = np.tanh(x.value @ w.value + b.value)

    def bwd(g):
        ga = g * (1.0 - y * y)
        return ga @ w.value.T, x.value.T @ ga, _unbroadcast(ga, b.value.shape)

    return Var(y, (x, w, b), bwd, "tanh_affine")


def concat(parts, axis=0):
    parts = [lift(p) for p in parts]
    sizes = np.cumsum([p.value.shape[axis] for p in parts])[:-1]

    def bwd(g):
        return tuple(np.split(g, sizes, axis=axis))

    return Var(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), bwd, "concat")


def repeat_rows(x, repeats):
    """Repeat each row of a 2-D node `repeats` times (row i -> rows i*r..i*r+r-1)."""
    x = lift(x)
    n, r = x.value.shape[0], int(repeats)

    def bwd(g):
        return (g.reshape(n, r, *x.value.shape[1:]).sum(axis=1),)

    return Var(np.repeat(x.value, r, axis=0), (x,), bwd, "repeat_rows")


def backward(root, seed=None):
    """Accumulate d(root)/d(node) into .grad over the graph below root."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value) if seed is None else np.asarray(seed, dtype=float)

    for node in reversed(order):
        if node.grad is None or node._backward is None:
            continue
        for parent, g in zip(node._parents, node._backward(node.grad)):
            if parent.grad is None:
                # copy: g may alias another node's grad or be a read-only view
                parent.grad = np.array(g)
            else:
                parent.grad += g


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_checked: int
    n_dead: int


def grad_check(fn, params, eps=1e-6, dead_tol=1e-12, max_entries=None, seed=0):
    """Compare backward() gradients of fn() against central differences.

    fn rebuilds its graph from the .value arrays of `params` (a dict of leaf
    Vars) on every call, so perturbing those arrays in place re-evaluates the
    whole program.  Entries whose gradient is ~0 by both routes carry no
    relative-error information; they are skipped and counted as dead.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError("eps must lie in [1e-7, 1e-4]")
    items = sorted(params.items())
    loss = fn()
    if loss.value.size != 1:
        raise ValueError("grad_check needs a scalar-valued program")
    backward(loss)
    analytic = {
        name: (np.zeros_like(v.value) if v.grad is None else v.grad.copy())
        for name, v in items
    }

    rng = np.random.default_rng(seed)
    worst, n_checked, n_dead = 0.0, 0, 0
    for name, v in items:
        flat = v.value.reshape(-1)
        ana_flat = analytic[name].reshape(-1)
        idxs = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idxs = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        for i in idxs:
            original = flat[i]
            flat[i] = original + eps
            f_plus = float(fn().value)
            flat[i] = original - eps
            f_minus = float(fn().value)
            flat[i] = original
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(numeric), abs(ana_flat[i]))
            if denom <= dead_tol:
                n_dead += 1
                continue
            worst = max(worst, abs(numeric - ana_flat[i]) / denom)
            n_checked += 1
    return GradCheckResult(worst, n_checked, n_dead)
