"""Reverse-mode differentiation over jet-valued computations.

Every node on a :class:`Tape` holds a stack of jet coefficients with a
leading axis of length ``order + 1``.  Full training records with
``order = 0`` (plain values), Taylorized training with ``order = k``.  The
forward of each primitive is an ordinary real-valued computation on the
coefficient stack, so its backward rule is ordinary reverse mode on that
enlarged computation.

Parameters enter as leaves.  With ``order = 0`` the leaf is ``[theta]``; with
``order >= 1`` it is ``[theta0, theta - theta0, 0, ...]`` and ``theta0`` is a
constant, so the gradient w.r.t. ``theta`` is the adjoint of coefficient 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .activations import Activation
from .jet import MAX_ORDER, cauchy, cauchy_adjoint_left, compose_coeffs


class TapeError(RuntimeError):
    pass


@dataclass(eq=False)
class Var:
    tape: "Tape"
    index: int
    value: np.ndarray

    @property
    def order(self) -> int:
        return self.value.shape[0] - 1

    @property
    def shape(self) -> tuple:
        return self.value.shape[1:]

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Var):
            return mul(self, other)
        return scale(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass(eq=False)
class _Node:
    parents: tuple
    backward: Callable | None
    forward: Callable | None
    param: str | None = None


@dataclass(eq=False)
class Tape:
    """Append-only record of primitive operations."""

    order: int = 0
    nodes: list = field(default_factory=list)
    values: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    sealed: bool = False

    def __post_init__(self):
        if not 0 <= self.order <= MAX_ORDER:
            raise ValueError(f"tape order must be in 0..{MAX_ORDER}")

    def _record(self, value, parents=(), backward=None, forward=None, param=None) -> Var:
        if self.sealed:
            raise TapeError("tape is sealed")
        for p in parents:
            if p.tape is not self:
                raise TapeError("operand recorded on a different tape")
        self.nodes.append(_Node(tuple(p.index for p in parents), backward, forward, param))
        self.values.append(value)
        return Var(self, len(self.nodes) - 1, value)

    def param(self, name: str, theta, theta0=None) -> Var:
        """Leaf for a trainable tensor.  ``theta0`` is required when ``order >= 1``."""
        if name in self.params:
            raise TapeError(f"parameter {name!r} recorded twice")
        theta = np.asarray(theta, dtype=float)
        stack = np.zeros((self.order + 1,) + theta.shape, dtype=theta.dtype)
        if self.order == 0:
            stack[0] = theta
        else:
            if theta0 is None:
                raise TapeError(f"parameter {name!r} needs an anchor for order {self.order}")
            theta0 = np.asarray(theta0, dtype=float)
            stack[0] = theta0
            stack[1] = theta - theta0
        var = self._record(stack, param=name)
        self.params[name] = var.index
        return var

    def const(self, value) -> Var:
        value = np.asarray(value, dtype=float)
        stack = np.zeros((self.order + 1,) + value.shape, dtype=value.dtype)
        stack[0] = value
        return self._record(stack)

    def seal(self) -> "Tape":
        self.sealed = True
        return self

    def replay(self) -> list:
        """Recompute every non-leaf node from its parents' recorded values."""
        out = []
        for node, value in zip(self.nodes, self.values):
            if node.forward is None:
                out.append(value)
            else:
                out.append(node.forward(*[out[i] for i in node.parents]))
        return out


def backward(tape: Tape, loss: Var) -> dict:
    """Gradient of the scalar ``loss`` with respect to every parameter leaf."""
    if loss.tape is not tape:
        raise TapeError("loss was not recorded on this tape")
    if loss.value.size != 1:
        raise TapeError(f"loss must be scalar, got value of shape {loss.value.shape}")
    if loss.index >= len(tape.nodes):
        raise TapeError("tape truncated before the loss node")
    tape.seal()
    adj: list = [None] * len(tape.nodes)
    adj[loss.index] = np.ones_like(loss.value)
    for idx in range(loss.index, -1, -1):
        g = adj[idx]
        node = tape.nodes[idx]
        if g is None or node.backward is None:
            continue
        parent_vals = [tape.values[i] for i in node.parents]
        grads = node.backward(g, tape.values[idx], *parent_vals)
        for pidx, pg in zip(node.parents, grads):
            if pg is None:
                continue
            adj[pidx] = pg if adj[pidx] is None else adj[pidx] + pg
    grads = {}
    slot = 0 if tape.order == 0 else 1
    for name, idx in tape.params.items():
        a = adj[idx]
        grads[name] = np.zeros(tape.values[idx].shape[1:]) if a is None else a[slot].copy()
    return grads


# ----------------------------------------------------------------- primitives

def _align(stack: np.ndarray, ndim: int) -> np.ndarray:
    """Insert unit axes after the order axis so ``stack`` broadcasts to ``ndim``."""
    extra = ndim - stack.ndim
    if extra <= 0:
        return stack
    return stack.reshape(stack.shape[:1] + (1,) * extra + stack.shape[1:])


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    target = _align(np.empty(shape, dtype=bool), g.ndim).shape
    axes = tuple(i for i, (gs, ts) in enumerate(zip(g.shape, target)) if ts == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a: Var, b: Var) -> Var:
    def fwd(x, y):
        n = max(x.ndim, y.ndim)
        return _align(x, n) + _align(y, n)

    def bwd(g, out, x, y):
        return _unbroadcast(g, x.shape), _unbroadcast(g, y.shape)

    return a.tape._record(fwd(a.value, b.value), (a, b), bwd, fwd)


def scale(a: Var, c: float) -> Var:
    c = float(c)

    def fwd(x):
        return x * c

    def bwd(g, out, x):
        return (g * c,)

    return a.tape._record(fwd(a.value), (a,), bwd, fwd)


def mul(a: Var, b: Var) -> Var:
    def fwd(x, y):
        n = max(x.ndim, y.ndim)
        return cauchy(_align(x, n), _align(y, n), np.multiply)

    def bwd(g, out, x, y):
        n = g.ndim
        gx = cauchy_adjoint_left(g, _align(y, n), np.multiply)
        gy = cauchy_adjoint_left(g, _align(x, n), np.multiply)
        return _unbroadcast(gx, x.shape), _unbroadcast(gy, y.shape)

    return a.tape._record(fwd(a.value, b.value), (a, b), bwd, fwd)


def _matmul_t_right(g, b):
    return g @ np.swapaxes(b, -1, -2)


def _matmul_t_left(g, a):
    return np.swapaxes(a, -1, -2) @ g


def matmul(a: Var, b: Var) -> Var:
    """Jet-valued ``a @ b`` for 2-d operands."""
    if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def fwd(x, y):
        return cauchy(x, y, np.matmul)

    def bwd(g, out, x, y):
        return (cauchy_adjoint_left(g, y, _matmul_t_right),
                cauchy_adjoint_left(g, x, lambda gj, xi: _matmul_t_left(gj, xi)))

    return a.tape._record(fwd(a.value, b.value), (a, b), bwd, fwd)


def activate(a: Var, act: Activation, series: np.ndarray | None = None) -> Var:
    """Elementwise ``act`` applied to a jet.

    ``series`` optionally supplies precomputed Taylor coefficients of ``act`` at
    ``a.value[0]`` up to order ``a.order + 1``.

    The linearization of ``u -> sigma(u)`` in jet arithmetic is multiplication
    by the jet ``sigma'(u)``, so the backward pass is the transpose of that
    truncated product.
    """
    k = a.order
    if series is None:
        series = act.series(a.value[0], k + 1)
    elif series.shape != (k + 2,) + a.shape:
        raise ValueError(f"series shape {series.shape} does not fit jet of order {k} and shape {a.shape}")

    def fwd(x):
        return compose_coeffs(act.series(x[0], k), x)

    def bwd(g, out, x):
        dseries = np.stack([(j + 1) * series[j + 1] for j in range(k + 1)])
        deriv = compose_coeffs(dseries, x)
        return (cauchy_adjoint_left(g, deriv, np.multiply),)

    value = compose_coeffs(series, a.value)
    return a.tape._record(value, (a,), bwd, fwd)


def linear_map(a: Var, fn: Callable, fn_t: Callable) -> Var:
    """Apply a linear map ``fn`` coefficient-wise; ``fn_t`` is its transpose."""

    def fwd(x):
        return np.stack([fn(c) for c in x])

    def bwd(g, out, x):
        return (np.stack([fn_t(c) for c in g]),)

    return a.tape._record(fwd(a.value), (a,), bwd, fwd)


def reshape(a: Var, shape: tuple) -> Var:
    old = a.shape
    return linear_map(a, lambda c: c.reshape(shape), lambda c: c.reshape(old))


def eval_sum(a: Var) -> Var:
    """Sum the coefficients (evaluate at r = 1); the result has order 0."""

    def fwd(x):
        return x.sum(axis=0, keepdims=True)

    def bwd(g, out, x):
        return (np.broadcast_to(g, x.shape).copy(),)

    return a.tape._record(fwd(a.value), (a,), bwd, fwd)


def _as_plain(a: Var) -> np.ndarray:
    if a.value.shape[0] != 1:
        raise TapeError("loss primitives expect an evaluated (order-0) input; call eval_sum first")
    return a.value[0]


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def one_hot(labels, classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((labels.shape[0], classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def cross_entropy(logits: Var, labels) -> Var:
    z = _as_plain(logits)
    if z.ndim != 2:
        raise ValueError("cross_entropy expects logits of shape (batch, classes)")
    y = one_hot(labels, z.shape[1])

    def fwd(x):
        return np.array([-(log_softmax(x[0]) * y).sum() / x.shape[1]])

    def bwd(g, out, x):
        p = np.exp(log_softmax(x[0]))
        return ((g[0] * (p - y) / x.shape[1])[None],)

    return logits.tape._record(fwd(logits.value), (logits,), bwd, fwd)


def squared_loss(outputs: Var, targets) -> Var:
    """``mean_i 1/2 ||f(x_i) - y_i||^2``; integer labels are one-hot encoded."""
    z = _as_plain(outputs)
    targets = np.asarray(targets)
    if targets.dtype.kind in "iu" and z.ndim == 2 and targets.ndim == 1:
        targets = one_hot(targets, z.shape[1])
    targets = targets.reshape(z.shape).astype(float)
    n = z.shape[0]

    def fwd(x):
        return np.array([0.5 * ((x[0] - targets) ** 2).sum() / n])

    def bwd(g, out, x):
        return ((g[0] * (x[0] - targets) / n)[None],)

    return outputs.tape._record(fwd(outputs.value), (outputs,), bwd, fwd)


def grad_check(loss_fn: Callable[[Mapping], Var], params, step: float = 1e-5,
               n_coords: int = 50, seed: int = 0) -> float:
    """Max relative error between tape gradients and central differences.

    ``loss_fn`` maps a ``{name: array}`` dict to a scalar :class:`Var` on a
    fresh tape.  ``params`` is such a dict (or anything with ``.theta``).
    """
    if not step > 0:
        raise ValueError("step must be positive")
    theta = {k: np.array(v, dtype=float) for k, v in getattr(params, "theta", params).items()}
    loss = loss_fn(theta)
    grads = backward(loss.tape, loss)
    coords = [(name, i) for name in sorted(theta) for i in range(theta[name].size)]
    rng = np.random.default_rng(seed)
    if len(coords) > n_coords:
        coords = [coords[i] for i in sorted(rng.choice(len(coords), n_coords, replace=False))]
    worst = 0.0
    for name, i in coords:
        vals = []
        for sgn in (1.0, -1.0):
            pert = {k: v.copy() for k, v in theta.items()}
            pert[name].flat[i] += sgn * step
            val = float(loss_fn(pert).value.sum())
            if not np.isfinite(val):
                raise FloatingPointError(f"non-finite loss while probing {name}[{i}]")
            vals.append(val)
        fd = (vals[0] - vals[1]) / (2 * step)
        an = float(grads[name].flat[i])
        worst = max(worst, abs(an - fd) / (abs(an) + abs(fd) + 1e-12))
    return worst
