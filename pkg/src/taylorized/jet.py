"""Truncated Taylor series ("jets") along a scalar ray.

A :class:`Jet` of order ``k`` stores ``coeffs[j] = (1/j!) d^j/dr^j v(r)`` at
``r = 0`` for a tensor-valued quantity ``v``.  Lifting every parameter as
``theta0 + r * (theta - theta0)`` and pushing jets through a network yields all
the terms of its order-``k`` Taylor expansion around ``theta0`` in a single
forward pass; summing the coefficients evaluates the expansion at ``r = 1``.

Coefficients are stacked along a leading axis of length ``k + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

MAX_ORDER = 8


def _check_order(k: int, minimum: int = 0) -> None:
    if not minimum <= k <= MAX_ORDER:
        raise ValueError(f"jet order must be in {minimum}..{MAX_ORDER}, got {k}")


@dataclass(frozen=True)
class Jet:
    coeffs: np.ndarray

    def __post_init__(self):
        if self.coeffs.ndim < 1:
            raise ValueError("jet coefficients need a leading order axis")
        _check_order(self.coeffs.shape[0] - 1)

    @property
    def order(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def shape(self) -> tuple:
        return self.coeffs.shape[1:]

    def __getitem__(self, j):
        return self.coeffs[j]

    def __add__(self, other):
        return jet_add(self, other)

    def __mul__(self, other):
        if isinstance(other, Jet):
            return jet_mul(self, other)
        return jet_scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return jet_scale(self, -1.0)

    def __sub__(self, other):
        return jet_add(self, -other)


@dataclass(frozen=True)
class ScalarSeries:
    """Per-entry Taylor coefficients ``sigma^(j)(point) / j!`` of an
    elementwise function, stacked along a leading axis."""

    coeffs: np.ndarray

    @property
    def order(self) -> int:
        return self.coeffs.shape[0] - 1


def jet_lift_param(base, direction, k: int) -> Jet:
    base = np.asarray(base, dtype=float)
    direction = np.asarray(direction, dtype=float)
    _check_order(k, 1)
    if base.shape != direction.shape:
        raise ValueError(f"base {base.shape} and direction {direction.shape} differ in shape")
    coeffs = np.zeros((k + 1,) + base.shape, dtype=np.result_type(base, direction))
    coeffs[0] = base
    coeffs[1] = direction
    return Jet(coeffs)


def jet_lift_const(value, k: int) -> Jet:
    value = np.asarray(value, dtype=float)
    _check_order(k)
    coeffs = np.zeros((k + 1,) + value.shape, dtype=value.dtype)
    coeffs[0] = value
    return Jet(coeffs)


def _same_order(a: Jet, b: Jet) -> None:
    if a.order != b.order:
        raise ValueError(f"jet orders differ: {a.order} vs {b.order}")


def jet_add(a: Jet, b: Jet) -> Jet:
    _same_order(a, b)
    if a.shape != b.shape:
        raise ValueError(f"jet shapes differ: {a.shape} vs {b.shape}")
    return Jet(a.coeffs + b.coeffs)


def jet_scale(a: Jet, c: float) -> Jet:
    return Jet(a.coeffs * c)


def _nonzero(stack: np.ndarray) -> list:
    return [bool(c.any()) for c in stack]


def cauchy(a: np.ndarray, b: np.ndarray, op: Callable = np.multiply, order: int | None = None) -> np.ndarray:
    """Truncated Cauchy product of two coefficient stacks under bilinear ``op``.

    ``out[j] = sum_{i<=j} op(a[i], b[j-i])`` for ``j <= order``.  Terms whose
    factor is identically zero (constant inputs, lifted parameters) are skipped.
    """
    k = a.shape[0] - 1 if order is None else order
    nza, nzb = _nonzero(a), _nonzero(b)
    first = op(a[0], b[0])
    out = np.zeros((k + 1,) + first.shape, dtype=first.dtype)
    out[0] = first
    for j in range(1, k + 1):
        for i in range(j + 1):
            if nza[i] and nzb[j - i]:
                out[j] += op(a[i], b[j - i])
    return out


def cauchy_adjoint_left(g: np.ndarray, b: np.ndarray, op_t: Callable) -> np.ndarray:
    """Adjoint of ``a -> cauchy(a, b)``: ``ga[i] = sum_{j>=i} op_t(g[j], b[j-i])``."""
    k = g.shape[0] - 1
    nzg, nzb = _nonzero(g), _nonzero(b)
    first = op_t(g[0], b[0])
    out = np.zeros((k + 1,) + first.shape, dtype=first.dtype)
    out[0] = first
    for i in range(k + 1):
        for j in range(i, k + 1):
            if (i, j) != (0, 0) and nzg[j] and nzb[j - i]:
                out[i] += op_t(g[j], b[j - i])
    return out


def jet_mul(a: Jet, b: Jet) -> Jet:
    _same_order(a, b)
    return Jet(cauchy(a.coeffs, b.coeffs, np.multiply))


def jet_matmul(a: Jet, b: Jet) -> Jet:
    """Jet of ``a @ b`` with contraction over the inner index."""
    _same_order(a, b)
    return Jet(cauchy(a.coeffs, b.coeffs, np.matmul))


def compose_coeffs(series: np.ndarray, a: np.ndarray, order: int | None = None) -> np.ndarray:
    """Coefficients of ``sigma(a(r))`` given the series of ``sigma`` at ``a[0]``.

    Evaluates ``sum_j s_j u^j`` in the nilpotent part ``u = a - a[0]``, building
    the truncated powers ``u^j`` incrementally (``(u^j)[n] = 0`` for ``n < j``).
    ``series`` may be longer than needed; extra terms are ignored.
    """
    k = a.shape[0] - 1 if order is None else order
    out = np.empty((k + 1,) + a.shape[1:], dtype=np.result_type(series, a))
    out[0] = series[0]
    if k == 0:
        return out
    u = a[: k + 1]
    live = [m for m in range(1, k + 1) if u[m].any()]
    power = {n: u[n] for n in range(1, k + 1)}          # u^1, keyed by coefficient index
    for n in range(1, k + 1):
        out[n] = series[1] * u[n]
    tmp = np.empty(a.shape[1:], dtype=out.dtype)
    for j in range(2, k + 1):
        nxt = {}
        for n in range(j, k + 1):
            acc = None
            for m in live:
                if n - m >= j - 1 and power[n - m] is not None:
                    np.multiply(power[n - m], u[m], out=tmp)
                    if acc is None:
                        acc = tmp.copy()
                    else:
                        acc += tmp
            nxt[n] = acc
        power = nxt
        for n in range(j, k + 1):
            if power[n] is not None:
                out[n] += series[j] * power[n]
    return out


def jet_compose(series: ScalarSeries, a: Jet) -> Jet:
    if series.order < a.order:
        raise ValueError(f"series order {series.order} below jet order {a.order}")
    return Jet(compose_coeffs(series.coeffs, a.coeffs))


def jet_eval_sum(a: Jet) -> np.ndarray:
    """Evaluate the truncated series at ``r = 1``."""
    return a.coeffs.sum(axis=0)
