"""Elementwise activations with Taylor-coefficient tables.

Each activation returns ``series(x, order)`` with
``series[j] = sigma^(j)(x) / j!`` for ``j = 0..order``.

ReLU uses the almost-everywhere convention ``sigma'(t) = 1{t > 0}`` and
zero for every higher derivative, which is what nested JVPs through
``max(t, 0)`` compute in autodiff frameworks.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np
from numpy.polynomial import polynomial as P

SUPPORTED = ("relu", "tanh", "softplus", "square", "linear", "exp")


@lru_cache(maxsize=None)
def _tanh_polys(order: int) -> tuple:
    # d^n/dx^n tanh(x) = p_n(tanh x), p_{n+1}(t) = p_n'(t) (1 - t^2)
    polys = [np.array([0.0, 1.0])]
    for _ in range(order):
        polys.append(P.polymul(P.polyder(polys[-1]), [1.0, 0.0, -1.0]))
    return tuple(polys)


@lru_cache(maxsize=None)
def _sigmoid_polys(order: int) -> tuple:
    # d^n/dz^n sigmoid(z) = q_n(sigmoid z), q_{n+1}(s) = q_n'(s) s (1 - s)
    polys = [np.array([0.0, 1.0])]
    for _ in range(order):
        polys.append(P.polymul(P.polyder(polys[-1]), [0.0, 1.0, -1.0]))
    return tuple(polys)


def _sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass(frozen=True)
class Activation:
    """An activation function; ``beta`` is the softplus sharpness."""

    name: str
    beta: float = 4.0

    def __post_init__(self):
        if self.name not in SUPPORTED:
            raise ValueError(f"unknown activation {self.name!r}; choose from {SUPPORTED}")

    @property
    def smooth(self) -> bool:
        return self.name != "relu"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.name == "relu":
            return np.maximum(x, 0.0)
        if self.name == "tanh":
            return np.tanh(x)
        if self.name == "softplus":
            z = self.beta * x
            return (np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))) / self.beta
        if self.name == "square":
            return x * x
        if self.name == "linear":
            return x.copy()
        return np.exp(x)

    def derivative(self, x):
        return self.series(x, 1)[1]

    def series(self, x, order: int) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros((order + 1,) + x.shape)
        out[0] = self(x)
        if order == 0:
            return out
        name = self.name
        if name == "relu":
            out[1] = (x > 0).astype(float)
        elif name == "square":
            out[1] = 2.0 * x
            if order >= 2:
                out[2] = 1.0
        elif name == "linear":
            out[1] = 1.0
        elif name == "exp":
            for j in range(1, order + 1):
                out[j] = out[0] / factorial(j)
        elif name == "tanh":
            t = out[0]
            polys = _tanh_polys(order)
            for j in range(1, order + 1):
                out[j] = P.polyval(t, polys[j]) / factorial(j)
        else:  # softplus: sigma^(j)(x) = beta^(j-1) sigmoid^(j-1)(beta x)
            s = _sigmoid(self.beta * x)
            polys = _sigmoid_polys(order)
            for j in range(1, order + 1):
                out[j] = self.beta ** (j - 1) * P.polyval(s, polys[j - 1]) / factorial(j)
        return out

    def max_abs_derivative(self) -> float:
        """sup |sigma'| on the real line (inf for unbounded derivatives)."""
        if self.name in ("relu", "tanh", "softplus", "linear"):
            return 1.0
        return float("inf")


def get_activation(spec) -> Activation:
    """Accept an :class:`Activation`, a name, or ``"softplus(beta)"``."""
    if isinstance(spec, Activation):
        return spec
    spec = str(spec).strip().lower()
    if spec.startswith("softplus(") and spec.endswith(")"):
        return Activation("softplus", float(spec[len("softplus("):-1]))
    return Activation(spec)
