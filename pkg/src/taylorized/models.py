"""Architectures, initialization and the full / Taylorized forward passes.

Weights are stored as ``(fan_in, fan_out)`` so a batch of row vectors is
mapped as ``x @ W + b``.  Under the NTK scheme each weight matmul is
multiplied by ``1/sqrt(fan_in)`` in the forward pass instead of in the
initialization variance.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import diffgraph as dg
from .activations import Activation, get_activation
from .tensor import RngStream, gaussian_fill

SCHEMES = ("standard", "ntk")
LOSSES = ("cross_entropy", "squared")


@dataclass(frozen=True)
class Architecture:
    """``kind="mlp"`` uses ``dims = (d_0, ..., d_L)``.

    ``kind="cnn"`` is CNN-``depth``-``channels``: ``depth`` 3x3 stride-1
    zero-padded conv layers, global average pooling, one dense classifier.
    Inputs are NHWC with ``image_shape = (H, W, C_in)``.
    """

    kind: str = "mlp"
    dims: tuple = (2, 16, 1)
    activation: str = "tanh"
    depth: int = 0
    channels: int = 0
    kernel: int = 3
    image_shape: tuple = ()
    classes: int = 0

    def __post_init__(self):
        if self.kind not in ("mlp", "cnn"):
            raise ValueError(f"unknown architecture kind {self.kind!r}")
        get_activation(self.activation)
        if self.kind == "mlp":
            if len(self.dims) < 2 or min(self.dims) <= 0:
                raise ValueError(f"invalid MLP dims {self.dims}")
        else:
            if self.depth < 1 or self.channels < 1 or self.classes < 1 or len(self.image_shape) != 3:
                raise ValueError("CNN needs depth, channels, classes and image_shape=(H, W, C)")
            if self.kernel % 2 != 1:
                raise ValueError("kernel size must be odd")

    @property
    def act(self) -> Activation:
        return get_activation(self.activation)

    @property
    def out_dim(self) -> int:
        return self.dims[-1] if self.kind == "mlp" else self.classes

    @property
    def input_shape(self) -> tuple:
        return (self.dims[0],) if self.kind == "mlp" else tuple(self.image_shape)

    def layer_shapes(self) -> list:
        """``[(layer_name, W_shape, b_shape), ...]`` in forward order."""
        if self.kind == "mlp":
            return [(f"layer{i + 1}", (a, b), (b,))
                    for i, (a, b) in enumerate(zip(self.dims[:-1], self.dims[1:]))]
        c_in = self.image_shape[2]
        out = []
        for i in range(self.depth):
            fan_in = self.kernel * self.kernel * (c_in if i == 0 else self.channels)
            out.append((f"conv{i + 1}", (fan_in, self.channels), (self.channels,)))
        out.append(("dense", (self.channels, self.classes), (self.classes,)))
        return out


@dataclass
class ParamSet:
    """Live parameters ``theta`` plus the frozen anchor ``theta0``."""

    theta: dict
    theta0: dict
    scheme: str = "standard"
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if list(self.theta) != list(self.theta0) or any(
                self.theta[k].shape != self.theta0[k].shape for k in self.theta):
            raise ValueError("theta and theta0 must have identical names and shapes")

    @property
    def names(self) -> list:
        return list(self.theta)

    def layers(self) -> dict:
        """Ordered ``{layer_name: [param names]}``."""
        groups: dict = {}
        for name in self.theta:
            groups.setdefault(name.split("/")[0], []).append(name)
        return groups

    def with_theta(self, theta: dict) -> "ParamSet":
        return replace(self, theta={k: np.asarray(theta[k], dtype=float) for k in self.theta})

    def copy(self) -> "ParamSet":
        return ParamSet({k: v.copy() for k, v in self.theta.items()},
                        {k: v.copy() for k, v in self.theta0.items()}, self.scheme, self.seed)

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.theta.values()])

    def flat0(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.theta0.values()])


def init_params(arch: Architecture, scheme: str = "standard", seed: int = 0) -> ParamSet:
    """Standard: ``W ~ N(0, 1/fan_in)``; NTK: ``W ~ N(0, 1)``; biases ``N(0, 1)``.

    Both schemes consume the same underlying normal draws for a given seed.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    theta = {}
    stream = 0
    for layer, w_shape, b_shape in arch.layer_shapes():
        std = 1.0 / np.sqrt(w_shape[0]) if scheme == "standard" else 1.0
        theta[f"{layer}/W"] = gaussian_fill(w_shape, std, RngStream(seed, stream))
        theta[f"{layer}/b"] = gaussian_fill(b_shape, 1.0, RngStream(seed, stream + 1))
        stream += 2
    return ParamSet(theta, {k: v.copy() for k, v in theta.items()}, scheme, seed)


# ------------------------------------------------------------------ forward

def _im2col(x: np.ndarray, kernel: int) -> np.ndarray:
    n, h, w, c = x.shape
    p = kernel // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kernel, kernel), axis=(1, 2))
    # win: (n, h, w, c, kh, kw) -> rows ordered (kh, kw, c)
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, kernel * kernel * c)


def _col2im(cols: np.ndarray, shape: tuple, kernel: int) -> np.ndarray:
    n, h, w, c = shape
    p = kernel // 2
    cols = cols.reshape(n, h, w, kernel, kernel, c)
    out = np.zeros((n, h + 2 * p, w + 2 * p, c))
    for i in range(kernel):
        for j in range(kernel):
            out[:, i:i + h, j:j + w, :] += cols[:, :, :, i, j, :]
    return out[:, p:p + h, p:p + w, :]


def record_forward(tape: dg.Tape, arch: Architecture, params: ParamSet, x,
                   series: dict | None = None) -> dg.Var:
    """Record the network on ``tape`` and return the (jet-valued) logits.

    With ``tape.order == 0`` this is the plain network at ``params.theta``;
    otherwise the coefficients of its expansion around ``params.theta0``.
    ``series`` (MLP only) maps layer name to the activation series at the
    anchor pre-activations, see :func:`anchor_series`.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[1:] != arch.input_shape:
        raise ValueError(f"input shape {x.shape[1:]} does not match {arch.input_shape}")
    ntk = params.scheme == "ntk"
    act = arch.act

    def leaf(name):
        return tape.param(name, params.theta[name], params.theta0[name] if tape.order else None)

    def dense(h, layer, fan_in):
        out = h @ leaf(f"{layer}/W")
        if ntk:
            out = dg.scale(out, 1.0 / np.sqrt(fan_in))
        return out + leaf(f"{layer}/b")

    h = tape.const(x)
    shapes = arch.layer_shapes()
    if arch.kind == "mlp":
        for i, (layer, w_shape, _) in enumerate(shapes):
            h = dense(h, layer, w_shape[0])
            if i < len(shapes) - 1:
                h = dg.activate(h, act, None if series is None else series[layer])
        return h

    n = x.shape[0]
    hh, ww, _ = arch.image_shape
    for layer, w_shape, _ in shapes[:-1]:
        img_shape = (n,) + h.shape[1:]
        cols = dg.linear_map(h, lambda c, k=arch.kernel: _im2col(c, k),
                             lambda c, s=img_shape, k=arch.kernel: _col2im(c, s, k))
        h = dense(cols, layer, w_shape[0])
        h = dg.activate(h, act)
        h = dg.reshape(h, (n, hh, ww, arch.channels))
    pooled_shape = h.shape
    h = dg.linear_map(h, lambda c: c.mean(axis=(1, 2)),
                      lambda c, s=pooled_shape: np.broadcast_to(
                          c[:, None, None, :] / (s[1] * s[2]), s).copy())
    layer, w_shape, _ = shapes[-1]
    return dense(h, layer, w_shape[0])


def anchor_series(arch: Architecture, params: ParamSet, x, k: int) -> dict:
    """Activation Taylor coefficients (order ``k + 1``) at the anchor network's
    pre-activations on inputs ``x``, per MLP layer.

    These depend only on ``theta0`` and ``x``, so Taylorized training can
    compute them once per dataset and slice rows per minibatch.
    """
    if arch.kind != "mlp":
        raise ValueError("anchor series caching is only implemented for MLPs")
    anchor = replace(params, theta=params.theta0)
    out = {}
    h = np.asarray(x, dtype=float)
    ntk = params.scheme == "ntk"
    shapes = arch.layer_shapes()
    for layer, w_shape, _ in shapes[:-1]:
        pre = h @ anchor.theta[f"{layer}/W"]
        if ntk:
            pre = pre * (1.0 / np.sqrt(w_shape[0]))
        pre = pre + anchor.theta[f"{layer}/b"]
        out[layer] = arch.act.series(pre, k + 1)
        h = out[layer][0]
    return out


def slice_series(series: dict | None, rows) -> dict | None:
    if series is None:
        return None
    return {layer: s[:, rows] for layer, s in series.items()}


def forward_full(arch: Architecture, params: ParamSet, x) -> np.ndarray:
    tape = dg.Tape(order=0)
    return record_forward(tape, arch, params, x).value[0]


def forward_taylorized(arch: Architecture, params: ParamSet, x, k: int,
                       series: dict | None = None) -> np.ndarray:
    """``f^(k)`` at ``params.theta`` expanded around ``params.theta0``."""
    if not 1 <= k <= 8:
        raise ValueError(f"Taylor order must be in 1..8, got {k}")
    tape = dg.Tape(order=k)
    return dg.eval_sum(record_forward(tape, arch, params, x, series)).value[0]


def forward(arch: Architecture, params: ParamSet, x, k: int = 0, series: dict | None = None) -> np.ndarray:
    """``k = 0`` is the full network, ``k >= 1`` the order-``k`` expansion."""
    if k == 0:
        return forward_full(arch, params, x)
    return forward_taylorized(arch, params, x, k, series)


def record_loss(tape: dg.Tape, arch: Architecture, params: ParamSet, x, y, kind: str,
                series: dict | None = None) -> tuple:
    """Return ``(loss_var, logits)`` for the model selected by ``tape.order``."""
    logits = dg.eval_sum(record_forward(tape, arch, params, x, series))
    if kind == "cross_entropy":
        loss = dg.cross_entropy(logits, y)
    elif kind == "squared":
        loss = dg.squared_loss(logits, y)
    else:
        raise ValueError(f"unknown loss {kind!r}")
    return loss, logits.value[0]


def loss_and_grad(arch: Architecture, params: ParamSet, x, y, k: int = 0,
                  kind: str = "cross_entropy", series: dict | None = None) -> tuple:
    """``(loss, gradient map, logits)`` for full (``k=0``) or Taylorized training."""
    tape = dg.Tape(order=k)
    loss, logits = record_loss(tape, arch, params, x, y, kind, series if k else None)
    return float(loss.value[0]), dg.backward(tape, loss), logits


def loss_eval(kind: str, logits, labels) -> float:
    """Batch-mean loss on raw logits."""
    logits = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite logits")
    if kind == "cross_entropy":
        labels = np.asarray(labels)
        if labels.shape[0] != logits.shape[0]:
            raise ValueError("labels and logits disagree on batch size")
        return float(-dg.log_softmax(logits)[np.arange(len(labels)), labels].mean())
    if kind == "squared":
        labels = np.asarray(labels)
        if labels.dtype.kind in "iu" and logits.ndim == 2 and labels.ndim == 1:
            labels = dg.one_hot(labels, logits.shape[1])
        labels = labels.reshape(logits.shape)
        return float(0.5 * ((logits - labels) ** 2).sum() / logits.shape[0])
    raise ValueError(f"unknown loss {kind!r}")


# ------------------------------------------------------------ serialization

_MAGIC = b"TLZP"
_VERSION = 1


def save_params(params: ParamSet, path) -> None:
    """Binary container: header (magic, version, scheme, seed, count) then
    ``(name, ndim, shape, float64 payload)`` records; anchors carry an
    ``@0`` suffix."""
    records = list(params.theta.items()) + [(k + "@0", v) for k, v in params.theta0.items()]
    scheme = params.scheme.encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HB", _VERSION, len(scheme)))
        fh.write(scheme)
        fh.write(struct.pack("<qI", params.seed, len(records)))
        for name, arr in records:
            raw = name.encode()
            arr = np.ascontiguousarray(arr, dtype="<f8")
            fh.write(struct.pack("<HB", len(raw), arr.ndim))
            fh.write(raw)
            fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
            fh.write(arr.tobytes())


def load_params(path) -> ParamSet:
    data = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise ValueError(f"truncated parameter file at byte {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4) != _MAGIC:
        raise ValueError("not a parameter container (bad magic)")
    version, slen = struct.unpack("<HB", take(3))
    if version != _VERSION:
        raise ValueError(f"unsupported container version {version}")
    scheme = take(slen).decode()
    seed, count = struct.unpack("<qI", take(12))
    theta, theta0 = {}, {}
    for _ in range(count):
        nlen, ndim = struct.unpack("<HB", take(3))
        name = take(nlen).decode()
        shape = struct.unpack(f"<{ndim}q", take(8 * ndim))
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
        if name.endswith("@0"):
            theta0[name[:-2]] = arr
        else:
            theta[name] = arr
    return ParamSet(theta, theta0, scheme, seed)
