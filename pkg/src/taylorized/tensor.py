"""Dense tensor substrate.

Tensors are plain ``numpy.ndarray`` values (row-major, float64 unless the
caller opts into float32).  This module holds the few primitives the rest of
the package relies on plus a counter-based random stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_DTYPE = np.float64


def as_tensor(data, dtype=None) -> np.ndarray:
    """Copy ``data`` into a contiguous float array."""
    return np.array(data, dtype=dtype or DEFAULT_DTYPE, order="C", copy=True)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    return a @ b


def frobenius_norm(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        return 0.0
    # scale first so huge/tiny entries do not over/underflow
    scale = float(np.max(np.abs(a)))
    if scale == 0.0:
        return 0.0
    return scale * float(np.sqrt(np.sum((a / scale) ** 2)))


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(seed, stream)``.

    Backed by Philox, a counter-based generator: the 128-bit key is built
    from the seed and the stream id, so streams never overlap and draws do not
    depend on the order in which other streams are consumed.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & 0xFFFFFFFFFFFFFFFF,
                        self.stream & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, stream: int) -> "RngStream":
        """Derive an independent sub-stream (hashing parent stream and id)."""
        mixed = np.random.SeedSequence([self.stream, stream]).generate_state(1, np.uint64)[0]
        return RngStream(self.seed, int(mixed))


def gaussian_fill(shape, std: float, rng: RngStream, dtype=None) -> np.ndarray:
    """i.i.d. N(0, std**2) entries, deterministic given ``rng``."""
    if not std > 0:
        raise ValueError(f"std must be positive, got {std}")
    z = rng.generator().standard_normal(tuple(shape))
    return (std * z).astype(dtype or DEFAULT_DTYPE, copy=False)
