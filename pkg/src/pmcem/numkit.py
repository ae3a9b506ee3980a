"""Dense-array helpers and deterministic random streams.

Tensors are plain ``numpy.ndarray`` objects (float64, C order). Random
streams are ``numpy.random.Generator`` instances backed by Philox, a
counter-based bit generator, so independent streams can be derived from a
(seed, key, ...) tuple without any shared state.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .errors import InvalidArgumentError, ShapeError

Rng = np.random.Generator


def make_rng(seed: int) -> Rng:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def derive_rng(seed: int, *keys: int) -> Rng:
    """Stream keyed on ``(seed, *keys)``; independent of call order."""
    entropy = [int(seed)] + [int(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def draw_seed(rng: Rng) -> int:
    """Consume one 63-bit integer from ``rng`` to key derived streams."""
    return int(rng.integers(0, 2**63 - 1))


def gaussian_sample(rng: Rng, shape: Sequence[int] | int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    if std < 0:
        raise InvalidArgumentError(f"std must be non-negative, got {std}")
    shape = (shape,) if isinstance(shape, (int, np.integer)) else tuple(shape)
    if std == 0:
        return np.full(shape, float(mean))
    return mean + std * rng.standard_normal(shape)


def conv2d_same(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Zero-padded 2-D correlation over the last two axes, output same size.

    Leading axes of ``image`` are treated as a batch.
    """
    image = np.asarray(image, dtype=float)
    kernel = np.asarray(kernel, dtype=float)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
        raise InvalidArgumentError(f"kernel must be square k x k, got shape {kernel.shape}")
    k = kernel.shape[0]
    if k % 2 == 0:
        raise InvalidArgumentError(f"kernel size must be odd, got {k}")
    if image.ndim < 2 or min(image.shape[-2:]) < 1:
        raise ShapeError(f"image must have at least two non-empty axes, got {image.shape}")
    r = k // 2
    h, w = image.shape[-2:]
    pad = [(0, 0)] * (image.ndim - 2) + [(r, r), (r, r)]
    padded = np.pad(image, pad)
    out = np.zeros_like(image)
    for i in range(k):
        for j in range(k):
            if kernel[i, j] != 0.0:
                out += kernel[i, j] * padded[..., i:i + h, j:j + w]
    return out


def _check_same(a: np.ndarray, b: np.ndarray) -> None:
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same(a, b)
    return np.add(a, b)


def sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same(a, b)
    return np.subtract(a, b)


def scale(a: np.ndarray, c: float) -> np.ndarray:
    return np.multiply(a, c)


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same(a, b)
    return np.multiply(a, b)


def dot(a: np.ndarray, b: np.ndarray) -> float:
    _check_same(a, b)
    return float(np.dot(np.ravel(a), np.ravel(b)))


def mse(a: np.ndarray, b: np.ndarray) -> float:
    _check_same(a, b)
    return float(np.mean((np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) ** 2))
