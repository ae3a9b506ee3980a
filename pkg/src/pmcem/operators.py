"""Linear-Gaussian measurement models y = A x + n, n ~ N(0, noise_std^2 I).

``A`` is the identity (``awgn``), a binary pixel mask (``inpaint``) or a
symmetric zero-padded blur (``blur``). All three are self-adjoint, so the
likelihood gradient is ``A (y - A x) / noise_std^2``.

Arrays passed to an operator end in its ``shape``; any leading axes are a
batch. A mask may carry one leading batch axis (one mask per measurement),
see :func:`stack_operators`.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, OperatorError, ShapeError
from .numkit import Rng, conv2d_same

KINDS = ("awgn", "inpaint", "blur")
INPAINT_NOISE_FLOOR = 0.01


@dataclass(frozen=True, eq=False)
class MeasurementOperator:
    kind: str
    noise_std: float
    shape: tuple[int, ...]
    mask: np.ndarray | None = field(default=None, repr=False)
    kernel: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown operator kind {self.kind!r}")
        if not self.noise_std > 0:
            raise InvalidArgumentError(f"noise_std must be > 0, got {self.noise_std}")
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        if self.kind == "inpaint":
            if self.mask is None:
                raise InvalidArgumentError("inpaint operator needs a mask")
            mask = np.asarray(self.mask, dtype=float)
            if mask.shape[-len(self.shape):] != self.shape or mask.ndim > len(self.shape) + 1:
                raise ShapeError(f"mask shape {mask.shape} does not match geometry {self.shape}")
            if not np.all((mask == 0) | (mask == 1)):
                raise InvalidArgumentError("mask entries must be 0 or 1")
            object.__setattr__(self, "mask", mask)
        if self.kind == "blur":
            if self.kernel is None:
                raise InvalidArgumentError("blur operator needs a kernel")
            if len(self.shape) != 2:
                raise ShapeError("blur needs a 2-D image geometry")
            k = np.asarray(self.kernel, dtype=float)
            if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
                raise InvalidArgumentError(f"kernel must be odd square, got {k.shape}")
            if not np.allclose(k, k.T) or not np.allclose(k, k[::-1, ::-1]):
                raise InvalidArgumentError("kernel must be symmetric")
            if abs(k.sum() - 1.0) > 1e-9:
                raise InvalidArgumentError("kernel must sum to 1")
            object.__setattr__(self, "kernel", k)

    @property
    def batched(self) -> bool:
        return self.mask is not None and self.mask.ndim == len(self.shape) + 1


def awgn(shape: Sequence[int], noise_std: float) -> MeasurementOperator:
    return MeasurementOperator("awgn", noise_std, tuple(shape))


def inpaint(mask: np.ndarray, noise_std: float = INPAINT_NOISE_FLOOR) -> MeasurementOperator:
    mask = np.asarray(mask, dtype=float)
    return MeasurementOperator("inpaint", noise_std, mask.shape, mask=mask)


def blur(shape: Sequence[int], kernel: np.ndarray, noise_std: float) -> MeasurementOperator:
    return MeasurementOperator("blur", noise_std, tuple(shape), kernel=kernel)


def _check_geometry(op: MeasurementOperator, x: np.ndarray) -> None:
    nd = len(op.shape)
    if x.ndim < nd or x.shape[x.ndim - nd:] != op.shape:
        raise ShapeError(f"array shape {x.shape} does not end in operator geometry {op.shape}")
    if op.batched and (x.ndim != nd + 1 or x.shape[0] != op.mask.shape[0]):
        raise ShapeError(f"batched operator expects ({op.mask.shape[0]}, *{op.shape}), got {x.shape}")


def forward(op: MeasurementOperator, x: np.ndarray) -> np.ndarray:
    """Noise-free ``A x``."""
    x = np.asarray(x, dtype=float)
    _check_geometry(op, x)
    if op.kind == "awgn":
        return x.copy()
    if op.kind == "inpaint":
        return op.mask * x
    return conv2d_same(x, op.kernel)


# every supported A is symmetric
adjoint = forward


def apply(op: MeasurementOperator, x: np.ndarray, rng: Rng) -> np.ndarray:
    ax = forward(op, x)
    return ax + op.noise_std * rng.standard_normal(ax.shape)


def log_likelihood(op: MeasurementOperator, x: np.ndarray, y: np.ndarray) -> float:
    """log p(y | x) up to the x-independent normalizer, summed over any batch."""
    r = np.asarray(y, dtype=float) - forward(op, x)
    return float(-0.5 * np.sum(r * r) / op.noise_std ** 2)


def likelihood_grad(op: MeasurementOperator, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ShapeError(f"x shape {x.shape} != y shape {y.shape}")
    g = adjoint(op, y - forward(op, x)) / op.noise_std ** 2
    if not np.all(np.isfinite(g)):
        raise OperatorError("non-finite likelihood gradient")
    return g


def make_gaussian_kernel(k: int, std: float) -> np.ndarray:
    if k < 1 or k % 2 == 0:
        raise InvalidArgumentError(f"kernel size must be a positive odd integer, got {k}")
    if not std > 0:
        raise InvalidArgumentError(f"kernel std must be > 0, got {std}")
    r = np.arange(k) - k // 2
    g = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2.0 * std ** 2))
    return g / g.sum()


def make_random_mask(shape: Sequence[int], keep_fraction: float, rng: Rng) -> np.ndarray:
    """Binary mask with exactly ``round(keep_fraction * size)`` ones."""
    if not 0 < keep_fraction <= 1:
        raise InvalidArgumentError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    shape = tuple(int(s) for s in shape)
    size = int(np.prod(shape))
    n_keep = int(round(keep_fraction * size))
    mask = np.zeros(size)
    mask[rng.permutation(size)[:n_keep]] = 1.0
    return mask.reshape(shape)


def stack_operators(ops: Sequence[MeasurementOperator]) -> MeasurementOperator:
    """Merge per-measurement operators sharing kind and geometry into one batched operator."""
    if not ops:
        raise InvalidArgumentError("no operators to stack")
    first = ops[0]
    for op in ops[1:]:
        if op.kind != first.kind or op.shape != first.shape or op.noise_std != first.noise_std:
            raise ShapeError("operators differ in kind, geometry or noise level")
    if first.kind == "inpaint":
        return MeasurementOperator("inpaint", first.noise_std, first.shape,
                                   mask=np.stack([op.mask for op in ops]))
    if first.kind == "blur":
        for op in ops[1:]:
            if not np.array_equal(op.kernel, first.kernel):
                raise ShapeError("blur kernels differ")
    return first


def select(op: MeasurementOperator, index: np.ndarray | int) -> MeasurementOperator:
    """Rows of a batched operator; unbatched operators are returned as is."""
    if not op.batched:
        return op
    return MeasurementOperator(op.kind, op.noise_std, op.shape, mask=op.mask[index])


def initial_guess(op: MeasurementOperator, y: np.ndarray, fill: float | np.ndarray = 0.0) -> np.ndarray:
    """Back-projection ``A^T y``; unobserved inpainting pixels get ``fill``."""
    y = np.asarray(y, dtype=float)
    if op.kind == "inpaint":
        return op.mask * y + (1.0 - op.mask) * fill
    return adjoint(op, y)
