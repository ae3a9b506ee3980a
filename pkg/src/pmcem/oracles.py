"""Closed-form and brute-force reference answers, plus evaluation metrics.

Everything here is independent of the learned model and the samplers: these
are the ground truths the rest of the package is checked against.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidArgumentError, ShapeError
from .numkit import Rng
from .operators import MeasurementOperator, forward


@dataclass(frozen=True, eq=False)
class GaussianPrior:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ShapeError(f"cov shape {cov.shape} does not match mean size {mean.size}")
        if not np.allclose(cov, cov.T):
            raise InvalidArgumentError("covariance must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True, eq=False)
class GmmPrior:
    weights: np.ndarray
    components: tuple[GaussianPrior, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(self.components),) or np.any(w <= 0) or abs(w.sum() - 1) > 1e-12:
            raise InvalidArgumentError("weights must be positive, one per component, summing to 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def dim(self) -> int:
        return self.components[0].dim


def isotropic_gmm(means: Sequence[Sequence[float]], std: float, weights: Sequence[float] | None = None) -> GmmPrior:
    means = np.asarray(means, dtype=float)
    k, d = means.shape
    w = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=float)
    return GmmPrior(w, tuple(GaussianPrior(m, std ** 2 * np.eye(d)) for m in means))


def gaussian_posterior(prior: GaussianPrior, A: np.ndarray, y: np.ndarray, noise_std: float) -> GaussianPrior:
    """Conjugate posterior of N(mean, cov) under y = A x + N(0, noise_std^2 I)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    prec0 = np.linalg.inv(prior.cov)
    prec = prec0 + A.T @ A / noise_std ** 2
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (prec0 @ prior.mean + A.T @ y / noise_std ** 2)
    return GaussianPrior(mean, cov)


def _component_terms(prior: GmmPrior, x: np.ndarray, sigma: float):
    d = prior.dim
    logs, grads = [], []
    for w, comp in zip(prior.weights, prior.components):
        cov = comp.cov + sigma ** 2 * np.eye(d)
        prec = np.linalg.inv(cov)
        diff = x - comp.mean
        _, logdet = np.linalg.slogdet(2 * np.pi * cov)
        logs.append(np.log(w) - 0.5 * np.einsum("...i,ij,...j->...", diff, prec, diff) - 0.5 * logdet)
        grads.append(-diff @ prec)
    return np.stack(logs, axis=-1), np.stack(grads, axis=-2)


def gmm_log_density(prior: GmmPrior, x: np.ndarray, sigma: float = 0.0) -> np.ndarray:
    logs, _ = _component_terms(prior, np.asarray(x, dtype=float), sigma)
    return logsumexp(logs, axis=-1)


def gmm_score_sigma(prior: GmmPrior, x: np.ndarray, sigma: float) -> np.ndarray:
    """grad log of the mixture convolved with N(0, sigma^2 I), rows of ``x`` are points."""
    if sigma < 0:
        raise InvalidArgumentError(f"sigma must be >= 0, got {sigma}")
    x = np.asarray(x, dtype=float)
    logs, grads = _component_terms(prior, x, sigma)
    resp = np.exp(logs - logsumexp(logs, axis=-1, keepdims=True))
    return np.einsum("...k,...kd->...d", resp, grads)


def gmm_score_fn(prior: GmmPrior) -> Callable[[np.ndarray, float], np.ndarray]:
    """Analytic smoothed score in the ``(x, sigma) -> score`` form samplers accept."""
    def fn(x, sigma):
        x = np.asarray(x, dtype=float)
        return gmm_score_sigma(prior, x.reshape(-1, prior.dim), sigma).reshape(x.shape)
    return fn


def gaussian_score_fn(prior: GaussianPrior) -> Callable[[np.ndarray, float], np.ndarray]:
    return gmm_score_fn(GmmPrior(np.ones(1), (prior,)))


def gmm_sample(prior: GmmPrior, n: int, rng: Rng) -> np.ndarray:
    labels = rng.choice(len(prior.weights), size=n, p=prior.weights)
    z = rng.standard_normal((n, prior.dim))
    out = np.empty((n, prior.dim))
    for k, comp in enumerate(prior.components):
        sel = labels == k
        out[sel] = comp.mean + z[sel] @ np.linalg.cholesky(comp.cov).T
    return out


@dataclass(frozen=True)
class GridSpec:
    lo: tuple[float, float]
    hi: tuple[float, float]
    n: int

    @property
    def cell(self) -> tuple[float, float]:
        return ((self.hi[0] - self.lo[0]) / self.n, (self.hi[1] - self.lo[1]) / self.n)

    def centers(self) -> np.ndarray:
        cx, cy = self.cell
        xs = self.lo[0] + cx * (np.arange(self.n) + 0.5)
        ys = self.lo[1] + cy * (np.arange(self.n) + 0.5)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel()], axis=1)


@dataclass(frozen=True, eq=False)
class GridPosterior:
    points: np.ndarray
    probs: np.ndarray
    cell: tuple[float, float]

    @property
    def mean(self) -> np.ndarray:
        return self.probs @ self.points

    @property
    def cov(self) -> np.ndarray:
        d = self.points - self.mean
        return (d * self.probs[:, None]).T @ d

    def sample(self, n: int, rng: Rng) -> np.ndarray:
        idx = rng.choice(len(self.probs), size=n, p=self.probs)
        jitter = (rng.random((n, 2)) - 0.5) * np.asarray(self.cell)
        return self.points[idx] + jitter


def grid_posterior(log_prior: Callable[[np.ndarray], np.ndarray], op: MeasurementOperator,
                   y: np.ndarray, grid: GridSpec) -> GridPosterior:
    """Brute-force 2-D posterior: prior times likelihood on the cell centers, log domain."""
    if op.shape != (2,):
        raise ShapeError(f"grid posterior needs a 2-D operator, got geometry {op.shape}")
    pts = grid.centers()
    resid = np.asarray(y, dtype=float) - forward(op, pts)
    logp = np.asarray(log_prior(pts), dtype=float) - 0.5 * np.sum(resid ** 2, axis=1) / op.noise_std ** 2
    if not np.any(np.isfinite(logp)):
        raise FloatingPointError("grid posterior has no finite mass")
    logp = np.where(np.isfinite(logp), logp, -np.inf)
    probs = np.exp(logp - logsumexp(logp))
    return GridPosterior(pts, probs / probs.sum(), grid.cell)


def psnr(x: np.ndarray, ref: np.ndarray, peak: float = 1.0) -> float:
    x = np.asarray(x, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if x.shape != ref.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {ref.shape}")
    if peak <= 0:
        raise InvalidArgumentError("peak must be positive")
    err = float(np.mean((x - ref) ** 2))
    if err == 0:
        return float("inf")
    return float(10.0 * np.log10(peak ** 2 / err))


def _w2_sorted(a: np.ndarray, b: np.ndarray) -> float:
    n, m = len(a), len(b)
    if n == m:
        return float(np.sqrt(np.mean((a - b) ** 2)))
    levels = np.union1d(np.arange(1, n + 1) / n, np.arange(1, m + 1) / m)
    widths = np.diff(levels, prepend=0.0)
    mid = levels - 0.5 * widths
    qa = a[np.minimum((mid * n).astype(int), n - 1)]
    qb = b[np.minimum((mid * m).astype(int), m - 1)]
    return float(np.sqrt(np.sum(widths * (qa - qb) ** 2)))


def random_directions(d: int, n_proj: int, rng: Rng) -> np.ndarray:
    """Unit directions drawn in blocks of ``d`` mutually orthogonal vectors."""
    blocks = []
    for _ in range(-(-n_proj // d)):
        q, r = np.linalg.qr(rng.standard_normal((d, d)))
        blocks.append((q * np.sign(np.diag(r))).T)
    return np.concatenate(blocks)[:n_proj]


def sliced_wasserstein(a: np.ndarray, b: np.ndarray, n_proj: int, rng: Rng) -> float:
    """Mean over random unit directions of the 1-D W2 distance between projections."""
    if n_proj < 1:
        raise InvalidArgumentError(f"n_proj must be >= 1, got {n_proj}")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a = a.reshape(len(a), -1)
    b = b.reshape(len(b), -1)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if len(a) < 1 or len(b) < 1:
        raise InvalidArgumentError("need non-empty point sets")
    dirs = random_directions(a.shape[1], n_proj, rng)
    pa = np.sort(a @ dirs.T, axis=0)
    pb = np.sort(b @ dirs.T, axis=0)
    return float(np.mean([_w2_sorted(pa[:, j], pb[:, j]) for j in range(n_proj)]))
