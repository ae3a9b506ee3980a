"""Discrete variance-preserving noise schedule.

The forward process at step ``t`` is

    x_t = sqrt(alpha_bar[t]) * x_0 + sqrt(1 - alpha_bar[t]) * eps,

and ``sigma[t] = sqrt(1 - alpha_bar[t])`` is the noise level the score
network is conditioned on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, ShapeError
from .numkit import Rng


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    beta: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta)

    def check_step(self, t: int) -> None:
        if not 0 <= t < self.T:
            raise IndexError(f"step {t} outside [0, {self.T})")


def make_linear_schedule(T: int = 1000, beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise InvalidArgumentError(f"T must be >= 1, got {T}")
    if not 0 < beta_min <= beta_max < 1:
        raise InvalidArgumentError(f"need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")
    beta = np.linspace(beta_min, beta_max, T)
    alpha_bar = np.cumprod(1.0 - beta)
    sigma = np.sqrt(1.0 - alpha_bar)
    for arr in (beta, alpha_bar, sigma):
        arr.setflags(write=False)
    return NoiseSchedule(beta=beta, alpha_bar=alpha_bar, sigma=sigma)


def perturb(x0: np.ndarray, t: int | np.ndarray, rng: Rng, sched: NoiseSchedule) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``x_t`` given ``x_0``. ``t`` may be a per-row array of steps."""
    x0 = np.asarray(x0, dtype=float)
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t >= sched.T):
        raise IndexError(f"step outside [0, {sched.T})")
    ab = _broadcast_rows(sched.alpha_bar[t], x0)
    eps = rng.standard_normal(x0.shape)
    x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    return x_t, eps


def true_score_target(x_t: np.ndarray, x0: np.ndarray, t: int | np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Score of the Gaussian perturbation kernel p(x_t | x_0)."""
    x_t = np.asarray(x_t, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    if x_t.shape != x0.shape:
        raise ShapeError(f"shape mismatch: {x_t.shape} vs {x0.shape}")
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t >= sched.T):
        raise IndexError(f"step outside [0, {sched.T})")
    ab = _broadcast_rows(sched.alpha_bar[t], x0)
    var = 1.0 - ab
    if np.any(var <= 0):
        raise ZeroDivisionError("alpha_bar == 1: perturbation kernel is degenerate")
    return -(x_t - np.sqrt(ab) * x0) / var


def _broadcast_rows(values: np.ndarray, like: np.ndarray) -> np.ndarray:
    # per-row step arrays broadcast along trailing axes
    values = np.asarray(values, dtype=float)
    if values.ndim == 0:
        return values
    return values.reshape(values.shape + (1,) * (like.ndim - values.ndim))
