"""Unconditional reverse diffusion, the DPS baseline, and plug-and-play Monte Carlo.

Score sources are either a :class:`~pmcem.scorenet.ScoreModel` or any
callable ``(x, sigma) -> grad log (p * N(0, sigma^2 I))(x)``, which lets the
analytic scores in :mod:`pmcem.oracles` stand in for a trained network.

All samplers run a batch of chains in lockstep. PMC chains each own a
Philox stream keyed on ``(seed, measurement index, chain index)``, so a
chain's output does not depend on which other chains share its batch.
"""

from __future__ import annotations

import csv
from collections.abc import Sequence
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DivergenceError, InvalidArgumentError, OperatorError, ShapeError
from .numkit import Rng, derive_rng, draw_seed
from .operators import MeasurementOperator, adjoint, forward, initial_guess, likelihood_grad, log_likelihood, stack_operators
from .schedule import NoiseSchedule
from .scorenet import ScoreFn, ScoreModel, score_of, vp_score

Source = ScoreModel | ScoreFn

# chains per lockstep block in posterior_batch
CHAIN_BLOCK = 4096


@dataclass(frozen=True)
class PmcConfig:
    """PMC chain settings.

    Each step applies ``z = x + gamma * grad log p(y|x)`` followed by
    ``x = z + alpha * sigma^2 * score(z, sigma) + N(0, 2 tau I)``, with
    ``sigma`` walking a geometric ladder from ``sigma_max`` to ``sigma_min``.
    ``tau=None`` means ``tau = gamma``. A one-level ladder runs at ``sigma_min``.
    ``gamma = tau = 0`` leaves a deterministic prior-only denoising flow.
    """

    gamma: float = 0.01
    alpha: float = 1.0
    tau: float | None = None
    sigma_max: float = 0.5
    sigma_min: float = 0.01
    n_levels: int = 10
    steps_per_level: int = 30

    def __post_init__(self):
        if not self.gamma >= 0:
            raise InvalidArgumentError(f"gamma must be >= 0, got {self.gamma}")
        if not 0 < self.alpha <= 1:
            raise InvalidArgumentError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.tau is not None and self.tau < 0:
            raise InvalidArgumentError(f"tau must be >= 0, got {self.tau}")
        if not self.sigma_min > 0 or self.sigma_max < self.sigma_min:
            raise InvalidArgumentError("need sigma_max >= sigma_min > 0")
        if self.n_levels < 1 or self.steps_per_level < 0:
            raise InvalidArgumentError("need n_levels >= 1 and steps_per_level >= 0")
        if self.n_levels > 1 and self.sigma_max == self.sigma_min:
            raise InvalidArgumentError("a multi-level ladder needs sigma_max > sigma_min")

    @property
    def temperature(self) -> float:
        return self.gamma if self.tau is None else self.tau

    @property
    def n_steps(self) -> int:
        return self.n_levels * self.steps_per_level

    def ladder(self) -> np.ndarray:
        if self.n_levels == 1:
            return np.array([self.sigma_min])
        return np.geomspace(self.sigma_max, self.sigma_min, self.n_levels)


@dataclass(frozen=True)
class DpsConfig:
    """``zeta`` scales the guidance step ``-zeta * grad ||y - A x0_hat||``."""

    zeta: float = 0.005

    def __post_init__(self):
        if self.zeta < 0:
            raise InvalidArgumentError(f"zeta must be >= 0, got {self.zeta}")


def _flat(x: np.ndarray, n: int) -> np.ndarray:
    return x.reshape(n, -1)


def sample_unconditional(model: Source, sched: NoiseSchedule, shape: Sequence[int], n: int,
                         rng: Rng) -> np.ndarray:
    """Ancestral sampling of the discretized reverse VP SDE from x_T ~ N(0, I)."""
    return _reverse_chain(model, sched, tuple(shape), n, rng)


def sample_dps(model: Source, sched: NoiseSchedule, op: MeasurementOperator, y: np.ndarray,
               cfg: DpsConfig, rng: Rng, n_samples: int | None = None) -> np.ndarray:
    """DPS posterior samples.

    ``y`` is either one measurement (geometry ``op.shape``) or a batch with a
    leading axis (one chain per row). ``n_samples`` replicates a single
    measurement into that many chains. The guidance gradient is taken with
    respect to ``x0_hat`` and applied to ``x_t`` unchanged, i.e. the
    network Jacobian in ``d x0_hat / d x_t`` is replaced by the identity.
    """
    y = np.asarray(y, dtype=float)
    single = y.shape == op.shape
    if single:
        y = y[None] if n_samples is None else np.broadcast_to(y, (n_samples, *op.shape))
    elif n_samples is not None:
        raise InvalidArgumentError("n_samples only applies to a single measurement")
    if y.shape[1:] != op.shape:
        raise ShapeError(f"measurement shape {y.shape} does not match geometry {op.shape}")
    out = _reverse_chain(model, sched, op.shape, len(y), rng, guide=(op, y, cfg.zeta))
    return out[0] if single and n_samples is None else out


def _reverse_chain(model, sched, shape, n, rng, guide=None):
    if n == 0:
        return np.zeros((0, *shape))
    x = rng.standard_normal((n, *shape))
    for t in range(sched.T - 1, -1, -1):
        beta = sched.beta[t]
        s = vp_score(model, _flat(x, n), t, sched).reshape(x.shape)
        nxt = (x + beta * s) / np.sqrt(1.0 - beta)
        if t > 0:
            nxt = nxt + np.sqrt(beta) * rng.standard_normal(x.shape)
        if guide is not None and guide[2] != 0:
            op, y, zeta = guide
            x0_hat = (x + sched.sigma[t] ** 2 * s) / np.sqrt(sched.alpha_bar[t])
            resid = y - forward(op, x0_hat)
            norms = np.sqrt(np.sum(_flat(resid, n) ** 2, axis=1))
            norms = np.maximum(norms, 1e-12).reshape((n,) + (1,) * len(shape))
            # grad of ||y - A x0_hat|| w.r.t. x0_hat
            nxt = nxt + zeta * adjoint(op, resid) / norms
        x = nxt
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite state at reverse step {t}", step=t)
    return x


def _run_chains(model: Source, op: MeasurementOperator, y: np.ndarray, cfg: PmcConfig,
                rngs: Sequence[Rng], x0: np.ndarray, trace: list | None = None) -> np.ndarray:
    """Lockstep PMC over chains; row ``i`` of ``y``/``x0`` pairs with ``rngs[i]``."""
    n = len(rngs)
    x = np.array(x0, dtype=float, copy=True)
    geom = x.shape[1:]
    noise_scale = np.sqrt(2.0 * cfg.temperature)
    step = 0
    for sigma in cfg.ladder():
        if cfg.steps_per_level == 0:
            continue
        noise = np.stack([r.standard_normal((cfg.steps_per_level, *geom)) for r in rngs], axis=1)
        for j in range(cfg.steps_per_level):
            try:
                g = likelihood_grad(op, x, y)
            except OperatorError as exc:
                raise OperatorError(f"{exc} at PMC step {step}") from exc
            z = x + cfg.gamma * g
            s = score_of(model, _flat(z, n), float(sigma)).reshape(z.shape)
            x = z + cfg.alpha * sigma ** 2 * s + noise_scale * noise[j]
            finite = np.all(np.isfinite(_flat(x, n)), axis=1)
            if not finite.all():
                bad = int(np.flatnonzero(~finite)[0])
                raise DivergenceError(f"non-finite PMC state at step {step} (chain {bad})", step=step, index=bad)
            if trace is not None:
                trace.append((step, log_likelihood(op, x, y), float(np.linalg.norm(x))))
            step += 1
    return x


def sample_pmc(model: Source, op: MeasurementOperator, y: np.ndarray, cfg: PmcConfig, rng: Rng,
               x_init: np.ndarray | None = None, fill: float = 0.0,
               trace: list | None = None) -> np.ndarray:
    """One PMC chain for one measurement; returns the final state.

    ``x_init`` defaults to :func:`~pmcem.operators.initial_guess` with
    unobserved pixels set to ``fill``. ``trace`` collects
    ``(step, log-likelihood, state norm)`` tuples if given.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != op.shape:
        raise ShapeError(f"measurement shape {y.shape} does not match geometry {op.shape}")
    if op.batched:
        raise ShapeError("sample_pmc takes a single-measurement operator")
    x0 = initial_guess(op, y, fill) if x_init is None else np.asarray(x_init, dtype=float)
    return _run_chains(model, op, y[None], cfg, [rng], x0[None], trace)[0]


def posterior_batch(model: Source, op: MeasurementOperator | Sequence[MeasurementOperator],
                    ys: Sequence[np.ndarray], cfg: PmcConfig, rng: Rng, chains_per_y: int = 1,
                    fill: float = 0.0, seed: int | None = None,
                    keys: Sequence[int] | None = None) -> list[np.ndarray]:
    """Independent PMC chains for each measurement.

    Returns one ``(chains_per_y, *geometry)`` array per measurement. Chain
    ``c`` of measurement ``i`` uses the stream ``derive_rng(seed, keys[i], c)``;
    ``keys`` defaults to the positions and ``seed`` is drawn from ``rng``
    unless given. Passing dataset indices as keys makes each measurement's
    chains independent of which subset or order it is sampled in.
    """
    if len(ys) == 0:
        raise InvalidArgumentError("no measurements given")
    if chains_per_y < 1:
        raise InvalidArgumentError("chains_per_y must be >= 1")
    ops = list(op) if isinstance(op, Sequence) else [op] * len(ys)
    if len(ops) != len(ys):
        raise InvalidArgumentError("need one operator per measurement")
    base = draw_seed(rng) if seed is None else seed
    keys = list(range(len(ys))) if keys is None else [int(k) for k in keys]
    if len(keys) != len(ys):
        raise InvalidArgumentError("need one key per measurement")
    ys_arr = np.stack([np.asarray(y, dtype=float) for y in ys])
    starts = np.stack([initial_guess(o, y, fill) for o, y in zip(ops, ys_arr)])

    pairs = [(i, c) for i in range(len(ys)) for c in range(chains_per_y)]
    finals = np.empty((len(pairs), *ys_arr.shape[1:]))
    for lo in range(0, len(pairs), CHAIN_BLOCK):
        block = pairs[lo:lo + CHAIN_BLOCK]
        idx = np.array([i for i, _ in block])
        block_op = stack_operators([ops[i] for i in idx])
        rngs = [derive_rng(base, keys[i], c) for i, c in block]
        try:
            finals[lo:lo + len(block)] = _run_chains(model, block_op, ys_arr[idx], cfg, rngs, starts[idx])
        except DivergenceError as exc:
            meas = int(idx[exc.index]) if exc.index is not None else None
            raise DivergenceError(f"measurement {meas}: {exc}", step=exc.step, index=meas) from exc
    return [finals[i * chains_per_y:(i + 1) * chains_per_y] for i in range(len(ys))]


def with_alpha(cfg: PmcConfig, alpha: float) -> PmcConfig:
    return replace(cfg, alpha=alpha)


def write_trace_csv(trace: Sequence[tuple[int, float, float]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "log_likelihood", "state_norm"])
        for step, ll, norm in trace:
            w.writerow([step, repr(ll), repr(norm)])
