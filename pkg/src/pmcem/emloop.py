"""Expectation-maximization over corrupted measurements.

Each iteration draws PMC posterior samples for the active measurements with
the current model as prior (E-step), then refits the model to those samples
by denoising score matching (M-step). The prior weight ``alpha_k`` inside
PMC grows geometrically from ``alpha_min`` to 1 over the run.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, StageError
from .numkit import Rng, derive_rng, draw_seed
from .operators import MeasurementOperator
from .oracles import psnr, sliced_wasserstein
from .samplers import PmcConfig, posterior_batch, sample_unconditional, with_alpha
from .schedule import NoiseSchedule
from .scorenet import ScoreModel, TrainConfig, init_model, save_checkpoint, train

log = logging.getLogger(__name__)

Measurement = tuple[np.ndarray, MeasurementOperator]


@dataclass(frozen=True)
class EmConfig:
    n_iters: int = 9
    n_init_clean: int = 50
    subsample_size: int = 500
    subsample_iters: int = 6
    reset_iters: int = 3
    alpha_min: float = 1e-3
    chains_per_y: int = 1
    hidden: tuple[int, ...] = (128, 128)
    embed_dim: int = 16
    train_cfg_init: TrainConfig = field(default_factory=lambda: TrainConfig(steps=3000))
    train_cfg_finetune: TrainConfig = field(default_factory=lambda: TrainConfig(steps=1000))
    train_cfg_scratch: TrainConfig = field(default_factory=lambda: TrainConfig(steps=3000))
    pmc_cfg: PmcConfig = field(default_factory=PmcConfig)
    n_eval_samples: int = 1000
    sw_projections: int = 100

    def __post_init__(self):
        if self.n_iters < 1:
            raise InvalidArgumentError("n_iters must be >= 1")
        if self.subsample_iters < 0 or self.reset_iters < 0:
            raise InvalidArgumentError("iteration counts must be non-negative")
        if self.subsample_iters + self.reset_iters > self.n_iters:
            raise InvalidArgumentError("subsample_iters + reset_iters exceeds n_iters")
        if not 0 < self.alpha_min <= 1:
            raise InvalidArgumentError(f"alpha_min must be in (0, 1], got {self.alpha_min}")
        if self.n_init_clean < 1 or self.subsample_size < 1 or self.chains_per_y < 1:
            raise InvalidArgumentError("sizes must be positive")


@dataclass
class IterationRecord:
    k: int
    alpha_k: float
    dsm_loss: float
    psnr_mean: float
    sw_distance: float
    n_active: int
    reset: bool
    flagged: bool = False


@dataclass
class EmState:
    k: int = 0
    alpha_k: float = 0.0
    model: ScoreModel | None = None
    last_samples: np.ndarray | None = None
    last_active: np.ndarray | None = None
    metrics_log: list[IterationRecord] = field(default_factory=list)

    def series(self, name: str, include_init: bool = False) -> list[float]:
        return [getattr(r, name) for r in self.metrics_log if include_init or r.k > 0]


def alpha_schedule(k: int, N: int, alpha_min: float) -> float:
    """Geometric ramp ``alpha_min ** ((N - k) / (N - 1))``; equals 1 at ``k = N``."""
    if N < 1 or not 1 <= k <= N:
        raise InvalidArgumentError(f"need 1 <= k <= N, got k={k}, N={N}")
    if not 0 < alpha_min <= 1:
        raise InvalidArgumentError(f"alpha_min must be in (0, 1], got {alpha_min}")
    if N == 1 or k == N:
        return 1.0
    return float(alpha_min ** ((N - k) / (N - 1)))


def initialize(clean_subset: np.ndarray, sched: NoiseSchedule, cfg: EmConfig, rng: Rng) -> ScoreModel:
    """Fresh model trained by DSM on the few clean examples."""
    clean = np.asarray(clean_subset, dtype=float)
    if clean.ndim < 2 or len(clean) == 0:
        raise InvalidArgumentError("clean subset is empty")
    clean = clean.reshape(len(clean), -1)
    model = init_model(clean.shape[1], rng, cfg.hidden, cfg.embed_dim)
    return train(model, clean, sched, cfg.train_cfg_init, rng)


def m_step(model: ScoreModel, samples: np.ndarray, sched: NoiseSchedule, tcfg: TrainConfig,
           from_scratch: bool, rng: Rng) -> ScoreModel:
    """Fine-tune ``model`` on ``samples``, or train a freshly initialized copy of its architecture."""
    samples = np.asarray(samples, dtype=float)
    if len(samples) == 0:
        raise InvalidArgumentError("no samples for the M-step")
    samples = samples.reshape(len(samples), -1)
    if from_scratch:
        model = init_model(model.data_dim, rng, model.layer_dims[1:-1], model.embed_dim)
    return train(model, samples, sched, tcfg, rng)


def _final_loss(model: ScoreModel, window: int = 100) -> float:
    trace = model.loss_trace[-window:]
    return float(np.mean(trace)) if trace else float("nan")


def _sw_to(model, sched, shape, reference, cfg, seed) -> float:
    if reference is None or cfg.n_eval_samples < 1:
        return float("nan")
    gen = sample_unconditional(model, sched, shape, cfg.n_eval_samples, derive_rng(seed, 0))
    return sliced_wasserstein(gen.reshape(len(gen), -1), reference, cfg.sw_projections, derive_rng(seed, 1))


def em_run(measurements: Sequence[Measurement], clean_subset: np.ndarray, sched: NoiseSchedule,
           cfg: EmConfig, rng: Rng, truth: Sequence[np.ndarray] | None = None,
           reference: np.ndarray | None = None, checkpoint_dir: str | Path | None = None,
           fill: float | None = None,
           on_iteration: Callable[[EmState], None] | None = None) -> tuple[ScoreModel, EmState]:
    """Run the EM loop and return the final model plus the full iteration log.

    ``truth`` (clean counterparts of the measurements) enables the PSNR
    metric; ``reference`` (clean samples, rows are points) enables the
    sliced-Wasserstein metric on unconditional samples. Unobserved inpainting
    pixels start at ``fill``, by default the clean-subset mean.
    """
    if len(measurements) == 0:
        raise InvalidArgumentError("no measurements")
    ys = [np.asarray(y, dtype=float) for y, _ in measurements]
    ops = [op for _, op in measurements]
    shape = ops[0].shape
    if any(op.shape != shape or y.shape != shape for y, op in zip(ys, ops)):
        raise InvalidArgumentError("measurements must share one geometry")
    if reference is not None:
        reference = np.asarray(reference, dtype=float).reshape(len(reference), -1)
    clean = np.asarray(clean_subset, dtype=float)
    fill = float(np.mean(clean)) if fill is None else fill
    ckpt = Path(checkpoint_dir) if checkpoint_dir is not None else None

    base = draw_seed(rng)
    # one evaluation stream for every iteration: common random numbers across the SW series
    eval_seed = derive_seed(base, 4)
    state = EmState()
    try:
        model = initialize(clean, sched, cfg, derive_rng(base, 0))
    except Exception as exc:
        raise StageError("initialization", exc) from exc
    state.model = model
    state.metrics_log.append(IterationRecord(
        k=0, alpha_k=float("nan"), dsm_loss=_final_loss(model), psnr_mean=float("nan"),
        sw_distance=_sw_to(model, sched, shape, reference, cfg, eval_seed),
        n_active=0, reset=False))
    if ckpt is not None:
        save_checkpoint(model, ckpt / "model_iter_0.emdm")

    n = len(ys)
    for k in range(1, cfg.n_iters + 1):
        alpha = alpha_schedule(k, cfg.n_iters, cfg.alpha_min)
        if k <= cfg.subsample_iters and cfg.subsample_size < n:
            active = np.sort(derive_rng(base, 2, k).choice(n, size=cfg.subsample_size, replace=False))
        else:
            active = np.arange(n)
        reset = k > cfg.n_iters - cfg.reset_iters

        try:
            chains = posterior_batch(model, [ops[i] for i in active], [ys[i] for i in active],
                                     with_alpha(cfg.pmc_cfg, alpha), rng, cfg.chains_per_y,
                                     fill=fill, seed=derive_seed(base, 1, k), keys=active)
        except Exception as exc:
            raise StageError(f"E-step (iteration {k})", exc) from exc
        samples = np.concatenate(chains)

        try:
            tcfg = cfg.train_cfg_scratch if reset else cfg.train_cfg_finetune
            model = m_step(model, samples, sched, tcfg, reset, derive_rng(base, 3, k))
        except Exception as exc:
            raise StageError(f"M-step (iteration {k})", exc) from exc

        psnr_mean = float("nan")
        if truth is not None:
            psnr_mean = float(np.mean([psnr(c[0], truth[i]) for c, i in zip(chains, active)]))
        sw = _sw_to(model, sched, shape, reference, cfg, eval_seed)
        record = IterationRecord(k=k, alpha_k=alpha, dsm_loss=_final_loss(model), psnr_mean=psnr_mean,
                                 sw_distance=sw, n_active=len(active), reset=reset)
        checked = [record.dsm_loss]
        if truth is not None:
            checked.append(psnr_mean)
        if reference is not None and cfg.n_eval_samples > 0:
            checked.append(sw)
        if not all(math.isfinite(v) for v in checked):
            record.flagged = True
            log.warning("iteration %d produced non-finite metrics: %s", k, record)
        log.info("EM iteration %d: alpha=%.4g loss=%.4f psnr=%.3f sw=%.4f", k, alpha,
                 record.dsm_loss, psnr_mean, sw)

        state.k, state.alpha_k, state.model = k, alpha, model
        state.last_samples, state.last_active = samples, active
        state.metrics_log.append(record)
        if ckpt is not None:
            save_checkpoint(model, ckpt / f"model_iter_{k}.emdm")
        if on_iteration is not None:
            on_iteration(state)
    return model, state


def derive_seed(base: int, *keys: int) -> int:
    return draw_seed(derive_rng(base, *keys))
