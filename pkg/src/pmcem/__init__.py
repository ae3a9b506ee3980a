"""Posterior sampling with learned score priors, and EM training of those priors from corrupted measurements.

Modules:
    numkit      RNG streams, Gaussian draws, 2-D convolution, tensor algebra
    schedule    VP noise schedule and forward perturbation
    scorenet    MLP noise predictor, DSM training, scores, Tweedie, checkpoints
    operators   measurement operators (AWGN, inpainting, blur) and likelihood gradients
    samplers    reverse diffusion, the DPS baseline, plug-and-play Monte Carlo (PMC)
    emloop      EM over corrupted measurements
    oracles     closed-form posteriors, GMM scores, grid posteriors, PSNR, sliced Wasserstein
"""

from .emloop import EmConfig, EmState, IterationRecord, alpha_schedule, em_run, initialize, m_step
from .errors import (CheckpointFormatError, DivergenceError, InvalidArgumentError, OperatorError, ShapeError,
                     StageError)
from .numkit import derive_rng, make_rng
from .operators import MeasurementOperator, awgn, blur, inpaint, likelihood_grad
from .samplers import DpsConfig, PmcConfig, posterior_batch, sample_dps, sample_pmc, sample_unconditional
from .schedule import NoiseSchedule, make_linear_schedule, perturb
from .scorenet import (ScoreModel, TrainConfig, init_model, load_checkpoint, save_checkpoint, score,
                       train, tweedie_denoise)

__version__ = "0.1.0"

__all__ = [
    "CheckpointFormatError", "DivergenceError", "DpsConfig", "EmConfig", "EmState", "InvalidArgumentError",
    "IterationRecord", "MeasurementOperator", "NoiseSchedule", "OperatorError", "PmcConfig", "ScoreModel",
    "ShapeError", "StageError", "TrainConfig", "alpha_schedule", "awgn", "blur", "derive_rng", "em_run",
    "init_model", "initialize", "inpaint", "likelihood_grad", "load_checkpoint", "m_step", "make_linear_schedule",
    "make_rng", "perturb", "posterior_batch", "sample_dps", "sample_pmc", "sample_unconditional",
    "save_checkpoint", "score", "train", "tweedie_denoise",
]
