"""JSON experiment configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from ..emloop import EmConfig
from ..errors import InvalidArgumentError
from ..samplers import DpsConfig, PmcConfig
from ..scorenet import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "gmm2d"
    n: int = 500
    n_pool: int = 1000
    params: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class OperatorSpec:
    kind: str = "awgn"
    noise_std: float = 0.2
    keep_fraction: float = 0.4
    kernel_size: int = 9
    kernel_std: float = 2.0
    mask_seed: int = 0


@dataclass(frozen=True)
class ScheduleSpec:
    T: int = 1000
    beta_min: float = 1e-4
    beta_max: float = 0.02


@dataclass(frozen=True)
class EvalSpec:
    n_items: int = 50
    n_samples: int = 1000
    sw_projections: int = 100
    prior: str = "checkpoint"
    run_dps: bool = True
    n_montage: int = 8


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "out"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    operator: OperatorSpec = field(default_factory=OperatorSpec)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    em: EmConfig = field(default_factory=EmConfig)
    dps: DpsConfig = field(default_factory=DpsConfig)
    eval: EvalSpec = field(default_factory=EvalSpec)
    metrics: tuple[str, ...] = ("dsm_loss", "psnr", "sw")


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = _NESTED.get((cls, name))
        if sub is not None:
            value = _build(sub, value, f"{where}.{name}")
        elif name in ("hidden", "metrics"):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (InvalidArgumentError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


_NESTED = {
    (ExperimentConfig, "dataset"): DatasetSpec,
    (ExperimentConfig, "operator"): OperatorSpec,
    (ExperimentConfig, "schedule"): ScheduleSpec,
    (ExperimentConfig, "em"): EmConfig,
    (ExperimentConfig, "dps"): DpsConfig,
    (ExperimentConfig, "eval"): EvalSpec,
    (EmConfig, "train_cfg_init"): TrainConfig,
    (EmConfig, "train_cfg_finetune"): TrainConfig,
    (EmConfig, "train_cfg_scratch"): TrainConfig,
    (EmConfig, "pmc_cfg"): PmcConfig,
}


def from_dict(data: dict[str, Any]) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, data, "config")
    if cfg.dataset.kind not in ("gmm2d", "rings2d", "toy_images"):
        raise ConfigError(f"config.dataset.kind: unknown kind {cfg.dataset.kind!r}")
    if cfg.operator.kind not in ("awgn", "inpaint", "blur"):
        raise ConfigError(f"config.operator.kind: unknown kind {cfg.operator.kind!r}")
    if cfg.operator.kind == "blur" and cfg.dataset.kind != "toy_images":
        raise ConfigError("config.operator: blur needs an image dataset")
    if cfg.eval.prior not in ("checkpoint", "oracle"):
        raise ConfigError(f"config.eval.prior: expected 'checkpoint' or 'oracle', got {cfg.eval.prior!r}")
    if cfg.eval.prior == "oracle" and cfg.dataset.kind != "gmm2d":
        raise ConfigError("config.eval.prior: the oracle prior exists only for gmm2d")
    if cfg.dataset.n < 1 or cfg.dataset.n_pool < cfg.em.n_init_clean:
        raise ConfigError("config.dataset: need n >= 1 and n_pool >= em.n_init_clean")
    return cfg


def to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    return json.loads(json.dumps(asdict(cfg)))


def dumps(cfg: ExperimentConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True)


def load(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return from_dict(data)
