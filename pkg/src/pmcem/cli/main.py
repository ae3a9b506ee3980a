"""Command-line experiment runner.

    pmcem make-data --config exp.json      clean train set + held-out clean pool
    pmcem corrupt   --config exp.json      measurements + JSON sidecar
    pmcem run       --config exp.json      initialization, EM, metrics, checkpoints, montages
    pmcem eval      --config exp.json [--checkpoint PATH]
    pmcem sample    --config exp.json [--checkpoint PATH] [--n N]

Each stage writes into ``<out>/<stage>``; if that directory already exists a
version suffix (``_002``, ``_003``, ...) is used instead, and downstream stages
read the newest version of their inputs. Every stage writes a
``manifest.json`` listing the files it produced.

Exit codes: 0 success, 2 config error, 3 I/O error, 4 numerical divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import re
import sys
from collections.abc import Sequence
from pathlib import Path

import numpy as np

from .. import operators as ops_mod
from ..emloop import em_run
from ..errors import CheckpointFormatError, DivergenceError, StageError
from ..numkit import derive_rng
from ..oracles import gmm_score_fn, psnr, sliced_wasserstein
from ..samplers import posterior_batch, sample_dps, sample_unconditional
from ..schedule import make_linear_schedule
from ..scorenet import load_checkpoint, save_checkpoint
from . import config as config_mod
from .config import ConfigError, ExperimentConfig
from .datasets import generate, gmm_from_params
from .fileio import montage, read_pgm, read_rows, write_pgm, write_rows, write_table

log = logging.getLogger("pmcem")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4
METRIC_COLUMNS = ["k", "alpha_k", "dsm_loss", "psnr_mean", "sw_distance", "n_active", "reset", "flagged"]


class Stage:
    """An output directory plus the list of artifacts written into it."""

    def __init__(self, root: Path, name: str):
        root.mkdir(parents=True, exist_ok=True)
        self.dir = _fresh_dir(root, name)
        self.dir.mkdir()
        self.name = name
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.dir / name

    def finish(self, **extra) -> Path:
        manifest = {"stage": self.name, "files": sorted(self.files), **extra}
        (self.dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return self.dir


def _fresh_dir(root: Path, name: str) -> Path:
    if not (root / name).exists():
        return root / name
    v = 2
    while (root / f"{name}_{v:03d}").exists():
        v += 1
    return root / f"{name}_{v:03d}"


def latest(root: Path, name: str) -> Path:
    """Newest version of a stage directory."""
    pattern = re.compile(rf"^{re.escape(name)}(?:_(\d{{3,}}))?$")
    found = []
    if root.is_dir():
        for p in root.iterdir():
            m = pattern.match(p.name)
            if m and p.is_dir():
                found.append((int(m.group(1) or 1), p))
    if not found:
        raise FileNotFoundError(f"no '{name}' directory under {root}")
    return max(found)[1]


def _is_images(cfg: ExperimentConfig) -> bool:
    return cfg.dataset.kind == "toy_images"


def _write_dataset(stage: Stage, cfg: ExperimentConfig, name: str, data: np.ndarray) -> None:
    if _is_images(cfg):
        sub = stage.dir / name
        sub.mkdir()
        for i, img in enumerate(data):
            write_pgm(stage.path(f"{name}/{i:05d}.pgm"), img)
    else:
        write_rows(stage.path(f"{name}.csv"), data, header=["x", "y"])


def _read_dataset(data_dir: Path, cfg: ExperimentConfig, name: str) -> np.ndarray:
    if _is_images(cfg):
        files = sorted((data_dir / name).glob("*.pgm"))
        if not files:
            raise FileNotFoundError(f"no images in {data_dir / name}")
        return np.stack([read_pgm(f) for f in files])
    path = data_dir / f"{name}.csv"
    if not path.exists():
        raise FileNotFoundError(f"missing {path}")
    return read_rows(path)


def cmd_make_data(cfg: ExperimentConfig) -> Path:
    root = Path(cfg.output_dir)
    stage = Stage(root, "data")
    spec = cfg.dataset
    train = generate(spec.kind, spec.n, derive_rng(cfg.seed, 10), spec.params)
    pool = generate(spec.kind, spec.n_pool, derive_rng(cfg.seed, 11), spec.params)
    _write_dataset(stage, cfg, "clean", train)
    _write_dataset(stage, cfg, "pool", pool)
    (stage.dir / "config.json").write_text(config_mod.dumps(cfg) + "\n")
    stage.files.append("config.json")
    return stage.finish(n=len(train), n_pool=len(pool))


def build_operator(cfg: ExperimentConfig, shape: tuple[int, ...], index: int) -> ops_mod.MeasurementOperator:
    spec = cfg.operator
    if spec.kind == "awgn":
        return ops_mod.awgn(shape, spec.noise_std)
    if spec.kind == "inpaint":
        mask = ops_mod.make_random_mask(shape, spec.keep_fraction, derive_rng(spec.mask_seed, index))
        return ops_mod.inpaint(mask, spec.noise_std)
    return ops_mod.blur(shape, ops_mod.make_gaussian_kernel(spec.kernel_size, spec.kernel_std), spec.noise_std)


def cmd_corrupt(cfg: ExperimentConfig) -> Path:
    root = Path(cfg.output_dir)
    clean = _read_dataset(latest(root, "data"), cfg, "clean")
    shape = clean.shape[1:]
    stage = Stage(root, "measurements")
    ys, items = [], []
    for i, x in enumerate(clean):
        op = build_operator(cfg, shape, i)
        ys.append(ops_mod.apply(op, x, derive_rng(cfg.seed, 20, i)))
        item = {"index": i}
        if op.kind == "inpaint":
            item["mask_seed"] = [cfg.operator.mask_seed, i]
            item["mask"] = op.mask.astype(int).ravel().tolist()
        items.append(item)
    write_rows(stage.path("y.csv"), np.stack(ys), header=[f"v{j}" for j in range(int(np.prod(shape)))])
    sidecar = {
        "operator": dataclasses.asdict(cfg.operator),
        "shape": list(shape),
        "noise_std": cfg.operator.noise_std,
        "items": items,
    }
    (stage.dir / "meta.json").write_text(json.dumps(sidecar) + "\n")
    stage.files.append("meta.json")
    return stage.finish(n=len(ys))


def load_measurements(meas_dir: Path, cfg: ExperimentConfig):
    meta_path = meas_dir / "meta.json"
    y_path = meas_dir / "y.csv"
    if not meta_path.exists() or not y_path.exists():
        raise FileNotFoundError(f"measurements incomplete in {meas_dir}")
    meta = json.loads(meta_path.read_text())
    shape = tuple(meta["shape"])
    ys = read_rows(y_path).reshape((-1, *shape))
    ops = []
    for item in meta["items"]:
        op = build_operator(cfg, shape, item["index"])
        if "mask" in item and not np.array_equal(op.mask.ravel(), np.asarray(item["mask"], dtype=float)):
            raise ValueError(f"sidecar mask {item['index']} does not match its seed")
        ops.append(op)
    return ys, ops


def _metric_row(r) -> list:
    return [r.k, r.alpha_k, r.dsm_loss, r.psnr_mean, r.sw_distance, r.n_active, int(r.reset), int(r.flagged)]


def cmd_run(cfg: ExperimentConfig) -> Path:
    root = Path(cfg.output_dir)
    try:
        data_dir = latest(root, "data")
        clean = _read_dataset(data_dir, cfg, "clean")
        pool = _read_dataset(data_dir, cfg, "pool")
    except (OSError, ValueError) as exc:
        raise StageError("initialization inputs", exc) from exc
    try:
        ys, ops = load_measurements(latest(root, "measurements"), cfg)
    except (OSError, ValueError, KeyError) as exc:
        raise StageError("E-step inputs", exc) from exc
    if len(ys) != len(clean):
        raise StageError("E-step inputs", ValueError("measurement count does not match clean data"))

    sched = make_linear_schedule(cfg.schedule.T, cfg.schedule.beta_min, cfg.schedule.beta_max)
    rng = derive_rng(cfg.seed, 30)
    pick = np.sort(derive_rng(cfg.seed, 31).choice(len(pool), size=cfg.em.n_init_clean, replace=False))
    stage = Stage(root, "run")
    model, state = em_run(list(zip(ys, ops)), pool[pick], sched, cfg.em, rng, truth=clean,
                          reference=pool.reshape(len(pool), -1), checkpoint_dir=stage.dir)
    stage.files += [f"model_iter_{k}.emdm" for k in range(cfg.em.n_iters + 1)]
    save_checkpoint(model, stage.path("model_final.emdm"))
    write_table(stage.path("metrics.csv"), METRIC_COLUMNS, [_metric_row(r) for r in state.metrics_log])

    # first chain of each active measurement from the final E-step
    first = state.last_samples[::cfg.em.chains_per_y]
    if _is_images(cfg):
        for j, i in enumerate(state.last_active[:cfg.eval.n_montage]):
            write_pgm(stage.path(f"montage_{j:03d}.pgm"), montage([ys[i], first[j], clean[i]]))
    else:
        write_rows(stage.path("posterior_samples.csv"), first.reshape(len(first), -1), header=["x", "y"])
    (stage.dir / "config.json").write_text(config_mod.dumps(cfg) + "\n")
    stage.files.append("config.json")
    return stage.finish(inputs={"data": data_dir.name})


def _score_source(cfg: ExperimentConfig, checkpoint: Path | None, root: Path):
    if cfg.eval.prior == "oracle":
        return gmm_score_fn(gmm_from_params(cfg.dataset.params)), "oracle"
    path = checkpoint if checkpoint is not None else latest(root, "run") / "model_final.emdm"
    return load_checkpoint(path), str(path)


def psnr_rows(name: str, estimates: np.ndarray, truth: np.ndarray) -> list[tuple[str, float]]:
    """Mean PSNR row; exact reconstructions give the +inf sentinel."""
    return [(f"psnr_{name}", float(np.mean([psnr(e, x) for e, x in zip(estimates, truth)])))]


def cmd_eval(cfg: ExperimentConfig, checkpoint: Path | None = None) -> Path:
    root = Path(cfg.output_dir)
    model, source = _score_source(cfg, checkpoint, root)
    data_dir = latest(root, "data")
    clean = _read_dataset(data_dir, cfg, "clean")
    pool = _read_dataset(data_dir, cfg, "pool")
    ys, ops = load_measurements(latest(root, "measurements"), cfg)
    sched = make_linear_schedule(cfg.schedule.T, cfg.schedule.beta_min, cfg.schedule.beta_max)
    n = min(cfg.eval.n_items, len(ys))
    shape = ys.shape[1:]
    fill = float(np.mean(pool))
    truth = clean[:n]

    pmc = np.stack([c[0] for c in posterior_batch(model, ops[:n], list(ys[:n]), cfg.em.pmc_cfg,
                                                  derive_rng(cfg.seed, 40), fill=fill)])
    rows = psnr_rows("measurement", ys[:n], truth) + psnr_rows("pmc", pmc, truth)
    flat_truth = truth.reshape(n, -1)
    if not _is_images(cfg):
        rows.append(("sw_posterior_pmc", sliced_wasserstein(pmc.reshape(n, -1), flat_truth,
                                                             cfg.eval.sw_projections, derive_rng(cfg.seed, 41))))
    if cfg.eval.run_dps:
        stacked = ops_mod.stack_operators(ops[:n])
        dps = sample_dps(model, sched, stacked, ys[:n], cfg.dps, derive_rng(cfg.seed, 42))
        rows += psnr_rows("dps", dps, truth)
        if not _is_images(cfg):
            rows.append(("sw_posterior_dps", sliced_wasserstein(dps.reshape(n, -1), flat_truth,
                                                                 cfg.eval.sw_projections, derive_rng(cfg.seed, 41))))
    gen = sample_unconditional(model, sched, shape, cfg.eval.n_samples, derive_rng(cfg.seed, 43))
    rows.append(("sw_generation", sliced_wasserstein(gen.reshape(len(gen), -1), pool.reshape(len(pool), -1),
                                                     cfg.eval.sw_projections, derive_rng(cfg.seed, 44))))

    stage = Stage(root, "eval")
    write_table(stage.path("report.csv"), ["metric", "value"], rows)
    return stage.finish(prior=source)


def cmd_sample(cfg: ExperimentConfig, checkpoint: Path | None = None, n: int | None = None) -> Path:
    root = Path(cfg.output_dir)
    model, source = _score_source(cfg, checkpoint, root)
    sched = make_linear_schedule(cfg.schedule.T, cfg.schedule.beta_min, cfg.schedule.beta_max)
    n = cfg.eval.n_samples if n is None else n
    if _is_images(cfg):
        size = int(cfg.dataset.params.get("size", 16))
        shape: tuple[int, ...] = (size, size)
    else:
        shape = (2,)
    gen = sample_unconditional(model, sched, shape, n, derive_rng(cfg.seed, 50))
    stage = Stage(root, "sample")
    if _is_images(cfg):
        (stage.dir / "images").mkdir()
        for i, img in enumerate(gen):
            write_pgm(stage.path(f"images/{i:05d}.pgm"), img)
    else:
        write_rows(stage.path("samples.csv"), gen, header=["x", "y"])
    return stage.finish(prior=source, n=n)


def _stage_exit_code(exc: StageError) -> int:
    cause = exc.cause
    while isinstance(cause, StageError):
        cause = cause.cause
    if isinstance(cause, (OSError, CheckpointFormatError)) or exc.stage.endswith("inputs"):
        return EXIT_IO
    return EXIT_DIVERGED


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmcem", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("make-data", "corrupt", "run", "eval", "sample"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", type=Path, help="override the config output_dir")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("eval", "sample"):
            p.add_argument("--checkpoint", type=Path)
        if name == "sample":
            p.add_argument("--n", type=int)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_mod.load(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        if args.out is not None:
            cfg = dataclasses.replace(cfg, output_dir=str(args.out))
        if args.command == "make-data":
            out = cmd_make_data(cfg)
        elif args.command == "corrupt":
            out = cmd_corrupt(cfg)
        elif args.command == "run":
            out = cmd_run(cfg)
        elif args.command == "eval":
            out = cmd_eval(cfg, args.checkpoint)
        else:
            out = cmd_sample(cfg, args.checkpoint, args.n)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _stage_exit_code(exc)
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, ValueError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
