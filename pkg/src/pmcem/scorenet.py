"""MLP score model with hand-written backprop, DSM training and Tweedie denoising.

The network predicts the noise ``eps`` of the variance-preserving forward
process from ``(x_t, sigma_t)``. Everything outside this module talks to it
through :func:`score`, which returns the score of the data distribution
convolved with ``N(0, sigma^2 I)``:

    score(x, sigma) = grad log (p * N(0, sigma^2 I))(x).

Because ``x0 + sigma * eps`` rescaled by ``1/sqrt(1 + sigma^2)`` is exactly a
VP sample at noise level ``sigma / sqrt(1 + sigma^2)``, that score is simply
``-eps_hat / sigma`` with the network evaluated on the rescaled input.
"""

from __future__ import annotations

import struct
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import CheckpointFormatError, DivergenceError, InvalidArgumentError, ShapeError
from .numkit import Rng
from .schedule import NoiseSchedule, perturb

ScoreFn = Callable[[np.ndarray, float], np.ndarray]

# VE noise levels below this are evaluated at the floor (score at sigma=0 is undefined
# for an eps-parameterized network).
SIGMA_FLOOR = 1e-3
MAGIC = b"EMDM"
FORMAT_VERSION = 1


@dataclass
class ScoreModel:
    layer_dims: list[int]
    params: list[np.ndarray]
    embed_freqs: np.ndarray
    activation: str = "silu"
    loss_trace: list[float] = field(default_factory=list, repr=False, compare=False)

    @property
    def data_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def embed_dim(self) -> int:
        return 2 * len(self.embed_freqs)

    def copy(self) -> ScoreModel:
        return ScoreModel(list(self.layer_dims), [p.copy() for p in self.params],
                          self.embed_freqs.copy(), self.activation)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch: int = 512
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 1.0
    ema_decay: float = 0.999
    cosine_lr: bool = True
    small_noise_frac: float = 0.5

    def __post_init__(self):
        if self.steps < 0 or self.batch < 1:
            raise InvalidArgumentError("steps must be >= 0 and batch >= 1")
        if self.lr <= 0 or self.grad_clip <= 0:
            raise InvalidArgumentError("lr and grad_clip must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise InvalidArgumentError("Adam betas must lie in (0, 1)")
        if not 0 <= self.ema_decay < 1:
            raise InvalidArgumentError(f"ema_decay must lie in [0, 1), got {self.ema_decay}")
        if not 0 <= self.small_noise_frac <= 1:
            raise InvalidArgumentError(f"small_noise_frac must lie in [0, 1], got {self.small_noise_frac}")


def embed_frequencies(embed_dim: int) -> np.ndarray:
    if embed_dim < 2 or embed_dim % 2:
        raise InvalidArgumentError(f"embedding width must be even and >= 2, got {embed_dim}")
    return np.geomspace(0.25, 8.0, embed_dim // 2)


def init_model(data_dim: int, rng: Rng, hidden: Sequence[int] = (128, 128),
               embed_dim: int = 16, zero_output: bool = False) -> ScoreModel:
    freqs = embed_frequencies(embed_dim)
    dims = [data_dim + embed_dim, *hidden, data_dim]
    params = []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        last = i == len(dims) - 2
        w = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
        if last:
            w = np.zeros_like(w) if zero_output else 0.1 * w
        params += [w, np.zeros(fan_out)]
    return ScoreModel(layer_dims=dims, params=params, embed_freqs=freqs)


def _silu(z):
    return z * expit(z)


def _silu_grad(z):
    s = expit(z)
    return s * (1.0 + z * (1.0 - s))


def _embed(model: ScoreModel, sigma_vp: np.ndarray) -> np.ndarray:
    c = np.log(np.maximum(sigma_vp, 1e-4))[:, None] * model.embed_freqs[None, :]
    return np.concatenate([np.sin(c), np.cos(c)], axis=1)


def _forward(model: ScoreModel, x: np.ndarray, sigma_vp: np.ndarray):
    h = np.concatenate([x, _embed(model, sigma_vp)], axis=1)
    cache = [h]
    n_layers = len(model.params) // 2
    for i in range(n_layers):
        w, b = model.params[2 * i], model.params[2 * i + 1]
        z = h @ w + b
        if i < n_layers - 1:
            cache.append(z)
            h = _silu(z)
            cache.append(h)
        else:
            h = z
    return h, cache


def _backward(model: ScoreModel, cache: list, dout: np.ndarray) -> list[np.ndarray]:
    n_layers = len(model.params) // 2
    grads: list[np.ndarray] = [None] * len(model.params)  # type: ignore[list-item]
    delta = dout
    for i in reversed(range(n_layers)):
        h_in = cache[2 * i]
        grads[2 * i] = h_in.T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.params[2 * i].T) * _silu_grad(cache[2 * i - 1])
    return grads


def predict_eps(model: ScoreModel, x_vp: np.ndarray, sigma_vp: float | np.ndarray) -> np.ndarray:
    """Raw network output for VP inputs ``x_vp`` (n x d) at VP noise level(s)."""
    x_vp = np.asarray(x_vp, dtype=float)
    if x_vp.ndim != 2 or x_vp.shape[1] != model.data_dim:
        raise ShapeError(f"expected (n, {model.data_dim}) input, got {x_vp.shape}")
    sig = np.broadcast_to(np.asarray(sigma_vp, dtype=float), (x_vp.shape[0],))
    out, _ = _forward(model, x_vp, sig)
    return out


def score(model: ScoreModel, x: np.ndarray, sigma: float) -> np.ndarray:
    """Score of the sigma-smoothed data density at ``x`` (rows are points)."""
    if sigma < 0:
        raise InvalidArgumentError(f"sigma must be >= 0, got {sigma}")
    x = np.asarray(x, dtype=float)
    if x.size % model.data_dim:
        raise ShapeError(f"input of shape {x.shape} does not split into rows of {model.data_dim}")
    flat = x.reshape(-1, model.data_dim) if x.size else np.zeros((0, model.data_dim))
    s = max(float(sigma), SIGMA_FLOOR)
    shrink = 1.0 / np.sqrt(1.0 + s * s)
    eps = predict_eps(model, flat * shrink, s * shrink)
    return (-eps / s).reshape(x.shape)


def score_of(source: ScoreModel | ScoreFn, x: np.ndarray, sigma: float) -> np.ndarray:
    """Dispatch to a trained model or to an injected analytic score function."""
    if isinstance(source, ScoreModel):
        return score(source, x, sigma)
    return np.asarray(source(x, sigma), dtype=float)


def vp_score(source: ScoreModel | ScoreFn, x_t: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Score of the VP marginal p_t at ``x_t``."""
    sig = float(sched.sigma[t])
    if isinstance(source, ScoreModel):
        flat = x_t.reshape(-1, source.data_dim)
        return (-predict_eps(source, flat, sig) / sig).reshape(x_t.shape)
    root = np.sqrt(sched.alpha_bar[t])
    return score_of(source, x_t / root, sig / root) / root


def tweedie_denoise(source: ScoreModel | ScoreFn, x: np.ndarray, sigma: float) -> np.ndarray:
    if sigma < 0:
        raise InvalidArgumentError(f"sigma must be >= 0, got {sigma}")
    x = np.asarray(x, dtype=float)
    if sigma == 0:
        return x.copy()
    return x + sigma ** 2 * score_of(source, x, sigma)


def step_distribution(sched: NoiseSchedule, small_noise_frac: float) -> np.ndarray:
    """Probabilities over diffusion steps: uniform, mixed with a share that is uniform in log sigma."""
    log_sigma = np.log(sched.sigma)
    if sched.T == 1 or small_noise_frac == 0:
        return np.full(sched.T, 1.0 / sched.T)
    w = np.gradient(log_sigma)
    return (1 - small_noise_frac) / sched.T + small_noise_frac * w / w.sum()


def dsm_loss_and_grad(model: ScoreModel, x0_batch: np.ndarray, sched: NoiseSchedule,
                      rng: Rng, small_noise_frac: float = 0.0) -> tuple[float, list[np.ndarray]]:
    """Weighted denoising score matching loss and its exact parameter gradients.

    With weight ``1 - alpha_bar[t]`` the score-domain regression equals the
    unit-weight eps regression ``mean_batch ||eps_hat - eps||^2``. Steps are
    uniform unless ``small_noise_frac > 0`` moves that share of draws to a
    log-uniform-in-sigma law, which trains the low-noise end harder.
    """
    x0 = np.asarray(x0_batch, dtype=float)
    if x0.ndim != 2 or x0.shape[0] == 0:
        raise InvalidArgumentError(f"need a non-empty (n, d) batch, got shape {x0.shape}")
    n = x0.shape[0]
    if small_noise_frac > 0:
        cdf = np.cumsum(step_distribution(sched, small_noise_frac))
        t = np.minimum(np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right"), sched.T - 1)
    else:
        t = rng.integers(0, sched.T, size=n)
    x_t, eps = perturb(x0, t, rng, sched)
    out, cache = _forward(model, x_t, sched.sigma[t])
    resid = out - eps
    loss = float(np.sum(resid ** 2) / n)
    grads = _backward(model, cache, 2.0 * resid / n)
    return loss, grads


def train(model: ScoreModel, data: np.ndarray, sched: NoiseSchedule, cfg: TrainConfig,
          rng: Rng) -> ScoreModel:
    """Adam on mini-batch DSM. Returns a new model; its ``loss_trace`` holds per-step losses.

    With ``cfg.ema_decay > 0`` the returned weights are an exponential moving
    average of the iterates; ``cfg.cosine_lr`` anneals the step size to zero.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[0] < 1:
        raise InvalidArgumentError(f"need at least one training row, got shape {data.shape}")
    out = model.copy()
    m = [np.zeros_like(p) for p in out.params]
    v = [np.zeros_like(p) for p in out.params]
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    n = data.shape[0]
    ema = [p.copy() for p in out.params] if cfg.ema_decay > 0 else None
    for step in range(cfg.steps):
        idx = rng.integers(0, n, size=cfg.batch)
        loss, grads = dsm_loss_and_grad(out, data[idx], sched, rng, cfg.small_noise_frac)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite DSM loss at step {step}", step=step)
        gnorm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
        clip = min(1.0, cfg.grad_clip / (gnorm + 1e-12))
        lr = cfg.lr * 0.5 * (1 + np.cos(np.pi * step / cfg.steps)) if cfg.cosine_lr else cfg.lr
        lr_t = lr * np.sqrt(1 - b2 ** (step + 1)) / (1 - b1 ** (step + 1))
        for p, g, mi, vi in zip(out.params, grads, m, v):
            g = g * clip
            mi *= b1
            mi += (1 - b1) * g
            vi *= b2
            vi += (1 - b2) * g * g
            p -= lr_t * mi / (np.sqrt(vi) + cfg.adam_eps)
        if ema is not None:
            # short warm-up so brief runs are not dominated by the starting point
            d = min(cfg.ema_decay, (1 + step) / (10 + step))
            for e, p in zip(ema, out.params):
                e *= d
                e += (1 - d) * p
        out.loss_trace.append(loss)
    if ema is not None:
        out.params = ema
    return out


def save_checkpoint(model: ScoreModel, path: str | Path) -> None:
    """Binary layout: b"EMDM", u32 version, u32 n_dims, u32 dims..., then per
    layer the weight matrix (row-major, in x out) and bias as little-endian f32."""
    buf = bytearray(MAGIC)
    buf += struct.pack("<II", FORMAT_VERSION, len(model.layer_dims))
    buf += struct.pack(f"<{len(model.layer_dims)}I", *model.layer_dims)
    for p in model.params:
        buf += np.ascontiguousarray(p, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path: str | Path) -> ScoreModel:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 12:
        raise CheckpointFormatError(f"{path}: truncated header")
    version, n_dims = struct.unpack_from("<II", raw, 4)
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported format version {version}")
    off = 12
    try:
        dims = list(struct.unpack_from(f"<{n_dims}I", raw, off))
    except struct.error as exc:
        raise CheckpointFormatError(f"{path}: truncated layer list") from exc
    off += 4 * n_dims
    params = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        for shape in ((fan_in, fan_out), (fan_out,)):
            count = int(np.prod(shape))
            chunk = raw[off:off + 4 * count]
            if len(chunk) != 4 * count:
                raise CheckpointFormatError(f"{path}: truncated parameter block")
            params.append(np.frombuffer(chunk, dtype="<f4").astype(float).reshape(shape))
            off += 4 * count
    if off != len(raw):
        raise CheckpointFormatError(f"{path}: {len(raw) - off} trailing bytes")
    embed_dim = dims[0] - dims[-1]
    return ScoreModel(layer_dims=dims, params=params, embed_freqs=embed_frequencies(embed_dim))
