"""Toy conditional video diffusion model with exact hand-written gradients.

The denoiser is a two-hidden-layer tanh MLP over the flattened noisy video,
a fixed sinusoidal timestep embedding, and a learned condition embedding.
Everything runs in float64 so analytic gradients can be certified against
central finite differences to tight tolerances.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidRange, MagicMismatch, ShapeMismatch, StepOutOfRange, TruncatedPayload
from .rng import Stream

CKPT_MAGIC = b"DFPM"
CKPT_VERSION = 1


# --- noise schedule ----------------------------------------------------------

@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule beta_t with alpha_t = 1 - beta_t and the cumulative
    products alpha_bar_t; index 0 corresponds to diffusion step t = 1."""

    num_steps: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray


def build_schedule(num_steps: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Linear beta schedule, endpoints inclusive."""
    if num_steps < 1:
        raise InvalidRange("num_steps must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise InvalidRange("need 0 < beta_start <= beta_end < 1")
    beta = np.linspace(beta_start, beta_end, num_steps)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    for arr in (beta, alpha, alpha_bar):
        arr.setflags(write=False)
    return NoiseSchedule(num_steps=num_steps, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def default_schedule() -> NoiseSchedule:
    return build_schedule(50, 1e-4, 0.1)


def _check_step(t: int, schedule: NoiseSchedule) -> None:
    if not 1 <= t <= schedule.num_steps:
        raise StepOutOfRange(f"t={t} outside [1, {schedule.num_steps}]")


def forward_step(x_prev: np.ndarray, t: int, schedule: NoiseSchedule, stream: Stream) -> np.ndarray:
    """One forward kernel application: sqrt(alpha_t) x + sqrt(beta_t) z."""
    _check_step(t, schedule)
    z = stream.normals(x_prev.shape)
    return math.sqrt(schedule.alpha[t - 1]) * x_prev + math.sqrt(schedule.beta[t - 1]) * z


def q_sample(x0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Single-shot corruption to step t: sqrt(abar_t) x0 + sqrt(1-abar_t) eps."""
    if x0.shape != eps.shape:
        raise ShapeMismatch(f"x0 {x0.shape} vs eps {eps.shape}")
    _check_step(t, schedule)
    abar = schedule.alpha_bar[t - 1]
    return math.sqrt(abar) * x0 + math.sqrt(1.0 - abar) * eps


# --- denoiser ------------------------------------------------------------------

@dataclass(frozen=True)
class ModelConfig:
    video_shape: tuple[int, int, int, int]
    hidden: tuple[int, int] = (64, 64)
    time_dim: int = 16
    cond_count: int = 4
    cond_dim: int = 8

    def __post_init__(self):
        if self.time_dim % 2 != 0:
            raise ValueError("time_dim must be even")

    @property
    def flat_dim(self) -> int:
        t, h, w, c = self.video_shape
        return t * h * w * c

    @property
    def input_dim(self) -> int:
        return self.flat_dim + self.time_dim + self.cond_dim


@dataclass
class DenoiserParams:
    """Weights of the denoiser; arrays are row-major float64.

    `skip` is a learned scalar gain from the noisy input to the prediction
    (initialized to zero). The hidden bottleneck is far narrower than the
    video, so without a full-rank path the network cannot represent the white
    component of the noise it must predict; the skip carries that component
    while the fully connected stack handles low-rank content."""

    config: ModelConfig
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    cond_emb: np.ndarray
    skip: np.ndarray

    _ORDER = ("w1", "b1", "w2", "b2", "w3", "b3", "cond_emb", "skip")

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, name) for name in self._ORDER]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def from_vector(self, vec: np.ndarray) -> "DenoiserParams":
        out = {}
        pos = 0
        for name in self._ORDER:
            a = getattr(self, name)
            out[name] = vec[pos : pos + a.size].reshape(a.shape).copy()
            pos += a.size
        if pos != vec.size:
            raise ShapeMismatch(f"vector has {vec.size} entries, params need {pos}")
        return DenoiserParams(config=self.config, **out)

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(config=self.config, **{n: getattr(self, n).copy() for n in self._ORDER})

    def num_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


def init_params(config: ModelConfig, stream: Stream) -> DenoiserParams:
    h1, h2 = config.hidden
    m, d = config.input_dim, config.flat_dim

    def dense(rows, cols, s):
        return s.normals((rows, cols)) / math.sqrt(cols)

    return DenoiserParams(
        config=config,
        w1=dense(h1, m, stream.split("w1")),
        b1=np.zeros(h1),
        w2=dense(h2, h1, stream.split("w2")),
        b2=np.zeros(h2),
        w3=dense(d, h2, stream.split("w3")),
        b3=np.zeros(d),
        cond_emb=stream.split("cond").normals((config.cond_count, config.cond_dim)),
        skip=np.zeros(1),
    )


def zero_grads(params: DenoiserParams) -> DenoiserParams:
    return DenoiserParams(
        config=params.config, **{n: np.zeros_like(getattr(params, n)) for n in params._ORDER}
    )


def time_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def forward(
    params: DenoiserParams, x: np.ndarray, t: np.ndarray, cond: np.ndarray
) -> tuple[np.ndarray, tuple]:
    """Batched noise prediction. x: (B, D) flat noisy videos. Returns the
    prediction (B, D) and the cache needed for the backward pass."""
    cfg = params.config
    x = np.atleast_2d(x)
    if x.shape[1] != cfg.flat_dim:
        raise ShapeMismatch(f"x has {x.shape[1]} features, model expects {cfg.flat_dim}")
    t = np.atleast_1d(t)
    cond = np.atleast_1d(cond)
    temb = time_embedding(t, cfg.time_dim)
    cemb = params.cond_emb[cond]
    x_in = np.concatenate([x, temb, cemb], axis=1)
    h1 = np.tanh(x_in @ params.w1.T + params.b1)
    h2 = np.tanh(h1 @ params.w2.T + params.b2)
    out = h2 @ params.w3.T + params.b3 + params.skip[0] * x
    return out, (x_in, h1, h2, cond)


def backward(params: DenoiserParams, cache: tuple, g_out: np.ndarray) -> DenoiserParams:
    """Exact gradients of a scalar loss given d loss / d prediction."""
    x_in, h1, h2, cond = cache
    cfg = params.config
    g_out = np.atleast_2d(g_out)

    gw3 = g_out.T @ h2
    gb3 = g_out.sum(axis=0)
    g_h2 = g_out @ params.w3
    g_a2 = g_h2 * (1.0 - h2 * h2)
    gw2 = g_a2.T @ h1
    gb2 = g_a2.sum(axis=0)
    g_h1 = g_a2 @ params.w2
    g_a1 = g_h1 * (1.0 - h1 * h1)
    gw1 = g_a1.T @ x_in
    gb1 = g_a1.sum(axis=0)
    g_in = g_a1 @ params.w1

    g_cemb = np.zeros_like(params.cond_emb)
    np.add.at(g_cemb, cond, g_in[:, cfg.flat_dim + cfg.time_dim :])
    x = x_in[:, : cfg.flat_dim]
    g_skip = np.array([float(np.sum(g_out * x))])
    return DenoiserParams(
        config=cfg, w1=gw1, b1=gb1, w2=gw2, b2=gb2, w3=gw3, b3=gb3, cond_emb=g_cemb, skip=g_skip
    )


# --- losses ---------------------------------------------------------------------

def sft_loss(
    params: DenoiserParams,
    x0: np.ndarray,
    condition: int,
    t: int,
    eps: np.ndarray,
    schedule: NoiseSchedule,
) -> float:
    """Per-element mean squared error between eps and its prediction."""
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    eps = np.asarray(eps, dtype=np.float64).ravel()
    xt = q_sample(x0, t, eps, schedule)
    pred, _ = forward(params, xt[None, :], [t], [condition])
    return float(np.mean((eps - pred[0]) ** 2))


def sft_grad(
    params: DenoiserParams,
    batch: list[tuple[np.ndarray, int, int, np.ndarray]],
    schedule: NoiseSchedule,
) -> DenoiserParams:
    """Exact gradient of the batch-mean SFT loss.

    batch entries are (x0, condition, t, eps); x0 and eps may be any shape
    that flattens to the model dimension.
    """
    if not batch:
        raise ValueError("batch must be nonempty")
    xs, ts, cs, epss = [], [], [], []
    for x0, condition, t, eps in batch:
        x0 = np.asarray(x0, dtype=np.float64).ravel()
        eps = np.asarray(eps, dtype=np.float64).ravel()
        xs.append(q_sample(x0, t, eps, schedule))
        ts.append(t)
        cs.append(condition)
        epss.append(eps)
    x = np.stack(xs)
    eps_mat = np.stack(epss)
    pred, cache = forward(params, x, ts, cs)
    n = pred.shape[1]
    b = pred.shape[0]
    g_out = 2.0 * (pred - eps_mat) / (n * b)
    return backward(params, cache, g_out)


# --- sampling ----------------------------------------------------------------------

def ancestral_sample(
    params: DenoiserParams, condition: int, schedule: NoiseSchedule, stream: Stream
) -> np.ndarray:
    """Reverse chain from pure noise; clamps to [0, 1] only at the end."""
    cfg = params.config
    x = stream.normals((cfg.flat_dim,))
    for t in range(schedule.num_steps, 0, -1):
        eps_hat, _ = forward(params, x[None, :], [t], [condition])
        beta = schedule.beta[t - 1]
        abar = schedule.alpha_bar[t - 1]
        x = (x - beta / math.sqrt(1.0 - abar) * eps_hat[0]) / math.sqrt(schedule.alpha[t - 1])
        if t > 1:
            x = x + math.sqrt(beta) * stream.normals((cfg.flat_dim,))
    return np.clip(x, 0.0, 1.0).reshape(cfg.video_shape)


# --- checkpoint I/O --------------------------------------------------------------------

_CKPT_HEAD = struct.Struct("<4sI9I")


def save_checkpoint(params: DenoiserParams, path) -> None:
    cfg = params.config
    head = _CKPT_HEAD.pack(
        CKPT_MAGIC,
        CKPT_VERSION,
        *cfg.video_shape,
        cfg.hidden[0],
        cfg.hidden[1],
        cfg.time_dim,
        cfg.cond_count,
        cfg.cond_dim,
    )
    with open(path, "wb") as fh:
        fh.write(head)
        for a in params.arrays():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> DenoiserParams:
    data = Path(path).read_bytes()
    if len(data) < _CKPT_HEAD.size or data[:4] != CKPT_MAGIC:
        raise MagicMismatch(f"{path} is not a checkpoint file")
    fields = _CKPT_HEAD.unpack_from(data)
    t, h, w, c, h1, h2, time_dim, cond_count, cond_dim = fields[2:]
    cfg = ModelConfig(
        video_shape=(t, h, w, c),
        hidden=(h1, h2),
        time_dim=time_dim,
        cond_count=cond_count,
        cond_dim=cond_dim,
    )
    shapes = [
        (h1, cfg.input_dim),
        (h1,),
        (h2, h1),
        (h2,),
        (cfg.flat_dim, h2),
        (cfg.flat_dim,),
        (cond_count, cond_dim),
        (1,),
    ]
    need = sum(int(np.prod(s)) for s in shapes) * 8
    body = data[_CKPT_HEAD.size :]
    if len(body) < need:
        raise TruncatedPayload(f"{path}: payload {len(body)} bytes, header promises {need}")
    arrays = {}
    pos = 0
    for name, shape in zip(DenoiserParams._ORDER, shapes):
        size = int(np.prod(shape))
        arrays[name] = (
            np.frombuffer(body, dtype="<f8", count=size, offset=pos * 8).reshape(shape).copy()
        )
        pos += size
    return DenoiserParams(config=cfg, **arrays)


def params_digest(params: DenoiserParams) -> str:
    """Stable content hash; used to certify the frozen reference."""
    import hashlib

    h = hashlib.sha256()
    for a in params.arrays():
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()
