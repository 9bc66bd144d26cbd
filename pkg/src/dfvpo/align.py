"""Preference-optimization objective and training loop.

The objective couples a DiffusionDPO-style sigmoid preference loss on
win/lose pairs with the plain denoising loss on the win video as an anchor:

    total = dpo + lambda_sft * sft

Win and lose branches always consume the same (t, eps) draw, and the SFT
anchor reuses the win branch's forward pass, so one training step costs two
forward passes through the trained model, two through the frozen reference,
and one backward pass.

Denoising errors are per-element mean squared errors; beta_dpo multiplies
their differences inside the sigmoid. A config flag swaps in the bare
loss-difference objective (no sigmoid, no reference) for ablation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffuse
from .diffuse import DenoiserParams, ModelConfig, NoiseSchedule
from .distort import (
    CurriculumSchedule,
    PreferencePair,
    Provenance,
    apply_distortion,
    curriculum_update,
    default_curriculum,
    draw_spec,
    load_pair_manifest,
)
from .errors import LoseEqualsWin, NonFiniteGradient, ShapeMismatch
from .media import Video, load_video, to_float
from .rng import Stream, derive_key

METRIC_FIELDS = ("step", "stage", "dpo_loss", "sft_loss", "total_loss", "grad_norm", "margin_eval")


@dataclass(frozen=True)
class TrainConfig:
    beta_dpo: float = 500.0
    lambda_sft: float = 1.0
    learning_rate: float = 1e-3
    curriculum: CurriculumSchedule = field(default_factory=default_curriculum)
    batch_size: int = 1
    grad_accum_steps: int = 1
    total_steps: int = 2000
    seed: int = 0
    optimizer: str = "adamw"  # "sgd" | "adamw"
    dpo_form: str = "sigmoid"  # "sigmoid" | "difference" (ablation)
    use_dpo: bool = True  # False: SFT-only baseline
    weight_decay: float = 0.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_interval: int = 100
    eval_draws: int = 4

    def __post_init__(self):
        if self.beta_dpo <= 0 or self.learning_rate < 0:
            raise ValueError("beta_dpo must be positive and learning_rate >= 0")
        if self.lambda_sft < 0:
            raise ValueError("lambda_sft must be >= 0")
        if min(self.batch_size, self.grad_accum_steps) < 1 or self.total_steps < 0:
            raise ValueError("batch_size, grad_accum_steps >= 1 and total_steps >= 0")
        if self.optimizer not in ("sgd", "adamw"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.dpo_form not in ("sigmoid", "difference"):
            raise ValueError(f"unknown dpo_form {self.dpo_form!r}")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "curriculum"}
        d["curriculum"] = self.curriculum.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "curriculum" in d:
            d["curriculum"] = CurriculumSchedule.from_dict(d["curriculum"])
        return cls(**d)


@dataclass
class TrainState:
    """Trained parameters plus the frozen reference and optimizer internals.

    `step` counts applied optimizer updates; `micro_step` counts train_step
    calls (= pairs consumed), which drives the curriculum and the RNG keying.
    The two coincide unless grad_accum_steps > 1.
    """

    params: DenoiserParams
    ref_params: DenoiserParams
    seed: int
    step: int = 0
    micro_step: int = 0
    ref_digest: str = ""
    loss_history: list = field(default_factory=list)
    _accum: DenoiserParams | None = None
    _accum_count: int = 0
    _adam_m: DenoiserParams | None = None
    _adam_v: DenoiserParams | None = None
    _scratch: DenoiserParams | None = None

    def ref_intact(self) -> bool:
        return diffuse.params_digest(self.ref_params) == self.ref_digest


def init_train_state(model_config: ModelConfig, config: TrainConfig) -> TrainState:
    params = diffuse.init_params(model_config, Stream.from_words(config.seed, "init"))
    ref = params.copy()
    return TrainState(
        params=params,
        ref_params=ref,
        seed=config.seed,
        ref_digest=diffuse.params_digest(ref),
    )


# --- losses --------------------------------------------------------------------

def _sigma(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _softplus(z: float) -> float:
    with np.errstate(invalid="ignore"):  # NaN propagates to the gradient check
        return float(np.logaddexp(0.0, z))


def dpo_inner_argument(
    e_th_w: float, e_th_l: float, e_ref_w: float, e_ref_l: float, beta: float
) -> float:
    """z = -(beta/2) [(e_th_w - e_ref_w) - (e_th_l - e_ref_l)]."""
    return -(beta / 2.0) * ((e_th_w - e_ref_w) - (e_th_l - e_ref_l))


def dpo_from_errors(
    e_th_w: float,
    e_th_l: float,
    e_ref_w: float,
    e_ref_l: float,
    beta: float,
    form: str = "sigmoid",
) -> float:
    if form == "difference":
        return e_th_w - e_th_l
    return _softplus(-dpo_inner_argument(e_th_w, e_th_l, e_ref_w, e_ref_l, beta))


def _branch_inputs(pair: PreferencePair, t: int, eps: np.ndarray, schedule: NoiseSchedule):
    win = pair.win.frames.ravel()
    lose = pair.lose.frames.ravel()
    if win.shape != eps.shape:
        raise ShapeMismatch(f"eps has shape {eps.shape}, videos flatten to {win.shape}")
    xw = diffuse.q_sample(win, t, eps, schedule)
    xl = diffuse.q_sample(lose, t, eps, schedule)
    return xw, xl


def _branch_errors(
    params: DenoiserParams, x: np.ndarray, t_rows, cond_rows, eps_rows: np.ndarray
):
    pred, cache = diffuse.forward(params, x, t_rows, cond_rows)
    errs = np.mean((pred - eps_rows) ** 2, axis=1)
    return pred, errs, cache


def dpo_loss(
    state: TrainState,
    pair: PreferencePair,
    t: int,
    eps: np.ndarray,
    schedule: NoiseSchedule,
    beta_dpo: float,
    form: str = "sigmoid",
) -> float:
    """Preference loss at one shared (t, eps) draw.

    sigmoid form: -log sigma(-(beta/2) [(e_th_w - e_ref_w) - (e_th_l - e_ref_l)]),
    where each e is the per-element mean squared denoising error.
    difference form (ablation): e_th_w - e_th_l.
    """
    eps = np.asarray(eps, dtype=np.float64).ravel()
    xw, xl = _branch_inputs(pair, t, eps, schedule)
    x = np.stack([xw, xl])
    ts = [t, t]
    cs = [pair.condition, pair.condition]
    eps_rows = np.stack([eps, eps])
    _, e_th, _ = _branch_errors(state.params, x, ts, cs, eps_rows)
    if form == "difference":
        return float(e_th[0] - e_th[1])
    _, e_ref, _ = _branch_errors(state.ref_params, x, ts, cs, eps_rows)
    return dpo_from_errors(e_th[0], e_th[1], e_ref[0], e_ref[1], beta_dpo)


@dataclass(frozen=True)
class LossParts:
    total: float
    dpo_part: float
    sft_part: float


def total_loss(
    state: TrainState,
    pair: PreferencePair,
    t: int,
    eps: np.ndarray,
    schedule: NoiseSchedule,
    config: TrainConfig,
) -> LossParts:
    """dpo + lambda * sft, the SFT anchor evaluated on the win video at the
    same (t, eps) draw."""
    eps = np.asarray(eps, dtype=np.float64).ravel()
    parts, _ = _batch_loss_and_grad(state, [(pair, t, eps)], schedule, config, need_grad=False)
    return parts


def _batch_loss_and_grad(
    state: TrainState,
    items: list,
    schedule: NoiseSchedule,
    config: TrainConfig,
    need_grad: bool = True,
):
    """Exact loss parts and gradient over a list of (pair, t, eps) items.

    All win/lose rows go through the trained and reference models as two
    batched forwards; the backward pass runs once with per-row cotangents.
    """
    b = len(items)
    rows, ts, cs, eps_rows = [], [], [], []
    for pair, t, eps in items:
        xw, xl = _branch_inputs(pair, t, eps, schedule)
        rows.extend([xw, xl])
        ts.extend([t, t])
        cs.extend([pair.condition, pair.condition])
        eps_rows.extend([eps, eps])
    x = np.stack(rows)
    eps_mat = np.stack(eps_rows)

    pred_th, e_th, cache = _branch_errors(state.params, x, ts, cs, eps_mat)
    if config.use_dpo and config.dpo_form == "sigmoid":
        _, e_ref, _ = _branch_errors(state.ref_params, x, ts, cs, eps_mat)
    else:
        e_ref = np.zeros_like(e_th)

    n = x.shape[1]
    dpo_sum = 0.0
    sft_sum = 0.0
    coef = np.zeros(2 * b)
    for i in range(b):
        w, l = 2 * i, 2 * i + 1
        sft_sum += e_th[w]
        if not config.use_dpo:
            coef[w] = config.lambda_sft
        elif config.dpo_form == "difference":
            dpo_sum += e_th[w] - e_th[l]
            coef[w] = 1.0 + config.lambda_sft
            coef[l] = -1.0
        else:
            z = dpo_inner_argument(e_th[w], e_th[l], e_ref[w], e_ref[l], config.beta_dpo)
            dpo_sum += _softplus(-z)
            s = (config.beta_dpo / 2.0) * (1.0 - _sigma(z))
            coef[w] = s + config.lambda_sft
            coef[l] = -s
    parts = LossParts(
        total=(dpo_sum + config.lambda_sft * sft_sum) / b,
        dpo_part=dpo_sum / b,
        sft_part=sft_sum / b,
    )
    if not need_grad:
        return parts, None
    g_out = (2.0 / (n * b)) * coef[:, None] * (pred_th - eps_mat)
    grad = diffuse.backward(state.params, cache, g_out)
    return parts, grad


def _grad_norm(grad: DenoiserParams) -> float:
    return math.sqrt(sum(float(np.dot(a.ravel(), a.ravel())) for a in grad.arrays()))


def _apply_update(state: TrainState, grad: DenoiserParams, config: TrainConfig) -> None:
    """In-place optimizer step; scratch buffers are reused to keep the update
    memory-bound cost low (it dominates a step at desk scale)."""
    p = state.params
    lr = config.learning_rate
    if config.optimizer == "sgd":
        for name in p._ORDER:
            theta = getattr(p, name)
            if config.weight_decay:
                theta *= 1.0 - lr * config.weight_decay
            theta -= lr * getattr(grad, name)
        return
    if state._adam_m is None:
        state._adam_m = diffuse.zero_grads(p)
        state._adam_v = diffuse.zero_grads(p)
        state._scratch = diffuse.zero_grads(p)
    k = state.step + 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    corr1 = 1.0 - b1**k
    corr2 = 1.0 - b2**k
    for name in p._ORDER:
        g = getattr(grad, name)
        m = getattr(state._adam_m, name)
        v = getattr(state._adam_v, name)
        s = getattr(state._scratch, name)
        m *= b1
        np.multiply(g, 1.0 - b1, out=s)
        m += s
        v *= b2
        np.multiply(g, g, out=s)
        s *= 1.0 - b2
        v += s
        np.divide(v, corr2, out=s)
        np.sqrt(s, out=s)
        s += config.adam_eps
        np.divide(m, s, out=s)
        theta = getattr(p, name)
        if config.weight_decay:
            theta *= 1.0 - lr * config.weight_decay
        s *= lr / corr1
        theta -= s


def draw_step_noise(
    seed: int, micro_step: int, index: int, flat_dim: int, num_steps: int
) -> tuple[int, np.ndarray]:
    """The (t, eps) draw for pair `index` of train_step call `micro_step`."""
    stream = Stream.from_words(seed, "step", micro_step, index)
    t = stream.randint(num_steps) + 1
    return t, stream.normals((flat_dim,))


def train_step(
    state: TrainState,
    pair: PreferencePair | list,
    config: TrainConfig,
    schedule: NoiseSchedule,
) -> TrainState:
    """Consume one pair (or a batch_size list), accumulate the exact gradient,
    and apply the optimizer update every grad_accum_steps calls. The frozen
    reference is never touched."""
    pairs = pair if isinstance(pair, list) else [pair]
    flat_dim = state.params.config.flat_dim
    items = []
    for i, p in enumerate(pairs):
        t, eps = draw_step_noise(state.seed, state.micro_step, i, flat_dim, schedule.num_steps)
        items.append((p, t, eps))
    parts, grad = _batch_loss_and_grad(state, items, schedule, config)
    if not grad.all_finite():
        raise NonFiniteGradient(f"non-finite gradient at micro step {state.micro_step}")

    gnorm = _grad_norm(grad)
    if config.grad_accum_steps == 1:
        _apply_update(state, grad, config)
        state.step += 1
    else:
        if state._accum is None:
            state._accum = diffuse.zero_grads(state.params)
        for name in grad._ORDER:
            getattr(state._accum, name)[...] += getattr(grad, name)
        state._accum_count += 1
        if state._accum_count >= config.grad_accum_steps:
            for name in state._accum._ORDER:
                getattr(state._accum, name)[...] /= state._accum_count
            _apply_update(state, state._accum, config)
            state.step += 1
            state._accum = None
            state._accum_count = 0

    state.micro_step += 1
    state.loss_history.append(
        {"dpo": parts.dpo_part, "sft": parts.sft_part, "total": parts.total, "grad_norm": gnorm}
    )
    return state


# --- evaluation -------------------------------------------------------------------

def implicit_reward_margin(
    state: TrainState,
    pair: PreferencePair,
    schedule: NoiseSchedule,
    n_draws: int,
    beta_dpo: float,
    seed: int = 0,
) -> float:
    """Mean over draws of -(beta/2) [(e_th_w - e_ref_w) - (e_th_l - e_ref_l)].

    Positive: the trained model prefers the win case relative to the
    reference. Exactly zero when params == ref_params.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    flat_dim = state.params.config.flat_dim
    rows, ts, cs, eps_rows = [], [], [], []
    for d in range(n_draws):
        stream = Stream.from_words(seed, "margin", d)
        t = stream.randint(schedule.num_steps) + 1
        eps = stream.normals((flat_dim,))
        xw, xl = _branch_inputs(pair, t, eps, schedule)
        rows.extend([xw, xl])
        ts.extend([t, t])
        cs.extend([pair.condition, pair.condition])
        eps_rows.extend([eps, eps])
    x = np.stack(rows)
    eps_mat = np.stack(eps_rows)
    _, e_th, _ = _branch_errors(state.params, x, ts, cs, eps_mat)
    _, e_ref, _ = _branch_errors(state.ref_params, x, ts, cs, eps_mat)
    inner = -(beta_dpo / 2.0) * ((e_th[0::2] - e_ref[0::2]) - (e_th[1::2] - e_ref[1::2]))
    return float(inner.mean())


@dataclass
class PairEvalReport:
    margins: list[float]
    mean_margin: float
    positive_margins: int
    frac_win_lower_error: float  # trained model: e_th_w < e_th_l at matched draws


def evaluate_pairs(
    state: TrainState,
    pairs: list[PreferencePair],
    schedule: NoiseSchedule,
    n_draws: int,
    beta_dpo: float,
    seed: int = 0,
) -> PairEvalReport:
    margins = []
    win_better = 0
    flat_dim = state.params.config.flat_dim
    for j, pair in enumerate(pairs):
        margin = implicit_reward_margin(
            state, pair, schedule, n_draws, beta_dpo, seed=derive_key(seed, "pair", j)
        )
        margins.append(margin)
        # matched-draw denoising-error comparison for the trained model alone
        rows, ts, cs, eps_rows = [], [], [], []
        for d in range(n_draws):
            stream = Stream.from_words(derive_key(seed, "pair", j), "margin", d)
            t = stream.randint(schedule.num_steps) + 1
            eps = stream.normals((flat_dim,))
            xw, xl = _branch_inputs(pair, t, eps, schedule)
            rows.extend([xw, xl])
            ts.extend([t, t])
            cs.extend([pair.condition, pair.condition])
            eps_rows.extend([eps, eps])
        _, e_th, _ = _branch_errors(state.params, np.stack(rows), ts, cs, np.stack(eps_rows))
        if float(np.mean(e_th[0::2])) < float(np.mean(e_th[1::2])):
            win_better += 1
    return PairEvalReport(
        margins=margins,
        mean_margin=float(np.mean(margins)) if margins else 0.0,
        positive_margins=sum(1 for m in margins if m > 0),
        frac_win_lower_error=win_better / len(pairs) if pairs else 0.0,
    )


# --- training driver -----------------------------------------------------------------

@dataclass
class TrainingItem:
    """One manifest entry loaded for training: the win video plus the artifact
    family its lose cases are regenerated from."""

    win: Video
    condition: int
    variant: str
    source_id: str


def load_training_items(manifest_path) -> list[TrainingItem]:
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    items = []
    for rec in load_pair_manifest(manifest_path):
        win = to_float(load_video(base / rec.win_path))
        items.append(
            TrainingItem(
                win=win,
                condition=rec.condition,
                variant=rec.spec.variant,
                source_id=rec.provenance.source_video_id,
            )
        )
    return items


def load_eval_pairs(manifest_path) -> list[PreferencePair]:
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    pairs = []
    for rec in load_pair_manifest(manifest_path):
        pairs.append(
            PreferencePair(
                win=to_float(load_video(base / rec.win_path)),
                lose=to_float(load_video(base / rec.lose_path)),
                condition=rec.condition,
                spec=rec.spec,
                provenance=rec.provenance,
            )
        )
    return pairs


def regenerate_lose(
    item: TrainingItem, stage_index: int, stage, seed: int, pair_index: int, micro_step: int
) -> PreferencePair:
    """Fresh lose case at the active stage's severity, redrawn on every visit
    so repeated passes over a video see different operator draws; bounded
    redraws if a draw happens to leave the video unchanged."""
    t, _, _, c = item.win.shape
    for attempt in range(8):
        key = derive_key(seed, "lose", stage_index, pair_index, micro_step, attempt)
        spec = draw_spec(stage, item.variant, key, t, c)
        try:
            lose = apply_distortion(item.win, spec)
            if lose == item.win:
                raise LoseEqualsWin(item.source_id)
        except LoseEqualsWin:
            continue
        return PreferencePair(
            win=item.win,
            lose=lose,
            condition=item.condition,
            spec=spec,
            provenance=Provenance(item.source_id, stage_index, micro_step),
        )
    raise LoseEqualsWin(f"video {item.source_id!r} defeats every drawn {item.variant} spec")


def train_on_items(
    items: list[TrainingItem],
    config: TrainConfig,
    schedule: NoiseSchedule | None = None,
    model_config: ModelConfig | None = None,
    spec_log: list | None = None,
) -> tuple[TrainState, list[dict]]:
    """Run the full training loop over in-memory items; returns the final
    state and one metrics row per step."""
    if not items:
        raise ValueError("no training items")
    schedule = schedule or diffuse.default_schedule()
    if model_config is None:
        model_config = ModelConfig(
            video_shape=items[0].win.shape,
            cond_count=max(i.condition for i in items) + 1,
        )
    state = init_train_state(model_config, config)
    metrics: list[dict] = []
    for step_i in range(config.total_steps):
        stage_idx = curriculum_update(config.curriculum, step_i)
        stage = config.curriculum.stages[stage_idx]
        batch = []
        for k in range(config.batch_size):
            pair_index = (step_i * config.batch_size + k) % len(items)
            pair = regenerate_lose(items[pair_index], stage_idx, stage, config.seed, pair_index, step_i)
            batch.append(pair)
            if spec_log is not None:
                spec_log.append(
                    {"step": step_i, "stage": stage_idx, "pair_index": pair_index, "spec": pair.spec.to_dict()}
                )
        state = train_step(state, batch if config.batch_size > 1 else batch[0], config, schedule)
        row = state.loss_history[-1]
        margin = ""
        if config.eval_interval > 0 and step_i % config.eval_interval == 0:
            margin = implicit_reward_margin(
                state,
                batch[0],
                schedule,
                config.eval_draws,
                config.beta_dpo,
                seed=derive_key(config.seed, "margin-eval", step_i),
            )
        metrics.append(
            {
                "step": step_i,
                "stage": stage_idx,
                "dpo_loss": row["dpo"],
                "sft_loss": row["sft"],
                "total_loss": row["total"],
                "grad_norm": row["grad_norm"],
                "margin_eval": margin,
            }
        )
    return state, metrics


def run_dfvpo(
    manifest_path,
    config: TrainConfig,
    schedule: NoiseSchedule | None = None,
    model_config: ModelConfig | None = None,
    spec_log: list | None = None,
) -> tuple[TrainState, list[dict]]:
    """Algorithm entry point: load the pair manifest and train against it."""
    return train_on_items(
        load_training_items(manifest_path),
        config,
        schedule=schedule,
        model_config=model_config,
        spec_log=spec_log,
    )


def write_metrics_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in METRIC_FIELDS})
