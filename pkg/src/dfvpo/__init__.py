"""Desk-scale laboratory for discriminator-free video preference optimization.

Real videos are win cases, deterministically distorted copies are lose
cases, and a toy conditional diffusion model is aligned against a frozen
reference with a combined preference + denoising objective. The theory
module certifies the underlying policy-optimization identities exactly on
enumerable MDPs.
"""

__version__ = "0.1.0"

from .media import (  # noqa: F401
    DatasetManifest,
    ManifestEntry,
    SpriteSceneConfig,
    Video,
    load_video,
    save_video,
    synth_moving_sprite,
    to_float,
    to_u8,
)
from .distort import (  # noqa: F401
    CurriculumSchedule,
    CurriculumStage,
    DistortionSpec,
    PreferencePair,
    SpatialSpec,
    TemporalSpec,
    curriculum_update,
    default_curriculum,
    hybrid_distort,
    make_pair,
    partial_shuffle,
    reverse,
    spatial_degrade,
)
from .diffuse import (  # noqa: F401
    DenoiserParams,
    ModelConfig,
    NoiseSchedule,
    ancestral_sample,
    build_schedule,
    default_schedule,
    forward_step,
    load_checkpoint,
    q_sample,
    save_checkpoint,
    sft_grad,
    sft_loss,
)
from .align import (  # noqa: F401
    TrainConfig,
    TrainState,
    dpo_loss,
    evaluate_pairs,
    implicit_reward_margin,
    run_dfvpo,
    total_loss,
    train_step,
)
from .theory import (  # noqa: F401
    PolicyTable,
    TabularMDP,
    Trajectory,
    bt_prob,
    eval_policy,
    optimal_policy,
    seq_kl,
    verify_bt_equivalence,
    verify_offset,
    verify_optimality,
    verify_policy_improvement,
)
