"""Distortion operators that manufacture lose cases from real videos.

Three families: temporal (global reversal or a bounded partial frame
shuffle), spatial (Gaussian blur, additive color shift, pixel noise), and
hybrid (temporal remap first, then spatial degradation). Every operator is a
pure function of (video, spec): specs carry their own seeds and the noise
substream is keyed per frame, so outputs do not depend on evaluation order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import rng
from .errors import (
    BlockOutOfRange,
    BlockTooLong,
    BlockTooShort,
    ChannelMismatch,
    DegenerateSpec,
    DtypeMismatch,
    LoseEqualsWin,
)
from .media import Video

SHUFFLE_FRACTION_CAP = 0.2  # block length never exceeds floor(0.2 * T)


def max_block_len(num_frames: int) -> int:
    return math.floor(SHUFFLE_FRACTION_CAP * num_frames)


@dataclass(frozen=True)
class TemporalSpec:
    kind: str  # "global_reversal" | "partial_shuffle"
    block_start: Optional[int] = None
    block_len: Optional[int] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("global_reversal", "partial_shuffle"):
            raise ValueError(f"unknown temporal kind {self.kind!r}")
        if self.kind == "partial_shuffle":
            if self.block_start is None or self.block_len is None or self.seed is None:
                raise ValueError("partial_shuffle needs block_start, block_len, seed")

    def validate_for(self, num_frames: int) -> None:
        """Check block bounds against a concrete video length."""
        if self.kind != "partial_shuffle":
            return
        if self.block_len < 2:
            raise BlockTooShort(f"block_len {self.block_len} < 2")
        cap = max_block_len(num_frames)
        if self.block_len > cap:
            raise BlockTooLong(f"block_len {self.block_len} > floor(0.2*{num_frames}) = {cap}")
        if self.block_start < 0 or self.block_start + self.block_len > num_frames:
            raise BlockOutOfRange(
                f"block [{self.block_start}, {self.block_start + self.block_len}) "
                f"outside 0..{num_frames}"
            )

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "partial_shuffle":
            d.update(block_start=self.block_start, block_len=self.block_len, seed=self.seed)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TemporalSpec":
        return cls(**d)


@dataclass(frozen=True)
class SpatialSpec:
    blur_sigma: float
    color_shift: tuple[float, ...]
    noise_sigma: float
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "color_shift", tuple(float(c) for c in self.color_shift))
        if self.blur_sigma < 0 or self.noise_sigma < 0:
            raise ValueError("blur_sigma and noise_sigma must be >= 0")
        if any(abs(c) > 0.5 for c in self.color_shift):
            raise ValueError("color_shift channels must lie in [-0.5, 0.5]")
        if self.blur_sigma == 0 and self.noise_sigma == 0 and not any(self.color_shift):
            raise DegenerateSpec("all-zero spatial spec would leave the video unchanged")

    def to_dict(self) -> dict:
        return {
            "blur_sigma": self.blur_sigma,
            "color_shift": list(self.color_shift),
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpatialSpec":
        return cls(
            blur_sigma=d["blur_sigma"],
            color_shift=tuple(d["color_shift"]),
            noise_sigma=d["noise_sigma"],
            seed=d["seed"],
        )


@dataclass(frozen=True)
class DistortionSpec:
    """Tagged union over the three distortion families."""

    variant: str  # "temporal" | "spatial" | "hybrid"
    temporal: Optional[TemporalSpec] = None
    spatial: Optional[SpatialSpec] = None

    def __post_init__(self):
        need = {"temporal": ("temporal",), "spatial": ("spatial",), "hybrid": ("temporal", "spatial")}
        if self.variant not in need:
            raise ValueError(f"unknown variant {self.variant!r}")
        for name in need[self.variant]:
            if getattr(self, name) is None:
                raise ValueError(f"{self.variant} spec needs a {name} component")

    def to_dict(self) -> dict:
        d = {"variant": self.variant}
        if self.temporal is not None:
            d["temporal"] = self.temporal.to_dict()
        if self.spatial is not None:
            d["spatial"] = self.spatial.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DistortionSpec":
        return cls(
            variant=d["variant"],
            temporal=TemporalSpec.from_dict(d["temporal"]) if "temporal" in d else None,
            spatial=SpatialSpec.from_dict(d["spatial"]) if "spatial" in d else None,
        )


@dataclass(frozen=True)
class Provenance:
    source_video_id: str
    curriculum_stage: int
    creation_step: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class PreferencePair:
    """One DPO training unit: the untouched win video and its distorted twin."""

    win: Video
    lose: Video
    condition: int
    spec: DistortionSpec
    provenance: Provenance

    def __post_init__(self):
        if self.win.shape != self.lose.shape or self.win.frames.dtype != self.lose.frames.dtype:
            raise ValueError("win and lose must share shape and dtype")
        if self.win == self.lose:
            raise LoseEqualsWin("lose video equals win video")


# --- temporal operators ----------------------------------------------------

def reverse(v: Video) -> Video:
    """Global reversal: output frame t is input frame T+1-t."""
    return v.with_frames(v.frames[::-1])


def partial_shuffle(v: Video, spec: TemporalSpec) -> Video:
    """Permute one bounded frame block in place; all other frames untouched.

    The permutation is uniform over non-identity permutations of the block,
    drawn by seeded Fisher-Yates with redraw on identity.
    """
    if spec.kind != "partial_shuffle":
        raise ValueError("spec.kind must be partial_shuffle")
    spec.validate_for(v.num_frames)
    perm = rng.non_identity_permutation(spec.seed, spec.block_len, "shuffle")
    frames = np.array(v.frames)
    block = slice(spec.block_start, spec.block_start + spec.block_len)
    frames[block] = v.frames[block][perm]
    return v.with_frames(frames)


def apply_temporal(v: Video, spec: TemporalSpec) -> Video:
    if spec.kind == "global_reversal":
        return reverse(v)
    return partial_shuffle(v, spec)


# --- spatial operator -------------------------------------------------------

def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps with radius ceil(3 * sigma)."""
    radius = math.ceil(3.0 * sigma)
    if radius == 0:
        return np.ones(1)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _blur_axis(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = len(kernel) // 2
    if radius == 0 or arr.shape[axis] == 1:
        # a single sample reflects onto itself; normalized kernel is identity
        return arr
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(arr, pad, mode="reflect")
    out = np.zeros(arr.shape, dtype=np.float64)
    length = arr.shape[axis]
    index = [slice(None)] * arr.ndim
    for i, weight in enumerate(kernel):
        index[axis] = slice(i, i + length)
        out += weight * padded[tuple(index)]
    return out


def spatial_degrade(v: Video, spec: SpatialSpec) -> Video:
    """Blur, then color shift, then pixel noise, then clamp to [0, 1].

    Noise for frame f comes from the substream keyed (spec.seed, "noise", f)
    with the flat pixel index as counter, so results are identical however
    frames are batched.
    """
    if not v.is_float():
        raise DtypeMismatch("spatial_degrade requires a float video")
    t, h, w, c = v.shape
    if len(spec.color_shift) != c:
        raise ChannelMismatch(f"color_shift has {len(spec.color_shift)} channels, video has {c}")

    out = np.array(v.frames)
    if spec.blur_sigma > 0:
        kernel = gaussian_kernel(spec.blur_sigma)
        out = _blur_axis(out, kernel, axis=1)
        out = _blur_axis(out, kernel, axis=2)
    if any(spec.color_shift):
        out = out + np.asarray(spec.color_shift)
    if spec.noise_sigma > 0:
        noise = np.empty_like(out)
        for f in range(t):
            key = rng.derive_key(spec.seed, "noise", f)
            noise[f] = rng.normal_field(key, (h, w, c))
        out = out + spec.noise_sigma * noise
    return v.with_frames(np.clip(out, 0.0, 1.0))


def hybrid_distort(v: Video, t_spec: TemporalSpec, s_spec: SpatialSpec) -> Video:
    """Temporal remap first, spatial degradation second."""
    return spatial_degrade(apply_temporal(v, t_spec), s_spec)


def apply_distortion(v: Video, spec: DistortionSpec) -> Video:
    if spec.variant == "temporal":
        return apply_temporal(v, spec.temporal)
    if spec.variant == "spatial":
        return spatial_degrade(v, spec.spatial)
    return hybrid_distort(v, spec.temporal, spec.spatial)


def make_pair(
    v: Video, condition: int, spec: DistortionSpec, provenance: Provenance
) -> PreferencePair:
    if not v.is_float():
        raise DtypeMismatch("pairs are built from float videos")
    lose = apply_distortion(v, spec)
    if lose == v:
        raise LoseEqualsWin(f"spec {spec.variant} left video {v.id!r} unchanged")
    return PreferencePair(win=v, lose=lose, condition=condition, spec=spec, provenance=provenance)


# --- curriculum --------------------------------------------------------------

@dataclass(frozen=True)
class CurriculumStage:
    noise_sigma: float
    blur_sigma: float
    max_color_shift: float
    shuffle_fraction: float

    def __post_init__(self):
        if not 0.0 <= self.shuffle_fraction <= SHUFFLE_FRACTION_CAP:
            raise ValueError(f"shuffle_fraction must lie in [0, {SHUFFLE_FRACTION_CAP}]")
        if min(self.noise_sigma, self.blur_sigma, self.max_color_shift) < 0:
            raise ValueError("stage severities must be >= 0")


@dataclass(frozen=True)
class CurriculumSchedule:
    """Severity stages applied in order, switching every update_interval steps.

    Severity may never increase from one stage to the next, in any parameter:
    the schedule moves from strong distortions (easy negatives) toward mild
    ones (hard negatives).
    """

    stages: tuple[CurriculumStage, ...]
    update_interval: int

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.stages:
            raise ValueError("schedule needs at least one stage")
        if self.update_interval < 1:
            raise ValueError("update_interval must be >= 1")
        for a, b in zip(self.stages, self.stages[1:]):
            if (
                b.noise_sigma > a.noise_sigma
                or b.blur_sigma > a.blur_sigma
                or b.max_color_shift > a.max_color_shift
                or b.shuffle_fraction > a.shuffle_fraction
            ):
                raise ValueError("stage severities must be monotone non-increasing")

    def to_dict(self) -> dict:
        return {
            "update_interval": self.update_interval,
            "stages": [dict(s.__dict__) for s in self.stages],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CurriculumSchedule":
        return cls(
            stages=tuple(CurriculumStage(**s) for s in d["stages"]),
            update_interval=d["update_interval"],
        )


def default_curriculum(update_interval: int = 400) -> CurriculumSchedule:
    return CurriculumSchedule(
        stages=(
            CurriculumStage(noise_sigma=0.20, blur_sigma=2.0, max_color_shift=0.30, shuffle_fraction=0.2),
            CurriculumStage(noise_sigma=0.10, blur_sigma=1.0, max_color_shift=0.20, shuffle_fraction=0.2),
            CurriculumStage(noise_sigma=0.05, blur_sigma=0.5, max_color_shift=0.10, shuffle_fraction=0.2),
        ),
        update_interval=update_interval,
    )


def curriculum_update(schedule: CurriculumSchedule, step: int) -> int:
    """Active stage index at a given optimizer step: floor(step / K), clamped."""
    if step < 0:
        raise ValueError("step must be >= 0")
    return min(step // schedule.update_interval, len(schedule.stages) - 1)


VARIANTS = ("temporal", "spatial", "hybrid")


def draw_spec(
    stage: CurriculumStage,
    variant: str,
    key: int,
    num_frames: int,
    channels: int,
) -> DistortionSpec:
    """Sample a concrete DistortionSpec at a stage's severity.

    Deterministic in (stage, variant, key, video dims). The shuffle block
    position is resampled per key; shuffle falls back to global reversal when
    the video is too short for a legal block.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    stream = rng.Stream.from_words(key, "spec", variant)

    temporal = None
    if variant in ("temporal", "hybrid"):
        block_len = min(math.floor(stage.shuffle_fraction * num_frames), max_block_len(num_frames))
        use_shuffle = block_len >= 2 and stream.uniform() < 0.5
        if use_shuffle:
            start = stream.randint(num_frames - block_len + 1)
            temporal = TemporalSpec(
                kind="partial_shuffle",
                block_start=start,
                block_len=block_len,
                seed=stream.randint(1 << 62),
            )
        else:
            temporal = TemporalSpec(kind="global_reversal")

    spatial = None
    if variant in ("spatial", "hybrid"):
        m = stage.max_color_shift
        shift = tuple(stream.uniform(-m, m) for _ in range(channels))
        spatial = SpatialSpec(
            blur_sigma=stage.blur_sigma,
            color_shift=shift,
            noise_sigma=stage.noise_sigma,
            seed=stream.randint(1 << 62),
        )

    return DistortionSpec(variant=variant, temporal=temporal, spatial=spatial)


# --- pair manifest ------------------------------------------------------------

@dataclass
class PairRecord:
    """One line of a pair manifest; paths are relative to the manifest."""

    win_path: str
    lose_path: str
    condition: int
    spec: DistortionSpec
    provenance: Provenance

    def to_json(self) -> str:
        return json.dumps(
            {
                "win_path": self.win_path,
                "lose_path": self.lose_path,
                "condition": self.condition,
                "spec": self.spec.to_dict(),
                "provenance": self.provenance.to_dict(),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "PairRecord":
        d = json.loads(line)
        return cls(
            win_path=d["win_path"],
            lose_path=d["lose_path"],
            condition=d["condition"],
            spec=DistortionSpec.from_dict(d["spec"]),
            provenance=Provenance(**d["provenance"]),
        )


def save_pair_manifest(records: list[PairRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def load_pair_manifest(path) -> list[PairRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(PairRecord.from_json(line))
    return records
