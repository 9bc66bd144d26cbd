"""Video representation, synthetic sprite corpus, and VRAW file I/O.

A Video is an immutable T x H x W x C frame tensor, either unsigned 8-bit
(values 0..255) or float64 (values in [0, 1]). All math elsewhere in the
package runs on the float form; u8 exists for the I/O boundary.

The on-disk container ("VRAW") is little-endian:

    magic "DFVP" | format_version u32 | T u32 | H u32 | W u32 | C u32
    | dtype u8 (0 = u8, 1 = f64) | 7 pad bytes | row-major frame-major payload

The container carries no metadata beyond the header: a loaded video gets its
id from the file stem and the default frame rate. Video equality therefore
compares frame content and dtype only.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import rng
from .errors import (
    ConfigOutOfBounds,
    HeterogeneousFrames,
    MagicMismatch,
    TruncatedPayload,
)

VRAW_MAGIC = b"DFVP"
VRAW_VERSION = 1
_HEADER = struct.Struct("<4sIIIIIB7x")  # 32 bytes

DEFAULT_FRAME_RATE = 8.0

# u8 <-> float codes in the container header
_DTYPE_U8 = 0
_DTYPE_F64 = 1


@dataclass(eq=False)
class Video:
    """Ordered frame tensor with fixed dtype; frozen after construction."""

    frames: np.ndarray
    frame_rate: float = DEFAULT_FRAME_RATE
    id: str = ""

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim != 4:
            raise ValueError(f"frames must be T x H x W x C, got shape {f.shape}")
        t, h, w, c = f.shape
        if t < 1 or h < 1 or w < 1 or c not in (1, 3):
            raise ValueError(f"bad video dimensions {f.shape}")
        if f.dtype == np.uint8:
            pass
        elif f.dtype == np.float64:
            if f.size and (f.min() < 0.0 or f.max() > 1.0):
                raise ValueError("float video values must lie in [0, 1]")
        else:
            raise ValueError(f"dtype must be uint8 or float64, got {f.dtype}")
        f = np.ascontiguousarray(f)
        if f.flags.writeable:
            # never alias a mutable caller buffer; frozen copies may be shared
            f = f.copy()
            f.setflags(write=False)
        object.__setattr__(self, "frames", f)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.frames.shape

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def channels(self) -> int:
        return self.frames.shape[3]

    def is_float(self) -> bool:
        return self.frames.dtype == np.float64

    def with_frames(self, frames: np.ndarray, id: str | None = None) -> "Video":
        return Video(frames, frame_rate=self.frame_rate, id=self.id if id is None else id)

    def __eq__(self, other) -> bool:
        """Content equality: same shape, dtype, and every element."""
        if not isinstance(other, Video):
            return NotImplemented
        return (
            self.frames.dtype == other.frames.dtype
            and self.frames.shape == other.frames.shape
            and np.array_equal(self.frames, other.frames)
        )


@dataclass(frozen=True)
class SpriteSceneConfig:
    """Recipe for one deterministic moving-sprite clip.

    The seed picks the start position uniformly from the set of positions
    that keep the sprite inside the grid for every frame; a config with no
    such position is rejected.
    """

    grid: tuple[int, int]
    num_frames: int
    sprite_shape: str  # "square" | "disc"
    sprite_size: int
    velocity: tuple[int, int]  # (dy, dx) pixels per frame
    background: float
    seed: int
    channels: int = 3
    sprite_color: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.sprite_shape not in ("square", "disc"):
            raise ValueError(f"unknown sprite shape {self.sprite_shape!r}")
        if self.num_frames < 1 or self.sprite_size < 1:
            raise ValueError("num_frames and sprite_size must be positive")
        if not 0.0 <= self.background <= 1.0:
            raise ValueError("background intensity must lie in [0, 1]")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        if self.sprite_color is not None and len(self.sprite_color) != self.channels:
            raise ValueError("sprite_color length must equal channels")

    def config_hash(self) -> str:
        blob = json.dumps(self.__dict__, sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _start_bounds(extent: int, size: int, vel: int, t: int) -> tuple[int, int]:
    """Inclusive start range keeping [p, p+size) inside [0, extent) for all
    positions p, p+vel, ..., p+(t-1)*vel."""
    total = vel * (t - 1)
    lo = max(0, -total)
    hi = min(extent - size, extent - size - total)
    return lo, hi


def synth_moving_sprite(config: SpriteSceneConfig) -> Video:
    """Render a sprite translating at constant velocity over a flat background.

    Pure function of the config: same config (including seed) gives a
    byte-identical float video.
    """
    h, w = config.grid
    t, size = config.num_frames, config.sprite_size
    dy, dx = config.velocity

    y_lo, y_hi = _start_bounds(h, size, dy, t)
    x_lo, x_hi = _start_bounds(w, size, dx, t)
    if y_lo > y_hi or x_lo > x_hi:
        raise ConfigOutOfBounds(
            f"no start keeps a {size}px sprite inside {h}x{w} for {t} frames at velocity {config.velocity}"
        )

    stream = rng.Stream.from_words(config.seed, "sprite")
    y0 = y_lo + stream.randint(y_hi - y_lo + 1)
    x0 = x_lo + stream.randint(x_hi - x_lo + 1)

    if config.sprite_color is not None:
        color = np.asarray(config.sprite_color, dtype=np.float64)
    else:
        # default: a color clearly separated from the background
        fg = 1.0 if config.background <= 0.5 else 0.0
        color = np.full(config.channels, fg)

    if config.sprite_shape == "disc":
        yy, xx = np.mgrid[0:size, 0:size]
        center = (size - 1) / 2.0
        mask = (yy - center) ** 2 + (xx - center) ** 2 <= (size / 2.0) ** 2
    else:
        mask = np.ones((size, size), dtype=bool)

    frames = np.full((t, h, w, config.channels), config.background, dtype=np.float64)
    for i in range(t):
        y, x = y0 + i * dy, x0 + i * dx
        patch = frames[i, y : y + size, x : x + size]
        patch[mask] = color
    return Video(frames, id=f"sprite-{config.config_hash()}-{config.seed}")


def to_float(v: Video) -> Video:
    """u8 -> float64 by x / 255; float input is returned unchanged."""
    if v.is_float():
        return v
    return v.with_frames(v.frames.astype(np.float64) / 255.0)


def to_u8(v: Video) -> Video:
    """float64 -> u8 by round(clamp(x,0,1)*255), ties away from zero."""
    if not v.is_float():
        return v
    scaled = np.clip(v.frames, 0.0, 1.0) * 255.0
    return v.with_frames(np.floor(scaled + 0.5).astype(np.uint8))


def save_video(v: Video, path) -> None:
    path = Path(path)
    code = _DTYPE_F64 if v.is_float() else _DTYPE_U8
    t, h, w, c = v.shape
    header = _HEADER.pack(VRAW_MAGIC, VRAW_VERSION, t, h, w, c, code)
    payload = np.ascontiguousarray(v.frames)
    if code == _DTYPE_F64:
        payload = payload.astype("<f8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def _load_vraw(path: Path) -> Video:
    data = path.read_bytes()
    if len(data) < _HEADER.size or data[:4] != VRAW_MAGIC:
        raise MagicMismatch(f"{path} is not a VRAW file")
    _, _, t, h, w, c, code = _HEADER.unpack_from(data)
    if code not in (_DTYPE_U8, _DTYPE_F64):
        raise MagicMismatch(f"{path}: unknown dtype code {code}")
    dtype = np.dtype(np.uint8) if code == _DTYPE_U8 else np.dtype("<f8")
    body = data[_HEADER.size :]
    expect = t * h * w * c * dtype.itemsize
    if len(body) < expect:
        raise TruncatedPayload(f"{path}: payload {len(body)} bytes, header promises {expect}")
    frames = np.frombuffer(body[:expect], dtype=dtype).reshape(t, h, w, c)
    if code == _DTYPE_F64:
        frames = frames.astype(np.float64)
    return Video(frames, id=path.stem)


def _load_image_dir(path: Path) -> Video:
    files = sorted(p for p in path.iterdir() if p.is_file() and p.stem.startswith("frame_"))
    if not files:
        raise MagicMismatch(f"{path} holds no frame_* images")
    frames = []
    for p in files:
        arr = np.asarray(Image.open(p))
        if arr.ndim == 2:
            arr = arr[:, :, None]
        frames.append(arr.astype(np.uint8))
    shape = frames[0].shape
    for p, f in zip(files, frames):
        if f.shape != shape:
            raise HeterogeneousFrames(f"{p} has shape {f.shape}, expected {shape}")
    return Video(np.stack(frames), id=path.name)


def load_video(path) -> Video:
    """Load a VRAW file, or a directory of lossless frame_%05d images (as u8)."""
    path = Path(path)
    if path.is_dir():
        return _load_image_dir(path)
    return _load_vraw(path)


@dataclass
class ManifestEntry:
    video_path: str
    condition_label: int
    seed: int
    generator_config_hash: str


@dataclass
class DatasetManifest:
    """Index of a synthetic corpus; paths are relative to its own directory."""

    entries: list[ManifestEntry] = field(default_factory=list)
    format_version: int = 1

    def save(self, path) -> None:
        path = Path(path)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"format_version": self.format_version}) + "\n")
            for e in self.entries:
                fh.write(json.dumps(e.__dict__, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        entries = []
        version = 1
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                if "format_version" in rec and "video_path" not in rec:
                    version = rec["format_version"]
                    continue
                entries.append(ManifestEntry(**rec))
        manifest = cls(entries=entries, format_version=version)
        ids = [Path(e.video_path).stem for e in manifest.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate video ids in manifest")
        return manifest
