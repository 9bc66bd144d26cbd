"""Dependency-free inspection artifacts: SVG loss curves and PNG frame strips."""

from __future__ import annotations

import numpy as np
from PIL import Image

from .media import Video, to_u8


def _polyline(points, color, width=1.5):
    coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    return f'<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{coords}"/>'


def write_loss_curve_svg(metrics: list[dict], path, width=800, height=400) -> None:
    """Standalone SVG with the three loss components over training steps."""
    pad = 45
    series = [("total_loss", "#1f77b4"), ("dpo_loss", "#d62728"), ("sft_loss", "#2ca02c")]
    xs = [row["step"] for row in metrics]
    all_vals = [row[name] for row in metrics for name, _ in series if row[name] != ""]
    lo = min(all_vals, default=0.0)
    hi = max(all_vals, default=1.0)
    if hi <= lo:
        hi = lo + 1.0
    x_max = max(xs, default=1) or 1

    def sx(v):
        return pad + (width - 2 * pad) * v / x_max

    def sy(v):
        return height - pad - (height - 2 * pad) * (v - lo) / (hi - lo)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2:.0f}" y="{height - 8}" font-size="12" text-anchor="middle">step</text>',
        f'<text x="{pad}" y="{pad - 8}" font-size="12">loss</text>',
        f'<text x="{pad - 5}" y="{height - pad + 4}" font-size="10" text-anchor="end">{lo:.3f}</text>',
        f'<text x="{pad - 5}" y="{pad + 4}" font-size="10" text-anchor="end">{hi:.3f}</text>',
    ]
    for i, (name, color) in enumerate(series):
        pts = [(sx(row["step"]), sy(row[name])) for row in metrics if row[name] != ""]
        if pts:
            parts.append(_polyline(pts, color))
        parts.append(
            f'<text x="{width - pad - 100}" y="{pad + 14 * (i + 1)}" font-size="11" '
            f'fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")


def write_frame_strip(video_or_frames, path, separator: int = 1) -> None:
    """Tile a video's frames left to right into one PNG."""
    if isinstance(video_or_frames, Video):
        frames = to_u8(video_or_frames).frames
    else:
        arr = np.asarray(video_or_frames)
        if arr.dtype != np.uint8:
            arr = np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
        frames = arr
    t, h, w, c = frames.shape
    strip = np.zeros((h, t * w + separator * (t - 1), c), dtype=np.uint8)
    for i in range(t):
        strip[:, i * (w + separator) : i * (w + separator) + w] = frames[i]
    img = strip[:, :, 0] if c == 1 else strip
    Image.fromarray(img).save(path)
