"""Keypoint-sequence renderer: motion applied to canonical keypoints, drawn
as filled discs in binary PPM (P6) frames.

Projection is orthographic: z is dropped and the canonical [-1, 1] square
maps linearly to [0, image_size] pixels, y pointing up. Output is byte-exact
deterministic, so frame files can be compared directly across runs.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .motion import CanonicalKeypoints, MotionSequence, transform_keypoints

DOT_COLOR = (30, 30, 30)


def project(points: np.ndarray, image_size: int) -> np.ndarray:
    """(K, 3) canonical points to (K, 2) pixel centers (col, row)."""
    cols = (points[:, 0] + 1.0) * 0.5 * image_size
    rows = (1.0 - points[:, 1]) * 0.5 * image_size
    return np.stack([cols, rows], axis=1)


def draw_frame(xc: CanonicalKeypoints, frame, image_size: int) -> np.ndarray:
    """Render one motion frame to an (H, W, 3) uint8 image."""
    canvas = np.full((image_size, image_size, 3), 255, dtype=np.uint8)
    centers = project(transform_keypoints(xc, frame), image_size)
    radius = image_size / 64.0
    for cx, cy in centers:
        lo_r = max(int(np.floor(cy - radius - 1)), 0)
        hi_r = min(int(np.ceil(cy + radius + 1)) + 1, image_size)
        lo_c = max(int(np.floor(cx - radius - 1)), 0)
        hi_c = min(int(np.ceil(cx + radius + 1)) + 1, image_size)
        if lo_r >= hi_r or lo_c >= hi_c:
            continue
        rr, cc = np.mgrid[lo_r:hi_r, lo_c:hi_c]
        inside = (cc + 0.5 - cx) ** 2 + (rr + 0.5 - cy) ** 2 <= radius ** 2
        canvas[lo_r:hi_r, lo_c:hi_c][inside] = DOT_COLOR
    return canvas


def write_ppm(image: np.ndarray, path) -> None:
    h, w = image.shape[:2]
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(image.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM file")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    pos += 1  # single whitespace after maxval
    return np.frombuffer(data[pos : pos + w * h * 3], dtype=np.uint8).reshape(h, w, 3)


def render_sequence(
    xc: CanonicalKeypoints, seq: MotionSequence, out_dir, image_size: int = 256
) -> list[Path]:
    """Render every frame to out_dir/frame_%06d.ppm plus an index manifest."""
    if xc.k != seq.k:
        raise ValueError(f"keypoint count mismatch: canonical K={xc.k}, sequence K={seq.k}")
    if image_size < 8:
        raise ValueError(f"image_size too small: {image_size}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(seq.frames):
        path = out / f"frame_{i:06d}.ppm"
        write_ppm(draw_frame(xc, frame, image_size), path)
        paths.append(path)
    index = {
        "count": len(paths),
        "pattern": "frame_%06d.ppm",
        "image_size": image_size,
        "fps": seq.fps,
        "files": [p.name for p in paths],
    }
    (out / "frames.json").write_text(json.dumps(index, indent=2))
    return paths
