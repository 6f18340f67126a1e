"""Disentangled motion parameterization and the canonical-keypoint transform.

A motion frame is the tuple (euler rotation, translation, scale, per-keypoint
displacements). Deforming canonical keypoints ``xc`` by a frame follows

    out[i] = s * (xc[i] @ R + delta[i]) + t

with keypoints as row vectors. Frames flatten to dense vectors in the fixed
layout ``[euler(3), t(3), s(1), delta row-major(3K)]`` (dimension 7 + 3K),
which is what the diffusion model consumes after standardization.

Conventions: rotation is stored compactly as Euler angles (pitch, yaw, roll)
and converted to a matrix on demand, composed as R = Rz @ Ry @ Rx in the
row-vector convention. All three translation components are free; motion
extraction stacks often pin the depth component t_z to zero, which this
parameterization represents as plain data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .binio import FormatError, Reader, Writer, read_file, write_file

MSEQ_MAGIC = b"MSEQ"
MSEQ_VERSION = 1
CKPC_MAGIC = b"CKPC"

STD_FLOOR = 1e-6
DEFAULT_FPS = 25.0
DEFAULT_K = 21


def motion_dim(k: int) -> int:
    """Flattened per-frame dimension for K keypoints."""
    return 7 + 3 * k


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class CanonicalKeypoints:
    """Identity-normalized 3D keypoints, shape (K, 3), unitless."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError(f"canonical keypoints must be (K, 3) with K >= 1, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("canonical keypoints contain non-finite values")
        object.__setattr__(self, "points", _freeze(pts))

    @property
    def k(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class MotionFrame:
    """One frame of motion parameters in canonical space.

    euler: (pitch, yaw, roll) in radians; t: translation; s: scale > 0;
    delta: (K, 3) per-keypoint displacements.
    """

    euler: np.ndarray
    t: np.ndarray
    s: float
    delta: np.ndarray

    def __post_init__(self):
        euler = np.asarray(self.euler, dtype=np.float64).reshape(3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        delta = np.asarray(self.delta, dtype=np.float64)
        if delta.ndim != 2 or delta.shape[1] != 3:
            raise ValueError(f"delta must be (K, 3), got {delta.shape}")
        s = float(self.s)
        if not (np.all(np.isfinite(euler)) and np.all(np.isfinite(t))
                and np.isfinite(s) and np.all(np.isfinite(delta))):
            raise ValueError("motion frame contains non-finite values")
        if s <= 0:
            raise ValueError(f"scale must be positive, got {s}")
        object.__setattr__(self, "euler", _freeze(euler))
        object.__setattr__(self, "t", _freeze(t))
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "delta", _freeze(delta))

    @property
    def k(self) -> int:
        return self.delta.shape[0]

    @classmethod
    def identity(cls, k: int) -> "MotionFrame":
        return cls(euler=np.zeros(3), t=np.zeros(3), s=1.0, delta=np.zeros((k, 3)))


@dataclass(frozen=True)
class MotionSequence:
    """Time-indexed motion frames at a fixed frame rate, uniform K."""

    frames: tuple
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ValueError("motion sequence must contain at least one frame")
        k = frames[0].k
        if any(f.k != k for f in frames):
            raise ValueError("all frames in a sequence must share the same K")
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "fps", float(self.fps))

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def k(self) -> int:
        return self.frames[0].k

    @property
    def dim(self) -> int:
        return motion_dim(self.k)

    def to_array(self) -> np.ndarray:
        """Stack flattened frames into an (N, D_m) float64 matrix."""
        return np.stack([flatten(f) for f in self.frames])

    @classmethod
    def from_array(cls, arr: np.ndarray, k: int, fps: float = DEFAULT_FPS) -> "MotionSequence":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != motion_dim(k):
            raise ValueError(f"expected (N, {motion_dim(k)}) array for K={k}, got {arr.shape}")
        return cls(frames=tuple(unflatten(row, k) for row in arr), fps=fps)


@dataclass(frozen=True)
class MotionStats:
    """Per-dimension standardization statistics over flattened frames."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        std = np.asarray(self.std, dtype=np.float64).reshape(-1)
        if mean.shape != std.shape:
            raise ValueError("mean and std must have the same length")
        if np.any(std <= 0):
            raise ValueError("std entries must be positive (floor before constructing)")
        object.__setattr__(self, "mean", _freeze(mean))
        object.__setattr__(self, "std", _freeze(std))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def rotation_matrix(euler) -> np.ndarray:
    """Rotation matrix for (pitch, yaw, roll), composed as R = Rz @ Ry @ Rx.

    Generators use the row-vector convention: points transform as ``x @ R``,
    so e.g. yaw = pi/2 maps (1, 0, 0) to (0, 0, -1).
    """
    pitch, yaw, roll = np.asarray(euler, dtype=np.float64).reshape(3)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    cr, sr = np.cos(roll), np.sin(roll)
    rx = np.array([[1.0, 0.0, 0.0],
                   [0.0, cp, sp],
                   [0.0, -sp, cp]])
    ry = np.array([[cy, 0.0, -sy],
                   [0.0, 1.0, 0.0],
                   [sy, 0.0, cy]])
    rz = np.array([[cr, sr, 0.0],
                   [-sr, cr, 0.0],
                   [0.0, 0.0, 1.0]])
    return rz @ ry @ rx


def transform_keypoints(xc: CanonicalKeypoints, frame: MotionFrame) -> np.ndarray:
    """Deform canonical keypoints by a motion frame: s * (xc @ R + delta) + t."""
    if frame.k != xc.k:
        raise ValueError(f"keypoint count mismatch: frame K={frame.k}, canonical K={xc.k}")
    r = rotation_matrix(frame.euler)
    return frame.s * (xc.points @ r + frame.delta) + frame.t


def flatten(frame: MotionFrame) -> np.ndarray:
    """Pack a frame into the fixed layout [euler(3), t(3), s(1), delta(3K)]."""
    return np.concatenate([frame.euler, frame.t, [frame.s], frame.delta.ravel()])


def unflatten(v: np.ndarray, k: int) -> MotionFrame:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    d = motion_dim(k)
    if v.shape[0] != d:
        raise ValueError(f"expected vector of length {d} for K={k}, got {v.shape[0]}")
    return MotionFrame(euler=v[0:3], t=v[3:6], s=float(v[6]), delta=v[7:].reshape(k, 3))


def compute_stats(seqs) -> MotionStats:
    """Pooled per-dimension mean and population std over a sequence corpus.

    Std is floored at 1e-6 so constant dimensions do not blow up on division.
    """
    seqs = list(seqs)
    if not seqs:
        raise ValueError("cannot compute stats over an empty corpus")
    pooled = np.concatenate([s.to_array() for s in seqs], axis=0)
    mean = pooled.mean(axis=0)
    std = np.maximum(pooled.std(axis=0), STD_FLOOR)
    return MotionStats(mean=mean, std=std)


def standardize(x: np.ndarray, stats: MotionStats) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != stats.dim:
        raise ValueError(f"last dimension {x.shape[-1]} does not match stats dim {stats.dim}")
    return (x - stats.mean) / stats.std


def destandardize(x: np.ndarray, stats: MotionStats) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != stats.dim:
        raise ValueError(f"last dimension {x.shape[-1]} does not match stats dim {stats.dim}")
    return x * stats.std + stats.mean


# ---------------------------------------------------------------------------
# File formats. All payload floats are f32 little-endian; in-memory values are
# float64, so a round trip is bit-exact whenever the data is f32-representable.

def save_sequence(seq: MotionSequence, path) -> None:
    w = Writer()
    w.magic(MSEQ_MAGIC)
    w.u32(MSEQ_VERSION)
    w.u32(len(seq))
    w.u32(seq.k)
    w.f32(seq.fps)
    w.f32_array(seq.to_array())
    write_file(path, w.getvalue())


def load_sequence(path) -> MotionSequence:
    r = Reader(read_file(path), str(path))
    r.expect_magic(MSEQ_MAGIC)
    version = r.u32("version")
    if version != MSEQ_VERSION:
        raise FormatError(f"{path}: unsupported MSEQ version {version}")
    n = r.u32("frame_count")
    k = r.u32("K")
    fps = r.f32("fps")
    if n < 1 or k < 1:
        raise FormatError(f"{path}: invalid header (frame_count={n}, K={k})")
    data = r.f32_array(n * motion_dim(k), "frame payload").astype(np.float64)
    r.expect_eof()
    return MotionSequence.from_array(data.reshape(n, motion_dim(k)), k=k, fps=fps)


def save_keypoints(xc: CanonicalKeypoints, path) -> None:
    w = Writer()
    w.magic(CKPC_MAGIC)
    w.u32(xc.k)
    w.f32_array(xc.points)
    write_file(path, w.getvalue())


def load_keypoints(path) -> CanonicalKeypoints:
    r = Reader(read_file(path), str(path))
    r.expect_magic(CKPC_MAGIC)
    k = r.u32("K")
    if k < 1:
        raise FormatError(f"{path}: invalid keypoint count {k}")
    pts = r.f32_array(3 * k, "keypoint payload").astype(np.float64)
    r.expect_eof()
    return CanonicalKeypoints(points=pts.reshape(k, 3))


def canonical_layout(k: int = DEFAULT_K) -> CanonicalKeypoints:
    """Deterministic face-like keypoint arrangement for demos and rendering.

    Points sit on an ellipse in the x-y plane (|x| <= 0.5, |y| <= 0.6) with a
    mild z bulge, cast to f32 so file round trips are bit-exact.
    """
    angles = 2.0 * np.pi * np.arange(k) / k
    pts = np.stack([
        0.5 * np.cos(angles),
        0.6 * np.sin(angles),
        0.15 * np.cos(2.0 * angles),
    ], axis=1)
    return CanonicalKeypoints(points=pts.astype(np.float32).astype(np.float64))
