"""Motion-space evaluation metrics.

smoothness is a bounded, scale-free continuity score in [0, 1] (1 = no
acceleration). motion_frechet is the Frechet distance between Gaussian fits
of pooled motion frames, the motion-space analog of feature-space Frechet
scores; it is not comparable across different motion parameterizations.
audio_motion_corr is a plain Pearson correlation between the recovered audio
loudness envelope and one motion channel.
"""

from __future__ import annotations

import numpy as np

from .audio import AudioFeatureSequence
from .motion import MotionSequence
from .synthetic import envelope_of

EPS = 1e-8

# Flatten layout: delta of keypoint j starts at 7 + 3j; y component is +1.
DEFAULT_JAW_CHANNEL = 8


def smoothness(seq: MotionSequence) -> float:
    """1 - mean ratio of second difference to adjacent first differences.

    Dimensions are standardized over the sequence itself (std floored), so
    the score is invariant to per-dimension offset and scale. Sequences
    shorter than 3 frames score 1.0 by convention.
    """
    arr = seq.to_array()
    if arr.shape[0] < 3:
        return 1.0
    std = np.maximum(arr.std(axis=0), 1e-6)
    x = (arr - arr.mean(axis=0)) / std
    first = np.linalg.norm(np.diff(x, axis=0), axis=1)
    second = np.linalg.norm(x[2:] - 2.0 * x[1:-1] + x[:-2], axis=1)
    ratios = second / (first[1:] + first[:-1] + EPS)
    return float(1.0 - ratios.mean())


def _psd_sqrt(sigma: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(sigma)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def _fit_gaussian(seqs, what: str) -> tuple[np.ndarray, np.ndarray]:
    seqs = list(seqs)
    if not seqs:
        raise ValueError(f"{what}: empty sequence set")
    arrays = [s.to_array() if isinstance(s, MotionSequence) else np.atleast_2d(s) for s in seqs]
    pooled = np.concatenate(arrays, axis=0)
    d = pooled.shape[1]
    if pooled.shape[0] < d + 1:
        raise ValueError(
            f"{what}: need at least {d + 1} pooled frames for a {d}-dim Gaussian fit, "
            f"got {pooled.shape[0]}"
        )
    return pooled.mean(axis=0), np.atleast_2d(np.cov(pooled, rowvar=False))


def motion_frechet(real_seqs, gen_seqs) -> float:
    """Frechet distance between Gaussian fits of two motion-frame sets.

    The trace cross term is computed from the symmetric eigendecomposition of
    sqrt(S1) S2 sqrt(S1), with negative eigenvalues from roundoff clamped to
    zero.
    """
    mu1, sigma1 = _fit_gaussian(real_seqs, "first set")
    mu2, sigma2 = _fit_gaussian(gen_seqs, "second set")
    if mu1.shape != mu2.shape:
        raise ValueError(f"dimension mismatch: {mu1.shape[0]} vs {mu2.shape[0]}")
    sqrt1 = _psd_sqrt(sigma1)
    inner = sqrt1 @ sigma2 @ sqrt1
    inner = 0.5 * (inner + inner.T)
    cross = np.sqrt(np.clip(np.linalg.eigvalsh(inner), 0.0, None)).sum()
    diff = mu1 - mu2
    fd = float(diff @ diff + np.trace(sigma1) + np.trace(sigma2) - 2.0 * cross)
    return max(fd, 0.0)


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation; 0.0 when either signal has no variance."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    da, db = a - a.mean(), b - b.mean()
    denom = np.sqrt((da * da).sum() * (db * db).sum())
    if denom < EPS:
        return 0.0
    return float(np.clip((da * db).sum() / denom, -1.0, 1.0))


def audio_motion_corr(
    seq: MotionSequence,
    audio: AudioFeatureSequence,
    channel: int = DEFAULT_JAW_CHANNEL,
) -> float:
    """Correlation between the audio loudness envelope and a motion channel.

    channel indexes the flattened motion layout; the default is the y
    displacement of keypoint 0. Lengths are reconciled by truncating to the
    shorter of the two.
    """
    arr = seq.to_array()
    if not 0 <= channel < arr.shape[1]:
        raise ValueError(f"channel {channel} out of range for motion dim {arr.shape[1]}")
    env = envelope_of(audio)
    n = min(arr.shape[0], env.shape[0])
    return pearson(env[:n], arr[:n, channel])
