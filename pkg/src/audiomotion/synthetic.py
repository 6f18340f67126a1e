"""Paired (audio, motion) corpora with a known audio-to-motion mapping.

Each sequence starts from a smooth random loudness envelope e in [0.2, 1]
(low-pass filtered white noise; the positive floor keeps the amplitude to
energy relationship well conditioned). The audio is an amplitude-modulated
tone, e times a sine carrier, plus a small white noise floor. The motion is
driven linearly by the same envelope: the jaw keypoint's y displacement is
jaw_gain * e, the head pitch is nod_gain * smoothed(e), and every other
dimension is small AR(1) noise. The envelope is stored alongside each pair
as ground truth, so end-to-end runs can be scored against a closed form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioFeatureSequence, save_wav
from .motion import MotionSequence, save_sequence

ENVELOPE_LO = 0.2
ENVELOPE_HI = 1.0
AR_COEFF = 0.95
SMOOTH_WINDOW = 9
LOG_FLOOR = 1e-6


@dataclass(frozen=True)
class SyntheticSpec:
    n_sequences: int = 30
    duration_range: tuple = (4.0, 8.0)
    fps: float = 25.0
    k: int = 4
    carriers: tuple = (220.0, 440.0, 660.0)
    envelope_cutoff_hz: float = 3.0
    jaw_gain: float = 0.35
    nod_gain: float = 0.2
    noise_floor: float = 0.003
    motion_noise: float = 0.02
    jaw_index: int = 0
    sample_rate: int = 16000

    def __post_init__(self):
        if self.n_sequences < 1 or self.k < 1:
            raise ValueError("invalid synthetic spec")
        if not 0 < self.envelope_cutoff_hz < self.fps / 2:
            raise ValueError(
                f"envelope cutoff must lie in (0, fps/2), got {self.envelope_cutoff_hz}"
            )
        if not all(np.isfinite([self.jaw_gain, self.nod_gain, self.noise_floor])):
            raise ValueError("gains must be finite")
        if not 0 <= self.jaw_index < self.k:
            raise ValueError(f"jaw index {self.jaw_index} out of range for K={self.k}")
        hop = self.sample_rate / self.fps
        if abs(hop - round(hop)) > 1e-9:
            raise ValueError("sample_rate / fps must be integral")
        lo, hi = self.duration_range
        if not 0 < lo <= hi:
            raise ValueError(f"bad duration range {self.duration_range}")

    @property
    def hop_samples(self) -> int:
        return int(round(self.sample_rate / self.fps))


@dataclass(frozen=True)
class SyntheticExample:
    audio: np.ndarray
    sample_rate: int
    motion: MotionSequence
    envelope: np.ndarray
    carrier: float


def random_envelope(n_frames: int, spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """Smooth per-frame loudness in [ENVELOPE_LO, ENVELOPE_HI]."""
    white = rng.standard_normal(n_frames)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n_frames, d=1.0 / spec.fps)
    spectrum[freqs > spec.envelope_cutoff_hz] = 0.0
    raw = np.fft.irfft(spectrum, n=n_frames)
    span = raw.max() - raw.min()
    if span < 1e-12:
        return np.full(n_frames, 0.5 * (ENVELOPE_LO + ENVELOPE_HI))
    unit = (raw - raw.min()) / span
    return ENVELOPE_LO + (ENVELOPE_HI - ENVELOPE_LO) * unit


def smoothed(e: np.ndarray, window: int = SMOOTH_WINDOW) -> np.ndarray:
    """Centered moving average; windows clip at the edges (no zero padding)."""
    n = e.shape[0]
    half = window // 2
    csum = np.concatenate([[0.0], np.cumsum(e)])
    lo = np.clip(np.arange(n) - half, 0, n)
    hi = np.clip(np.arange(n) + half + 1, 0, n)
    return (csum[hi] - csum[lo]) / (hi - lo)


def audio_from_envelope(
    e: np.ndarray, spec: SyntheticSpec, carrier: float, rng: np.random.Generator
) -> np.ndarray:
    """Amplitude-modulated tone at the carrier frequency, plus a noise floor.

    The per-frame envelope is linearly interpolated between frame centers so
    the waveform has no frame-boundary clicks.
    """
    n_frames = e.shape[0]
    n_samples = n_frames * spec.hop_samples
    ts = np.arange(n_samples) / spec.sample_rate
    frame_centers = (np.arange(n_frames) + 0.5) / spec.fps
    env = np.interp(ts, frame_centers, e)
    wave = 0.5 * env * np.sin(2.0 * np.pi * carrier * ts)
    wave = wave + spec.noise_floor * rng.standard_normal(n_samples)
    return np.clip(wave, -1.0, 1.0)


def motion_from_envelope(
    e: np.ndarray, spec: SyntheticSpec, rng: np.random.Generator
) -> MotionSequence:
    """Deterministic envelope-driven motion plus small AR(1) noise elsewhere.

    jaw delta_y = jaw_gain * e exactly (linear by construction); pitch =
    nod_gain * smoothed(e). Scale stays near 1 and is clipped positive.
    """
    n = e.shape[0]
    d = 7 + 3 * spec.k
    noise = np.zeros((n, d))
    scale = spec.motion_noise * np.sqrt(1.0 - AR_COEFF ** 2)
    draws = rng.standard_normal((n, d))
    noise[0] = spec.motion_noise * draws[0]
    for i in range(1, n):
        noise[i] = AR_COEFF * noise[i - 1] + scale * draws[i]

    arr = noise
    jaw_dim = 7 + 3 * spec.jaw_index + 1
    arr[:, 0] = spec.nod_gain * smoothed(e)          # pitch: no noise, exact map
    arr[:, jaw_dim] = spec.jaw_gain * e              # jaw delta_y: exact linear map
    arr[:, 6] = np.clip(1.0 + noise[:, 6], 0.05, None)  # scale must stay positive
    return MotionSequence.from_array(arr, k=spec.k, fps=spec.fps)


def make_corpus(spec: SyntheticSpec, seed: int) -> list[SyntheticExample]:
    """Generate the corpus deterministically; one child seed per sequence."""
    children = np.random.SeedSequence(seed).spawn(spec.n_sequences)
    lo, hi = spec.duration_range
    out = []
    for child in children:
        rng = np.random.default_rng(child)
        n_frames = int(rng.integers(round(lo * spec.fps), round(hi * spec.fps) + 1))
        e = random_envelope(n_frames, spec, rng)
        carrier = float(spec.carriers[rng.integers(len(spec.carriers))])
        audio = audio_from_envelope(e, spec, carrier, rng)
        motion = motion_from_envelope(e, spec, rng)
        out.append(
            SyntheticExample(
                audio=audio, sample_rate=spec.sample_rate, motion=motion,
                envelope=e, carrier=carrier,
            )
        )
    return out


def envelope_of(features: AudioFeatureSequence) -> np.ndarray:
    """Per-frame scalar loudness recovered from log-mel features.

    Sums the linear mel energies, subtracts the log floor contribution, and
    max-normalizes. Silence maps to all zeros.
    """
    energy = np.exp(features.features).sum(axis=1) - features.dim * LOG_FLOOR
    energy = np.clip(energy, 0.0, None)
    peak = energy.max()
    # exp(log(floor)) leaves ~1e-20 of rounding residue on silence; anything
    # at that scale is silence, not signal
    if peak <= features.dim * 1e-12:
        return np.zeros_like(energy)
    return energy / peak


def write_corpus(corpus: list[SyntheticExample], out_dir) -> Path:
    """Emit WAV + MSEQ + envelope sidecar per example plus a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs = []
    for i, ex in enumerate(corpus):
        stem = f"seq_{i:04d}"
        save_wav(ex.audio, ex.sample_rate, out / f"{stem}.wav")
        save_sequence(ex.motion, out / f"{stem}.mseq")
        ex.envelope.astype("<f4").tofile(out / f"{stem}.env")
        pairs.append(
            {
                "wav": f"{stem}.wav",
                "mseq": f"{stem}.mseq",
                "envelope": f"{stem}.env",
                "frames": len(ex.motion),
                "carrier": ex.carrier,
            }
        )
    manifest = {
        "version": 1,
        "fps": corpus[0].motion.fps,
        "k": corpus[0].motion.k,
        "sample_rate": corpus[0].sample_rate,
        "pairs": pairs,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def load_envelope(path) -> np.ndarray:
    return np.fromfile(path, dtype="<f4").astype(np.float64)
