"""Per-video-frame audio features aligned to the motion frame rate.

The built-in extractor is a deterministic log-mel filterbank; learned speech
encoders are supported only through the precomputed feature file path (AFS).
One feature vector is produced per video frame (hop = one frame period), so
no resampling between audio and motion rates is ever needed.

Filterbank recipe, fixed for bit-reproducibility:
  - HTK mel scale mel(f) = 2595 * log10(1 + f / 700)
  - n_mels triangular filters with peak 1, centers at n_mels + 2 points
    evenly spaced in mel between fmin and fmax
  - Hann-windowed frames centered at sample (i + 0.5) * hop, zero-padded at
    the signal edges, power spectrum via rfft at the next power-of-two size
  - feature = ln(mel_energy + 1e-6)
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from .binio import FormatError, Reader, Writer, read_file, write_file

AFS_MAGIC = b"AFSQ"
AFS_VERSION = 1

LOG_FLOOR = 1e-6


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = 16000
    n_mels: int = 80
    win_ms: float = 40.0
    fps: float = 25.0
    fmin: float = 0.0
    fmax: float | None = None  # defaults to sample_rate / 2

    def __post_init__(self):
        if self.sample_rate <= 0 or self.n_mels < 1 or self.win_ms <= 0 or self.fps <= 0:
            raise ValueError("invalid mel configuration")
        hop = self.sample_rate / self.fps
        if abs(hop - round(hop)) > 1e-9:
            raise ValueError(
                f"sample_rate / fps must be integral, got {self.sample_rate}/{self.fps}"
            )
        fmax = self.sample_rate / 2 if self.fmax is None else self.fmax
        if not 0 <= self.fmin < fmax <= self.sample_rate / 2:
            raise ValueError(f"need 0 <= fmin < fmax <= Nyquist, got [{self.fmin}, {fmax}]")
        object.__setattr__(self, "fmax", float(fmax))

    @property
    def hop_samples(self) -> int:
        return int(round(self.sample_rate / self.fps))

    @property
    def win_samples(self) -> int:
        return int(round(self.win_ms / 1000.0 * self.sample_rate))


@dataclass(frozen=True)
class AudioFeatureSequence:
    """(N, D_a) feature matrix at the motion frame rate."""

    features: np.ndarray
    fps: float

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise ValueError(f"features must be (N, D_a) with N, D_a >= 1, got {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise ValueError("audio features contain non-finite values")
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        feats.flags.writeable = False
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "fps", float(self.fps))

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filter_centers(cfg: MelConfig) -> np.ndarray:
    """Center frequency in Hz of each of the n_mels filters."""
    mel_points = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    return mel_to_hz(mel_points)[1:-1]


def mel_filterbank(cfg: MelConfig, n_fft: int) -> np.ndarray:
    """(n_mels, n_fft // 2 + 1) triangular filter matrix, peak weight 1."""
    mel_points = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bin_freqs = np.arange(n_fft // 2 + 1) * (cfg.sample_rate / n_fft)
    fb = np.zeros((cfg.n_mels, bin_freqs.shape[0]))
    for j in range(cfg.n_mels):
        lo, center, hi = hz_points[j], hz_points[j + 1], hz_points[j + 2]
        rising = (bin_freqs - lo) / (center - lo)
        falling = (hi - bin_freqs) / (hi - center)
        fb[j] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def _next_pow2(n: int) -> int:
    size = 1
    while size < n:
        size *= 2
    return size


def extract_logmel(wav: np.ndarray, sample_rate: int, cfg: MelConfig | None = None) -> AudioFeatureSequence:
    """Extract log-mel features, one frame per video frame.

    Produces exactly floor(duration * fps) frames; silence maps every value
    to ln(1e-6). Deterministic: identical PCM gives identical features.
    """
    cfg = cfg or MelConfig()
    wav = np.asarray(wav, dtype=np.float64).reshape(-1)
    if wav.size == 0:
        raise ValueError("cannot extract features from empty audio")
    if sample_rate != cfg.sample_rate:
        raise ValueError(
            f"sample rate mismatch: audio is {sample_rate} Hz, config expects {cfg.sample_rate} Hz"
        )

    hop = cfg.hop_samples
    win = cfg.win_samples
    n_frames = wav.size // hop
    if n_frames < 1:
        raise ValueError(f"audio shorter than one frame period ({hop} samples)")

    n_fft = _next_pow2(win)
    window = np.hanning(win)
    fb = mel_filterbank(cfg, n_fft)

    half = win // 2
    feats = np.empty((n_frames, cfg.n_mels))
    for i in range(n_frames):
        center = i * hop + hop // 2
        start, stop = center - half, center - half + win
        seg = np.zeros(win)
        lo, hi = max(start, 0), min(stop, wav.size)
        if hi > lo:
            seg[lo - start : hi - start] = wav[lo:hi]
        spectrum = np.fft.rfft(seg * window, n=n_fft)
        power = spectrum.real ** 2 + spectrum.imag ** 2
        feats[i] = np.log(fb @ power + LOG_FLOOR)
    return AudioFeatureSequence(features=feats, fps=cfg.fps)


def align(features: AudioFeatureSequence, motion_len: int) -> AudioFeatureSequence:
    """Reconcile feature length with a motion length.

    Longer inputs are truncated to the first motion_len frames; shorter inputs
    are padded by replicating the last frame.
    """
    if motion_len < 1:
        raise ValueError(f"motion_len must be >= 1, got {motion_len}")
    n = len(features)
    if n == motion_len:
        return features
    if n > motion_len:
        return AudioFeatureSequence(features=features.features[:motion_len], fps=features.fps)
    pad = np.repeat(features.features[-1:], motion_len - n, axis=0)
    return AudioFeatureSequence(
        features=np.concatenate([features.features, pad], axis=0), fps=features.fps
    )


def save_features(seq: AudioFeatureSequence, path) -> None:
    w = Writer()
    w.magic(AFS_MAGIC)
    w.u32(AFS_VERSION)
    w.u32(len(seq))
    w.u32(seq.dim)
    w.f32(seq.fps)
    w.f32_array(seq.features)
    write_file(path, w.getvalue())


def load_features(path) -> AudioFeatureSequence:
    r = Reader(read_file(path), str(path))
    r.expect_magic(AFS_MAGIC)
    version = r.u32("version")
    if version != AFS_VERSION:
        raise FormatError(f"{path}: unsupported AFS version {version}")
    n = r.u32("N")
    d = r.u32("D_a")
    fps = r.f32("fps")
    if n < 1 or d < 1:
        raise FormatError(f"{path}: invalid header (N={n}, D_a={d})")
    feats = r.f32_array(n * d, "feature payload").astype(np.float64)
    r.expect_eof()
    return AudioFeatureSequence(features=feats.reshape(n, d), fps=fps)


# ---------------------------------------------------------------------------
# WAV IO, PCM 16-bit mono only. Samples normalize to [-1, 1) as x / 32768.

def load_wav(path) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1:
            raise FormatError(f"{path}: only mono WAV is supported, got {wf.getnchannels()} channels")
        if wf.getsampwidth() != 2:
            raise FormatError(f"{path}: only 16-bit PCM WAV is supported, got {wf.getsampwidth() * 8}-bit")
        if wf.getcomptype() != "NONE":
            raise FormatError(f"{path}: compressed WAV ({wf.getcomptype()}) is not supported")
        rate = wf.getframerate()
        raw = wf.readframes(wf.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return samples, rate


def save_wav(samples: np.ndarray, sample_rate: int, path) -> None:
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32767.0), -32768, 32767)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.astype("<i2").tobytes())
