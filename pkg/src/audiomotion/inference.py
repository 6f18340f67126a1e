"""End-to-end sliding-window generation: audio features in, motion out.

Windows advance by W_cur with no overlap. The first window is conditioned on
the model's learned start features; every later window is conditioned on the
last W_pre frames generated so far and their audio. The final window pads
audio by edge replication and the output is truncated to the audio length.
Sampling runs in the standardized motion space and is destandardized at the
end with the checkpoint's stats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .audio import AudioFeatureSequence
from .denoiser import DenoiserModel
from .diffusion import NoiseSchedule, make_schedule, sample_window
from .motion import MotionSequence, destandardize

DEFAULT_CFG_SCALE = 2.0


@dataclass(frozen=True)
class GenerateConfig:
    cfg_scale: float = DEFAULT_CFG_SCALE
    sampler: str = "full"  # or "strided"
    sample_steps: int = 50
    seed: int = 0
    # None picks up the schedule the checkpoint was trained with.
    diffusion_steps: int | None = None
    schedule: str | None = None

    def __post_init__(self):
        if self.cfg_scale < 0:
            raise ValueError(f"cfg_scale must be >= 0, got {self.cfg_scale}")
        if self.sampler not in ("full", "strided"):
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.sample_steps < 1:
            raise ValueError(f"sample_steps must be >= 1, got {self.sample_steps}")


def generate(
    model: DenoiserModel,
    audio: AudioFeatureSequence,
    cfg: GenerateConfig,
    sched: NoiseSchedule | None = None,
) -> MotionSequence:
    """Generate a motion sequence the same length as the audio features."""
    dn = model.config
    if audio.dim != dn.d_a:
        raise ValueError(f"audio dim {audio.dim} does not match model d_a {dn.d_a}")
    if sched is None:
        t_steps = cfg.diffusion_steps or model.diffusion_steps
        kind = cfg.schedule or model.schedule_kind
        sched = make_schedule(t_steps, kind)
    steps = cfg.sample_steps if cfg.sampler == "strided" else None
    if steps is not None and steps > sched.T:
        raise ValueError(f"sample_steps {steps} exceeds schedule length {sched.T}")

    feats = torch.tensor(np.array(audio.features), dtype=model.dtype)
    n = feats.shape[0]
    n_windows = math.ceil(n / dn.w_cur)
    generator = torch.Generator().manual_seed(int(cfg.seed))

    start_prev, start_audio = model.start_context(1)
    chunks: list[torch.Tensor] = []
    generated = 0
    for k in range(n_windows):
        lo = k * dn.w_cur
        if k == 0:
            prev = start_prev[0]
            prev_audio = start_audio[0]
        else:
            out_so_far = torch.cat(chunks, dim=0)
            prev = out_so_far[-dn.w_pre :]
            prev_audio = feats[lo - dn.w_pre : lo]
            if prev.shape[0] < dn.w_pre:
                # Degenerate w_pre > w_cur case: front-fill with start features.
                pad = dn.w_pre - prev.shape[0]
                prev = torch.cat([start_prev[0, :pad], prev], dim=0)
                prev_audio = torch.cat([start_audio[0, :pad], feats[:lo]], dim=0)
        cur_audio = feats[lo : lo + dn.w_cur]
        if cur_audio.shape[0] < dn.w_cur:
            pad = cur_audio[-1:].expand(dn.w_cur - cur_audio.shape[0], dn.d_a)
            cur_audio = torch.cat([cur_audio, pad], dim=0)
        window_audio = torch.cat([prev_audio, cur_audio], dim=0)

        out = sample_window(
            model, prev, window_audio, sched, cfg.cfg_scale, generator, dn.w_cur, steps=steps
        )
        chunks.append(out)
        generated += out.shape[0]

    full = torch.cat(chunks, dim=0)[:n].double().numpy()
    raw = destandardize(full, model.stats)
    k = (dn.d_m - 7) // 3
    return MotionSequence.from_array(raw, k=k, fps=audio.fps)


@dataclass(frozen=True)
class StitchReport:
    """Velocity continuity diagnostics at window junctions."""

    junction_velocities: tuple
    junction_p95: float
    within_mean: float
    within_p95: float

    @property
    def n_junctions(self) -> int:
        return len(self.junction_velocities)


def stitch_report(seq: MotionSequence, w_cur: int) -> StitchReport:
    """Compare frame-to-frame velocity at window junctions with the rest.

    A junction is the step from the last frame of one window to the first
    frame of the next (indices k * w_cur for k >= 1).
    """
    if w_cur < 1:
        raise ValueError(f"w_cur must be >= 1, got {w_cur}")
    arr = seq.to_array()
    vel = np.linalg.norm(np.diff(arr, axis=0), axis=1)
    junction_idx = np.arange(w_cur, len(seq), w_cur) - 1  # diff index for frame k*w_cur
    junction_idx = junction_idx[junction_idx < vel.shape[0]]
    is_junction = np.zeros(vel.shape[0], dtype=bool)
    is_junction[junction_idx] = True
    junctions = vel[is_junction]
    within = vel[~is_junction]
    return StitchReport(
        junction_velocities=tuple(float(v) for v in junctions),
        junction_p95=float(np.percentile(junctions, 95)) if junctions.size else 0.0,
        within_mean=float(within.mean()) if within.size else 0.0,
        within_p95=float(np.percentile(within, 95)) if within.size else 0.0,
    )
