"""Noise schedule, forward noising, and the x0-prediction reverse sampler.

The model is parameterized to predict the clean window directly, so the
reverse process plugs the guided clean prediction into the standard posterior
q(x_{t-1} | x_t, x0). Guidance blends conditional and unconditional clean
predictions: x0_hat = D(null) + cfg_scale * (D(audio) - D(null)). The scales
0 and 1 short-circuit to a single prediction call, which keeps the stated
equivalences exact in floating point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class NoiseSchedule:
    """Diffusion coefficients beta / alpha / alpha_bar for T steps."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        alpha = np.asarray(self.alpha, dtype=np.float64)
        alpha_bar = np.asarray(self.alpha_bar, dtype=np.float64)
        if not (beta.shape == alpha.shape == alpha_bar.shape == (self.T,)):
            raise ValueError("schedule arrays must all have length T")
        if np.any(beta <= 0) or np.any(beta >= 1):
            raise ValueError("beta values must lie strictly in (0, 1)")
        if np.any(np.diff(alpha_bar) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        for name, arr in (("beta", beta), ("alpha", alpha), ("alpha_bar", alpha_bar)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def check_t(self, t: int) -> int:
        t = int(t)
        if not 0 <= t < self.T:
            raise ValueError(f"diffusion step {t} out of range [0, {self.T})")
        return t

    def alpha_bar_prev(self, t: int) -> float:
        """alpha_bar at step t-1, with the t=0 boundary value 1."""
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])


BETA_MAX = 0.999
COSINE_OFFSET = 0.008


def make_schedule(T: int, kind: str = "cosine") -> NoiseSchedule:
    """Build a noise schedule.

    linear: beta from 1e-4 to 0.02 scaled by 1000/T (clipped below BETA_MAX,
    which only matters for very small T). cosine: squared-cosine alpha_bar
    with offset 0.008.
    """
    if T < 2:
        raise ValueError(f"schedule needs T >= 2, got {T}")
    if kind == "linear":
        scale = 1000.0 / T
        beta = np.linspace(1e-4 * scale, 0.02 * scale, T)
        beta = np.clip(beta, None, BETA_MAX)
    elif kind == "cosine":
        s = COSINE_OFFSET

        def f(u):
            return math.cos((u + s) / (1.0 + s) * math.pi / 2.0) ** 2

        beta = np.array([
            min(1.0 - f((t + 1) / T) / f(t / T), BETA_MAX) for t in range(T)
        ])
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def q_sample(x0, t: int, eps, sched: NoiseSchedule):
    """Forward-noise a clean window: sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps."""
    t = sched.check_t(t)
    ab = float(sched.alpha_bar[t])
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def posterior_coefficients(t: int, sched: NoiseSchedule) -> tuple[float, float, float]:
    """(coef on x0_hat, coef on x_t, posterior variance) at step t > 0."""
    t = sched.check_t(t)
    beta_t = float(sched.beta[t])
    alpha_t = float(sched.alpha[t])
    ab_t = float(sched.alpha_bar[t])
    ab_prev = sched.alpha_bar_prev(t)
    c_x0 = math.sqrt(ab_prev) * beta_t / (1.0 - ab_t)
    c_xt = math.sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab_t)
    var = (1.0 - ab_prev) / (1.0 - ab_t) * beta_t
    return c_x0, c_xt, var


def posterior_step(x_t, x0_hat, t: int, sched: NoiseSchedule, noise):
    """One reverse step x_t -> x_{t-1}; at t=0 returns x0_hat exactly."""
    t = sched.check_t(t)
    if t == 0:
        return x0_hat
    c_x0, c_xt, var = posterior_coefficients(t, sched)
    return c_x0 * x0_hat + c_xt * x_t + math.sqrt(var) * noise


@dataclass
class WindowBatch:
    """One training window: clean context, clean/noisy current window, and
    the conditioning needed to reproduce the denoiser call.

    mask marks the frames of the current window that count toward the loss
    (a contiguous prefix; truncated or padded frames are excluded). initial
    flags windows at sequence start, whose context rows get replaced by the
    model's learned start features. null flags condition dropout.
    """

    prev: np.ndarray
    cur_clean: np.ndarray
    cur_noisy: np.ndarray
    t: int
    mask: np.ndarray
    audio: np.ndarray
    initial: bool = False
    null: bool = False

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        n_valid = int(self.mask.sum())
        if not (self.mask[:n_valid].all() and not self.mask[n_valid:].any()):
            raise ValueError("mask must be a contiguous true prefix")
        w_pre, d_m = self.prev.shape
        w_cur = self.cur_clean.shape[0]
        if self.cur_noisy.shape != (w_cur, d_m) or self.mask.shape != (w_cur,):
            raise ValueError("window batch shapes are inconsistent")
        if self.audio.shape[0] != w_pre + w_cur:
            raise ValueError("audio must cover the previous and current windows")


def _randn_like(shape, ref, generator):
    noise = torch.randn(shape, generator=generator, dtype=ref.dtype)
    return noise


def guided_x0(model, prev, cur_noisy, audio, t: int, cfg_scale: float):
    """Guided clean prediction over the current window.

    cfg_scale 0 and 1 collapse to a single unconditional / conditional call,
    making those equivalences exact per prediction.
    """
    w_cur = cur_noisy.shape[-2]
    if cfg_scale == 0.0:
        pred = model.predict(prev, cur_noisy, None, t)
    elif cfg_scale == 1.0:
        pred = model.predict(prev, cur_noisy, audio, t)
    else:
        uncond = model.predict(prev, cur_noisy, None, t)
        cond = model.predict(prev, cur_noisy, audio, t)
        pred = uncond + cfg_scale * (cond - uncond)
    return pred[..., -w_cur:, :]


def sample_window(
    model,
    prev: torch.Tensor,
    audio: torch.Tensor,
    sched: NoiseSchedule,
    cfg_scale: float,
    rng: int | torch.Generator,
    w_cur: int,
    steps: int | None = None,
) -> torch.Tensor:
    """Sample one clean window of w_cur frames from pure noise.

    model must expose predict(prev, cur_noisy, audio_or_None, t) returning
    the full-range clean prediction. steps=None runs every schedule step;
    an integer selects a strided deterministic (eta=0) subsequence.
    """
    if cfg_scale < 0:
        raise ValueError(f"cfg scale must be >= 0, got {cfg_scale}")
    generator = rng if isinstance(rng, torch.Generator) else torch.Generator().manual_seed(int(rng))
    d_m = prev.shape[-1]
    if audio is not None and audio.shape[-2] != prev.shape[-2] + w_cur:
        raise ValueError(
            f"audio covers {audio.shape[-2]} frames, expected {prev.shape[-2] + w_cur}"
        )

    x = _randn_like((w_cur, d_m), prev, generator)
    if steps is None or steps >= sched.T:
        for t in range(sched.T - 1, -1, -1):
            x0_hat = guided_x0(model, prev, x, audio, t, cfg_scale)
            noise = _randn_like(x.shape, x, generator) if t > 0 else torch.zeros_like(x)
            x = posterior_step(x, x0_hat, t, sched, noise)
        return x

    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    taus = np.unique(np.linspace(0, sched.T - 1, steps).round().astype(int))[::-1]
    for i, t in enumerate(taus):
        t = int(t)
        x0_hat = guided_x0(model, prev, x, audio, t, cfg_scale)
        if i == len(taus) - 1:
            x = x0_hat
            break
        t_prev = int(taus[i + 1])
        ab_t = float(sched.alpha_bar[t])
        ab_prev = float(sched.alpha_bar[t_prev])
        eps_hat = (x - math.sqrt(ab_t) * x0_hat) / math.sqrt(1.0 - ab_t)
        x = math.sqrt(ab_prev) * x0_hat + math.sqrt(1.0 - ab_prev) * eps_hat
    return x
