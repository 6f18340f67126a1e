"""Losses, windowed batch construction, and the optimization loop.

Losses are computed over the full context + current prediction range. All
reductions are means over the masked elements so the loss weights stay
scale-free across window lengths. Context frames are always unmasked; for
windows at sequence start the context target is the model's own start
features (detached), i.e. the prediction is asked to echo whatever context
it was shown.

Randomness is split across two seeded streams: a numpy generator drives
batch composition and forward-process noise, the torch global stream drives
dropout. Checkpoints at a given step are a pure function of (corpus,
configs, seed).
"""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch

from .audio import align
from .denoiser import DenoiserConfig, DenoiserModel, init_model, save_model
from .diffusion import NoiseSchedule, WindowBatch, make_schedule, q_sample
from .motion import MotionStats, compute_stats, standardize

DELTA_OFFSET = 7  # flatten layout: [euler(3), t(3), s(1), delta...]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 16
    steps: int = 20000
    lambda_vel: float = 5.0
    lambda_smooth: float = 0.5
    lambda_exp: float = 0.1
    cond_drop_p: float = 0.1
    truncation: bool = True
    min_len: int = 10
    diffusion_steps: int = 500
    schedule: str = "cosine"
    grad_clip: float = 1.0
    seed: int = 0
    checkpoint_every: int = 1000

    def __post_init__(self):
        if min(self.lambda_vel, self.lambda_smooth, self.lambda_exp) < 0:
            raise ValueError("loss weights must be >= 0")
        if not 0 <= self.cond_drop_p <= 1:
            raise ValueError(f"cond_drop_p must be in [0, 1], got {self.cond_drop_p}")
        if self.batch_size < 1 or self.steps < 0 or self.min_len < 1:
            raise ValueError("invalid training configuration")


def _as_batched(x: torch.Tensor) -> torch.Tensor:
    return x.unsqueeze(0) if x.ndim == 2 else x


def _as_mask(mask: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    mask = torch.as_tensor(mask, dtype=torch.bool)
    if mask.ndim == 1:
        mask = mask.unsqueeze(0)
    if mask.shape != like.shape[:2]:
        raise ValueError(f"mask shape {tuple(mask.shape)} does not match frames {tuple(like.shape[:2])}")
    return mask


def _masked_mse(err: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    n = mask.sum()
    if n == 0:
        return err.sum() * 0.0
    return (err.square() * mask.unsqueeze(-1)).sum() / (n * err.shape[-1])


def loss_simple(gt: torch.Tensor, pred: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean squared error over masked frames and all dims."""
    gt, pred = _as_batched(gt), _as_batched(pred)
    mask = _as_mask(mask, gt)
    return _masked_mse(gt - pred, mask)


def loss_velocity(gt: torch.Tensor, pred: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """MSE between first differences, over pairs whose frames are both masked in."""
    gt, pred = _as_batched(gt), _as_batched(pred)
    mask = _as_mask(mask, gt)
    d_gt = gt[:, 1:] - gt[:, :-1]
    d_pred = pred[:, 1:] - pred[:, :-1]
    pair_mask = mask[:, 1:] & mask[:, :-1]
    return _masked_mse(d_gt - d_pred, pair_mask)


def loss_smooth(pred: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean squared second difference of the prediction (zero below 3 frames)."""
    pred = _as_batched(pred)
    mask = _as_mask(mask, pred)
    if pred.shape[1] < 3:
        return pred.sum() * 0.0
    d2 = pred[:, 2:] - 2.0 * pred[:, 1:-1] + pred[:, :-2]
    triple_mask = mask[:, 2:] & mask[:, 1:-1] & mask[:, :-2]
    return _masked_mse(d2, triple_mask)


def loss_expression(gt: torch.Tensor, pred: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """MSE restricted to the keypoint-displacement slice of the layout."""
    gt, pred = _as_batched(gt), _as_batched(pred)
    if gt.shape[-1] <= DELTA_OFFSET:
        raise ValueError(f"motion dim {gt.shape[-1]} has no displacement dims")
    mask = _as_mask(mask, gt)
    return _masked_mse(gt[..., DELTA_OFFSET:] - pred[..., DELTA_OFFSET:], mask)


def weighted_total(simple, vel, smooth, exp, cfg: TrainConfig):
    """The loss combination rule: simple + weighted velocity/smooth/expression."""
    return simple + cfg.lambda_vel * vel + cfg.lambda_smooth * smooth + cfg.lambda_exp * exp


def loss_total(
    gt: torch.Tensor, pred: torch.Tensor, mask: torch.Tensor, cfg: TrainConfig
) -> tuple[torch.Tensor, dict]:
    """Weighted sum of all loss terms plus a per-component breakdown."""
    simple = loss_simple(gt, pred, mask)
    vel = loss_velocity(gt, pred, mask)
    smooth = loss_smooth(pred, mask)
    exp = loss_expression(gt, pred, mask)
    total = weighted_total(simple, vel, smooth, exp, cfg)
    components = {
        "total": float(total.detach()),
        "simple": float(simple.detach()),
        "vel": float(vel.detach()),
        "smooth": float(smooth.detach()),
        "exp": float(exp.detach()),
    }
    return total, components


# ---------------------------------------------------------------------------
# Batch construction

class PreparedCorpus:
    """Standardized motion arrays with frame-aligned audio, ready to slice."""

    def __init__(self, pairs, stats: MotionStats, min_len: int):
        self.items: list[tuple[np.ndarray, np.ndarray]] = []
        for idx, (mseq, afs) in enumerate(pairs):
            if len(mseq) < min_len + 1:
                warnings.warn(
                    f"skipping corpus sequence {idx}: {len(mseq)} frames < min_len + 1 "
                    f"({min_len + 1})"
                )
                continue
            audio = align(afs, len(mseq))
            self.items.append((standardize(mseq.to_array(), stats), audio.features))
        if not self.items:
            raise ValueError("corpus has no usable sequences")

    def __len__(self) -> int:
        return len(self.items)


def make_batch(
    corpus,
    stats: MotionStats,
    sched: NoiseSchedule,
    rng: np.random.Generator,
    model_cfg: DenoiserConfig,
    train_cfg: TrainConfig,
) -> list[WindowBatch]:
    """Draw one batch of training windows.

    corpus is a PreparedCorpus or an iterable of (MotionSequence,
    AudioFeatureSequence) pairs. Each element samples a sequence and a window
    start (0 or at least W_pre frames in, so context is always either fully
    real or fully start features), noises the current window at a uniform
    step, applies random truncation to the loss mask, and drops the audio
    condition with the configured probability.
    """
    if not isinstance(corpus, PreparedCorpus):
        corpus = PreparedCorpus(corpus, stats, train_cfg.min_len)
    w_pre, w_cur = model_cfg.w_pre, model_cfg.w_cur
    d_m, d_a = model_cfg.d_m, model_cfg.d_a

    batch = []
    for _ in range(train_cfg.batch_size):
        motion, audio = corpus.items[rng.integers(len(corpus))]
        n = motion.shape[0]
        n_starts = max(n - w_cur - w_pre + 1, 0)  # starts w_pre .. n - w_cur
        pick = int(rng.integers(n_starts + 1))
        start = 0 if pick == 0 else w_pre + pick - 1
        initial = start == 0

        prev = np.zeros((w_pre, d_m)) if initial else motion[start - w_pre : start]
        avail = min(w_cur, n - start)
        cur = np.zeros((w_cur, d_m))
        cur[:avail] = motion[start : start + avail]

        valid = avail
        if train_cfg.truncation:
            lo = min(train_cfg.min_len, w_cur)  # degenerate min_len > w_cur: no truncation
            valid = min(avail, int(rng.integers(lo, w_cur + 1)))
        mask = np.zeros(w_cur, dtype=bool)
        mask[:valid] = True

        audio_win = np.zeros((w_pre + w_cur, d_a))
        if not initial:
            audio_win[:w_pre] = audio[start - w_pre : start]
        audio_win[w_pre : w_pre + avail] = audio[start : start + avail]
        if avail < w_cur:
            audio_win[w_pre + avail :] = audio[start + avail - 1]

        t = int(rng.integers(sched.T))
        eps = rng.standard_normal((w_cur, d_m))
        cur_noisy = q_sample(cur, t, eps, sched)

        batch.append(
            WindowBatch(
                prev=prev,
                cur_clean=cur,
                cur_noisy=cur_noisy,
                t=t,
                mask=mask,
                audio=audio_win,
                initial=initial,
                null=bool(rng.random() < train_cfg.cond_drop_p),
            )
        )
    return batch


def collate(batch: list[WindowBatch]) -> dict:
    """Stack a window batch into float32 torch tensors."""
    def stack(getter, dtype=torch.float32):
        return torch.stack([torch.as_tensor(getter(b), dtype=dtype) for b in batch])

    return {
        "prev": stack(lambda b: b.prev),
        "cur_clean": stack(lambda b: b.cur_clean),
        "cur_noisy": stack(lambda b: b.cur_noisy),
        "audio": stack(lambda b: b.audio),
        "t": torch.tensor([b.t for b in batch], dtype=torch.long),
        "mask": torch.tensor(np.stack([b.mask for b in batch])),
        "initial": torch.tensor([b.initial for b in batch]),
        "null": torch.tensor([b.null for b in batch]),
    }


def materialize_context(
    model: DenoiserModel, prev: torch.Tensor, audio: torch.Tensor, initial: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Substitute learned start features for context rows of initial windows."""
    b = prev.shape[0]
    start_prev, start_audio = model.start_context(b)
    flag = initial.view(b, 1, 1)
    prev_eff = torch.where(flag, start_prev.to(prev.dtype), prev)
    audio_eff = audio.clone()
    w_pre = model.config.w_pre
    audio_eff[:, :w_pre] = torch.where(
        flag, start_audio.to(audio.dtype), audio[:, :w_pre]
    )
    return prev_eff, audio_eff


# ---------------------------------------------------------------------------
# Optimization loop

@dataclass
class TrainState:
    """Everything needed to continue training bit-identically."""

    model: DenoiserModel
    optimizer: torch.optim.Adam
    sched: NoiseSchedule
    rng: np.random.Generator
    step: int = 0
    running: dict = field(default_factory=dict)


class TrainingDiverged(RuntimeError):
    pass


def init_train_state(corpus_pairs, train_cfg: TrainConfig, model_cfg: DenoiserConfig) -> TrainState:
    stats = compute_stats([m for m, _ in corpus_pairs])
    if stats.dim != model_cfg.d_m:
        raise ValueError(f"corpus motion dim {stats.dim} does not match model d_m {model_cfg.d_m}")
    torch.manual_seed(train_cfg.seed)
    model = init_model(model_cfg, train_cfg.seed)
    model.stats = stats
    model.diffusion_steps = train_cfg.diffusion_steps
    model.schedule_kind = train_cfg.schedule
    optimizer = torch.optim.Adam(
        model.parameters(), lr=train_cfg.lr, betas=(0.9, 0.999), eps=1e-8
    )
    sched = make_schedule(train_cfg.diffusion_steps, train_cfg.schedule)
    rng = np.random.default_rng(train_cfg.seed)
    return TrainState(model=model, optimizer=optimizer, sched=sched, rng=rng)


def train_step(
    state: TrainState, prepared: PreparedCorpus, train_cfg: TrainConfig
) -> dict:
    model = state.model
    batch = make_batch(
        prepared, model.stats, state.sched, state.rng, model.config, train_cfg
    )
    tensors = collate(batch)
    prev_eff, audio_eff = materialize_context(
        model, tensors["prev"], tensors["audio"], tensors["initial"]
    )
    pred = model(prev_eff, tensors["cur_noisy"], audio_eff, tensors["t"], tensors["null"])
    gt = torch.cat([prev_eff.detach(), tensors["cur_clean"]], dim=1)
    full_mask = torch.cat(
        [torch.ones(tensors["mask"].shape[0], model.config.w_pre, dtype=torch.bool),
         tensors["mask"]],
        dim=1,
    )
    total, components = loss_total(gt, pred, full_mask, train_cfg)
    if not np.isfinite(components["total"]):
        dump = f"diverged_batch_step{state.step}.npz"
        np.savez(dump, **{k: v.detach().numpy() for k, v in tensors.items()})
        raise TrainingDiverged(
            f"non-finite loss {components['total']} at step {state.step}; batch dumped to {dump}"
        )
    state.optimizer.zero_grad()
    total.backward()
    if train_cfg.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip)
    state.optimizer.step()
    state.step += 1
    state.running = components
    return components


def train(
    corpus_pairs,
    train_cfg: TrainConfig,
    model_cfg: DenoiserConfig,
    checkpoint_path=None,
    log_path=None,
    state: TrainState | None = None,
    progress=None,
) -> TrainState:
    """Run the training loop and return the final state.

    Writes periodic checkpoints next to checkpoint_path (suffix .stepN) and a
    final checkpoint at checkpoint_path itself; appends one CSV row per step
    to log_path. progress, if given, is called with (step, components).
    """
    if state is None:
        state = init_train_state(corpus_pairs, train_cfg, model_cfg)
    prepared = PreparedCorpus(corpus_pairs, state.model.stats, train_cfg.min_len)

    log_fh = None
    writer = None
    if log_path is not None:
        log_fh = open(log_path, "a", newline="")
        writer = csv.writer(log_fh)
        if log_fh.tell() == 0:
            writer.writerow(["step", "total", "simple", "vel", "smooth", "exp", "wall_time"])
    t0 = time.monotonic()
    try:
        while state.step < train_cfg.steps:
            components = train_step(state, prepared, train_cfg)
            if writer is not None:
                writer.writerow(
                    [state.step, components["total"], components["simple"], components["vel"],
                     components["smooth"], components["exp"], f"{time.monotonic() - t0:.3f}"]
                )
            if progress is not None:
                progress(state.step, components)
            if (
                checkpoint_path is not None
                and train_cfg.checkpoint_every > 0
                and state.step % train_cfg.checkpoint_every == 0
                and state.step < train_cfg.steps
            ):
                save_model(state.model, f"{checkpoint_path}.step{state.step}")
    finally:
        if log_fh is not None:
            log_fh.close()
    if checkpoint_path is not None:
        save_model(state.model, checkpoint_path)
    return state


def save_train_state(state: TrainState, path) -> None:
    torch.save(
        {
            "model_config": state.model.config,
            "model_state": state.model.state_dict(),
            "stats_mean": np.asarray(state.model.stats.mean),
            "stats_std": np.asarray(state.model.stats.std),
            "optimizer_state": state.optimizer.state_dict(),
            "sched_T": state.sched.T,
            "sched_beta": np.asarray(state.sched.beta),
            "step": state.step,
            "np_rng_state": state.rng.bit_generator.state,
            "torch_rng_state": torch.get_rng_state(),
        },
        path,
    )


def load_train_state(path, train_cfg: TrainConfig) -> TrainState:
    blob = torch.load(path, weights_only=False)
    model = DenoiserModel(blob["model_config"])
    model.load_state_dict(blob["model_state"])
    model.stats = MotionStats(mean=blob["stats_mean"], std=blob["stats_std"])
    optimizer = torch.optim.Adam(
        model.parameters(), lr=train_cfg.lr, betas=(0.9, 0.999), eps=1e-8
    )
    optimizer.load_state_dict(blob["optimizer_state"])
    beta = blob["sched_beta"]
    sched = NoiseSchedule(
        T=blob["sched_T"], beta=beta, alpha=1.0 - beta, alpha_bar=np.cumprod(1.0 - beta)
    )
    rng = np.random.default_rng()
    rng.bit_generator.state = blob["np_rng_state"]
    torch.set_rng_state(blob["torch_rng_state"])
    return TrainState(
        model=model, optimizer=optimizer, sched=sched, rng=rng, step=blob["step"]
    )
