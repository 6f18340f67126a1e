"""Windowed transformer denoiser over previous-context and current tokens.

Each token is the sum of a motion projection, an audio projection, a learned
positional embedding, and a shared diffusion-step embedding. The stack is
pre-normalization self-attention + feed-forward blocks with full bidirectional
attention across all W_pre + W_cur tokens, then a final layer norm and a
linear head back to motion space. Conditioning is by token concatenation
only; there is no cross-attention target.

The null condition (audio=None / NULL_CONDITION) replaces the audio feature
at every position with a learned null embedding, making the forward pass
invariant to whatever audio the caller holds. Learned start features supply
the context rows for windows at the beginning of a sequence; callers
materialize them via start_context() so the same forward path serves both
initial and continuation windows.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .binio import FormatError, Reader, Writer, read_file, write_file
from .motion import MotionStats

CHECKPOINT_MAGIC = b"JVMD"
CHECKPOINT_VERSION = 1

# Passing NULL_CONDITION (None) as the audio argument drops the condition.
NULL_CONDITION = None


@dataclass(frozen=True)
class DenoiserConfig:
    d_m: int
    d_a: int
    layers: int = 6
    heads: int = 8
    dim: int = 512
    ff_dim: int | None = None  # defaults to 4 * dim
    w_pre: int = 25
    w_cur: int = 100
    dropout: float = 0.1

    def __post_init__(self):
        if self.ff_dim is None:
            object.__setattr__(self, "ff_dim", 4 * self.dim)
        if self.d_m < 1 or self.d_a < 1 or self.layers < 1 or self.heads < 1:
            raise ValueError("invalid denoiser configuration")
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} must be divisible by heads {self.heads}")
        if self.dim % 2 != 0:
            raise ValueError(f"dim must be even for the sinusoidal step embedding, got {self.dim}")
        if self.w_pre < 1 or self.w_cur < 1:
            raise ValueError("window lengths must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def tokens(self) -> int:
        return self.w_pre + self.w_cur


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of diffusion steps, shape (B, dim)."""
    half = dim // 2
    if half > 1:
        freqs = torch.exp(
            -math.log(10000.0) * torch.arange(half, dtype=t.dtype) / (half - 1)
        )
    else:
        freqs = torch.ones(1, dtype=t.dtype)
    args = t[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)
        self.attn_drop = nn.Dropout(dropout)
        self.resid_drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, w, d = x.shape
        def split(proj):
            return proj(x).view(b, w, self.heads, self.head_dim).transpose(1, 2)
        q, k, v = split(self.q), split(self.k), split(self.v)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        probs = self.attn_drop(torch.softmax(scores, dim=-1))
        ctx = (probs @ v).transpose(1, 2).reshape(b, w, d)
        return self.resid_drop(self.out(ctx))


class FeedForward(nn.Module):
    def __init__(self, dim: int, ff_dim: int, dropout: float):
        super().__init__()
        self.fc1 = nn.Linear(dim, ff_dim)
        self.fc2 = nn.Linear(ff_dim, dim)
        self.act = nn.GELU()
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.drop(self.fc2(self.act(self.fc1(x))))


class Block(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.dim)
        self.attn = SelfAttention(cfg.dim, cfg.heads, cfg.dropout)
        self.ln2 = nn.LayerNorm(cfg.dim)
        self.ffn = FeedForward(cfg.dim, cfg.ff_dim, cfg.dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        x = x + self.ffn(self.ln2(x))
        return x


class DenoiserModel(nn.Module):
    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        self.stats = MotionStats(mean=np.zeros(config.d_m), std=np.ones(config.d_m))
        # Schedule the model was trained against; generate() defaults to it.
        self.diffusion_steps = 500
        self.schedule_kind = "cosine"
        self.motion_proj = nn.Linear(config.d_m, config.dim)
        self.audio_proj = nn.Linear(config.d_a, config.dim)
        self.pos_emb = nn.Parameter(torch.zeros(config.tokens, config.dim))
        self.time_fc1 = nn.Linear(config.dim, config.dim)
        self.time_fc2 = nn.Linear(config.dim, config.dim)
        self.blocks = nn.ModuleList(Block(config) for _ in range(config.layers))
        self.ln_f = nn.LayerNorm(config.dim)
        self.head = nn.Linear(config.dim, config.d_m)
        self.x_start = nn.Parameter(torch.zeros(config.d_m))
        self.a_start = nn.Parameter(torch.zeros(config.d_a))
        self.null_audio = nn.Parameter(torch.zeros(config.d_a))

    @property
    def dtype(self) -> torch.dtype:
        return self.head.weight.dtype

    def time_embedding(self, t: torch.Tensor) -> torch.Tensor:
        emb = timestep_embedding(t.to(self.dtype), self.config.dim)
        return self.time_fc2(torch.nn.functional.gelu(self.time_fc1(emb)))

    def start_context(self, batch: int = 1) -> tuple[torch.Tensor, torch.Tensor]:
        """Start features broadcast over the context window: (prev, prev_audio)."""
        prev = self.x_start.expand(batch, self.config.w_pre, self.config.d_m)
        audio = self.a_start.expand(batch, self.config.w_pre, self.config.d_a)
        return prev, audio

    def forward(
        self,
        prev: torch.Tensor,
        cur_noisy: torch.Tensor,
        audio: torch.Tensor | None,
        t: torch.Tensor | int,
        null_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Predict the clean motion over the full context + current range.

        prev: (B, W_pre, D_m); cur_noisy: (B, W_cur, D_m); audio: (B, W, D_a)
        or NULL_CONDITION; t: int or (B,) step indices. null_mask optionally
        drops the condition per batch element (used for condition dropout in
        training). Returns (B, W_pre + W_cur, D_m).
        """
        cfg = self.config
        if prev.ndim != 3 or prev.shape[1:] != (cfg.w_pre, cfg.d_m):
            raise ValueError(f"prev must be (B, {cfg.w_pre}, {cfg.d_m}), got {tuple(prev.shape)}")
        if cur_noisy.ndim != 3 or cur_noisy.shape[1:] != (cfg.w_cur, cfg.d_m):
            raise ValueError(
                f"cur_noisy must be (B, {cfg.w_cur}, {cfg.d_m}), got {tuple(cur_noisy.shape)}"
            )
        b = prev.shape[0]
        if isinstance(t, int):
            t = torch.full((b,), t, dtype=torch.long)
        if t.ndim != 1 or t.shape[0] != b:
            raise ValueError(f"t must be scalar or shape ({b},)")
        if torch.any(t < 0):
            raise ValueError("diffusion step must be >= 0")

        if audio is NULL_CONDITION:
            audio_tok = self.null_audio.expand(b, cfg.tokens, cfg.d_a)
        else:
            if audio.ndim != 3 or audio.shape != (b, cfg.tokens, cfg.d_a):
                raise ValueError(
                    f"audio must be (B, {cfg.tokens}, {cfg.d_a}) or NULL_CONDITION, "
                    f"got {tuple(audio.shape)}"
                )
            if null_mask is not None:
                audio_tok = torch.where(
                    null_mask.view(b, 1, 1), self.null_audio.expand_as(audio), audio
                )
            else:
                audio_tok = audio

        motion = torch.cat([prev, cur_noisy], dim=1)
        x = (
            self.motion_proj(motion)
            + self.audio_proj(audio_tok)
            + self.pos_emb[None, :, :]
            + self.time_embedding(t)[:, None, :]
        )
        for block in self.blocks:
            x = block(x)
        return self.head(self.ln_f(x))

    @torch.no_grad()
    def predict(
        self,
        prev: torch.Tensor,
        cur_noisy: torch.Tensor,
        audio: torch.Tensor | None,
        t: int,
    ) -> torch.Tensor:
        """Eval-mode single-window forward for the sampler, (W, D_m) in and out."""
        was_training = self.training
        self.eval()
        try:
            out = self.forward(
                prev.unsqueeze(0).to(self.dtype),
                cur_noisy.unsqueeze(0).to(self.dtype),
                None if audio is NULL_CONDITION else audio.unsqueeze(0).to(self.dtype),
                t,
            )
        finally:
            self.train(was_training)
        return out.squeeze(0)


def init_model(config: DenoiserConfig, seed: int) -> DenoiserModel:
    """Deterministically initialize a model from a seed.

    Linear weights are Xavier-uniform with zero bias, positional embeddings
    N(0, 0.02), start/null features N(0, 1), and the output head is zeroed so
    the initial prediction is independent of the inputs.
    """
    model = DenoiserModel(config)
    g = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name in ("x_start", "a_start", "null_audio"):
                p.copy_(torch.randn(p.shape, generator=g))
            elif name == "pos_emb":
                p.copy_(0.02 * torch.randn(p.shape, generator=g))
            elif name.startswith("head."):
                p.zero_()
            elif name.endswith(".bias"):
                p.zero_()
            elif ".ln" in name or name.startswith("ln_f"):
                p.fill_(1.0)  # layer norm gain
            else:
                fan_out, fan_in = p.shape
                bound = math.sqrt(6.0 / (fan_in + fan_out))
                p.copy_(bound * (2.0 * torch.rand(p.shape, generator=g) - 1.0))
    return model


def parameter_count(config: DenoiserConfig) -> int:
    """Closed-form number of parameters for a configuration."""
    d, ff, dm, da = config.dim, config.ff_dim, config.d_m, config.d_a
    proj = (dm * d + d) + (da * d + d)
    pos = config.tokens * d
    time_mlp = 2 * (d * d + d)
    per_layer = (
        2 * (2 * d)              # two layer norms
        + 4 * (d * d + d)        # q, k, v, out projections
        + (d * ff + ff)          # ffn in
        + (ff * d + d)           # ffn out
    )
    final = 2 * d + (d * dm + dm)
    extras = dm + 2 * da         # x_start, a_start, null_audio
    return proj + pos + time_mlp + config.layers * per_layer + final + extras


# ---------------------------------------------------------------------------
# Checkpoint format (JVMD): config as JSON, motion stats as f64, then a named
# parameter table with f32 payloads. Torch parameters are f32, so save/load
# round trips bit-exactly.

def save_model(model: DenoiserModel, path) -> None:
    w = Writer()
    w.magic(CHECKPOINT_MAGIC)
    w.u32(CHECKPOINT_VERSION)
    cfg = {
        "denoiser": asdict(model.config),
        "diffusion_steps": model.diffusion_steps,
        "schedule": model.schedule_kind,
    }
    cfg_blob = json.dumps(cfg, sort_keys=True).encode("utf-8")
    w.u32(len(cfg_blob))
    w.bytes_(cfg_blob)
    w.u32(model.stats.dim)
    w.f64_array(model.stats.mean)
    w.f64_array(model.stats.std)
    params = sorted(model.state_dict().items())
    w.u32(len(params))
    for name, tensor in params:
        blob = name.encode("utf-8")
        w.u32(len(blob))
        w.bytes_(blob)
        w.u32(tensor.ndim)
        for extent in tensor.shape:
            w.u32(extent)
        w.f32_array(tensor.detach().cpu().numpy())
    write_file(path, w.getvalue())


def load_model(path) -> DenoiserModel:
    r = Reader(read_file(path), str(path))
    r.expect_magic(CHECKPOINT_MAGIC)
    version = r.u32("version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    cfg_len = r.u32("config length")
    try:
        cfg_dict = json.loads(r.bytes_(cfg_len, "config json").decode("utf-8"))
        config = DenoiserConfig(**cfg_dict["denoiser"])
        diffusion_steps = int(cfg_dict["diffusion_steps"])
        schedule_kind = str(cfg_dict["schedule"])
    except (ValueError, TypeError, KeyError) as exc:
        raise FormatError(f"{path}: invalid config block: {exc}") from exc
    dim = r.u32("stats dim")
    if dim != config.d_m:
        raise FormatError(f"{path}: stats dim {dim} does not match config d_m {config.d_m}")
    mean = r.f64_array(dim, "stats mean")
    std = r.f64_array(dim, "stats std")
    n_params = r.u32("parameter count")
    table: dict[str, torch.Tensor] = {}
    for _ in range(n_params):
        name = r.bytes_(r.u32("name length"), "name").decode("utf-8")
        ndim = r.u32("ndim")
        shape = tuple(r.u32("extent") for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        data = r.f32_array(count, f"payload of {name}")
        table[name] = torch.from_numpy(data.reshape(shape))
    r.expect_eof()

    model = DenoiserModel(config)
    expected = set(model.state_dict().keys())
    if set(table.keys()) != expected:
        missing = sorted(expected - set(table.keys()))
        extra = sorted(set(table.keys()) - expected)
        raise FormatError(f"{path}: parameter table mismatch (missing {missing}, extra {extra})")
    for name, tensor in model.state_dict().items():
        if table[name].shape != tensor.shape:
            raise FormatError(
                f"{path}: shape mismatch for {name}: {tuple(table[name].shape)} vs {tuple(tensor.shape)}"
            )
    model.load_state_dict(table)
    model.stats = MotionStats(mean=mean, std=std)
    model.diffusion_steps = diffusion_steps
    model.schedule_kind = schedule_kind
    return model
