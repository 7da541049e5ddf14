"""Conditional denoising diffusion over normalized log-mel frames.

Steps are 1-based everywhere: ``t`` runs over ``1..T`` and ``alpha_bar(0) = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .embeddings import CONTENT_DIM, STYLE_DIM, TIMBRE_DIM, LyricContentEncoder, StyleTable

N_MELS = 80
F0_CHANNELS = 2 + N_MELS  # normalized log-F0, voiced flag, harmonic template
AMP_CHANNELS = 1
COND_CHANNELS = F0_CHANNELS + AMP_CHANNELS + CONTENT_DIM + TIMBRE_DIM + STYLE_DIM


@dataclass(frozen=True)
class NoiseSchedule:
    num_steps: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def beta(self, t: int) -> float:
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])


def make_schedule(num_steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2, dtype=np.float64) -> NoiseSchedule:
    if num_steps < 2:
        raise ValueError("need at least 2 diffusion steps")
    if not 0 < beta_start < beta_end < 1:
        raise ValueError(f"need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}")
    t = np.arange(1, num_steps + 1, dtype=np.float64)
    betas = (beta_start + (t - 1) / (num_steps - 1) * (beta_end - beta_start)).astype(dtype)
    # pin the endpoints exactly
    betas[0], betas[-1] = beta_start, beta_end
    alphas = (1 - betas).astype(dtype)
    alpha_bars = np.cumprod(alphas, dtype=dtype)
    for arr in (betas, alphas, alpha_bars):
        arr.setflags(write=False)
    return NoiseSchedule(num_steps, betas, alphas, alpha_bars)


def _ab_tensor(schedule: NoiseSchedule, t, like: torch.Tensor) -> torch.Tensor:
    t = torch.as_tensor(t)
    ab = torch.as_tensor(np.array(schedule.alpha_bars), dtype=like.dtype)[t.long() - 1]
    return ab.reshape(-1, *([1] * (like.dim() - 1))) if ab.dim() else ab


def q_sample(x0, t, eps, schedule: NoiseSchedule):
    """Forward-noise ``x0`` to step ``t`` (scalar or one step per batch item)."""
    if tuple(x0.shape) != tuple(eps.shape):
        raise ValueError(f"shape mismatch: x0 {tuple(x0.shape)} vs eps {tuple(eps.shape)}")
    if isinstance(x0, np.ndarray):
        t_arr = np.asarray(t)
        if np.any(t_arr < 1) or np.any(t_arr > schedule.num_steps):
            raise ValueError("t out of range")
        ab = schedule.alpha_bars[t_arr - 1]
        if ab.ndim:
            ab = ab.reshape(-1, *([1] * (x0.ndim - 1)))
        return np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps
    ab = _ab_tensor(schedule, t, x0)
    return ab.sqrt() * x0 + (1 - ab).sqrt() * eps


def sinusoidal_encoding(t, channels: int = 128) -> torch.Tensor:
    """``channels/2`` sines then cosines of ``t`` at geometric frequencies from 1 down to 1e-4."""
    half = channels // 2
    freqs = torch.tensor(1e-4 ** (np.arange(half) / (half - 1)), dtype=torch.float64)
    t = torch.as_tensor(t, dtype=torch.float64).reshape(-1, 1)
    args = t * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class StepEmbedding(nn.Module):
    def __init__(self, in_channels: int = 128, mid_channels: int = 512, out_channels: int = 512):
        super().__init__()
        self.in_channels = in_channels
        self.fc1 = nn.Linear(in_channels, mid_channels)
        self.fc2 = nn.Linear(mid_channels, out_channels)

    def forward(self, t) -> torch.Tensor:
        enc = sinusoidal_encoding(t, self.in_channels).to(self.fc1.weight.dtype)
        return F.silu(self.fc2(F.silu(self.fc1(enc))))


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, dilation: int, step_channels: int = 512):
        super().__init__()
        self.step_proj = nn.Linear(step_channels, channels)
        self.dilated = nn.Conv1d(channels, 2 * channels, 3, padding=dilation, dilation=dilation)
        self.cond_proj = nn.Conv1d(channels, 2 * channels, 1)
        self.out = nn.Conv1d(channels, 2 * channels, 1)

    def forward(self, x: torch.Tensor, step: torch.Tensor, cond: torch.Tensor):
        h = self.dilated(x + self.step_proj(step).unsqueeze(-1)) + self.cond_proj(cond)
        gate, filt = h.chunk(2, dim=1)
        h = torch.sigmoid(gate) * torch.tanh(filt)
        res, skip = self.out(h).chunk(2, dim=1)
        return (x + res) / math.sqrt(2.0), skip


class Denoiser(nn.Module):
    """Dilated 1-D conv residual network over frames predicting the added noise."""

    def __init__(self, channels: int = 128, dilations=(1, 2, 4, 8), cond_channels: int = COND_CHANNELS, step_channels: int = 512):
        super().__init__()
        self.in_proj = nn.Conv1d(N_MELS + cond_channels, channels, 1)
        self.cond_in = nn.Conv1d(cond_channels, channels, 1)
        self.blocks = nn.ModuleList(ResidualBlock(channels, d, step_channels) for d in dilations)
        self.out_proj = nn.Conv1d(channels, N_MELS, 1)

    def forward(self, x_t: torch.Tensor, cond: torch.Tensor, step: torch.Tensor) -> torch.Tensor:
        h = F.silu(self.in_proj(torch.cat([x_t, cond], dim=1)))
        c = F.silu(self.cond_in(cond))
        skips = 0.0
        for block in self.blocks:
            h, skip = block(h, step, c)
            skips = skips + skip
        return self.out_proj(F.silu(skips / math.sqrt(len(self.blocks))))


@dataclass
class CondInputs:
    """Frame-aligned conditioning arrays for one utterance (channels-last, numpy).

    ``content`` is either a fixed ``T x 64`` matrix (local content) or ``None``
    with ``phoneme_ids``/``positions`` set for the trainable lyric encoder.
    """

    f0: np.ndarray  # T x 2
    amplitude: np.ndarray  # T x 1
    timbre: np.ndarray  # 192
    style_index: int
    content: np.ndarray | None = None
    phoneme_ids: np.ndarray | None = None
    positions: np.ndarray | None = None

    def __post_init__(self):
        n = self.f0.shape[0]
        lengths = {"amplitude": self.amplitude.shape[0]}
        if self.content is not None:
            lengths["content"] = self.content.shape[0]
        elif self.phoneme_ids is not None:
            lengths["phonemes"] = len(self.phoneme_ids)
        else:
            raise ValueError("conditioning needs content or phoneme ids")
        for name, m in lengths.items():
            if m != n:
                raise ValueError(f"conditioning length mismatch: f0 has {n} frames, {name} has {m}")

    @property
    def num_frames(self) -> int:
        return self.f0.shape[0]

    def crop(self, start: int, stop: int) -> "CondInputs":
        return CondInputs(
            self.f0[start:stop],
            self.amplitude[start:stop],
            self.timbre,
            self.style_index,
            None if self.content is None else self.content[start:stop],
            None if self.phoneme_ids is None else self.phoneme_ids[start:stop],
            None if self.positions is None else self.positions[start:stop],
        )


class AcousticModel(nn.Module):
    """All trainable parts: denoiser, step embedding, lyric encoder and style table."""

    def __init__(self, channels: int = 128, dilations=(1, 2, 4, 8)):
        super().__init__()
        self.step_embedding = StepEmbedding()
        self.denoiser = Denoiser(channels, dilations)
        self.lyric_encoder = LyricContentEncoder()
        self.style_table = StyleTable()

    @property
    def dtype(self) -> torch.dtype:
        return self.denoiser.in_proj.weight.dtype

    def condition(self, items: list[CondInputs]) -> torch.Tensor:
        """Stack conditioning into a ``B x C x T`` tensor (lyric content computed here)."""
        dtype = self.dtype
        rows = []
        for c in items:
            n = c.num_frames
            if c.content is not None:
                content = torch.as_tensor(c.content, dtype=dtype)
            else:
                content = self.lyric_encoder(
                    torch.as_tensor(c.phoneme_ids, dtype=torch.long), torch.as_tensor(c.positions, dtype=dtype)
                )
            style = self.style_table(torch.tensor([c.style_index]))[0]
            timbre = torch.as_tensor(c.timbre, dtype=dtype)
            rows.append(
                torch.cat(
                    [
                        torch.as_tensor(c.f0, dtype=dtype),
                        torch.as_tensor(c.amplitude, dtype=dtype),
                        content,
                        timbre.expand(n, -1),
                        style.expand(n, -1),
                    ],
                    dim=1,
                ).T
            )
        lengths = {r.shape[1] for r in rows}
        if len(lengths) != 1:
            raise ValueError(f"batch items differ in frame count: {sorted(lengths)}")
        return torch.stack(rows)

    def denoise_predict(self, x_t: torch.Tensor, t, cond: torch.Tensor) -> torch.Tensor:
        """Predict noise for ``x_t`` (``B x 80 x T``) at step(s) ``t`` given stacked conditioning."""
        if x_t.dim() != 3 or x_t.shape[1] != N_MELS:
            raise ValueError(f"x_t must be B x {N_MELS} x T, got {tuple(x_t.shape)}")
        if cond.shape[0] != x_t.shape[0] or cond.shape[2] != x_t.shape[2]:
            raise ValueError(f"shape mismatch: x_t {tuple(x_t.shape)} vs cond {tuple(cond.shape)}")
        t = torch.as_tensor(t).reshape(-1)
        if t.numel() == 1:
            t = t.expand(x_t.shape[0])
        step = self.step_embedding(t)
        return self.denoiser(x_t, cond, step)

    def forward(self, x_t, t, cond):
        return self.denoise_predict(x_t, t, cond)

    def parameter_count(self) -> dict[str, int]:
        return {name: sum(p.numel() for p in mod.parameters()) for name, mod in self.named_children()}


def init_model(seed: int = 0, dtype: torch.dtype = torch.float32, **kwargs) -> AcousticModel:
    """Deterministically initialized model (default torch init under a fixed seed)."""
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        model = AcousticModel(**kwargs).to(dtype)
    finally:
        torch.random.set_rng_state(gen_state)
    return model


def diffusion_loss(model: AcousticModel, x0: torch.Tensor, cond: torch.Tensor, t, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    x_t = q_sample(x0, t, eps, schedule)
    return torch.mean((eps - model.denoise_predict(x_t, t, cond)) ** 2)


def draw_noise(rng: np.random.Generator, batch: int, num_frames: int, schedule: NoiseSchedule):
    t = rng.integers(1, schedule.num_steps + 1, size=batch)
    eps = rng.standard_normal((batch, N_MELS, num_frames))
    return t, eps


def loss_and_grad(model: AcousticModel, batch, schedule: NoiseSchedule, rng: np.random.Generator):
    """Epsilon-prediction MSE on ``batch`` and gradients for every trainable tensor.

    ``batch`` is a sequence of ``(x0, CondInputs)`` pairs with ``x0`` shaped
    ``T x 80`` (normalized log-mel, frames first).
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    dtype = model.dtype
    x0 = torch.stack([torch.as_tensor(np.asarray(x).T, dtype=dtype) for x, _ in batch])
    t, eps = draw_noise(rng, x0.shape[0], x0.shape[2], schedule)
    model.zero_grad(set_to_none=True)
    cond = model.condition([c for _, c in batch])
    loss = diffusion_loss(model, x0, cond, torch.as_tensor(t), torch.as_tensor(eps, dtype=dtype), schedule)
    loss.backward()
    grads = {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in model.named_parameters()
    }
    return float(loss.detach()), grads


EpsFn = Callable[[torch.Tensor, int], torch.Tensor]


def _eps_fn(model, cond) -> EpsFn:
    if isinstance(model, AcousticModel):
        return lambda x, t: model.denoise_predict(x, t, cond)
    return model


def _initial_noise(shape, dtype, x_T=None, rng: np.random.Generator | None = None, seed: int = 0) -> torch.Tensor:
    if x_T is not None:
        return torch.as_tensor(x_T, dtype=dtype).reshape(shape).clone()
    rng = rng if rng is not None else np.random.default_rng(seed)
    return torch.as_tensor(rng.standard_normal(shape), dtype=dtype)


@torch.no_grad()
def ddpm_sample(model, cond: torch.Tensor, schedule: NoiseSchedule, rng: np.random.Generator | None = None, seed: int = 0, x_T=None, dtype=None):
    """Ancestral sampling over all ``T`` steps; returns ``B x 80 x frames``."""
    dtype = dtype or (model.dtype if isinstance(model, AcousticModel) else torch.float64)
    rng = rng if rng is not None else np.random.default_rng(seed)
    shape = (cond.shape[0], N_MELS, cond.shape[2])
    eps_fn = _eps_fn(model, cond)
    x = _initial_noise(shape, dtype, x_T, rng)
    for t in range(schedule.num_steps, 0, -1):
        beta, alpha, ab = schedule.beta(t), schedule.alpha(t), schedule.alpha_bar(t)
        eps_hat = eps_fn(x, t)
        x = (x - beta / math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(alpha)
        if t > 1:
            var = beta * (1.0 - schedule.alpha_bar(t - 1)) / (1.0 - ab)
            x = x + math.sqrt(var) * torch.as_tensor(rng.standard_normal(shape), dtype=dtype)
    return x


def ddim_timesteps(num_steps: int, num_inference_steps: int) -> list[int]:
    if not 1 <= num_inference_steps <= num_steps:
        raise ValueError(f"num_inference_steps must be in [1, {num_steps}], got {num_inference_steps}")
    steps = sorted({round(i * num_steps / num_inference_steps) for i in range(1, num_inference_steps + 1)})
    return steps


@torch.no_grad()
def ddim_sample(
    model,
    cond: torch.Tensor,
    schedule: NoiseSchedule,
    num_inference_steps: int = 50,
    eta: float = 0.0,
    x_T=None,
    rng: np.random.Generator | None = None,
    seed: int = 0,
    dtype=None,
    clip_x0: float | None = None,
):
    """DDIM over an evenly spaced step subsequence; ``eta=0`` is deterministic given ``x_T``.

    With ``clip_x0`` the intermediate estimate of the clean sample is clamped
    to ``[-clip_x0, clip_x0]`` and the noise estimate is recomputed from it.
    """
    if eta < 0:
        raise ValueError("eta must be >= 0")
    steps = ddim_timesteps(schedule.num_steps, num_inference_steps)
    dtype = dtype or (model.dtype if isinstance(model, AcousticModel) else torch.float64)
    rng = rng if rng is not None else np.random.default_rng(seed)
    shape = (cond.shape[0], N_MELS, cond.shape[2])
    eps_fn = _eps_fn(model, cond)
    x = _initial_noise(shape, dtype, x_T, rng)
    for i in range(len(steps) - 1, -1, -1):
        t = steps[i]
        t_next = steps[i - 1] if i > 0 else 0
        ab, ab_next = schedule.alpha_bar(t), schedule.alpha_bar(t_next)
        eps_hat = eps_fn(x, t)
        x0_hat = (x - math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(ab)
        if clip_x0 is not None:
            x0_hat = x0_hat.clamp(-clip_x0, clip_x0)
            eps_hat = (x - math.sqrt(ab) * x0_hat) / math.sqrt(1.0 - ab)
        sigma = eta * math.sqrt((1.0 - ab_next) / (1.0 - ab)) * math.sqrt(max(0.0, 1.0 - ab / ab_next))
        x = math.sqrt(ab_next) * x0_hat + math.sqrt(max(0.0, 1.0 - ab_next - sigma**2)) * eps_hat
        if sigma > 0:
            x = x + sigma * torch.as_tensor(rng.standard_normal(shape), dtype=dtype)
    return x
