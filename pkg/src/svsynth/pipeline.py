"""End-to-end assembly: pitch adjustment, mixed sampling, training and inference.

Three model variants share one network:

* ``svs``   score -> generated performance -> lyric content
* ``svc-b`` source singing -> extracted performance -> lyric content
* ``svc-c`` source singing -> extracted performance -> local audio content

``svs`` and ``svc-b`` are the same trained model (lyric content); ``svc-c``
trains on local content and on singing data only.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np
import torch

from .checkpoint import Checkpoint, CheckpointError, MelStats, ModelConfig, save_checkpoint
from .corpus import CorpusItem, Domain
from .diffusion import AcousticModel, CondInputs, ddim_sample, diffusion_loss, init_model, make_schedule
from .dsp import LOG_FLOOR_VALUE, AudioBuffer, griffin_lim, harmonic_template, mel_spectrogram
from .embeddings import content_encode_local, lyric_frames, timbre_embed
from .features import DomainMode, F0Curve, NoVoicedReference, extract_amplitude, extract_f0, f0_statistics
from .performance import generate_amplitude, generate_f0_curve, generate_timing
from .score import AlignedLyrics, MusicScore, PitchRangeError, StyleToken, align_lyrics_to_spans, transpose

log = logging.getLogger(__name__)

F0_REF_HZ = 220.0
AMP_FLOOR = 1e-3


class TrainingDiverged(RuntimeError):
    pass


class Mode(enum.Enum):
    TRAIN_GT = "train_gt"
    INFER_SVS = "infer_svs"
    INFER_SVC_B = "infer_svc_b"
    INFER_SVC_C = "infer_svc_c"


@dataclass
class TrainConfig:
    iterations: int = 20000
    batch_size: int = 8
    learning_rate: float = 2e-4
    lr_schedule: str = "constant"  # or "cosine": decay to zero over ``iterations``
    mix: bool = True
    seed: int = 0
    segment_frames: int = 96
    log_every: int = 100
    checkpoint_every: int = 0
    gradient_check: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.segment_frames < 1:
            raise ValueError("segment_frames must be >= 1")
        if self.model.variant == "svc-c" and self.mix:
            raise ValueError("svc-c trains on singing only; mixed training is not allowed")

    def to_json(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_json()
        return d

    @classmethod
    def from_json(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        if "model" in data:
            data["model"] = ModelConfig.from_json({**ModelConfig().to_json(), **data["model"]})
        return cls(**data)


# ---------------------------------------------------------------- pitch adjustment


def octave_shift(source_median_hz: float, ref_median_hz: float, search: int = 10) -> int:
    """Integer ``k`` minimizing ``|log2(source * 2**k / ref)|``.

    Ties go to the smaller ``|k|``, then to the negative ``k``.
    """
    if source_median_hz <= 0 or ref_median_hz <= 0:
        raise ValueError("medians must be positive")
    x = math.log2(source_median_hz / ref_median_hz)
    return min(range(-search, search + 1), key=lambda k: (round(abs(x + k), 12), abs(k), k > 0))


def pitch_adjust(score: MusicScore, ref_f0: F0Curve) -> tuple[MusicScore, int]:
    """Transpose ``score`` by whole octaves toward the reference's median F0."""
    m_ref = f0_statistics(ref_f0)["median_hz"]
    k = octave_shift(score.median_frequency_hz(), m_ref)
    try:
        return transpose(score, 12 * k), 12 * k
    except PitchRangeError as exc:
        raise PitchRangeError(
            f"pitch out of range after octave shift {12 * k:+d}; try a manual shift of {12 * (k + (1 if k < 0 else -1)):+d}"
        ) from exc


# ---------------------------------------------------------------- mixed sampling


def mixed_batch_sampler(
    singing: Sequence,
    speech: Sequence,
    batch_size: int,
    rng: np.random.Generator,
    mix: bool = True,
) -> Iterator[list[tuple[Domain, int]]]:
    """Endless stream of batches of ``(domain, index)`` draws.

    With ``mix`` each draw is singing with probability 1/2, then uniform
    within that domain; without it every draw is singing.
    """
    if len(singing) == 0:
        raise ValueError("singing corpus is empty")
    if mix and len(speech) == 0:
        raise ValueError("speech corpus is empty but mixed training is enabled")
    while True:
        batch = []
        for _ in range(batch_size):
            if not mix or rng.random() < 0.5:
                batch.append((Domain.SINGING, int(rng.integers(len(singing)))))
            else:
                batch.append((Domain.SPEECH, int(rng.integers(len(speech)))))
        yield batch


# ---------------------------------------------------------------- conditioning


def f0_channels(f0_hz: np.ndarray, voiced: np.ndarray) -> np.ndarray:
    """``T x 82``: log2(f0 / 220 Hz) on voiced frames (0 elsewhere), the voiced flag,
    and the 80-bin harmonic template of the F0."""
    voiced = np.asarray(voiced, dtype=bool)
    logf = np.zeros(len(voiced))
    logf[voiced] = np.log2(np.asarray(f0_hz)[voiced] / F0_REF_HZ)
    return np.concatenate([np.stack([logf, voiced.astype(np.float64)], axis=1), harmonic_template(f0_hz, voiced)], axis=1)


def amplitude_channel(amp: np.ndarray) -> np.ndarray:
    """``T x 1`` log amplitude relative to the utterance peak, mapped to [0, 1]."""
    amp = np.asarray(amp, dtype=np.float64)
    peak = amp.max() if amp.size and amp.max() > 0 else 1.0
    rel = np.maximum(amp / peak, AMP_FLOOR)
    return (np.log10(rel) / -math.log10(AMP_FLOOR) + 1.0)[:, None]


def fit_lyrics(lyrics: AlignedLyrics, num_frames: int, slack: int = 2) -> AlignedLyrics:
    """Stretch or trim the final phoneme by up to ``slack`` frames to cover ``num_frames``."""
    phs = list(lyrics.phonemes)
    end = phs[-1].end_frame
    if end == num_frames:
        return lyrics
    if abs(end - num_frames) > slack or phs[-1].start_frame >= num_frames:
        raise ValueError(f"lyrics cover {end} frames but audio has {num_frames}")
    last = phs[-1]
    phs[-1] = type(last)(last.symbol, last.note_index, last.start_frame, num_frames)
    return AlignedLyrics(tuple(phs))


def _lyric_cond(lyrics: AlignedLyrics, num_frames: int) -> dict:
    lf = lyric_frames(fit_lyrics(lyrics, num_frames), num_frames)
    return {"phoneme_ids": lf.ids, "positions": lf.positions}


@dataclass
class InferenceInputs:
    """What one inference call needs besides the checkpoint."""

    ref_audio: AudioBuffer
    style: StyleToken = field(default_factory=StyleToken)
    score: MusicScore | None = None
    lyrics: AlignedLyrics | None = None
    source_audio: AudioBuffer | None = None
    seed: int = 0
    pitch_adjust: bool = True
    profiles: dict | None = None


def build_conditioning(
    mode: Mode,
    item: CorpusItem | None = None,
    inputs: InferenceInputs | None = None,
) -> tuple[CondInputs, dict]:
    """Conditioning for one utterance plus a small report.

    ``TRAIN_GT`` reads everything from a corpus ``item``; the inference modes
    read an :class:`InferenceInputs`. The report carries the pitch shift and
    frame count.
    """
    if mode is Mode.TRAIN_GT:
        if item is None:
            raise ValueError("TRAIN_GT conditioning needs a corpus item")
        dmode = item.domain.mode
        f0 = extract_f0(item.audio, dmode)
        amp = extract_amplitude(item.audio, dmode)
        n = len(f0)
        cond = CondInputs(
            f0_channels(f0.values_hz, f0.voiced),
            amplitude_channel(amp.values),
            timbre_embed(item.audio).vector,
            item.style.index,
            **_lyric_cond(item.lyrics, n),
        )
        return cond, {"shift_semitones": 0, "frames": n}

    if inputs is None:
        raise ValueError(f"{mode.value} conditioning needs inference inputs")
    timbre = timbre_embed(inputs.ref_audio).vector
    style = inputs.style

    if mode is Mode.INFER_SVS:
        if inputs.score is None:
            raise ValueError("SVS needs a score")
        score, shift = inputs.score, 0
        if inputs.pitch_adjust:
            ref_f0 = extract_f0(inputs.ref_audio, DomainMode.SPEECH)
            score, shift = pitch_adjust(score, ref_f0)
        timing = generate_timing(score, style, inputs.seed)
        f0 = generate_f0_curve(score, timing, style, inputs.seed, profiles=inputs.profiles)
        amp = generate_amplitude(score, timing, style, inputs.seed, profiles=inputs.profiles)
        n = timing.total_frames
        lyrics = inputs.lyrics or align_lyrics_to_spans(score, list(timing.note_spans), n)
        cond = CondInputs(
            f0_channels(f0.values_hz, f0.voiced),
            amplitude_channel(amp.values),
            timbre,
            style.index,
            **_lyric_cond(lyrics, n),
        )
        return cond, {"shift_semitones": shift, "frames": n}

    if mode in (Mode.INFER_SVC_B, Mode.INFER_SVC_C):
        if inputs.source_audio is None:
            raise ValueError("conversion needs source audio")
        f0 = extract_f0(inputs.source_audio, DomainMode.SINGING)
        amp = extract_amplitude(inputs.source_audio, DomainMode.SINGING)
        n = len(f0)
        shift = 0
        if inputs.pitch_adjust:
            try:
                src_med = f0_statistics(f0)["median_hz"]
                ref_med = f0_statistics(extract_f0(inputs.ref_audio, DomainMode.SPEECH))["median_hz"]
            except NoVoicedReference:
                src_med = ref_med = None
            if src_med is not None:
                shift = 12 * octave_shift(src_med, ref_med)
                f0 = f0.scaled(2.0 ** (shift / 12))
        if mode is Mode.INFER_SVC_B:
            if inputs.lyrics is None:
                raise ValueError("SVC-b needs aligned lyrics")
            content = _lyric_cond(inputs.lyrics, n)
        else:
            content = {"content": content_encode_local(inputs.source_audio).frames}
        cond = CondInputs(f0_channels(f0.values_hz, f0.voiced), amplitude_channel(amp.values), timbre, style.index, **content)
        return cond, {"shift_semitones": shift, "frames": n}

    raise ValueError(f"unknown mode {mode!r}")


def train_conditioning(item: CorpusItem, variant: str) -> CondInputs:
    """Ground-truth conditioning with the content path matching ``variant``."""
    cond, _ = build_conditioning(Mode.TRAIN_GT, item)
    if variant == "svc-c":
        cond = CondInputs(cond.f0, cond.amplitude, cond.timbre, cond.style_index, content=content_encode_local(item.audio).frames)
    return cond


# ---------------------------------------------------------------- training


@dataclass
class PreparedItem:
    mel: np.ndarray  # T x 80 normalized
    cond: CondInputs
    domain: Domain


def mel_stats_for(items: Sequence[CorpusItem]) -> MelStats:
    hi = max(float(mel_spectrogram(it.audio).frames.max()) for it in items)
    return MelStats(LOG_FLOOR_VALUE, max(hi, LOG_FLOOR_VALUE + 1.0))


def prepare_items(items: Sequence[CorpusItem], variant: str, stats: MelStats) -> list[PreparedItem]:
    out = []
    for it in items:
        mel = stats.normalize(mel_spectrogram(it.audio).frames)
        out.append(PreparedItem(mel, train_conditioning(it, variant), it.domain))
    return out


def model_from_checkpoint(ckpt: Checkpoint, dtype: torch.dtype = torch.float32) -> AcousticModel:
    cfg = ckpt.config
    model = init_model(0, dtype, channels=cfg.channels, dilations=cfg.dilations)
    model.load_state_dict({k: v.to(dtype) for k, v in ckpt.state.items()})
    model.eval()
    return model


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    losses: list[float]


def _crop_batch(draws, pools, segment: int, rng: np.random.Generator):
    chosen = [pools[d][i] for d, i in draws]
    length = min(segment, min(p.mel.shape[0] for p in chosen))
    batch = []
    for p in chosen:
        start = int(rng.integers(p.mel.shape[0] - length + 1))
        batch.append((p.mel[start : start + length], p.cond.crop(start, start + length)))
    return batch


def train(
    config: TrainConfig,
    items: Sequence[CorpusItem],
    out_dir: str | Path | None = None,
    log_fn: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Adam on epsilon-MSE over randomly cropped segments.

    Fully reproducible given ``config.seed``: parameter init, draws, crops,
    diffusion steps and noise all come from seeded generators.
    """
    variant = config.model.variant
    if variant == "svc-c" and config.mix:
        raise ValueError("svc-c trains on singing only; mixed training is not allowed")
    singing_items = [it for it in items if it.domain is Domain.SINGING]
    speech_items = [it for it in items if it.domain is Domain.SPEECH] if config.mix else []
    if not singing_items:
        raise ValueError("training needs at least one singing item")

    stats = mel_stats_for(singing_items + speech_items)
    pools = {
        Domain.SINGING: prepare_items(singing_items, variant, stats),
        Domain.SPEECH: prepare_items(speech_items, variant, stats),
    }
    schedule = make_schedule(config.model.num_steps, config.model.beta_start, config.model.beta_end)
    model = init_model(config.seed, torch.float32, channels=config.model.channels, dilations=config.model.dilations)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate, betas=(0.9, 0.999), eps=1e-8)
    rng = np.random.default_rng(config.seed)
    sampler = mixed_batch_sampler(pools[Domain.SINGING], pools[Domain.SPEECH], config.batch_size, rng, config.mix)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    losses: list[float] = []
    window: list[float] = []
    t0 = time.perf_counter()
    model.train()
    for step in range(1, config.iterations + 1):
        lr = _learning_rate(config, step)
        for group in opt.param_groups:
            group["lr"] = lr
        batch = _crop_batch(next(sampler), pools, config.segment_frames, rng)
        x0 = torch.stack([torch.as_tensor(m.T, dtype=torch.float32) for m, _ in batch])
        t = rng.integers(1, schedule.num_steps + 1, size=len(batch))
        eps = torch.as_tensor(rng.standard_normal(x0.shape), dtype=torch.float32)
        opt.zero_grad(set_to_none=True)
        cond = model.condition([c for _, c in batch])
        loss = diffusion_loss(model, x0, cond, torch.as_tensor(t), eps, schedule)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingDiverged(f"loss became non-finite at step {step}")
        loss.backward()
        opt.step()
        losses.append(value)
        window.append(value)
        if config.log_every and step % config.log_every == 0:
            rec = {
                "step": step,
                "loss": float(np.mean(window)),
                "lr": lr,
                "wall_ms": int((time.perf_counter() - t0) * 1000),
            }
            window = []
            log.info(json.dumps(rec))
            if log_fn is not None:
                log_fn(rec)
        if out is not None and config.checkpoint_every and step % config.checkpoint_every == 0:
            save_checkpoint(_snapshot(model, opt, config, stats, step, rng), out / f"step_{step:07d}.ckpt")

    ckpt = _snapshot(model, opt, config, stats, config.iterations, rng)
    if out is not None:
        save_checkpoint(ckpt, out / "final.ckpt")
    return TrainResult(ckpt, losses)


def _learning_rate(config: TrainConfig, step: int) -> float:
    if config.lr_schedule == "cosine":
        return config.learning_rate * 0.5 * (1.0 + math.cos(math.pi * (step - 1) / max(config.iterations, 1)))
    return config.learning_rate


def _snapshot(model, opt, config: TrainConfig, stats: MelStats, step: int, rng) -> Checkpoint:
    state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    names = {id(p): n for n, p in model.named_parameters()}
    optim = {}
    for p, st in opt.state.items():
        name = names[id(p)]
        optim[f"{name}.exp_avg"] = st["exp_avg"].detach().clone()
        optim[f"{name}.exp_avg_sq"] = st["exp_avg_sq"].detach().clone()
    return Checkpoint(config.model, state, stats, step, rng.bit_generator.state, optim)


# ---------------------------------------------------------------- inference


def _check_variant(ckpt: Checkpoint, allowed: tuple[str, ...], what: str) -> None:
    if ckpt.config.variant not in allowed:
        raise CheckpointError(f"{what} needs a {' or '.join(allowed)} checkpoint, got {ckpt.config.variant}")


def generate_mel(cond: CondInputs, ckpt: Checkpoint, steps: int = 50, seed: int = 0, eta: float = 0.0) -> np.ndarray:
    """DDIM-sample a log-mel (``T x 80``, natural-log power) under ``cond``."""
    model = model_from_checkpoint(ckpt)
    schedule = make_schedule(ckpt.config.num_steps, ckpt.config.beta_start, ckpt.config.beta_end)
    with torch.no_grad():
        c = model.condition([cond])
    rng = np.random.default_rng(seed)
    x = ddim_sample(model, c, schedule, steps, eta=eta, rng=rng, clip_x0=1.0)
    norm = np.clip(x[0].double().numpy().T, -1.0, 1.0)
    return ckpt.mel_stats.denormalize(norm)


def _render(cond: CondInputs, report: dict, ckpt: Checkpoint, steps: int, seed: int) -> tuple[AudioBuffer, dict]:
    mel = generate_mel(cond, ckpt, steps, seed)
    audio = griffin_lim(mel, seed=seed, config=ckpt.config.spectral)
    report = {**report, "S": steps, "seed": seed, "config_hash": ckpt.config_hash}
    return audio, report


def synthesize_svs(
    score: MusicScore,
    style: StyleToken,
    ref_audio: AudioBuffer,
    ckpt: Checkpoint,
    steps: int = 50,
    seed: int = 0,
    pitch_adjust_enabled: bool = True,
    lyrics: AlignedLyrics | None = None,
    profiles: dict | None = None,
) -> tuple[AudioBuffer, dict]:
    """Score + lyrics + style + speech reference -> singing. Returns audio and a sidecar report."""
    _check_variant(ckpt, ("svs", "svc-b"), "SVS")
    inputs = InferenceInputs(ref_audio, style, score, lyrics, None, seed, pitch_adjust_enabled, profiles)
    cond, report = build_conditioning(Mode.INFER_SVS, inputs=inputs)
    return _render(cond, report, ckpt, steps, seed)


def convert_svc_b(
    source_audio: AudioBuffer,
    lyrics: AlignedLyrics,
    style: StyleToken,
    ref_audio: AudioBuffer,
    ckpt: Checkpoint,
    steps: int = 50,
    seed: int = 0,
    octave_adjust: bool = False,
) -> tuple[AudioBuffer, dict]:
    """Re-voice ``source_audio`` with the reference timbre using its aligned lyrics."""
    _check_variant(ckpt, ("svs", "svc-b"), "SVC-b")
    inputs = InferenceInputs(ref_audio, style, None, lyrics, source_audio, seed, octave_adjust)
    cond, report = build_conditioning(Mode.INFER_SVC_B, inputs=inputs)
    return _render(cond, report, ckpt, steps, seed)


def convert_svc_c(
    source_audio: AudioBuffer,
    ref_audio: AudioBuffer,
    ckpt: Checkpoint,
    style: StyleToken | None = None,
    steps: int = 50,
    seed: int = 0,
    octave_adjust: bool = False,
) -> tuple[AudioBuffer, dict]:
    """Re-voice ``source_audio`` without lyrics; ``style`` defaults to pop/normal."""
    _check_variant(ckpt, ("svc-c",), "SVC-c")
    inputs = InferenceInputs(ref_audio, style or StyleToken(), None, None, source_audio, seed, octave_adjust)
    cond, report = build_conditioning(Mode.INFER_SVC_C, inputs=inputs)
    return _render(cond, report, ckpt, steps, seed)


# ---------------------------------------------------------------- gradient check


def gradient_check(seed: int = 0, frames: int = 6, batch: int = 2, h: float = 1e-6, variant: str = "svs") -> dict[str, float]:
    """Relative error between autograd and central differences per parameter tensor.

    Runs in float64 on random small inputs. Each tensor is probed along a
    seeded random direction; parameters are re-drawn around the default
    init so that zero-initialized layers are exercised too.
    """
    rng = np.random.default_rng([seed, 0x6C])
    model = init_model(seed, torch.float64)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(torch.as_tensor(rng.standard_normal(p.shape) * 0.05))
    schedule = make_schedule()
    items = []
    for _ in range(batch):
        content = {"content": rng.standard_normal((frames, 64))} if variant == "svc-c" else {
            "phoneme_ids": rng.integers(0, 64, frames),
            "positions": rng.random(frames),
        }
        voiced = rng.random(frames) < 0.7
        items.append(
            CondInputs(
                f0_channels(np.where(voiced, rng.uniform(100, 600, frames), 0.0), voiced),
                amplitude_channel(rng.random(frames)),
                rng.standard_normal(192) / math.sqrt(192),
                int(rng.integers(4)),
                **content,
            )
        )
    x0 = torch.as_tensor(rng.uniform(-1, 1, (batch, 80, frames)))
    t = torch.as_tensor(rng.integers(1, schedule.num_steps + 1, size=batch))
    eps = torch.as_tensor(rng.standard_normal((batch, 80, frames)))

    def loss_fn():
        return diffusion_loss(model, x0, model.condition(items), t, eps, schedule)

    model.zero_grad(set_to_none=True)
    loss_fn().backward()
    errors = {}
    with torch.no_grad():
        for name, p in model.named_parameters():
            grad = p.grad if p.grad is not None else torch.zeros_like(p)
            direction = torch.as_tensor(rng.standard_normal(p.shape))
            if name.endswith("embedding.weight"):
                # only rows touched by the batch receive gradient; probe those
                mask = torch.zeros(p.shape[0], 1, dtype=torch.float64)
                for c in items:
                    if c.phoneme_ids is not None:
                        mask[torch.as_tensor(c.phoneme_ids)] = 1.0
                direction = direction * mask
            elif name.endswith("table.weight"):
                mask = torch.zeros(p.shape[0], 1, dtype=torch.float64)
                for c in items:
                    mask[c.style_index] = 1.0
                direction = direction * mask
            analytic = float((grad * direction).sum())
            p.add_(h * direction)
            up = float(loss_fn())
            p.sub_(2 * h * direction)
            down = float(loss_fn())
            p.add_(h * direction)
            numeric = (up - down) / (2 * h)
            scale = max(abs(analytic), abs(numeric), 1e-12)
            errors[name] = abs(analytic - numeric) / scale
    return errors
