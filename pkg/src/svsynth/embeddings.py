"""Conditioning encoders: timbre, lyric content, local (audio) content and style.

``timbre_embed`` and ``content_encode_local`` are fixed signal-statistics
encoders (no training). The lyric content encoder and the style table are
torch modules trained jointly with the diffusion loss.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy.fft import dct
from torch import nn

from .dsp import DEFAULT_CONFIG, AudioBuffer, SpectralConfig, mel_spectrogram
from .features import DomainMode, extract_amplitude, extract_f0
from .score import PHONEME_INDEX, PHONEMES, ALL_STYLES, AlignedLyrics, StyleToken

TIMBRE_DIM = 192
CONTENT_DIM = 64
STYLE_DIM = 8
N_CEPSTRA = 20
HIST_BINS = 32
HIST_RANGE_OCT = 1.0
LOCAL_GATE = 1e-3  # -60 dB re the loudest frame

# Log-mel values more than this far below the utterance's loudest bin are
# clamped before statistics, so low-level noise (breath, vocoder phase
# artifacts) does not dominate the spectral mean.
TIMBRE_RANGE_DB = 50.0

# Block weights applied before projection. Mel bins below ~1 kHz are dominated
# by the harmonics of whatever pitch is sung, so they carry little speaker
# identity; the spread and F0-histogram blocks mostly follow the performance.
LOW_BIN_CUTOFF = 25
LOW_BIN_WEIGHT = 0.1
STD_WEIGHT = 0.3
HIST_WEIGHT = 0.3
_BIN_WEIGHTS = np.where(np.arange(80) < LOW_BIN_CUTOFF, LOW_BIN_WEIGHT, 1.0)

_TIMBRE_PROJECTION_SEED = 0x7151BE
_CONTENT_PROJECTION_SEED = 0xC0473


class ReferenceTooShort(ValueError):
    pass


class ContentSource(enum.Enum):
    LYRICS = "lyrics"
    LOCAL_AUDIO = "local_audio"


@dataclass
class TimbreEmbedding:
    vector: np.ndarray

    def cosine(self, other: "TimbreEmbedding") -> float:
        return float(np.clip(np.dot(self.vector, other.vector), -1.0, 1.0))


@dataclass
class ContentEmbeddingSequence:
    frames: np.ndarray  # T x 64
    source: ContentSource

    def __len__(self) -> int:
        return self.frames.shape[0]


def _orthogonal(seed: int, rows: int, cols: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((max(rows, cols), max(rows, cols))))
    q = q * np.sign(np.diag(r))
    return q[:rows, :cols]


_TIMBRE_PROJECTION = _orthogonal(_TIMBRE_PROJECTION_SEED, TIMBRE_DIM, 2 * 80 + HIST_BINS)
_CONTENT_PROJECTION = _orthogonal(_CONTENT_PROJECTION_SEED, CONTENT_DIM, N_CEPSTRA)


def timbre_features(audio, config: SpectralConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Unprojected 192-d statistics behind :func:`timbre_embed`.

    Per-bin means and standard deviations of the range-limited log-mel over
    active frames (RMS above 10% of the peak), each centered across bins so
    that overall gain drops out, followed by a histogram of voiced log-F0
    offsets. Blocks are scaled by the fixed weights above.
    """
    x = audio.samples if isinstance(audio, AudioBuffer) else np.asarray(audio, dtype=np.float64)
    if x.size < config.sample_rate_hz:
        raise ReferenceTooShort(f"reference too short: {x.size / config.sample_rate_hz:.2f} s < 1 s")
    mel = mel_spectrogram(x, config).frames
    mel = np.maximum(mel, mel.max() - TIMBRE_RANGE_DB * np.log(10.0) / 10.0)
    rms = extract_amplitude(x, DomainMode.SINGING, config).values
    active = rms > 0.1 * rms.max() if rms.max() > 0 else np.ones_like(rms, dtype=bool)
    sel = mel[active]
    mean = sel.mean(axis=0)
    std = sel.std(axis=0)
    f0 = extract_f0(x, DomainMode.SINGING, config)
    hist = np.zeros(HIST_BINS)
    if f0.voiced.any():
        logf = np.log2(f0.values_hz[f0.voiced])
        offsets = np.clip(logf - np.median(logf), -HIST_RANGE_OCT, HIST_RANGE_OCT)
        hist, _ = np.histogram(offsets, bins=HIST_BINS, range=(-HIST_RANGE_OCT, HIST_RANGE_OCT))
        hist = hist / hist.sum()
    return np.concatenate(
        [
            _BIN_WEIGHTS * (mean - mean.mean()),
            STD_WEIGHT * _BIN_WEIGHTS * (std - std.mean()),
            HIST_WEIGHT * (hist - hist.mean()),
        ]
    )


def timbre_embed(audio, config: SpectralConfig = DEFAULT_CONFIG) -> TimbreEmbedding:
    vec = _TIMBRE_PROJECTION @ timbre_features(audio, config)
    norm = np.linalg.norm(vec)
    if norm == 0:
        vec = np.zeros(TIMBRE_DIM)
        vec[0] = 1.0
        return TimbreEmbedding(vec)
    return TimbreEmbedding(vec / norm)


def content_encode_local(audio, config: SpectralConfig = DEFAULT_CONFIG) -> ContentEmbeddingSequence:
    """Timbre-reduced per-frame content features from audio alone.

    Log-mel -> DCT coefficients 1..20, normalized to zero mean and unit
    variance per coefficient over the utterance's active frames (RMS within
    60 dB of the loudest frame), then projected to 64 dims. Inactive frames
    get the all-zero code, so utterance-wide spectral offsets cannot leak
    into silence through the normalization.
    """
    x = audio.samples if isinstance(audio, AudioBuffer) else np.asarray(audio, dtype=np.float64)
    if x.size < config.win:
        raise ValueError(f"audio too short: {x.size} samples < window {config.win}")
    peak = np.max(np.abs(x))
    if peak > 0:
        x = x / peak
    mel = mel_spectrogram(x, config).frames
    ceps = dct(mel, type=2, norm="ortho", axis=1)[:, 1 : N_CEPSTRA + 1]
    rms = extract_amplitude(x, DomainMode.SINGING, config).values
    active = rms > LOCAL_GATE * rms.max() if rms.max() > 0 else np.zeros(len(rms), dtype=bool)
    out = np.zeros_like(ceps)
    if active.any():
        sel = ceps[active]
        out[active] = (sel - sel.mean(axis=0)) / np.sqrt(sel.var(axis=0) + 1e-3)
    return ContentEmbeddingSequence(out @ _CONTENT_PROJECTION.T, ContentSource.LOCAL_AUDIO)


@dataclass
class LyricFrames:
    """Per-frame phoneme ids and within-phoneme positions for the lyric encoder."""

    ids: np.ndarray
    positions: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def crop(self, start: int, stop: int) -> "LyricFrames":
        return LyricFrames(self.ids[start:stop], self.positions[start:stop])


def lyric_frames(lyrics: AlignedLyrics, num_frames: int) -> LyricFrames:
    ids = np.full(num_frames, -1, dtype=np.int64)
    pos = np.zeros(num_frames)
    for ph in lyrics.phonemes:
        s, e = max(ph.start_frame, 0), min(ph.end_frame, num_frames)
        if s >= e:
            continue
        ids[s:e] = PHONEME_INDEX[ph.symbol]
        length = ph.end_frame - ph.start_frame
        k = np.arange(s, e) - ph.start_frame
        pos[s:e] = k / (length - 1) if length > 1 else 0.0
    missing = np.flatnonzero(ids < 0)
    if missing.size:
        raise ValueError(f"frame {missing[0]} is not covered by any phoneme span")
    return LyricFrames(ids, pos)


class LyricContentEncoder(nn.Module):
    """Phoneme embedding + position -> two feedforward layers -> Leaky ReLU."""

    def __init__(self, n_symbols: int = len(PHONEMES), embed_dim: int = 32, out_dim: int = CONTENT_DIM, slope: float = 0.1):
        super().__init__()
        self.embedding = nn.Embedding(n_symbols, embed_dim)
        self.fc1 = nn.Linear(embed_dim + 1, out_dim)
        self.fc2 = nn.Linear(out_dim, out_dim)
        self.act = nn.LeakyReLU(slope)

    def forward(self, ids: torch.Tensor, positions: torch.Tensor) -> torch.Tensor:
        h = torch.cat([self.embedding(ids), positions.unsqueeze(-1).to(self.fc1.weight.dtype)], dim=-1)
        h = self.act(self.fc1(h))
        return self.act(self.fc2(h))


class StyleTable(nn.Module):
    def __init__(self, dim: int = STYLE_DIM):
        super().__init__()
        self.table = nn.Embedding(len(ALL_STYLES), dim)

    def forward(self, index: torch.Tensor) -> torch.Tensor:
        return self.table(index)


def content_encode_lyrics(lyrics: AlignedLyrics, num_frames: int, encoder: LyricContentEncoder) -> ContentEmbeddingSequence:
    """Run the lyric encoder over ``num_frames`` frames (no gradient tracking)."""
    lf = lyric_frames(lyrics, num_frames)
    dtype = encoder.fc1.weight.dtype
    with torch.no_grad():
        out = encoder(torch.from_numpy(lf.ids), torch.from_numpy(lf.positions).to(dtype))
    return ContentEmbeddingSequence(out.double().numpy(), ContentSource.LYRICS)


def style_embed(token: StyleToken, table: StyleTable) -> np.ndarray:
    with torch.no_grad():
        return table(torch.tensor([token.index])).double().numpy()[0]


_DUMP_MAGIC = b"EMB1"


def dump_embeddings(path: str | Path, vectors: np.ndarray) -> None:
    """Write ``count x dims`` float32 vectors: magic, u32 dims, u32 count, b'f32\\0', data (LE)."""
    arr = np.atleast_2d(np.asarray(vectors, dtype="<f4"))
    with open(path, "wb") as fh:
        fh.write(_DUMP_MAGIC + struct.pack("<II", arr.shape[1], arr.shape[0]) + b"f32\0")
        fh.write(arr.tobytes())


def load_embeddings(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != _DUMP_MAGIC or raw[12:16] != b"f32\0":
        raise ValueError(f"{path}: not an embedding dump")
    dims, count = struct.unpack("<II", raw[4:12])
    return np.frombuffer(raw[16:], dtype="<f4").reshape(count, dims).copy()
