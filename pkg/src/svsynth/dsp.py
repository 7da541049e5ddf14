"""Spectral DSP: framing, STFT, log-mel analysis, Griffin-Lim inversion and WAV I/O.

All framing is center-padded (reflect, fft/2 on each side) so that every
frame-aligned feature in the package has ``num_frames(len)`` frames.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.optimize import nnls

SAMPLE_RATE = 22050
LOG_FLOOR = 1e-5
LOG_FLOOR_VALUE = float(np.log(LOG_FLOOR))


class AudioError(ValueError):
    """Invalid audio buffer or unsupported WAV file."""


@dataclass(frozen=True)
class SpectralConfig:
    hop: int = 256
    win: int = 1024
    fft: int = 1024
    n_mels: int = 80
    fmin_hz: float = 0.0
    fmax_hz: float = 11025.0
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        if not (0 < self.hop <= self.win <= self.fft):
            raise ValueError(f"need 0 < hop <= win <= fft, got {self.hop}, {self.win}, {self.fft}")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if not (0 <= self.fmin_hz < self.fmax_hz <= self.sample_rate_hz / 2):
            raise ValueError("need 0 <= fmin < fmax <= sample_rate / 2")

    @property
    def n_bins(self) -> int:
        return self.fft // 2 + 1


DEFAULT_CONFIG = SpectralConfig()


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioError("audio must be mono (1-D)")
        if self.sample_rate_hz <= 0:
            raise AudioError("sample rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise AudioError("audio contains non-finite samples")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def scaled(self, gain: float) -> "AudioBuffer":
        return AudioBuffer(self.samples * gain, self.sample_rate_hz)


@dataclass
class ComplexSpectrogram:
    frames: np.ndarray  # T x (fft/2 + 1), complex
    config: SpectralConfig = field(default=DEFAULT_CONFIG)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class MelSpectrogram:
    frames: np.ndarray  # T x n_mels, natural-log power
    config: SpectralConfig = field(default=DEFAULT_CONFIG)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def _as_samples(audio) -> np.ndarray:
    if isinstance(audio, AudioBuffer):
        return audio.samples
    return np.asarray(audio, dtype=np.float64)


def num_frames(len_samples: int, config: SpectralConfig = DEFAULT_CONFIG) -> int:
    if len_samples < 0:
        raise ValueError("len_samples must be >= 0")
    return len_samples // config.hop + 1


@lru_cache(maxsize=16)
def _window(config: SpectralConfig) -> np.ndarray:
    # periodic Hann, zero-padded (centered) to fft length
    n = np.arange(config.win)
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / config.win)
    lpad = (config.fft - config.win) // 2
    out = np.zeros(config.fft)
    out[lpad : lpad + config.win] = w
    out.setflags(write=False)
    return out


def frame_signal(samples: np.ndarray, config: SpectralConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Center-padded (reflect) frames of length ``fft``; shape T x fft."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size < 1:
        raise AudioError("audio must contain at least one sample")
    pad = config.fft // 2
    if samples.size > pad:
        padded = np.pad(samples, pad, mode="reflect")
    else:
        # reflect needs len > pad; fall back to zero padding for very short input
        padded = np.pad(samples, pad, mode="constant")
    n = num_frames(samples.size, config)
    idx = np.arange(config.fft)[None, :] + config.hop * np.arange(n)[:, None]
    return padded[idx]


def stft(audio, config: SpectralConfig = DEFAULT_CONFIG) -> ComplexSpectrogram:
    frames = frame_signal(_as_samples(audio), config)
    spec = np.fft.rfft(frames * _window(config), axis=1)
    return ComplexSpectrogram(spec, config)


def istft(spec: np.ndarray, config: SpectralConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`; returns ``(T-1)*hop`` samples."""
    n = spec.shape[0]
    w = _window(config)
    frames = np.fft.irfft(spec, n=config.fft, axis=1) * w
    total = config.fft + config.hop * (n - 1)
    out = np.zeros(total)
    norm = np.zeros(total)
    for i in range(n):
        s = i * config.hop
        out[s : s + config.fft] += frames[i]
        norm[s : s + config.fft] += w * w
    out /= np.maximum(norm, 1e-8)
    pad = config.fft // 2
    return out[pad : pad + config.hop * (n - 1)]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=16)
def mel_filterbank(config: SpectralConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Triangular HTK-mel filterbank, shape n_mels x (fft/2 + 1), unit peak."""
    edges_hz = mel_to_hz(
        np.linspace(hz_to_mel(config.fmin_hz), hz_to_mel(config.fmax_hz), config.n_mels + 2)
    )
    freqs = np.arange(config.n_bins) * config.sample_rate_hz / config.fft
    lo, center, hi = edges_hz[:-2, None], edges_hz[1:-1, None], edges_hz[2:, None]
    rising = (freqs[None, :] - lo) / (center - lo)
    falling = (hi - freqs[None, :]) / (hi - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.sum(axis=1) <= 0)
    if empty.size:
        raise ValueError(
            f"n_mels={config.n_mels} too large for fft={config.fft}: "
            f"filters {empty.tolist()} have no nonzero weight"
        )
    fb.setflags(write=False)
    return fb


def power_to_log_mel(power: np.ndarray, config: SpectralConfig = DEFAULT_CONFIG) -> np.ndarray:
    return np.log(np.maximum(power @ mel_filterbank(config).T, LOG_FLOOR))


def mel_spectrogram(audio, config: SpectralConfig = DEFAULT_CONFIG) -> MelSpectrogram:
    spec = stft(audio, config).frames
    power = spec.real**2 + spec.imag**2
    return MelSpectrogram(power_to_log_mel(power, config), config)


def _hann_lobe(offset_bins: np.ndarray) -> np.ndarray:
    """Normalized Hann-window transform magnitude at a fractional bin offset (main lobe only)."""
    d = np.abs(offset_bins)
    out = np.zeros_like(d)
    inner = d < 2.0
    di = d[inner]
    near_one = np.isclose(di, 1.0)
    val = np.empty_like(di)
    val[~near_one] = np.sinc(di[~near_one]) / (1.0 - di[~near_one] ** 2)
    val[near_one] = 0.5
    out[inner] = val
    return out


def harmonic_template(f0_hz: np.ndarray, voiced: np.ndarray, config: SpectralConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Log-mel of a flat harmonic comb at each frame's F0, as seen through the analysis window.

    Returns ``T x n_mels`` values in ``[0, ~1]`` (0 at the log floor and on
    unvoiced frames). Only the two harmonics nearest each FFT bin contribute.
    """
    f0 = np.asarray(f0_hz, dtype=np.float64)
    voiced = np.asarray(voiced, dtype=bool) & (f0 > 0)
    out = np.zeros((len(f0), config.n_mels))
    if not voiced.any():
        return out
    bin_hz = config.sample_rate_hz / config.fft
    freqs = np.arange(config.n_bins) * bin_hz
    fv = f0[voiced][:, None]
    h = freqs[None, :] / fv
    lower = np.floor(h)
    d_lo = (h - lower) * fv / bin_hz
    d_hi = (lower + 1.0 - h) * fv / bin_hz
    nyq = config.sample_rate_hz / 2.0
    p_lo = np.where((lower >= 1) & (lower * fv < nyq), _hann_lobe(d_lo) ** 2, 0.0)
    p_hi = np.where((lower + 1) * fv < nyq, _hann_lobe(d_hi) ** 2, 0.0)
    mel = (p_lo + p_hi) @ mel_filterbank(config).T
    out[voiced] = np.log(np.maximum(mel, LOG_FLOOR)) / -LOG_FLOOR_VALUE + 1.0
    return out


def mel_to_linear_power(mel: np.ndarray, config: SpectralConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Nonnegative least-squares inversion of the filterbank, frame by frame."""
    fb = mel_filterbank(config)
    target = np.exp(mel)
    target[mel <= LOG_FLOOR_VALUE + 1e-6] = 0.0
    out = np.zeros((mel.shape[0], config.n_bins))
    # scale keeps nnls well conditioned across frames with very different energy
    for i, row in enumerate(target):
        peak = row.max()
        if peak <= 0.0:
            continue
        sol, _ = nnls(fb, row / peak, maxiter=50 * config.n_bins)
        out[i] = sol * peak
    return out


def griffin_lim(
    mel,
    iters: int = 60,
    seed: int = 0,
    config: SpectralConfig | None = None,
) -> AudioBuffer:
    """Invert a log-mel spectrogram to audio with Griffin-Lim phase recovery.

    The linear magnitude comes from a nonnegative least-squares fit against
    the mel filterbank; the initial phase is drawn from ``seed``.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if isinstance(mel, MelSpectrogram):
        config = config or mel.config
        mel = mel.frames
    config = config or DEFAULT_CONFIG
    mel = np.asarray(mel, dtype=np.float64)
    mag = np.sqrt(mel_to_linear_power(mel, config))
    rng = np.random.default_rng(seed)
    angles = np.exp(2j * np.pi * rng.random(mag.shape))
    y = istft(mag * angles, config)
    for _ in range(iters):
        if y.size == 0:
            break
        rebuilt = stft(y, config).frames
        angles = np.exp(1j * np.angle(rebuilt))
        y = istft(mag * angles, config)
    return AudioBuffer(np.clip(y, -1.0, 1.0), config.sample_rate_hz)


def read_wav(path: str | Path) -> AudioBuffer:
    """Read a 16-bit PCM mono 22050 Hz WAV file; anything else is rejected."""
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1:
            raise AudioError(f"{path}: expected mono, got {wf.getnchannels()} channels")
        if wf.getsampwidth() != 2:
            raise AudioError(f"{path}: expected 16-bit PCM, got {8 * wf.getsampwidth()}-bit")
        if wf.getframerate() != SAMPLE_RATE:
            raise AudioError(f"{path}: expected {SAMPLE_RATE} Hz, got {wf.getframerate()} Hz")
        raw = wf.readframes(wf.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    return AudioBuffer(pcm / 32768.0, SAMPLE_RATE)


def write_wav(path: str | Path, audio: AudioBuffer) -> None:
    if audio.sample_rate_hz != SAMPLE_RATE:
        raise AudioError(f"refusing to write {audio.sample_rate_hz} Hz audio; resample first")
    pcm = np.round(np.clip(audio.samples, -1.0, 1.0) * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(SAMPLE_RATE)
        wf.writeframes(pcm.tobytes())
