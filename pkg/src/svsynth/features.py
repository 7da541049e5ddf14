"""Performance-attribute extraction: YIN-style F0 tracking and RMS amplitude envelopes."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import median_filter

from .dsp import DEFAULT_CONFIG, AudioBuffer, SpectralConfig, frame_signal, num_frames, _window

YIN_THRESHOLD = 0.15


class DomainMode(enum.Enum):
    SINGING = "singing"
    SPEECH = "speech"

    @property
    def f0_band_hz(self) -> tuple[float, float]:
        return (60.0, 1400.0) if self is DomainMode.SINGING else (50.0, 500.0)

    @property
    def median_smooth_frames(self) -> int:
        return 5 if self is DomainMode.SINGING else 9

    @classmethod
    def parse(cls, value) -> "DomainMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown domain mode {value!r}") from None


class NoVoicedReference(ValueError):
    """Raised when statistics are requested from a fully unvoiced F0 curve."""


@dataclass
class F0Curve:
    values_hz: np.ndarray
    voiced: np.ndarray
    hop: int = DEFAULT_CONFIG.hop

    def __post_init__(self):
        self.values_hz = np.asarray(self.values_hz, dtype=np.float64)
        self.voiced = np.asarray(self.voiced, dtype=bool)
        if self.values_hz.shape != self.voiced.shape:
            raise ValueError("values and voiced mask differ in length")
        if np.any((self.values_hz > 0) != self.voiced):
            raise ValueError("values_hz must be > 0 exactly where voiced")

    def __len__(self) -> int:
        return len(self.values_hz)

    @classmethod
    def from_values(cls, values_hz, hop: int = DEFAULT_CONFIG.hop) -> "F0Curve":
        values = np.maximum(np.asarray(values_hz, dtype=np.float64), 0.0)
        return cls(values, values > 0, hop)

    def scaled(self, factor: float) -> "F0Curve":
        return F0Curve(self.values_hz * factor, self.voiced.copy(), self.hop)


@dataclass
class AmplitudeEnvelope:
    values: np.ndarray
    hop: int = DEFAULT_CONFIG.hop

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("amplitude envelope must be finite and nonnegative")

    def __len__(self) -> int:
        return len(self.values)


def _samples(audio) -> np.ndarray:
    return audio.samples if isinstance(audio, AudioBuffer) else np.asarray(audio, dtype=np.float64)


def _check_length(samples: np.ndarray, config: SpectralConfig) -> None:
    if samples.size < config.win:
        raise ValueError(f"audio too short: {samples.size} samples < window {config.win}")


def _difference_function(frames: np.ndarray, window: int, max_lag: int) -> np.ndarray:
    """YIN squared-difference d(tau) for tau in [0, max_lag], all frames at once."""
    n = frames.shape[1]
    size = 1 << int(np.ceil(np.log2(n + window)))
    head = frames[:, :window]
    corr = np.fft.irfft(
        np.fft.rfft(frames, size) * np.conj(np.fft.rfft(head, size)), size
    )[:, : max_lag + 1]
    sq = np.concatenate([np.zeros((frames.shape[0], 1)), np.cumsum(frames**2, axis=1)], axis=1)
    energy_head = sq[:, window][:, None]
    lags = np.arange(max_lag + 1)
    energy_lag = sq[:, lags + window] - sq[:, lags]
    return np.maximum(energy_head + energy_lag - 2.0 * corr, 0.0)


def _cmnd(diff: np.ndarray) -> np.ndarray:
    cums = np.cumsum(diff[:, 1:], axis=1)
    lags = np.arange(1, diff.shape[1])
    out = np.ones_like(diff)
    with np.errstate(invalid="ignore", divide="ignore"):
        out[:, 1:] = np.where(cums > 0, diff[:, 1:] * lags / cums, 1.0)
    return out


def _smooth_voiced_runs(values: np.ndarray, voiced: np.ndarray, size: int) -> np.ndarray:
    out = values.copy()
    idx = np.flatnonzero(voiced)
    if idx.size == 0:
        return out
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate([[idx[0]], idx[breaks + 1]])
    ends = np.concatenate([idx[breaks], [idx[-1]]]) + 1
    for s, e in zip(starts, ends):
        out[s:e] = median_filter(values[s:e], size=size, mode="nearest")
    return out


def extract_f0(audio, mode=DomainMode.SINGING, config: SpectralConfig = DEFAULT_CONFIG) -> F0Curve:
    """Frame-wise F0 with a YIN-style estimator.

    Lags are searched inside the mode's band; the first cumulative-mean-normalized
    dip below 0.15 is refined to its local minimum and parabolically interpolated.
    Voiced runs are median filtered with the mode's window.
    """
    mode = DomainMode.parse(mode)
    x = _samples(audio)
    _check_length(x, config)
    sr = config.sample_rate_hz
    fmin, fmax = mode.f0_band_hz
    tau_min = max(2, int(np.floor(sr / fmax)))
    tau_max = int(np.ceil(sr / fmin))
    window = config.fft - tau_max - 1
    frames = frame_signal(x, config)
    diff = _difference_function(frames, window, tau_max + 1)
    cmnd = _cmnd(diff)
    energy = np.sum(frames[:, :window] ** 2, axis=1)
    silent = energy <= 1e-10 * window

    n = frames.shape[0]
    values = np.zeros(n)
    band = cmnd[:, tau_min : tau_max + 1]
    below = band < YIN_THRESHOLD
    has = below.any(axis=1) & ~silent
    for i in np.flatnonzero(has):
        tau = tau_min + int(np.argmax(below[i]))
        while tau + 1 <= tau_max and cmnd[i, tau + 1] < cmnd[i, tau]:
            tau += 1
        # parabolic refinement on the raw difference function
        d_prev, d_mid, d_next = diff[i, tau - 1], diff[i, tau], diff[i, tau + 1]
        denom = d_prev - 2.0 * d_mid + d_next
        shift = 0.5 * (d_prev - d_next) / denom if denom > 0 else 0.0
        period = tau + float(np.clip(shift, -1.0, 1.0))
        f0 = sr / period
        if fmin <= f0 <= fmax:
            values[i] = f0
    voiced = values > 0
    values = _smooth_voiced_runs(values, voiced, mode.median_smooth_frames)
    values = np.where(voiced, np.clip(values, fmin, fmax), 0.0)
    return F0Curve(values, voiced, config.hop)


def extract_amplitude(audio, mode=DomainMode.SINGING, config: SpectralConfig = DEFAULT_CONFIG) -> AmplitudeEnvelope:
    """Per-frame RMS of Hann-weighted frames, framed exactly like :func:`dsp.stft`."""
    DomainMode.parse(mode)
    x = _samples(audio)
    _check_length(x, config)
    w = _window(config)
    frames = frame_signal(x, config)
    rms = np.sqrt(np.mean((frames * w) ** 2, axis=1))
    return AmplitudeEnvelope(rms, config.hop)


def f0_statistics(curve: F0Curve) -> dict:
    voiced = curve.values_hz[curve.voiced]
    if voiced.size == 0:
        raise NoVoicedReference("no voiced reference")
    return {
        "median_hz": float(np.median(voiced)),
        "p05_hz": float(np.percentile(voiced, 5)),
        "p95_hz": float(np.percentile(voiced, 95)),
    }


def dump_features_csv(path: str | Path, f0: F0Curve, amp: AmplitudeEnvelope) -> None:
    if len(f0) != len(amp):
        raise ValueError("F0 and amplitude lengths differ")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_index", "f0_hz", "voiced", "rms"])
        for i in range(len(f0)):
            writer.writerow([i, f"{f0.values_hz[i]:.4f}", int(f0.voiced[i]), f"{amp.values[i]:.8f}"])


__all__ = [
    "AmplitudeEnvelope",
    "DomainMode",
    "F0Curve",
    "NoVoicedReference",
    "dump_features_csv",
    "extract_amplitude",
    "extract_f0",
    "f0_statistics",
    "num_frames",
]
