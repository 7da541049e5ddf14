"""Objective evaluation proxies: mel distance, pitch error, voicing error, timbre similarity."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .dsp import DEFAULT_CONFIG, AudioBuffer, SpectralConfig, mel_spectrogram
from .embeddings import ReferenceTooShort, timbre_embed
from .features import DomainMode, extract_f0


@dataclass(frozen=True)
class MetricsReport:
    mel_l1: float
    f0_rmse_cents: float | None  # None when no frame is voiced in both
    f0_median_diff_cents: float | None  # over frames voiced in both
    vuv_error: float
    timbre_cos: float | None  # None when either input is shorter than 1 s
    frames: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def f0_median_cents(a_hz: np.ndarray, b_hz: np.ndarray) -> float:
    """Cents from the median of ``a_hz`` to the median of ``b_hz``."""
    return float(1200.0 * math.log2(np.median(b_hz) / np.median(a_hz)))


def joint_f0_median_cents(ref, hyp) -> float | None:
    """Median pitch offset of ``hyp`` against ``ref`` over frames both call voiced.

    Restricting to common frames keeps a dropped voicing decision from
    masquerading as a pitch shift.
    """
    n = min(len(ref.values_hz), len(hyp.values_hz))
    both = ref.voiced[:n] & hyp.voiced[:n]
    if not both.any():
        return None
    return f0_median_cents(ref.values_hz[:n][both], hyp.values_hz[:n][both])


def evaluate(
    ref: AudioBuffer,
    hyp: AudioBuffer,
    mode: DomainMode = DomainMode.SINGING,
    config: SpectralConfig = DEFAULT_CONFIG,
) -> MetricsReport:
    """Compare ``hyp`` against ``ref`` frame by frame over their common length."""
    mel_r = mel_spectrogram(ref, config).frames
    mel_h = mel_spectrogram(hyp, config).frames
    n = min(len(mel_r), len(mel_h))
    mel_l1 = float(np.mean(np.abs(mel_r[:n] - mel_h[:n])))

    f_r = extract_f0(ref, mode, config)
    f_h = extract_f0(hyp, mode, config)
    vr, vh = f_r.voiced[:n], f_h.voiced[:n]
    vuv = float(np.mean(vr != vh))
    both = vr & vh
    rmse = None
    if both.any():
        cents = 1200.0 * np.log2(f_h.values_hz[:n][both] / f_r.values_hz[:n][both])
        rmse = float(np.sqrt(np.mean(cents**2)))
    med = joint_f0_median_cents(f_r, f_h)

    try:
        cos = timbre_embed(ref, config).cosine(timbre_embed(hyp, config))
    except ReferenceTooShort:
        cos = None
    return MetricsReport(mel_l1, rmse, med, vuv, cos, n)
