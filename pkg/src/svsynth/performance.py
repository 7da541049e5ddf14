"""Rule-based expressive performance: timing deviations, F0 curves and amplitude envelopes.

These parametric generators stand in for learned performance models. Every
output is a deterministic function of (score, style, seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dsp import SAMPLE_RATE
from .features import AmplitudeEnvelope, F0Curve
from .score import Genre, MusicScore, StyleToken, Technique, score_to_frames

HOP = 256
FRAMES_PER_S = SAMPLE_RATE / HOP

# independent RNG streams per generator so that seeds do not interact
_TIMING_STREAM, _F0_STREAM, _AMP_STREAM = 1, 2, 3


@dataclass(frozen=True)
class StyleProfile:
    vibrato_rate_hz: float
    vibrato_depth_cents: float
    vibrato_onset_s: float
    portamento_s: float
    attack_s: float
    release_s: float
    dynamics_shape: str = "flat"  # "flat" or "swell"


DEFAULT_PROFILES: dict[tuple[Genre, Technique], StyleProfile] = {
    (Genre.POP, Technique.NORMAL): StyleProfile(5.5, 0.0, 0.15, 0.08, 0.03, 0.05, "flat"),
    (Genre.POP, Technique.VIBRATO): StyleProfile(5.5, 50.0, 0.15, 0.08, 0.03, 0.05, "flat"),
    (Genre.OPERA, Technique.NORMAL): StyleProfile(6.0, 0.0, 0.10, 0.12, 0.08, 0.12, "swell"),
    (Genre.OPERA, Technique.VIBRATO): StyleProfile(6.0, 120.0, 0.10, 0.12, 0.08, 0.12, "swell"),
}


def profile_for(style: StyleToken, profiles=None) -> StyleProfile:
    return (profiles or DEFAULT_PROFILES)[(style.genre, style.technique)]


def load_profiles(path: str | Path) -> dict[tuple[Genre, Technique], StyleProfile]:
    """Read a JSON table keyed ``"genre:technique"``; missing keys keep their defaults."""
    data = json.loads(Path(path).read_text())
    table = dict(DEFAULT_PROFILES)
    for key, values in data.items():
        style = StyleToken.parse(key)
        base = asdict(table[(style.genre, style.technique)])
        base.update(values)
        prof = StyleProfile(**base)
        if prof.dynamics_shape not in ("flat", "swell"):
            raise ValueError(f"{key}: unknown dynamics_shape {prof.dynamics_shape!r}")
        if any(v < 0 for v in asdict(prof).values() if isinstance(v, float)):
            raise ValueError(f"{key}: style parameters must be nonnegative")
        table[(style.genre, style.technique)] = prof
    return table


@dataclass(frozen=True)
class PerformanceTiming:
    note_spans: tuple[tuple[int, int], ...]
    seed: int
    total_frames: int

    def __len__(self) -> int:
        return len(self.note_spans)


def generate_timing(
    score: MusicScore,
    style: StyleToken | None = None,
    seed: int = 0,
    sigma_s: float = 0.02,
    clip_s: float = 0.05,
) -> PerformanceTiming:
    """Perturb nominal note onsets with clipped Gaussian deviations.

    Abutting notes share a boundary, so moving an onset also moves the previous
    note's end. The first onset and the final end stay fixed; durations are
    repaired left to right to stay within 25%..200% of nominal.
    """
    nominal = score_to_frames(score, SAMPLE_RATE, HOP)
    rng = np.random.default_rng([seed, _TIMING_STREAM])
    dev = np.clip(rng.normal(0.0, 1.0, len(nominal)) * sigma_s, -clip_s, clip_s)
    dev_frames = np.round(dev * FRAMES_PER_S).astype(int)
    dev_frames[0] = 0

    starts = [s + int(d) for (s, _), d in zip(nominal, dev_frames)]
    spans: list[tuple[int, int]] = []
    prev_end = 0
    for i, (s_nom, e_nom) in enumerate(nominal):
        last = i == len(nominal) - 1
        abuts_next = not last and nominal[i + 1][0] == e_nom
        start = max(starts[i], prev_end)
        if last:
            end = e_nom
        elif abuts_next:
            end = starts[i + 1]
        else:
            end = e_nom + int(dev_frames[i])
        nom = e_nom - s_nom
        min_dur = max(1, math.ceil(0.25 * nom))
        max_dur = max(min_dur, math.floor(2.0 * nom))
        end = int(np.clip(end, start + min_dur, start + max_dur))
        if abuts_next:
            starts[i + 1] = end
        spans.append((start, end))
        prev_end = end
    return PerformanceTiming(tuple(spans), seed, spans[-1][1])


def _log2_hz(midi: int) -> float:
    return math.log2(440.0) + (midi - 69) / 12.0


def portamento_windows(score: MusicScore, timing: PerformanceTiming, style: StyleToken, profiles=None) -> list[tuple[int, int]]:
    """Frame windows ``[lo, hi)`` where pitch glides between adjacent pitched notes."""
    prof = profile_for(style, profiles)
    half = prof.portamento_s * FRAMES_PER_S / 2.0
    out = []
    for i in range(len(score.notes) - 1):
        a, b = score.notes[i], score.notes[i + 1]
        (sa, ea), (sb, eb) = timing.note_spans[i], timing.note_spans[i + 1]
        if a.is_rest or b.is_rest or ea != sb or a.midi_pitch == b.midi_pitch or half <= 0:
            continue
        h = min(half, (ea - sa) / 2.0, (eb - sb) / 2.0)
        lo = int(math.floor(ea - h))
        hi = int(math.ceil(ea + h))
        out.append((lo, hi))
    return out


def generate_f0_curve(
    score: MusicScore,
    timing: PerformanceTiming,
    style: StyleToken | None = None,
    seed: int = 0,
    jitter_cents: float = 5.0,
    profiles=None,
) -> F0Curve:
    style = style or score.style
    prof = profile_for(style, profiles)
    n = timing.total_frames
    log_f0 = np.full(n, np.nan)
    t_s = np.arange(n) / FRAMES_PER_S
    for note, (s, e) in zip(score.notes, timing.note_spans):
        if not note.is_rest:
            log_f0[s:e] = _log2_hz(note.midi_pitch)

    half = prof.portamento_s * FRAMES_PER_S / 2.0
    for i in range(len(score.notes) - 1):
        a, b = score.notes[i], score.notes[i + 1]
        (sa, ea), (sb, eb) = timing.note_spans[i], timing.note_spans[i + 1]
        if a.is_rest or b.is_rest or ea != sb or half <= 0:
            continue
        h = min(half, (ea - sa) / 2.0, (eb - sb) / 2.0)
        lo, hi = ea - h, ea + h
        frames = np.arange(int(math.floor(lo)), int(math.ceil(hi)))
        frames = frames[(frames >= sa) & (frames < eb)]
        u = np.clip((frames - lo) / (hi - lo), 0.0, 1.0)
        pa, pb = _log2_hz(a.midi_pitch), _log2_hz(b.midi_pitch)
        log_f0[frames] = pa + (pb - pa) * (1.0 - np.cos(np.pi * u)) / 2.0

    cents = np.zeros(n)
    if prof.vibrato_depth_cents > 0:
        for note, (s, e) in zip(score.notes, timing.note_spans):
            if note.is_rest or (e - s) / FRAMES_PER_S < 0.3:
                continue
            t0 = s / FRAMES_PER_S + prof.vibrato_onset_s
            idx = np.arange(s, e)
            idx = idx[t_s[idx] >= t0]
            cents[idx] += prof.vibrato_depth_cents * np.sin(2 * np.pi * prof.vibrato_rate_hz * (t_s[idx] - t0))

    if jitter_cents > 0:
        rng = np.random.default_rng([seed, _F0_STREAM])
        raw = rng.uniform(-jitter_cents, jitter_cents, n + 2)
        cents += np.convolve(raw, np.ones(3) / 3.0, mode="valid")

    voiced = ~np.isnan(log_f0)
    values = np.zeros(n)
    values[voiced] = 2.0 ** (log_f0[voiced] + cents[voiced] / 1200.0)
    return F0Curve(values, voiced, HOP)


def generate_amplitude(
    score: MusicScore,
    timing: PerformanceTiming,
    style: StyleToken | None = None,
    seed: int = 0,
    profiles=None,
) -> AmplitudeEnvelope:
    style = style or score.style
    prof = profile_for(style, profiles)
    rng = np.random.default_rng([seed, _AMP_STREAM])
    env = np.zeros(timing.total_frames)
    for note, (s, e) in zip(score.notes, timing.note_spans):
        sustain = 0.7 + rng.uniform(-0.05, 0.05)
        if note.is_rest or e <= s:
            continue
        length = e - s
        attack = prof.attack_s * FRAMES_PER_S
        release = prof.release_s * FRAMES_PER_S
        if attack + release > length:
            scale = length / (attack + release)
            attack, release = attack * scale, release * scale
        k = np.arange(length) + 0.5
        shape = np.ones(length)
        if attack > 0:
            shape = np.minimum(shape, k / attack)
        if release > 0:
            shape = np.minimum(shape, (length - k) / release)
        level = np.full(length, sustain)
        if prof.dynamics_shape == "swell":
            level += 0.03 * np.sin(np.pi * k / length)
        env[s:e] = level * np.clip(shape, 0.0, 1.0)
    return AmplitudeEnvelope(env, HOP)


def zero_deviation(score: MusicScore) -> PerformanceTiming:
    """Timing that realizes the score exactly (no onset deviations)."""
    return generate_timing(score, seed=0, sigma_s=0.0)


__all__ = [
    "DEFAULT_PROFILES",
    "PerformanceTiming",
    "StyleProfile",
    "generate_amplitude",
    "generate_f0_curve",
    "generate_timing",
    "load_profiles",
    "portamento_windows",
    "profile_for",
    "zero_deviation",
]
