"""Tests for svsynth.performance: timing, F0 and amplitude generators."""

import json
from fractions import Fraction

import numpy as np
import pytest

from svsynth.performance import (
    DEFAULT_PROFILES,
    FRAMES_PER_S,
    generate_amplitude,
    generate_f0_curve,
    generate_timing,
    load_profiles,
    portamento_windows,
    profile_for,
    zero_deviation,
)
from svsynth.score import ALL_STYLES, Genre, MusicScore, Note, StyleToken, Technique, score_to_frames

POP_NORMAL = StyleToken(Genre.POP, Technique.NORMAL)
POP_VIBRATO = StyleToken(Genre.POP, Technique.VIBRATO)


def make_score(notes, tempo=120.0):
    return MusicScore(tuple(Note(m, Fraction(d), Fraction(o)) for m, o, d in notes), tempo)


def melody(n, seed=0, rests=True):
    rng = np.random.default_rng(seed)
    notes, onset = [], Fraction(0)
    for i in range(n):
        dur = Fraction(int(rng.integers(1, 5)), 2)
        pitch = None if rests and i % 7 == 3 else int(rng.integers(55, 75))
        notes.append((pitch, onset, dur))
        onset += dur
    return make_score(notes, 110.0)


def cents(hz, midi):
    return 1200.0 * np.log2(hz / (440.0 * 2 ** ((midi - 69) / 12)))


# ---------------------------------------------------------------------------
# Profiles
# ---------------------------------------------------------------------------


class TestProfiles:
    def test_defaults(self):
        pop = profile_for(POP_VIBRATO)
        opera = profile_for(StyleToken(Genre.OPERA, Technique.VIBRATO))
        assert (pop.vibrato_rate_hz, pop.vibrato_depth_cents, pop.portamento_s) == (5.5, 50.0, 0.08)
        assert (opera.vibrato_rate_hz, opera.vibrato_depth_cents, opera.portamento_s) == (6.0, 120.0, 0.12)
        assert opera.attack_s > pop.attack_s and opera.release_s > pop.release_s
        assert profile_for(POP_NORMAL).vibrato_depth_cents == 0.0
        assert len(DEFAULT_PROFILES) == 4

    def test_load_overrides(self, tmp_path):
        path = tmp_path / "p.json"
        path.write_text(json.dumps({"pop:vibrato": {"vibrato_depth_cents": 80.0}}))
        table = load_profiles(path)
        assert table[(Genre.POP, Technique.VIBRATO)].vibrato_depth_cents == 80.0
        assert table[(Genre.OPERA, Technique.NORMAL)] == DEFAULT_PROFILES[(Genre.OPERA, Technique.NORMAL)]

    def test_load_rejects_negative(self, tmp_path):
        path = tmp_path / "p.json"
        path.write_text(json.dumps({"opera": {"attack_s": -1.0}}))
        with pytest.raises(ValueError):
            load_profiles(path)


# ---------------------------------------------------------------------------
# Timing
# ---------------------------------------------------------------------------


class TestTiming:
    def test_deterministic(self):
        s = melody(20)
        assert generate_timing(s, seed=5) == generate_timing(s, seed=5)

    def test_zero_sigma_is_nominal(self):
        s = melody(20)
        assert list(generate_timing(s, seed=3, sigma_s=0.0).note_spans) == score_to_frames(s)
        assert list(zero_deviation(s).note_spans) == score_to_frames(s)

    @pytest.mark.parametrize("seed", range(5))
    def test_hundred_notes_valid(self, seed):
        s = melody(100, seed)
        timing = generate_timing(s, seed=seed)
        nominal = score_to_frames(s)
        spans = timing.note_spans
        for (a, b), (c, d) in zip(spans, spans[1:]):
            assert b <= c
        for (a, b), (na, nb) in zip(spans, nominal):
            assert 0.25 * (nb - na) <= b - a <= 2.0 * (nb - na)
        assert abs(timing.total_frames - nominal[-1][1]) <= 0.1 * nominal[-1][1]

    def test_seeds_differ(self):
        s = melody(30)
        assert generate_timing(s, seed=1) != generate_timing(s, seed=2)


# ---------------------------------------------------------------------------
# F0
# ---------------------------------------------------------------------------


class TestF0Curve:
    def test_a4_constant(self):
        s = make_score([(69, 0, 2)])
        f0 = generate_f0_curve(s, zero_deviation(s), POP_NORMAL, jitter_cents=0.0)
        assert f0.voiced.all()
        np.testing.assert_allclose(f0.values_hz, 440.0)

    def test_vibrato_extrema(self):
        s = make_score([(69, 0, 4)])
        f0 = generate_f0_curve(s, zero_deviation(s), POP_VIBRATO, jitter_cents=0.0)
        v = f0.values_hz
        assert v.max() <= 440.0 * 2 ** (50 / 1200) + 1e-9
        assert v.min() >= 440.0 * 2 ** (-50 / 1200) - 1e-9
        assert v.max() > 440.0 * 2 ** (45 / 1200)

    def test_portamento_ramp(self):
        s = make_score([(60, 0, 1), (64, 1, 1)])
        timing = zero_deviation(s)
        f0 = generate_f0_curve(s, timing, POP_NORMAL, jitter_cents=0.0)
        (lo, hi), = portamento_windows(s, timing, POP_NORMAL)
        assert hi - lo == pytest.approx(0.08 * FRAMES_PER_S, abs=2)
        ramp = np.log2(f0.values_hz[lo - 1 : hi + 1])
        assert np.all(np.diff(ramp) >= 0)
        assert abs(cents(f0.values_hz[lo - 1], 60)) < 2.0
        assert abs(cents(f0.values_hz[hi], 64)) < 2.0

    def test_rests_unvoiced(self):
        s = make_score([(60, 0, 1), (None, 1, 1), (62, 2, 1)])
        timing = zero_deviation(s)
        f0 = generate_f0_curve(s, timing, POP_NORMAL)
        a, b = timing.note_spans[1]
        assert not f0.voiced[a:b].any()

    def test_jitter_bounded(self):
        s = make_score([(65, 0, 4)])
        f0 = generate_f0_curve(s, zero_deviation(s), POP_NORMAL, seed=3)
        dev = cents(f0.values_hz, 65)
        assert np.abs(dev).max() <= 5.0 + 1e-9 and np.abs(dev).max() > 0

    @pytest.mark.parametrize("style", ALL_STYLES)
    def test_within_depth_outside_portamento(self, style):
        s = melody(40, seed=2)
        timing = generate_timing(s, style, seed=2)
        f0 = generate_f0_curve(s, timing, style, seed=2)
        depth = profile_for(style).vibrato_depth_cents
        glide = np.zeros(timing.total_frames, bool)
        for lo, hi in portamento_windows(s, timing, style):
            glide[lo:hi] = True
        for note, (a, b) in zip(s.notes, timing.note_spans):
            if note.is_rest:
                continue
            idx = np.arange(a, b)[~glide[a:b]]
            assert np.all(np.abs(cents(f0.values_hz[idx], note.midi_pitch)) <= depth + 10.0)

    def test_deterministic(self):
        s = melody(15)
        t = generate_timing(s, seed=1)
        a = generate_f0_curve(s, t, POP_VIBRATO, seed=9)
        b = generate_f0_curve(s, t, POP_VIBRATO, seed=9)
        np.testing.assert_array_equal(a.values_hz, b.values_hz)

    def test_style_effect(self):
        s = make_score([(62, 0, 2), (65, 2, 2)])
        t = zero_deviation(s)
        normal = generate_f0_curve(s, t, POP_NORMAL, seed=4)
        vibrato = generate_f0_curve(s, t, POP_VIBRATO, seed=4)
        for a, b in t.note_spans:
            diff = 1200 * np.abs(np.log2(vibrato.values_hz[a:b] / normal.values_hz[a:b]))
            assert diff.max() >= 25.0


# ---------------------------------------------------------------------------
# Amplitude
# ---------------------------------------------------------------------------


class TestAmplitude:
    def test_rest_frames_zero(self):
        s = make_score([(None, 0, 2), (60, 2, 1), (None, 3, 2)])
        t = zero_deviation(s)
        env = generate_amplitude(s, t, POP_NORMAL).values
        for i in (0, 2):
            a, b = t.note_spans[i]
            assert np.all(env[a:b] == 0)

    @pytest.mark.parametrize("style", ALL_STYLES)
    def test_long_note_plateau(self, style):
        s = make_score([(60, 0, 6)])
        env = generate_amplitude(s, zero_deviation(s), style, seed=1).values
        assert 0.6 <= env.max() <= 0.8
        peak = int(np.argmax(env))
        assert np.all(np.diff(env[: peak + 1]) >= 0)
        assert np.all(np.diff(env[peak:]) <= 0)
        # plateau: most of the note sits within 5% of the peak
        assert np.mean(env >= 0.95 * env.max()) > 0.8

    def test_deterministic(self):
        s = melody(10)
        t = generate_timing(s, seed=0)
        np.testing.assert_array_equal(
            generate_amplitude(s, t, POP_NORMAL, seed=7).values, generate_amplitude(s, t, POP_NORMAL, seed=7).values
        )

    def test_lengths_agree(self):
        s = melody(25, seed=4)
        t = generate_timing(s, seed=4)
        assert len(generate_f0_curve(s, t, POP_VIBRATO)) == len(generate_amplitude(s, t, POP_VIBRATO)) == t.total_frames
