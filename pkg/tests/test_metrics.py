"""Tests for svsynth.metrics: objective comparison between two recordings."""

import json

import numpy as np
import pytest

from svsynth.dsp import SAMPLE_RATE, AudioBuffer
from svsynth.features import F0Curve, extract_f0
from svsynth.metrics import evaluate, f0_median_cents, joint_f0_median_cents


def harmonic(freq, seconds=1.5):
    t = np.arange(int(SAMPLE_RATE * seconds)) / SAMPLE_RATE
    return AudioBuffer(sum(0.3 / k * np.sin(2 * np.pi * k * freq * t) for k in range(1, 6)))


class TestMedians:
    def test_octave(self):
        assert f0_median_cents(np.array([100.0, 110.0, 120.0]), np.array([220.0])) == pytest.approx(1200.0)

    def test_joint_ignores_dropped_voicing(self):
        ref = F0Curve(np.array([200.0, 210.0, 400.0, 400.0]), np.ones(4, bool))
        hyp = F0Curve(np.array([200.0, 210.0, 0.0, 0.0]), np.array([True, True, False, False]))
        assert joint_f0_median_cents(ref, hyp) == pytest.approx(0.0)

    def test_joint_none(self):
        ref = F0Curve(np.array([200.0, 0.0]), np.array([True, False]))
        hyp = F0Curve(np.array([0.0, 200.0]), np.array([False, True]))
        assert joint_f0_median_cents(ref, hyp) is None


class TestEvaluate:
    def test_identity(self):
        x = harmonic(220.0)
        r = evaluate(x, x)
        assert r.mel_l1 == 0.0 and r.vuv_error == 0.0
        assert r.f0_rmse_cents == 0.0 and r.f0_median_diff_cents == 0.0
        assert r.timbre_cos == pytest.approx(1.0)

    def test_octave_up(self):
        r = evaluate(harmonic(220.0), harmonic(440.0))
        assert r.f0_median_diff_cents == pytest.approx(1200.0, abs=15.0)
        assert r.mel_l1 > 0

    def test_hundred_cents(self):
        r = evaluate(harmonic(220.0), harmonic(220.0 * 2 ** (100 / 1200)))
        assert r.f0_rmse_cents == pytest.approx(100.0, abs=5.0)

    def test_silence_hyp(self):
        ref = harmonic(220.0)
        ref_voiced = extract_f0(ref).voiced.mean()
        r = evaluate(ref, AudioBuffer(np.zeros(len(ref))))
        assert r.vuv_error == pytest.approx(ref_voiced, abs=1e-12)
        assert r.f0_rmse_cents is None and r.f0_median_diff_cents is None

    def test_symmetric(self):
        a, b = harmonic(220.0), harmonic(247.0)
        ab, ba = evaluate(a, b), evaluate(b, a)
        assert ab.mel_l1 == ba.mel_l1 and ab.vuv_error == ba.vuv_error
        assert ab.f0_rmse_cents == pytest.approx(ba.f0_rmse_cents)

    def test_short_has_no_timbre(self):
        r = evaluate(harmonic(220.0, 0.5), harmonic(220.0, 0.5))
        assert r.timbre_cos is None

    def test_json(self):
        r = evaluate(harmonic(220.0), harmonic(220.0))
        data = json.loads(r.to_json())
        assert set(data) == {"mel_l1", "f0_rmse_cents", "f0_median_diff_cents", "vuv_error", "timbre_cos", "frames"}
