"""Tests for svsynth.pipeline: pitch adjustment, sampling, conditioning, training and inference."""

import math
from fractions import Fraction

import numpy as np
import pytest

from svsynth.checkpoint import CheckpointError, ModelConfig, to_bytes
from svsynth.corpus import Domain, SyntheticCorpusSpec, generate_items
from svsynth.diffusion import COND_CHANNELS
from svsynth.dsp import SAMPLE_RATE, AudioBuffer, num_frames
from svsynth.features import F0Curve, NoVoicedReference
from svsynth.score import MusicScore, Note, PitchRangeError, StyleToken, Technique
from svsynth.pipeline import (
    InferenceInputs,
    Mode,
    TrainConfig,
    amplitude_channel,
    build_conditioning,
    convert_svc_b,
    convert_svc_c,
    f0_channels,
    fit_lyrics,
    gradient_check,
    mixed_batch_sampler,
    octave_shift,
    pitch_adjust,
    synthesize_svs,
    train,
)

TINY = ModelConfig(channels=16, dilations=(1, 2))


def flat_f0(hz, n=50):
    return F0Curve(np.full(n, hz), np.ones(n, bool))


def score_at(midi, tempo=120.0):
    return MusicScore((Note(midi, Fraction(2), Fraction(0)),), tempo)


def brute_force_shift(m_score, m_ref):
    return min(range(-4, 5), key=lambda k: (round(abs(math.log2(m_score * 2**k / m_ref)), 12), abs(k), k > 0))


@pytest.fixture(scope="module")
def corpus():
    return generate_items(SyntheticCorpusSpec(n_speakers=2, n_utterances=2, singing_fraction=0.5, seed=7))


@pytest.fixture(scope="module")
def tiny_svs(corpus):
    cfg = TrainConfig(iterations=4, batch_size=2, segment_frames=16, log_every=0, model=TINY)
    return train(cfg, corpus).checkpoint


@pytest.fixture(scope="module")
def tiny_svc_c(corpus):
    cfg = TrainConfig(iterations=4, batch_size=2, segment_frames=16, log_every=0, mix=False, model=ModelConfig(variant="svc-c", channels=16, dilations=(1, 2)))
    return train(cfg, corpus).checkpoint


# ---------------------------------------------------------------------------
# Pitch adjustment
# ---------------------------------------------------------------------------


class TestPitchAdjust:
    @pytest.mark.parametrize("ref,midi,shift", [(220.0, 69, -12), (220.0, 57, 0), (500.0, 57, 12)])
    def test_examples(self, ref, midi, shift):
        adjusted, k = pitch_adjust(score_at(midi), flat_f0(ref))
        assert k == shift
        assert adjusted.notes[0].midi_pitch == midi + shift

    def test_matches_brute_force(self):
        for ref in np.geomspace(110.0, 880.0, 25):
            for midi in range(48, 85):
                m = 440.0 * 2 ** ((midi - 69) / 12)
                k = octave_shift(m, ref)
                assert k == brute_force_shift(m, ref)
                assert abs(math.log2(m * 2**k / ref)) <= 0.5 + 1e-12

    def test_tie_goes_to_negative(self):
        # exactly half an octave either way
        assert octave_shift(440.0 * math.sqrt(2), 440.0) == 0
        assert octave_shift(440.0 * 2**1.5, 440.0) == -1

    def test_no_voiced_reference(self):
        with pytest.raises(NoVoicedReference):
            pitch_adjust(score_at(60), F0Curve(np.zeros(5), np.zeros(5, bool)))

    def test_out_of_range_suggests_shift(self):
        with pytest.raises(PitchRangeError, match="manual shift"):
            # the median pulls the score down two octaves, taking the low note below MIDI 21
            notes = tuple(Note(m, Fraction(1), Fraction(i)) for i, m in enumerate([22, 60, 60]))
            pitch_adjust(MusicScore(notes, 120.0), flat_f0(65.0))


# ---------------------------------------------------------------------------
# Mixed sampling
# ---------------------------------------------------------------------------


class TestMixedSampler:
    def test_ratio(self):
        gen = mixed_batch_sampler([0] * 3, [0] * 5, 100, np.random.default_rng(0))
        draws = [d for _ in range(100) for d, _ in next(gen)]
        assert 4900 <= sum(d is Domain.SINGING for d in draws) <= 5100

    def test_mix_off(self):
        gen = mixed_batch_sampler([0] * 3, [], 10, np.random.default_rng(0), mix=False)
        assert all(d is Domain.SINGING for _ in range(20) for d, _ in next(gen))

    def test_deterministic(self):
        a = mixed_batch_sampler([0] * 3, [0] * 5, 8, np.random.default_rng(2))
        b = mixed_batch_sampler([0] * 3, [0] * 5, 8, np.random.default_rng(2))
        assert [next(a) for _ in range(5)] == [next(b) for _ in range(5)]

    def test_indices_in_range(self):
        gen = mixed_batch_sampler([0] * 3, [0] * 5, 50, np.random.default_rng(1))
        for d, i in next(gen):
            assert 0 <= i < (3 if d is Domain.SINGING else 5)

    def test_empty(self):
        with pytest.raises(ValueError):
            next(mixed_batch_sampler([], [0], 2, np.random.default_rng(0)))
        with pytest.raises(ValueError):
            next(mixed_batch_sampler([0], [], 2, np.random.default_rng(0)))


# ---------------------------------------------------------------------------
# Conditioning
# ---------------------------------------------------------------------------


class TestConditioning:
    def test_f0_channels(self):
        ch = f0_channels(np.array([0.0, 220.0, 440.0]), np.array([False, True, True]))
        assert ch.shape == (3, 82)
        np.testing.assert_allclose(ch[:, 0], [0.0, 0.0, 1.0])
        np.testing.assert_allclose(ch[:, 1], [0.0, 1.0, 1.0])
        assert np.all(ch[0, 2:] == 0)

    def test_amplitude_channel(self):
        ch = amplitude_channel(np.array([0.0, 1e-4, 0.01, 0.5]))
        assert ch.shape == (4, 1)
        np.testing.assert_allclose(ch[:, 0], [0.0, 0.0, 1.0 - math.log10(50) / 3, 1.0])

    def test_fit_lyrics(self, corpus):
        lyr = corpus[0].lyrics
        assert fit_lyrics(lyr, lyr.end_frame + 2).end_frame == lyr.end_frame + 2
        with pytest.raises(ValueError):
            fit_lyrics(lyr, lyr.end_frame + 5)

    def test_train_gt_lengths(self, corpus):
        for it in corpus:
            cond, report = build_conditioning(Mode.TRAIN_GT, it)
            n = num_frames(len(it.audio))
            assert report["frames"] == n
            assert cond.f0.shape == (n, 82) and cond.amplitude.shape == (n, 1) and len(cond.phoneme_ids) == n

    def test_svc_b_vs_c(self, corpus):
        src, ref = corpus[0], corpus[3]
        inputs = InferenceInputs(ref.audio, src.style, lyrics=src.lyrics, source_audio=src.audio, pitch_adjust=False)
        b, _ = build_conditioning(Mode.INFER_SVC_B, inputs=inputs)
        c, _ = build_conditioning(Mode.INFER_SVC_C, inputs=inputs)
        np.testing.assert_array_equal(b.f0, c.f0)
        np.testing.assert_array_equal(b.amplitude, c.amplitude)
        assert b.content is None and c.content is not None

    def test_svs_style_effect(self, corpus):
        ref = corpus[1]
        score = corpus[0].score
        normal = InferenceInputs(ref.audio, StyleToken(technique=Technique.NORMAL), score, seed=3)
        vibrato = InferenceInputs(ref.audio, StyleToken(technique=Technique.VIBRATO), score, seed=3)
        a, _ = build_conditioning(Mode.INFER_SVS, inputs=normal)
        b, _ = build_conditioning(Mode.INFER_SVS, inputs=vibrato)
        n = min(len(a.f0), len(b.f0))
        assert not np.array_equal(a.f0[:n, 0], b.f0[:n, 0])

    def test_missing_inputs(self, corpus):
        ref = corpus[1].audio
        with pytest.raises(ValueError):
            build_conditioning(Mode.TRAIN_GT)
        with pytest.raises(ValueError, match="score"):
            build_conditioning(Mode.INFER_SVS, inputs=InferenceInputs(ref))
        with pytest.raises(ValueError, match="lyrics"):
            build_conditioning(Mode.INFER_SVC_B, inputs=InferenceInputs(ref, source_audio=corpus[0].audio))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


class TestTrain:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(lr_schedule="step")

    def test_svc_c_refuses_mixed(self, corpus):
        with pytest.raises(ValueError, match="singing only"):
            TrainConfig(mix=True, model=ModelConfig(variant="svc-c"))
        TrainConfig(mix=False, model=ModelConfig(variant="svc-c"))

    def test_config_json(self):
        cfg = TrainConfig(iterations=7, model=TINY)
        assert TrainConfig.from_json(cfg.to_json()) == cfg

    def test_byte_identical(self, corpus, tiny_svs):
        cfg = TrainConfig(iterations=4, batch_size=2, segment_frames=16, log_every=0, model=TINY)
        assert to_bytes(train(cfg, corpus).checkpoint) == to_bytes(tiny_svs)

    def test_checkpoint_contents(self, tiny_svs):
        assert tiny_svs.step == 4
        assert any(k.startswith("lyric_encoder") for k in tiny_svs.state)
        assert any(k.startswith("style_table") for k in tiny_svs.state)
        assert tiny_svs.optim_state and tiny_svs.rng_state is not None

    def test_periodic_checkpoints_and_logs(self, corpus, tmp_path):
        records = []
        cfg = TrainConfig(iterations=4, batch_size=1, segment_frames=8, log_every=2, checkpoint_every=2, model=TINY)
        train(cfg, corpus, tmp_path, log_fn=records.append)
        assert sorted(p.name for p in tmp_path.iterdir()) == ["final.ckpt", "step_0000002.ckpt", "step_0000004.ckpt"]
        assert [r["step"] for r in records] == [2, 4]
        assert set(records[0]) == {"step", "loss", "lr", "wall_ms"}

    def test_cosine_schedule(self, corpus):
        records = []
        cfg = TrainConfig(iterations=4, batch_size=1, segment_frames=8, log_every=1, learning_rate=1e-3, lr_schedule="cosine", model=TINY)
        train(cfg, corpus, log_fn=records.append)
        lrs = [r["lr"] for r in records]
        assert lrs[0] == 1e-3 and all(a > b for a, b in zip(lrs, lrs[1:]))

    def test_gradient_check(self):
        errors = gradient_check(seed=0)
        assert len(errors) > 20
        assert max(errors.values()) < 1e-4


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


class TestInference:
    def test_svs_length_and_report(self, corpus, tiny_svs):
        ref = corpus[1].audio
        audio, report = synthesize_svs(corpus[0].score, StyleToken(), ref, tiny_svs, steps=3, seed=1)
        assert len(audio) == (report["frames"] - 1) * 256
        assert report["shift_semitones"] % 12 == 0 and report["S"] == 3
        again, _ = synthesize_svs(corpus[0].score, StyleToken(), ref, tiny_svs, steps=3, seed=1)
        np.testing.assert_array_equal(audio.samples, again.samples)

    def test_svc_preserves_frames(self, corpus, tiny_svs, tiny_svc_c):
        src, ref = corpus[0], corpus[3]
        b, rb = convert_svc_b(src.audio, src.lyrics, src.style, ref.audio, tiny_svs, steps=2)
        c, rc = convert_svc_c(src.audio, ref.audio, tiny_svc_c, steps=2)
        assert rb["frames"] == rc["frames"] == num_frames(len(src.audio))
        assert len(b) == len(c)

    def test_variant_checks(self, corpus, tiny_svs, tiny_svc_c):
        src, ref = corpus[0], corpus[3]
        with pytest.raises(CheckpointError):
            convert_svc_c(src.audio, ref.audio, tiny_svs, steps=2)
        with pytest.raises(CheckpointError):
            synthesize_svs(src.score, StyleToken(), ref.audio, tiny_svc_c, steps=2)

    def test_short_reference(self, corpus, tiny_svc_c):
        short = AudioBuffer(corpus[1].audio.samples[: SAMPLE_RATE // 2])
        with pytest.raises(ValueError, match="reference too short"):
            convert_svc_c(corpus[0].audio, short, tiny_svc_c, steps=2)

    def test_cond_channels(self, corpus, tiny_svs):
        from svsynth.pipeline import model_from_checkpoint, train_conditioning

        model = model_from_checkpoint(tiny_svs)
        assert model.condition([train_conditioning(corpus[0], "svs")]).shape[1] == COND_CHANNELS
