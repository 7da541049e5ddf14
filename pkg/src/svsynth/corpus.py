"""Synthetic singing/speech corpus with separable speakers.

Every utterance is a harmonic source shaped by a speaker filter (spectral
tilt, a small set of resonances, and a formant scale applied to per-phoneme
vowel formants). Singing follows random simple scores through the
performance generators; speech follows pitch-contoured syllable sequences.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .dsp import SAMPLE_RATE, AudioBuffer, read_wav, write_wav
from .features import DomainMode
from .performance import HOP, generate_amplitude, generate_f0_curve, generate_timing
from .score import (
    ALL_STYLES,
    PHONEMES,
    VOWELS,
    AlignedLyrics,
    AlignedPhoneme,
    LyricToken,
    MusicScore,
    Note,
    StyleToken,
    align_lyrics_to_spans,
    midi_to_hz,
    parse_alignment,
    parse_score,
    serialize_alignment,
    serialize_score,
)

CORPUS_FORMAT = 1
_VOWEL_LIST = sorted(VOWELS)
_CONSONANT_LIST = [p for p in PHONEMES[32:]]
_BASE_TILT_DB_OCT = -6.0
_TILT_RANGE = (-8.0, 4.0)  # per-speaker offset on top of the base tilt
_OUTPUT_GAIN = 0.3


class Domain(enum.Enum):
    SINGING = "singing"
    SPEECH = "speech"

    @property
    def mode(self) -> DomainMode:
        return DomainMode.SINGING if self is Domain.SINGING else DomainMode.SPEECH


@dataclass
class CorpusItem:
    audio: AudioBuffer
    domain: Domain
    lyrics: AlignedLyrics
    speaker: str
    style: StyleToken = field(default_factory=StyleToken)
    score: MusicScore | None = None
    item_id: str = ""

    def __post_init__(self):
        if self.domain is Domain.SINGING and self.score is None:
            raise ValueError(f"singing item {self.item_id!r} carries no score")
        if self.domain is Domain.SPEECH and self.score is not None:
            raise ValueError(f"speech item {self.item_id!r} must not carry a score")


@dataclass(frozen=True)
class Resonance:
    freq_hz: float
    bandwidth_hz: float
    gain_db: float


@dataclass(frozen=True)
class SpeakerVoice:
    speaker_id: str
    tilt_db_oct: float
    resonances: tuple[Resonance, ...]
    formant_scale: float
    singing_base_midi: int
    speech_median_hz: float

    def log_gain(self, freqs: np.ndarray) -> np.ndarray:
        """Natural-log amplitude gain of the speaker filter at ``freqs``."""
        f = np.maximum(freqs, 50.0)
        db = (_BASE_TILT_DB_OCT + self.tilt_db_oct) * np.log2(f / 500.0)
        for r in self.resonances:
            db = db + r.gain_db / (1.0 + ((f - r.freq_hz) / (0.5 * r.bandwidth_hz)) ** 2)
        return db * np.log(10.0) / 20.0


@dataclass
class SyntheticCorpusSpec:
    n_speakers: int = 2
    n_utterances: int = 10
    singing_fraction: float = 1.0
    notes_range: tuple[int, int] = (4, 7)
    syllables_range: tuple[int, int] = (6, 10)
    tilts_db_oct: list[float] | None = None
    resonances: list[list[tuple[float, float, float]]] | None = None
    formant_scales: list[float] | None = None
    base_midis: list[int] | None = None
    seed: int = 0
    speaker_prefix: str = "spk"

    def __post_init__(self):
        if self.n_speakers < 2:
            raise ValueError("a synthetic corpus needs at least two speakers")
        if self.n_utterances < 1:
            raise ValueError("n_utterances must be >= 1")
        if not 0.0 <= self.singing_fraction <= 1.0:
            raise ValueError("singing_fraction must be in [0, 1]")
        for name in ("tilts_db_oct", "resonances", "formant_scales", "base_midis"):
            value = getattr(self, name)
            if value is not None and len(value) != self.n_speakers:
                raise ValueError(f"{name} must list one entry per speaker")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "SyntheticCorpusSpec":
        data = dict(data)
        for key in ("notes_range", "syllables_range"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


def make_speakers(spec: SyntheticCorpusSpec) -> list[SpeakerVoice]:
    out = []
    for s in range(spec.n_speakers):
        rng = np.random.default_rng([spec.seed, 7919, s])
        # stratified: each speaker draws from the middle half of its own slice
        # of the tilt range, so speakers stay separable by construction
        width = (_TILT_RANGE[1] - _TILT_RANGE[0]) / spec.n_speakers
        tilt = _TILT_RANGE[0] + width * (s + rng.uniform(0.25, 0.75))
        res = (
            Resonance(rng.uniform(1800, 3200), rng.uniform(300, 800), rng.uniform(-8, 10)),
            Resonance(rng.uniform(4000, 7000), rng.uniform(600, 1500), rng.uniform(-8, 10)),
        )
        scale = rng.uniform(0.85, 1.2)
        base = int(rng.integers(52, 65))
        if spec.tilts_db_oct is not None:
            tilt = float(spec.tilts_db_oct[s])
        if spec.resonances is not None:
            res = tuple(Resonance(*r) for r in spec.resonances[s])
        if spec.formant_scales is not None:
            scale = float(spec.formant_scales[s])
        if spec.base_midis is not None:
            base = int(spec.base_midis[s])
        speech_median = midi_to_hz(base) * 2.0 ** (-0.3)
        out.append(SpeakerVoice(f"{spec.speaker_prefix}{s:02d}", float(tilt), res, float(scale), base, float(speech_median)))
    return out


def phoneme_formants(symbol: str) -> tuple[tuple[float, float, float], ...]:
    """Deterministic (freq, bandwidth, gain_db) formants for a phoneme symbol."""
    h = int.from_bytes(hashlib.sha256(symbol.encode()).digest()[:8], "little")
    rng = np.random.default_rng(h)
    if symbol in VOWELS:
        f1, f2, f3 = rng.uniform(300, 850), rng.uniform(900, 2400), rng.uniform(2500, 3300)
        return ((f1, 120.0, 18.0), (f2, 180.0, 14.0), (f3, 250.0, 8.0))
    f1, f2 = rng.uniform(200, 500), rng.uniform(1500, 5000)
    return ((f1, 200.0, 6.0), (f2, 600.0, 12.0))


def _phoneme_log_gain(symbol: str, freqs: np.ndarray, scale: float) -> np.ndarray:
    db = np.zeros_like(freqs)
    for fc, bw, g in phoneme_formants(symbol):
        db = db + g / (1.0 + ((freqs - fc * scale) / (0.5 * bw * scale)) ** 2)
    return db * np.log(10.0) / 20.0


def render(
    f0_hz: np.ndarray,
    amplitude: np.ndarray,
    lyrics: AlignedLyrics,
    voice: SpeakerVoice,
    max_freq_hz: float = 10000.0,
    noise_db: float = -20.0,
    seed: int = 0,
) -> AudioBuffer:
    """Additive harmonic synthesis of frame-rate controls; output has ``(T-1)*hop`` samples.

    Breath noise shaped by the speaker filter is mixed in ``noise_db`` below
    the harmonic part and follows the same amplitude envelope.
    """
    n_frames = len(f0_hz)
    n_samples = (n_frames - 1) * HOP
    frame_sym = np.array(["sil"] * n_frames, dtype=object)
    for ph in lyrics.phonemes:
        frame_sym[ph.start_frame : min(ph.end_frame, n_frames)] = ph.symbol
    voiced = f0_hz > 0
    if n_samples <= 0 or not voiced.any():
        return AudioBuffer(np.zeros(max(n_samples, 0)))
    fmin = float(f0_hz[voiced].min())
    n_harm = max(1, int(max_freq_hz // fmin))
    k = np.arange(1, n_harm + 1)

    # per-frame harmonic amplitudes (power-normalized), then interpolate to samples
    filled = np.where(voiced, f0_hz, np.interp(np.arange(n_frames), np.flatnonzero(voiced), f0_hz[voiced]))
    harm_amp = np.zeros((n_frames, n_harm))
    for i in range(n_frames):
        sym = frame_sym[i]
        if not voiced[i] or sym in ("sil", "sp"):
            continue
        freqs = k * filled[i]
        logg = voice.log_gain(freqs) + _phoneme_log_gain(sym, freqs, voice.formant_scale)
        amps = np.exp(logg) * (freqs < min(max_freq_hz, SAMPLE_RATE / 2 - 200))
        if sym not in VOWELS:
            amps = amps * 0.5
        norm = np.sqrt(np.sum(amps**2))
        if norm > 0:
            harm_amp[i] = amps / norm * amplitude[i] * np.sqrt(2.0)
    frame_pos = np.arange(n_frames) * HOP
    t = np.arange(n_samples)
    f_inst = np.interp(t, frame_pos, filled)
    phase = 2.0 * np.pi * np.cumsum(f_inst) / SAMPLE_RATE
    out = np.zeros(n_samples)
    for j in range(n_harm):
        a = np.interp(t, frame_pos, harm_amp[:, j])
        if not a.any():
            continue
        # drop harmonics that would alias while pitch glides upward
        a = np.where(f_inst * (j + 1) < SAMPLE_RATE / 2 - 100, a, 0.0)
        out += a * np.sin((j + 1) * phase)
    if noise_db is not None and np.isfinite(noise_db):
        rng = np.random.default_rng(seed)
        spec = np.fft.rfft(rng.standard_normal(n_samples))
        freqs = np.fft.rfftfreq(n_samples, 1.0 / SAMPLE_RATE)
        shaped = np.fft.irfft(spec * np.exp(voice.log_gain(freqs)), n_samples)
        shaped /= np.sqrt(np.mean(shaped**2)) + 1e-12
        env = np.interp(t, frame_pos, np.where(voiced, amplitude, 0.0))
        out += shaped * env * 10.0 ** (noise_db / 20.0)
    return AudioBuffer(np.clip(out * _OUTPUT_GAIN, -1.0, 1.0))


def random_score(rng: np.random.Generator, voice: SpeakerVoice, n_notes: int, style: StyleToken) -> MusicScore:
    tempo = float(rng.integers(90, 131))
    durations = [Fraction(1, 2), Fraction(1), Fraction(3, 2), Fraction(2)]
    notes: list[Note] = [Note(None, Fraction(1, 2), Fraction(0))]
    lyrics: list[LyricToken] = []
    onset = Fraction(1, 2)
    pitch = voice.singing_base_midi + int(rng.integers(-3, 4))
    for _ in range(n_notes):
        pitch = int(np.clip(pitch + rng.integers(-4, 5), voice.singing_base_midi - 7, voice.singing_base_midi + 7))
        dur = durations[int(rng.integers(len(durations)))]
        notes.append(Note(pitch, dur, onset))
        idx = len(notes) - 1
        lyrics.append(LyricToken(_CONSONANT_LIST[int(rng.integers(len(_CONSONANT_LIST)))], idx))
        lyrics.append(LyricToken(_VOWEL_LIST[int(rng.integers(len(_VOWEL_LIST)))], idx))
        onset += dur
    notes.append(Note(None, Fraction(1, 2), onset))
    return MusicScore(tuple(notes), tempo, "en", tuple(lyrics), style)


def make_singing_item(voice: SpeakerVoice, seed, n_notes: int, style: StyleToken | None = None, item_id: str = "") -> CorpusItem:
    rng = np.random.default_rng(seed)
    if style is None:
        style = ALL_STYLES[int(rng.integers(len(ALL_STYLES)))]
    score = random_score(rng, voice, n_notes, style)
    perf_seed = int(rng.integers(2**31))
    timing = generate_timing(score, style, perf_seed)
    f0 = generate_f0_curve(score, timing, style, perf_seed)
    amp = generate_amplitude(score, timing, style, perf_seed)
    lyrics = align_lyrics_to_spans(score, list(timing.note_spans), timing.total_frames)
    audio = render(f0.values_hz, amp.values, lyrics, voice, seed=perf_seed)
    return CorpusItem(audio, Domain.SINGING, lyrics, voice.speaker_id, style, score, item_id)


def make_speech_item(voice: SpeakerVoice, seed, n_syllables: int, item_id: str = "") -> CorpusItem:
    rng = np.random.default_rng(seed)
    fps = SAMPLE_RATE / HOP
    phonemes: list[AlignedPhoneme] = []
    cursor = int(round(0.15 * fps))
    phonemes.append(AlignedPhoneme("sil", None, 0, cursor))
    syl_spans = []
    for i in range(n_syllables):
        if i > 0 and rng.random() < 0.15:
            pause = int(round(rng.uniform(0.08, 0.18) * fps))
            phonemes.append(AlignedPhoneme("sp", None, cursor, cursor + pause))
            cursor += pause
        length = int(round(rng.uniform(0.15, 0.3) * fps))
        cons = int(rng.integers(2, 4))
        c = _CONSONANT_LIST[int(rng.integers(len(_CONSONANT_LIST)))]
        v = _VOWEL_LIST[int(rng.integers(len(_VOWEL_LIST)))]
        phonemes.append(AlignedPhoneme(c, None, cursor, cursor + cons))
        phonemes.append(AlignedPhoneme(v, None, cursor + cons, cursor + length))
        syl_spans.append((cursor, cursor + length))
        cursor += length
    tail = int(round(0.15 * fps))
    phonemes.append(AlignedPhoneme("sil", None, cursor, cursor + tail))
    total = cursor + tail
    lyrics = AlignedLyrics(tuple(phonemes))

    frames = np.arange(total)
    decl = np.linspace(2.0, -2.0, total)  # semitones
    knots = rng.normal(0.0, 1.2, max(4, total // 15))
    wiggle = np.interp(frames, np.linspace(0, total - 1, len(knots)), knots)
    f0 = voice.speech_median_hz * 2.0 ** ((decl + wiggle) / 12.0)
    amp = np.zeros(total)
    for s, e in syl_spans:
        k = np.arange(e - s) + 0.5
        amp[s:e] = rng.uniform(0.55, 0.8) * np.sin(np.pi * k / (e - s)) ** 0.5
    voiced = amp > 0
    f0 = np.where(voiced, f0, 0.0)
    audio = render(f0, amp, lyrics, voice, seed=int(rng.integers(2**31)))
    return CorpusItem(audio, Domain.SPEECH, lyrics, voice.speaker_id, StyleToken(), None, item_id)


def generate_items(spec: SyntheticCorpusSpec, speakers: list[SpeakerVoice] | None = None) -> list[CorpusItem]:
    """Render the corpus in memory; order is speaker-major, utterance-minor."""
    speakers = speakers or make_speakers(spec)
    items = []
    n_sing = int(round(spec.singing_fraction * spec.n_utterances))
    for s, voice in enumerate(speakers):
        for u in range(spec.n_utterances):
            seed = [spec.seed, s, u]
            rng = np.random.default_rng(seed + [1])
            item_id = f"{voice.speaker_id}_{u:03d}"
            if u < n_sing:
                n_notes = int(rng.integers(spec.notes_range[0], spec.notes_range[1] + 1))
                items.append(make_singing_item(voice, seed, n_notes, item_id=item_id))
            else:
                n_syl = int(rng.integers(spec.syllables_range[0], spec.syllables_range[1] + 1))
                items.append(make_speech_item(voice, seed, n_syl, item_id=item_id))
    return items


def gen_corpus(spec: SyntheticCorpusSpec, out_dir: str | Path) -> Path:
    """Write WAVs, scores, alignments and ``manifest.json`` under ``out_dir``."""
    out = Path(out_dir)
    try:
        for sub in ("wav", "scores", "align"):
            (out / sub).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write corpus to {out}: {exc}") from exc
    speakers = make_speakers(spec)
    entries = []
    for item in generate_items(spec, speakers):
        wav_rel = f"wav/{item.item_id}.wav"
        align_rel = f"align/{item.item_id}.json"
        write_wav(out / wav_rel, item.audio)
        (out / align_rel).write_text(serialize_alignment(item.lyrics))
        score_rel = None
        if item.score is not None:
            score_rel = f"scores/{item.item_id}.json"
            (out / score_rel).write_text(serialize_score(item.score))
        entries.append(
            {
                "id": item.item_id,
                "path": wav_rel,
                "domain": item.domain.value,
                "speaker": item.speaker,
                "style": str(item.style),
                "score_path": score_rel,
                "align_path": align_rel,
            }
        )
    manifest = {
        "format": CORPUS_FORMAT,
        "spec": spec.to_json(),
        "speakers": [asdict(v) for v in speakers],
        "items": entries,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_corpus(path: str | Path) -> list[CorpusItem]:
    """Load items listed in a manifest (a manifest file or its directory)."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    root = path.parent
    manifest = json.loads(path.read_text())
    if manifest.get("format") != CORPUS_FORMAT:
        raise ValueError(f"{path}: unsupported manifest format {manifest.get('format')!r}")
    items = []
    for e in manifest["items"]:
        score = parse_score((root / e["score_path"]).read_text()) if e.get("score_path") else None
        items.append(
            CorpusItem(
                read_wav(root / e["path"]),
                Domain(e["domain"]),
                parse_alignment((root / e["align_path"]).read_text()),
                e["speaker"],
                StyleToken.parse(e["style"]),
                score,
                e["id"],
            )
        )
    return items
