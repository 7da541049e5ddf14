"""Symbolic inputs: monophonic scores, phoneme alignments and style tokens.

Score files are JSON::

    {"format": 1, "tempo_bpm": 120, "language": "en",
     "notes": [{"midi": 69, "onset_beats": 0, "duration_beats": 1}, ...],
     "lyrics": [{"symbol": "l", "note_index": 0}, ...],        # optional
     "style": {"genre": "pop", "technique": "normal"}}          # optional

A rest is a note with ``"midi": null``. Beat values may be JSON numbers or
``"a/b"`` strings and are held as exact fractions.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from fractions import Fraction

FORMAT_VERSION = 1
MIDI_MIN, MIDI_MAX = 21, 108

# 64 symbols: silence/breath markers plus a cross-language phone set
PHONEMES: tuple[str, ...] = (
    "sil", "sp",
    "a", "e", "i", "o", "u", "y", "ae", "ah", "aw", "ay", "eh", "er", "ey", "ih",
    "iy", "ow", "oy", "uh", "uw", "ao", "aa", "ax", "ue", "oe", "ei", "ai", "ou", "en",
    "an", "ng",
    "b", "ch", "d", "dh", "f", "g", "hh", "jh", "k", "l", "m", "n", "p", "r",
    "s", "sh", "t", "th", "v", "w", "z", "zh", "x", "q", "c", "j", "ts", "dz",
    "ly", "ny", "rr", "h",
)
PHONEME_INDEX = {p: i for i, p in enumerate(PHONEMES)}
VOWELS = frozenset(PHONEMES[2:32])
assert len(PHONEMES) == 64 and len(PHONEME_INDEX) == 64


class ScoreError(ValueError):
    """Base class for score and alignment validation errors."""


class OverlappingNotesError(ScoreError):
    pass


class UnsortedNotesError(ScoreError):
    pass


class EmptyScoreError(ScoreError):
    pass


class PitchRangeError(ScoreError):
    pass


class UnknownSymbolError(ScoreError):
    pass


class Genre(enum.Enum):
    POP = "pop"
    OPERA = "opera"


class Technique(enum.Enum):
    NORMAL = "normal"
    VIBRATO = "vibrato"


@dataclass(frozen=True)
class StyleToken:
    genre: Genre = Genre.POP
    technique: Technique = Technique.NORMAL

    @classmethod
    def parse(cls, genre, technique=None) -> "StyleToken":
        """Accepts enum members, names (``"pop"``) or a ``"pop:vibrato"`` string."""
        if technique is None and isinstance(genre, str) and ":" in genre:
            genre, technique = genre.split(":", 1)
        try:
            g = genre if isinstance(genre, Genre) else Genre(str(genre).lower())
            t = technique if isinstance(technique, Technique) else Technique(str(technique or "normal").lower())
        except ValueError as exc:
            raise ScoreError(f"unknown style value: {exc}") from None
        return cls(g, t)

    @property
    def index(self) -> int:
        return list(Genre).index(self.genre) * len(Technique) + list(Technique).index(self.technique)

    def to_json(self) -> dict:
        return {"genre": self.genre.value, "technique": self.technique.value}

    def __str__(self) -> str:
        return f"{self.genre.value}:{self.technique.value}"


ALL_STYLES: tuple[StyleToken, ...] = tuple(StyleToken(g, t) for g in Genre for t in Technique)


@dataclass(frozen=True)
class Note:
    midi_pitch: int | None  # None marks a rest
    duration_beats: Fraction
    onset_beats: Fraction

    @property
    def is_rest(self) -> bool:
        return self.midi_pitch is None

    @property
    def end_beats(self) -> Fraction:
        return self.onset_beats + self.duration_beats

    @property
    def frequency_hz(self) -> float:
        if self.midi_pitch is None:
            raise ValueError("a rest has no frequency")
        return midi_to_hz(self.midi_pitch)


@dataclass(frozen=True)
class LyricToken:
    symbol: str
    note_index: int


@dataclass(frozen=True)
class MusicScore:
    notes: tuple[Note, ...]
    tempo_bpm: float = 120.0
    language: str = "en"
    lyrics: tuple[LyricToken, ...] = ()
    style: StyleToken = field(default_factory=StyleToken)

    def __post_init__(self):
        object.__setattr__(self, "notes", tuple(self.notes))
        object.__setattr__(self, "lyrics", tuple(self.lyrics))
        validate_score(self)

    @property
    def seconds_per_beat(self) -> float:
        return 60.0 / self.tempo_bpm

    def onset_s(self, i: int) -> float:
        return float(self.notes[i].onset_beats) * self.seconds_per_beat

    def duration_s(self, i: int) -> float:
        return float(self.notes[i].duration_beats) * self.seconds_per_beat

    def pitched_notes(self) -> list[Note]:
        return [n for n in self.notes if not n.is_rest]

    def median_frequency_hz(self) -> float:
        import numpy as np

        return float(np.median([n.frequency_hz for n in self.pitched_notes()]))


@dataclass(frozen=True)
class AlignedPhoneme:
    symbol: str
    note_index: int | None
    start_frame: int
    end_frame: int


@dataclass(frozen=True)
class AlignedLyrics:
    phonemes: tuple[AlignedPhoneme, ...]

    def __post_init__(self):
        object.__setattr__(self, "phonemes", tuple(self.phonemes))
        prev_end = 0
        for ph in self.phonemes:
            if ph.symbol not in PHONEME_INDEX:
                raise UnknownSymbolError(f"unknown phoneme {ph.symbol!r}")
            if not ph.start_frame < ph.end_frame:
                raise ScoreError(f"empty phoneme span {ph.start_frame}..{ph.end_frame}")
            if ph.start_frame < prev_end:
                raise ScoreError("phoneme spans overlap or are out of order")
            prev_end = ph.end_frame

    @property
    def end_frame(self) -> int:
        return self.phonemes[-1].end_frame if self.phonemes else 0

    def check_covers_score(self, score: MusicScore) -> None:
        referenced = {ph.note_index for ph in self.phonemes}
        for i, n in enumerate(score.notes):
            if not n.is_rest and i not in referenced:
                raise ScoreError(f"note {i} is not referenced by any phoneme")

    def to_json(self) -> dict:
        return {
            "format": FORMAT_VERSION,
            "phonemes": [
                {"symbol": p.symbol, "note_index": p.note_index, "start_frame": p.start_frame, "end_frame": p.end_frame}
                for p in self.phonemes
            ],
        }


def midi_to_hz(midi: float) -> float:
    return 440.0 * 2.0 ** ((midi - 69) / 12.0)


def validate_score(score: MusicScore) -> None:
    if not 30 <= score.tempo_bpm <= 300:
        raise ScoreError(f"tempo {score.tempo_bpm} outside [30, 300] bpm")
    if not score.pitched_notes():
        raise EmptyScoreError("empty score: no pitched notes")
    prev = None
    for i, n in enumerate(score.notes):
        if n.duration_beats <= 0:
            raise ScoreError(f"note {i}: duration must be positive")
        if n.onset_beats < 0:
            raise ScoreError(f"note {i}: onset must be nonnegative")
        if n.midi_pitch is not None and not MIDI_MIN <= n.midi_pitch <= MIDI_MAX:
            raise PitchRangeError(f"pitch out of range: note {i} has midi {n.midi_pitch}")
        if prev is not None:
            if n.onset_beats < prev.onset_beats:
                raise UnsortedNotesError(f"unsorted onsets at note {i}")
            if n.onset_beats < prev.end_beats:
                raise OverlappingNotesError(f"overlapping notes at note {i}")
        prev = n
    for tok in score.lyrics:
        if tok.symbol not in PHONEME_INDEX:
            raise UnknownSymbolError(f"unknown phoneme {tok.symbol!r}")
        if not 0 <= tok.note_index < len(score.notes):
            raise ScoreError(f"lyric refers to missing note {tok.note_index}")


def _fraction(value) -> Fraction:
    if isinstance(value, str):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(str(value))
    return Fraction(value)


def _beats_json(value: Fraction):
    if value.denominator == 1:
        return value.numerator
    as_float = float(value)
    if Fraction(str(as_float)) == value:
        return as_float
    return f"{value.numerator}/{value.denominator}"


def score_from_dict(data: dict) -> MusicScore:
    if data.get("format", FORMAT_VERSION) != FORMAT_VERSION:
        raise ScoreError(f"unsupported score format {data.get('format')!r}")
    try:
        notes = [
            Note(
                None if n.get("midi") is None else int(n["midi"]),
                _fraction(n["duration_beats"]),
                _fraction(n["onset_beats"]),
            )
            for n in data["notes"]
        ]
        lyrics = [LyricToken(str(t["symbol"]), int(t["note_index"])) for t in data.get("lyrics", [])]
        style = data.get("style") or {}
        return MusicScore(
            notes=tuple(notes),
            tempo_bpm=float(data["tempo_bpm"]),
            language=str(data.get("language", "en")),
            lyrics=tuple(lyrics),
            style=StyleToken.parse(style.get("genre", "pop"), style.get("technique", "normal")),
        )
    except (KeyError, TypeError) as exc:
        raise ScoreError(f"malformed score: {exc}") from None


def parse_score(text: str) -> MusicScore:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScoreError(f"malformed score JSON: {exc}") from None
    return score_from_dict(data)


def score_to_dict(score: MusicScore) -> dict:
    tempo = score.tempo_bpm
    out = {
        "format": FORMAT_VERSION,
        "tempo_bpm": int(tempo) if float(tempo).is_integer() else tempo,
        "language": score.language,
        "notes": [
            {"midi": n.midi_pitch, "onset_beats": _beats_json(n.onset_beats), "duration_beats": _beats_json(n.duration_beats)}
            for n in score.notes
        ],
        "style": score.style.to_json(),
    }
    if score.lyrics:
        out["lyrics"] = [{"symbol": t.symbol, "note_index": t.note_index} for t in score.lyrics]
    return out


def serialize_score(score: MusicScore) -> str:
    return json.dumps(score_to_dict(score), indent=2)


def parse_alignment(text: str) -> AlignedLyrics:
    data = json.loads(text)
    if data.get("format", FORMAT_VERSION) != FORMAT_VERSION:
        raise ScoreError(f"unsupported alignment format {data.get('format')!r}")
    return AlignedLyrics(
        tuple(
            AlignedPhoneme(
                str(p["symbol"]),
                None if p.get("note_index") is None else int(p["note_index"]),
                int(p["start_frame"]),
                int(p["end_frame"]),
            )
            for p in data["phonemes"]
        )
    )


def serialize_alignment(lyrics: AlignedLyrics) -> str:
    return json.dumps(lyrics.to_json(), indent=1)


def transpose(score: MusicScore, semitones: int) -> MusicScore:
    if semitones == 0:
        return score
    shifted = []
    for i, n in enumerate(score.notes):
        if n.is_rest:
            shifted.append(n)
            continue
        p = n.midi_pitch + semitones
        if not MIDI_MIN <= p <= MIDI_MAX:
            raise PitchRangeError(f"pitch out of range: note {i} would move to midi {p}")
        shifted.append(replace(n, midi_pitch=p))
    return replace(score, notes=tuple(shifted))


def score_to_frames(score: MusicScore, sample_rate: int = 22050, hop: int = 256) -> list[tuple[int, int]]:
    """Nominal ``[start, end)`` frame span of every note (rests included)."""
    frames_per_s = sample_rate / hop
    spans = []
    for i in range(len(score.notes)):
        start = round(score.onset_s(i) * frames_per_s)
        end = round((score.onset_s(i) + score.duration_s(i)) * frames_per_s)
        spans.append((start, end))
    return spans


def align_lyrics_to_spans(
    score: MusicScore, spans: list[tuple[int, int]], total_frames: int, consonant_frames: int = 3
) -> AlignedLyrics:
    """Place the score's per-note lyrics onto realized note spans.

    Within a note, every phoneme before the last gets up to ``consonant_frames``
    frames and the last phoneme holds the remainder. Rests, gaps and notes
    without lyrics are filled with ``sil`` (rests) or a default vowel.
    """
    by_note: dict[int, list[str]] = {}
    for tok in score.lyrics:
        by_note.setdefault(tok.note_index, []).append(tok.symbol)
    out: list[AlignedPhoneme] = []
    cursor = 0
    for i, (start, end) in enumerate(spans):
        if start > cursor:
            out.append(AlignedPhoneme("sil", None, cursor, start))
        start = max(start, cursor)
        if end <= start:
            continue
        note = score.notes[i]
        if note.is_rest:
            out.append(AlignedPhoneme("sil", i, start, end))
        else:
            symbols = by_note.get(i) or ["a"]
            length = end - start
            lead = min(consonant_frames, length // len(symbols)) if len(symbols) > 1 else 0
            pos = start
            for s in symbols[:-1]:
                if lead > 0:
                    out.append(AlignedPhoneme(s, i, pos, pos + lead))
                    pos += lead
            out.append(AlignedPhoneme(symbols[-1], i, pos, end))
        cursor = end
    if total_frames > cursor:
        out.append(AlignedPhoneme("sil", None, cursor, total_frames))
    return AlignedLyrics(tuple(out))
