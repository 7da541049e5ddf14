"""Tests for svsynth.score: score parsing, transposition, framing and alignment."""

import json
from fractions import Fraction

import pytest

from svsynth.score import (
    AlignedLyrics,
    AlignedPhoneme,
    EmptyScoreError,
    MusicScore,
    Note,
    OverlappingNotesError,
    PHONEMES,
    PitchRangeError,
    ScoreError,
    StyleToken,
    Genre,
    Technique,
    UnknownSymbolError,
    UnsortedNotesError,
    align_lyrics_to_spans,
    parse_alignment,
    parse_score,
    score_to_frames,
    serialize_alignment,
    serialize_score,
    transpose,
)


def score_json(notes, tempo=120, **extra):
    data = {
        "format": 1,
        "tempo_bpm": tempo,
        "language": "en",
        "notes": [{"midi": m, "onset_beats": o, "duration_beats": d} for m, o, d in notes],
    }
    data.update(extra)
    return json.dumps(data)


def make_score(notes, tempo=120.0):
    return MusicScore(tuple(Note(m, Fraction(d), Fraction(o)) for m, o, d in notes), tempo)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


class TestParseScore:
    def test_single_note(self):
        s = parse_score(score_json([(69, 0, 1)]))
        assert len(s.notes) == 1
        assert s.duration_s(0) == pytest.approx(0.5)
        assert s.notes[0].frequency_hz == pytest.approx(440.0)

    def test_overlap(self):
        with pytest.raises(OverlappingNotesError, match="overlapping notes"):
            parse_score(score_json([(60, 0, 2), (62, 1, 1)]))

    def test_unsorted(self):
        with pytest.raises(UnsortedNotesError):
            parse_score(score_json([(60, 2, 1), (62, 0, 1)]))

    def test_pitch_range(self):
        with pytest.raises(PitchRangeError, match="pitch out of range"):
            parse_score(score_json([(200, 0, 1)]))

    def test_empty(self):
        with pytest.raises(EmptyScoreError):
            parse_score(score_json([(None, 0, 1)]))

    def test_tempo_bounds(self):
        with pytest.raises(ScoreError):
            parse_score(score_json([(60, 0, 1)], tempo=10))

    def test_unknown_phoneme(self):
        with pytest.raises(UnknownSymbolError):
            parse_score(score_json([(60, 0, 1)], lyrics=[{"symbol": "zzz", "note_index": 0}]))

    def test_bad_format(self):
        with pytest.raises(ScoreError):
            parse_score(json.dumps({"format": 2, "tempo_bpm": 120, "notes": []}))

    def test_malformed(self):
        with pytest.raises(ScoreError):
            parse_score("{not json")
        with pytest.raises(ScoreError):
            parse_score(json.dumps({"tempo_bpm": 120}))

    def test_distinct_error_types(self):
        kinds = {OverlappingNotesError, UnsortedNotesError, EmptyScoreError, PitchRangeError}
        assert len(kinds) == 4 and all(issubclass(k, ScoreError) for k in kinds)

    def test_round_trip(self):
        text = score_json(
            [(60, 0, "1/3"), (None, "1/3", "2/3"), (64, 1, 1.5), (67, 2.5, 0.25)],
            tempo=97.5,
            lyrics=[{"symbol": "l", "note_index": 0}, {"symbol": "a", "note_index": 0}],
            style={"genre": "opera", "technique": "vibrato"},
        )
        s = parse_score(text)
        assert parse_score(serialize_score(s)) == s
        assert s.style == StyleToken(Genre.OPERA, Technique.VIBRATO)
        assert s.notes[0].duration_beats == Fraction(1, 3)


class TestStyleToken:
    def test_parse(self):
        assert StyleToken.parse("pop:vibrato") == StyleToken(Genre.POP, Technique.VIBRATO)
        assert StyleToken.parse("Opera") == StyleToken(Genre.OPERA, Technique.NORMAL)

    def test_closed_enum(self):
        with pytest.raises(ScoreError):
            StyleToken.parse("jazz")
        with pytest.raises(ScoreError):
            StyleToken.parse("pop", "growl")

    def test_indices_distinct(self):
        idx = {StyleToken(g, t).index for g in Genre for t in Technique}
        assert idx == {0, 1, 2, 3}


# ---------------------------------------------------------------------------
# Transposition and framing
# ---------------------------------------------------------------------------


class TestTranspose:
    def test_down_octave(self):
        assert transpose(make_score([(69, 0, 1)]), -12).notes[0].midi_pitch == 57

    def test_identity(self):
        s = make_score([(69, 0, 1)])
        assert transpose(s, 0) == s

    def test_out_of_range(self):
        with pytest.raises(PitchRangeError):
            transpose(make_score([(21, 0, 1)]), -1)

    def test_inverse(self):
        s = make_score([(50, 0, 1), (None, 1, 1), (70, 2, 1)])
        for k in range(-29, 39):
            assert transpose(transpose(s, k), -k) == s

    def test_rests_and_timing_kept(self):
        s = make_score([(50, 0, 1), (None, 1, 1)])
        t = transpose(s, 5)
        assert t.notes[1].is_rest
        assert [n.onset_beats for n in t.notes] == [n.onset_beats for n in s.notes]


class TestScoreToFrames:
    def test_one_beat(self):
        (span,) = score_to_frames(make_score([(60, 0, 1)]))
        assert span == (0, 43)
        assert round(0.5 * 22050 / 256) == 43

    def test_partition(self):
        spans = score_to_frames(make_score([(60, 0, 1), (62, 1, 1)]))
        assert spans[0][0] == 0 and spans[0][1] == spans[1][0]

    def test_tempo_doubled(self):
        notes = [(60, 0, 1), (62, 1, 2), (64, 3, 1)]
        slow = score_to_frames(make_score(notes, 60.0))
        fast = score_to_frames(make_score(notes, 120.0))
        for (a, b), (c, d) in zip(slow, fast):
            assert abs((b - a) / 2 - (d - c)) <= 1

    def test_partition_property(self):
        notes = [(60 + i % 5, i * Fraction(2, 3), Fraction(2, 3)) for i in range(30)]
        spans = score_to_frames(make_score(notes, 133.0))
        assert spans[0][0] == 0
        for (a, b), (c, d) in zip(spans, spans[1:]):
            assert a < b and b == c and c < d


# ---------------------------------------------------------------------------
# Alignment
# ---------------------------------------------------------------------------


class TestAlignment:
    def test_round_trip(self):
        lyr = AlignedLyrics((AlignedPhoneme("l", 0, 0, 3), AlignedPhoneme("a", 0, 3, 20), AlignedPhoneme("sil", None, 20, 25)))
        assert parse_alignment(serialize_alignment(lyr)) == lyr

    def test_overlap_rejected(self):
        with pytest.raises(ScoreError):
            AlignedLyrics((AlignedPhoneme("a", 0, 0, 5), AlignedPhoneme("e", 1, 4, 8)))

    def test_empty_span_rejected(self):
        with pytest.raises(ScoreError):
            AlignedLyrics((AlignedPhoneme("a", 0, 3, 3),))

    def test_unknown_symbol(self):
        with pytest.raises(UnknownSymbolError):
            AlignedLyrics((AlignedPhoneme("qq", 0, 0, 3),))

    def test_align_covers_notes(self):
        s = MusicScore(
            tuple(Note(m, Fraction(1), Fraction(i)) for i, m in enumerate([60, None, 64])),
            lyrics=(),
        )
        spans = score_to_frames(s)
        lyr = align_lyrics_to_spans(s, spans, spans[-1][1] + 5)
        lyr.check_covers_score(s)
        assert lyr.end_frame == spans[-1][1] + 5

    def test_inventory(self):
        assert len(PHONEMES) == 64 and len(set(PHONEMES)) == 64
