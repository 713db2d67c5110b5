import pytest

from choralegen.errors import ParseError
from choralegen.vocab import (
    TokenClass,
    beat_symbol,
    build_vocabulary,
    parse_chord_symbol,
    triad_pitch_classes,
)


def test_alphabet_sizes(vocab):
    assert len(vocab.pitch_symbols) == 131  # 128 pitches + REST + PAD + BOS
    assert len(vocab.chord_symbols) == 49
    assert len(vocab.beat_symbols) == 12
    assert vocab.size == 131 + 49 + 12 == 192


def test_combined_map_is_a_bijection(vocab):
    assert len(vocab.id_of) == vocab.size
    assert sorted(vocab.id_of.values()) == list(range(vocab.size))
    for symbol, token_id in vocab.id_of.items():
        assert vocab.symbol_of[token_id] == symbol


def test_every_id_has_exactly_one_class(vocab):
    counts = {cls: 0 for cls in TokenClass}
    for i in range(vocab.size):
        counts[vocab.token_class(i)] += 1
    assert counts[TokenClass.PITCH] == 129  # 128 pitches + REST
    assert counts[TokenClass.SPECIAL] == 2  # PAD, BOS
    assert counts[TokenClass.CHORD] == 49
    assert counts[TokenClass.BEAT] == 12


def test_chord_ids_disjoint_from_pitch_ids(vocab):
    c_major = vocab.chord_id("0:maj")
    for p in range(128):
        assert c_major != vocab.pitch_id(p)


def test_deterministic_ordering(vocab):
    assert vocab.pitch_symbols[0] == "0"
    assert vocab.pitch_symbols[127] == "127"
    assert vocab.pitch_symbols[128:] == ("REST", "PAD", "BOS")
    assert vocab.chord_symbols[:4] == ("0:maj", "0:min", "0:aug", "0:dim")
    assert vocab.chord_symbols[-1] == "other"
    assert vocab.beat_symbols[:3] == ("S:on", "S:hold", "S:rest")
    assert vocab.beat_symbols[3] == "A:on"
    assert build_vocabulary().symbol_of == vocab.symbol_of


def test_beat_voice_state_round_trip(vocab):
    for voice in "SATB":
        for state in ("on", "hold", "rest"):
            token_id = vocab.beat_id(voice, state)
            assert vocab.beat_voice_state(token_id) == (voice, state)
            assert vocab.symbol_of[token_id] == beat_symbol(voice, state)


@pytest.mark.parametrize("text,expected", [
    ("0:maj", "0:maj"),
    ("11:dim", "11:dim"),
    ("C:maj", "0:maj"),
    ("C#:min", "1:min"),
    ("Db:min", "1:min"),
    ("Bb:maj", "10:maj"),
    ("other", "other"),
    ("OTHER", "other"),
])
def test_parse_chord_symbol(text, expected):
    assert parse_chord_symbol(text) == expected


@pytest.mark.parametrize("bad", ["Xmaj", "12:maj", "C:sus4", "", "H:maj"])
def test_parse_chord_symbol_rejects_unknown(bad):
    with pytest.raises(ParseError) as err:
        parse_chord_symbol(bad)
    assert "chord symbol" in str(err.value)


def test_triads():
    assert triad_pitch_classes("0:maj") == frozenset({0, 4, 7})
    assert triad_pitch_classes("9:min") == frozenset({9, 0, 4})
    assert triad_pitch_classes("0:aug") == frozenset({0, 4, 8})
    assert triad_pitch_classes("2:dim") == frozenset({2, 5, 8})
    assert triad_pitch_classes("other") is None
