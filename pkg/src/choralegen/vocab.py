"""Event vocabularies for four-voice chorale token sequences.

Three alphabets share one id space:

* pitch events: the 128 MIDI pitches plus REST (a pitch-slot filler for
  silent steps) and the specials PAD / BOS,
* chord events: 12 roots x {maj, min, aug, dim} plus OTHER,
* beat events: {onset, hold, rest} per voice (S, A, T, B).

Ids are assigned contiguously: pitches, then chords, then beats.  Every id
belongs to exactly one class (PITCH, CHORD, BEAT or SPECIAL); REST counts
as PITCH because it occupies pitch slots, while PAD and BOS are SPECIAL.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .errors import ParseError

VOICES = ("S", "A", "T", "B")
N_VOICES = 4

QUALITIES = ("maj", "min", "aug", "dim")
OTHER_CHORD = "other"

STATES = ("on", "hold", "rest")

REST_SYMBOL = "REST"
PAD_SYMBOL = "PAD"
BOS_SYMBOL = "BOS"

_NOTE_NAMES = {
    "C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11,
}

# Interval (semitones above root) of the third and fifth per quality.
TRIAD_INTERVALS = {
    "maj": (0, 4, 7),
    "min": (0, 3, 7),
    "aug": (0, 4, 8),
    "dim": (0, 3, 6),
}


class TokenClass(Enum):
    PITCH = "pitch"
    CHORD = "chord"
    BEAT = "beat"
    SPECIAL = "special"


def chord_symbol(root_pc: int, quality: str) -> str:
    """Canonical spelling of a chord: '<pitch-class>:<quality>'."""
    return f"{root_pc}:{quality}"


def parse_chord_symbol(text: str) -> str:
    """Normalize a chord spelling to its canonical form.

    Accepts '<pc>:<quality>' with pc in 0..11, a letter-name root such as
    'C#:min' or 'Bb:maj' (enharmonics collapse to the pitch class), or
    'other'.  Raises ParseError naming the symbol otherwise.
    """
    s = text.strip()
    if s.lower() == OTHER_CHORD:
        return OTHER_CHORD
    root, _, quality = s.partition(":")
    quality = quality.lower()
    if quality not in QUALITIES:
        raise ParseError(f"unknown chord symbol {text!r}")
    root = root.strip()
    if root.isdigit() or (root.startswith("-") and root[1:].isdigit()):
        pc = int(root)
        if not 0 <= pc < 12:
            raise ParseError(f"unknown chord symbol {text!r}: root {pc} not in 0..11")
        return chord_symbol(pc, quality)
    if root and root[0].upper() in _NOTE_NAMES:
        pc = _NOTE_NAMES[root[0].upper()]
        for accidental in root[1:]:
            if accidental == "#":
                pc += 1
            elif accidental in ("b", "♭"):
                pc -= 1
            else:
                raise ParseError(f"unknown chord symbol {text!r}")
        return chord_symbol(pc % 12, quality)
    raise ParseError(f"unknown chord symbol {text!r}")


def beat_symbol(voice: str, state: str) -> str:
    """Canonical spelling of a beat event: '<voice>:<state>'."""
    return f"{voice}:{state}"


def triad_pitch_classes(symbol: str) -> frozenset[int] | None:
    """Pitch classes of a chord's triad, or None for OTHER."""
    if symbol == OTHER_CHORD:
        return None
    root, _, quality = symbol.partition(":")
    intervals = TRIAD_INTERVALS[quality]
    pc = int(root)
    return frozenset((pc + i) % 12 for i in intervals)


@dataclass(frozen=True)
class EventVocabulary:
    """Bidirectional symbol <-> id maps over the shared token space."""

    pitch_symbols: tuple[str, ...]
    chord_symbols: tuple[str, ...]
    beat_symbols: tuple[str, ...]
    id_of: dict[str, int] = field(repr=False)
    symbol_of: tuple[str, ...] = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.symbol_of)

    # id-range boundaries (pitches first, then chords, then beats)
    @property
    def chord_offset(self) -> int:
        return len(self.pitch_symbols)

    @property
    def beat_offset(self) -> int:
        return len(self.pitch_symbols) + len(self.chord_symbols)

    @property
    def rest_id(self) -> int:
        return self.id_of[REST_SYMBOL]

    @property
    def pad_id(self) -> int:
        return self.id_of[PAD_SYMBOL]

    @property
    def bos_id(self) -> int:
        return self.id_of[BOS_SYMBOL]

    def token_class(self, token_id: int) -> TokenClass:
        if not 0 <= token_id < self.size:
            raise KeyError(f"token id {token_id} outside 0..{self.size - 1}")
        if token_id <= self.rest_id:
            return TokenClass.PITCH
        if token_id < self.chord_offset:
            return TokenClass.SPECIAL
        if token_id < self.beat_offset:
            return TokenClass.CHORD
        return TokenClass.BEAT

    def pitch_id(self, midi_pitch: int) -> int:
        if not 0 <= midi_pitch < 128:
            raise KeyError(f"MIDI pitch {midi_pitch} outside 0..127")
        return midi_pitch

    def chord_id(self, symbol: str) -> int:
        try:
            return self.id_of[symbol]
        except KeyError:
            raise ParseError(f"unknown chord symbol {symbol!r}") from None

    def beat_id(self, voice: str, state: str) -> int:
        return self.id_of[beat_symbol(voice, state)]

    def beat_voice_state(self, token_id: int) -> tuple[str, str]:
        """Decompose a BEAT id into (voice, state)."""
        if self.token_class(token_id) is not TokenClass.BEAT:
            raise KeyError(f"token id {token_id} is not a beat event")
        voice, _, state = self.symbol_of[token_id].partition(":")
        return voice, state

    def class_ids(self, cls: TokenClass) -> tuple[int, ...]:
        """All ids of a class, ascending."""
        return tuple(i for i in range(self.size) if self.token_class(i) is cls)


def build_vocabulary() -> EventVocabulary:
    """Construct the canonical vocabulary.

    Ordering is deterministic: MIDI pitches 0..127, REST, PAD, BOS; chords
    by ascending root with qualities maj, min, aug, dim, then OTHER; beats
    voice-major in S, A, T, B order with states onset, hold, rest.
    """
    pitch = [str(p) for p in range(128)] + [REST_SYMBOL, PAD_SYMBOL, BOS_SYMBOL]
    chords = [chord_symbol(pc, q) for pc in range(12) for q in QUALITIES]
    chords.append(OTHER_CHORD)
    beats = [beat_symbol(v, s) for v in VOICES for s in STATES]

    symbols = tuple(pitch + chords + beats)
    id_of = {sym: i for i, sym in enumerate(symbols)}
    if len(id_of) != len(symbols):
        raise AssertionError("vocabulary symbols are not unique")
    return EventVocabulary(
        pitch_symbols=tuple(pitch),
        chord_symbols=tuple(chords),
        beat_symbols=tuple(beats),
        id_of=id_of,
        symbol_of=symbols,
    )
