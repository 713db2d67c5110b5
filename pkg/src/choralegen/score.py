"""Quantized four-voice scores and their interleaved token encoding.

A score is a grid of 16th-note steps.  Each step carries one chord label
and, per voice (S, A, T, B), a state in {on, hold, rest} with a MIDI pitch
whenever the voice is sounding.  The token encoding interleaves nine
tokens per step behind a BOS:

    BOS, [chord, S-beat, S-pitch, A-beat, A-pitch, T-beat, T-pitch,
          B-beat, B-pitch] * n_steps

so the token class of any position is a pure function of its index.  The
per-step chord sequence and the per-step-per-voice beat sequence double as
the model's condition inputs and are exact projections of the backbone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    GrammarViolation,
    InconsistentHold,
    InvalidScore,
    ParseError,
    ValidationError,
)
from .vocab import (
    N_VOICES,
    STATES,
    TokenClass,
    EventVocabulary,
    VOICES,
    parse_chord_symbol,
)

TOKENS_PER_STEP = 9


@dataclass(frozen=True)
class VoiceStep:
    """State of one voice at one step; pitch is present iff sounding."""

    state: str  # "on" | "hold" | "rest"
    pitch: int | None = None


@dataclass(frozen=True)
class ChoraleScore:
    """A validated-on-demand four-voice score at 16th-note resolution."""

    name: str
    chords: tuple[str, ...]
    voices: tuple[tuple[VoiceStep, ...], ...]  # S, A, T, B

    @property
    def n_steps(self) -> int:
        return len(self.chords)

    def validate(self) -> None:
        """Raise InvalidScore on any structural violation."""
        if len(self.voices) != N_VOICES:
            raise InvalidScore(
                f"{self.name!r}: expected {N_VOICES} voices, got {len(self.voices)}"
            )
        n = self.n_steps
        for v, track in enumerate(self.voices):
            if len(track) != n:
                raise InvalidScore(
                    f"{self.name!r}: voice {VOICES[v]} has {len(track)} steps, "
                    f"chords have {n}"
                )
            for t, step in enumerate(track):
                where = f"{self.name!r} voice {VOICES[v]} step {t}"
                if step.state not in STATES:
                    raise InvalidScore(f"{where}: unknown state {step.state!r}")
                if step.state == "rest":
                    if step.pitch is not None:
                        raise InvalidScore(f"{where}: rest must not carry a pitch")
                    continue
                if step.pitch is None:
                    raise InvalidScore(f"{where}: {step.state} requires a pitch")
                if not 0 <= step.pitch < 128:
                    raise InvalidScore(
                        f"{where}: pitch {step.pitch} outside 0..127"
                    )
                if step.state == "hold":
                    if t == 0:
                        raise InvalidScore(f"{where}: hold at step 0 has no antecedent")
                    prev = track[t - 1]
                    if prev.state == "rest" or prev.pitch != step.pitch:
                        raise InvalidScore(
                            f"{where}: hold requires the previous step to sound "
                            f"the same pitch"
                        )


@dataclass(frozen=True)
class TokenSequence:
    """Backbone token ids plus the two condition projections."""

    backbone: tuple[int, ...]
    chord_cond: tuple[int, ...]  # length n_steps
    beat_cond: tuple[int, ...]   # length 4 * n_steps, per step in S,A,T,B order

    @property
    def n_steps(self) -> int:
        return len(self.chord_cond)


# --- positional grammar -----------------------------------------------------

def backbone_length(n_steps: int) -> int:
    return 1 + TOKENS_PER_STEP * n_steps


def position_class(position: int) -> TokenClass:
    """Token class required at a backbone position >= 1."""
    if position < 1:
        raise ValueError("position 0 is the BOS slot")
    offset = (position - 1) % TOKENS_PER_STEP
    if offset == 0:
        return TokenClass.CHORD
    return TokenClass.BEAT if offset % 2 == 1 else TokenClass.PITCH


def position_voice(position: int) -> int | None:
    """Voice index owning a BEAT/PITCH position, None for CHORD positions."""
    offset = (position - 1) % TOKENS_PER_STEP
    if offset == 0:
        return None
    return (offset - 1) // 2


def validate_backbone(backbone: tuple[int, ...], vocab: EventVocabulary) -> None:
    """Check the positional grammar: BOS, length, class and beat voice."""
    if len(backbone) == 0 or backbone[0] != vocab.bos_id:
        raise GrammarViolation("backbone must start with BOS")
    if (len(backbone) - 1) % TOKENS_PER_STEP != 0:
        raise GrammarViolation(
            f"backbone length {len(backbone)} is not 1 + 9*n_steps"
        )
    for p in range(1, len(backbone)):
        tok = backbone[p]
        want = position_class(p)
        got = vocab.token_class(tok)
        if got is not want:
            raise GrammarViolation(
                f"position {p} requires a {want.value} token, got {got.value} "
                f"({vocab.symbol_of[tok]!r})"
            )
        if want is TokenClass.BEAT:
            voice, _ = vocab.beat_voice_state(tok)
            expect = VOICES[position_voice(p)]
            if voice != expect:
                raise GrammarViolation(
                    f"position {p} belongs to voice {expect}, got beat of {voice}"
                )


def conditions_from_backbone(
    backbone: tuple[int, ...], vocab: EventVocabulary
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Project the chord and beat condition sequences out of a backbone."""
    n = (len(backbone) - 1) // TOKENS_PER_STEP
    chord_cond = tuple(backbone[1 + TOKENS_PER_STEP * t] for t in range(n))
    beat_cond = tuple(
        backbone[1 + TOKENS_PER_STEP * t + 1 + 2 * v]
        for t in range(n)
        for v in range(N_VOICES)
    )
    return chord_cond, beat_cond


# --- encoding ---------------------------------------------------------------

def encode_score(score: ChoraleScore, vocab: EventVocabulary) -> TokenSequence:
    """Interleave a valid score into its token sequence.

    Pitch slots carry REST at rest steps and repeat the sounding pitch at
    hold steps, so every step contributes exactly nine tokens.
    """
    score.validate()
    backbone: list[int] = [vocab.bos_id]
    chord_cond: list[int] = []
    beat_cond: list[int] = []
    for t in range(score.n_steps):
        chord = vocab.chord_id(score.chords[t])
        backbone.append(chord)
        chord_cond.append(chord)
        for v in range(N_VOICES):
            step = score.voices[v][t]
            beat = vocab.beat_id(VOICES[v], step.state)
            pitch = vocab.rest_id if step.state == "rest" else vocab.pitch_id(step.pitch)
            backbone.append(beat)
            backbone.append(pitch)
            beat_cond.append(beat)
    return TokenSequence(tuple(backbone), tuple(chord_cond), tuple(beat_cond))


def decode_tokens(
    seq: TokenSequence, vocab: EventVocabulary, name: str = "decoded"
) -> ChoraleScore:
    """Invert encode_score, rejecting any backbone it could not have produced."""
    backbone = seq.backbone
    validate_backbone(backbone, vocab)
    n = (len(backbone) - 1) // TOKENS_PER_STEP
    chords: list[str] = []
    tracks: list[list[VoiceStep]] = [[] for _ in range(N_VOICES)]
    for t in range(n):
        base = 1 + TOKENS_PER_STEP * t
        chords.append(vocab.symbol_of[backbone[base]])
        for v in range(N_VOICES):
            _, state = vocab.beat_voice_state(backbone[base + 1 + 2 * v])
            pitch_tok = backbone[base + 2 + 2 * v]
            if state == "rest":
                if pitch_tok != vocab.rest_id:
                    raise GrammarViolation(
                        f"step {t} voice {VOICES[v]}: rest step carries pitch "
                        f"{vocab.symbol_of[pitch_tok]!r}"
                    )
                tracks[v].append(VoiceStep("rest"))
                continue
            if state == "hold":
                prev_tok = backbone[base + 2 + 2 * v - TOKENS_PER_STEP] if t > 0 else None
                if prev_tok is None or prev_tok != pitch_tok:
                    raise InconsistentHold(
                        f"step {t} voice {VOICES[v]}: hold pitch "
                        f"{vocab.symbol_of[pitch_tok]!r} does not repeat the "
                        f"antecedent"
                    )
            if pitch_tok == vocab.rest_id:
                raise GrammarViolation(
                    f"step {t} voice {VOICES[v]}: {state} step carries REST"
                )
            tracks[v].append(VoiceStep(state, pitch_tok))
    score = ChoraleScore(
        name=name,
        chords=tuple(chords),
        voices=tuple(tuple(track) for track in tracks),
    )
    score.validate()
    return score


# --- corpus I/O --------------------------------------------------------------

def _piece_from_record(record: dict, index: int) -> ChoraleScore:
    where = f"piece #{index}"
    if not isinstance(record, dict):
        raise ParseError(f"{where}: expected an object, got {type(record).__name__}")
    name = record.get("name", f"piece_{index}")
    where = f"piece {name!r}"
    try:
        raw_chords = record["chords"]
        raw_voices = record["voices"]
    except KeyError as missing:
        raise ParseError(f"{where}: missing key {missing}") from None
    chords = tuple(parse_chord_symbol(str(c)) for c in raw_chords)
    if len(raw_voices) != N_VOICES:
        raise ParseError(f"{where}: expected {N_VOICES} voices, got {len(raw_voices)}")
    voices = []
    for v, track in enumerate(raw_voices):
        steps = []
        for t, cell in enumerate(track):
            if not isinstance(cell, dict) or "s" not in cell:
                raise ParseError(
                    f"{where} voice {VOICES[v]} step {t}: expected an object "
                    f"with an 's' state"
                )
            state = cell["s"]
            if state == "rest" and "p" in cell:
                raise ParseError(
                    f"{where} voice {VOICES[v]} step {t}: rest must not carry 'p'"
                )
            if state != "rest" and "p" not in cell:
                raise ParseError(
                    f"{where} voice {VOICES[v]} step {t}: state {state!r} "
                    f"requires 'p'"
                )
            steps.append(VoiceStep(state=state, pitch=cell.get("p")))
        voices.append(tuple(steps))
    return ChoraleScore(name=str(name), chords=chords, voices=tuple(voices))


def load_corpus(path: str | Path) -> list[ChoraleScore]:
    """Load and validate every piece of a corpus file, preserving order."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except OSError as err:
        raise ParseError(f"{path}: {err.strerror or err}") from None
    except json.JSONDecodeError as err:
        raise ParseError(f"{path}: invalid JSON at line {err.lineno}: {err.msg}") from None
    if not isinstance(payload, dict) or "pieces" not in payload:
        raise ParseError(f"{path}: top level must be an object with 'pieces'")
    scores = []
    for i, record in enumerate(payload["pieces"]):
        score = _piece_from_record(record, i)
        try:
            score.validate()
        except InvalidScore as err:
            raise ValidationError(str(err)) from None
        scores.append(score)
    return scores


def score_to_record(score: ChoraleScore) -> dict:
    voices = []
    for track in score.voices:
        cells = []
        for step in track:
            cell: dict = {"s": step.state}
            if step.state != "rest":
                cell["p"] = step.pitch
            cells.append(cell)
        voices.append(cells)
    return {"name": score.name, "chords": list(score.chords), "voices": voices}


def save_corpus(path: str | Path, scores: list[ChoraleScore]) -> None:
    payload = {"pieces": [score_to_record(s) for s in scores]}
    Path(path).write_text(json.dumps(payload, indent=1), encoding="utf-8")


# --- piano roll ---------------------------------------------------------------

SILENCE = -1


def to_piano_roll(score: ChoraleScore) -> np.ndarray:
    """Voice x step grid of sounding MIDI pitches; SILENCE marks rests."""
    roll = np.full((N_VOICES, score.n_steps), SILENCE, dtype=np.int16)
    for v, track in enumerate(score.voices):
        for t, step in enumerate(track):
            if step.state != "rest":
                roll[v, t] = step.pitch
    return roll


def piano_roll_text(score: ChoraleScore) -> str:
    """Plain-text roll: one row per voice, one column per step."""
    roll = to_piano_roll(score)
    lines = []
    for v in range(N_VOICES):
        cells = []
        for t in range(score.n_steps):
            if roll[v, t] == SILENCE:
                cells.append("  . ")
            else:
                onset = score.voices[v][t].state == "on"
                cells.append(f"{roll[v, t]:3d}{'*' if onset else ' '}")
        lines.append(f"{VOICES[v]} |" + "".join(cells))
    return "\n".join(lines)
