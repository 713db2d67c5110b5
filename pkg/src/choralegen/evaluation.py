"""Teacher-forced accuracy, per-voice pitch error rates, and condition
consistency scores.

All metrics are pure functions of (parameters, pieces, flags): evaluation
never draws randomness and never mutates the model, so repeated calls
agree bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptySplit, LengthMismatch
from .model import ChoraleTransformer, ConditionEncoding
from .score import ChoraleScore, TokenSequence, encode_score
from .vocab import (
    N_VOICES,
    EventVocabulary,
    VOICES,
    build_vocabulary,
    triad_pitch_classes,
)


def _crop(seq: TokenSequence, max_steps: int) -> TokenSequence:
    if seq.n_steps <= max_steps:
        return seq
    return TokenSequence(
        backbone=seq.backbone[:1 + 9 * max_steps],
        chord_cond=seq.chord_cond[:max_steps],
        beat_cond=seq.beat_cond[:4 * max_steps],
    )


def _predictions(
    model: ChoraleTransformer, seq: TokenSequence, conditions_on: bool
) -> tuple[np.ndarray, np.ndarray]:
    """(argmax predictions, targets) for one teacher-forced pass."""
    full = np.asarray(seq.backbone, dtype=np.int64)
    if conditions_on:
        cond = model.encode_conditions(
            np.asarray(seq.chord_cond), np.asarray(seq.beat_cond)
        )
    else:
        cond = ConditionEncoding.empty()
    logits = model.forward(full[:-1], cond)
    return logits.data.argmax(axis=-1), full[1:]


@dataclass
class EvalReport:
    accuracy: float
    pitch_accuracy: float
    ter: dict[str, float]
    n_positions: int
    n_pitch_positions: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "pitch_accuracy": self.pitch_accuracy,
            "ter": dict(self.ter),
            "n_positions": self.n_positions,
            "n_pitch_positions": self.n_pitch_positions,
        }


def sequence_accuracy(
    model: ChoraleTransformer,
    seqs: list[TokenSequence],
    vocab: EventVocabulary,
    conditions_on: bool = True,
) -> tuple[int, int]:
    """(correct, total) next-token counts over whole sequences."""
    correct = 0
    total = 0
    max_steps = model.config.max_steps
    for seq in seqs:
        seq = _crop(seq, max_steps)
        if seq.n_steps == 0:
            continue
        pred, target = _predictions(model, seq, conditions_on)
        correct += int((pred == target).sum())
        total += target.size
    return correct, total


def evaluate_model(
    model: ChoraleTransformer,
    pieces: list[ChoraleScore],
    vocab: EventVocabulary | None = None,
    conditions_on: bool = True,
) -> EvalReport:
    """One forward pass per piece feeding every token-level metric."""
    if not pieces:
        raise EmptySplit("no pieces to evaluate")
    vocab = vocab or build_vocabulary()
    max_steps = model.config.max_steps
    total = correct = 0
    pitch_total = np.zeros(N_VOICES, dtype=np.int64)
    pitch_errors = np.zeros(N_VOICES, dtype=np.int64)
    for piece in pieces:
        seq = _crop(encode_score(piece, vocab), max_steps)
        if seq.n_steps == 0:
            continue
        pred, target = _predictions(model, seq, conditions_on)
        hits = pred == target
        correct += int(hits.sum())
        total += target.size
        # target i sits at backbone position i+1, so its frame offset is
        # i % 9; pitch slots are the even offsets 2, 4, 6, 8 (S, A, T, B).
        offsets = np.arange(target.size) % 9
        for v in range(N_VOICES):
            sel = offsets == 2 + 2 * v
            pitch_total[v] += int(sel.sum())
            pitch_errors[v] += int((~hits[sel]).sum())
    if total == 0:
        raise EmptySplit("every piece in the split is empty")
    ter = {
        VOICES[v].lower(): (
            pitch_errors[v] / pitch_total[v] if pitch_total[v] else 0.0
        )
        for v in range(N_VOICES)
    }
    n_pitch = int(pitch_total.sum())
    pitch_correct = n_pitch - int(pitch_errors.sum())
    return EvalReport(
        accuracy=correct / total,
        pitch_accuracy=pitch_correct / n_pitch if n_pitch else 0.0,
        ter=ter,
        n_positions=total,
        n_pitch_positions=n_pitch,
    )


def teacher_forcing_accuracy(
    model: ChoraleTransformer,
    pieces: list[ChoraleScore],
    conditions_on: bool = True,
) -> float:
    return evaluate_model(model, pieces, conditions_on=conditions_on).accuracy


def token_error_rate(
    model: ChoraleTransformer,
    pieces: list[ChoraleScore],
    voice: str,
    conditions_on: bool = True,
) -> float:
    voice = voice.upper()
    if voice not in VOICES:
        raise ValueError(f"unknown voice {voice!r}; expected one of {VOICES}")
    report = evaluate_model(model, pieces, conditions_on=conditions_on)
    return report.ter[voice.lower()]


# --- condition consistency -----------------------------------------------------

def rhythm_consistency(
    score: ChoraleScore,
    beat_cond: list[int] | np.ndarray,
    vocab: EventVocabulary | None = None,
) -> float:
    """Fraction of (voice, step) cells whose state matches the condition."""
    vocab = vocab or build_vocabulary()
    beat_cond = list(beat_cond)
    if len(beat_cond) != 4 * score.n_steps:
        raise LengthMismatch(
            f"beat condition length {len(beat_cond)} vs 4*{score.n_steps} cells"
        )
    if score.n_steps == 0:
        return 1.0
    matches = 0
    for t in range(score.n_steps):
        for v in range(N_VOICES):
            _, state = vocab.beat_voice_state(beat_cond[4 * t + v])
            if score.voices[v][t].state == state:
                matches += 1
    return matches / (4 * score.n_steps)


def chord_consistency(
    score: ChoraleScore,
    chord_cond: list[int] | np.ndarray,
    vocab: EventVocabulary | None = None,
) -> dict:
    """Fraction of sounding pitches inside the conditioned chord's triad.

    Pitches under an OTHER chord have no reference triad; they count as
    consistent and are reported separately.  An all-rest score is vacuously
    consistent with sounding count 0.
    """
    vocab = vocab or build_vocabulary()
    chord_cond = list(chord_cond)
    if len(chord_cond) != score.n_steps:
        raise LengthMismatch(
            f"chord condition length {len(chord_cond)} vs {score.n_steps} steps"
        )
    sounding = 0
    consistent = 0
    under_other = 0
    for t in range(score.n_steps):
        triad = triad_pitch_classes(vocab.symbol_of[chord_cond[t]])
        for v in range(N_VOICES):
            step = score.voices[v][t]
            if step.state == "rest":
                continue
            sounding += 1
            if triad is None:
                under_other += 1
                consistent += 1
            elif step.pitch % 12 in triad:
                consistent += 1
    return {
        "chord_consistency": consistent / sounding if sounding else 1.0,
        "sounding_count": sounding,
        "other_chord_sounding": under_other,
    }
