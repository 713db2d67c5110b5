import numpy as np
import pytest

from choralegen.autodiff import Tensor
from choralegen.errors import EmptySplit, LengthMismatch
from choralegen.evaluation import (
    chord_consistency,
    evaluate_model,
    rhythm_consistency,
    teacher_forcing_accuracy,
    token_error_rate,
)
from choralegen.model import ConditionEncoding
from choralegen.score import ChoraleScore, VoiceStep, encode_score

from util import tiny_config


class StubModel:
    """Duck-typed model producing logits from a row function."""

    def __init__(self, row_fn, config=None):
        self.row_fn = row_fn
        # caps roomy enough that no mini-corpus piece gets cropped
        self.config = config or tiny_config(
            max_len_chord=64, max_len_beat=256, max_len_backbone=512
        )

    def encode_conditions(self, chord_ids, beat_ids, train=False, rng=None):
        return ConditionEncoding.empty()

    def forward(self, ids, cond=None, train=False, rng=None):
        return Tensor(self.row_fn(np.asarray(ids)))


def oracle_model(corpus, vocab):
    """Predicts every next token perfectly by matching known prefixes."""
    table = {}
    for piece in corpus:
        seq = encode_score(piece, vocab)
        full = np.asarray(seq.backbone)
        table[tuple(full[:-1])] = full[1:]

    def rows(ids):
        targets = table[tuple(ids)]
        logits = np.full((ids.size, 192), -100.0)
        logits[np.arange(ids.size), targets] = 100.0
        return logits

    return StubModel(rows)


def random_model(seed=0):
    def rows(ids):
        rng = np.random.default_rng(seed + ids.size * 7919 + int(ids.sum()))
        return rng.normal(size=(ids.size, 192))

    return StubModel(rows)


def test_oracle_model_scores_perfectly(vocab, mini_corpus):
    model = oracle_model(mini_corpus, vocab)
    report = evaluate_model(model, mini_corpus, vocab)
    assert report.accuracy == 1.0
    assert report.pitch_accuracy == 1.0
    assert all(v == 0.0 for v in report.ter.values())
    assert teacher_forcing_accuracy(model, mini_corpus) == 1.0
    for voice in "SATB":
        assert token_error_rate(model, mini_corpus, voice) == 0.0


def test_random_model_scores_at_chance(vocab, mini_corpus):
    report = evaluate_model(random_model(), mini_corpus, vocab)
    n = report.n_positions
    p = 1.0 / 192
    sigma = (p * (1 - p) / n) ** 0.5
    assert abs(report.accuracy - p) < 3 * sigma


def test_per_voice_errors_partition_pitch_errors(vocab, mini_corpus):
    """The four per-voice tallies must add up to an independently counted
    total over pitch positions."""
    model = random_model(3)
    report = evaluate_model(model, mini_corpus, vocab)

    total_errors = 0
    total_pitch = 0
    per_voice = {v: [0, 0] for v in "satb"}
    for piece in mini_corpus:
        seq = encode_score(piece, vocab)
        full = np.asarray(seq.backbone)
        pred = model.forward(full[:-1]).data.argmax(axis=-1)
        targets = full[1:]
        for i in range(targets.size):
            offset = i % 9
            if offset in (2, 4, 6, 8):
                voice = "satb"[(offset - 2) // 2]
                per_voice[voice][1] += 1
                total_pitch += 1
                if pred[i] != targets[i]:
                    per_voice[voice][0] += 1
                    total_errors += 1
    assert report.n_pitch_positions == total_pitch
    assert sum(errors for errors, _ in per_voice.values()) == total_errors
    for voice, (errors, count) in per_voice.items():
        assert report.ter[voice] == pytest.approx(errors / count)


def test_ter_is_one_minus_restricted_accuracy(vocab, mini_corpus):
    report = evaluate_model(random_model(11), mini_corpus, vocab)
    weighted = sum(
        report.ter[v] for v in "satb"
    ) / 4.0
    # equal per-voice position counts make the identity exact
    assert report.pitch_accuracy == pytest.approx(1.0 - weighted)


def test_metrics_are_pure_functions(vocab, mini_corpus):
    model = random_model(4)
    a = evaluate_model(model, mini_corpus, vocab)
    b = evaluate_model(model, mini_corpus, vocab)
    assert a == b


def test_empty_split_raises(vocab):
    with pytest.raises(EmptySplit):
        evaluate_model(random_model(), [], vocab)


def test_no_conditions_flag_changes_nothing_for_stub(vocab, mini_corpus):
    model = oracle_model(mini_corpus, vocab)
    with_conditions = teacher_forcing_accuracy(model, mini_corpus, True)
    without = teacher_forcing_accuracy(model, mini_corpus, False)
    assert with_conditions == without == 1.0


def test_token_error_rate_rejects_unknown_voice(vocab, mini_corpus):
    with pytest.raises(ValueError):
        token_error_rate(random_model(), mini_corpus, "X")


# --- consistency metrics --------------------------------------------------------------

def test_rhythm_consistency_of_own_conditions_is_one(vocab, mini_corpus):
    for piece in mini_corpus:
        seq = encode_score(piece, vocab)
        assert rhythm_consistency(piece, seq.beat_cond, vocab) == 1.0


def test_rhythm_consistency_counts_mismatched_cells(vocab, mini_corpus):
    piece = mini_corpus[0]
    seq = encode_score(piece, vocab)
    cond = list(seq.beat_cond)
    # flip four soprano cells to states they do not have
    flips = 0
    for t in range(4):
        current = cond[4 * t]
        replacement = vocab.beat_id("S", "rest")
        if replacement == current:
            replacement = vocab.beat_id("S", "on")
        cond[4 * t] = replacement
        flips += 1
    expected = 1.0 - flips / (4 * piece.n_steps)
    assert rhythm_consistency(piece, cond, vocab) == pytest.approx(expected)


def test_rhythm_consistency_length_check(vocab, mini_corpus):
    with pytest.raises(LengthMismatch):
        rhythm_consistency(mini_corpus[0], [180], vocab)


def _column_score(pitches, chord="0:maj"):
    voices = tuple(
        (VoiceStep("on", p),) if p is not None else (VoiceStep("rest"),)
        for p in pitches
    )
    return ChoraleScore(name="col", chords=(chord,), voices=voices)


def test_chord_consistency_exact_triad(vocab):
    # C, E, G, C over a C major triad
    score = _column_score([72, 64, 55, 48])
    out = chord_consistency(score, [vocab.chord_id("0:maj")], vocab)
    assert out["chord_consistency"] == 1.0
    assert out["sounding_count"] == 4


def test_chord_consistency_three_quarters(vocab):
    # C, E, G, A: three chord tones out of four sounding pitches
    score = _column_score([72, 64, 55, 45])
    out = chord_consistency(score, [vocab.chord_id("0:maj")], vocab)
    assert out["chord_consistency"] == pytest.approx(0.75)


def test_chord_consistency_all_rest_is_vacuous(vocab):
    score = _column_score([None, None, None, None], chord="other")
    out = chord_consistency(score, [vocab.chord_id("other")], vocab)
    assert out["chord_consistency"] == 1.0
    assert out["sounding_count"] == 0


def test_chord_consistency_other_counts_separately(vocab):
    score = _column_score([71, 65, 59, 42], chord="other")  # not any triad
    out = chord_consistency(score, [vocab.chord_id("other")], vocab)
    assert out["chord_consistency"] == 1.0
    assert out["other_chord_sounding"] == 4


def test_chord_consistency_length_check(vocab, mini_corpus):
    with pytest.raises(LengthMismatch):
        chord_consistency(mini_corpus[0], [vocab.chord_id("0:maj")], vocab)


def test_mini_corpus_lower_voices_are_chord_tones(vocab, mini_corpus):
    """The bundled corpus harmonizes A/T/B strictly from the step's triad."""
    for piece in mini_corpus:
        seq = encode_score(piece, vocab)
        full = chord_consistency(piece, seq.chord_cond, vocab)
        assert full["sounding_count"] > 0
        lower_only = ChoraleScore(
            name=piece.name,
            chords=piece.chords,
            voices=(tuple(VoiceStep("rest") for _ in range(piece.n_steps)),)
            + piece.voices[1:],
        )
        out = chord_consistency(lower_only, seq.chord_cond, vocab)
        assert out["chord_consistency"] == 1.0
