"""Grammar-constrained autoregressive sampling.

Every backbone position admits only one token class, so sampling masks
logits down to the legal candidates before applying the decoding strategy.
Beyond the class mask, the sampler enforces note semantics:

* beat slots offer only the owning voice's states, and never `hold` when
  the voice has no sounding antecedent,
* a pitch slot after a `rest` beat is forced to REST, after a `hold` beat
  to the antecedent pitch, and after an onset it excludes REST.

A forced pitch that disagrees with the model's class-masked argmax counts
as a repair, so clamping is observable.  Fixed tokens (a pinned melody,
``force_rhythm``) short-circuit everything.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AllMasked, GrammarViolation, LengthExceeded, LengthMismatch
from .model import ChoraleTransformer
from .score import (
    ChoraleScore,
    TokenSequence,
    backbone_length,
    conditions_from_backbone,
    decode_tokens,
    position_class,
    position_voice,
    validate_backbone,
)
from .vocab import TokenClass, EventVocabulary, VOICES, build_vocabulary

STRATEGIES = ("greedy", "temperature", "top_k")


@dataclass
class SamplingSpec:
    strategy: str = "temperature"
    temperature: float = 1.0
    k: int = 8

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.strategy == "top_k" and self.k < 1:
            raise ValueError("top_k needs k >= 1")


@dataclass
class GenerationRequest:
    n_steps: int
    chord_cond: np.ndarray | None = None     # (n_steps,) combined ids
    beat_cond: np.ndarray | None = None      # (4 * n_steps,) combined ids
    fixed_tokens: dict[int, int] = field(default_factory=dict)
    sampling: SamplingSpec = field(default_factory=SamplingSpec)
    seed: int = 0
    force_rhythm: bool = False

    def validate(self, vocab: EventVocabulary, max_len_backbone: int) -> None:
        self.sampling.validate()
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        if backbone_length(self.n_steps) > max_len_backbone:
            raise LengthExceeded(
                f"{self.n_steps} steps need {backbone_length(self.n_steps)} "
                f"tokens, cap is {max_len_backbone}"
            )
        if self.chord_cond is not None and len(self.chord_cond) != self.n_steps:
            raise LengthMismatch(
                f"chord condition length {len(self.chord_cond)} vs "
                f"{self.n_steps} steps"
            )
        if self.beat_cond is not None and len(self.beat_cond) != 4 * self.n_steps:
            raise LengthMismatch(
                f"beat condition length {len(self.beat_cond)} vs "
                f"{4 * self.n_steps} cells"
            )
        if self.force_rhythm and self.beat_cond is None:
            raise LengthMismatch("force_rhythm needs a beat condition")
        last = backbone_length(self.n_steps) - 1
        for pos, tok in self.fixed_tokens.items():
            if not 1 <= pos <= last:
                raise GrammarViolation(f"fixed position {pos} outside 1..{last}")
            want = position_class(pos)
            got = vocab.token_class(tok)
            if got is not want:
                raise GrammarViolation(
                    f"fixed token at {pos} must be {want.value}, got {got.value}"
                )
            if want is TokenClass.BEAT:
                voice, _ = vocab.beat_voice_state(tok)
                if voice != VOICES[position_voice(pos)]:
                    raise GrammarViolation(
                        f"fixed beat at {pos} belongs to voice "
                        f"{VOICES[position_voice(pos)]}, got {voice}"
                    )


@dataclass
class GenerationResult:
    score: ChoraleScore
    tokens: TokenSequence
    repairs: int


def _class_ids(vocab: EventVocabulary) -> dict[TokenClass, np.ndarray]:
    return {
        cls: np.asarray(vocab.class_ids(cls), dtype=np.int64)
        for cls in (TokenClass.PITCH, TokenClass.CHORD, TokenClass.BEAT)
    }


def _pick(
    logits_row: np.ndarray,
    allowed: np.ndarray,
    sampling: SamplingSpec,
    rng: np.random.Generator,
) -> int:
    if allowed.size == 0:
        raise AllMasked("sampling mask removed every candidate")
    sub = logits_row[allowed]
    if sampling.strategy == "greedy":
        return int(allowed[int(np.argmax(sub))])
    if sampling.strategy == "top_k" and sampling.k < sub.size:
        keep = np.argpartition(sub, -sampling.k)[-sampling.k:]
        allowed = allowed[keep]
        sub = sub[keep]
    z = (sub - sub.max()) / sampling.temperature
    p = np.exp(z)
    p /= p.sum()
    return int(rng.choice(allowed, p=p))


def masked_sample(
    logits_row: np.ndarray,
    position: int,
    vocab: EventVocabulary,
    fixed: dict[int, int],
    sampling: SamplingSpec,
    rng: np.random.Generator,
    allowed: np.ndarray | None = None,
) -> int:
    """Sample one token legal for ``position``; fixed positions bypass
    the distribution entirely."""
    if position in fixed:
        return fixed[position]
    if allowed is None:
        allowed = np.asarray(
            vocab.class_ids(position_class(position)), dtype=np.int64
        )
    return _pick(np.asarray(logits_row, dtype=np.float64), allowed, sampling, rng)


def generate(
    model: ChoraleTransformer,
    request: GenerationRequest,
    vocab: EventVocabulary | None = None,
) -> GenerationResult:
    """Sample a full piece left to right under the request's constraints."""
    vocab = vocab or build_vocabulary()
    request.validate(vocab, model.config.max_len_backbone)
    rng = np.random.default_rng(request.seed)
    sampling = request.sampling

    cond = model.encode_conditions(request.chord_cond, request.beat_cond)

    fixed = dict(request.fixed_tokens)
    if request.force_rhythm:
        for t in range(request.n_steps):
            for v in range(4):
                pos = 1 + 9 * t + 1 + 2 * v
                fixed.setdefault(pos, int(request.beat_cond[4 * t + v]))

    ids = _class_ids(vocab)
    beat_ids_of_voice = [
        np.asarray(
            [vocab.beat_id(VOICES[v], s) for s in ("on", "hold", "rest")],
            dtype=np.int64,
        )
        for v in range(4)
    ]
    pitch_only = ids[TokenClass.PITCH][ids[TokenClass.PITCH] != vocab.rest_id]

    backbone: list[int] = [vocab.bos_id]
    prev_pitch: list[int | None] = [None] * 4  # last step's pitch token per voice
    prev_state: list[str | None] = [None] * 4
    repairs = 0

    total = backbone_length(request.n_steps)
    for pos in range(1, total):
        logits = model.forward(np.asarray(backbone, dtype=np.int64), cond)
        row = logits.data[-1]
        t, offset = divmod(pos - 1, 9)

        if offset == 0:
            tok = masked_sample(row, pos, vocab, fixed, sampling, rng,
                                allowed=ids[TokenClass.CHORD])
        elif offset % 2 == 1:
            v = (offset - 1) // 2
            allowed = beat_ids_of_voice[v]
            if t == 0 or prev_state[v] == "rest":
                hold_id = vocab.beat_id(VOICES[v], "hold")
                allowed = allowed[allowed != hold_id]
            tok = masked_sample(row, pos, vocab, fixed, sampling, rng,
                                allowed=allowed)
            _, prev_state[v] = vocab.beat_voice_state(tok)
        else:
            v = (offset - 2) // 2
            state = prev_state[v]
            pitch_class = ids[TokenClass.PITCH]
            unforced = int(pitch_class[row[pitch_class].argmax()])
            if pos in fixed:
                tok = fixed[pos]
            elif state == "rest":
                tok = vocab.rest_id
                repairs += int(unforced != tok)
            elif state == "hold":
                if prev_pitch[v] is None:
                    raise GrammarViolation(
                        f"position {pos}: hold for voice {VOICES[v]} has no "
                        f"antecedent pitch (check fixed tokens)"
                    )
                tok = prev_pitch[v]
                repairs += int(unforced != tok)
            else:
                tok = masked_sample(row, pos, vocab, fixed, sampling, rng,
                                    allowed=pitch_only)
            prev_pitch[v] = None if tok == vocab.rest_id else tok

        backbone.append(int(tok))

    seq_backbone = tuple(backbone)
    validate_backbone(seq_backbone, vocab)
    chord_cond, beat_cond = conditions_from_backbone(seq_backbone, vocab)
    tokens = TokenSequence(seq_backbone, chord_cond, beat_cond)
    score = decode_tokens(tokens, vocab, name="generated")
    return GenerationResult(score=score, tokens=tokens, repairs=repairs)
