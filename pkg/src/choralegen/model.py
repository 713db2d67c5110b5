"""The conditional chorale transformer and its discriminator.

The network has three stages.  Stage one embeds the chord and the
per-voice rhythm condition sequences and runs each through one unmasked
transformer layer, yielding condition feature matrices.  Stage two is the
causal backbone: its first layer projects the condition features into
extra key/value blocks that every query may attend to (the token positions
themselves stay causally masked), and the remaining layers use learned
relative-position attention.  Stage three decodes features into next-token
logits through a stack of three linear layers with normalization and
dropout.

The discriminator scores a sequence of vocabulary-distribution rows
(one-hot for corpus data, softmax rows for model output) with a linear
input projection, one unmasked transformer layer and a mean-pooled
sigmoid readout.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, LengthExceeded, ShapeMismatch
from .vocab import build_vocabulary


@dataclass
class ModelConfig:
    """Architecture hyperparameters; serialized field-for-field as JSON."""

    d_model: int = 256
    n_backbone_layers: int = 4
    n_heads_backbone: int = 8
    ffn_backbone: int = 1024
    n_heads_cond: int = 8
    ffn_cond: int = 256
    max_len_chord: int = 256
    max_len_beat: int = 1024
    max_len_backbone: int = 2048
    dropout_backbone: float = 0.1
    disc_heads: int = 4
    disc_ffn: int = 512
    disc_dropout: float = 0.5
    vocab_size: int = field(default_factory=lambda: build_vocabulary().size)
    use_chord_cond: bool = True
    use_beat_cond: bool = True
    use_relative_attention: bool = True
    share_relative_table: bool = False

    def validate(self) -> None:
        for heads in (self.n_heads_backbone, self.n_heads_cond, self.disc_heads):
            if heads < 1 or self.d_model % heads != 0:
                raise ConfigError(
                    f"d_model={self.d_model} not divisible by head count {heads}"
                )
        if self.max_len_beat != 4 * self.max_len_chord:
            raise ConfigError(
                f"max_len_beat={self.max_len_beat} must be 4*max_len_chord="
                f"{4 * self.max_len_chord}"
            )
        if self.n_backbone_layers < 1:
            raise ConfigError("need at least one backbone layer")
        for rate in (self.dropout_backbone, self.disc_dropout):
            if not 0.0 <= rate < 1.0:
                raise ConfigError(f"dropout rate {rate} outside [0, 1)")
        for dim in (self.d_model, self.ffn_backbone, self.ffn_cond,
                    self.disc_ffn, self.vocab_size, self.max_len_chord,
                    self.max_len_backbone):
            if dim < 1:
                raise ConfigError("all dimensions must be positive")

    @property
    def usable_timesteps(self) -> int:
        return (self.max_len_backbone - 1) // 9

    @property
    def max_steps(self) -> int:
        """Longest piece every stage accepts (backbone and condition caps)."""
        return min(self.usable_timesteps, self.max_len_chord, self.max_len_beat // 4)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        config = cls(**data)
        config.validate()
        return config

    @classmethod
    def load(cls, path: str | Path) -> "ModelConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


@dataclass
class ConditionEncoding:
    """Stage-one outputs; a missing entry means that condition is EMPTY."""

    chord: Tensor | None = None
    beat: Tensor | None = None

    @classmethod
    def empty(cls) -> "ConditionEncoding":
        return cls(None, None)

    @property
    def is_empty(self) -> bool:
        return self.chord is None and self.beat is None


# --- parameter initialisation -------------------------------------------------

def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, (fan_in, fan_out)), requires_grad=True)


def _embedding(rng: np.random.Generator, rows: int, dim: int) -> Tensor:
    return Tensor(rng.normal(0.0, 0.02, (rows, dim)), requires_grad=True)


def _zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(*shape: int) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


class Linear:
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int):
        self.W = _xavier(rng, d_in, d_out)
        self.b = _zeros(d_out)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.W), self.b)

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.W": self.W, f"{prefix}.b": self.b}


class LayerNorm:
    """Normalization with learned gain and shift."""

    def __init__(self, d: int):
        self.gain = _ones(d)
        self.shift = _zeros(d)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.mul(ad.layer_norm(x), self.gain), self.shift)

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.gain": self.gain, f"{prefix}.shift": self.shift}


class FeedForward:
    def __init__(self, rng: np.random.Generator, d: int, hidden: int):
        self.inner = Linear(rng, d, hidden)
        self.outer = Linear(rng, hidden, d)

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(ad.relu(self.inner(x)))

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {
            **self.inner.named_params(f"{prefix}.inner"),
            **self.outer.named_params(f"{prefix}.outer"),
        }


# --- attention machinery --------------------------------------------------------

def split_heads(x: Tensor, n_heads: int) -> Tensor:
    """(L, d) -> (heads, L, d/heads)."""
    length, d = x.shape
    return ad.transpose(ad.reshape(x, (length, n_heads, d // n_heads)), (1, 0, 2))


def merge_heads(x: Tensor) -> Tensor:
    """(heads, L, d_head) -> (L, d)."""
    h, length, dh = x.shape
    return ad.reshape(ad.transpose(x, (1, 0, 2)), (length, h * dh))


def scaled_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    mask: np.ndarray | None,
    rate: float,
    train: bool,
    rng: np.random.Generator | None,
    extra_scores: Tensor | None = None,
) -> Tensor:
    """Per-head attention; extra_scores (e.g. relative terms) join the
    content scores before the 1/sqrt(d_head) scaling."""
    dh = q.shape[-1]
    scores = ad.matmul(q, ad.transpose(k, (0, 2, 1)))
    if extra_scores is not None:
        scores = ad.add(scores, extra_scores)
    scores = ad.scale(scores, 1.0 / math.sqrt(dh))
    att = ad.softmax(scores, axis=-1, mask=mask)
    att = ad.dropout(att, rate, train, rng)
    return ad.matmul(att, v)


def relative_scores(q: Tensor, table: Tensor, n_heads: int) -> Tensor:
    """Position-relative score term S[q, k] = Q[q] . R[k - q].

    ``table`` holds one embedding per non-positive offset, row 0 being the
    most distant, stored as (rows, heads * d_head).  Sequences longer than
    the table clamp their far offsets onto row 0.  The gathered per-offset
    scores Q R^T are realigned into absolute key positions by the
    pad-reshape-shift trick, costing O(L^2) instead of an O(L^2 d) gather.
    """
    h, length, dh = q.shape
    rows = table.shape[0]
    idx = np.clip(np.arange(rows - length, rows), 0, rows - 1)
    rel = ad.embedding_lookup(table, idx)                       # (L, h*dh)
    rel = ad.transpose(ad.reshape(rel, (length, h, dh)), (1, 0, 2))
    scores = ad.matmul(q, ad.transpose(rel, (0, 2, 1)))         # (h, L, L)
    pad = Tensor(np.zeros((h, length, 1)))
    padded = ad.concat([pad, scores], axis=2)                   # (h, L, L+1)
    skewed = ad.reshape(padded, (h, length + 1, length))
    return ad.tslice(skewed, (slice(None), slice(1, None), slice(None)))


def causal_mask(length: int, n_cond: int = 0) -> np.ndarray:
    """Boolean keep-mask over (length, n_cond + length) attention scores;
    condition keys are visible to every query, token keys causally."""
    mask = np.ones((length, n_cond + length), dtype=bool)
    mask[:, n_cond:] = np.tril(np.ones((length, length), dtype=bool))
    return mask


# --- layers ----------------------------------------------------------------------

class EncoderLayer:
    """Post-norm unmasked transformer layer (stage one, discriminator)."""

    def __init__(self, rng: np.random.Generator, d: int, n_heads: int, ffn: int):
        self.n_heads = n_heads
        self.wq = Linear(rng, d, d)
        self.wk = Linear(rng, d, d)
        self.wv = Linear(rng, d, d)
        self.wo = Linear(rng, d, d)
        self.norm1 = LayerNorm(d)
        self.ffn = FeedForward(rng, d, ffn)
        self.norm2 = LayerNorm(d)

    def __call__(
        self, x: Tensor, rate: float, train: bool, rng: np.random.Generator | None
    ) -> Tensor:
        q = split_heads(self.wq(x), self.n_heads)
        k = split_heads(self.wk(x), self.n_heads)
        v = split_heads(self.wv(x), self.n_heads)
        ctx = scaled_attention(q, k, v, None, rate, train, rng)
        att_out = ad.dropout(self.wo(merge_heads(ctx)), rate, train, rng)
        x = self.norm1(ad.add(x, att_out))
        ffn_out = ad.dropout(self.ffn(x), rate, train, rng)
        return self.norm2(ad.add(x, ffn_out))

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, part in (("wq", self.wq), ("wk", self.wk), ("wv", self.wv),
                           ("wo", self.wo), ("norm1", self.norm1),
                           ("ffn", self.ffn), ("norm2", self.norm2)):
            out.update(part.named_params(f"{prefix}.{name}"))
        return out


class ConditionEncoder:
    """Token + learned position embeddings into one unmasked layer."""

    def __init__(
        self,
        rng: np.random.Generator,
        vocab_size: int,
        d: int,
        n_heads: int,
        ffn: int,
        max_len: int,
        label: str,
    ):
        self.max_len = max_len
        self.label = label
        self.token_emb = _embedding(rng, vocab_size, d)
        self.pos_emb = _embedding(rng, max_len, d)
        self.layer = EncoderLayer(rng, d, n_heads, ffn)

    def __call__(
        self,
        ids: np.ndarray,
        rate: float,
        train: bool,
        rng: np.random.Generator | None,
    ) -> Tensor | None:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size == 0:
            return None
        if ids.size > self.max_len:
            raise LengthExceeded(
                f"{self.label} condition length {ids.size} exceeds {self.max_len}"
            )
        x = ad.add(
            ad.embedding_lookup(self.token_emb, ids),
            ad.embedding_lookup(self.pos_emb, np.arange(ids.size)),
        )
        x = ad.dropout(x, rate, train, rng)
        return self.layer(x, rate, train, rng)

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.token_emb": self.token_emb,
            f"{prefix}.pos_emb": self.pos_emb,
            **self.layer.named_params(f"{prefix}.layer"),
        }


class ConditionalAttentionLayer:
    """Causal self-attention whose key/value lists are extended with
    projections of the condition features; conditions see no mask."""

    def __init__(
        self,
        rng: np.random.Generator,
        d: int,
        n_heads: int,
        ffn: int,
        with_chord: bool,
        with_beat: bool,
    ):
        self.n_heads = n_heads
        self.wq = Linear(rng, d, d)
        self.wk = Linear(rng, d, d)
        self.wv = Linear(rng, d, d)
        self.wk_chord = Linear(rng, d, d) if with_chord else None
        self.wv_chord = Linear(rng, d, d) if with_chord else None
        self.wk_beat = Linear(rng, d, d) if with_beat else None
        self.wv_beat = Linear(rng, d, d) if with_beat else None
        self.wo = Linear(rng, d, d)
        self.norm1 = LayerNorm(d)
        self.ffn = FeedForward(rng, d, ffn)
        self.norm2 = LayerNorm(d)

    def __call__(
        self,
        x: Tensor,
        cond: ConditionEncoding,
        rate: float,
        train: bool,
        rng: np.random.Generator | None,
    ) -> Tensor:
        length = x.shape[0]
        q = split_heads(self.wq(x), self.n_heads)
        k_parts: list[Tensor] = []
        v_parts: list[Tensor] = []
        n_cond = 0
        if cond.chord is not None:
            if self.wk_chord is None:
                raise ConfigError("model was built without chord conditioning")
            k_parts.append(split_heads(self.wk_chord(cond.chord), self.n_heads))
            v_parts.append(split_heads(self.wv_chord(cond.chord), self.n_heads))
            n_cond += cond.chord.shape[0]
        if cond.beat is not None:
            if self.wk_beat is None:
                raise ConfigError("model was built without rhythm conditioning")
            k_parts.append(split_heads(self.wk_beat(cond.beat), self.n_heads))
            v_parts.append(split_heads(self.wv_beat(cond.beat), self.n_heads))
            n_cond += cond.beat.shape[0]
        k = split_heads(self.wk(x), self.n_heads)
        v = split_heads(self.wv(x), self.n_heads)
        if k_parts:
            k = ad.concat(k_parts + [k], axis=1)
            v = ad.concat(v_parts + [v], axis=1)
        ctx = scaled_attention(
            q, k, v, causal_mask(length, n_cond), rate, train, rng
        )
        att_out = ad.dropout(self.wo(merge_heads(ctx)), rate, train, rng)
        x = self.norm1(ad.add(x, att_out))
        ffn_out = ad.dropout(self.ffn(x), rate, train, rng)
        return self.norm2(ad.add(x, ffn_out))

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        parts = [("wq", self.wq), ("wk", self.wk), ("wv", self.wv), ("wo", self.wo),
                 ("norm1", self.norm1), ("ffn", self.ffn), ("norm2", self.norm2)]
        if self.wk_chord is not None:
            parts += [("wk_chord", self.wk_chord), ("wv_chord", self.wv_chord)]
        if self.wk_beat is not None:
            parts += [("wk_beat", self.wk_beat), ("wv_beat", self.wv_beat)]
        for name, part in parts:
            out.update(part.named_params(f"{prefix}.{name}"))
        return out


class RelativeAttentionLayer:
    """Causal self-attention with a learned relative-position score term.

    Built with ``table=None`` (ablation) it is plain causal attention.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        d: int,
        n_heads: int,
        ffn: int,
        table: Tensor | None,
        owns_table: bool,
    ):
        self.n_heads = n_heads
        self.table = table
        self.owns_table = owns_table
        self.wq = Linear(rng, d, d)
        self.wk = Linear(rng, d, d)
        self.wv = Linear(rng, d, d)
        self.wo = Linear(rng, d, d)
        self.norm1 = LayerNorm(d)
        self.ffn = FeedForward(rng, d, ffn)
        self.norm2 = LayerNorm(d)

    def __call__(
        self, x: Tensor, rate: float, train: bool, rng: np.random.Generator | None
    ) -> Tensor:
        length = x.shape[0]
        q = split_heads(self.wq(x), self.n_heads)
        k = split_heads(self.wk(x), self.n_heads)
        v = split_heads(self.wv(x), self.n_heads)
        extra = None
        if self.table is not None:
            extra = relative_scores(q, self.table, self.n_heads)
        ctx = scaled_attention(
            q, k, v, causal_mask(length), rate, train, rng, extra_scores=extra
        )
        att_out = ad.dropout(self.wo(merge_heads(ctx)), rate, train, rng)
        x = self.norm1(ad.add(x, att_out))
        ffn_out = ad.dropout(self.ffn(x), rate, train, rng)
        return self.norm2(ad.add(x, ffn_out))

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, part in (("wq", self.wq), ("wk", self.wk), ("wv", self.wv),
                           ("wo", self.wo), ("norm1", self.norm1),
                           ("ffn", self.ffn), ("norm2", self.norm2)):
            out.update(part.named_params(f"{prefix}.{name}"))
        if self.table is not None and self.owns_table:
            out[f"{prefix}.rel_table"] = self.table
        return out


class DecoderHead:
    """Three linear layers; the first two are normalized and dropped out."""

    def __init__(self, rng: np.random.Generator, d: int, vocab_size: int):
        self.lin1 = Linear(rng, d, d)
        self.norm1 = LayerNorm(d)
        self.lin2 = Linear(rng, d, d)
        self.norm2 = LayerNorm(d)
        self.lin3 = Linear(rng, d, vocab_size)

    def __call__(
        self, x: Tensor, rate: float, train: bool, rng: np.random.Generator | None
    ) -> Tensor:
        x = ad.dropout(self.norm1(self.lin1(x)), rate, train, rng)
        x = ad.dropout(self.norm2(self.lin2(x)), rate, train, rng)
        return self.lin3(x)

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, part in (("lin1", self.lin1), ("norm1", self.norm1),
                           ("lin2", self.lin2), ("norm2", self.norm2),
                           ("lin3", self.lin3)):
            out.update(part.named_params(f"{prefix}.{name}"))
        return out


# --- the generator model -----------------------------------------------------------

class ChoraleTransformer:
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        d = config.d_model
        self.token_emb = _embedding(rng, config.vocab_size, d)
        self.pos_emb = _embedding(rng, config.max_len_backbone, d)

        self.chord_encoder = (
            ConditionEncoder(rng, config.vocab_size, d, config.n_heads_cond,
                             config.ffn_cond, config.max_len_chord, "chord")
            if config.use_chord_cond else None
        )
        self.beat_encoder = (
            ConditionEncoder(rng, config.vocab_size, d, config.n_heads_cond,
                             config.ffn_cond, config.max_len_beat, "beat")
            if config.use_beat_cond else None
        )

        self.first_layer = ConditionalAttentionLayer(
            rng, d, config.n_heads_backbone, config.ffn_backbone,
            with_chord=config.use_chord_cond, with_beat=config.use_beat_cond,
        )

        self.shared_table: Tensor | None = None
        if config.use_relative_attention and config.share_relative_table:
            self.shared_table = _embedding(
                rng, config.max_len_backbone,
                config.n_heads_backbone * (d // config.n_heads_backbone),
            )
        self.rel_layers: list[RelativeAttentionLayer] = []
        for _ in range(config.n_backbone_layers - 1):
            if not config.use_relative_attention:
                table, owns = None, False
            elif config.share_relative_table:
                table, owns = self.shared_table, False
            else:
                table, owns = _embedding(rng, config.max_len_backbone, d), True
            self.rel_layers.append(
                RelativeAttentionLayer(
                    rng, d, config.n_heads_backbone, config.ffn_backbone,
                    table, owns,
                )
            )
        self.head = DecoderHead(rng, d, config.vocab_size)

    # --- stage one ---

    def encode_chord_condition(
        self,
        chord_ids: np.ndarray,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor | None:
        ids = np.asarray(chord_ids, dtype=np.int64)
        if ids.size == 0:
            return None
        if self.chord_encoder is None:
            raise ConfigError("model was built without chord conditioning")
        return self.chord_encoder(ids, self.config.dropout_backbone, train, rng)

    def encode_beat_condition(
        self,
        beat_ids: np.ndarray,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor | None:
        ids = np.asarray(beat_ids, dtype=np.int64)
        if ids.size == 0:
            return None
        if self.beat_encoder is None:
            raise ConfigError("model was built without rhythm conditioning")
        return self.beat_encoder(ids, self.config.dropout_backbone, train, rng)

    def encode_conditions(
        self,
        chord_ids: np.ndarray | None,
        beat_ids: np.ndarray | None,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> ConditionEncoding:
        chord = None
        beat = None
        if chord_ids is not None and self.chord_encoder is not None:
            chord = self.encode_chord_condition(chord_ids, train, rng)
        if beat_ids is not None and self.beat_encoder is not None:
            beat = self.encode_beat_condition(beat_ids, train, rng)
        return ConditionEncoding(chord=chord, beat=beat)

    # --- stage two + three ---

    def forward(
        self,
        token_ids: np.ndarray,
        cond: ConditionEncoding | None = None,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Next-token logits, one row per input position."""
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.ndim != 1:
            raise ShapeMismatch(f"token ids must be 1-D, got shape {ids.shape}")
        if ids.size > self.config.max_len_backbone:
            raise LengthExceeded(
                f"sequence length {ids.size} exceeds {self.config.max_len_backbone}"
            )
        if cond is None:
            cond = ConditionEncoding.empty()
        rate = self.config.dropout_backbone
        x = ad.add(
            ad.embedding_lookup(self.token_emb, ids),
            ad.embedding_lookup(self.pos_emb, np.arange(ids.size)),
        )
        x = ad.dropout(x, rate, train, rng)
        x = self.first_layer(x, cond, rate, train, rng)
        for layer in self.rel_layers:
            x = layer(x, rate, train, rng)
        return self.head(x, rate, train, rng)

    # --- parameters ---

    def named_params(self) -> dict[str, Tensor]:
        out = {
            "backbone.token_emb": self.token_emb,
            "backbone.pos_emb": self.pos_emb,
        }
        if self.chord_encoder is not None:
            out.update(self.chord_encoder.named_params("chord_encoder"))
        if self.beat_encoder is not None:
            out.update(self.beat_encoder.named_params("beat_encoder"))
        out.update(self.first_layer.named_params("backbone.layer0.attn"))
        if self.shared_table is not None:
            out["backbone.rel_table"] = self.shared_table
        for i, layer in enumerate(self.rel_layers, start=1):
            out.update(layer.named_params(f"backbone.layer{i}.attn"))
        out.update(self.head.named_params("head"))
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.named_params().values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_params().items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.named_params()
        missing = set(params) - set(arrays)
        if missing:
            raise ConfigError(f"checkpoint is missing parameters: {sorted(missing)[:5]}")
        for name, p in params.items():
            arr = arrays[name]
            if arr.shape != p.shape:
                raise ShapeMismatch(
                    f"checkpoint {name}: {arr.shape} vs model {p.shape}"
                )
            p.data = arr.astype(np.float64).copy()


class Discriminator:
    """Scores how corpus-like a sequence of token-distribution rows is."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        d = config.d_model
        self.input_proj = Linear(rng, config.vocab_size, d)
        self.layer = EncoderLayer(rng, d, config.disc_heads, config.disc_ffn)
        self.readout = Linear(rng, d, 1)

    def forward_logit(
        self,
        rows: Tensor,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        if rows.data.ndim != 2 or rows.shape[1] != self.config.vocab_size:
            raise ShapeMismatch(
                f"discriminator input {rows.shape}, expected "
                f"(length, {self.config.vocab_size})"
            )
        rate = self.config.disc_dropout
        x = self.input_proj(rows)
        x = self.layer(x, rate, train, rng)
        pooled = ad.reshape(ad.mean(x, axis=0), (1, self.config.d_model))
        return ad.reshape(self.readout(pooled), ())

    def forward(
        self,
        rows: Tensor,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Probability in (0, 1) that the rows come from the corpus."""
        return ad.sigmoid(self.forward_logit(rows, train, rng))

    def named_params(self) -> dict[str, Tensor]:
        return {
            **self.input_proj.named_params("disc.input_proj"),
            **self.layer.named_params("disc.layer"),
            **self.readout.named_params("disc.readout"),
        }

    def n_params(self) -> int:
        return sum(p.size for p in self.named_params().values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_params().items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.named_params().items():
            arr = arrays[name]
            if arr.shape != p.shape:
                raise ShapeMismatch(
                    f"checkpoint {name}: {arr.shape} vs model {p.shape}"
                )
            p.data = arr.astype(np.float64).copy()
