"""Losses and the teacher-forced training loop.

Each step does a generator update on the weighted sum of three terms:

* the conditioned reconstruction loss: mean bits (-log2 likelihood) of the
  next token given the sequence's own chord/rhythm conditions,
* the unconditioned reconstruction loss: the same bits with both
  conditions EMPTY, keeping generation usable without prompts,
* a non-saturating adversarial term: -log D(softmax rows), pushing the
  model's teacher-forced output distributions toward corpus one-hots.

When the adversarial weight is positive, the discriminator then takes its
own binary cross-entropy step (natural log) on real one-hot rows versus
the generator's detached softmax rows.  The two optimizers touch disjoint
parameter sets.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_arrays, save_arrays
from .errors import ConfigError, NonFiniteValue, TrainingDiverged
from .model import ChoraleTransformer, ConditionEncoding, Discriminator, ModelConfig
from .optim import Adam
from .score import ChoraleScore, TokenSequence, backbone_length, encode_score
from .vocab import EventVocabulary, build_vocabulary

LN2 = math.log(2.0)


@dataclass
class LossWeights:
    """Non-negative term weights; zero disables a term."""

    conditioned: float = 1.0
    unconditioned: float = 0.25
    adversarial: float = 0.1

    def validate(self) -> None:
        if self.conditioned <= 0:
            raise ConfigError("the conditioned loss weight must be positive")
        if self.unconditioned < 0 or self.adversarial < 0:
            raise ConfigError("loss weights must be non-negative")

    @classmethod
    def parse(cls, text: str) -> "LossWeights":
        parts = [float(p) for p in text.split(",")]
        if len(parts) != 3:
            raise ConfigError(f"expected three comma-separated weights, got {text!r}")
        w = cls(*parts)
        w.validate()
        return w


@dataclass
class TrainSettings:
    lr: float = 1e-3
    batch_size: int = 4
    window_steps: int = 32
    val_fraction: float = 0.0
    stop_at_accuracy: float | None = None

    def validate(self) -> None:
        if self.lr <= 0 or self.batch_size < 1 or self.window_steps < 1:
            raise ConfigError("lr, batch_size and window_steps must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in [0, 1)")


@dataclass
class TrainingExample:
    """One windowed sequence: shifted inputs/targets plus its conditions."""

    inputs: np.ndarray        # (1 + 9w - 1,) token ids, BOS first
    targets: np.ndarray       # (9w,) next-token ids, PAD beyond the real steps
    loss_mask: np.ndarray     # (9w,) float, 0 where the target is PAD
    chord_cond: np.ndarray    # (real_steps,)
    beat_cond: np.ndarray     # (4 * real_steps,)

    @property
    def real_len(self) -> int:
        return int(self.loss_mask.sum())


def make_window(
    seq: TokenSequence,
    vocab: EventVocabulary,
    window_steps: int,
    rng: np.random.Generator,
) -> TrainingExample:
    """Crop to a fixed timestep window (padding short pieces with PAD)."""
    n = seq.n_steps
    if n > window_steps:
        start = int(rng.integers(0, n - window_steps + 1))
        frames = seq.backbone[1 + 9 * start: 1 + 9 * (start + window_steps)]
        backbone = (vocab.bos_id,) + frames
        chord = seq.chord_cond[start:start + window_steps]
        beat = seq.beat_cond[4 * start:4 * (start + window_steps)]
    else:
        backbone = seq.backbone + (vocab.pad_id,) * (9 * (window_steps - n))
        chord = seq.chord_cond
        beat = seq.beat_cond
    full = np.asarray(backbone, dtype=np.int64)
    targets = full[1:]
    return TrainingExample(
        inputs=full[:-1],
        targets=targets,
        loss_mask=(targets != vocab.pad_id).astype(np.float64),
        chord_cond=np.asarray(chord, dtype=np.int64),
        beat_cond=np.asarray(beat, dtype=np.int64),
    )


# --- loss terms ----------------------------------------------------------------

def _masked_bits(logits: Tensor, example: TrainingExample) -> Tensor:
    """Mean -log2 likelihood of the targets over non-PAD positions."""
    nll = ad.cross_entropy(logits, example.targets)
    masked = ad.mul(nll, Tensor(example.loss_mask))
    denom = example.loss_mask.sum()
    return ad.scale(ad.tsum(masked), 1.0 / (denom * LN2))


def conditioned_loss(
    model: ChoraleTransformer,
    example: TrainingExample,
    train: bool = True,
    rng: np.random.Generator | None = None,
) -> Tensor:
    cond = model.encode_conditions(example.chord_cond, example.beat_cond, train, rng)
    logits = model.forward(example.inputs, cond, train, rng)
    return _masked_bits(logits, example)


def unconditioned_loss(
    model: ChoraleTransformer,
    example: TrainingExample,
    train: bool = True,
    rng: np.random.Generator | None = None,
) -> Tensor:
    logits = model.forward(example.inputs, ConditionEncoding.empty(), train, rng)
    return _masked_bits(logits, example)


def one_hot_rows(ids: np.ndarray, vocab_size: int) -> np.ndarray:
    rows = np.zeros((len(ids), vocab_size))
    rows[np.arange(len(ids)), ids] = 1.0
    return rows


def model_soft_rows(
    model: ChoraleTransformer,
    example: TrainingExample,
    train: bool = True,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Teacher-forced softmax rows over the real (non-PAD) positions."""
    cond = model.encode_conditions(example.chord_cond, example.beat_cond, train, rng)
    logits = model.forward(example.inputs, cond, train, rng)
    real = example.real_len
    return ad.softmax(ad.tslice(logits, slice(0, real)), axis=-1)


def generator_adversarial_loss(
    disc: Discriminator,
    soft_rows: Tensor,
    train: bool = True,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """-log D(y) through the soft rows (non-saturating form)."""
    z = disc.forward_logit(soft_rows, train, rng)
    return ad.softplus(ad.scale(z, -1.0))


def discriminator_loss(
    disc: Discriminator,
    real_rows: Tensor,
    fake_rows: Tensor,
    train: bool = True,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """-log D(x) - log(1 - D(y)), natural log."""
    z_real = disc.forward_logit(real_rows, train, rng)
    z_fake = disc.forward_logit(fake_rows, train, rng)
    return ad.add(ad.softplus(ad.scale(z_real, -1.0)), ad.softplus(z_fake))


def total_loss(
    weights: LossWeights,
    l_conditioned: Tensor,
    l_unconditioned: Tensor | None,
    l_adversarial: Tensor | None,
) -> Tensor:
    """Weighted combination of the three generator terms."""
    out = ad.scale(l_conditioned, weights.conditioned)
    if l_unconditioned is not None and weights.unconditioned > 0:
        out = ad.add(out, ad.scale(l_unconditioned, weights.unconditioned))
    if l_adversarial is not None and weights.adversarial > 0:
        out = ad.add(out, ad.scale(l_adversarial, weights.adversarial))
    return out


def _mean_tensors(terms: list[Tensor]) -> Tensor:
    out = terms[0]
    for t in terms[1:]:
        out = ad.add(out, t)
    return ad.scale(out, 1.0 / len(terms))


# --- the loop --------------------------------------------------------------------

@dataclass
class TrainResult:
    model: ChoraleTransformer
    discriminator: Discriminator
    metrics: list[dict]
    best_accuracy: float
    best_state: dict[str, np.ndarray]


def split_corpus(
    n_pieces: int, val_fraction: float, rng: np.random.Generator
) -> tuple[list[int], list[int]]:
    """Deterministic shuffle split; an empty split validates on the
    training pieces (the small-corpus memorization setting)."""
    order = list(rng.permutation(n_pieces))
    n_val = int(round(val_fraction * n_pieces))
    val = order[:n_val]
    train = order[n_val:]
    if not train:
        raise ConfigError("validation fraction leaves no training pieces")
    if not val:
        val = list(train)
    return train, val


def _finite(x: float) -> bool:
    return math.isfinite(x)


def train(
    corpus: list[ChoraleScore],
    config: ModelConfig,
    weights: LossWeights,
    epochs: int,
    settings: TrainSettings | None = None,
    seed: int = 0,
    out_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
    log_fn=None,
) -> TrainResult:
    """Run the full loop; returns the best-accuracy parameter snapshot.

    With ``out_dir`` set, writes metrics.jsonl (appending on resume), the
    best checkpoint, the explicit config, and a resumable optimizer state.
    """
    settings = settings or TrainSettings()
    settings.validate()
    weights.validate()
    config.validate()
    if not corpus:
        raise ConfigError("cannot train on an empty corpus")
    if settings.window_steps > config.max_steps:
        raise ConfigError(
            f"window_steps={settings.window_steps} exceeds the model's "
            f"{config.max_steps}-timestep cap"
        )

    vocab = build_vocabulary()
    rng = np.random.default_rng(seed)
    model = ChoraleTransformer(config, rng)
    disc = Discriminator(config, rng)
    gen_params = model.named_params()
    disc_params = disc.named_params()
    gen_opt = Adam(lr=settings.lr)
    disc_opt = Adam(lr=settings.lr)

    train_idx, val_idx = split_corpus(len(corpus), settings.val_fraction, rng)
    encoded = [encode_score(piece, vocab) for piece in corpus]
    for seq in encoded:
        if backbone_length(min(seq.n_steps, settings.window_steps)) > config.max_len_backbone:
            raise ConfigError("window does not fit the backbone length cap")

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        config.save(out_path / "config.json")

    start_epoch = 0
    best_accuracy = -1.0
    best_state = model.state_arrays()
    metrics: list[dict] = []
    if resume_from is not None:
        start_epoch, best_accuracy = _load_train_state(
            Path(resume_from), model, disc, gen_opt, disc_opt, rng
        )
        best_state = model.state_arrays()

    # Imported here: evaluation depends on the model layer, not on training.
    from .evaluation import sequence_accuracy

    for epoch in range(start_epoch, epochs):
        tic = time.monotonic()
        sums = {"total": 0.0, "cond": 0.0, "uncond": 0.0, "adv": 0.0, "disc": 0.0}
        n_steps = 0
        order = [train_idx[i] for i in rng.permutation(len(train_idx))]
        for lo in range(0, len(order), settings.batch_size):
            batch = [
                make_window(encoded[i], vocab, settings.window_steps, rng)
                for i in order[lo:lo + settings.batch_size]
            ]
            try:
                step_stats = _train_step(
                    model, disc, gen_params, disc_params, gen_opt, disc_opt,
                    batch, weights, vocab, rng,
                )
            except NonFiniteValue as err:
                _dump_divergence(out_path, model, disc, epoch, {"error": str(err)})
            if not all(_finite(v) for v in step_stats.values()):
                _dump_divergence(out_path, model, disc, epoch, step_stats)
            for key in sums:
                sums[key] += step_stats[key]
            n_steps += 1

        val_seqs = [encoded[i] for i in val_idx]
        correct, total = sequence_accuracy(model, val_seqs, vocab, conditions_on=True)
        val_accuracy = correct / total if total else 0.0
        record = {
            "epoch": epoch,
            "train_loss": sums["total"] / n_steps,
            "l_self": sums["cond"] / n_steps,
            "l_null": sums["uncond"] / n_steps,
            "l_adv": sums["adv"] / n_steps,
            "disc_loss": sums["disc"] / n_steps,
            "val_accuracy": val_accuracy,
            "seconds": time.monotonic() - tic,
        }
        metrics.append(record)
        if log_fn is not None:
            log_fn(record)
        if out_path is not None:
            with open(out_path / "metrics.jsonl", "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")

        if val_accuracy > best_accuracy:
            best_accuracy = val_accuracy
            best_state = model.state_arrays()
            if out_path is not None:
                save_arrays(out_path / "checkpoint.ckpt", best_state)

        if out_path is not None:
            _save_train_state(
                out_path, model, disc, gen_opt, disc_opt, rng, epoch + 1,
                best_accuracy,
            )
        if (
            settings.stop_at_accuracy is not None
            and val_accuracy >= settings.stop_at_accuracy
        ):
            break

    return TrainResult(model, disc, metrics, best_accuracy, best_state)


def _train_step(
    model: ChoraleTransformer,
    disc: Discriminator,
    gen_params: dict[str, Tensor],
    disc_params: dict[str, Tensor],
    gen_opt: Adam,
    disc_opt: Adam,
    batch: list[TrainingExample],
    weights: LossWeights,
    vocab: EventVocabulary,
    rng: np.random.Generator,
) -> dict[str, float]:
    ad.zero_grads(gen_params.values())
    ad.zero_grads(disc_params.values())

    # One conditioned forward per example feeds both the reconstruction
    # bits and (when enabled) the adversarial soft rows.
    cond_terms: list[Tensor] = []
    adv_terms: list[Tensor] = []
    fake_rows: list[Tensor] = []
    for ex in batch:
        cond = model.encode_conditions(ex.chord_cond, ex.beat_cond, True, rng)
        logits = model.forward(ex.inputs, cond, True, rng)
        cond_terms.append(_masked_bits(logits, ex))
        if weights.adversarial > 0:
            soft = ad.softmax(ad.tslice(logits, slice(0, ex.real_len)), axis=-1)
            fake_rows.append(soft.detach())
            adv_terms.append(generator_adversarial_loss(disc, soft, True, rng))
    l_cond = _mean_tensors(cond_terms)
    l_uncond = None
    if weights.unconditioned > 0:
        l_uncond = _mean_tensors(
            [unconditioned_loss(model, ex, True, rng) for ex in batch]
        )
    l_adv = _mean_tensors(adv_terms) if adv_terms else None

    total = total_loss(weights, l_cond, l_uncond, l_adv)
    ad.backward(total)
    gen_opt.step(gen_params)

    disc_value = 0.0
    if weights.adversarial > 0:
        ad.zero_grads(gen_params.values())
        ad.zero_grads(disc_params.values())
        disc_terms = []
        for ex, fake in zip(batch, fake_rows):
            real = Tensor(one_hot_rows(ex.targets[:ex.real_len], vocab.size))
            disc_terms.append(discriminator_loss(disc, real, fake, True, rng))
        l_disc = _mean_tensors(disc_terms)
        ad.backward(l_disc)
        disc_opt.step(disc_params)
        disc_value = l_disc.item()

    return {
        "total": total.item(),
        "cond": l_cond.item(),
        "uncond": l_uncond.item() if l_uncond is not None else 0.0,
        "adv": l_adv.item() if l_adv is not None else 0.0,
        "disc": disc_value,
    }


def _dump_divergence(
    out_path: Path | None,
    model: ChoraleTransformer,
    disc: Discriminator,
    epoch: int,
    stats: dict,
) -> None:
    dump = "training diverged (non-finite loss)"
    if out_path is not None:
        target = out_path / "diverged_state.ckpt"
        save_arrays(target, {**_prefixed(model.state_arrays(), "model"),
                             **_prefixed(disc.state_arrays(), "disc")})
        dump += f"; state dumped to {target}"
    raise TrainingDiverged(f"epoch {epoch}: losses {stats}; {dump}")


def _prefixed(arrays: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    return {f"{prefix}.{k}": v for k, v in arrays.items()}


def _strip_prefix(arrays: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    plen = len(prefix) + 1
    return {k[plen:]: v for k, v in arrays.items() if k.startswith(prefix + ".")}


def _save_train_state(
    out_path: Path,
    model: ChoraleTransformer,
    disc: Discriminator,
    gen_opt: Adam,
    disc_opt: Adam,
    rng: np.random.Generator,
    next_epoch: int,
    best_accuracy: float,
) -> None:
    arrays = {
        **_prefixed(model.state_arrays(), "model"),
        **_prefixed(disc.state_arrays(), "disc"),
        **_prefixed(gen_opt.state_arrays(), "gen_opt"),
        **_prefixed(disc_opt.state_arrays(), "disc_opt"),
    }
    save_arrays(out_path / "state.ckpt", arrays)
    meta = {
        "next_epoch": next_epoch,
        "best_accuracy": best_accuracy,
        "gen_opt_t": gen_opt.t,
        "disc_opt_t": disc_opt.t,
        "rng_state": rng.bit_generator.state,
    }
    (out_path / "state.json").write_text(json.dumps(meta), encoding="utf-8")


def _load_train_state(
    out_path: Path,
    model: ChoraleTransformer,
    disc: Discriminator,
    gen_opt: Adam,
    disc_opt: Adam,
    rng: np.random.Generator,
) -> tuple[int, float]:
    meta = json.loads((out_path / "state.json").read_text(encoding="utf-8"))
    arrays = load_arrays(out_path / "state.ckpt")
    model.load_state_arrays(_strip_prefix(arrays, "model"))
    disc.load_state_arrays(_strip_prefix(arrays, "disc"))
    gen_opt.load_state_arrays(_strip_prefix(arrays, "gen_opt"), meta["gen_opt_t"])
    disc_opt.load_state_arrays(_strip_prefix(arrays, "disc_opt"), meta["disc_opt_t"])
    rng.bit_generator.state = meta["rng_state"]
    return meta["next_epoch"], meta["best_accuracy"]


# --- ablation switch sets ----------------------------------------------------------

# Cumulative component rows: each adds one switch on top of the previous.
ABLATION_ROWS: dict[str, dict] = {
    "baseline": dict(chord=False, rel=False, beat=False, w=(1.0, 0.0, 0.0)),
    "chord": dict(chord=True, rel=False, beat=False, w=(1.0, 0.0, 0.0)),
    "relattn": dict(chord=True, rel=True, beat=False, w=(1.0, 0.0, 0.0)),
    "rhythm": dict(chord=True, rel=True, beat=True, w=(1.0, 0.0, 0.0)),
    "null": dict(chord=True, rel=True, beat=True, w=(1.0, 0.25, 0.0)),
    "full": dict(chord=True, rel=True, beat=True, w=(1.0, 0.25, 0.1)),
}


def ablation_row(name: str, base: ModelConfig) -> tuple[ModelConfig, LossWeights]:
    """The configuration switch set for one component row."""
    try:
        row = ABLATION_ROWS[name]
    except KeyError:
        raise ConfigError(
            f"unknown ablation row {name!r}; rows: {', '.join(ABLATION_ROWS)}"
        ) from None
    config = ModelConfig(**{
        **{f: getattr(base, f) for f in base.__dataclass_fields__},
        "use_chord_cond": row["chord"],
        "use_beat_cond": row["beat"],
        "use_relative_attention": row["rel"],
    })
    config.validate()
    return config, LossWeights(*row["w"])
