"""Command-line interface: validate, train, generate, eval, ablate.

Domain failures exit nonzero with one JSON object on stderr:
``{"error": "<ExceptionClass>", "message": "..."}``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ChoraleError, ParseError
from .evaluation import chord_consistency, evaluate_model, rhythm_consistency
from .generation import GenerationRequest, SamplingSpec, generate
from .model import ChoraleTransformer, ModelConfig
from .checkpoint import load_arrays
from .plotting import (
    metrics_to_csv,
    piano_roll_figure,
    ter_bars_figure,
    training_curves_figure,
)
from .score import (
    ChoraleScore,
    encode_score,
    load_corpus,
    piano_roll_text,
    save_corpus,
)
from .training import (
    ABLATION_ROWS,
    LossWeights,
    TrainSettings,
    ablation_row,
    train,
)
from .vocab import build_vocabulary, parse_chord_symbol


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ChoraleError, OSError) as err:
        print(
            json.dumps({"error": type(err).__name__, "message": str(err)}),
            file=sys.stderr,
        )
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="choralegen",
        description="Train, sample and evaluate the conditional chorale model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a corpus file against the schema")
    p.add_argument("corpus", help="corpus JSON file")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", help="model config JSON; defaults if omitted")
    p.add_argument("--weights", default="1.0,0.25,0.1",
                   help="conditioned,unconditioned,adversarial loss weights")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--window-steps", type=int, default=32)
    p.add_argument("--val-fraction", type=float, default=0.0,
                   help="0 validates on the training pieces")
    p.add_argument("--stop-at-accuracy", type=float, default=None)
    p.add_argument("--d-model", type=int, default=None,
                   help="override the config's embedding width")
    p.add_argument("--layers", type=int, default=None,
                   help="override the config's backbone layer count")
    p.add_argument("--resume", action="store_true",
                   help="continue from the state saved in --out")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("generate", help="sample a piece from a checkpoint")
    p.add_argument("--checkpoint", required=True,
                   help="checkpoint file or training output directory")
    p.add_argument("--chords", help="chord condition: JSON symbol array or piece file")
    p.add_argument("--beats", help="rhythm condition: JSON state rows or piece file")
    p.add_argument("--fix-melody", help="piece file whose soprano line is pinned")
    p.add_argument("--fix-piece", help="piece file pinned at every position")
    p.add_argument("--steps", type=int, default=None,
                   help="length in 16th steps (inferred from inputs if omitted)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strategy", choices=("greedy", "temp", "topk"),
                   default="temp")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--force-rhythm", action="store_true",
                   help="pin every beat slot to the rhythm condition")
    p.add_argument("--out", required=True, help="output piece JSON")
    p.add_argument("--render", help="also write a plain-text piano roll here")
    p.add_argument("--figure", help="also write a piano-roll PNG here")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("eval", help="teacher-forcing metrics over a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--no-conditions", action="store_true",
                   help="evaluate with EMPTY condition inputs")
    p.add_argument("--out", help="write metrics JSON here instead of stdout")
    p.add_argument("--report", help="directory for metrics.json/.csv + figures")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run one component-row configuration")
    p.add_argument("--corpus", required=True)
    p.add_argument("--row", required=True, choices=sorted(ABLATION_ROWS),
                   help="cumulative component row to enable")
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--d-model", type=int, default=32)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--window-steps", type=int, default=16)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_ablate)

    return parser


# --- commands -----------------------------------------------------------------

def _cmd_validate(args: argparse.Namespace) -> int:
    vocab = build_vocabulary()
    report: dict = {"file": args.corpus, "valid": True, "pieces": []}
    try:
        pieces = load_corpus(args.corpus)
        for piece in pieces:
            encode_score(piece, vocab)  # exercises the token grammar too
            report["pieces"].append(
                {"name": piece.name, "steps": piece.n_steps, "ok": True}
            )
    except ChoraleError as err:
        report["valid"] = False
        report["error"] = {"type": type(err).__name__, "message": str(err)}
    print(json.dumps(report, indent=1))
    return 0 if report["valid"] else 1


def _small_test_config(d_model: int | None, layers: int | None,
                       base: ModelConfig | None = None) -> ModelConfig:
    config = base or ModelConfig()
    if d_model is not None:
        config.d_model = d_model
    if layers is not None:
        config.n_backbone_layers = layers
    config.validate()
    return config


def _cmd_train(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    base = ModelConfig.load(args.config) if args.config else ModelConfig()
    config = _small_test_config(args.d_model, args.layers, base)
    weights = LossWeights.parse(args.weights)
    settings = TrainSettings(
        lr=args.lr,
        batch_size=args.batch_size,
        window_steps=args.window_steps,
        val_fraction=args.val_fraction,
        stop_at_accuracy=args.stop_at_accuracy,
    )
    log_fn = None if args.quiet else _print_epoch
    result = train(
        corpus, config, weights, args.epochs,
        settings=settings, seed=args.seed, out_dir=args.out,
        resume_from=args.out if args.resume else None, log_fn=log_fn,
    )
    out = Path(args.out)
    if result.metrics:
        training_curves_figure(result.metrics, out / "training_curves.png")
        metrics_to_csv(result.metrics, out / "metrics.csv")
    print(json.dumps({
        "best_val_accuracy": result.best_accuracy,
        "epochs_run": len(result.metrics),
        "checkpoint": str(out / "checkpoint.ckpt"),
    }))
    return 0


def _print_epoch(record: dict) -> None:
    print(
        f"epoch {record['epoch']:4d}  loss {record['train_loss']:.4f}  "
        f"val_acc {record['val_accuracy']:.4f}  ({record['seconds']:.1f}s)",
        file=sys.stderr,
    )


def _load_model(checkpoint: str) -> ChoraleTransformer:
    path = Path(checkpoint)
    if path.is_dir():
        ckpt_path = path / "checkpoint.ckpt"
        config_path = path / "config.json"
    else:
        ckpt_path = path
        config_path = path.parent / "config.json"
    if not config_path.exists():
        raise ParseError(f"no config.json next to {ckpt_path}")
    config = ModelConfig.load(config_path)
    model = ChoraleTransformer(config, np.random.default_rng(0))
    model.load_state_arrays(load_arrays(ckpt_path))
    return model


def _load_piece(path: str) -> ChoraleScore:
    pieces = load_corpus(path)
    if not pieces:
        raise ParseError(f"{path}: no pieces")
    return pieces[0]


def _chord_ids_from_file(path: str, vocab) -> np.ndarray:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(payload, dict):
        symbols = list(_load_piece(path).chords)
    else:
        symbols = [parse_chord_symbol(str(s)) for s in payload]
    return np.asarray([vocab.chord_id(s) for s in symbols], dtype=np.int64)


def _beat_ids_from_file(path: str, vocab) -> np.ndarray:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(payload, dict):
        piece = _load_piece(path)
        return np.asarray(encode_score(piece, vocab).beat_cond, dtype=np.int64)
    ids = []
    voices = ("S", "A", "T", "B")
    for t, row in enumerate(payload):
        if len(row) != 4:
            raise ParseError(f"beat row {t} must have 4 states, got {len(row)}")
        for v, state in enumerate(row):
            if state not in ("on", "hold", "rest"):
                raise ParseError(f"beat row {t}: unknown state {state!r}")
            ids.append(vocab.beat_id(voices[v], state))
    return np.asarray(ids, dtype=np.int64)


def _cmd_generate(args: argparse.Namespace) -> int:
    vocab = build_vocabulary()
    model = _load_model(args.checkpoint)

    chord_cond = _chord_ids_from_file(args.chords, vocab) if args.chords else None
    beat_cond = _beat_ids_from_file(args.beats, vocab) if args.beats else None

    fixed: dict[int, int] = {}
    pinned_steps = None
    if args.fix_piece:
        piece = _load_piece(args.fix_piece)
        pinned_steps = piece.n_steps
        seq = encode_score(piece, vocab)
        for pos in range(1, len(seq.backbone)):
            fixed[pos] = seq.backbone[pos]
    if args.fix_melody:
        piece = _load_piece(args.fix_melody)
        pinned_steps = pinned_steps or piece.n_steps
        seq = encode_score(piece, vocab)
        for t in range(piece.n_steps):
            base = 1 + 9 * t
            fixed[base + 1] = seq.backbone[base + 1]  # soprano beat
            fixed[base + 2] = seq.backbone[base + 2]  # soprano pitch

    n_steps = args.steps
    if n_steps is None:
        for candidate in (
            pinned_steps,
            len(chord_cond) if chord_cond is not None else None,
            len(beat_cond) // 4 if beat_cond is not None else None,
        ):
            if candidate is not None:
                n_steps = candidate
                break
    if n_steps is None:
        raise ParseError("--steps is required without conditions or a melody")

    strategy = {"greedy": "greedy", "temp": "temperature", "topk": "top_k"}
    request = GenerationRequest(
        n_steps=n_steps,
        chord_cond=chord_cond,
        beat_cond=beat_cond,
        fixed_tokens=fixed,
        sampling=SamplingSpec(
            strategy=strategy[args.strategy],
            temperature=args.temperature,
            k=args.k,
        ),
        seed=args.seed,
        force_rhythm=args.force_rhythm,
    )
    result = generate(model, request, vocab)
    save_corpus(args.out, [result.score])
    if args.render:
        Path(args.render).write_text(
            piano_roll_text(result.score) + "\n", encoding="utf-8"
        )
    if args.figure:
        piano_roll_figure(result.score, args.figure)
    print(json.dumps({
        "steps": result.score.n_steps,
        "repairs": result.repairs,
        "out": args.out,
    }))
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    vocab = build_vocabulary()
    model = _load_model(args.checkpoint)
    pieces = load_corpus(args.corpus)
    report = evaluate_model(
        model, pieces, vocab, conditions_on=not args.no_conditions
    )

    rhythm_values = []
    chord_fractions = []
    for piece in pieces:
        seq = encode_score(piece, vocab)
        rhythm_values.append(rhythm_consistency(piece, seq.beat_cond, vocab))
        chord_fractions.append(
            chord_consistency(piece, seq.chord_cond, vocab)["chord_consistency"]
        )
    metrics = {
        "accuracy": report.accuracy,
        "pitch_accuracy": report.pitch_accuracy,
        "ter": report.ter,
        "rhythm_consistency": sum(rhythm_values) / len(rhythm_values),
        "chord_consistency": sum(chord_fractions) / len(chord_fractions),
        "n_positions": report.n_positions,
        "conditions_on": not args.no_conditions,
    }
    text = json.dumps(metrics, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    if args.report:
        report_dir = Path(args.report)
        report_dir.mkdir(parents=True, exist_ok=True)
        (report_dir / "metrics.json").write_text(text + "\n", encoding="utf-8")
        metrics_to_csv([metrics], report_dir / "metrics.csv")
        ter_bars_figure(report.ter, report_dir / "ter_by_voice.png")
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    base = _small_test_config(args.d_model, args.layers)
    config, weights = ablation_row(args.row, base)
    settings = TrainSettings(window_steps=args.window_steps)
    log_fn = None if args.quiet else _print_epoch
    result = train(
        corpus, config, weights, args.epochs,
        settings=settings, seed=args.seed, out_dir=args.out, log_fn=log_fn,
    )
    out = Path(args.out)
    if result.metrics:
        metrics_to_csv(result.metrics, out / "metrics.csv")
    print(json.dumps({
        "row": args.row,
        "epochs_run": len(result.metrics),
        "best_val_accuracy": result.best_accuracy,
        "final_train_loss": result.metrics[-1]["train_loss"] if result.metrics else None,
    }))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
