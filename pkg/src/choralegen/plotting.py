"""Figure and delimited-report rendering for the CLI.

Everything draws through the Agg backend and writes straight to files so
reports work headless.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .score import ChoraleScore, to_piano_roll  # noqa: E402
from .vocab import N_VOICES, VOICES  # noqa: E402

VOICE_COLORS = ("#c0392b", "#d68910", "#1e8449", "#1f618d")


def piano_roll_figure(score: ChoraleScore, path: str | Path,
                      title: str | None = None) -> None:
    """Render the score as note bars (one color per voice) over the step grid."""
    fig, ax = plt.subplots(figsize=(max(6.0, score.n_steps / 4.0), 4.0))
    roll = to_piano_roll(score)
    for v in range(N_VOICES):
        t = 0
        while t < score.n_steps:
            if roll[v, t] < 0 or score.voices[v][t].state != "on":
                t += 1
                continue
            end = t + 1
            while end < score.n_steps and score.voices[v][end].state == "hold":
                end += 1
            ax.broken_barh(
                [(t, end - t)], (roll[v, t] - 0.4, 0.8),
                facecolors=VOICE_COLORS[v], edgecolor="black", linewidth=0.4,
            )
            t = end
    handles = [plt.Rectangle((0, 0), 1, 1, color=VOICE_COLORS[v])
               for v in range(N_VOICES)]
    ax.legend(handles, VOICES, loc="upper right", fontsize=8)
    ax.set_xlabel("16th-note step")
    ax.set_ylabel("MIDI pitch")
    ax.set_xlim(0, max(score.n_steps, 1))
    sounding = roll[roll >= 0]
    if sounding.size:
        ax.set_ylim(sounding.min() - 3, sounding.max() + 3)
    ax.set_title(title or score.name)
    ax.grid(True, axis="x", alpha=0.25)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def training_curves_figure(metrics: list[dict], path: str | Path) -> None:
    """Loss components and validation accuracy per epoch, two panels."""
    epochs = [m["epoch"] for m in metrics]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for key, label in (("train_loss", "total"), ("l_self", "conditioned"),
                       ("l_null", "unconditioned"), ("l_adv", "adversarial"),
                       ("disc_loss", "discriminator")):
        values = [m[key] for m in metrics]
        if any(v != 0.0 for v in values) or key in ("train_loss", "l_self"):
            ax1.plot(epochs, values, label=label)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend(fontsize=8)
    ax1.grid(alpha=0.3)
    ax2.plot(epochs, [m["val_accuracy"] for m in metrics], color="#1e8449")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("validation accuracy")
    ax2.set_ylim(0, 1.02)
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def ter_bars_figure(ter: dict[str, float], path: str | Path) -> None:
    """Per-voice token error rates as a bar chart."""
    fig, ax = plt.subplots(figsize=(5, 4))
    names = [v.lower() for v in VOICES]
    values = [ter[n] for n in names]
    ax.bar(names, values, color=VOICE_COLORS)
    ax.set_ylabel("token error rate")
    ax.set_ylim(0, max(0.05, max(values) * 1.2))
    for i, value in enumerate(values):
        ax.text(i, value, f"{value:.3f}", ha="center", va="bottom", fontsize=8)
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def metrics_to_csv(records: list[dict], path: str | Path) -> None:
    """Flatten metric records (nested dicts become dotted columns)."""
    rows = [_flatten(r) for r in records]
    columns: list[str] = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)


def _flatten(record: dict, prefix: str = "") -> dict:
    out: dict = {}
    for key, value in record.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, f"{name}."))
        else:
            out[name] = value
    return out
