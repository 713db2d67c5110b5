"""Shared test helpers: random valid scores, finite differences, configs."""

from __future__ import annotations

import numpy as np

from choralegen.model import ModelConfig
from choralegen.score import ChoraleScore, VoiceStep
from choralegen.vocab import OTHER_CHORD, QUALITIES, chord_symbol


def random_score(
    rng: np.random.Generator,
    n_steps: int | None = None,
    name: str = "random",
    max_steps: int = 24,
) -> ChoraleScore:
    """A uniformly messy but always-valid score."""
    if n_steps is None:
        n_steps = int(rng.integers(0, max_steps + 1))
    chords = []
    for _ in range(n_steps):
        if rng.random() < 0.1:
            chords.append(OTHER_CHORD)
        else:
            chords.append(chord_symbol(
                int(rng.integers(0, 12)),
                QUALITIES[int(rng.integers(0, len(QUALITIES)))],
            ))
    voices = []
    for _ in range(4):
        track: list[VoiceStep] = []
        for t in range(n_steps):
            sounding = t > 0 and track[t - 1].state != "rest"
            roll = rng.random()
            if sounding and roll < 0.45:
                track.append(VoiceStep("hold", track[t - 1].pitch))
            elif roll < 0.8:
                track.append(VoiceStep("on", int(rng.integers(0, 128))))
            else:
                track.append(VoiceStep("rest"))
        voices.append(tuple(track))
    score = ChoraleScore(name=name, chords=tuple(chords), voices=tuple(voices))
    score.validate()
    return score


def finite_diff_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function of x (mutated in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        up = f()
        x[idx] = orig - eps
        down = f()
        x[idx] = orig
        grad[idx] = (up - down) / (2.0 * eps)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise |a - n| / max(1, |a|, |n|)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def sampled_coords(
    rng: np.random.Generator, shape: tuple[int, ...], k: int = 4
) -> list[tuple[int, ...]]:
    """A few random coordinates of an array, for spot finite differences."""
    size = int(np.prod(shape)) if shape else 1
    flat = rng.choice(size, size=min(k, size), replace=False)
    return [tuple(np.unravel_index(i, shape)) if shape else () for i in flat]


def tiny_config(**overrides) -> ModelConfig:
    """A config small enough for exhaustive numeric checks."""
    base = dict(
        d_model=16,
        n_backbone_layers=2,
        n_heads_backbone=4,
        ffn_backbone=24,
        n_heads_cond=2,
        ffn_cond=12,
        max_len_chord=16,
        max_len_beat=64,
        max_len_backbone=256,
        dropout_backbone=0.1,
        disc_heads=2,
        disc_ffn=12,
        disc_dropout=0.5,
    )
    base.update(overrides)
    config = ModelConfig(**base)
    config.validate()
    return config
