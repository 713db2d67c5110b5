"""Controllable four-voice chorale generation.

Public surface: the event vocabulary and score/token codec, the autodiff
tensor substrate, the conditional transformer and its discriminator, the
training loop, grammar-constrained generation, and evaluation metrics.
"""

from .autodiff import Tensor, backward
from .evaluation import (
    chord_consistency,
    evaluate_model,
    rhythm_consistency,
    teacher_forcing_accuracy,
    token_error_rate,
)
from .generation import GenerationRequest, SamplingSpec, generate, masked_sample
from .model import ChoraleTransformer, ConditionEncoding, Discriminator, ModelConfig
from .optim import Adam
from .score import (
    ChoraleScore,
    TokenSequence,
    VoiceStep,
    decode_tokens,
    encode_score,
    load_corpus,
    save_corpus,
    to_piano_roll,
)
from .training import LossWeights, TrainSettings, ablation_row, train
from .vocab import EventVocabulary, TokenClass, build_vocabulary

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "ChoraleScore",
    "ChoraleTransformer",
    "ConditionEncoding",
    "Discriminator",
    "EventVocabulary",
    "GenerationRequest",
    "LossWeights",
    "ModelConfig",
    "SamplingSpec",
    "Tensor",
    "TokenClass",
    "TokenSequence",
    "TrainSettings",
    "VoiceStep",
    "ablation_row",
    "backward",
    "build_vocabulary",
    "chord_consistency",
    "decode_tokens",
    "encode_score",
    "evaluate_model",
    "generate",
    "load_corpus",
    "masked_sample",
    "rhythm_consistency",
    "save_corpus",
    "teacher_forcing_accuracy",
    "to_piano_roll",
    "token_error_rate",
    "train",
]


def mini_corpus_path() -> str:
    """Filesystem path of the bundled four-piece corpus."""
    from importlib.resources import files

    return str(files("choralegen.data").joinpath("mini_corpus.json"))
