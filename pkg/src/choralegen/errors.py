"""Exception types shared across the package.

Everything raised on purpose derives from ChoraleError so the CLI can
report domain failures as structured JSON while real bugs still traceback.
"""

from __future__ import annotations


class ChoraleError(Exception):
    """Base class for all domain errors."""


# --- corpus / score ---------------------------------------------------------

class ParseError(ChoraleError):
    """Corpus file is malformed or uses unknown symbols."""


class ValidationError(ChoraleError):
    """A parsed piece violates score invariants."""


class InvalidScore(ChoraleError):
    """A score handed to the encoder violates its invariants."""


# --- token sequences --------------------------------------------------------

class GrammarViolation(ChoraleError):
    """A backbone position holds a token of the wrong class or voice."""


class InconsistentHold(GrammarViolation):
    """A hold's pitch token does not match the antecedent pitch."""


# --- numerics ---------------------------------------------------------------

class ShapeMismatch(ChoraleError):
    """Operands have incompatible shapes; message names both."""


class NonFiniteValue(ChoraleError):
    """An operation produced NaN or Inf."""


class NotScalar(ChoraleError):
    """backward() was called on a non-scalar tensor."""


class DisconnectedGraphWarning(UserWarning):
    """The loss has no gradient path to any parameter."""


# --- model ------------------------------------------------------------------

class LengthExceeded(ChoraleError):
    """An input sequence is longer than the configured maximum."""


class LengthMismatch(ChoraleError):
    """Paired sequences disagree in length."""


class ConfigError(ChoraleError):
    """A model or training configuration violates its invariants."""


# --- generation / evaluation / training -------------------------------------

class AllMasked(ChoraleError):
    """Sampling mask removed every candidate token (should be impossible)."""


class EmptySplit(ChoraleError):
    """A metric was asked to run over zero pieces."""


class TrainingDiverged(ChoraleError):
    """Training hit a non-finite loss; state was dumped for inspection."""
