"""Exception types raised across the pipeline.

Everything derives from AdensError so callers can catch the whole family;
the concrete classes exist because tests and the CLI dispatch on them.
"""

from __future__ import annotations


class AdensError(Exception):
    """Base class for all errors raised by this package."""


# --- metadata / volume ingest ---------------------------------------------

class MissingFile(AdensError):
    pass


class MalformedRow(AdensError):
    """A metadata CSV row that cannot be parsed; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class DuplicateScanPath(AdensError):
    pass


class UnknownRating(AdensError):
    pass


class UnsupportedFormat(AdensError):
    pass


class CorruptHeader(AdensError):
    pass


class ShapeMismatch(AdensError):
    pass


class InvalidProportions(AdensError):
    pass


# --- preprocessing ---------------------------------------------------------

class EmptyInput(AdensError):
    pass


class NonFiniteInput(AdensError):
    pass


# --- cross-validation splits -----------------------------------------------

class TooFewSubjects(AdensError):
    pass


class DuplicateSubject(AdensError):
    pass


class EmptyPool(AdensError):
    pass


# --- model construction ------------------------------------------------------

class WeightsUnavailable(AdensError):
    pass


class ConfigMismatch(AdensError):
    pass


# --- training ----------------------------------------------------------------

class NonFiniteLogits(AdensError):
    pass


class ZeroProbabilityAtTarget(AdensError):
    """Target-class probability of zero; unreachable while the epsilon floor holds."""


class EmptyClass(AdensError):
    pass


class NoTrainingData(AdensError):
    pass


class DivergedLoss(AdensError):
    """Non-finite training loss; carries the offending batch index."""

    def __init__(self, batch_index: int, message: str = ""):
        self.batch_index = batch_index
        super().__init__(message or f"non-finite loss at batch {batch_index}")


# --- ensemble voting -----------------------------------------------------------

class MixedProvenance(AdensError):
    pass


class WrongArity(AdensError):
    pass


class EmptyVotes(AdensError):
    pass


class MixedSubjects(AdensError):
    pass


# --- evaluation -----------------------------------------------------------------

class EmptyMatrix(AdensError):
    pass


# --- CLI / orchestration ----------------------------------------------------------

class ConfigInvalid(AdensError):
    """Config failed validation; carries every violation found."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid config:\n" + "\n".join(f"  - {v}" for v in self.violations))


class StageFailed(AdensError):
    """A pipeline stage aborted; names the stage and the underlying cause."""

    def __init__(self, stage: str, cause: str):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
