"""Exception hierarchy. Every error carries a stable machine-readable code."""

from __future__ import annotations


class ScalingFilterError(Exception):
    """Base class for all toolkit errors."""

    code = "error"

    def __init__(self, message: str = "", **context):
        super().__init__(message or self.code)
        self.context = context


# corpus I/O
class RecordError(ScalingFilterError):
    """A single JSONL record failed validation; carries shard path and line number."""

    code = "record-error"

    def __init__(self, message: str, shard: str = "", line_no: int = 0, **context):
        super().__init__(message, shard=shard, line_no=line_no, **context)
        self.shard = shard
        self.line_no = line_no


class EmptyTextError(RecordError):
    code = "empty-text"


class EncodingError(RecordError):
    code = "encoding"


class IdNotInCorpusError(ScalingFilterError):
    code = "id-not-in-corpus"


# n-gram models
class NoTrainingDataError(ScalingFilterError):
    code = "no-training-data"


class InvalidPairSpecError(ScalingFilterError):
    code = "invalid-pair-spec"


# scoring
class InvalidPerplexityError(ScalingFilterError):
    code = "invalid-perplexity"


class ScorerUnavailableError(ScalingFilterError):
    code = "scorer-unavailable"


class ErrorBudgetExceededError(ScalingFilterError):
    code = "error-budget-exceeded"


# selection
class EmptySelectionInputError(ScalingFilterError):
    code = "empty-selection-input"


class InvalidClassifierScoreError(ScalingFilterError):
    code = "invalid-classifier-score"


# diversity
class EmbedderUnavailableError(ScalingFilterError):
    code = "embedder-unavailable"


class DegenerateEmbeddingError(ScalingFilterError):
    code = "degenerate-embedding"


class NotPsdError(ScalingFilterError):
    code = "not-psd"


class CorpusTooSmallError(ScalingFilterError):
    code = "corpus-too-small"


# scaling laws
class InvalidExponentError(ScalingFilterError):
    code = "invalid-exponent"


class NumericRangeError(ScalingFilterError):
    code = "numeric-range"


class InvalidSecantError(ScalingFilterError):
    code = "invalid-secant"


class ConditionRegionViolatedError(ScalingFilterError):
    code = "condition-region-violated"


class DuplicateSizeError(ScalingFilterError):
    code = "duplicate-size"


class AllocationNoConvergeError(ScalingFilterError):
    code = "allocation-no-converge"
