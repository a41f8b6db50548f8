# errors.py

"""
Exception hierarchy for the LANE pipeline.

Every ``LaneError`` is a user-facing problem (bad input, bad config, missing
artifact) and maps to CLI exit code 1. Anything else escaping a command is an
internal error (exit code 2).
"""

from typing import Optional


class LaneError(Exception):
    """Base class for all expected pipeline failures."""


class CorpusParseError(LaneError):
    """Raised when an interaction file row cannot be parsed."""

    def __init__(self, line_number: int, message: str):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class CatalogIntegrityError(LaneError):
    """Raised when one item_id is seen with two different titles."""


class ConfigurationError(LaneError):
    """Raised on invalid configuration or mismatched tensor shapes."""


class TextValidationError(LaneError):
    """Raised when a text handed to the encoder is blank."""


class EncoderError(LaneError):
    """Raised when the text encoder fails on a specific item."""

    def __init__(self, item: str, cause: Exception):
        self.item = item
        super().__init__(f"encoder failed on item {item!r}: {cause}")


class MalformedResponse(LaneError):
    """Raised when an LLM response does not follow the standard template."""

    def __init__(self, part: str, detail: Optional[str] = None):
        self.part = part
        message = part if detail is None else f"{part}: {detail}"
        super().__init__(message)


class LlmCallError(LaneError):
    """Raised when the LLM client itself fails (network, auth, quota)."""

    def __init__(self, user_id: str, cause: Exception):
        self.user_id = user_id
        super().__init__(f"LLM call failed for user {user_id}: {cause}")


class LlmTimeoutError(LaneError):
    """Raised when a function call times out."""


class NumericError(LaneError):
    """Raised when activations become non-finite."""

    def __init__(self, layer: int, stage: str = "activations"):
        self.layer = layer
        super().__init__(f"non-finite {stage} in layer {layer}")


class TrainingDivergedError(LaneError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")


class SamplingError(LaneError):
    """Raised when no eligible negative item exists."""


class EvaluationProtocolError(LaneError):
    """Raised when a user cannot get the full candidate set."""

    def __init__(self, user_id: str, eligible: int, required: int):
        self.user_id = user_id
        super().__init__(
            f"user {user_id} has only {eligible} eligible negatives, {required} required"
        )


class MissingArtifactError(LaneError):
    """Raised when a command needs the output of an earlier command."""

    def __init__(self, artifact: str, prerequisite: str):
        self.prerequisite = prerequisite
        super().__init__(
            f"missing artifact {artifact}; run `lane {prerequisite}` first"
        )
