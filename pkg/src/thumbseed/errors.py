"""Exception types shared across the package."""


class ThumbseedError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(ThumbseedError, ValueError):
    """A caller-supplied argument violates an operation's precondition."""


class ContractViolationError(ThumbseedError):
    """A runtime invariant that callers promised to uphold was broken."""


class TrainingDivergenceError(ThumbseedError):
    """Loss or gradients became non-finite; parameters were left unchanged."""


class FormatError(ThumbseedError):
    """A file on disk does not conform to its declared format."""


class AnnotationError(FormatError):
    """An annotation record failed validation; message names the line."""


class CheckpointError(ThumbseedError):
    """A checkpoint file is missing, truncated, or inconsistent."""
