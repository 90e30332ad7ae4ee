"""Exception types shared across the package.

Every error raised on purpose derives from ParakitError so callers (and the
command-line front end) can distinguish expected failure modes from bugs.
"""


class ParakitError(Exception):
    """Base class for all package errors."""


class EmptyInput(ParakitError):
    """Text was empty after trimming whitespace."""


class EmptyCorpus(ParakitError):
    """A corpus stream contained no usable lines."""


class EmptySequence(ParakitError):
    """A metric received an empty candidate or reference."""


class EmptyLossMask(ParakitError):
    """A loss was requested over a mask with no active positions."""


class SequenceTooLong(ParakitError):
    """A packed or prompted sequence exceeds the allowed length."""

    def __init__(self, required: int, limit: int):
        super().__init__(f"sequence needs length {required} but the limit is {limit}")
        self.required = required
        self.limit = limit


class VocabOverflow(ParakitError):
    """A token id is outside the embedding table."""


class ShapeError(ParakitError):
    """Array arguments have incompatible shapes."""


class TraceMismatch(ParakitError):
    """A backward pass was given a trace that does not match its inputs."""


class HessianEstimateFailed(ParakitError):
    """The diagonal curvature estimate produced non-finite entries."""


class DivergenceDetected(ParakitError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, step: int, detail: str = ""):
        msg = f"non-finite loss at epoch {epoch}, step {step}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.epoch = epoch
        self.step = step


class MalformedRecord(ParakitError):
    """A JSONL evaluation record could not be parsed or validated."""

    def __init__(self, line_no: int, detail: str):
        super().__init__(f"line {line_no}: {detail}")
        self.line_no = line_no


class SchemaMismatch(ParakitError):
    """Input files that must share a column layout do not."""


class CheckpointError(ParakitError):
    """A checkpoint file is unreadable or has the wrong format version."""


class ConfigError(ParakitError):
    """A run configuration is missing, malformed, or violates an invariant."""
