"""Exception hierarchy.

The CLI maps :class:`InputValidationError` to exit code 2 and every other
:class:`RelrankError` to exit code 1.
"""


class RelrankError(Exception):
    """Base class for all errors raised by this package."""


class InputValidationError(RelrankError):
    """A file, record, or CLI argument failed validation."""


class ScoreOverflowError(RelrankError):
    """A score exceeded the overflow guard for exp()."""


class TrainingDivergedError(RelrankError):
    """Training produced a non-finite cost."""

    def __init__(self, epoch: int, batch: int, message: str = ""):
        self.epoch = epoch
        self.batch = batch
        detail = message or "cost became non-finite"
        super().__init__(f"training diverged at epoch {epoch}, batch {batch}: {detail}")


class FusionError(RelrankError):
    """A factor of the joint score was non-finite."""
