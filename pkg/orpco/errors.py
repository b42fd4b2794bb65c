"""Exception hierarchy for orpco.

Every error carries the process exit code the CLI returns for it.
"""

from typing import Optional


class OrpcoError(Exception):
    """Base class for all orpco errors."""

    exit_code = 1


class ConfigError(OrpcoError):
    """Exception raised for configuration errors."""

    exit_code = 2


class DataError(OrpcoError):
    """Dataset could not be read or does not match its schema."""

    exit_code = 3


class ParseError(DataError):
    """A dataset row could not be parsed."""

    def __init__(self, message: str, row: int):
        super().__init__(f"row {row}: {message}")
        self.row = row


class ValidationError(DataError):
    """A value violates its declared variable space."""

    def __init__(self, message: str, variable: str):
        super().__init__(f"{variable}: {message}")
        self.variable = variable


class TrainingError(OrpcoError):
    """Training diverged (non-finite loss or gradient)."""

    exit_code = 4

    def __init__(
        self,
        message: str,
        epoch: Optional[int] = None,
        step: Optional[int] = None,
        episode: Optional[int] = None,
        member: Optional[int] = None,
    ):
        parts = []
        if member is not None:
            parts.append(f"member {member}")
        if episode is not None:
            parts.append(f"episode {episode}")
        if epoch is not None:
            parts.append(f"epoch {epoch}")
        if step is not None:
            parts.append(f"step {step}")
        prefix = ", ".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.epoch = epoch
        self.step = step
        self.episode = episode
        self.member = member

    def for_member(self, member: int) -> "TrainingError":
        """Return a copy annotated with an ensemble member index."""
        annotated = TrainingError(str(self), member=member)
        annotated.epoch, annotated.step, annotated.episode = self.epoch, self.step, self.episode
        return annotated


class ModelStateError(OrpcoError):
    """A model was used before it was trained or loaded."""

    exit_code = 4


class NumericalError(OrpcoError):
    """A numerical routine failed (e.g. singular covariance after jitter)."""

    exit_code = 4


class EvaluationError(OrpcoError):
    """An objective evaluation failed inside an optimization loop."""

    exit_code = 4

    def __init__(self, message: str, trial: int):
        super().__init__(f"trial {trial}: {message}")
        self.trial = trial
