"""Exception hierarchy shared by every voluntier module."""
from typing import Optional


class VoluntierError(Exception):
    """Base class for all framework errors."""


class ConfigurationError(VoluntierError, ValueError):
    """Invalid parameters, primitive sets, spec files or settings."""


class UnsupportedProblemError(VoluntierError):
    """A problem instance too large to evaluate exhaustively."""


class ProtocolError(VoluntierError):
    """Malformed frame or a message that is illegal in the current state."""

    def __init__(self, message: str, offset: Optional[int] = None):
        super().__init__(message if offset is None else f"{message} (offset {offset})")
        self.offset = offset


class CheckpointError(VoluntierError):
    """Checkpoint bytes are truncated, tampered or undecodable."""


class ResumeRefusedError(CheckpointError):
    """Checkpoint belongs to a different parameter set."""


class SweepRejectedError(VoluntierError):
    """Sweep name already used by a different spec."""


class DomainError(VoluntierError, ValueError):
    """Metric inputs outside the domain of the formula."""


class TransportError(VoluntierError):
    """The server could not be reached."""


class ExecutionError(VoluntierError):
    """A payload failed to produce a result."""
