"""Exception types shared across the package."""


class CollusimError(Exception):
    """Base class for all package errors."""


class ValidationError(CollusimError):
    """A network spec or scenario violates a structural invariant.

    The message names the offending element (link, lane, phase, field).
    """


class ConfigError(CollusimError):
    """A scenario/config file is malformed or inconsistent."""


class ReportError(CollusimError):
    """A presence report claims a vehicle somewhere it is not."""


class CheckpointError(CollusimError):
    """Checkpoint file is missing, corrupt, or does not match its manifest."""


class FrozenPolicyError(CollusimError):
    """Attempted mutation of a frozen policy."""


class TrainingDiverged(CollusimError):
    """Non-finite loss during an update; carries diagnostics."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
