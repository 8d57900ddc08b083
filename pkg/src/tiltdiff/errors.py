"""Exception types shared across the package."""


class TiltDiffError(Exception):
    """Base class for every error raised by this package."""


class DomainError(TiltDiffError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(TiltDiffError, ValueError):
    """A configuration value violates a precondition."""


class DegenerateTimeError(TiltDiffError, ValueError):
    """An operation hit a time where the schedule degenerates (alpha or sigma ~ 0)."""


class NotNormalizableError(TiltDiffError, ValueError):
    """A tilted density cannot be normalized (precision minus curvature not PD)."""


class NumericalFaultError(TiltDiffError, ArithmeticError):
    """A forward or backward pass produced non-finite values."""


class TrainingFaultError(TiltDiffError, RuntimeError):
    """Training diverged or failed mid-run."""


class ScheduleViolationError(TiltDiffError, ValueError):
    """A reverse step was asked to inject more noise than the schedule allows."""


class RewardFaultError(TiltDiffError, ValueError):
    """The reward function returned a non-finite value."""


class OracleError(TiltDiffError, RuntimeError):
    """A test oracle failed to converge or was used outside its supported domain."""


class CheckpointError(TiltDiffError, OSError):
    """A checkpoint file is missing, corrupt, or has an unsupported version."""


class ContractError(TiltDiffError, ValueError):
    """Caller violated an internal API contract, e.g. mismatched shapes."""


class ExperimentError(TiltDiffError, RuntimeError):
    """A phase of the experiment runner failed; the message names phase and tilt."""
