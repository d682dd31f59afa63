"""Exception types shared across the package."""


class CldbsError(Exception):
    """Base class for package errors."""


class NumericalDivergence(CldbsError):
    """A membrane potential left the guard band or became non-finite.

    Signals an integration step too large or unphysical parameters,
    never a recoverable model state.
    """

    def __init__(self, message, t_ms=None):
        super().__init__(message)
        self.t_ms = t_ms


class PulseOverlap(CldbsError):
    """Consecutive stimulation pulses would overlap (period < pulse width)."""


class WindowTooShort(CldbsError):
    """Signal window too short to resolve the requested frequency band."""


class BandOutOfRange(CldbsError):
    """Requested band edges invalid or above Nyquist."""


class DegenerateSignal(CldbsError):
    """Zero-variance input where a variance ratio is required."""


class DegenerateRange(CldbsError):
    """A feature was constant across the calibration collection."""


class EpisodeFinished(CldbsError):
    """step() called on an environment whose episode already terminated."""


class NanGradient(CldbsError):
    """A non-finite value appeared in a network update."""


class VersionMismatch(CldbsError):
    """Checkpoint metadata incompatible with this build or calibration."""


class CorruptCheckpoint(CldbsError):
    """Checkpoint container failed structural or checksum validation."""
