"""Exception types raised across the package.

Each failure mode gets its own class so callers can react to a specific
contract violation (bad input vs. stale state vs. corrupt file) instead of
string-matching a generic exception.
"""


class LivesplatError(Exception):
    """Base class for all package errors."""


class InvalidInputError(LivesplatError, ValueError):
    """Non-finite or out-of-contract values passed to an operation."""


class DegenerateGaussianError(LivesplatError, ValueError):
    """Covariance stayed singular even after regularization."""


class InvalidMeshError(LivesplatError, ValueError):
    """Mesh violates its invariants (empty UV chart, bad face indices)."""


class BindingError(LivesplatError, ValueError):
    """A point is not bound to the anchor mesh."""


class DegenerateFrameError(LivesplatError, RuntimeError):
    """A deformed face collapsed and no tangent frame can be built."""


class OracleTooLargeError(LivesplatError, ValueError):
    """Reference renderer called above its point-count cap."""


class StaleIntermediatesError(LivesplatError, RuntimeError):
    """Backward pass called with intermediates from a different forward."""


class AccumulatorDesyncError(LivesplatError, ValueError):
    """Gradient accumulator length no longer matches the cloud."""


class NoObservationsError(LivesplatError, RuntimeError):
    """Adapt event requested before any accumulation window closed."""


class PhaseError(LivesplatError, RuntimeError):
    """Operation called outside the training phase it belongs to."""


class ConfigError(LivesplatError, ValueError):
    """Invalid scene or training configuration."""


class FormatError(LivesplatError, ValueError):
    """Bad magic bytes or unknown version in a persisted stream."""


class TruncationError(LivesplatError, ValueError):
    """Persisted stream ends before its declared payload."""


class DeltaDesyncError(LivesplatError, ValueError):
    """Delta record applied to a cloud with mismatched topology."""
