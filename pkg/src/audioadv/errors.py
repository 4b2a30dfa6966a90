"""Exception hierarchy shared across the package."""


class AudioAdvError(Exception):
    """Base class for all package errors."""


class DegenerateAudio(AudioAdvError):
    pass


class InvalidRate(AudioAdvError):
    pass


class AudioTooShort(AudioAdvError):
    pass


class LengthMismatch(AudioAdvError):
    pass


class UnsupportedSampleRate(AudioAdvError):
    pass


class UntokenizableTarget(AudioAdvError):
    pass


class PositionOutOfRange(AudioAdvError):
    pass


class NoFeasibleInit(AudioAdvError):
    """AdaSearch found no (position, scale) pair accepted by every surrogate."""


class FrameCountMismatch(AudioAdvError):
    pass


class NonFiniteGradient(AudioAdvError):
    pass


class EmptyValidSet(AudioAdvError):
    pass


class EmptyReference(AudioAdvError):
    pass


class ConfigError(AudioAdvError, ValueError):
    pass


class ModelError(AudioAdvError):
    """Raised when a surrogate cannot be loaded or misbehaves."""


class NonConvergence(ModelError):
    def __init__(self, message, error_rate=None):
        super().__init__(message)
        self.error_rate = error_rate
