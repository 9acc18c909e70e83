"""Exception types shared across the package."""


class QkdLinkError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(QkdLinkError, ValueError):
    """A physical or protocol parameter is outside its valid range."""


class ConfigError(QkdLinkError):
    """A scenario configuration file could not be parsed or validated."""


class FrameError(QkdLinkError):
    """A service-channel frame failed to encode or decode."""


class DesyncError(FrameError):
    """The decoder is not positioned at a frame boundary (bad magic)."""


class CorruptFrameError(FrameError):
    """A frame failed its checksum or carries an unusable header field."""


class IncompleteFrameError(FrameError):
    """The byte stream ends before the current frame is complete."""


class TransportError(QkdLinkError):
    """The classical transport dropped, closed, or corrupted the connection."""


class HandshakeError(QkdLinkError):
    """The two engines disagree on protocol version or session parameters."""


class SessionAbort(QkdLinkError):
    """A running session was aborted by either engine."""


class ReconciliationError(QkdLinkError):
    """Error correction finished without producing matching keys."""
