"""Exception hierarchy shared across the package."""


class AnycensusError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(AnycensusError, ValueError):
    """Invalid measurement definition, flag, or configuration file."""


class EncodingError(AnycensusError):
    """A probe could not be encoded with the requested fields."""


class WorkerIdOverflow(EncodingError):
    """Worker id does not fit the carrier field of the chosen protocol."""


class QnameTooLong(EncodingError):
    """Encoded DNS query name exceeds 253 bytes or a label exceeds 63."""


class FrameError(AnycensusError):
    """Control-plane framing failure; the session must be closed."""


class FrameTooLarge(FrameError):
    pass


class FrameDecodeError(FrameError):
    pass


class AuthError(AnycensusError):
    """Worker presented a bad token or an unsupported protocol version."""


class NoWorkersError(AnycensusError):
    """A measurement was submitted while none of its workers is connected."""


class InsufficientData(AnycensusError):
    """Fewer than two distinct vantage points; no latency verdict possible."""
