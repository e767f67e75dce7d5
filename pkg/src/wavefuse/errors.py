"""Exception hierarchy shared by all wavefuse modules."""


class WavefuseError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(WavefuseError):
    """Operands have incompatible shapes."""


class NumericError(WavefuseError):
    """A numeric invariant failed (non-finite value, bad loss)."""


class DataError(WavefuseError):
    """Dataset files are missing, malformed, or inconsistent."""


class CheckpointError(DataError):
    """Checkpoint file is corrupt or incompatible."""


class ConfigError(WavefuseError):
    """Invalid configuration or command-line usage."""
