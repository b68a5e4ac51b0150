"""Exception hierarchy shared by every xgrain module."""


class XGrainError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(XGrainError, ValueError):
    """Array dimensions do not satisfy an operation's preconditions."""


class ParameterError(XGrainError, ValueError):
    """A scalar or configuration argument is out of range."""


class FormatError(XGrainError):
    """A corpus, pair list, or checkpoint file is malformed."""

    def __init__(self, message, path=None, offset=None):
        self.path = path
        self.offset = offset
        parts = [message]
        if offset is not None:
            parts.append(f"at byte offset {offset}")
        if path is not None:
            parts.append(f"in {path}")
        super().__init__(" ".join(parts))


class UnsupportedVersionError(FormatError):
    """The file declares a format version this reader does not understand."""


class NumericError(XGrainError, ArithmeticError):
    """A NaN or infinity appeared where finite values are required."""


class TrainingError(XGrainError, RuntimeError):
    """Training diverged."""

    def __init__(self, message, epoch=None):
        self.epoch = epoch
        super().__init__(message if epoch is None else f"epoch {epoch}: {message}")


class CacheMismatchError(XGrainError, RuntimeError):
    """A backward pass received a forward cache that does not match its inputs."""
