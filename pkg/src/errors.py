from typing import Optional


class LU2NetError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(LU2NetError, ValueError):
    pass


class ConfigError(LU2NetError, ValueError):
    pass


class ConfigFileError(ConfigError):
    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.line = line
        self.path = path
        location = path or "<config>"
        if line is not None:
            location = f"{location}:{line}"
        super().__init__(f"{location}: {message}")


class NumericError(LU2NetError, ArithmeticError):
    pass


class GradientLookupError(LU2NetError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "tensor is not on the tape"


class ColorSpaceError(LU2NetError, TypeError):
    pass


class DecodeError(LU2NetError):
    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"cannot decode {path}: {reason}")


class DatasetError(LU2NetError):
    pass


class CheckpointError(LU2NetError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class MissingTensorError(CheckpointError):
    pass


class ShapeConflictError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class TrainingHaltedError(NumericError):
    def __init__(self, message: str, last_checkpoint: Optional[str] = None):
        self.last_checkpoint = last_checkpoint
        super().__init__(message)
