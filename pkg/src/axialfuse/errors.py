"""Exception hierarchy shared by every module."""


class AxialFuseError(Exception):
    """Base class for all package errors."""


class DimensionError(AxialFuseError, ValueError):
    pass


class ContractError(AxialFuseError, ValueError):
    """A caller violated an operation's precondition."""


class NumericError(AxialFuseError, ArithmeticError):
    """An op produced NaN or Inf."""

    def __init__(self, op: str, message: str = ""):
        self.op = op
        super().__init__(message or f"non-finite value produced by op '{op}'")


class FormatError(AxialFuseError, ValueError):
    """A binary file failed validation. ``field`` names the offending field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ManifestError(AxialFuseError, ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class CacheLookupError(AxialFuseError, KeyError):
    def __init__(self, source_id: str, plane: str):
        self.key = (source_id, plane)
        super().__init__(f"no cached features for source_id={source_id!r} plane={plane!r}")

    def __str__(self) -> str:
        return self.args[0]


class CheckpointError(AxialFuseError, ValueError):
    def __init__(self, message: str, fields: tuple = ()):
        self.fields = tuple(fields)
        super().__init__(message)


class TrainingError(AxialFuseError, RuntimeError):
    """Wraps a failure inside the training loop with epoch/step context."""
