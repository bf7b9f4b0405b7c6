"""Exception types shared across the package.

Each error class marks one failure family so callers (and the CLI exit-code
mapping) can react without string matching.
"""


class VrpkitError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(VrpkitError, ValueError):
    """A scalar argument lies outside its documented domain."""


class DimensionError(VrpkitError, ValueError):
    """Array shapes are incompatible with the requested operation."""


class DegenerateRowError(VrpkitError, ValueError):
    """A softmax row has no unmasked entry left."""


class NumericError(VrpkitError, ArithmeticError):
    """A non-finite value appeared where finite math was required."""


class FeasibilityError(VrpkitError, ValueError):
    """A tour violates the routing rules of its instance."""


class DegenerateInstanceError(VrpkitError, ValueError):
    """An instance cannot be processed, e.g. all points coincide."""


class ConfigError(VrpkitError, ValueError):
    """Invalid configuration value or combination."""


class ParseError(VrpkitError, ValueError):
    """Malformed input file.

    Carries the 1-based ``line`` the parser choked on when known.
    """

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class UnsupportedFormatError(ParseError):
    """The file parsed, but uses a variant this package does not support."""


class SizeLimitError(VrpkitError, ValueError):
    """Problem size exceeds a documented hard limit."""


class DecodeStuckError(VrpkitError, RuntimeError):
    """A rollout failed to terminate within its step budget."""


class SelectionError(VrpkitError, RuntimeError):
    """Decoder selection was requested but cannot be performed."""
