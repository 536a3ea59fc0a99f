"""Exception hierarchy shared across the package.

The split mirrors the process exit codes: usage problems (bad arguments,
malformed requests), data problems (unreadable or inconsistent inputs) and
numeric failures (non-finite losses, diverged optimization).
"""


class EmopaletteError(Exception):
    """Base class for all package errors."""


class UsageError(EmopaletteError):
    """Caller passed arguments that violate an operation's contract."""


class DataError(EmopaletteError):
    """Input files or records are missing, unreadable or inconsistent."""


class NumericError(EmopaletteError):
    """A computation produced non-finite or otherwise unusable numbers."""
