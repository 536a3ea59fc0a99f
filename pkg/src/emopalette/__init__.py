"""Emotion-aligned color palette generation from music."""

__version__ = "0.1.0"

from .errors import DataError, EmopaletteError, NumericError, UsageError

__all__ = ["DataError", "EmopaletteError", "NumericError", "UsageError", "__version__"]
