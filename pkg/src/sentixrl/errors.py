"""Shared exception base for the package.

Every error this package raises deliberately derives from SentixrlError so
callers (and the CLI exit-code mapping) can distinguish tool errors from
genuine bugs.
"""


class SentixrlError(Exception):
    """Base class for all errors raised by sentixrl."""
