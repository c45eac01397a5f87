"""Shared exception types.

The stdlib types are used where they fit naturally (ValueError for bad
arguments, IndexError for out-of-range step indices, FileNotFoundError for
missing runs); the classes below cover the domain-specific failure modes.
"""

from __future__ import annotations


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class LifecycleError(RuntimeError):
    """Operation called in the wrong episode phase (e.g. step after terminal)."""


class TransportError(Exception):
    """Network-level failure: timeout, refused connection, closed socket."""


class ProtocolError(Exception):
    """Peer violated the protocol, or returned an exception response."""

    def __init__(self, message: str, exception_code: int | None = None):
        super().__init__(message)
        self.exception_code = exception_code


class CodecError(ValueError):
    """Register value cannot be encoded into its declared kind."""


class ValidationError(ValueError):
    """Data failed a semantic check (gaps, duplicates, coverage)."""


class ParseError(ValueError):
    """Data failed a syntactic check; carries location context in the message."""


class TelemetryError(Exception):
    """Run logging could not append durably (disk full, closed sink, IO error)."""
