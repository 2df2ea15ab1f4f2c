"""Exception hierarchy shared across the toolkit.

Protocol-level failures derive from :class:`ProtocolError` so callers (and
the CLI exit-code mapping) can distinguish them from configuration mistakes.
"""

from __future__ import annotations


class PrivaflowError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(PrivaflowError):
    """Invalid or inconsistent configuration input."""


class ProtocolError(PrivaflowError):
    """A cryptographic or aggregation protocol invariant was violated."""


class NotInRange(ProtocolError):
    """Discrete-log recovery failed: the exponent exceeds the stated bound."""


class DecodeError(ProtocolError):
    """A byte string is not a valid encoding of a group element or record."""


class OutOfBounds(PrivaflowError):
    """A position lies outside the grid coverage area."""


class PoolExhausted(ProtocolError):
    """A driver's pre-provisioned encrypted-zero pool has run dry."""


class MissingDriver(ProtocolError):
    """An epoch references a driver id with no registered key material."""


class DuplicateReport(ProtocolError):
    """A driver submitted more than one report for the same epoch."""


class EpochGap(ProtocolError):
    """An aggregate was appended out of order (epochs must be contiguous)."""


class SeriesTooShort(PrivaflowError):
    """The density series cannot cover the requested window offsets."""


class EmptySplit(ConfigError):
    """A chronological split fraction produced a split with no samples."""
