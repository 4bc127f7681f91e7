"""Exception taxonomy shared by all nilmkit modules.

The CLI maps these onto exit code 2 (usage/config problems); plain OSError
stays exit code 1 (environment/IO).
"""


class NilmError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(NilmError):
    """Operand shapes are inconsistent (mismatched channels, lengths, ...)."""


class SizeError(NilmError):
    """An input is too small for the requested operation."""


class UsageError(NilmError):
    """An operation was called outside its contract."""


class ConfigError(NilmError):
    """A configuration object violates its invariants."""


class ScenarioError(NilmError):
    """A voltage scenario or schedule is out of bounds or misaligned."""


class IngestionError(NilmError):
    """External meter data could not be parsed within tolerance."""


class CheckpointError(NilmError):
    """A model checkpoint failed to save or load (version, checksum, truncation)."""


class DivergenceError(NilmError):
    """Training produced a non-finite loss."""
