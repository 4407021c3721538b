"""Shared exception types and the CLI exit-code contract.

Exit-code mapping used by the command line front end:
  1  model/classification errors (ModelError)
  2  I/O and format errors (FormatError, OSError)
  3  validation errors (ValidationError and subclasses)
"""


class VulnscoreError(Exception):
    """Base class for all toolkit errors."""


class FormatError(VulnscoreError):
    """Input exists but cannot be decoded (malformed JSON, broken XML, ...)."""


class ValidationError(VulnscoreError):
    """Well-formed input that violates a schema or range rule.

    ``rule`` is a short machine-readable tag ("range", "date_inversion",
    "missing_field", "unknown_key", "type", ...) so callers can tell
    violation kinds apart without parsing messages.
    """

    def __init__(self, message: str, rule: str = "validation"):
        super().__init__(message)
        self.rule = rule


class UnknownFeatureError(ValidationError):
    """A feature name that is not part of the governing dictionary."""

    def __init__(self, message: str):
        super().__init__(message, rule="unknown_feature")


class SchemaVersionError(ValidationError):
    """A file declares a schema_version this build does not understand."""

    def __init__(self, message: str):
        super().__init__(message, rule="schema_version")


class ModelError(VulnscoreError):
    """Training or prediction cannot proceed (single class, empty mask, ...)."""
