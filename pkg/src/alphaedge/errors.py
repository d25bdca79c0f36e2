"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes, so everything user-facing should raise
one of the subclasses below rather than a bare ValueError.
"""

from __future__ import annotations


class AlphaEdgeError(Exception):
    """Base class for all package errors."""


class ConfigError(AlphaEdgeError):
    """Invalid or inconsistent configuration (bad field values, unknown keys,
    missing files named in a config)."""


class DataError(AlphaEdgeError):
    """Malformed input data: bad CSV rows, non-binary labels where binary
    labels are required, shape mismatches in user-supplied streams."""


class ShapeError(AlphaEdgeError):
    """Array argument does not match the shape implied by a model spec."""


class DegenerateWeightsError(AlphaEdgeError):
    """Aggregation weights sum to (numerically) zero where a normalized
    distribution is required."""


class ContractViolationError(AlphaEdgeError):
    """An internal pre-condition was violated by the caller (e.g. passing
    unnormalized weights where normalized ones are required)."""
