"""Error taxonomy shared by every module.

Each error type carries a stable machine-readable ``kind`` string and an
``exit_code``; the CLI turns any of these into a single-line JSON object on
stderr and exits with that code.  Input and validation problems exit 2,
numerical failures exit 3.
"""

from __future__ import annotations


class GpensError(Exception):
    """Base class for all domain errors raised by this package."""

    kind = "Error"
    exit_code = 2

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.context = {k: v for k, v in context.items() if v is not None}

    def payload(self) -> dict:
        """JSON-serializable description: {"error": kind, "message": ..., ...}."""
        out = {"error": self.kind, "message": str(self)}
        out.update(self.context)
        return out


class BadMagic(GpensError):
    """File does not start with the expected magic bytes."""

    kind = "BadMagic"


class VersionMismatch(GpensError):
    """File declares a format version this code does not read."""

    kind = "VersionMismatch"


class TruncatedFile(GpensError):
    """File is missing, shorter than its header promises, or has trailing bytes."""

    kind = "TruncatedFile"


class NormViolation(GpensError):
    """A row/column flagged as normalized deviates from unit L2 norm."""

    kind = "NormViolation"


class DimensionMismatch(GpensError):
    """Array shapes disagree (embedding dim, class count, head shape, ...)."""

    kind = "DimensionMismatch"


class LengthMismatch(GpensError):
    """Parallel sequences disagree in length (rows vs labels vs sample ids)."""

    kind = "LengthMismatch"


class ModelCountMismatch(GpensError):
    """An operation received features for the wrong number of models."""

    kind = "ModelCountMismatch"


class ManifestError(GpensError):
    """Manifest JSON is malformed or missing required keys."""

    kind = "ManifestError"


class InsufficientSamples(GpensError):
    """A class has fewer samples than the requested number of shots."""

    kind = "InsufficientSamples"


class TooFewShots(GpensError):
    """A split would leave a class without enough samples to be useful."""

    kind = "TooFewShots"


class EmptyInput(GpensError):
    """An operation that needs at least one element received none."""

    kind = "EmptyInput"


class AllBelowThreshold(GpensError):
    """Every pooled probability fell below the adaptive-binning threshold."""

    kind = "AllBelowThreshold"


class CholeskyFailure(GpensError):
    """Factorization failed even after the maximum diagonal jitter."""

    kind = "CholeskyFailure"
    exit_code = 3


class NonFiniteGradient(GpensError):
    """Objective or gradient evaluated to NaN/Inf during optimization."""

    kind = "NonFiniteGradient"
    exit_code = 3
