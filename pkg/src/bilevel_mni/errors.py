"""Exception types shared across the package."""


class BilevelError(Exception):
    """Base class for all package errors."""


class InvalidParams(BilevelError):
    """Ensemble parameters violate a validity constraint."""


class IndexOutOfRange(BilevelError):
    """Requested feature indices fall outside the streamable range."""


class FactorizationFailure(BilevelError):
    """Gram factorization failed even after the jitter retry."""


class InvalidSubset(BilevelError):
    """Leave-out sets violate T subset-of S subset-of favored indices."""


class CapExceeded(BilevelError):
    """Requested dense computation exceeds the configured desk-scale cap."""


class ZeroContamination(BilevelError):
    """A contamination norm is exactly zero; normalized samples undefined."""


class InsufficientGrid(BilevelError):
    """Scaling fit requested with too few grid points or seeds."""


class InvalidArgument(BilevelError):
    """Bound evaluator called outside its stated argument ranges."""


class IncompleteGrid(BilevelError):
    """Phase diagram records do not cover the rectangular grid."""

    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"missing {len(self.missing)} grid cells: {self.missing[:8]}")


class MismatchedGrids(BilevelError):
    """Classifier comparison requires both classifiers on identical points."""


class PartialFailure(BilevelError):
    """Some sweep points failed; carries the per-point failure report."""

    def __init__(self, failures):
        self.failures = list(failures)
        super().__init__(f"{len(self.failures)} sweep points failed")


class ConfigError(BilevelError):
    """Malformed or missing configuration input (CLI exit code 2)."""
