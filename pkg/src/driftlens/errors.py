"""Exception hierarchy for the toolkit.

Every error carries an ``exit_code`` used by the CLI: 1 for invalid input,
2 for numerical failure, 3 for I/O trouble.
"""


class DriftLensError(Exception):
    exit_code = 1


class InvalidConfig(DriftLensError):
    """Configuration violates its own invariants."""


class InvalidValue(DriftLensError):
    """Non-finite or otherwise unusable numeric input."""


class EmptyClass(DriftLensError):
    """An operation that needs at least one row got none."""


class EmptyCorpus(DriftLensError):
    """Training requested on a corpus with no tokens."""


class UnknownClass(DriftLensError):
    """A class name that is not in the class table."""


class DimMismatch(DriftLensError):
    """Embedding or parameter dimensionalities disagree."""


class LengthMismatch(DriftLensError):
    """Prediction and gold sequences differ in length."""


class SchemaMismatch(DriftLensError):
    """Two artifacts that must share a class table do not."""


class SplitInfeasible(DriftLensError):
    """The corpus cannot satisfy the A/B density constraint."""


class InvalidSnapshot(DriftLensError):
    """A snapshot violates a structural invariant."""


class NotEdrf(DriftLensError):
    """The byte source does not start with the EDRF magic."""


class UnsupportedVersion(DriftLensError):
    """EDRF file with an unknown format version."""


class CorruptFile(DriftLensError):
    """Truncated or internally inconsistent file."""


class DegenerateCovariance(DriftLensError):
    """Covariance flagged degenerate where a usable one is required."""

    exit_code = 2


class NumericalFailure(DriftLensError):
    """A numerical routine (e.g. Cholesky) failed unexpectedly."""

    exit_code = 2


class IoError(DriftLensError):
    """Underlying byte sink/source failed."""

    exit_code = 3
