from typing import Iterable, Optional


class GeomixError(Exception):
    """Base class of all errors raised by geomix."""


class DimensionMismatch(GeomixError, ValueError):
    """Raised when array/matrix dimensions do not agree."""


class ConfigInvalid(GeomixError, ValueError):
    """Raised when a configuration is malformed or contains unknown keys."""


class NotPositiveDefinite(GeomixError, ArithmeticError):
    """Raised when a Cholesky pivot stays non-positive after jitter escalation."""


class InvalidGeometry(GeomixError, ValueError):
    """Raised for degenerate bounding boxes or non-positive mesh spacing."""


class PointOutsideMesh(GeomixError, ValueError):
    """Raised when a point does not fall inside any triangle of a mesh."""

    def __init__(self, index: int, point: Iterable[float]):
        """
        Creates the error from the offending point.

        Args:
            index: position of the point in the sequence passed by the caller
            point: the (easting, northing) coordinates of the point
        """
        self.index: int = index
        self.point = tuple(point)
        super().__init__(f"Point {index} at {self.point} lies outside the mesh.")


class DegenerateTriangle(GeomixError, ArithmeticError):
    """Raised when a mesh triangle has (numerically) zero area."""


class RankDeficientDesign(GeomixError, ArithmeticError):
    """Raised when the design matrix [1, X] is not of full column rank."""


class ZeroResidual(GeomixError, ArithmeticError):
    """Raised when an inverse-gamma rate vanishes (an exact fit)."""


class DegenerateComponent(GeomixError, ArithmeticError):
    """Raised when an EM mixture component variance collapses."""


class NoConvergence(GeomixError, RuntimeError):
    """Raised when Newton-Raphson fails to reach the gradient tolerance."""

    def __init__(self, message: str, gradient_norm: float):
        """
        Creates the error with the last gradient norm attained.

        Args:
            message: description of the failure
            gradient_norm: max-norm of the gradient at the final iterate
        """
        self.gradient_norm: float = gradient_norm
        super().__init__(f"{message} (final gradient norm {gradient_norm:.3e})")


class StepHalvingExhausted(GeomixError, RuntimeError):
    """Raised when no halved Newton step increases the log posterior."""


class UnsupportedTransform(GeomixError, ValueError):
    """Raised when a named response transformation is not known."""


class NumericalOverflow(GeomixError, ArithmeticError):
    """Raised when a density underflows to exactly zero."""

    def __init__(self, message: str, index: Optional[int] = None):
        """
        Creates the error, optionally pointing at a data point.

        Args:
            message: description of the failure
            index: index of the data point whose density vanished, if any
        """
        self.index: Optional[int] = index
        super().__init__(message if index is None else f"{message} (point {index})")


class NonPositiveCpo(GeomixError, ValueError):
    """Raised when a CPO value is not strictly positive."""


class DegenerateTruth(GeomixError, ValueError):
    """Raised when held-out truth values have zero variance."""


class InsufficientOrbits(GeomixError, ValueError):
    """Raised when by-orbit cross-validation finds fewer than two orbits."""


class FoldTooSmall(GeomixError, ValueError):
    """Raised when a cross-validation fold has too few train or test points."""


class EmptyDesign(GeomixError, ValueError):
    """Raised when no simulated footprint falls inside the domain."""


class ParseError(GeomixError, ValueError):
    """Raised when a data file cannot be parsed."""

    def __init__(self, message: str, line: Optional[int] = None):
        """
        Creates the error, optionally citing a line of the file.

        Args:
            message: description of the failure
            line: 1-based line number in the file (header is line 1)
        """
        self.line: Optional[int] = line
        super().__init__(message if line is None else f"line {line}: {message}")


class SchemaError(GeomixError, ValueError):
    """Raised when required columns are missing from a table."""

    def __init__(self, missing: Iterable[str]):
        """
        Creates the error from the missing column names.

        Args:
            missing: names of the required columns that were not found
        """
        self.missing = sorted(missing)
        super().__init__(f"Missing required column(s): {', '.join(self.missing)}.")


class HeaderError(GeomixError, ValueError):
    """Raised when a raster header is malformed."""


class CountMismatch(GeomixError, ValueError):
    """Raised when a raster holds a different number of values than declared."""
