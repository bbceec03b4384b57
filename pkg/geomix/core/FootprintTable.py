import logging
import re
from typing import Any, Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from typing_extensions import Self

from geomix.core.Errors import DimensionMismatch, ParseError, SchemaError
from geomix.core.Mesh import BoundingBox

logger = logging.getLogger(__name__)

ID_COLUMN: str = "id"
"""Name of the footprint identifier column."""
EASTING_COLUMN: str = "easting"
"""Name of the easting (m) column."""
NORTHING_COLUMN: str = "northing"
"""Name of the northing (m) column."""
ORBIT_COLUMN: str = "orbit"
"""Name of the integer orbit label column."""
RESPONSE_COLUMN: str = "response"
"""Name of the (log-scale) response column."""
REQUIRED_COLUMNS: List[str] = [
    ID_COLUMN,
    EASTING_COLUMN,
    NORTHING_COLUMN,
    ORBIT_COLUMN,
    RESPONSE_COLUMN,
]
"""Columns every footprint file must have."""
BAND_PREFIX: str = "band_"
"""Prefix of covariate column names."""
INTEGER_COLUMNS: List[str] = [ID_COLUMN, ORBIT_COLUMN]
"""Required columns whose values must be integers."""


def _to_float(text: str) -> float:
    """
    Parses one field with the exact float parser, giving nan for anything else.

    Args:
        text: field contents

    Returns:
        the parsed value, correctly rounded
    """
    try:
        return float(text)
    except ValueError:
        return float("nan")


def band_name(index: int) -> str:
    """
    Makes the name of a covariate column.

    Args:
        index: 0-based band index

    Returns:
        "band_1" for index 0, and so on
    """
    return f"{BAND_PREFIX}{index + 1}"


class Centering(NamedTuple):
    """Constants subtracted from (and dividing) raw covariates before fitting."""

    means: np.ndarray
    """per-band means of the training covariates"""
    scales: np.ndarray
    """per-band divisors (ones unless covariates are standardized)"""

    def apply(self, covariates: np.ndarray) -> np.ndarray:
        """
        Centers (and scales) raw covariates.

        Args:
            covariates: (n, p) array of raw covariate values

        Returns:
            (n, p) array of transformed covariates
        """
        covariates = np.asarray(covariates, dtype=float)
        covariates = covariates.reshape(len(covariates), self.means.size)
        return (covariates - self.means) / self.scales

    def to_dict(self) -> Dict[str, List[float]]:
        """Gets a YAML-compatible form."""
        return {"means": self.means.tolist(), "scales": self.scales.tolist()}

    @classmethod
    def from_dict(cls, stored: Dict[str, Any]) -> "Centering":
        """
        Creates centering constants from their YAML form.

        Args:
            stored: mapping with "means" and "scales"

        Returns:
            the centering constants
        """
        return cls(
            np.asarray(stored["means"], dtype=float),
            np.asarray(stored["scales"], dtype=float),
        )


class FootprintTable:
    """
    Class representing point observations with coordinates, orbit, response and
    covariates.
    """

    def __init__(self, frame: pd.DataFrame, copy: bool = False):
        """
        Wraps a DataFrame holding the footprint columns.

        Args:
            frame: DataFrame with the required columns and any band_* columns
            copy: if True, frame is copied before being stored
        """
        missing = set(REQUIRED_COLUMNS) - set(frame.columns)
        if missing:
            raise SchemaError(missing)
        self._frame: pd.DataFrame = (frame.copy() if copy else frame).reset_index(
            drop=True
        )
        self.band_names: List[str] = [
            column for column in frame.columns if str(column).startswith(BAND_PREFIX)
        ]

    @classmethod
    def from_arrays(
        cls,
        coordinates: np.ndarray,
        response: np.ndarray,
        covariates: Optional[np.ndarray] = None,
        orbits: Optional[Sequence[int]] = None,
        ids: Optional[Sequence[int]] = None,
    ) -> Self:
        """
        Creates a table from arrays.

        Args:
            coordinates: (n, 2) array of (easting, northing)
            response: length-n response vector
            covariates: (n, p) covariates, None for p = 0
            orbits: orbit labels, all 0 if None
            ids: identifiers, 0..n-1 if None

        Returns:
            the footprint table
        """
        coordinates = np.asarray(coordinates, dtype=float).reshape(-1, 2)
        num_points: int = coordinates.shape[0]
        response = np.asarray(response, dtype=float)
        if response.shape != (num_points,):
            raise DimensionMismatch("Response length does not match coordinates.")
        covariates = (
            np.zeros((num_points, 0))
            if covariates is None
            else np.asarray(covariates, dtype=float).reshape(num_points, -1)
        )
        data: Dict[str, Any] = {
            ID_COLUMN: np.arange(num_points) if ids is None else np.asarray(ids),
            EASTING_COLUMN: coordinates[:, 0],
            NORTHING_COLUMN: coordinates[:, 1],
            ORBIT_COLUMN: (
                np.zeros(num_points, dtype=np.int64)
                if orbits is None
                else np.asarray(orbits, dtype=np.int64)
            ),
            RESPONSE_COLUMN: response,
        }
        for index in range(covariates.shape[1]):
            data[band_name(index)] = covariates[:, index]
        return cls(pd.DataFrame(data))

    @classmethod
    def read(cls, path: str) -> Self:
        """
        Reads and validates a footprint file.

        Files ending in .parquet are read with fastparquet, anything else as
        comma-delimited text with a header line.

        Args:
            path: location of the file

        Returns:
            the parsed table
        """
        if path.endswith(".parquet"):
            frame = pd.read_parquet(path, engine="fastparquet")
            table = cls(cls._parse_frame(frame.astype(str), line_offset=None))
        else:
            try:
                raw = pd.read_csv(path, dtype=str, keep_default_na=False)
            except pd.errors.EmptyDataError:
                raise ParseError(f"{path} is empty.", line=1)
            except pd.errors.ParserError as exception:
                match = re.search(r"line (\d+)", str(exception))
                raise ParseError(
                    f"{path} is malformed ({exception})",
                    line=None if match is None else int(match.group(1)),
                )
            raw.columns = [str(column).strip() for column in raw.columns]
            table = cls(cls._parse_frame(raw, line_offset=2))
        logger.info(
            f"Read {len(table)} footprints with {table.p} covariate(s) from {path}."
        )
        return table

    @staticmethod
    def _parse_frame(raw: pd.DataFrame, line_offset: Optional[int]) -> pd.DataFrame:
        """
        Converts string columns to numbers, reporting the first bad value.

        Args:
            raw: DataFrame of strings
            line_offset: file line of row 0 (None if rows have no line numbers)

        Returns:
            DataFrame of numeric columns
        """
        missing = set(REQUIRED_COLUMNS) - set(raw.columns)
        if missing:
            raise SchemaError(missing)
        bands = [column for column in raw.columns if column.startswith(BAND_PREFIX)]
        parsed: Dict[str, pd.Series] = {}
        first_bad: Optional[int] = None
        bad_column: Optional[str] = None
        for column in REQUIRED_COLUMNS + bands:
            values = raw[column].str.strip().map(_to_float).astype(float)
            invalid = ~np.isfinite(values.to_numpy(dtype=float))
            if column in INTEGER_COLUMNS:
                as_float = values.to_numpy(dtype=float)
                invalid |= np.where(np.isfinite(as_float), as_float % 1 != 0, True)
            if np.any(invalid):
                row = int(np.argmax(invalid))
                if (first_bad is None) or (row < first_bad):
                    (first_bad, bad_column) = (row, column)
            parsed[column] = values
        if first_bad is not None:
            raise ParseError(
                f"invalid value {raw[bad_column].iloc[first_bad]!r} in column "
                f"{bad_column}",
                line=None if line_offset is None else first_bad + line_offset,
            )
        frame = pd.DataFrame(parsed)
        for column in INTEGER_COLUMNS:
            frame[column] = frame[column].astype(np.int64)
        return frame

    def save(self, path: str) -> None:
        """
        Writes the table as delimited text or, for a .parquet path, as parquet.

        Args:
            path: file to write
        """
        if path.endswith(".parquet"):
            self._frame.to_parquet(path, engine="fastparquet", index=False)
        else:
            self._frame.to_csv(path, index=False, float_format="%.17g")
        logger.info(f"Wrote {len(self)} footprints to {path}.")
        return

    @property
    def frame(self) -> pd.DataFrame:
        """The underlying DataFrame."""
        return self._frame

    def __len__(self) -> int:
        """
        Allows use of len built-in.

        Returns:
            number of footprints n
        """
        return len(self._frame)

    def __eq__(self, other: object) -> bool:
        """
        Checks for equality of columns and values.

        Args:
            other: object to compare with

        Returns:
            True if other is a FootprintTable with identical contents
        """
        if not isinstance(other, FootprintTable):
            return False
        columns = REQUIRED_COLUMNS + self.band_names
        if self.band_names != other.band_names or len(self) != len(other):
            return False
        return bool(
            np.array_equal(
                self._frame[columns].to_numpy(dtype=float),
                other.frame[columns].to_numpy(dtype=float),
            )
        )

    @property
    def p(self) -> int:
        """Number of covariates."""
        return len(self.band_names)

    @property
    def ids(self) -> np.ndarray:
        """Footprint identifiers."""
        return self._frame[ID_COLUMN].to_numpy()

    @property
    def coordinates(self) -> np.ndarray:
        """(n, 2) array of (easting, northing)."""
        return self._frame[[EASTING_COLUMN, NORTHING_COLUMN]].to_numpy(dtype=float)

    @property
    def orbits(self) -> np.ndarray:
        """Integer orbit labels."""
        return self._frame[ORBIT_COLUMN].to_numpy(dtype=np.int64)

    @property
    def response(self) -> np.ndarray:
        """Response vector y."""
        return self._frame[RESPONSE_COLUMN].to_numpy(dtype=float)

    @property
    def covariates(self) -> np.ndarray:
        """(n, p) array of raw covariate values."""
        values = self._frame[self.band_names].to_numpy(dtype=float)
        return values.reshape(len(self), self.p)

    @property
    def bbox(self) -> BoundingBox:
        """Bounding box of the footprint coordinates."""
        return BoundingBox.of_points(self.coordinates)

    def centering(self, standardize: bool = False) -> Centering:
        """
        Computes covariate centering constants from this table.

        Args:
            standardize: if True, covariates are also divided by their standard
                deviations (bands with zero spread keep a divisor of 1)

        Returns:
            the centering constants
        """
        covariates: np.ndarray = self.covariates
        means = covariates.mean(axis=0) if len(self) else np.zeros(self.p)
        scales = np.ones(self.p)
        if standardize and len(self):
            spread = covariates.std(axis=0)
            scales = np.where(spread > 0, spread, 1.0)
        return Centering(means, scales)

    def subset(self, indices: np.ndarray) -> Self:
        """
        Selects a subset of footprints.

        Args:
            indices: integer indices or boolean mask of rows to keep

        Returns:
            new table with the selected rows
        """
        return FootprintTable(self._frame.iloc[np.asarray(indices)], copy=True)

    def with_response(self, response: np.ndarray) -> Self:
        """
        Replaces the response column.

        Args:
            response: length-n vector of new responses

        Returns:
            new table with the given response
        """
        response = np.asarray(response, dtype=float)
        if response.shape != (len(self),):
            raise DimensionMismatch("Response length does not match the table.")
        frame = self._frame.copy()
        frame[RESPONSE_COLUMN] = response
        return FootprintTable(frame)
