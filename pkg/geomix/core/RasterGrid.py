import logging
from typing import Dict, List, Tuple

import numpy as np
from typing_extensions import Self

from geomix.core.Errors import CountMismatch, DimensionMismatch, HeaderError, ParseError
from geomix.core.Mesh import BoundingBox

logger = logging.getLogger(__name__)

NODATA_VALUE: float = -9999.0
"""Sentinel written in place of missing (NaN) cell values."""
HEADER_KEYS: List[str] = ["ncols", "nrows", "x_origin", "y_origin", "cellsize", "bands"]
"""Keys of the raster header, in the order they are written."""
INTEGER_HEADER_KEYS: List[str] = ["ncols", "nrows", "bands"]
"""Header keys whose values must be positive integers."""


class RasterGrid:
    """
    Class representing a multi-band regular grid of cells.

    Rows run from north to south and (x_origin, y_origin) is the lower-left corner
    of the grid, so cell (row, col) is centred at
    (x_origin + (col + 1/2) cellsize, y_origin + (nrows - row - 1/2) cellsize).
    """

    def __init__(
        self, values: np.ndarray, x_origin: float, y_origin: float, cellsize: float
    ):
        """
        Creates a raster from its cell values and georeferencing.

        Args:
            values: (bands, nrows, ncols) array; NaN marks missing cells
            x_origin: easting of the lower-left corner (m)
            y_origin: northing of the lower-left corner (m)
            cellsize: side length of each square cell (m)
        """
        values = np.asarray(values, dtype=float)
        if values.ndim == 2:
            values = values[np.newaxis]
        if values.ndim != 3 or min(values.shape) < 1:
            raise DimensionMismatch(
                "Raster values must be a (bands, nrows, ncols) array."
            )
        if not (cellsize > 0):
            raise HeaderError(f"Cell size must be positive, got {cellsize}.")
        self.values: np.ndarray = values
        self.x_origin: float = float(x_origin)
        self.y_origin: float = float(y_origin)
        self.cellsize: float = float(cellsize)

    @classmethod
    def covering(cls, bbox: BoundingBox, cellsize: float, bands: int = 1) -> Self:
        """
        Creates an empty (all-NaN) raster whose cells cover a rectangle.

        Args:
            bbox: rectangle to cover; its lower-left corner becomes the origin
            cellsize: side length of each cell (m)
            bands: number of bands

        Returns:
            raster of NaNs
        """
        ncols = max(1, int(np.ceil(bbox.width / cellsize - 1e-9)))
        nrows = max(1, int(np.ceil(bbox.height / cellsize - 1e-9)))
        return cls(
            np.full((bands, nrows, ncols), np.nan), bbox.xmin, bbox.ymin, cellsize
        )

    @property
    def bands(self) -> int:
        """Number of bands."""
        return self.values.shape[0]

    @property
    def nrows(self) -> int:
        """Number of rows."""
        return self.values.shape[1]

    @property
    def ncols(self) -> int:
        """Number of columns."""
        return self.values.shape[2]

    @property
    def num_cells(self) -> int:
        """Number of cells per band."""
        return self.nrows * self.ncols

    @property
    def bbox(self) -> BoundingBox:
        """Extent of the grid."""
        return BoundingBox(
            self.x_origin,
            self.y_origin,
            self.x_origin + self.ncols * self.cellsize,
            self.y_origin + self.nrows * self.cellsize,
        )

    def cell_centres(self) -> np.ndarray:
        """
        Gets cell centre coordinates in row-major (north to south) order.

        Returns:
            (nrows * ncols, 2) array of (easting, northing)
        """
        (rows, columns) = np.divmod(np.arange(self.num_cells), self.ncols)
        easting = self.x_origin + (columns + 0.5) * self.cellsize
        northing = self.y_origin + (self.nrows - rows - 0.5) * self.cellsize
        return np.column_stack([easting, northing])

    def flat_values(self) -> np.ndarray:
        """
        Gets cell values with one row per cell.

        Returns:
            (nrows * ncols, bands) array in the order of cell_centres
        """
        return self.values.reshape(self.bands, -1).T

    def cell_index(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Finds the cell containing each point; points on the outer edge belong to the
        edge cell.

        Args:
            points: (n, 2) array of (easting, northing)

        Returns:
            (rows, cols) integer arrays, -1 for points outside the grid
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        extent: BoundingBox = self.bbox
        tolerance: float = 1e-9 * self.cellsize
        inside = (
            (points[:, 0] >= extent.xmin - tolerance)
            & (points[:, 0] <= extent.xmax + tolerance)
            & (points[:, 1] >= extent.ymin - tolerance)
            & (points[:, 1] <= extent.ymax + tolerance)
        )
        columns = np.floor((points[:, 0] - self.x_origin) / self.cellsize)
        rows_from_south = np.floor((points[:, 1] - self.y_origin) / self.cellsize)
        columns = np.clip(columns, 0, self.ncols - 1).astype(np.int64)
        rows = (self.nrows - 1 - np.clip(rows_from_south, 0, self.nrows - 1)).astype(
            np.int64
        )
        return (np.where(inside, rows, -1), np.where(inside, columns, -1))

    def sample(self, points: np.ndarray) -> np.ndarray:
        """
        Reads the values of the cells containing points.

        Args:
            points: (n, 2) array of (easting, northing)

        Returns:
            (n, bands) array of cell values, NaN for points outside the grid
        """
        (rows, columns) = self.cell_index(points)
        inside = rows >= 0
        result = np.full((rows.size, self.bands), np.nan)
        result[inside] = self.values[:, rows[inside], columns[inside]].T
        return result

    def band(self, index: int) -> Self:
        """
        Extracts a single band.

        Args:
            index: 0-based band index

        Returns:
            single-band raster with the same georeferencing
        """
        return RasterGrid(
            self.values[index : index + 1].copy(),
            self.x_origin,
            self.y_origin,
            self.cellsize,
        )

    def __eq__(self, other: object) -> bool:
        """
        Checks equality of georeferencing and values (NaNs compare equal).

        Args:
            other: object to compare with

        Returns:
            True if other is an identical RasterGrid
        """
        if not isinstance(other, RasterGrid):
            return False
        return (
            (self.values.shape == other.values.shape)
            and (self.x_origin, self.y_origin, self.cellsize)
            == (other.x_origin, other.y_origin, other.cellsize)
            and bool(np.array_equal(self.values, other.values, equal_nan=True))
        )


def write_raster(grid: RasterGrid, path: str) -> None:
    """
    Writes a raster as text: a six-line header followed by one line per row,
    band after band, with NaN written as the no-data sentinel.

    Args:
        grid: the raster to write
        path: file to write
    """
    header: Dict[str, str] = {
        "ncols": str(grid.ncols),
        "nrows": str(grid.nrows),
        "x_origin": repr(grid.x_origin),
        "y_origin": repr(grid.y_origin),
        "cellsize": repr(grid.cellsize),
        "bands": str(grid.bands),
    }
    rows = np.where(np.isnan(grid.values), NODATA_VALUE, grid.values).reshape(
        -1, grid.ncols
    )
    with open(path, "w") as file:
        for key in HEADER_KEYS:
            file.write(f"{key} {header[key]}\n")
        np.savetxt(file, rows, fmt="%.17g")
    logger.info(
        f"Wrote {grid.bands}-band {grid.nrows} x {grid.ncols} raster to {path}."
    )
    return


def read_raster(path: str) -> RasterGrid:
    """
    Reads a raster written by write_raster.

    Args:
        path: file to read

    Returns:
        the raster, with no-data cells as NaN
    """
    with open(path, "r") as file:
        lines = file.read().split("\n")
    if len(lines) < len(HEADER_KEYS):
        raise HeaderError(f"{path} has fewer than {len(HEADER_KEYS)} header lines.")
    header: Dict[str, float] = {}
    for (expected, line) in zip(HEADER_KEYS, lines):
        parts = line.split()
        if len(parts) != 2 or parts[0].lower() != expected:
            raise HeaderError(
                f"Expected header line '{expected} <value>', got {line!r}."
            )
        try:
            header[expected] = float(parts[1])
        except ValueError:
            raise HeaderError(
                f"Header value of {expected} is not a number: {parts[1]!r}."
            )
    for key in INTEGER_HEADER_KEYS:
        if header[key] < 1 or header[key] % 1 != 0:
            raise HeaderError(f"Header value of {key} must be a positive integer.")
    if not header["cellsize"] > 0:
        raise HeaderError("Header value of cellsize must be positive.")
    (ncols, nrows, bands) = (int(header[key]) for key in INTEGER_HEADER_KEYS)
    tokens = " ".join(lines[len(HEADER_KEYS) :]).split()
    expected_count: int = ncols * nrows * bands
    if len(tokens) != expected_count:
        raise CountMismatch(
            f"{path} declares {expected_count} values but holds {len(tokens)}."
        )
    try:
        values = np.array(tokens, dtype=float)
    except ValueError as exception:
        raise ParseError(f"{path} holds a non-numeric cell value ({exception}).")
    values[values == NODATA_VALUE] = np.nan
    return RasterGrid(
        values.reshape(bands, nrows, ncols),
        header["x_origin"],
        header["y_origin"],
        header["cellsize"],
    )
