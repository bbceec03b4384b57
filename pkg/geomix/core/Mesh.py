import logging
import os
from typing import Any, Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sparse
import yaml
from typing_extensions import Self

from geomix.core.Errors import DimensionMismatch, InvalidGeometry, PointOutsideMesh

logger = logging.getLogger(__name__)

BARYCENTRIC_TOLERANCE: float = 1e-12
"""Barycentric weights above -tolerance count as inside a triangle."""
VERTICES_FILE_NAME: str = "mesh_vertices.csv"
"""Name of the file holding mesh vertex coordinates inside a run directory."""
TRIANGLES_FILE_NAME: str = "mesh_triangles.csv"
"""Name of the file holding triangle vertex indices inside a run directory."""
LATTICE_FILE_NAME: str = "mesh_lattice.yml"
"""Name of the file holding lattice metadata inside a run directory."""


class BoundingBox(NamedTuple):
    """Axis-aligned rectangle in planar meters."""

    xmin: float
    """western edge (easting)"""
    ymin: float
    """southern edge (northing)"""
    xmax: float
    """eastern edge (easting)"""
    ymax: float
    """northern edge (northing)"""

    @property
    def width(self) -> float:
        """East-west extent."""
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        """North-south extent."""
        return self.ymax - self.ymin

    @property
    def diameter(self) -> float:
        """Length of the diagonal."""
        return float(np.hypot(self.width, self.height))

    def expanded(self, buffer: float) -> "BoundingBox":
        """
        Grows the box by the same distance on every side.

        Args:
            buffer: distance to add beyond each edge

        Returns:
            the expanded box
        """
        return BoundingBox(
            self.xmin - buffer,
            self.ymin - buffer,
            self.xmax + buffer,
            self.ymax + buffer,
        )

    def union(self, other: "BoundingBox") -> "BoundingBox":
        """
        Gets the smallest box containing both boxes.

        Args:
            other: the box to join with this one

        Returns:
            the bounding box of the union
        """
        return BoundingBox(
            min(self.xmin, other.xmin),
            min(self.ymin, other.ymin),
            max(self.xmax, other.xmax),
            max(self.ymax, other.ymax),
        )

    @classmethod
    def of_points(cls, points: np.ndarray) -> "BoundingBox":
        """
        Gets the bounding box of a set of points.

        Args:
            points: (n, 2) array of coordinates

        Returns:
            the smallest box containing every point
        """
        points = np.asarray(points, dtype=float)
        return cls(
            float(points[:, 0].min()),
            float(points[:, 1].min()),
            float(points[:, 0].max()),
            float(points[:, 1].max()),
        )


class Lattice(NamedTuple):
    """Regular vertex grid underlying a structured mesh."""

    x_origin: float
    """easting of vertex (0, 0)"""
    y_origin: float
    """northing of vertex (0, 0)"""
    spacing: float
    """distance between neighbouring vertices"""
    ncells_x: int
    """number of cells in the east-west direction"""
    ncells_y: int
    """number of cells in the north-south direction"""


class Location(NamedTuple):
    """Position of a point inside a mesh."""

    triangle: int
    """index of the containing triangle"""
    weights: np.ndarray
    """barycentric weights of the triangle's three vertices"""


class Mesh:
    """
    Triangulation with counter-clockwise vertex-index triples.
    """

    def __init__(
        self,
        vertices: np.ndarray,
        triangles: np.ndarray,
        lattice: Optional[Lattice] = None,
    ):
        """
        Creates a mesh from vertex coordinates and triangles.

        Args:
            vertices: (k, 2) array of (easting, northing) in meters
            triangles: (m, 3) integer array of vertex indices
            lattice: lattice metadata if the mesh is a structured lattice
        """
        vertices = np.asarray(vertices, dtype=float)
        triangles = np.asarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2 or vertices.shape[0] < 3:
            raise InvalidGeometry("A mesh needs at least 3 vertices of 2 coordinates.")
        if triangles.ndim != 2 or triangles.shape[1] != 3 or triangles.shape[0] < 1:
            raise InvalidGeometry("Triangles must be an (m, 3) array with m >= 1.")
        if triangles.min() < 0 or triangles.max() >= vertices.shape[0]:
            raise InvalidGeometry("Triangle vertex indices out of range.")
        self.vertices: np.ndarray = vertices
        self.triangles: np.ndarray = triangles
        self.lattice: Optional[Lattice] = lattice
        self.vertices.setflags(write=False)
        self.triangles.setflags(write=False)

    @property
    def num_vertices(self) -> int:
        """Number of vertices k."""
        return self.vertices.shape[0]

    @property
    def num_triangles(self) -> int:
        """Number of triangles."""
        return self.triangles.shape[0]

    @property
    def signed_areas(self) -> np.ndarray:
        """Signed triangle areas (positive for counter-clockwise triangles)."""
        corners = self.vertices[self.triangles]
        edge1 = corners[:, 1] - corners[:, 0]
        edge2 = corners[:, 2] - corners[:, 0]
        return 0.5 * (edge1[:, 0] * edge2[:, 1] - edge1[:, 1] * edge2[:, 0])

    @property
    def max_edge_length(self) -> float:
        """Length of the longest triangle edge."""
        corners = self.vertices[self.triangles]
        lengths = [
            np.hypot(*(corners[:, (i + 1) % 3] - corners[:, i]).T) for i in range(3)
        ]
        return float(np.max(lengths))

    @property
    def characteristic_length(self) -> float:
        """Median triangle edge length."""
        if self.lattice is not None:
            return self.lattice.spacing
        corners = self.vertices[self.triangles]
        lengths = np.concatenate(
            [np.hypot(*(corners[:, (i + 1) % 3] - corners[:, i]).T) for i in range(3)]
        )
        return float(np.median(lengths))

    @property
    def bounding_box(self) -> BoundingBox:
        """Bounding box of the vertices."""
        return BoundingBox.of_points(self.vertices)

    def _barycentric(self, triangles: np.ndarray, points: np.ndarray) -> np.ndarray:
        """
        Computes barycentric weights of points with respect to given triangles.

        Args:
            triangles: (n, c) array of candidate triangle indices per point
            points: (n, 2) array of points

        Returns:
            (n, c, 3) array of barycentric weights
        """
        corners = self.vertices[self.triangles[triangles]]
        x0, y0 = corners[..., 0, 0], corners[..., 0, 1]
        x1, y1 = corners[..., 1, 0], corners[..., 1, 1]
        x2, y2 = corners[..., 2, 0], corners[..., 2, 1]
        x = points[:, 0][:, np.newaxis]
        y = points[:, 1][:, np.newaxis]
        denominator = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
        weight0 = ((y1 - y2) * (x - x2) + (x2 - x1) * (y - y2)) / denominator
        weight1 = ((y2 - y0) * (x - x2) + (x0 - x2) * (y - y2)) / denominator
        weight2 = 1.0 - weight0 - weight1
        return np.stack([weight0, weight1, weight2], axis=-1)

    def _candidate_triangles(self, points: np.ndarray) -> np.ndarray:
        """
        Lists the triangles that could contain each point, in increasing index order.

        Args:
            points: (n, 2) array of points

        Returns:
            (n, c) array of triangle indices
        """
        if self.lattice is None:
            return np.broadcast_to(
                np.arange(self.num_triangles), (points.shape[0], self.num_triangles)
            )
        lattice: Lattice = self.lattice
        u = (points[:, 0] - lattice.x_origin) / lattice.spacing
        v = (points[:, 1] - lattice.y_origin) / lattice.spacing
        column = np.clip(np.floor(u).astype(np.int64), 0, lattice.ncells_x - 1)
        row = np.clip(np.floor(v).astype(np.int64), 0, lattice.ncells_y - 1)
        candidates = []
        for row_shift in (-1, 0):
            for column_shift in (-1, 0):
                cell_row = np.clip(row + row_shift, 0, lattice.ncells_y - 1)
                cell_column = np.clip(column + column_shift, 0, lattice.ncells_x - 1)
                cell = cell_row * lattice.ncells_x + cell_column
                candidates.extend([2 * cell, 2 * cell + 1])
        return np.sort(np.stack(candidates, axis=1), axis=1)

    def locate_many(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Locates many points at once.

        Ties (points on shared edges or vertices) go to the lowest-index triangle.

        Args:
            points: (n, 2) array of points

        Returns:
            (triangles, weights): triangle index per point (-1 if outside the mesh)
                and (n, 3) barycentric weights (zeros for outside points)
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != 2:
            raise DimensionMismatch("Points must be given as an (n, 2) array.")
        candidates = self._candidate_triangles(points)
        weights = self._barycentric(candidates, points)
        inside = np.all(weights >= -BARYCENTRIC_TOLERANCE, axis=-1)
        first = np.argmax(inside, axis=1)
        found = inside[np.arange(points.shape[0]), first]
        triangles = np.where(found, candidates[np.arange(points.shape[0]), first], -1)
        chosen = weights[np.arange(points.shape[0]), first]
        chosen = np.clip(chosen, 0.0, 1.0)
        chosen /= chosen.sum(axis=1, keepdims=True)
        chosen[~found] = 0.0
        return (triangles, chosen)

    def locate(self, point: Sequence[float]) -> Optional[Location]:
        """
        Finds the triangle containing a point and the point's barycentric weights.

        Args:
            point: (easting, northing) of the point

        Returns:
            Location of the point, or None if the point is outside the mesh
        """
        (triangles, weights) = self.locate_many(np.asarray([point], dtype=float))
        if triangles[0] < 0:
            return None
        return Location(int(triangles[0]), weights[0])

    def save(self, directory: str) -> None:
        """
        Writes the mesh to text files in a directory.

        Args:
            directory: directory to write vertex, triangle and lattice files into
                (created if needed)
        """
        os.makedirs(directory, exist_ok=True)
        pd.DataFrame(self.vertices, columns=["easting", "northing"]).to_csv(
            os.path.join(directory, VERTICES_FILE_NAME),
            index=False,
            float_format="%.17g",
        )
        pd.DataFrame(self.triangles, columns=["v0", "v1", "v2"]).to_csv(
            os.path.join(directory, TRIANGLES_FILE_NAME), index=False
        )
        lattice: Optional[Dict[str, Any]] = None
        if self.lattice is not None:
            lattice = {
                key: (
                    int(value) if isinstance(value, (int, np.integer)) else float(value)
                )
                for (key, value) in self.lattice._asdict().items()
            }
        with open(os.path.join(directory, LATTICE_FILE_NAME), "w") as file:
            yaml.dump({"lattice": lattice}, file)
        logger.info(
            f"Saved mesh with {self.num_vertices} vertices and "
            f"{self.num_triangles} triangles to {directory}."
        )
        return

    @classmethod
    def load(cls, directory: str) -> Self:
        """
        Reads a mesh written by save.

        Args:
            directory: directory containing the mesh files

        Returns:
            the loaded mesh
        """
        vertices = pd.read_csv(
            os.path.join(directory, VERTICES_FILE_NAME), float_precision="round_trip"
        ).values
        triangles = pd.read_csv(os.path.join(directory, TRIANGLES_FILE_NAME)).values
        with open(os.path.join(directory, LATTICE_FILE_NAME), "r") as file:
            stored = yaml.safe_load(file)
        lattice = None if stored["lattice"] is None else Lattice(**stored["lattice"])
        return cls(vertices, triangles, lattice=lattice)


def build_mesh(bbox: Sequence[float], spacing: float, buffer: float) -> Mesh:
    """
    Builds a structured triangulated lattice over a buffered bounding box.

    Vertices form a regular grid with the given spacing; each grid cell is split
    into two counter-clockwise triangles along its south-west to north-east
    diagonal. When the buffered extent is not a multiple of the spacing, the grid
    grows symmetrically so that it still reaches at least `buffer` beyond bbox.

    Args:
        bbox: (xmin, ymin, xmax, ymax) in meters
        spacing: distance between neighbouring vertices (m)
        buffer: distance by which the mesh extends beyond bbox (m)

    Returns:
        the lattice mesh
    """
    box = BoundingBox(*map(float, bbox))
    if not (spacing > 0):
        raise InvalidGeometry(f"Mesh spacing must be positive, got {spacing}.")
    if buffer < 0:
        raise InvalidGeometry(f"Mesh buffer must be non-negative, got {buffer}.")
    if not (box.width > 0 and box.height > 0):
        raise InvalidGeometry(f"Bounding box {tuple(box)} is degenerate.")
    extended: BoundingBox = box.expanded(buffer)
    ncells_x = max(1, int(np.ceil(extended.width / spacing - 1e-9)))
    ncells_y = max(1, int(np.ceil(extended.height / spacing - 1e-9)))
    x_origin = extended.xmin - 0.5 * (ncells_x * spacing - extended.width)
    y_origin = extended.ymin - 0.5 * (ncells_y * spacing - extended.height)
    (grid_x, grid_y) = np.meshgrid(
        x_origin + spacing * np.arange(ncells_x + 1),
        y_origin + spacing * np.arange(ncells_y + 1),
    )
    vertices = np.column_stack([grid_x.ravel(), grid_y.ravel()])
    (cell_row, cell_column) = np.divmod(np.arange(ncells_x * ncells_y), ncells_x)
    south_west = cell_row * (ncells_x + 1) + cell_column
    south_east = south_west + 1
    north_east = south_west + ncells_x + 2
    north_west = south_west + ncells_x + 1
    lower = np.column_stack([south_west, south_east, north_east])
    upper = np.column_stack([south_west, north_east, north_west])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)
    lattice = Lattice(x_origin, y_origin, float(spacing), ncells_x, ncells_y)
    logger.info(
        f"Built lattice mesh with {vertices.shape[0]} vertices "
        f"({ncells_x + 1} x {ncells_y + 1}) at {spacing} m spacing."
    )
    return Mesh(vertices, triangles, lattice=lattice)


def locate(mesh: Mesh, point: Sequence[float]) -> Optional[Location]:
    """
    Finds the triangle containing a point and its barycentric weights.

    Args:
        mesh: the mesh to search
        point: (easting, northing)

    Returns:
        Location, or None if the point lies outside the mesh
    """
    return mesh.locate(point)


class ProjectionMatrix:
    """
    Sparse n x k matrix of barycentric weights mapping mesh effects to points.
    """

    def __init__(self, matrix: sparse.spmatrix):
        """
        Wraps a sparse weight matrix.

        Args:
            matrix: n x k sparse matrix with at most three entries per row
        """
        self.matrix: sparse.csr_matrix = sparse.csr_matrix(matrix)

    @property
    def shape(self) -> Tuple[int, int]:
        """(number of points, number of mesh vertices)"""
        return self.matrix.shape

    @property
    def num_points(self) -> int:
        """Number of rows n."""
        return self.matrix.shape[0]

    @property
    def num_vertices(self) -> int:
        """Number of columns k."""
        return self.matrix.shape[1]

    def dot(self, effects: np.ndarray) -> np.ndarray:
        """
        Projects mesh effects to the points.

        Args:
            effects: k-vector (or k x r block) of mesh-vertex values

        Returns:
            the interpolated values A w
        """
        effects = np.asarray(effects, dtype=float)
        if effects.shape[0] != self.num_vertices:
            raise DimensionMismatch(
                f"Effects of length {effects.shape[0]} do not match "
                f"{self.num_vertices} mesh vertices."
            )
        return self.matrix @ effects

    def rows(self, indices: np.ndarray) -> "ProjectionMatrix":
        """
        Selects a subset of rows (points).

        Args:
            indices: integer indices or boolean mask of rows to keep

        Returns:
            projection matrix of the selected points
        """
        return ProjectionMatrix(self.matrix[indices])

    def gram(self) -> sparse.csr_matrix:
        """Gets A^T A."""
        return (self.matrix.T @ self.matrix).tocsr()


def projection_matrix(mesh: Mesh, points: np.ndarray) -> ProjectionMatrix:
    """
    Computes the barycentric projection matrix A(s) for a set of points.

    Args:
        mesh: the mesh
        points: (n, 2) array of (easting, northing)

    Returns:
        n x k projection matrix
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] == 0:
        return ProjectionMatrix(sparse.csr_matrix((0, mesh.num_vertices)))
    (triangles, weights) = mesh.locate_many(points)
    outside = np.flatnonzero(triangles < 0)
    if outside.size:
        raise PointOutsideMesh(int(outside[0]), points[outside[0]])
    rows = np.repeat(np.arange(points.shape[0]), 3)
    columns = mesh.triangles[triangles].ravel()
    values = weights.ravel()
    keep = values > 0
    matrix = sparse.csr_matrix(
        (values[keep], (rows[keep], columns[keep])),
        shape=(points.shape[0], mesh.num_vertices),
    )
    return ProjectionMatrix(matrix)
