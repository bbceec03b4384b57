import logging
import os
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import yaml
from scipy.spatial.distance import pdist
from scipy.special import expit

from geomix.core.ChainDraws import MATRIX_EXTENSION, read_matrix, write_matrix
from geomix.core.Config import RunConfig
from geomix.core.Errors import ConfigInvalid, EmptyDesign
from geomix.core.FootprintTable import FootprintTable
from geomix.core.Mesh import BoundingBox, Mesh, build_mesh, projection_matrix
from geomix.core.ModelKind import ModelKind
from geomix.core.RasterGrid import RasterGrid
from geomix.core.SparseLinalg import cholesky, sample_gmrf
from geomix.core.Spde import FemMatrices, MaternParams, assemble_fem, precision

logger = logging.getLogger(__name__)

TRUTH_FILE_NAME: str = "truth.yml"
"""Name of the generating-parameter file inside a simulation directory."""


class DesignSpec(NamedTuple):
    """Geometry of a simulated set of lidar tracks and covariate surfaces."""

    domain: BoundingBox
    """rectangle (m) in which footprints are kept"""
    orbits: int
    """number of orbits"""
    azimuths: Optional[List[float]]
    """track direction of each orbit in degrees clockwise from north (random if None)"""
    tracks_per_orbit: int
    """number of parallel tracks per orbit"""
    along_track_spacing: float
    """distance between consecutive footprints of a track (m)"""
    across_track_spacing: float
    """distance between neighbouring tracks of an orbit (m)"""
    bands: int
    """number of covariate bands p"""
    covariate_range: float
    """Matern range of the covariate surfaces (m)"""
    cellsize: float
    """cell size of the covariate raster (m)"""
    anchors: Optional[List[Tuple[float, float]]] = None
    """point each orbit's middle track passes through (random if None)"""

    def validate(self) -> None:
        """Raises ConfigInvalid if the geometry is impossible."""
        if not (self.along_track_spacing > 0 and self.across_track_spacing > 0):
            raise ConfigInvalid("Track spacings must be positive.")
        if self.orbits < 1 or self.tracks_per_orbit < 1 or self.bands < 0:
            raise ConfigInvalid("Need at least one orbit and track, and p >= 0.")
        if not (self.covariate_range > 0 and self.cellsize > 0):
            raise ConfigInvalid("Covariate range and cell size must be positive.")
        for (name, values) in (("azimuths", self.azimuths), ("anchors", self.anchors)):
            if values is not None and len(values) != self.orbits:
                raise ConfigInvalid(
                    f"{len(values)} {name} given for {self.orbits} orbit(s)."
                )
        return

    @classmethod
    def from_config(cls, config: RunConfig) -> "DesignSpec":
        """
        Reads the sim_* keys of a run configuration.

        Args:
            config: run configuration

        Returns:
            the design specification
        """
        return cls(
            domain=BoundingBox(*config["sim_domain"]),
            orbits=config["sim_orbits"],
            azimuths=config["sim_azimuths"],
            tracks_per_orbit=config["sim_tracks_per_orbit"],
            along_track_spacing=config["sim_along_track_spacing"],
            across_track_spacing=config["sim_across_track_spacing"],
            bands=config["sim_bands"],
            covariate_range=config["sim_covariate_range"],
            cellsize=config["sim_cellsize"],
        )


class Design(NamedTuple):
    """Simulated footprint geometry with covariates."""

    coordinates: np.ndarray
    """(n, 2) footprint coordinates"""
    orbits: np.ndarray
    """orbit label of each footprint"""
    covariates: np.ndarray
    """(n, p) covariate values of the raster cell of each footprint"""
    raster: Optional[RasterGrid]
    """covariate raster (None if p = 0)"""
    mesh: Mesh
    """mesh on which the covariate and response processes were simulated"""


class TruthRecord(NamedTuple):
    """Everything that generated a simulated response."""

    model: ModelKind
    """generating model"""
    parameters: Dict[str, Any]
    """generating parameters (see DEFAULT_TRUTH)"""
    effects: Dict[str, np.ndarray]
    """mesh-vertex values of each latent process ("w" or "w_1", "w_0", "w_z")"""
    labels: Optional[np.ndarray] = None
    """true class of each footprint (mixture only)"""
    probabilities: Optional[np.ndarray] = None
    """true class 1 probability of each footprint (mixture only)"""

    def save(self, directory: str) -> None:
        """
        Writes the parameters as YAML and latent vectors as binary matrices.

        Args:
            directory: directory to write into (created if needed)
        """
        os.makedirs(directory, exist_ok=True)
        vectors: Dict[str, np.ndarray] = dict(self.effects)
        if self.labels is not None:
            vectors["labels"] = self.labels.astype(float)
        if self.probabilities is not None:
            vectors["probabilities"] = self.probabilities
        for (name, values) in vectors.items():
            path = os.path.join(directory, f"truth_{name}{MATRIX_EXTENSION}")
            write_matrix(values[np.newaxis], path)
        to_dump = {
            "model": self.model.label,
            "parameters": self.parameters,
            "vectors": sorted(vectors),
        }
        with open(os.path.join(directory, TRUTH_FILE_NAME), "w") as file:
            yaml.safe_dump(to_dump, file)
        return

    @classmethod
    def load(cls, directory: str) -> "TruthRecord":
        """
        Reads a record written by save.

        Args:
            directory: directory written by save

        Returns:
            the record
        """
        with open(os.path.join(directory, TRUTH_FILE_NAME), "r") as file:
            stored = yaml.safe_load(file)
        vectors = {
            name: read_matrix(
                os.path.join(directory, f"truth_{name}{MATRIX_EXTENSION}")
            )[0]
            for name in stored["vectors"]
        }
        labels = vectors.pop("labels", None)
        return cls(
            model=ModelKind.from_label(stored["model"]),
            parameters=stored["parameters"],
            effects={
                name: values
                for (name, values) in vectors.items()
                if name.startswith("w")
            },
            labels=None if labels is None else labels.astype(np.int64),
            probabilities=vectors.get("probabilities"),
        )


class Variogram(NamedTuple):
    """Binned empirical semivariogram."""

    lags: np.ndarray
    """mean pair distance of each bin (nan for empty bins)"""
    semivariance: np.ndarray
    """half the mean squared difference of each bin (nan for empty bins)"""
    counts: np.ndarray
    """number of pairs in each bin"""


def track_points(
    anchor: Sequence[float], azimuth: float, spec: DesignSpec
) -> np.ndarray:
    """
    Lays out the footprints of one orbit's parallel tracks inside the domain.

    Args:
        anchor: point the middle of the orbit's tracks passes through
        azimuth: track direction in degrees clockwise from north
        spec: design specification

    Returns:
        (m, 2) footprint coordinates inside the domain
    """
    angle: float = np.deg2rad(azimuth)
    direction = np.array([np.sin(angle), np.cos(angle)])
    normal = np.array([np.cos(angle), -np.sin(angle)])
    domain: BoundingBox = spec.domain
    reach = int(np.ceil(domain.diameter / spec.along_track_spacing)) + 1
    along = spec.along_track_spacing * np.arange(-reach, reach + 1)
    across = spec.across_track_spacing * (
        np.arange(spec.tracks_per_orbit) - (spec.tracks_per_orbit - 1) / 2
    )
    (across_grid, along_grid) = np.meshgrid(across, along, indexing="ij")
    points = (
        np.asarray(anchor, dtype=float)
        + along_grid.reshape(-1, 1) * direction
        + across_grid.reshape(-1, 1) * normal
    )
    tolerance: float = 1e-9 * domain.diameter
    inside = (
        (points[:, 0] >= domain.xmin - tolerance)
        & (points[:, 0] <= domain.xmax + tolerance)
        & (points[:, 1] >= domain.ymin - tolerance)
        & (points[:, 1] <= domain.ymax + tolerance)
    )
    points = points[inside]
    points[:, 0] = np.clip(points[:, 0], domain.xmin, domain.xmax)
    points[:, 1] = np.clip(points[:, 1], domain.ymin, domain.ymax)
    return points


def simulation_mesh(spec: DesignSpec, config: RunConfig) -> Mesh:
    """
    Builds the mesh on which a design's processes are simulated.

    Args:
        spec: design specification
        config: run configuration (mesh_spacing, mesh_buffer)

    Returns:
        lattice mesh over the buffered domain
    """
    return build_mesh(spec.domain, config["mesh_spacing"], config["mesh_buffer"])


def _gaussian_field(
    theta: Optional[MaternParams], fem: FemMatrices, rng: np.random.Generator
) -> np.ndarray:
    """Draws mesh-vertex values from N(0, Q(theta)^-1), zero if there is no process."""
    if theta is None or theta.sigma2 == 0:
        return np.zeros(fem.num_vertices)
    return sample_gmrf(
        cholesky(precision(theta, fem)), np.zeros(fem.num_vertices), rng
    )


def covariate_raster(
    spec: DesignSpec, mesh: Mesh, fem: FemMatrices, rng: np.random.Generator
) -> RasterGrid:
    """
    Simulates standardized covariate surfaces on a raster covering the domain.

    Args:
        spec: design specification (p > 0)
        mesh: mesh covering the domain
        fem: finite element matrices of the mesh
        rng: random stream

    Returns:
        raster whose bands have mean 0 and standard deviation 1 (0 for a band
        that comes out constant)
    """
    raster = RasterGrid.covering(spec.domain, spec.cellsize, spec.bands)
    projection = projection_matrix(mesh, raster.cell_centres())
    theta = MaternParams(1.0, spec.covariate_range)
    for band in range(spec.bands):
        values = projection.dot(_gaussian_field(theta, fem, rng))
        spread = float(values.std())
        if spread == 0:
            logger.warning(f"Covariate band {band} is constant; only centring it.")
        values = (values - values.mean()) / (spread if spread > 0 else 1.0)
        raster.values[band] = values.reshape(raster.nrows, raster.ncols)
    return raster


def simulate_design(
    spec: DesignSpec, mesh: Mesh, rng: np.random.Generator
) -> Design:
    """
    Generates footprint geometry along parallel tracks and covariate surfaces.

    Orbits without configured azimuths or anchors get uniform random ones, the
    azimuth in [0, 180) degrees and the anchor inside the domain.

    Args:
        spec: design specification
        mesh: mesh covering the domain
        rng: random stream

    Returns:
        the design
    """
    spec.validate()
    azimuths = (
        rng.uniform(0.0, 180.0, spec.orbits) if spec.azimuths is None else spec.azimuths
    )
    if spec.anchors is None:
        domain = spec.domain
        anchors = np.column_stack(
            [
                rng.uniform(domain.xmin, domain.xmax, spec.orbits),
                rng.uniform(domain.ymin, domain.ymax, spec.orbits),
            ]
        )
    else:
        anchors = np.asarray(spec.anchors, dtype=float)
    blocks = [
        track_points(anchor, azimuth, spec)
        for (anchor, azimuth) in zip(anchors, azimuths)
    ]
    coordinates = np.concatenate(blocks) if blocks else np.zeros((0, 2))
    if coordinates.shape[0] == 0:
        raise EmptyDesign("No simulated footprint falls inside the domain.")
    orbits = np.repeat(np.arange(spec.orbits), [block.shape[0] for block in blocks])
    fem = assemble_fem(mesh)
    raster: Optional[RasterGrid] = None
    covariates = np.zeros((coordinates.shape[0], 0))
    if spec.bands > 0:
        raster = covariate_raster(spec, mesh, fem, rng)
        covariates = raster.sample(coordinates)
    logger.info(
        f"Simulated {coordinates.shape[0]} footprints on {spec.orbits} orbit(s) with "
        f"{spec.bands} covariate band(s)."
    )
    return Design(coordinates, orbits, covariates, raster, mesh)


def _coefficients(values: Sequence[float], p: int, name: str) -> np.ndarray:
    """Fits a coefficient list to p covariates, padding with zeros or truncating."""
    values = np.asarray(values, dtype=float)
    if values.size != p:
        logger.warning(
            f"Generating parameter {name} has {values.size} entries for {p} "
            "covariate(s); padding with zeros or truncating."
        )
    result = np.zeros(p)
    result[: min(p, values.size)] = values[:p]
    return result


def _theta(truth: Dict[str, Any], suffix: str) -> Optional[MaternParams]:
    sigma2 = truth.get(f"sigma2{suffix}")
    if sigma2 is None or sigma2 == 0:
        return None
    return MaternParams(float(sigma2), float(truth[f"phi{suffix}"]))


def simulate_response(
    design: Design,
    truth: Dict[str, Any],
    model: ModelKind,
    rng: np.random.Generator,
    fem: Optional[FemMatrices] = None,
) -> Tuple[FootprintTable, TruthRecord]:
    """
    Draws responses at the design's footprints from the chosen model.

    A variance sigma2 of 0 switches the corresponding spatial process off and a
    noise variance tau2 of 0 switches the noise off.

    Args:
        design: simulated geometry and covariates
        truth: generating parameters (see DEFAULT_TRUTH)
        model: generating model
        rng: random stream
        fem: finite element matrices of the design's mesh, assembled if None

    Returns:
        (footprints, truth record)
    """
    fem = assemble_fem(design.mesh) if fem is None else fem
    projection = projection_matrix(design.mesh, design.coordinates)
    X: np.ndarray = design.covariates
    p: int = X.shape[1]
    num_points: int = X.shape[0]

    def class_response(suffix: str) -> Tuple[np.ndarray, np.ndarray]:
        w = _gaussian_field(_theta(truth, suffix), fem, rng)
        beta = _coefficients(truth[f"beta{suffix}"], p, f"beta{suffix}")
        noise = np.sqrt(float(truth[f"tau2{suffix}"])) * rng.standard_normal(num_points)
        return (float(truth[f"mu{suffix}"]) + X @ beta + projection.dot(w) + noise, w)

    if model is ModelKind.TYPICAL:
        (response, w) = class_response("")
        record = TruthRecord(model, dict(truth), {"w": w})
    else:
        (response1, w1) = class_response("_1")
        (response0, w0) = class_response("_0")
        w_z = _gaussian_field(_theta(truth, "_z"), fem, rng)
        beta_z = _coefficients(truth["beta_z"], p, "beta_z")
        probabilities = expit(float(truth["mu_z"]) + X @ beta_z + projection.dot(w_z))
        labels = (rng.uniform(size=num_points) < probabilities).astype(np.int64)
        response = np.where(labels == 1, response1, response0)
        record = TruthRecord(
            model,
            dict(truth),
            {"w_1": w1, "w_0": w0, "w_z": w_z},
            labels,
            probabilities,
        )
        logger.info(f"{labels.sum()} of {num_points} simulated footprints in class 1.")
    table = FootprintTable.from_arrays(design.coordinates, response, X, design.orbits)
    return (table, record)


def empirical_variogram(
    coordinates: np.ndarray, values: np.ndarray, bin_edges: Sequence[float]
) -> Variogram:
    """
    Computes a binned isotropic semivariogram.

    Args:
        coordinates: (n, 2) point coordinates
        values: length-n values at the points
        bin_edges: increasing distance bin edges (m)

    Returns:
        lag, semivariance and pair count of each bin
    """
    coordinates = np.asarray(coordinates, dtype=float)
    values = np.asarray(values, dtype=float).reshape(-1, 1)
    edges = np.asarray(bin_edges, dtype=float)
    distances = pdist(coordinates)
    half_squares = 0.5 * pdist(values, metric="sqeuclidean")
    num_bins: int = edges.size - 1
    bins = np.digitize(distances, edges) - 1
    valid = (bins >= 0) & (bins < num_bins)
    counts = np.bincount(bins[valid], minlength=num_bins)
    lag_sums = np.bincount(bins[valid], weights=distances[valid], minlength=num_bins)
    sums = np.bincount(bins[valid], weights=half_squares[valid], minlength=num_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        return Variogram(lag_sums / counts, sums / counts, counts)


def simulate_from_config(
    config: RunConfig,
) -> Tuple[Design, FootprintTable, TruthRecord]:
    """
    Runs a full simulation from the sim_* keys of a configuration.

    Args:
        config: run configuration

    Returns:
        (design, footprints, truth record)
    """
    spec = DesignSpec.from_config(config)
    rng = np.random.default_rng(np.random.SeedSequence(config["seed"]))
    mesh = simulation_mesh(spec, config)
    design = simulate_design(spec, mesh, rng)
    (table, truth) = simulate_response(
        design, config["sim_truth"], config["sim_model"], rng
    )
    return (design, table, truth)
