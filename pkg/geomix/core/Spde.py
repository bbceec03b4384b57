import logging
from typing import NamedTuple, Optional, Union

import numpy as np
import scipy.sparse as sparse
from scipy.special import kv

from geomix.core.Errors import DegenerateTriangle
from geomix.core.Mesh import Mesh
from geomix.core.SparseLinalg import SparseSymMatrix

logger = logging.getLogger(__name__)

SQRT8: float = np.sqrt(8.0)
"""Scaling between the range parameter and the SPDE inverse length scale kappa."""
AREA_TOLERANCE: float = 1e-12
"""Triangles below this fraction of the squared mesh spacing in area are degenerate."""


class MaternParams(NamedTuple):
    """Variance and range of a Matern (smoothness 1) Gaussian process."""

    sigma2: float
    """marginal variance (response units squared)"""
    phi: float
    """range in meters; correlation at distance phi is about 0.14"""

    @property
    def kappa(self) -> float:
        """Inverse length scale of the SPDE."""
        return SQRT8 / self.phi

    @property
    def tau2(self) -> float:
        """Precision scaling that makes sigma2 the marginal variance."""
        return 1.0 / (4.0 * np.pi * self.kappa**2 * self.sigma2)

    @property
    def log_values(self) -> np.ndarray:
        """(log sigma2, log phi), the scale on which proposals are made."""
        return np.log([self.sigma2, self.phi])

    @classmethod
    def from_log_values(cls, log_values: np.ndarray) -> "MaternParams":
        """
        Creates parameters from (log sigma2, log phi).

        Args:
            log_values: length-2 array of logarithms

        Returns:
            the corresponding parameters
        """
        return cls(float(np.exp(log_values[0])), float(np.exp(log_values[1])))

    def is_valid(self) -> bool:
        """Checks that both parameters are finite and positive."""
        return bool(
            np.isfinite(self.sigma2)
            and np.isfinite(self.phi)
            and (self.sigma2 > 0)
            and (self.phi > 0)
        )


class PcPrior(NamedTuple):
    """Penalized complexity prior on (sigma, phi) given by two tail statements."""

    sigma0: float
    """scale threshold: P(sigma > sigma0) = alpha_sigma"""
    alpha_sigma: float
    """upper tail probability of the standard deviation"""
    phi0: float
    """range threshold in meters: P(phi < phi0) = alpha_phi"""
    alpha_phi: float
    """lower tail probability of the range"""

    @property
    def lambda_sigma(self) -> float:
        """Rate of the exponential prior on sigma."""
        return -np.log(self.alpha_sigma) / self.sigma0

    @property
    def lambda_phi(self) -> float:
        """Rate of the exponential prior on 1/phi."""
        return -np.log(self.alpha_phi) * self.phi0

    def validate(self) -> None:
        """Raises ValueError unless thresholds are positive and tails in (0, 1)."""
        if not (self.sigma0 > 0 and self.phi0 > 0):
            raise ValueError(
                f"PC prior thresholds must be positive, got {self.sigma0}, {self.phi0}."
            )
        for probability in (self.alpha_sigma, self.alpha_phi):
            if not (0 < probability < 1):
                raise ValueError(
                    "PC prior tail probabilities must lie in (0, 1), got "
                    f"{probability}."
                )
        return


def matern_cov(
    distance: Union[float, np.ndarray], theta: MaternParams
) -> Union[float, np.ndarray]:
    """
    Evaluates the Matern covariance with smoothness 1.

    C(d) = sigma2 * sqrt(8) (d / phi) K_1(sqrt(8) d / phi), with C(0) = sigma2.

    Args:
        distance: non-negative distance(s) in meters
        theta: variance and range

    Returns:
        covariance at each distance (same shape as distance)
    """
    scaled = SQRT8 * np.asarray(distance, dtype=float) / theta.phi
    positive = scaled > 0
    safe = np.where(positive, scaled, 1.0)
    with np.errstate(over="ignore", invalid="ignore"):
        correlation = np.where(positive, safe * kv(1, safe), 1.0)
    correlation = np.nan_to_num(correlation, nan=0.0)
    result = theta.sigma2 * correlation
    if np.ndim(distance) == 0:
        return float(result)
    return result


class FemMatrices:
    """
    Lumped mass and stiffness matrices of linear finite elements on a mesh.
    """

    def __init__(self, c_lumped: np.ndarray, stiffness: sparse.csc_matrix):
        """
        Stores the finite element matrices and aligns them on one sparsity pattern.

        Args:
            c_lumped: diagonal of the lumped mass matrix (m^2)
            stiffness: symmetric stiffness matrix G (both triangles)
        """
        self.c_lumped: np.ndarray = np.asarray(c_lumped, dtype=float)
        self.stiffness: sparse.csc_matrix = sparse.csc_matrix(stiffness)
        dimension: int = self.c_lumped.size
        mass: sparse.csc_matrix = sparse.diags(self.c_lumped, format="csc")
        self._gcg: sparse.csc_matrix = (
            self.stiffness @ sparse.diags(1.0 / self.c_lumped) @ self.stiffness
        ).tocsc()
        union = abs(mass) + abs(self.stiffness) + abs(self._gcg)
        pattern: sparse.csc_matrix = sparse.tril(union, format="csc")
        pattern.sort_indices()
        rows: np.ndarray = pattern.indices
        columns: np.ndarray = np.repeat(np.arange(dimension), np.diff(pattern.indptr))
        self._pattern: sparse.csc_matrix = pattern
        self._mass_values: np.ndarray = np.where(
            rows == columns, self.c_lumped[rows], 0.0
        )
        self._stiffness_values: np.ndarray = np.asarray(
            self.stiffness.tocsr()[rows, columns]
        ).ravel()
        self._gcg_values: np.ndarray = np.asarray(
            self._gcg.tocsr()[rows, columns]
        ).ravel()

    @property
    def num_vertices(self) -> int:
        """Number of mesh vertices k."""
        return self.c_lumped.size

    @property
    def g(self) -> SparseSymMatrix:
        """The stiffness matrix G."""
        return SparseSymMatrix.from_full(self.stiffness)

    @property
    def gcg(self) -> sparse.csc_matrix:
        """G C^-1 G, which does not depend on the Matern parameters."""
        return self._gcg

    def combine(
        self, mass: float, stiffness: float, bilaplacian: float
    ) -> SparseSymMatrix:
        """
        Forms mass * C + stiffness * G + bilaplacian * G C^-1 G on a fixed pattern.

        Args:
            mass: coefficient of C
            stiffness: coefficient of G
            bilaplacian: coefficient of G C^-1 G

        Returns:
            the combined symmetric matrix
        """
        values = (
            mass * self._mass_values
            + stiffness * self._stiffness_values
            + bilaplacian * self._gcg_values
        )
        lower = sparse.csc_matrix(
            (values, self._pattern.indices, self._pattern.indptr),
            shape=self._pattern.shape,
        )
        return SparseSymMatrix(lower)


def element_stiffness(corners: np.ndarray) -> np.ndarray:
    """
    Computes local stiffness matrices of linear triangles.

    Args:
        corners: (m, 3, 2) array of counter-clockwise triangle corners

    Returns:
        (m, 3, 3) array with entries (b_i b_j + c_i c_j) / (4 area)
    """
    x = corners[..., 0]
    y = corners[..., 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    area = 0.5 * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])
    outer = (
        b[:, :, np.newaxis] * b[:, np.newaxis, :]
        + c[:, :, np.newaxis] * c[:, np.newaxis, :]
    )
    return outer / (4.0 * area[:, np.newaxis, np.newaxis])


def assemble_fem(mesh: Mesh) -> FemMatrices:
    """
    Assembles the lumped mass and stiffness matrices of a mesh.

    Each triangle adds a third of its area to the mass of each of its vertices and
    its gradient inner-product element matrix to the stiffness.

    Args:
        mesh: the triangulation

    Returns:
        FemMatrices of the mesh
    """
    areas: np.ndarray = mesh.signed_areas
    minimum_area: float = AREA_TOLERANCE * mesh.characteristic_length**2
    degenerate = np.flatnonzero(areas < minimum_area)
    if degenerate.size:
        raise DegenerateTriangle(
            f"Triangle {degenerate[0]} has area {areas[degenerate[0]]:.3e}, "
            f"below {minimum_area:.3e} (or is clockwise)."
        )
    dimension: int = mesh.num_vertices
    c_lumped = np.bincount(
        mesh.triangles.ravel(), weights=np.repeat(areas / 3.0, 3), minlength=dimension
    )
    local = element_stiffness(mesh.vertices[mesh.triangles])
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    columns = np.tile(mesh.triangles, (1, 3)).ravel()
    stiffness = sparse.coo_matrix(
        (local.ravel(), (rows, columns)), shape=(dimension, dimension)
    ).tocsc()
    stiffness.sum_duplicates()
    logger.debug(f"Assembled FEM matrices for {dimension} vertices.")
    return FemMatrices(c_lumped, stiffness)


def precision(theta: MaternParams, fem: FemMatrices) -> SparseSymMatrix:
    """
    Builds the GMRF precision approximating a Matern field on the mesh.

    Q = tau2 (kappa^4 C + 2 kappa^2 G + G C^-1 G) with kappa = sqrt(8) / phi and
    tau2 = 1 / (4 pi kappa^2 sigma2).

    Args:
        theta: Matern variance and range
        fem: finite element matrices of the mesh

    Returns:
        sparse precision Q(theta)
    """
    kappa2: float = theta.kappa**2
    tau2: float = theta.tau2
    return fem.combine(tau2 * kappa2**2, 2.0 * tau2 * kappa2, tau2)


def pc_log_prior(theta: MaternParams, prior: PcPrior) -> float:
    """
    Evaluates the penalized complexity log prior density of (sigma, phi).

    pi(sigma) = lambda_sigma exp(-lambda_sigma sigma) and
    pi(phi) = (lambda_phi / phi^2) exp(-lambda_phi / phi), at sigma = sqrt(sigma2).

    Args:
        theta: Matern parameters
        prior: the PC prior

    Returns:
        log pi(sigma) + log pi(phi)
    """
    sigma: float = np.sqrt(theta.sigma2)
    lambda_sigma: float = prior.lambda_sigma
    lambda_phi: float = prior.lambda_phi
    return float(
        np.log(lambda_sigma)
        - lambda_sigma * sigma
        + np.log(lambda_phi)
        - 2.0 * np.log(theta.phi)
        - lambda_phi / theta.phi
    )


def log_jacobian(theta: MaternParams) -> float:
    """
    Log Jacobian of the map from (log sigma2, log phi) to (sigma, phi), up to a
    constant.

    Args:
        theta: Matern parameters

    Returns:
        log sigma + log phi
    """
    return float(0.5 * np.log(theta.sigma2) + np.log(theta.phi))


def default_theta(residual_variance: float, diameter: float) -> MaternParams:
    """
    Starting Matern parameters for a sampler.

    Args:
        residual_variance: variance of least squares residuals
        diameter: diameter of the data's bounding box (m)

    Returns:
        (0.1 residual variance, 10% of the diameter)
    """
    sigma2: float = 0.1 * residual_variance if residual_variance > 0 else 1.0
    phi: float = 0.1 * diameter if diameter > 0 else 1.0
    return MaternParams(float(sigma2), float(phi))


def prior_from_config(
    sigma0: float, phi0: float, tail_probability: float, name: Optional[str] = None
) -> PcPrior:
    """
    Creates a PC prior with the same tail probability on both statements.

    Args:
        sigma0: standard deviation threshold
        phi0: range threshold (m)
        tail_probability: probability of each tail statement
        name: label used in error messages

    Returns:
        validated PC prior
    """
    prior = PcPrior(
        float(sigma0), float(tail_probability), float(phi0), float(tail_probability)
    )
    try:
        prior.validate()
    except ValueError as exception:
        suffix = "" if name is None else f" {name}"
        raise ValueError(f"Invalid PC prior{suffix}: {exception}")
    return prior
