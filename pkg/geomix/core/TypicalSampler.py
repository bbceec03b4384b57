import logging
from typing import Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.stats

from geomix.core.ChainDraws import ITERATION_COLUMN, ChainDraws, ChainMetadata
from geomix.core.Config import RunConfig
from geomix.core.Errors import (
    ConfigInvalid,
    DimensionMismatch,
    NotPositiveDefinite,
    RankDeficientDesign,
    ZeroResidual,
)
from geomix.core.FootprintTable import FootprintTable
from geomix.core.Mesh import Mesh, ProjectionMatrix, projection_matrix
from geomix.core.ModelKind import ModelKind
from geomix.core.SparseLinalg import CholFactor, SparseSymMatrix, cholesky, sample_gmrf
from geomix.core.Spde import (
    FemMatrices,
    MaternParams,
    PcPrior,
    assemble_fem,
    default_theta,
    log_jacobian,
    pc_log_prior,
    precision,
    prior_from_config,
)

logger = logging.getLogger(__name__)

MINIMUM_RATE: float = 1e-300
"""Inverse-gamma rates below this signal an exact fit."""
ADAPTATION_EXPONENT: float = 0.6
"""Robbins-Monro step sizes decay as (iteration + 1) ** -ADAPTATION_EXPONENT."""
MINIMUM_LOG_SCALE: float = float(np.log(1e-4))
"""Smallest log width of a proposal step."""
MAXIMUM_LOG_SCALE: float = float(np.log(10.0))
"""Largest log width of a proposal step."""
SHAPE_WARMUP: int = 20
"""Adapted proposals seen before the axis widths follow the spread of the states."""
MINIMUM_STATE_VARIANCE: float = 1e-8
"""Floor on the per-axis state variance used to shape the widths."""


class TypicalState(NamedTuple):
    """Parameters of the linear spatial model at one sampler iteration."""

    mu: float
    """intercept"""
    beta: np.ndarray
    """p regression coefficients of the centered covariates"""
    w: np.ndarray
    """k mesh-vertex spatial effects"""
    theta: MaternParams
    """Matern variance and range of the spatial process"""
    tau2: float
    """noise variance"""

    def mean_predictor(self, X: np.ndarray) -> np.ndarray:
        """
        Evaluates mu + X beta.

        Args:
            X: (n, p) centered covariates

        Returns:
            length-n vector
        """
        X = np.asarray(X, dtype=float).reshape(len(X), self.beta.size)
        return self.mu + X @ self.beta

    def linear_predictor(self, X: np.ndarray, A: ProjectionMatrix) -> np.ndarray:
        """
        Evaluates mu + X beta + A w.

        Args:
            X: (n, p) centered covariates
            A: n x k projection matrix

        Returns:
            length-n vector
        """
        return self.mean_predictor(X) + A.dot(self.w)

    def to_record(
        self, prefix: str = ""
    ) -> Tuple[Dict[str, float], Dict[str, np.ndarray]]:
        """
        Flattens the state for storage in ChainDraws.

        Args:
            prefix: prefix of every column name, e.g. "c1."

        Returns:
            (scalars, effects): scalar columns and effect vectors
        """
        scalars: Dict[str, float] = {f"{prefix}mu": float(self.mu)}
        for (index, value) in enumerate(self.beta):
            scalars[f"{prefix}beta_{index + 1}"] = float(value)
        scalars[f"{prefix}tau2"] = float(self.tau2)
        scalars[f"{prefix}sigma2"] = float(self.theta.sigma2)
        scalars[f"{prefix}phi"] = float(self.theta.phi)
        return (scalars, {f"{prefix}w": self.w.copy()})

    @classmethod
    def from_draws(
        cls, draws: ChainDraws, index: int, prefix: str = ""
    ) -> "TypicalState":
        """
        Restores the state recorded at one stored iteration.

        Args:
            draws: recorded draws
            index: 0-based index of the stored draw
            prefix: prefix used when the state was recorded

        Returns:
            the state
        """
        row = draws.scalars.iloc[index]
        beta = draws.matrix(f"{prefix}beta_")[index]
        return cls(
            mu=float(row[f"{prefix}mu"]),
            beta=beta,
            w=draws.effect(f"{prefix}w")[index],
            theta=MaternParams(
                float(row[f"{prefix}sigma2"]), float(row[f"{prefix}phi"])
            ),
            tau2=float(row[f"{prefix}tau2"]),
        )


class ThetaUpdate(NamedTuple):
    """Outcome of a Metropolis-Hastings update of Matern parameters."""

    theta: MaternParams
    """parameters after the update"""
    accepted: bool
    """whether the proposal was accepted"""
    log_det: float
    """log|Q(theta)| of the returned parameters"""


def covariate_matrix(X: np.ndarray) -> np.ndarray:
    """
    Gets covariates as an (n, p) array; a 1-D array is a single covariate.

    Args:
        X: covariates

    Returns:
        2-D float array
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, np.newaxis]
    if X.ndim != 2:
        raise DimensionMismatch(f"Covariates of shape {X.shape} are not a matrix.")
    return X


def design_matrix(X: np.ndarray) -> np.ndarray:
    """
    Prepends an intercept column.

    Args:
        X: (n, p) covariates

    Returns:
        (n, p + 1) matrix [1, X]
    """
    X = covariate_matrix(X)
    return np.column_stack([np.ones(X.shape[0]), X])


def conditional_precision(
    gram: SparseSymMatrix, prior_precision: SparseSymMatrix, tau2: float
) -> SparseSymMatrix:
    """
    Forms the precision of w given everything else, Q + A^T A / tau2.

    Args:
        gram: A^T A
        prior_precision: Q(theta)
        tau2: noise variance

    Returns:
        the conditional precision
    """
    return prior_precision + gram.scaled(1.0 / tau2)


def _check_dimensions(
    y: np.ndarray, X: np.ndarray, A: ProjectionMatrix, state: TypicalState
) -> None:
    """
    Raises DimensionMismatch unless data, projection and state agree.

    Args:
        y: responses
        X: covariates
        A: projection matrix
        state: sampler state
    """
    if not (y.shape[0] == X.shape[0] == A.num_points):
        raise DimensionMismatch(
            f"{y.shape[0]} responses, {X.shape[0]} covariate rows and "
            f"{A.num_points} projection rows do not agree."
        )
    if X.shape[1] != state.beta.size:
        raise DimensionMismatch("Covariate count does not match beta.")
    if state.w.size != A.num_vertices:
        raise DimensionMismatch("Effect length does not match the projection matrix.")
    return


def _factor_for(
    A: ProjectionMatrix,
    state: TypicalState,
    prior_precision: SparseSymMatrix,
    factor: Optional[CholFactor],
) -> CholFactor:
    """
    Gets the factorization of Q + A^T A / tau2, computing it if not supplied.

    Args:
        A: projection matrix
        state: current state (for tau2)
        prior_precision: Q(theta)
        factor: existing factorization, if any

    Returns:
        the factorization
    """
    if factor is not None:
        return factor
    gram = SparseSymMatrix.from_full(A.gram())
    return cholesky(conditional_precision(gram, prior_precision, state.tau2))


def sample_w(
    y: np.ndarray,
    X: np.ndarray,
    A: ProjectionMatrix,
    state: TypicalState,
    prior_precision: SparseSymMatrix,
    rng: np.random.Generator,
    factor: Optional[CholFactor] = None,
) -> np.ndarray:
    """
    Draws the spatial effects from their full conditional.

    w | rest ~ N(P^-1 A^T (y - mu - X beta) / tau2, P^-1) with
    P = Q(theta) + A^T A / tau2.

    Args:
        y: length-n responses
        X: (n, p) centered covariates
        A: n x k projection matrix
        state: current state (mu, beta and tau2 are used)
        prior_precision: Q(theta)
        rng: the chain's random stream
        factor: factorization of P if already computed

    Returns:
        k-vector of spatial effects
    """
    y = np.asarray(y, dtype=float)
    X = covariate_matrix(X)
    _check_dimensions(y, X, A, state)
    factor = _factor_for(A, state, prior_precision, factor)
    residual: np.ndarray = y - state.mean_predictor(X)
    mean: np.ndarray = factor.solve(A.matrix.T @ residual / state.tau2)
    return sample_gmrf(factor, mean, rng)


def apply_sigma_inverse(
    A: ProjectionMatrix, factor: CholFactor, tau2: float, M: np.ndarray
) -> np.ndarray:
    """
    Multiplies by the inverse marginal covariance (tau2 I + A Q^-1 A^T)^-1 using
    the Woodbury identity, so only the sparse k x k factorization is needed.

    Args:
        A: n x k projection matrix
        factor: factorization of Q + A^T A / tau2
        tau2: noise variance
        M: n-vector or (n, r) block

    Returns:
        M / tau2 - A (Q + A^T A / tau2)^-1 A^T M / tau2^2
    """
    M = np.asarray(M, dtype=float)
    return M / tau2 - A.dot(factor.solve(A.matrix.T @ M)) / tau2**2


def sample_mean_params(
    y: np.ndarray,
    X: np.ndarray,
    A: ProjectionMatrix,
    state: TypicalState,
    prior_precision: SparseSymMatrix,
    rng: np.random.Generator,
    factor: Optional[CholFactor] = None,
) -> Tuple[float, np.ndarray]:
    """
    Draws (mu, beta) jointly with the spatial effects integrated out.

    Under flat priors the conditional is normal with covariance
    (X~^T Sigma^-1 X~)^-1 and mean (X~^T Sigma^-1 X~)^-1 X~^T Sigma^-1 y, where
    X~ = [1, X] and Sigma = tau2 I + A Q^-1 A^T.

    Args:
        y: length-n responses
        X: (n, p) centered covariates
        A: n x k projection matrix
        state: current state (theta enters through prior_precision, tau2 directly)
        prior_precision: Q(theta)
        rng: the chain's random stream
        factor: factorization of Q + A^T A / tau2 if already computed

    Returns:
        (mu, beta)
    """
    y = np.asarray(y, dtype=float)
    X = covariate_matrix(X)
    _check_dimensions(y, X, A, state)
    design: np.ndarray = design_matrix(X)
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise RankDeficientDesign(
            f"Design [1, X] with {design.shape[1]} columns and {design.shape[0]} rows "
            "is not of full column rank."
        )
    factor = _factor_for(A, state, prior_precision, factor)
    weighted: np.ndarray = apply_sigma_inverse(A, factor, state.tau2, design)
    information: np.ndarray = design.T @ weighted
    information = 0.5 * (information + information.T)
    try:
        lower: np.ndarray = np.linalg.cholesky(information)
    except np.linalg.LinAlgError:
        raise RankDeficientDesign(
            "Information matrix of (mu, beta) is not positive definite."
        )
    mean: np.ndarray = scipy.linalg.cho_solve((lower, True), weighted.T @ y)
    draw: np.ndarray = mean + scipy.linalg.solve_triangular(
        lower.T, rng.standard_normal(mean.size), lower=False
    )
    return (float(draw[0]), draw[1:])


def sample_tau2(residual: np.ndarray, rng: np.random.Generator) -> float:
    """
    Draws the noise variance from its inverse-gamma full conditional.

    Args:
        residual: y - mu - X beta - A w
        rng: the chain's random stream

    Returns:
        draw from IG(n / 2, residual^T residual / 2)
    """
    residual = np.asarray(residual, dtype=float)
    if residual.size < 1:
        raise DimensionMismatch("At least one residual is needed.")
    rate: float = 0.5 * float(residual @ residual)
    if rate < MINIMUM_RATE:
        raise ZeroResidual(f"Residual sum of squares {2 * rate:.3e} vanishes.")
    return float(
        scipy.stats.invgamma.rvs(0.5 * residual.size, scale=rate, random_state=rng)
    )


def theta_log_target(
    w: np.ndarray,
    theta: MaternParams,
    prior: PcPrior,
    fem: FemMatrices,
    log_det: float,
) -> float:
    """
    Log target of (log sigma2, log phi) given w, up to a constant.

    Args:
        w: spatial effects
        theta: Matern parameters
        prior: PC prior
        fem: finite element matrices
        log_det: log|Q(theta)|

    Returns:
        log|Q|/2 - w^T Q w / 2 + log prior + log Jacobian
    """
    quadratic: float = precision(theta, fem).quadratic_form(w)
    return (
        0.5 * log_det
        - 0.5 * quadratic
        + pc_log_prior(theta, prior)
        + log_jacobian(theta)
    )


def mh_theta(
    w: np.ndarray,
    theta: MaternParams,
    prior: PcPrior,
    proposal_scale: Union[float, np.ndarray],
    fem: FemMatrices,
    rng: np.random.Generator,
    log_det: Optional[float] = None,
) -> ThetaUpdate:
    """
    Random-walk Metropolis-Hastings update of (log sigma2, log phi).

    A proposal whose precision cannot be factored is rejected.

    Args:
        w: spatial effects the Matern parameters are conditioned on
        theta: current parameters
        prior: PC prior
        proposal_scale: standard deviation(s) of the Gaussian step on the log scale
        fem: finite element matrices
        rng: the chain's random stream
        log_det: log|Q(theta)| of the current parameters (computed if None)

    Returns:
        ThetaUpdate with the new parameters, acceptance flag and log determinant
    """
    w = np.asarray(w, dtype=float)
    if w.size != fem.num_vertices:
        raise DimensionMismatch("Effect length does not match the mesh.")
    if log_det is None:
        log_det = cholesky(precision(theta, fem)).log_det()
    step = np.broadcast_to(np.asarray(proposal_scale, dtype=float), (2,))
    proposed = MaternParams.from_log_values(
        theta.log_values + step * rng.standard_normal(2)
    )
    log_uniform: float = np.log(rng.uniform())
    if not proposed.is_valid():
        return ThetaUpdate(theta, False, log_det)
    try:
        proposed_log_det: float = cholesky(precision(proposed, fem)).log_det()
    except NotPositiveDefinite:
        logger.debug(f"Rejecting {proposed}: precision is not positive definite.")
        return ThetaUpdate(theta, False, log_det)
    log_ratio: float = theta_log_target(
        w, proposed, prior, fem, proposed_log_det
    ) - theta_log_target(w, theta, prior, fem, log_det)
    if np.isfinite(log_ratio) and log_uniform < log_ratio:
        return ThetaUpdate(proposed, True, proposed_log_det)
    return ThetaUpdate(theta, False, log_det)


class ProposalAdapter:
    """
    Adapts the two random-walk step widths on (log sigma2, log phi).

    A common log width follows Robbins-Monro toward the target acceptance rate.
    Each axis is offset from it by the running log standard deviation of the
    visited states on that axis, so the widths follow the shape of the posterior.
    Adaptation stops once frozen.
    """

    def __init__(self, initial_scale: float, target_acceptance: float):
        """
        Creates an adapter.

        Args:
            initial_scale: starting standard deviation of the log-scale steps
            target_acceptance: acceptance rate the widths are tuned toward
        """
        self.log_scale: np.ndarray = np.full(2, np.log(initial_scale))
        self.target_acceptance: float = target_acceptance
        self.frozen: bool = False
        self._log_common: float = float(np.log(initial_scale))
        self._updates: int = 0
        self._mean: np.ndarray = np.zeros(2)
        self._sum_squares: np.ndarray = np.zeros(2)

    @property
    def scale(self) -> np.ndarray:
        """Current step widths on (log sigma2, log phi)."""
        return np.exp(self.log_scale)

    def update(self, accepted: bool, log_values: np.ndarray) -> None:
        """
        Moves the common width up after acceptances and down after rejections,
        then reshapes the per-axis widths from the states seen so far.

        Args:
            accepted: outcome of the latest proposal
            log_values: (log sigma2, log phi) of the state after the proposal
        """
        if self.frozen:
            return
        self._updates += 1
        gain: float = self._updates**-ADAPTATION_EXPONENT
        self._log_common = float(
            np.clip(
                self._log_common + gain * (float(accepted) - self.target_acceptance),
                MINIMUM_LOG_SCALE,
                MAXIMUM_LOG_SCALE,
            )
        )
        log_values = np.asarray(log_values, dtype=float)
        delta = log_values - self._mean
        self._mean += delta / self._updates
        self._sum_squares += delta * (log_values - self._mean)
        shape = np.zeros(2)
        if self._updates >= SHAPE_WARMUP:
            variance = self._sum_squares / (self._updates - 1)
            log_sd = 0.5 * np.log(np.maximum(variance, MINIMUM_STATE_VARIANCE))
            shape = log_sd - log_sd.mean()
        self.log_scale = np.clip(
            self._log_common + shape, MINIMUM_LOG_SCALE, MAXIMUM_LOG_SCALE
        )
        return

    def freeze(self) -> None:
        """Stops adaptation."""
        self.frozen = True
        return


def chain_seed_sequence(seed: int, chain: int) -> np.random.SeedSequence:
    """
    Gets the seed sequence of one chain of a run.

    Args:
        seed: the run's configured seed
        chain: 0-based chain index

    Returns:
        independent seed sequence for the chain
    """
    return np.random.SeedSequence(seed, spawn_key=(chain,))


def check_run_lengths(config: RunConfig) -> Tuple[int, int, int]:
    """
    Reads (draws, burn_in, thin) from a config, rejecting impossible values.

    Args:
        config: run configuration

    Returns:
        (draws, burn_in, thin)
    """
    (draws, burn_in, thin) = (config["draws"], config["burn_in"], config["thin"])
    if draws < 1 or thin < 1 or burn_in < 0:
        raise ConfigInvalid(
            f"draws ({draws}) and thin ({thin}) must be positive and burn_in "
            f"({burn_in}) non-negative."
        )
    return (draws, burn_in, thin)


def least_squares_start(
    y: np.ndarray, X: np.ndarray, w_length: int, diameter: float
) -> TypicalState:
    """
    Initial state: ordinary least squares (mu, beta), w = 0, tau2 = residual
    variance and theta = (0.1 residual variance, 10% of the diameter).

    Args:
        y: responses
        X: centered covariates
        w_length: number of mesh vertices
        diameter: diameter of the data's bounding box (m)

    Returns:
        the starting state
    """
    design: np.ndarray = design_matrix(X)
    (coefficients, _, rank, _) = np.linalg.lstsq(design, y, rcond=None)
    if rank < design.shape[1]:
        raise RankDeficientDesign(
            f"Design [1, X] has rank {rank} < {design.shape[1]} columns."
        )
    residual_variance: float = float(np.var(y - design @ coefficients))
    if residual_variance <= 0:
        residual_variance = max(float(np.var(y)), 1.0)
    return TypicalState(
        mu=float(coefficients[0]),
        beta=coefficients[1:],
        w=np.zeros(w_length),
        theta=default_theta(residual_variance, diameter),
        tau2=residual_variance,
    )


def fit_typical(
    data: FootprintTable,
    mesh: Mesh,
    config: RunConfig,
    chain: int = 0,
    fem: Optional[FemMatrices] = None,
    projection: Optional[ProjectionMatrix] = None,
) -> ChainDraws:
    """
    Runs one Gibbs chain for the linear spatial model.

    Each iteration draws (mu, beta) with w integrated out, then w given
    (mu, beta), then tau2, then theta by Metropolis-Hastings. The first two share
    one factorization and the theta proposal needs another.

    Args:
        data: footprints to fit
        mesh: triangulation covering every footprint
        config: run configuration
        chain: chain index (selects the random stream)
        fem: finite element matrices of the mesh, assembled if None
        projection: projection of the footprints onto the mesh, computed if None

    Returns:
        recorded post-burn-in draws
    """
    (draws, burn_in, thin) = check_run_lengths(config)
    if len(data) <= data.p + 1:
        raise RankDeficientDesign(
            f"{len(data)} footprints are too few for {data.p} covariates."
        )
    centering = data.centering(config["standardize_covariates"])
    y: np.ndarray = data.response
    X: np.ndarray = centering.apply(data.covariates)
    A: ProjectionMatrix = (
        projection_matrix(mesh, data.coordinates) if projection is None else projection
    )
    fem = assemble_fem(mesh) if fem is None else fem
    prior: PcPrior = prior_from_config(
        config["prior_sigma"], config["prior_range"], config["prior_tail_probability"]
    )
    rng = np.random.default_rng(chain_seed_sequence(config["seed"], chain))
    gram = SparseSymMatrix.from_full(A.gram())
    state: TypicalState = least_squares_start(
        y, X, mesh.num_vertices, data.bbox.diameter
    )
    log_det: float = cholesky(precision(state.theta, fem)).log_det()
    adapter = ProposalAdapter(config["proposal_scale"], config["target_acceptance"])
    scalar_records: List[Dict[str, float]] = []
    effect_records: List[Dict[str, np.ndarray]] = []
    total: int = burn_in + draws * thin
    accepted_count: int = 0
    logger.info(
        f"Chain {chain}: fitting typical model to {len(data)} footprints on "
        f"{mesh.num_vertices} mesh vertices ({total} iterations)."
    )
    for iteration in range(total):
        if iteration == burn_in:
            adapter.freeze()
        prior_precision: SparseSymMatrix = precision(state.theta, fem)
        factor = cholesky(conditional_precision(gram, prior_precision, state.tau2))
        (mu, beta) = sample_mean_params(y, X, A, state, prior_precision, rng, factor)
        state = state._replace(mu=mu, beta=beta)
        state = state._replace(w=sample_w(y, X, A, state, prior_precision, rng, factor))
        state = state._replace(tau2=sample_tau2(y - state.linear_predictor(X, A), rng))
        update: ThetaUpdate = mh_theta(
            state.w, state.theta, prior, adapter.scale, fem, rng, log_det
        )
        (state, log_det) = (state._replace(theta=update.theta), update.log_det)
        adapter.update(update.accepted, update.theta.log_values)
        accepted_count += int(update.accepted)
        if (iteration >= burn_in) and ((iteration - burn_in) % thin == 0):
            (scalars, effects) = state.to_record()
            scalars[ITERATION_COLUMN] = iteration - burn_in
            scalars["accept"] = float(update.accepted)
            scalar_records.append(scalars)
            effect_records.append(effects)
        if (iteration + 1) % config["log_every"] == 0:
            logger.info(
                f"Chain {chain}: iteration {iteration + 1}/{total}, theta acceptance "
                f"{accepted_count / (iteration + 1):.2f}, tau2 {state.tau2:.4g}."
            )
    metadata = ChainMetadata(
        model=ModelKind.TYPICAL,
        seed=config["seed"],
        chain=chain,
        burn_in=burn_in,
        thin=thin,
        centering=centering,
        band_names=data.band_names,
    )
    return ChainDraws.from_records(scalar_records, effect_records, metadata)
