import logging
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np
import scipy.sparse as sparse
import scipy.stats
from scipy.special import expit, logit

from geomix.core.ChainDraws import ITERATION_COLUMN, ChainDraws, ChainMetadata
from geomix.core.Config import RunConfig
from geomix.core.Errors import (
    DegenerateComponent,
    DimensionMismatch,
    NoConvergence,
    NotPositiveDefinite,
    RankDeficientDesign,
    StepHalvingExhausted,
)
from geomix.core.FootprintTable import FootprintTable
from geomix.core.Mesh import Mesh, ProjectionMatrix, projection_matrix
from geomix.core.ModelKind import ModelKind
from geomix.core.SparseLinalg import SparseSymMatrix, cholesky, sample_gmrf
from geomix.core.Spde import (
    FemMatrices,
    MaternParams,
    PcPrior,
    assemble_fem,
    default_theta,
    precision,
    prior_from_config,
)
from geomix.core.TypicalSampler import (
    ProposalAdapter,
    ThetaUpdate,
    TypicalState,
    chain_seed_sequence,
    check_run_lengths,
    conditional_precision,
    covariate_matrix,
    design_matrix,
    least_squares_start,
    mh_theta,
    sample_mean_params,
    sample_tau2,
    sample_w,
)

logger = logging.getLogger(__name__)

EM_TOLERANCE: float = 1e-8
"""EM stops once the log-likelihood changes by less than this."""
EM_MAX_ITERATIONS: int = 500
"""Maximum number of EM iterations."""
COLLAPSE_FRACTION: float = 1e-10
"""Component variances below this fraction of var(y) count as collapsed."""
LOG_ODDS_CAP: float = 700.0
"""Label log-odds are clipped to +-LOG_ODDS_CAP before the logistic transform."""
MAX_HALVINGS: int = 30
"""Maximum number of Newton step halvings."""
SEPARATION_THRESHOLD: float = 20.0
"""Newton iterates whose linear predictor exceeds this in magnitude are diverging."""
CLASS_PREFIXES: Tuple[str, str] = ("c0.", "c1.")
"""Column prefixes of the class 0 and class 1 parameters."""
BERNOULLI_PREFIX: str = "z."
"""Column prefix of the Bernoulli process parameters."""
LABELS_EFFECT: str = "z.labels"
"""Name of the stored class label draws."""


class EmMixture(NamedTuple):
    """Fitted two-component normal mixture with equal weights."""

    mu1: float
    """mean of component 1 (initialized at the larger mean)"""
    sd1: float
    """standard deviation of component 1"""
    mu0: float
    """mean of component 0"""
    sd0: float
    """standard deviation of component 0"""
    log_likelihood: float
    """final log-likelihood"""
    iterations: int
    """number of EM iterations performed"""


class BernoulliState(NamedTuple):
    """Parameters of the latent Bernoulli process logit(pi) = mu + X beta + A w."""

    mu: float
    """intercept on the logit scale"""
    beta: np.ndarray
    """p regression coefficients on the logit scale"""
    w: np.ndarray
    """k mesh-vertex spatial effects"""
    theta: MaternParams
    """Matern variance and range of w"""

    @property
    def block(self) -> np.ndarray:
        """The stacked vector b = (mu, beta, w)."""
        return np.concatenate([[self.mu], self.beta, self.w])

    def with_block(self, block: np.ndarray) -> "BernoulliState":
        """
        Replaces (mu, beta, w) by the entries of a stacked vector.

        Args:
            block: vector (mu, beta, w)

        Returns:
            new state with the same theta
        """
        p: int = self.beta.size
        return self._replace(
            mu=float(block[0]), beta=block[1 : p + 1], w=block[p + 1 :]
        )

    def logit_probability(self, X: np.ndarray, A: ProjectionMatrix) -> np.ndarray:
        """
        Evaluates logit(pi) at the points.

        Args:
            X: (n, p) centered covariates
            A: n x k projection matrix

        Returns:
            length-n log-odds of class 1
        """
        X = np.asarray(X, dtype=float).reshape(len(X), self.beta.size)
        return self.mu + X @ self.beta + A.dot(self.w)


class MixtureState(NamedTuple):
    """Parameters of the two-class spatial mixture at one sampler iteration."""

    z: np.ndarray
    """n class labels in {0, 1}"""
    classes: Tuple[TypicalState, TypicalState]
    """parameters of class 0 and class 1, indexed by label"""
    bernoulli: BernoulliState
    """parameters of the class probability surface"""

    def to_record(self) -> Tuple[Dict[str, float], Dict[str, np.ndarray]]:
        """
        Flattens the state for storage in ChainDraws.

        Returns:
            (scalars, effects)
        """
        scalars: Dict[str, float] = {}
        effects: Dict[str, np.ndarray] = {}
        for (label, prefix) in enumerate(CLASS_PREFIXES):
            (class_scalars, class_effects) = self.classes[label].to_record(prefix)
            scalars.update(class_scalars)
            effects.update(class_effects)
        bernoulli: BernoulliState = self.bernoulli
        scalars[f"{BERNOULLI_PREFIX}mu"] = float(bernoulli.mu)
        for (index, value) in enumerate(bernoulli.beta):
            scalars[f"{BERNOULLI_PREFIX}beta_{index + 1}"] = float(value)
        scalars[f"{BERNOULLI_PREFIX}sigma2"] = float(bernoulli.theta.sigma2)
        scalars[f"{BERNOULLI_PREFIX}phi"] = float(bernoulli.theta.phi)
        scalars["n1"] = float(np.sum(self.z))
        effects[f"{BERNOULLI_PREFIX}w"] = bernoulli.w.copy()
        effects[LABELS_EFFECT] = self.z.astype(float)
        return (scalars, effects)

    @classmethod
    def from_draws(cls, draws: ChainDraws, index: int) -> "MixtureState":
        """
        Restores the state recorded at one stored iteration.

        Args:
            draws: recorded mixture draws
            index: 0-based index of the stored draw

        Returns:
            the state
        """
        row = draws.scalars.iloc[index]
        classes = tuple(
            TypicalState.from_draws(draws, index, prefix) for prefix in CLASS_PREFIXES
        )
        bernoulli = BernoulliState(
            mu=float(row[f"{BERNOULLI_PREFIX}mu"]),
            beta=draws.matrix(f"{BERNOULLI_PREFIX}beta_")[index],
            w=draws.effect(f"{BERNOULLI_PREFIX}w")[index],
            theta=MaternParams(
                float(row[f"{BERNOULLI_PREFIX}sigma2"]),
                float(row[f"{BERNOULLI_PREFIX}phi"]),
            ),
        )
        labels = draws.effect(LABELS_EFFECT)[index].astype(np.int64)
        return cls(labels, classes, bernoulli)


def em_init_z(
    y: np.ndarray,
    mu1_star: float,
    mu0_star: float,
    max_iterations: int = EM_MAX_ITERATIONS,
    tolerance: float = EM_TOLERANCE,
) -> Tuple[np.ndarray, EmMixture]:
    """
    Initial class labels from a two-component normal mixture with weights 1/2.

    Component 1 starts at the larger mean so that label 1 is the high-response
    class. Both components start with the sample standard deviation.

    Args:
        y: responses
        mu1_star: initial mean of component 1
        mu0_star: initial mean of component 0 (smaller than mu1_star)
        max_iterations: maximum number of EM iterations
        tolerance: stop once the log-likelihood changes by less than this

    Returns:
        (labels, mixture): labels are 1 where the component 1 responsibility
            exceeds 1/2
    """
    y = np.asarray(y, dtype=float)
    if y.size < 4:
        raise DimensionMismatch(f"EM needs at least 4 responses, got {y.size}.")
    if not mu1_star > mu0_star:
        raise ValueError(
            f"Initial class-1 mean {mu1_star} must exceed class-0 mean {mu0_star}."
        )
    variance_floor: float = COLLAPSE_FRACTION * float(np.var(y))
    (mu1, mu0) = (float(mu1_star), float(mu0_star))
    sd1 = sd0 = float(np.std(y)) if np.std(y) > 0 else 1.0
    previous: float = -np.inf
    iterations: int = 0
    responsibility = np.full(y.size, 0.5)
    log_likelihood = -np.inf
    for iterations in range(1, max_iterations + 1):
        log1 = scipy.stats.norm.logpdf(y, mu1, sd1)
        log0 = scipy.stats.norm.logpdf(y, mu0, sd0)
        log_total = np.logaddexp(log1, log0)
        responsibility = np.exp(log1 - log_total)
        log_likelihood = float(np.sum(log_total + np.log(0.5)))
        weight1 = responsibility.sum()
        weight0 = y.size - weight1
        if weight1 <= 0 or weight0 <= 0:
            raise DegenerateComponent("An EM component lost all of its responsibility.")
        mu1 = float(responsibility @ y / weight1)
        mu0 = float((1 - responsibility) @ y / weight0)
        variance1 = float(responsibility @ (y - mu1) ** 2 / weight1)
        variance0 = float((1 - responsibility) @ (y - mu0) ** 2 / weight0)
        if min(variance1, variance0) <= variance_floor:
            raise DegenerateComponent(
                f"EM component variance collapsed ({min(variance1, variance0):.3e})."
            )
        (sd1, sd0) = (np.sqrt(variance1), np.sqrt(variance0))
        if abs(log_likelihood - previous) < tolerance:
            break
        previous = log_likelihood
    log1 = scipy.stats.norm.logpdf(y, mu1, sd1)
    log0 = scipy.stats.norm.logpdf(y, mu0, sd0)
    labels = (log1 > log0).astype(np.int64)
    logger.info(
        f"EM converged after {iterations} iteration(s): class 1 N({mu1:.3f}, "
        f"{sd1:.3f}^2) with {labels.sum()} points, class 0 N({mu0:.3f}, {sd0:.3f}^2)."
    )
    mixture = EmMixture(mu1, float(sd1), mu0, float(sd0), log_likelihood, iterations)
    return (labels, mixture)


def label_log_odds(
    y: np.ndarray, X: np.ndarray, A: ProjectionMatrix, state: MixtureState
) -> np.ndarray:
    """
    Posterior log-odds of class 1 given the state: logit(pi) + log f1 - log f0.

    Args:
        y: responses
        X: centered covariates
        A: projection matrix
        state: current state

    Returns:
        length-n log-odds clipped to +-LOG_ODDS_CAP
    """
    y = np.asarray(y, dtype=float)
    (class0, class1) = state.classes
    log_f1 = scipy.stats.norm.logpdf(
        y, class1.linear_predictor(X, A), np.sqrt(class1.tau2)
    )
    log_f0 = scipy.stats.norm.logpdf(
        y, class0.linear_predictor(X, A), np.sqrt(class0.tau2)
    )
    log_odds = state.bernoulli.logit_probability(X, A) + log_f1 - log_f0
    return np.clip(np.nan_to_num(log_odds, nan=0.0), -LOG_ODDS_CAP, LOG_ODDS_CAP)


def sample_z(
    y: np.ndarray,
    X: np.ndarray,
    A: ProjectionMatrix,
    state: MixtureState,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    Draws every class label independently from its full conditional.

    Args:
        y: responses
        X: centered covariates
        A: projection matrix
        state: current state

    Returns:
        length-n labels in {0, 1}
    """
    probability = expit(label_log_odds(y, X, A, state))
    return (rng.uniform(size=probability.size) < probability).astype(np.int64)


class BernoulliBlock:
    """
    Log posterior of the Bernoulli process block b = (mu_z, beta_z, w_z) given
    labels, with a flat prior on (mu_z, beta_z) and N(0, Q^-1) on w_z.
    """

    def __init__(
        self,
        z: np.ndarray,
        X: np.ndarray,
        A: ProjectionMatrix,
        w_precision: Optional[SparseSymMatrix],
    ):
        """
        Assembles the block design [1, X, A].

        Args:
            z: length-n labels
            X: (n, p) centered covariates
            A: n x k projection matrix (k may be 0)
            w_precision: Q(theta_z), None when k = 0
        """
        self.z: np.ndarray = np.asarray(z, dtype=float)
        X = covariate_matrix(X)
        if A.num_points != self.z.size:
            raise DimensionMismatch("Labels and projection rows do not agree.")
        self.num_fixed: int = 1 + X.shape[1]
        self.design: sparse.csr_matrix = sparse.hstack(
            [sparse.csr_matrix(design_matrix(X)), A.matrix], format="csr"
        )
        self.w_precision: Optional[SparseSymMatrix] = w_precision
        if (w_precision is None) != (A.num_vertices == 0):
            raise DimensionMismatch("A spatial precision is needed iff A has columns.")
        self._prior: Optional[sparse.csc_matrix] = None
        if w_precision is not None:
            if w_precision.dimension != A.num_vertices:
                raise DimensionMismatch("Spatial precision does not match A.")
            self._prior = sparse.block_diag(
                [
                    sparse.csc_matrix((self.num_fixed, self.num_fixed)),
                    w_precision.full(),
                ],
                format="csc",
            )

    @property
    def dimension(self) -> int:
        """Length of the block vector, 1 + p + k."""
        return self.design.shape[1]

    def _prior_product(self, block: np.ndarray) -> np.ndarray:
        """Computes Q~ b."""
        if self._prior is None:
            return np.zeros_like(block)
        return self._prior @ block

    def log_posterior(self, block: np.ndarray) -> float:
        """
        Evaluates the log posterior (up to a constant).

        Args:
            block: vector (mu, beta, w)

        Returns:
            sum(z eta - log(1 + exp(eta))) - b^T Q~ b / 2
        """
        eta = self.design @ block
        return float(
            self.z @ eta - np.sum(np.logaddexp(0.0, eta))
            - 0.5 * block @ self._prior_product(block)
        )

    def gradient(self, block: np.ndarray) -> np.ndarray:
        """
        Evaluates the gradient of the log posterior.

        Args:
            block: vector (mu, beta, w)

        Returns:
            A~^T (z - pi) - Q~ b
        """
        probability = expit(self.design @ block)
        return self.design.T @ (self.z - probability) - self._prior_product(block)

    def precision_at(self, block: np.ndarray) -> SparseSymMatrix:
        """
        Evaluates the negative Hessian Q~ + A~^T D A~ with D = diag(pi (1 - pi)).

        Args:
            block: vector (mu, beta, w)

        Returns:
            the negative Hessian as a sparse symmetric matrix
        """
        probability = expit(self.design @ block)
        weights = probability * (1 - probability)
        information = self.design.T @ sparse.diags(weights) @ self.design
        if self._prior is not None:
            information = information + self._prior
        return SparseSymMatrix.from_full(sparse.csc_matrix(information))

    def max_abs_predictor(self, block: np.ndarray) -> float:
        """Gets max |A~ b|."""
        eta = self.design @ block
        return float(np.max(np.abs(eta))) if eta.size else 0.0


def newton_raphson_mode(
    z: np.ndarray,
    X: np.ndarray,
    A: ProjectionMatrix,
    theta_z: Optional[MaternParams],
    start: np.ndarray,
    fem: Optional[FemMatrices] = None,
    max_iterations: int = 50,
    tolerance: float = 1e-8,
) -> Tuple[np.ndarray, SparseSymMatrix]:
    """
    Finds the posterior mode of the Bernoulli process block given the labels.

    Each iteration moves by the Newton step (Q~ + A~^T D A~)^-1 gradient, halving
    the step (up to 30 times) while the log posterior would decrease.

    Args:
        z: labels
        X: centered covariates
        A: projection matrix (may have no columns, in which case theta_z and fem
            are unused)
        theta_z: Matern parameters of w_z
        start: starting block vector (mu, beta, w)
        fem: finite element matrices of the mesh
        max_iterations: maximum number of Newton iterations
        tolerance: convergence threshold on the max-norm of the gradient

    Returns:
        (mode, precision): the mode and the negative Hessian there
    """
    w_precision: Optional[SparseSymMatrix] = None
    if A.num_vertices > 0:
        if fem is None or theta_z is None:
            raise ValueError("theta_z and fem are needed when A has columns.")
        w_precision = precision(theta_z, fem)
    target = BernoulliBlock(z, X, A, w_precision)
    block = np.asarray(start, dtype=float).copy()
    if block.size != target.dimension:
        raise DimensionMismatch(
            f"Start of length {block.size} does not match block length "
            f"{target.dimension}."
        )
    current: float = target.log_posterior(block)
    gradient = target.gradient(block)
    gradient_norm: float = float(np.max(np.abs(gradient)))
    for iteration in range(max_iterations):
        if gradient_norm < tolerance:
            return (block, target.precision_at(block))
        try:
            step = cholesky(target.precision_at(block)).solve(gradient)
        except NotPositiveDefinite:
            raise NoConvergence("Newton-Raphson Hessian is singular", gradient_norm)
        length: float = 1.0
        for _ in range(MAX_HALVINGS + 1):
            candidate = block + length * step
            value = target.log_posterior(candidate)
            if value >= current - 1e-12 * (1.0 + abs(current)):
                break
            length *= 0.5
        else:
            raise StepHalvingExhausted(
                f"No halved Newton step increased the log posterior at iteration "
                f"{iteration} (gradient norm {gradient_norm:.3e})."
            )
        (block, current) = (candidate, value)
        if target.max_abs_predictor(block) > SEPARATION_THRESHOLD:
            raise NoConvergence(
                "Newton-Raphson iterates diverge (labels appear separated)",
                gradient_norm,
            )
        gradient = target.gradient(block)
        gradient_norm = float(np.max(np.abs(gradient)))
    if gradient_norm < tolerance:
        return (block, target.precision_at(block))
    raise NoConvergence(
        f"Newton-Raphson did not converge in {max_iterations} iterations", gradient_norm
    )


def laplace_sample_b(
    mode: np.ndarray, precision_matrix: SparseSymMatrix, rng: np.random.Generator
) -> np.ndarray:
    """
    Draws the Bernoulli process block from its Laplace approximation.

    Args:
        mode: posterior mode of the block
        precision_matrix: negative Hessian at the mode
        rng: the chain's random stream

    Returns:
        draw from N(mode, precision^-1)
    """
    return sample_gmrf(cholesky(precision_matrix), mode, rng)


def _update_class(
    y: np.ndarray,
    X: np.ndarray,
    A: ProjectionMatrix,
    members: np.ndarray,
    state: TypicalState,
    fem: FemMatrices,
    rng: np.random.Generator,
) -> TypicalState:
    """
    Updates (mu, beta), w and tau2 of one class from the points currently in it.

    Classes with fewer than p + 2 members keep (mu, beta, tau2) and draw w from
    its conditional given those members only (the prior if the class is empty).

    Args:
        y: all responses
        X: all centered covariates
        A: full projection matrix
        members: boolean mask of the class members
        state: the class's current parameters
        fem: finite element matrices

    Returns:
        the updated class parameters (theta untouched)
    """
    (y_class, X_class, A_class) = (y[members], X[members], A.rows(members))
    prior_precision = precision(state.theta, fem)
    gram = SparseSymMatrix.from_full(A_class.gram())
    factor = cholesky(conditional_precision(gram, prior_precision, state.tau2))
    if y_class.size >= state.beta.size + 2:
        try:
            (mu, beta) = sample_mean_params(
                y_class, X_class, A_class, state, prior_precision, rng, factor
            )
            state = state._replace(mu=mu, beta=beta)
        except RankDeficientDesign as exception:
            logger.warning(f"Keeping class mean parameters: {exception}")
        state = state._replace(
            w=sample_w(y_class, X_class, A_class, state, prior_precision, rng, factor)
        )
        residual = y_class - state.linear_predictor(X_class, A_class)
        return state._replace(tau2=sample_tau2(residual, rng))
    logger.debug(f"Class with {y_class.size} members: skipping mean and tau2 updates.")
    return state._replace(
        w=sample_w(y_class, X_class, A_class, state, prior_precision, rng, factor)
    )


def _laplace_update(
    y_labels: np.ndarray,
    X: np.ndarray,
    A: ProjectionMatrix,
    bernoulli: BernoulliState,
    fem: FemMatrices,
    config: RunConfig,
    rng: np.random.Generator,
) -> Tuple[BernoulliState, bool]:
    """
    Newton-Raphson plus Laplace draw of the Bernoulli block, optionally corrected
    by an independence Metropolis step.

    Args:
        y_labels: current labels
        X: centered covariates
        A: projection matrix
        bernoulli: current Bernoulli process parameters (start of Newton-Raphson)
        fem: finite element matrices
        config: run configuration
        rng: the chain's random stream

    Returns:
        (new parameters, whether the draw was accepted)
    """
    try:
        (mode, mode_precision) = newton_raphson_mode(
            y_labels,
            X,
            A,
            bernoulli.theta,
            bernoulli.block,
            fem,
            max_iterations=config["newton_max_iterations"],
            tolerance=config["newton_tolerance"],
        )
    except (NoConvergence, StepHalvingExhausted) as exception:
        logger.warning(f"Keeping previous Bernoulli block: {exception}")
        return (bernoulli, False)
    factor = cholesky(mode_precision)
    proposal = sample_gmrf(factor, mode, rng)
    if not config["laplace_correction"]:
        return (bernoulli.with_block(proposal), True)
    target = BernoulliBlock(y_labels, X, A, precision(bernoulli.theta, fem))
    current = bernoulli.block
    log_ratio = (
        target.log_posterior(proposal)
        - target.log_posterior(current)
        + 0.5 * mode_precision.quadratic_form(proposal - mode)
        - 0.5 * mode_precision.quadratic_form(current - mode)
    )
    if np.log(rng.uniform()) < log_ratio:
        return (bernoulli.with_block(proposal), True)
    return (bernoulli, False)


def initial_mixture_state(
    y: np.ndarray,
    X: np.ndarray,
    labels: np.ndarray,
    num_vertices: int,
    diameter: float,
) -> MixtureState:
    """
    Starting state: least squares per class (all data for classes too small),
    intercept-only Bernoulli block at logit of the class-1 share.

    Args:
        y: responses
        X: centered covariates
        labels: initial labels
        num_vertices: number of mesh vertices
        diameter: diameter of the data's bounding box (m)

    Returns:
        the starting state
    """
    classes: List[TypicalState] = []
    p: int = X.shape[1]
    for label in (0, 1):
        members = labels == label
        if members.sum() >= p + 2:
            try:
                classes.append(
                    least_squares_start(y[members], X[members], num_vertices, diameter)
                )
                continue
            except RankDeficientDesign:
                pass
        classes.append(least_squares_start(y, X, num_vertices, diameter))
    share = float(np.clip(labels.mean(), 0.01, 0.99))
    bernoulli = BernoulliState(
        mu=float(logit(share)),
        beta=np.zeros(p),
        w=np.zeros(num_vertices),
        theta=default_theta(10.0, diameter),
    )
    return MixtureState(labels.astype(np.int64), (classes[0], classes[1]), bernoulli)


def fit_mixture(
    data: FootprintTable,
    mesh: Mesh,
    config: RunConfig,
    chain: int = 0,
    fem: Optional[FemMatrices] = None,
    projection: Optional[ProjectionMatrix] = None,
    fixed_labels: Optional[np.ndarray] = None,
) -> ChainDraws:
    """
    Runs one Gibbs chain for the two-class spatial mixture model.

    Each iteration draws the labels, updates each class like the typical model on
    its current members, draws the Bernoulli block from its Laplace approximation
    and updates the three sets of Matern parameters by Metropolis-Hastings.

    Args:
        data: footprints to fit
        mesh: triangulation covering every footprint
        config: run configuration
        chain: chain index (selects the random stream)
        fem: finite element matrices of the mesh, assembled if None
        projection: projection of the footprints onto the mesh, computed if None
        fixed_labels: if given, labels are frozen at these values and the Bernoulli
            block is not updated

    Returns:
        recorded post-burn-in draws
    """
    (draws, burn_in, thin) = check_run_lengths(config)
    if len(data) <= 2 * (data.p + 2):
        raise RankDeficientDesign(
            f"{len(data)} footprints are too few for a mixture with {data.p} "
            "covariates."
        )
    centering = data.centering(config["standardize_covariates"])
    y: np.ndarray = data.response
    X: np.ndarray = centering.apply(data.covariates)
    A: ProjectionMatrix = (
        projection_matrix(mesh, data.coordinates) if projection is None else projection
    )
    fem = assemble_fem(mesh) if fem is None else fem
    tail: float = config["prior_tail_probability"]
    class_priors: Tuple[PcPrior, PcPrior] = (
        prior_from_config(
            config["prior_sigma_0"], config["prior_range_0"], tail, "class 0"
        ),
        prior_from_config(
            config["prior_sigma_1"], config["prior_range_1"], tail, "class 1"
        ),
    )
    bernoulli_prior: PcPrior = prior_from_config(
        config["prior_sigma_z"], config["prior_range_z"], tail, "Bernoulli"
    )
    rng = np.random.default_rng(chain_seed_sequence(config["seed"], chain))
    if fixed_labels is None:
        (labels, _) = em_init_z(y, config["em_mu1"], config["em_mu0"])
    else:
        labels = np.asarray(fixed_labels, dtype=np.int64)
        if labels.shape != y.shape or not np.all((labels == 0) | (labels == 1)):
            raise DimensionMismatch("Fixed labels must be n values in {0, 1}.")
    diameter: float = data.bbox.diameter
    state = initial_mixture_state(y, X, labels, mesh.num_vertices, diameter)
    log_dets: List[float] = [
        cholesky(precision(theta, fem)).log_det()
        for theta in (
            state.classes[0].theta,
            state.classes[1].theta,
            state.bernoulli.theta,
        )
    ]
    adapters: List[ProposalAdapter] = [
        ProposalAdapter(config["proposal_scale"], config["target_acceptance"])
        for _ in range(3)
    ]
    scalar_records: List[Dict[str, float]] = []
    effect_records: List[Dict[str, np.ndarray]] = []
    total: int = burn_in + draws * thin
    logger.info(
        f"Chain {chain}: fitting mixture model to {len(data)} footprints on "
        f"{mesh.num_vertices} mesh vertices ({total} iterations)."
    )
    for iteration in range(total):
        if iteration == burn_in:
            for adapter in adapters:
                adapter.freeze()
        if fixed_labels is None:
            state = state._replace(z=sample_z(y, X, A, state, rng))
        accepted: List[bool] = []
        classes: List[TypicalState] = []
        for label in (0, 1):
            members = state.z == label
            if members.sum() < data.p + 2:
                logger.debug(
                    f"Chain {chain}: class {label} has {members.sum()} member(s) at "
                    f"iteration {iteration}."
                )
            updated = _update_class(y, X, A, members, state.classes[label], fem, rng)
            theta_update: ThetaUpdate = mh_theta(
                updated.w,
                updated.theta,
                class_priors[label],
                adapters[label].scale,
                fem,
                rng,
                log_dets[label],
            )
            log_dets[label] = theta_update.log_det
            adapters[label].update(
                theta_update.accepted, theta_update.theta.log_values
            )
            accepted.append(theta_update.accepted)
            classes.append(updated._replace(theta=theta_update.theta))
        state = state._replace(classes=(classes[0], classes[1]))
        laplace_accepted: bool = False
        if fixed_labels is None:
            (bernoulli, laplace_accepted) = _laplace_update(
                state.z, X, A, state.bernoulli, fem, config, rng
            )
            theta_update = mh_theta(
                bernoulli.w,
                bernoulli.theta,
                bernoulli_prior,
                adapters[2].scale,
                fem,
                rng,
                log_dets[2],
            )
            log_dets[2] = theta_update.log_det
            adapters[2].update(theta_update.accepted, theta_update.theta.log_values)
            accepted.append(theta_update.accepted)
            bernoulli = bernoulli._replace(theta=theta_update.theta)
            state = state._replace(bernoulli=bernoulli)
        else:
            accepted.append(False)
        if (iteration >= burn_in) and ((iteration - burn_in) % thin == 0):
            (scalars, effects) = state.to_record()
            scalars[ITERATION_COLUMN] = iteration - burn_in
            for (prefix, flag) in zip(CLASS_PREFIXES + (BERNOULLI_PREFIX,), accepted):
                scalars[f"{prefix}accept"] = float(flag)
            scalars[f"{BERNOULLI_PREFIX}laplace_accept"] = float(laplace_accepted)
            scalar_records.append(scalars)
            effect_records.append(effects)
        if (iteration + 1) % config["log_every"] == 0:
            logger.info(
                f"Chain {chain}: iteration {iteration + 1}/{total}, "
                f"{int(state.z.sum())} of {len(data)} footprints in class 1."
            )
    metadata = ChainMetadata(
        model=ModelKind.MIXTURE,
        seed=config["seed"],
        chain=chain,
        burn_in=burn_in,
        thin=thin,
        centering=centering,
        band_names=data.band_names,
    )
    return ChainDraws.from_records(scalar_records, effect_records, metadata)
