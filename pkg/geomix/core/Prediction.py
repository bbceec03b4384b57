import logging
from typing import Callable, Dict, List, NamedTuple, Optional, Tuple

import numpy as np
import scipy.sparse as sparse
from scipy.special import expit

from geomix.core.ChainDraws import ChainDraws
from geomix.core.Errors import DimensionMismatch, UnsupportedTransform
from geomix.core.Mesh import Mesh, ProjectionMatrix, projection_matrix
from geomix.core.MixtureSampler import BERNOULLI_PREFIX, CLASS_PREFIXES
from geomix.core.ModelKind import ModelKind
from geomix.core.RasterGrid import RasterGrid

logger = logging.getLogger(__name__)

NOISE_BLOCK_SIZE: int = 1024
"""Number of locations sharing one block of prediction noise."""
CLASS1_NOISE_STREAM: int = 0
"""Noise stream of the typical model and of class 1."""
CLASS0_NOISE_STREAM: int = 1
"""Noise stream of class 0."""
LABEL_STREAM: int = 2
"""Stream of uniforms used to draw class labels."""
SUMMARY_BANDS: List[str] = ["mean", "sd", "q025", "q975"]
"""Bands of every prediction summary raster."""
MIXTURE_SUMMARY_BANDS: List[str] = SUMMARY_BANDS + ["class_mode", "class_probability"]
"""Bands of a mixture prediction summary raster."""
IDENTITY: str = "identity"
"""Tag of draws on the model (log) scale."""


class Transform(NamedTuple):
    """Strictly monotone differentiable map applied to response draws."""

    function: Callable[[np.ndarray], np.ndarray]
    """the map g"""
    log_abs_derivative: Callable[[np.ndarray], np.ndarray]
    """log |g'(y)|"""
    domain_check: Callable[[np.ndarray], bool]
    """True if every value is in the domain of g"""


def _everywhere(values: np.ndarray) -> bool:
    return True


def _positive(values: np.ndarray) -> bool:
    return bool(np.all(np.asarray(values) > 0))


TRANSFORMS: Dict[str, Transform] = {
    "exp": Transform(
        np.exp, lambda values: np.asarray(values, dtype=float), _everywhere
    ),
    "log": Transform(np.log, lambda values: -np.log(values), _positive),
    IDENTITY: Transform(
        lambda values: np.asarray(values, dtype=float),
        lambda values: np.zeros_like(values, dtype=float),
        _everywhere,
    ),
}
"""Response transformations by name."""


def get_transform(name: str) -> Transform:
    """
    Looks up a transformation by name.

    Args:
        name: one of the keys of TRANSFORMS

    Returns:
        the transformation
    """
    try:
        return TRANSFORMS[name]
    except KeyError:
        raise UnsupportedTransform(
            f"Unknown transform {name!r}; supported: {sorted(TRANSFORMS)}."
        )


class PredictionNoise:
    """
    Counter-style source of prediction randomness.

    The values used for location j of draw m depend only on (seed, stream, m, j),
    so predictions do not depend on how locations are split into chunks (as long
    as the number of draws is the same).
    """

    def __init__(self, seed: int):
        """
        Args:
            seed: run seed
        """
        self.seed: int = int(seed)

    def _block(self, stream: int, block: int, num_draws: int, kind: str) -> np.ndarray:
        rng = np.random.default_rng(
            np.random.SeedSequence(self.seed, spawn_key=(stream, block))
        )
        shape = (num_draws, NOISE_BLOCK_SIZE)
        if kind == "normal":
            return rng.standard_normal(shape)
        return rng.uniform(size=shape)

    def _values(
        self, stream: int, num_draws: int, offset: int, count: int, kind: str
    ) -> np.ndarray:
        result = np.empty((num_draws, count))
        if count == 0:
            return result
        first_block: int = offset // NOISE_BLOCK_SIZE
        last_block: int = (offset + count - 1) // NOISE_BLOCK_SIZE
        for block in range(first_block, last_block + 1):
            block_start: int = block * NOISE_BLOCK_SIZE
            start = max(offset, block_start)
            end = min(offset + count, block_start + NOISE_BLOCK_SIZE)
            values = self._block(stream, block, num_draws, kind)
            result[:, start - offset : end - offset] = values[
                :, start - block_start : end - block_start
            ]
        return result

    def normals(
        self, stream: int, num_draws: int, offset: int, count: int
    ) -> np.ndarray:
        """
        Gets standard normal values for a contiguous range of locations.

        Args:
            stream: noise stream
            num_draws: number of posterior draws M
            offset: global index of the first location
            count: number of locations

        Returns:
            (M, count) array
        """
        return self._values(stream, num_draws, offset, count, "normal")

    def uniforms(
        self, stream: int, num_draws: int, offset: int, count: int
    ) -> np.ndarray:
        """
        Gets uniform(0, 1) values for a contiguous range of locations.

        Args:
            stream: noise stream
            num_draws: number of posterior draws M
            offset: global index of the first location
            count: number of locations

        Returns:
            (M, count) array
        """
        return self._values(stream, num_draws, offset, count, "uniform")


class PredictiveDraws(NamedTuple):
    """Posterior predictive draws at a set of locations."""

    values: np.ndarray
    """(M, n*) response draws"""
    labels: Optional[np.ndarray] = None
    """(M, n*) class label draws (mixture model only)"""
    probabilities: Optional[np.ndarray] = None
    """(M, n*) class 1 probabilities (mixture model only)"""
    transform: str = IDENTITY
    """transformation applied to the draws"""

    @property
    def num_draws(self) -> int:
        """Number of draws M."""
        return self.values.shape[0]

    @property
    def num_locations(self) -> int:
        """Number of locations n*."""
        return self.values.shape[1]

    @property
    def is_mixture(self) -> bool:
        """Whether class draws are present."""
        return self.labels is not None

    def mean(self) -> np.ndarray:
        """Per-location mean of the draws."""
        return self.values.mean(axis=0)

    def sd(self) -> np.ndarray:
        """Per-location standard deviation of the draws."""
        return self.values.std(axis=0, ddof=1 if self.num_draws > 1 else 0)

    def quantile(self, probability: float) -> np.ndarray:
        """
        Per-location quantile of the draws.

        Args:
            probability: quantile level in [0, 1]

        Returns:
            length-n* array (an order statistic of the draws)
        """
        return np.quantile(self.values, probability, axis=0, method="inverted_cdf")

    def interval(self, level: float = 0.95) -> Tuple[np.ndarray, np.ndarray]:
        """
        Equal-tailed credible interval of each location.

        Args:
            level: coverage of the interval

        Returns:
            (lower, upper) endpoints
        """
        tail: float = (1 - level) / 2
        return (self.quantile(tail), self.quantile(1 - tail))

    def class_probability(self) -> np.ndarray:
        """Fraction of draws in class 1 at each location."""
        if self.labels is None:
            raise ValueError("Class probabilities need mixture draws.")
        return self.labels.mean(axis=0)

    def class_mode(self) -> np.ndarray:
        """Most frequent class label at each location (ties go to class 1)."""
        return (self.class_probability() >= 0.5).astype(float)


def _check_inputs(
    draws: ChainDraws, covariates: np.ndarray, projection: ProjectionMatrix, prefix: str
) -> np.ndarray:
    covariates = np.asarray(covariates, dtype=float)
    num_covariates: int = len(draws.columns_with_prefix(f"{prefix}beta_"))
    if covariates.ndim == 1:
        covariates = covariates.reshape(-1, 1)
    if covariates.ndim != 2:
        raise DimensionMismatch("Covariates must be an (n*, p) array.")
    if covariates.shape[1] != num_covariates:
        raise DimensionMismatch(
            f"Draws have {num_covariates} covariate(s) but {covariates.shape[1]} given."
        )
    if covariates.shape[0] != projection.num_points:
        raise DimensionMismatch(
            f"{covariates.shape[0]} covariate rows but {projection.num_points} "
            "projection rows."
        )
    if draws.effect(f"{prefix}w").shape[1] != projection.num_vertices:
        raise DimensionMismatch("Projection columns do not match the effect length.")
    return covariates


def _linear_predictor(
    draws: ChainDraws, covariates: np.ndarray, projection: ProjectionMatrix, prefix: str
) -> np.ndarray:
    """
    Evaluates mu + X beta + A w for every draw.

    Returns:
        (M, n*) array
    """
    covariates = _check_inputs(draws, covariates, projection, prefix)
    beta = draws.matrix(f"{prefix}beta_")
    result = np.asarray((projection.matrix @ draws.effect(f"{prefix}w").T).T)
    result = result + draws.scalar(f"{prefix}mu")[:, np.newaxis]
    for index in range(beta.shape[1]):
        result = result + beta[:, index : index + 1] * covariates[np.newaxis, :, index]
    return result


def _gaussian_draws(
    draws: ChainDraws,
    covariates: np.ndarray,
    projection: ProjectionMatrix,
    noise: PredictionNoise,
    stream: int,
    offset: int,
    prefix: str,
) -> np.ndarray:
    mean = _linear_predictor(draws, covariates, projection, prefix)
    scale = np.sqrt(draws.scalar(f"{prefix}tau2"))[:, np.newaxis]
    return mean + scale * noise.normals(stream, draws.num_draws, offset, mean.shape[1])


def predict_typical(
    draws: ChainDraws,
    covariates: np.ndarray,
    projection: ProjectionMatrix,
    noise: Optional[PredictionNoise] = None,
    offset: int = 0,
) -> PredictiveDraws:
    """
    Draws from the posterior predictive of the linear spatial model.

    Args:
        draws: typical model draws
        covariates: (n*, p) covariates centered with the training constants
        projection: projection of the locations onto the mesh
        noise: source of prediction noise (seeded from the draws if None)
        offset: global index of the first location (for chunked prediction)

    Returns:
        predictive draws mu + X beta + A w + eps per posterior draw
    """
    noise = PredictionNoise(draws.metadata.seed) if noise is None else noise
    values = _gaussian_draws(
        draws, covariates, projection, noise, CLASS1_NOISE_STREAM, offset, ""
    )
    return PredictiveDraws(values)


def class_probabilities(
    draws: ChainDraws, covariates: np.ndarray, projection: ProjectionMatrix
) -> np.ndarray:
    """
    Evaluates the class 1 probability surface for every draw.

    Args:
        draws: mixture model draws
        covariates: (n*, p) centered covariates
        projection: projection of the locations onto the mesh

    Returns:
        (M, n*) array of logit^-1(mu_z + X beta_z + A w_z)
    """
    return expit(_linear_predictor(draws, covariates, projection, BERNOULLI_PREFIX))


def predict_mixture(
    draws: ChainDraws,
    covariates: np.ndarray,
    projection: ProjectionMatrix,
    noise: Optional[PredictionNoise] = None,
    offset: int = 0,
) -> PredictiveDraws:
    """
    Draws from the posterior predictive of the two-class mixture.

    For every draw the class 1 probability is evaluated, a label is drawn from it
    and the response is taken from the corresponding class's predictive draw.

    Args:
        draws: mixture model draws
        covariates: (n*, p) covariates centered with the training constants
        projection: projection of the locations onto the mesh
        noise: source of prediction noise (seeded from the draws if None)
        offset: global index of the first location (for chunked prediction)

    Returns:
        predictive draws with class labels and probabilities
    """
    noise = PredictionNoise(draws.metadata.seed) if noise is None else noise
    (class0, class1) = CLASS_PREFIXES
    values1 = _gaussian_draws(
        draws, covariates, projection, noise, CLASS1_NOISE_STREAM, offset, class1
    )
    values0 = _gaussian_draws(
        draws, covariates, projection, noise, CLASS0_NOISE_STREAM, offset, class0
    )
    probabilities = class_probabilities(draws, covariates, projection)
    uniforms = noise.uniforms(
        LABEL_STREAM, draws.num_draws, offset, probabilities.shape[1]
    )
    labels = (uniforms < probabilities).astype(float)
    values = labels * values1 + (1 - labels) * values0
    return PredictiveDraws(values, labels, probabilities)


def predict(
    draws: ChainDraws,
    covariates: np.ndarray,
    projection: ProjectionMatrix,
    noise: Optional[PredictionNoise] = None,
    offset: int = 0,
) -> PredictiveDraws:
    """
    Dispatches to predict_typical or predict_mixture by the draws' model.

    Args:
        draws: fitted draws
        covariates: (n*, p) centered covariates
        projection: projection of the locations onto the mesh
        noise: source of prediction noise
        offset: global index of the first location

    Returns:
        predictive draws
    """
    if draws.model is ModelKind.MIXTURE:
        return predict_mixture(draws, covariates, projection, noise, offset)
    return predict_typical(draws, covariates, projection, noise, offset)


def back_transform(prediction: PredictiveDraws, name: str) -> PredictiveDraws:
    """
    Applies a monotone transformation to every response draw.

    Quantiles of strictly increasing transforms map exactly through the transform.

    Args:
        prediction: predictive draws
        name: transformation name (see TRANSFORMS)

    Returns:
        transformed draws; labels and probabilities are unchanged
    """
    transform: Transform = get_transform(name)
    if not transform.domain_check(prediction.values):
        raise UnsupportedTransform(f"Draws fall outside the domain of {name}.")
    if name == IDENTITY:
        return prediction
    tag: str = name
    if prediction.transform != IDENTITY:
        tag = f"{name}({prediction.transform})"
    return prediction._replace(
        values=transform.function(prediction.values), transform=tag
    )


def summary_band_names(model: ModelKind) -> List[str]:
    """
    Names of the bands of a prediction summary raster.

    Args:
        model: fitted model

    Returns:
        band names in raster order
    """
    return list(MIXTURE_SUMMARY_BANDS if model is ModelKind.MIXTURE else SUMMARY_BANDS)


def summarize(prediction: PredictiveDraws) -> np.ndarray:
    """
    Per-location summaries of predictive draws.

    Args:
        prediction: predictive draws

    Returns:
        (bands, n*) array in the order of summary_band_names
    """
    (lower, upper) = prediction.interval(0.95)
    rows = [prediction.mean(), prediction.sd(), lower, upper]
    if prediction.is_mixture:
        rows += [prediction.class_mode(), prediction.class_probability()]
    return np.stack(rows)


def predict_raster(
    draws: ChainDraws,
    covariates: RasterGrid,
    mesh: Mesh,
    chunk_size: int,
    noise: Optional[PredictionNoise] = None,
    transform: str = IDENTITY,
) -> RasterGrid:
    """
    Predicts every cell of a covariate raster, chunk by chunk.

    Only per-cell summaries are kept. Cells outside the mesh or with a missing
    covariate are left missing. Results do not depend on the chunk size.

    Args:
        draws: fitted draws
        covariates: raster with one band per covariate, in model order
        mesh: mesh the draws were fit on
        chunk_size: number of cells predicted at once
        noise: source of prediction noise (seeded from the draws if None)
        transform: transformation applied to the draws before summarizing

    Returns:
        raster with the bands of summary_band_names
    """
    if chunk_size < 1:
        raise ValueError(f"Chunk size must be positive, got {chunk_size}.")
    num_bands: int = len(draws.metadata.band_names)
    if num_bands and covariates.bands != num_bands:
        raise DimensionMismatch(
            f"Raster has {covariates.bands} band(s) but the model uses {num_bands}."
        )
    noise = PredictionNoise(draws.metadata.seed) if noise is None else noise
    get_transform(transform)
    centres: np.ndarray = covariates.cell_centres()
    raw: np.ndarray = covariates.flat_values()[:, :num_bands]
    centred: np.ndarray = draws.metadata.centering.apply(raw)
    names: List[str] = summary_band_names(draws.model)
    output = np.full((len(names), covariates.num_cells), np.nan)
    (triangles, _) = mesh.locate_many(centres)
    valid = (triangles >= 0) & np.all(np.isfinite(centred), axis=1)
    logger.info(
        f"Predicting {valid.sum()} of {covariates.num_cells} cells in chunks of "
        f"{chunk_size}."
    )
    for start in range(0, covariates.num_cells, chunk_size):
        end = min(start + chunk_size, covariates.num_cells)
        inside = valid[start:end]
        if not np.any(inside):
            continue
        projection = projection_matrix(mesh, centres[start:end][inside])
        selection = sparse.csr_matrix(
            (
                np.ones(inside.sum()),
                (np.flatnonzero(inside), np.arange(inside.sum())),
            ),
            shape=(end - start, int(inside.sum())),
        )
        full = ProjectionMatrix(sparse.csr_matrix(selection @ projection.matrix))
        chunk_covariates = np.nan_to_num(
            centred[start:end], nan=0.0, posinf=0.0, neginf=0.0
        )
        prediction = back_transform(
            predict(draws, chunk_covariates, full, noise, offset=start), transform
        )
        summary = summarize(prediction)
        output[:, start:end][:, inside] = summary[:, inside]
        logger.debug(f"Predicted cells {start} to {end}.")
    return RasterGrid(
        output.reshape(len(names), covariates.nrows, covariates.ncols),
        covariates.x_origin,
        covariates.y_origin,
        covariates.cellsize,
    )
