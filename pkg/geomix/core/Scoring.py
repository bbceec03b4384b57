import logging
import os
from typing import Any, Dict, Iterator, NamedTuple, Optional

import numpy as np
import pandas as pd
import scipy.stats
import yaml

from geomix.core.ChainDraws import ChainDraws
from geomix.core.Errors import (
    DegenerateTruth,
    DimensionMismatch,
    NonPositiveCpo,
    NumericalOverflow,
    UnsupportedTransform,
)
from geomix.core.FootprintTable import FootprintTable
from geomix.core.Mesh import ProjectionMatrix
from geomix.core.MixtureSampler import BERNOULLI_PREFIX, CLASS_PREFIXES
from geomix.core.ModelKind import ModelKind
from geomix.core.Prediction import IDENTITY, PredictiveDraws, get_transform

logger = logging.getLogger(__name__)

CONDITIONAL_DENSITY: str = "conditional"
"""Density method: averages of the model's conditional density over draws."""
KERNEL_DENSITY: str = "kernel"
"""Density method: Gaussian kernel density of the predictive draws."""
MINIMUM_KERNEL_SCALE: float = 1e-9
"""Smallest spread used for the kernel density of (near-)constant draws."""


class ScoreReport(NamedTuple):
    """Predictive performance of a fitted model on a set of points."""

    total_log_cpo: float
    """sum of the per-point log-densities"""
    log_densities: np.ndarray
    """per-point log predictive densities (log CPO for in-sample scoring)"""
    r2_tilde: float
    """predictive R-squared, nan if not computed"""
    coverage_95: float
    """fraction of truths inside their 95% predictive interval, nan if not computed"""
    scheme: str
    """description of how the points were scored"""
    density_method: str = CONDITIONAL_DENSITY
    """how the log-densities were computed"""

    def to_dict(self) -> Dict[str, Any]:
        """Gets a YAML-compatible summary (without per-point values)."""
        return {
            "total_log_cpo": float(self.total_log_cpo),
            "r2_tilde": float(self.r2_tilde),
            "coverage_95": float(self.coverage_95),
            "scheme": self.scheme,
            "density_method": self.density_method,
            "num_points": int(self.log_densities.size),
        }

    def save(self, directory: str, name: str) -> None:
        """
        Writes the summary as YAML and the per-point log-densities as CSV.

        Args:
            directory: directory to write into (created if needed)
            name: base name of the two files
        """
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, f"{name}.yml"), "w") as file:
            yaml.safe_dump(self.to_dict(), file, sort_keys=False)
        pd.DataFrame({"log_density": self.log_densities}).to_csv(
            os.path.join(directory, f"{name}.csv"),
            index_label="point",
            float_format="%.17g",
        )
        logger.info(f"Wrote score report {name} to {directory}.")
        return


def _class_log_densities(
    draws: ChainDraws,
    index: int,
    y: np.ndarray,
    covariates: np.ndarray,
    projection: ProjectionMatrix,
    prefix: str,
) -> np.ndarray:
    row = draws.scalars.iloc[index]
    beta = draws.matrix(f"{prefix}beta_")[index]
    mean = (
        float(row[f"{prefix}mu"])
        + covariates @ beta
        + projection.dot(draws.effect(f"{prefix}w")[index])
    )
    return scipy.stats.norm.logpdf(y, mean, np.sqrt(float(row[f"{prefix}tau2"])))


def log_conditional_densities(
    draws: ChainDraws,
    y: np.ndarray,
    covariates: np.ndarray,
    projection: ProjectionMatrix,
) -> Iterator[np.ndarray]:
    """
    Yields log f(y_i | psi_m) for one stored draw m after another.

    For the mixture model the label is marginalized with the class 1 probability
    logit^-1(mu_z + x beta_z + A w_z) of the draw.

    Args:
        draws: fitted draws
        y: length-n responses (model scale)
        covariates: (n, p) covariates centered with the training constants
        projection: projection of the points onto the mesh

    Returns:
        iterator over length-n arrays, one per draw
    """
    y = np.asarray(y, dtype=float)
    covariates = np.asarray(covariates, dtype=float)
    if covariates.ndim == 1:
        covariates = covariates.reshape(-1, 1)
    if projection.num_points != y.size:
        raise DimensionMismatch("Responses and projection rows do not agree.")
    for index in range(draws.num_draws):
        if draws.model is ModelKind.TYPICAL:
            yield _class_log_densities(draws, index, y, covariates, projection, "")
            continue
        (class0, class1) = CLASS_PREFIXES
        row = draws.scalars.iloc[index]
        eta = (
            float(row[f"{BERNOULLI_PREFIX}mu"])
            + covariates @ draws.matrix(f"{BERNOULLI_PREFIX}beta_")[index]
            + projection.dot(draws.effect(f"{BERNOULLI_PREFIX}w")[index])
        )
        log_pi1 = -np.logaddexp(0.0, -eta)
        log_pi0 = -np.logaddexp(0.0, eta)
        log_f1 = _class_log_densities(draws, index, y, covariates, projection, class1)
        log_f0 = _class_log_densities(draws, index, y, covariates, projection, class0)
        yield np.logaddexp(log_pi1 + log_f1, log_pi0 + log_f0)


def _check_finite(log_density: np.ndarray) -> None:
    bad = np.flatnonzero(~np.isfinite(log_density))
    if bad.size:
        raise NumericalOverflow(
            "Conditional density is zero at double precision", int(bad[0])
        )
    return


def log_cpo_scores(
    draws: ChainDraws,
    data: FootprintTable,
    projection: ProjectionMatrix,
    transform: str = IDENTITY,
) -> np.ndarray:
    """
    Log conditional predictive ordinates by the harmonic mean of the conditional
    densities over the draws.

    On a transformed scale h = g(y) every log-density is reduced by log|g'(y_i)|.

    Args:
        draws: draws fitted to data
        data: the training footprints
        projection: projection of the footprints onto the mesh
        transform: scale on which the densities are evaluated

    Returns:
        length-n log CPO values
    """
    if draws.num_draws == 0:
        raise ValueError("CPO needs at least one draw.")
    y: np.ndarray = data.response
    chosen = get_transform(transform)
    if not chosen.domain_check(y):
        raise UnsupportedTransform(f"Responses fall outside the domain of {transform}.")
    covariates = draws.metadata.centering.apply(data.covariates)
    accumulated = np.full(y.size, -np.inf)
    for log_density in log_conditional_densities(draws, y, covariates, projection):
        _check_finite(log_density)
        accumulated = np.logaddexp(accumulated, -log_density)
    log_cpo = np.log(draws.num_draws) - accumulated
    return log_cpo - chosen.log_abs_derivative(y)


def cpo_scores(
    draws: ChainDraws,
    data: FootprintTable,
    projection: ProjectionMatrix,
    transform: str = IDENTITY,
) -> np.ndarray:
    """
    Conditional predictive ordinates CPO_i = [mean_m 1 / f(y_i | psi_m)]^-1.

    Args:
        draws: draws fitted to data
        data: the training footprints
        projection: projection of the footprints onto the mesh
        transform: scale on which the densities are evaluated

    Returns:
        length-n CPO values
    """
    return np.exp(log_cpo_scores(draws, data, projection, transform))


def total_log_cpo(cpo: np.ndarray) -> float:
    """
    Sums log CPO values.

    Args:
        cpo: CPO values

    Returns:
        sum of log CPO_i
    """
    cpo = np.asarray(cpo, dtype=float)
    bad = np.flatnonzero(~(cpo > 0))
    if bad.size:
        raise NonPositiveCpo(f"CPO of point {bad[0]} is {cpo[bad[0]]}.")
    return float(np.sum(np.log(cpo)))


def cpo_report(
    draws: ChainDraws,
    data: FootprintTable,
    projection: ProjectionMatrix,
    transform: str = IDENTITY,
) -> ScoreReport:
    """
    In-sample CPO score of a fit.

    Args:
        draws: draws fitted to data
        data: the training footprints
        projection: projection of the footprints onto the mesh
        transform: scale on which the densities are evaluated

    Returns:
        report with the log CPO of every point
    """
    log_cpo = log_cpo_scores(draws, data, projection, transform)
    logger.info(f"Total log CPO of the {draws.model.label} model: {log_cpo.sum():.2f}.")
    return ScoreReport(
        total_log_cpo=float(log_cpo.sum()),
        log_densities=log_cpo,
        r2_tilde=float("nan"),
        coverage_95=float("nan"),
        scheme=f"cpo:{transform}",
    )


def predictive_log_density(
    draws: ChainDraws,
    covariates: np.ndarray,
    projection: ProjectionMatrix,
    truth: np.ndarray,
) -> np.ndarray:
    """
    Log posterior predictive density log mean_m f(y*_i | psi_m) of new points.

    Args:
        draws: fitted draws
        covariates: (n*, p) covariates centered with the training constants
        projection: projection of the points onto the mesh
        truth: length-n* observed responses

    Returns:
        length-n* log densities
    """
    truth = np.asarray(truth, dtype=float)
    accumulated = np.full(truth.size, -np.inf)
    for log_density in log_conditional_densities(draws, truth, covariates, projection):
        accumulated = np.logaddexp(accumulated, log_density)
    result = accumulated - np.log(draws.num_draws)
    _check_finite(result)
    return result


def kernel_log_density(prediction: PredictiveDraws, truth: np.ndarray) -> np.ndarray:
    """
    Log density of each truth under a Gaussian kernel density of its draws.

    Columns without spread use a normal with a tiny scale around their value.

    Args:
        prediction: predictive draws
        truth: length-n* observed values

    Returns:
        length-n* log densities
    """
    result = np.empty(truth.size)
    for index in range(truth.size):
        column = prediction.values[:, index]
        spread = float(np.std(column))
        threshold = MINIMUM_KERNEL_SCALE * max(1.0, abs(column.mean()))
        if column.size > 1 and spread > threshold:
            result[index] = scipy.stats.gaussian_kde(column).logpdf(truth[index])[0]
        else:
            result[index] = scipy.stats.norm.logpdf(
                truth[index], column.mean(), threshold
            )
    return result


def evaluate(
    prediction: PredictiveDraws,
    truth: np.ndarray,
    log_densities: Optional[np.ndarray] = None,
    scheme: str = "holdout",
) -> ScoreReport:
    """
    Scores predictive draws against held-out truths.

    Args:
        prediction: predictive draws at the held-out points
        truth: observed values on the scale of the draws
        log_densities: per-point log predictive densities from the fitted states;
            if None a kernel density of the draws is used
        scheme: description stored in the report

    Returns:
        predictive R-squared, 95% coverage and log-densities
    """
    truth = np.asarray(truth, dtype=float)
    if truth.size != prediction.num_locations:
        raise DimensionMismatch(
            f"{truth.size} truths for {prediction.num_locations} predicted points."
        )
    if truth.size == 0 or np.var(truth) == 0:
        raise DegenerateTruth("Held-out truths have zero variance.")
    mean = prediction.mean()
    r2_tilde = 1 - np.sum((mean - truth) ** 2) / np.sum((truth - truth.mean()) ** 2)
    (lower, upper) = prediction.interval(0.95)
    coverage = float(np.mean((truth >= lower) & (truth <= upper)))
    method = CONDITIONAL_DENSITY
    if log_densities is None:
        log_densities = kernel_log_density(prediction, truth)
        method = KERNEL_DENSITY
    log_densities = np.asarray(log_densities, dtype=float)
    _check_finite(log_densities)
    logger.info(
        f"{scheme}: R2 {r2_tilde:.3f}, coverage {coverage:.3f}, "
        f"log density {log_densities.sum():.2f}."
    )
    return ScoreReport(
        total_log_cpo=float(log_densities.sum()),
        log_densities=log_densities,
        r2_tilde=float(r2_tilde),
        coverage_95=coverage,
        scheme=scheme,
        density_method=method,
    )
