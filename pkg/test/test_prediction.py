from typing import Dict, Optional

import numpy as np
import pandas as pd
import pytest
from scipy.special import expit

from geomix.core.ChainDraws import ChainDraws, ChainMetadata
from geomix.core.Errors import DimensionMismatch, UnsupportedTransform
from geomix.core.FootprintTable import Centering
from geomix.core.Mesh import BoundingBox, Mesh, projection_matrix
from geomix.core.ModelKind import ModelKind
from geomix.core.Prediction import (
    MIXTURE_SUMMARY_BANDS,
    SUMMARY_BANDS,
    PredictionNoise,
    PredictiveDraws,
    back_transform,
    class_probabilities,
    predict,
    predict_mixture,
    predict_raster,
    predict_typical,
    summarize,
    summary_band_names,
)
from geomix.core.RasterGrid import RasterGrid


def make_metadata(model: ModelKind, num_bands: int, seed: int = 3) -> ChainMetadata:
    """
    Makes metadata with zero centering.

    Args:
        model: model of the draws
        num_bands: number of covariate bands
        seed: seed stored with the draws

    Returns:
        the metadata
    """
    return ChainMetadata(
        model=model,
        seed=seed,
        chain=0,
        burn_in=0,
        thin=1,
        centering=Centering(np.zeros(num_bands), np.ones(num_bands)),
        band_names=[f"band_{index + 1}" for index in range(num_bands)],
    )


def class_columns(
    prefix: str, num_draws: int, mu: float, tau2: float, beta: float
) -> Dict[str, np.ndarray]:
    """
    Makes constant scalar columns of one Gaussian component.

    Args:
        prefix: column prefix
        num_draws: number of draws M
        mu: intercept
        tau2: noise variance
        beta: coefficient of the single covariate

    Returns:
        mapping from column name to values
    """
    return {
        f"{prefix}mu": np.full(num_draws, mu),
        f"{prefix}beta_1": np.full(num_draws, beta),
        f"{prefix}tau2": np.full(num_draws, tau2),
    }


def typical_draws(
    num_draws: int,
    num_vertices: int,
    mu: float = 2.0,
    tau2: float = 0.25,
    beta: float = 0.0,
    w: Optional[np.ndarray] = None,
) -> ChainDraws:
    """
    Makes typical model draws with constant parameters.

    Args:
        num_draws: number of draws M
        num_vertices: number of mesh vertices
        mu: intercept
        tau2: noise variance
        beta: coefficient of the single covariate
        w: (M, k) spatial effects (zeros if None)

    Returns:
        the draws
    """
    scalars = pd.DataFrame(class_columns("", num_draws, mu, tau2, beta))
    w = np.zeros((num_draws, num_vertices)) if w is None else w
    return ChainDraws(scalars, {"w": w}, make_metadata(ModelKind.TYPICAL, 1))


def mixture_draws(
    num_draws: int, num_vertices: int, logit_pi: float, tau2: float = 0.25
) -> ChainDraws:
    """
    Makes mixture draws with class means 3 and 1 and a constant class-1 log-odds.

    Args:
        num_draws: number of draws M
        num_vertices: number of mesh vertices
        logit_pi: log-odds of class 1
        tau2: noise variance of both classes

    Returns:
        the draws
    """
    columns = class_columns("c0.", num_draws, 1.0, tau2, 0.0)
    columns.update(class_columns("c1.", num_draws, 3.0, tau2, 0.0))
    columns["z.mu"] = np.full(num_draws, logit_pi)
    columns["z.beta_1"] = np.zeros(num_draws)
    effects = {
        name: np.zeros((num_draws, num_vertices)) for name in ("c0.w", "c1.w", "z.w")
    }
    effects["z.labels"] = np.zeros((num_draws, 5))
    return ChainDraws(
        pd.DataFrame(columns), effects, make_metadata(ModelKind.MIXTURE, 1)
    )


def test_noise_does_not_depend_on_chunking() -> None:
    """
    Checks that noise for a range of locations is the slice of a longer range,
    across block boundaries.
    """
    noise = PredictionNoise(5)
    whole = noise.normals(0, 3, 0, 3000)
    assert np.array_equal(noise.normals(0, 3, 1000, 1100), whole[:, 1000:2100])
    uniforms = noise.uniforms(2, 3, 0, 20)
    assert np.array_equal(noise.uniforms(2, 3, 0, 10), uniforms[:, :10])
    assert not np.array_equal(noise.normals(1, 3, 0, 10), whole[:, :10])
    assert noise.normals(0, 3, 7, 0).shape == (3, 0)
    return


def test_predict_typical_moments(small_mesh: Mesh) -> None:
    """
    Checks that with w = 0 and x = 0 draws at the vertices are N(mu, tau2).
    """
    draws = typical_draws(3000, small_mesh.num_vertices)
    projection = projection_matrix(small_mesh, small_mesh.vertices)
    covariates = np.zeros((small_mesh.num_vertices, 1))
    prediction = predict_typical(draws, covariates, projection)
    assert prediction.values.shape == (3000, small_mesh.num_vertices)
    assert not prediction.is_mixture
    assert prediction.values.mean() == pytest.approx(2.0, rel=0.02)
    assert prediction.values.std() == pytest.approx(0.5, rel=0.02)
    return


def test_predict_typical_noise_free_limit(small_mesh: Mesh) -> None:
    """
    Checks that with a vanishing noise variance draws equal the linear predictor.
    """
    rng = np.random.default_rng(1)
    w = np.tile(rng.normal(size=small_mesh.num_vertices), (20, 1))
    draws = typical_draws(20, small_mesh.num_vertices, tau2=1e-14, beta=0.5, w=w)
    points = rng.uniform(500.0, 5500.0, (10, 2))
    projection = projection_matrix(small_mesh, points)
    covariates = rng.normal(size=(10, 1))
    prediction = predict(draws, covariates, projection)
    expected = 2.0 + 0.5 * covariates[:, 0] + projection.dot(w[0])
    assert np.all(prediction.sd() < 1e-3)
    assert np.allclose(prediction.mean(), expected, atol=1e-6)
    return


def test_predict_typical_is_chunk_independent(small_mesh: Mesh) -> None:
    """
    Checks that two chunks with offsets reproduce one prediction bit for bit.
    """
    rng = np.random.default_rng(2)
    draws = typical_draws(
        3, small_mesh.num_vertices, w=rng.normal(size=(3, small_mesh.num_vertices))
    )
    points = rng.uniform(0.0, 6000.0, (3000, 2))
    covariates = rng.normal(size=(3000, 1))
    whole = predict_typical(draws, covariates, projection_matrix(small_mesh, points))
    first = predict_typical(
        draws, covariates[:1500], projection_matrix(small_mesh, points[:1500])
    )
    second = predict_typical(
        draws,
        covariates[1500:],
        projection_matrix(small_mesh, points[1500:]),
        offset=1500,
    )
    assert np.array_equal(whole.values, np.hstack([first.values, second.values]))
    again = predict_typical(draws, covariates, projection_matrix(small_mesh, points))
    assert np.array_equal(whole.values, again.values)
    return


def test_predict_dimension_checks(small_mesh: Mesh) -> None:
    """
    Checks covariate counts, row counts and effect lengths.
    """
    draws = typical_draws(2, small_mesh.num_vertices)
    projection = projection_matrix(small_mesh, np.array([[100.0, 100.0]]))
    with pytest.raises(DimensionMismatch):
        predict_typical(draws, np.zeros((1, 2)), projection)
    with pytest.raises(DimensionMismatch):
        predict_typical(draws, np.zeros((2, 1)), projection)
    with pytest.raises(DimensionMismatch):
        predict_typical(typical_draws(2, 10), np.zeros((1, 1)), projection)
    return


def test_certain_class_one_equals_class_one_prediction(small_mesh: Mesh) -> None:
    """
    Checks that pi = 1 reproduces the class-1 predictive draws exactly.
    """
    draws = mixture_draws(50, small_mesh.num_vertices, logit_pi=800.0)
    projection = projection_matrix(small_mesh, small_mesh.vertices[:10])
    covariates = np.zeros((10, 1))
    mixture = predict_mixture(draws, covariates, projection)
    class_one = typical_draws(50, small_mesh.num_vertices, mu=3.0)
    expected = predict_typical(class_one, covariates, projection)
    assert np.all(mixture.labels == 1)
    assert np.array_equal(mixture.values, expected.values)
    return


def test_even_odds_give_bimodal_draws(small_mesh: Mesh) -> None:
    """
    Checks the 50/50 split and the two modes when pi = 1/2.
    """
    draws = mixture_draws(3000, small_mesh.num_vertices, logit_pi=0.0, tau2=0.01)
    projection = projection_matrix(small_mesh, small_mesh.vertices[:1])
    prediction = predict(draws, np.zeros((1, 1)), projection)
    assert prediction.is_mixture
    labels = prediction.labels[:, 0]
    values = prediction.values[:, 0]
    assert labels.mean() == pytest.approx(0.5, abs=0.03)
    assert np.median(values[labels == 1]) == pytest.approx(3.0, abs=0.05)
    assert np.median(values[labels == 0]) == pytest.approx(1.0, abs=0.05)
    assert np.sum(np.abs(values - 2.0) < 0.5) == 0
    return


def test_class_probability_estimate(small_mesh: Mesh) -> None:
    """
    Checks that the fraction of class-1 draws estimates logit^-1(mu_z).
    """
    draws = mixture_draws(3000, small_mesh.num_vertices, logit_pi=0.4)
    projection = projection_matrix(small_mesh, small_mesh.vertices)
    covariates = np.zeros((small_mesh.num_vertices, 1))
    prediction = predict_mixture(draws, covariates, projection)
    assert np.allclose(prediction.probabilities, expit(0.4))
    assert np.allclose(
        class_probabilities(draws, covariates, projection), prediction.probabilities
    )
    assert prediction.class_probability().mean() == pytest.approx(expit(0.4), abs=0.02)
    assert set(np.unique(prediction.class_mode())) <= {0.0, 1.0}
    return


def test_back_transform() -> None:
    """
    Checks exp/log round trips, interval mapping, Jensen and tags.
    """
    values = np.random.default_rng(3).normal(size=(401, 4))
    prediction = PredictiveDraws(values)
    exponentiated = back_transform(prediction, "exp")
    assert exponentiated.transform == "exp"
    restored = back_transform(exponentiated, "log")
    assert restored.transform == "log(exp)"
    assert np.allclose(restored.values, values, rtol=0, atol=1e-12)
    (lower, upper) = prediction.interval()
    (exp_lower, exp_upper) = exponentiated.interval()
    assert np.array_equal(exp_lower, np.exp(lower))
    assert np.array_equal(exp_upper, np.exp(upper))
    assert np.all(exponentiated.mean() >= np.exp(prediction.mean()))
    assert back_transform(prediction, "identity") is prediction
    return


def test_back_transform_errors() -> None:
    """
    Checks unknown transforms and draws outside the domain.
    """
    prediction = PredictiveDraws(np.array([[-1.0, 2.0]]))
    with pytest.raises(UnsupportedTransform):
        back_transform(prediction, "sqrt")
    with pytest.raises(UnsupportedTransform):
        back_transform(prediction, "log")
    return


def test_summaries() -> None:
    """
    Checks summary bands of typical and mixture predictions.
    """
    values = np.arange(12.0).reshape(4, 3)
    typical = summarize(PredictiveDraws(values))
    assert typical.shape == (len(SUMMARY_BANDS), 3)
    assert np.array_equal(typical[0], values.mean(axis=0))
    labels = np.array([[1.0, 0.0, 1.0]] * 3 + [[0.0, 0.0, 1.0]])
    mixture = summarize(PredictiveDraws(values, labels, np.full((4, 3), 0.5)))
    assert mixture.shape == (len(MIXTURE_SUMMARY_BANDS), 3)
    assert np.array_equal(mixture[-1], [0.75, 0.0, 1.0])
    assert np.array_equal(mixture[-2], [1.0, 0.0, 1.0])
    assert summary_band_names(ModelKind.TYPICAL) == SUMMARY_BANDS
    assert summary_band_names(ModelKind.MIXTURE) == MIXTURE_SUMMARY_BANDS
    with pytest.raises(ValueError):
        PredictiveDraws(values).class_probability()
    return


def test_predict_raster_is_chunk_independent(small_mesh: Mesh) -> None:
    """
    Checks that summaries do not depend on the chunk size and that cells
    outside the mesh or with missing covariates stay missing.
    """
    rng = np.random.default_rng(4)
    draws = typical_draws(
        6, small_mesh.num_vertices, beta=0.3, w=rng.normal(size=(6, 49))
    )
    grid = RasterGrid.covering(BoundingBox(-500.0, -500.0, 6500.0, 6500.0), 500.0)
    grid.values[0] = rng.normal(size=(grid.nrows, grid.ncols))
    grid.values[0, 5, 5] = np.nan
    small_chunks = predict_raster(draws, grid, small_mesh, chunk_size=7)
    one_chunk = predict_raster(draws, grid, small_mesh, chunk_size=10000)
    assert small_chunks == one_chunk
    assert small_chunks.bands == len(SUMMARY_BANDS)
    assert np.all(np.isnan(small_chunks.values[:, 5, 5]))
    assert np.all(np.isnan(small_chunks.values[:, 0, :]))
    assert np.all(np.isfinite(small_chunks.values[:, 3, 3]))
    logged = predict_raster(draws, grid, small_mesh, 50, transform="exp")
    assert np.allclose(logged.values[2, 3, 3], np.exp(one_chunk.values[2, 3, 3]))
    return


def test_predict_raster_errors(small_mesh: Mesh) -> None:
    """
    Checks chunk size, band count and transform validation.
    """
    draws = typical_draws(2, small_mesh.num_vertices)
    grid = RasterGrid.covering(BoundingBox(0.0, 0.0, 1000.0, 1000.0), 500.0, bands=2)
    with pytest.raises(ValueError):
        predict_raster(draws, grid.band(0), small_mesh, chunk_size=0)
    with pytest.raises(DimensionMismatch):
        predict_raster(draws, grid, small_mesh, chunk_size=10)
    with pytest.raises(UnsupportedTransform):
        predict_raster(draws, grid.band(0), small_mesh, 10, transform="sqrt")
    return
