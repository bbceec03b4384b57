from typing import Callable, List

import numpy as np
import pandas as pd
import pytest
import scipy.stats
import yaml

from geomix.core.ChainDraws import ChainDraws, ChainMetadata
from geomix.core.Config import RunConfig
from geomix.core.Errors import (
    DegenerateTruth,
    DimensionMismatch,
    NonPositiveCpo,
    NumericalOverflow,
    UnsupportedTransform,
)
from geomix.core.FootprintTable import Centering, FootprintTable
from geomix.core.Mesh import Mesh, build_mesh, projection_matrix
from geomix.core.ModelKind import ModelKind
from geomix.core.Prediction import PredictiveDraws
from geomix.core.Scoring import (
    CONDITIONAL_DENSITY,
    KERNEL_DENSITY,
    ScoreReport,
    cpo_report,
    cpo_scores,
    evaluate,
    log_conditional_densities,
    log_cpo_scores,
    predictive_log_density,
    total_log_cpo,
)
from geomix.core.Spde import assemble_fem
from geomix.core.TypicalSampler import fit_typical


def make_metadata(model: ModelKind) -> ChainMetadata:
    """
    Makes metadata with one uncentered covariate band.

    Args:
        model: model of the draws

    Returns:
        the metadata
    """
    return ChainMetadata(
        model=model,
        seed=1,
        chain=0,
        burn_in=0,
        thin=1,
        centering=Centering(np.zeros(1), np.ones(1)),
        band_names=["band_1"],
    )


def typical_draws(mu: np.ndarray, tau2: np.ndarray, num_vertices: int) -> ChainDraws:
    """
    Makes typical draws with w = 0, beta = 0 and the given mu and tau2 per draw.

    Args:
        mu: length-M intercepts
        tau2: length-M noise variances
        num_vertices: number of mesh vertices

    Returns:
        the draws
    """
    scalars = pd.DataFrame(
        {"mu": mu, "beta_1": np.zeros(len(mu)), "tau2": tau2}, dtype=float
    )
    return ChainDraws(
        scalars,
        {"w": np.zeros((len(mu), num_vertices))},
        make_metadata(ModelKind.TYPICAL),
    )


def single_point(mesh: Mesh, response: float):
    """
    Makes a one-point table at the center of the mesh and its projection.

    Args:
        mesh: the mesh
        response: the observed response

    Returns:
        (table, projection)
    """
    coordinates = np.array([[3000.0, 3000.0]])
    data = FootprintTable.from_arrays(coordinates, [response], np.zeros((1, 1)))
    return (data, projection_matrix(mesh, coordinates))


def test_cpo_is_harmonic_mean(small_mesh: Mesh) -> None:
    """
    Checks that conditional densities 1 and 3 give CPO 2 / (1 + 1/3) = 1.5.
    """
    (data, projection) = single_point(small_mesh, 2.0)
    # a normal density at its mean is 1 / sqrt(2 pi tau2)
    tau2 = np.array([1 / (2 * np.pi), 1 / (18 * np.pi)])
    draws = typical_draws(np.full(2, 2.0), tau2, small_mesh.num_vertices)
    assert cpo_scores(draws, data, projection)[0] == pytest.approx(1.5, rel=1e-12)
    return


def test_cpo_of_identical_draws(small_mesh: Mesh) -> None:
    """
    Checks that identical draws give CPO equal to the single conditional density.
    """
    (data, projection) = single_point(small_mesh, 2.7)
    draws = typical_draws(np.full(5, 2.0), np.full(5, 0.5), small_mesh.num_vertices)
    expected = scipy.stats.norm.logpdf(2.7, 2.0, np.sqrt(0.5))
    assert log_cpo_scores(draws, data, projection)[0] == pytest.approx(expected)
    return


def test_cpo_transform_shift(small_mesh: Mesh) -> None:
    """
    Checks that scoring on the exp scale subtracts the log-response from every
    log CPO.
    """
    coordinates = np.array([[2000.0, 2000.0], [4000.0, 3500.0], [1500.0, 5000.0]])
    response = np.array([0.3, -0.5, 1.2])
    data = FootprintTable.from_arrays(coordinates, response, np.zeros((3, 1)))
    projection = projection_matrix(small_mesh, coordinates)
    draws = typical_draws(
        np.array([0.0, 0.2, -0.1]), np.array([0.5, 0.8, 0.4]), small_mesh.num_vertices
    )
    identity = log_cpo_scores(draws, data, projection)
    shifted = log_cpo_scores(draws, data, projection, "exp")
    assert np.allclose(shifted, identity - response)
    with pytest.raises(UnsupportedTransform):
        log_cpo_scores(draws, data, projection, "log")
    with pytest.raises(UnsupportedTransform):
        log_cpo_scores(draws, data, projection, "square")
    report = cpo_report(draws, data, projection, "exp")
    assert report.scheme == "cpo:exp"
    assert report.total_log_cpo == pytest.approx(shifted.sum())
    assert np.isnan(report.r2_tilde)
    return


def test_zero_density_is_overflow(small_mesh: Mesh) -> None:
    """
    Checks that a conditional density of exactly zero is reported with its point.
    """
    (data, projection) = single_point(small_mesh, 1e300)
    draws = typical_draws(np.zeros(2), np.full(2, 1e-300), small_mesh.num_vertices)
    with pytest.raises(NumericalOverflow) as error:
        log_cpo_scores(draws, data, projection)
    assert error.value.index == 0
    return


def test_mixture_density_marginalizes_label(small_mesh: Mesh) -> None:
    """
    Checks that the mixture density weights both classes by the class 1
    probability.
    """
    (data, projection) = single_point(small_mesh, 2.5)
    columns = {
        "c0.mu": [1.0],
        "c0.beta_1": [0.0],
        "c0.tau2": [0.25],
        "c1.mu": [3.0],
        "c1.beta_1": [0.0],
        "c1.tau2": [0.25],
        "z.mu": [np.log(3.0)],
        "z.beta_1": [0.0],
    }
    effects = {
        name: np.zeros((1, small_mesh.num_vertices)) for name in ("c0.w", "c1.w", "z.w")
    }
    effects["z.labels"] = np.zeros((1, 1))
    draws = ChainDraws(
        pd.DataFrame(columns, dtype=float), effects, make_metadata(ModelKind.MIXTURE)
    )
    (log_density,) = list(
        log_conditional_densities(draws, data.response, np.zeros((1, 1)), projection)
    )
    expected = 0.75 * scipy.stats.norm.pdf(2.5, 3.0, 0.5) + 0.25 * (
        scipy.stats.norm.pdf(2.5, 1.0, 0.5)
    )
    assert log_density[0] == pytest.approx(np.log(expected))
    with pytest.raises(DimensionMismatch):
        next(
            log_conditional_densities(
                draws, np.zeros(2), np.zeros((2, 1)), projection
            )
        )
    return


def test_predictive_log_density_averages_densities(small_mesh: Mesh) -> None:
    """
    Checks that the predictive density is the arithmetic mean over draws.
    """
    (data, projection) = single_point(small_mesh, 2.0)
    tau2 = np.array([1 / (2 * np.pi), 1 / (18 * np.pi)])
    draws = typical_draws(np.full(2, 2.0), tau2, small_mesh.num_vertices)
    result = predictive_log_density(draws, np.zeros((1, 1)), projection, [2.0])
    assert result[0] == pytest.approx(np.log(2.0))
    return


@pytest.mark.parametrize(
    "cpo,expected", [([1.0, 1.0, 1.0], 0.0), ([np.e, np.e**2], 3.0)]
)
def test_total_log_cpo(cpo, expected: float) -> None:
    """
    Checks sums of log CPO values.
    """
    assert total_log_cpo(np.array(cpo)) == pytest.approx(expected)
    return


@pytest.mark.parametrize("cpo", [[1.0, 0.0], [1.0, -2.0], [np.nan]])
def test_total_log_cpo_rejects_non_positive(cpo) -> None:
    """
    Checks that non-positive or missing CPO values are rejected.
    """
    with pytest.raises(NonPositiveCpo):
        total_log_cpo(np.array(cpo))
    return


def test_evaluate_perfect_and_mean_predictions() -> None:
    """
    Checks R-squared of perfect predictions and of the mean of the truths.
    """
    truth = np.array([1.0, 2.0, 4.0, 7.0])
    perfect = PredictiveDraws(np.tile(truth, (10, 1)))
    report = evaluate(perfect, truth)
    assert report.r2_tilde == 1.0
    assert report.coverage_95 == 1.0
    assert report.density_method == KERNEL_DENSITY
    assert np.all(np.isfinite(report.log_densities))
    flat = PredictiveDraws(np.full((10, 4), truth.mean()))
    assert evaluate(flat, truth).r2_tilde == pytest.approx(0.0, abs=1e-12)
    return


def test_evaluate_coverage() -> None:
    """
    Checks the coverage of truths against intervals made of order statistics.
    """
    values = np.tile(np.arange(1.0, 1001.0).reshape(-1, 1), (1, 6))
    truth = np.array([0.0, 30.0, 500.0, 970.0, 990.0, 1000.5])
    report = evaluate(PredictiveDraws(values), truth, np.zeros(6), scheme="fold 1")
    assert report.coverage_95 == 0.5
    assert report.density_method == CONDITIONAL_DENSITY
    assert report.total_log_cpo == 0.0
    assert report.scheme == "fold 1"
    return


def test_evaluate_kernel_density_of_spread_draws(rng: np.random.Generator) -> None:
    """
    Checks that the kernel density of many normal draws is close to the normal.
    """
    values = rng.normal(size=(4000, 2))
    truth = np.array([0.0, 1.0])
    report = evaluate(PredictiveDraws(values), truth)
    assert np.allclose(
        report.log_densities, scipy.stats.norm.logpdf(truth), atol=0.1
    )
    return


def test_evaluate_errors() -> None:
    """
    Checks dimension and degenerate-truth errors.
    """
    prediction = PredictiveDraws(np.zeros((5, 3)))
    with pytest.raises(DimensionMismatch):
        evaluate(prediction, np.array([1.0, 2.0]))
    with pytest.raises(DegenerateTruth):
        evaluate(prediction, np.full(3, 2.0))
    with pytest.raises(NumericalOverflow):
        evaluate(prediction, np.array([1.0, 2.0, 3.0]), np.array([0.0, -np.inf, 0.0]))
    return


def test_score_report_save(tmp_path) -> None:
    """
    Checks the YAML summary and per-point CSV of a report.
    """
    report = ScoreReport(
        total_log_cpo=-1.5,
        log_densities=np.array([-0.25, -1.25]),
        r2_tilde=0.5,
        coverage_95=1.0,
        scheme="by-orbit",
    )
    report.save(str(tmp_path / "scores"), "fold_0")
    with open(tmp_path / "scores" / "fold_0.yml") as file:
        summary = yaml.safe_load(file)
    assert summary["total_log_cpo"] == -1.5
    assert summary["num_points"] == 2
    assert summary["density_method"] == CONDITIONAL_DENSITY
    table = pd.read_csv(tmp_path / "scores" / "fold_0.csv")
    assert table["log_density"].tolist() == [-0.25, -1.25]
    assert table["point"].tolist() == [0, 1]
    return


@pytest.mark.slow
def test_cpo_matches_leave_one_out_refits(
    simulate_typical: Callable[..., FootprintTable]
) -> None:
    """
    Checks that harmonic-mean CPO of an n = 200 fit is within 15% of the
    predictive density of a refit without the point, for at least 90% of twenty
    randomly chosen points.
    """
    mesh = build_mesh((0.0, 0.0, 6000.0, 6000.0), 1000.0, 1000.0)
    fem = assemble_fem(mesh)
    table = simulate_typical(mesh, fem, 200, seed=7)
    config = RunConfig({"draws": 1500, "burn_in": 500, "log_every": 1000})
    draws = fit_typical(table, mesh, config, fem=fem)
    log_cpo = log_cpo_scores(draws, table, projection_matrix(mesh, table.coordinates))
    close: List[bool] = []
    everything = np.arange(len(table))
    for index in np.random.default_rng(8).choice(len(table), 20, replace=False):
        refit = fit_typical(
            table.subset(np.delete(everything, index)), mesh, config, fem=fem
        )
        point = table.subset(np.array([index]))
        log_density = predictive_log_density(
            refit,
            refit.metadata.centering.apply(point.covariates),
            projection_matrix(mesh, point.coordinates),
            point.response,
        )[0]
        close.append(abs(np.expm1(log_cpo[index] - log_density)) <= 0.15)
    assert np.mean(close) >= 0.9
    return
