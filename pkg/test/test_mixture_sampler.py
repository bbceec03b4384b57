from typing import Any, Callable, List

import numpy as np
import pytest
import scipy.sparse as sparse
from scipy.special import logit

import geomix.core.MixtureSampler as mixture_sampler
from geomix.core.Config import RunConfig
from geomix.core.Errors import (
    DegenerateComponent,
    DimensionMismatch,
    NoConvergence,
    RankDeficientDesign,
    StepHalvingExhausted,
)
from geomix.core.FootprintTable import FootprintTable
from geomix.core.Mesh import Mesh, ProjectionMatrix, projection_matrix
from geomix.core.MixtureSampler import (
    LABELS_EFFECT,
    LOG_ODDS_CAP,
    BernoulliBlock,
    BernoulliState,
    MixtureState,
    em_init_z,
    fit_mixture,
    label_log_odds,
    laplace_sample_b,
    newton_raphson_mode,
    sample_z,
)
from geomix.core.Simulation import simulate_from_config
from geomix.core.SparseLinalg import (
    SparseSymMatrix,
    factorization_count,
    reset_factorization_count,
)
from geomix.core.Spde import FemMatrices, MaternParams, precision
from geomix.core.TypicalSampler import TypicalState, fit_typical


def constant_state(
    num_points: int, mu1: float, mu0: float, logit_pi: float
) -> MixtureState:
    """
    Makes a state without covariates or spatial effects.

    Args:
        num_points: number of footprints
        mu1: mean of class 1
        mu0: mean of class 0
        logit_pi: constant log-odds of class 1

    Returns:
        state with unit noise variances and all labels 0
    """
    theta = MaternParams(1.0, 1000.0)
    classes = tuple(
        TypicalState(mu, np.zeros(0), np.zeros(1), theta, 1.0) for mu in (mu0, mu1)
    )
    bernoulli = BernoulliState(logit_pi, np.zeros(0), np.zeros(1), theta)
    return MixtureState(np.zeros(num_points, dtype=np.int64), classes, bernoulli)


def empty_projection(num_points: int, num_vertices: int = 1) -> ProjectionMatrix:
    """
    Makes a projection matrix with no weights.

    Args:
        num_points: number of rows
        num_vertices: number of columns

    Returns:
        all-zero projection matrix
    """
    return ProjectionMatrix(sparse.csr_matrix((num_points, num_vertices)))


def mixture_table(num_points: int = 120, seed: int = 0) -> FootprintTable:
    """
    Makes footprints whose eastern half has mean 3 and western half mean 1.

    Args:
        num_points: number of footprints
        seed: seed of the locations and noise

    Returns:
        table with one covariate band
    """
    rng = np.random.default_rng(seed)
    coordinates = rng.uniform(500.0, 5500.0, (num_points, 2))
    covariates = rng.normal(size=(num_points, 1))
    high = coordinates[:, 0] > 3000.0
    response = (
        np.where(high, 3.0, 1.0)
        + 0.1 * covariates[:, 0]
        + 0.2 * rng.normal(size=num_points)
    )
    return FootprintTable.from_arrays(coordinates, response, covariates)


def test_em_separates_well_separated_components() -> None:
    """
    Checks labels of 500 + 500 points from N(3, 0.3^2) and N(1, 0.3^2).
    """
    rng = np.random.default_rng(1)
    y = np.concatenate([rng.normal(3.0, 0.3, 500), rng.normal(1.0, 0.3, 500)])
    truth = np.concatenate([np.ones(500), np.zeros(500)])
    (labels, mixture) = em_init_z(y, 3.0, 1.0)
    assert np.mean(labels != truth) < 0.01
    assert mixture.mu1 == pytest.approx(3.0, abs=0.05)
    assert mixture.mu0 == pytest.approx(1.0, abs=0.05)
    assert mixture.sd1 == pytest.approx(0.3, abs=0.05)
    assert mixture.iterations >= 1
    return


def test_em_identical_components_do_not_crash() -> None:
    """
    Checks that data from a single normal still gives two non-empty classes.
    """
    y = np.random.default_rng(2).normal(2.0, 1.0, 1000)
    (labels, _) = em_init_z(y, 3.0, 1.0)
    assert set(np.unique(labels)) <= {0, 1}
    assert 0 < labels.sum() < y.size
    return


def test_em_outlier_goes_to_class_one() -> None:
    """
    Checks that a value far above both classes is labeled 1.
    """
    rng = np.random.default_rng(3)
    y = np.concatenate([rng.normal(3.0, 0.3, 100), rng.normal(1.0, 0.3, 100), [10.0]])
    (labels, _) = em_init_z(y, 3.0, 1.0)
    assert labels[-1] == 1
    return


def test_em_errors() -> None:
    """
    Checks too few points, unordered starting means and collapsed components.
    """
    with pytest.raises(DimensionMismatch):
        em_init_z(np.array([1.0, 2.0, 3.0]), 3.0, 1.0)
    with pytest.raises(ValueError):
        em_init_z(np.arange(10.0), 1.0, 3.0)
    with pytest.raises(DegenerateComponent):
        em_init_z(np.array([0.0] * 4 + [5.0] * 4), 3.0, 1.0)
    return


def test_label_log_odds_at_midpoint() -> None:
    """
    Checks that y halfway between N(3, 1) and N(1, 1) with pi = 1/2 has
    conditional probability 1/2.
    """
    state = constant_state(3, 3.0, 1.0, 0.0)
    y = np.full(3, 2.0)
    log_odds = label_log_odds(y, np.zeros((3, 0)), empty_projection(3), state)
    assert np.allclose(log_odds, 0.0, atol=1e-12)
    return


def test_sample_z_symmetric_case() -> None:
    """
    Checks that equal class densities and pi = 1/2 give labels 1 half the time.
    """
    n = 20000
    state = constant_state(n, 2.0, 2.0, 0.0)
    labels = sample_z(
        np.full(n, 2.0),
        np.zeros((n, 0)),
        empty_projection(n),
        state,
        np.random.default_rng(4),
    )
    assert set(np.unique(labels)) <= {0, 1}
    assert labels.mean() == pytest.approx(0.5, abs=0.02)
    return


def test_sample_z_certain_class_and_finite_extremes() -> None:
    """
    Checks that pi = 1 always gives label 1 and extreme log-odds stay finite.
    """
    state = constant_state(4, 3.0, 1.0, 800.0)
    y = np.array([-1e6, 0.0, 2.0, 1e6])
    X = np.zeros((4, 0))
    A = empty_projection(4)
    middle = np.array([1, 2])
    labels = sample_z(
        y[middle], X[middle], A.rows(middle), state, np.random.default_rng(5)
    )
    assert np.all(labels == 1)
    even_odds = state._replace(bernoulli=state.bernoulli._replace(mu=0.0))
    log_odds = label_log_odds(y, X, A, even_odds)
    assert np.all(np.isfinite(log_odds))
    assert np.all(np.abs(log_odds) <= LOG_ODDS_CAP)
    return


def test_newton_raphson_intercept_only() -> None:
    """
    Checks the mode logit(0.3) for 30 of 100 labels and the Laplace precision
    n p (1 - p).
    """
    z = np.zeros(100)
    z[:30] = 1
    A = empty_projection(100, 0)
    (mode, mode_precision) = newton_raphson_mode(
        z, np.zeros((100, 0)), A, None, np.zeros(1)
    )
    assert mode[0] == pytest.approx(logit(0.3), abs=1e-6)
    assert mode[0] == pytest.approx(-0.8473, abs=1e-4)
    information = mode_precision.toarray()[0, 0]
    assert 1 / np.sqrt(information) == pytest.approx(
        1 / np.sqrt(100 * 0.3 * 0.7), rel=1e-6
    )
    return


def test_newton_raphson_separated_labels() -> None:
    """
    Checks that identical labels (mode at infinity) are reported.
    """
    A = empty_projection(50, 0)
    with pytest.raises((NoConvergence, StepHalvingExhausted)):
        newton_raphson_mode(np.ones(50), np.zeros((50, 0)), A, None, np.zeros(1))
    return


def test_newton_raphson_start_length() -> None:
    """
    Checks that a start vector of the wrong length is rejected.
    """
    A = empty_projection(10, 0)
    with pytest.raises(DimensionMismatch):
        newton_raphson_mode(np.ones(10), np.zeros((10, 0)), A, None, np.zeros(3))
    return


def test_bernoulli_gradient_matches_finite_differences(
    small_mesh: Mesh, small_fem: FemMatrices
) -> None:
    """
    Checks the analytic gradient against central differences of the log
    posterior.
    """
    rng = np.random.default_rng(6)
    points = rng.uniform(500.0, 5500.0, (40, 2))
    A = projection_matrix(small_mesh, points)
    X = rng.normal(size=(40, 1))
    z = (rng.uniform(size=40) < 0.4).astype(float)
    target = BernoulliBlock(z, X, A, precision(MaternParams(1.0, 2000.0), small_fem))
    block = 0.3 * rng.normal(size=target.dimension)
    gradient = target.gradient(block)
    step = 1e-5
    numeric = np.array(
        [
            (
                target.log_posterior(block + step * unit)
                - target.log_posterior(block - step * unit)
            )
            / (2 * step)
            for unit in np.eye(target.dimension)
        ]
    )
    assert np.allclose(gradient, numeric, rtol=1e-6, atol=1e-6)
    return


def test_newton_raphson_with_spatial_term(
    small_mesh: Mesh, small_fem: FemMatrices
) -> None:
    """
    Checks that the returned mode has a vanishing gradient and that the returned
    precision is the negative Hessian there.
    """
    rng = np.random.default_rng(7)
    points = rng.uniform(500.0, 5500.0, (60, 2))
    A = projection_matrix(small_mesh, points)
    X = rng.normal(size=(60, 1))
    z = (points[:, 0] > 3000.0).astype(float)
    z[:10] = 1 - z[:10]
    theta = MaternParams(1.0, 2000.0)
    start = np.zeros(2 + small_mesh.num_vertices)
    (mode, mode_precision) = newton_raphson_mode(z, X, A, theta, start, small_fem)
    target = BernoulliBlock(z, X, A, precision(theta, small_fem))
    assert np.max(np.abs(target.gradient(mode))) < 1e-8
    assert mode_precision == target.precision_at(mode)
    with pytest.raises(ValueError):
        newton_raphson_mode(z, X, A, None, start, small_fem)
    return


def test_laplace_draws_match_gaussian() -> None:
    """
    Checks mean and sd of Laplace draws from a Gaussian target.
    """
    mode = np.array([1.0, -1.0])
    mode_precision = SparseSymMatrix.diagonal_matrix([4.0, 1.0])
    rng = np.random.default_rng(8)
    draws = np.array(
        [laplace_sample_b(mode, mode_precision, rng) for _ in range(10000)]
    )
    assert np.allclose(draws.mean(axis=0), mode, atol=0.04)
    assert np.allclose(draws.std(axis=0), [0.5, 1.0], rtol=0.03)
    first = laplace_sample_b(mode, mode_precision, np.random.default_rng(9))
    second = laplace_sample_b(mode, mode_precision, np.random.default_rng(9))
    assert np.array_equal(first, second)
    return


def test_state_record_round_trip(small_mesh: Mesh, short_config: RunConfig) -> None:
    """
    Checks that a recorded state is restored from the draws.
    """
    draws = fit_mixture(mixture_table(), small_mesh, short_config)
    state = MixtureState.from_draws(draws, 2)
    assert np.array_equal(state.z, draws.effect(LABELS_EFFECT)[2])
    assert state.classes[1].mu == draws.scalar("c1.mu")[2]
    assert np.array_equal(state.bernoulli.w, draws.effect("z.w")[2])
    assert state.bernoulli.beta.size == 1
    return


def test_fit_mixture_records_and_is_deterministic(
    small_mesh: Mesh, short_config: RunConfig
) -> None:
    """
    Checks stored columns and effects, label orientation and reproducibility.
    """
    table = mixture_table()
    first = fit_mixture(table, small_mesh, short_config)
    second = fit_mixture(table, small_mesh, short_config)
    assert first == second
    assert len(first) == short_config["draws"]
    for column in ("c0.mu", "c1.tau2", "z.mu", "z.beta_1", "n1", "z.accept"):
        assert column in first.scalars.columns
    assert first.effect("c0.w").shape == (4, small_mesh.num_vertices)
    assert first.effect(LABELS_EFFECT).shape == (4, len(table))
    labels = first.effect(LABELS_EFFECT)
    assert np.all((labels == 0) | (labels == 1))
    assert np.array_equal(first.scalar("n1"), labels.sum(axis=1))
    assert np.all(first.scalar("c1.mu") > first.scalar("c0.mu"))
    return


def test_fit_mixture_with_fixed_labels(
    small_mesh: Mesh, short_config: RunConfig
) -> None:
    """
    Checks that frozen labels stay fixed and an empty class keeps its parameters
    finite.
    """
    table = mixture_table()
    draws = fit_mixture(
        table, small_mesh, short_config, fixed_labels=np.ones(len(table), dtype=int)
    )
    assert np.all(draws.effect(LABELS_EFFECT) == 1)
    assert np.all(np.isfinite(draws.effect("c0.w")))
    assert np.all(draws.scalar("z.accept") == 0)
    with pytest.raises(DimensionMismatch):
        fit_mixture(
            table, small_mesh, short_config, fixed_labels=np.full(len(table), 2)
        )
    return


def test_fit_mixture_factorizations_per_iteration(
    small_mesh: Mesh, short_config: RunConfig, monkeypatch
) -> None:
    """
    Checks the factorization budget of a mixture sweep: two per class, one for
    the theta_z proposal and one for the Laplace draw at the mode (six in all),
    plus one per Newton-Raphson step. Three more are made once at the start.
    """
    newton_counts: List[int] = []
    converged: List[bool] = []

    def counted_newton_raphson_mode(*args: Any, **kwargs: Any) -> Any:
        before = factorization_count()
        try:
            result = newton_raphson_mode(*args, **kwargs)
        except (NoConvergence, StepHalvingExhausted):
            converged.append(False)
            raise
        finally:
            newton_counts.append(factorization_count() - before)
        converged.append(True)
        return result

    monkeypatch.setattr(
        mixture_sampler, "newton_raphson_mode", counted_newton_raphson_mode
    )
    reset_factorization_count()
    fit_mixture(mixture_table(), small_mesh, short_config)
    iterations = short_config["draws"] + short_config["burn_in"]
    assert len(newton_counts) == iterations
    skipped_draws = converged.count(False)
    expected = 3 + 6 * iterations - skipped_draws + sum(newton_counts)
    assert factorization_count() == expected
    return


def test_fit_mixture_with_fixed_labels_factors_classes_only(
    small_mesh: Mesh, short_config: RunConfig
) -> None:
    """
    Checks that frozen labels leave only the two factorizations of each class.
    """
    table = mixture_table()
    reset_factorization_count()
    fit_mixture(
        table, small_mesh, short_config, fixed_labels=np.ones(len(table), dtype=int)
    )
    iterations = short_config["draws"] + short_config["burn_in"]
    assert factorization_count() == 3 + 4 * iterations
    return


def test_fit_mixture_needs_enough_points(small_mesh: Mesh) -> None:
    """
    Checks that n <= 2 (p + 2) is rejected.
    """
    table = mixture_table(num_points=6)
    with pytest.raises(RankDeficientDesign):
        fit_mixture(table, small_mesh, RunConfig({"draws": 1, "burn_in": 0}))
    return


def test_fit_mixture_with_laplace_correction(small_mesh: Mesh) -> None:
    """
    Checks that the independence Metropolis correction of the Laplace draw runs
    and accepts some of its proposals.
    """
    config = RunConfig(
        {
            "draws": 20,
            "burn_in": 10,
            "log_every": 10,
            "mesh_spacing": 1000.0,
            "laplace_correction": True,
        }
    )
    draws = fit_mixture(mixture_table(), small_mesh, config)
    accepted = draws.scalar("z.laplace_accept")
    assert np.all((accepted == 0) | (accepted == 1))
    assert 0 < draws.acceptance_rate("z.laplace_accept") <= 1
    assert np.all(np.isfinite(draws.effect("z.w")))
    return


@pytest.mark.slow
def test_fit_mixture_with_fixed_labels_matches_typical(
    linear_table: FootprintTable, small_mesh: Mesh
) -> None:
    """
    Checks that with every label frozen in class 1 (and the same priors) class 1
    has the posterior of the typical model.
    """
    config = RunConfig(
        {
            "draws": 2000,
            "burn_in": 500,
            "log_every": 1000,
            "prior_sigma_1": 1.0,
            "prior_range_1": 2000.0,
        }
    )
    typical = fit_typical(linear_table, small_mesh, config)
    mixture = fit_mixture(
        linear_table,
        small_mesh,
        config,
        fixed_labels=np.ones(len(linear_table), dtype=int),
    )
    for name in ("mu", "beta_1", "tau2"):
        expected = typical.scalar(name)
        actual = mixture.scalar(f"c1.{name}")
        assert abs(actual.mean() - expected.mean()) < 0.5 * expected.std()
        assert 0.7 < actual.std() / expected.std() < 1.4
    return


@pytest.mark.slow
def test_fit_mixture_calibration_and_labels(
    mixture_config: Callable[..., RunConfig]
) -> None:
    """
    Checks that 90% intervals of the class parameters cover the generating values
    for at least 80% of parameter-replicate pairs and that posterior-mode labels
    match the truth on at least 90% of points whose class probability is far
    from 1/2 (|logit| > 1).
    """
    covered: List[bool] = []
    for replicate in range(5):
        config = mixture_config(replicate)
        (design, table, truth) = simulate_from_config(config)
        draws = fit_mixture(table, design.mesh, config)
        means = draws.metadata.centering.means
        for (prefix, suffix) in (("c1.", "_1"), ("c0.", "_0")):
            beta = np.asarray(truth.parameters[f"beta{suffix}"], dtype=float)
            expected = {
                "mu": truth.parameters[f"mu{suffix}"] + beta @ means,
                "beta_1": beta[0],
                "beta_2": beta[1],
                "tau2": truth.parameters[f"tau2{suffix}"],
            }
            for (name, value) in expected.items():
                samples = draws.scalar(f"{prefix}{name}")
                (lower, upper) = np.quantile(samples, [0.05, 0.95])
                covered.append(lower <= value <= upper)
        probability = np.clip(draws.effect(LABELS_EFFECT).mean(axis=0), 1e-3, 1 - 1e-3)
        confident = np.abs(logit(probability)) > 1
        assert confident.sum() > 0.5 * len(table)
        mode = probability[confident] > 0.5
        assert np.mean(mode == (truth.labels[confident] == 1)) >= 0.9
    assert np.mean(covered) >= 0.8
    return
