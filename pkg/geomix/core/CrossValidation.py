import logging
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from geomix.core.ChainDraws import ChainDraws
from geomix.core.Chains import fit_chains
from geomix.core.Config import RunConfig
from geomix.core.Errors import FoldTooSmall, InsufficientOrbits
from geomix.core.FootprintTable import FootprintTable
from geomix.core.Mesh import Mesh, projection_matrix
from geomix.core.ModelKind import CvScheme, ModelKind
from geomix.core.Prediction import PredictionNoise, predict
from geomix.core.Scoring import ScoreReport, evaluate, predictive_log_density
from geomix.core.Spde import assemble_fem

logger = logging.getLogger(__name__)

HOLDOUT_STREAM: int = 1_000_003
"""Spawn key of the random holdout selection (distinct from every chain index)."""


class Fold(NamedTuple):
    """One train/test split of a footprint table."""

    name: str
    """description of the fold, e.g. "by-orbit:3" """
    train: np.ndarray
    """sorted indices of the training footprints"""
    test: np.ndarray
    """sorted indices of the held-out footprints"""


def make_folds(
    data: FootprintTable, scheme: CvScheme, holdout_fraction: float, seed: int
) -> List[Fold]:
    """
    Splits footprints into cross-validation folds.

    The random scheme holds out a seeded uniform sample of round(fraction * n)
    footprints (at least one) in a single fold. The by-orbit scheme makes one fold
    per orbit label, holding out that orbit.

    Args:
        data: all footprints
        scheme: how to split
        holdout_fraction: fraction held out by the random scheme
        seed: run seed

    Returns:
        the folds
    """
    num_points: int = len(data)
    indices = np.arange(num_points)
    folds: List[Fold] = []
    if scheme is CvScheme.RANDOM:
        rng = np.random.default_rng(
            np.random.SeedSequence(seed, spawn_key=(HOLDOUT_STREAM,))
        )
        size = max(1, int(round(holdout_fraction * num_points)))
        test = np.sort(rng.permutation(num_points)[:size])
        folds.append(
            Fold(f"{scheme.label}:0", np.setdiff1d(indices, test), test)
        )
    else:
        orbits = data.orbits
        labels = np.unique(orbits)
        if labels.size < 2:
            raise InsufficientOrbits(
                "By-orbit cross-validation needs 2 or more orbits, found "
                f"{labels.size}."
            )
        for label in labels:
            held_out = orbits == label
            folds.append(
                Fold(f"{scheme.label}:{label}", indices[~held_out], indices[held_out])
            )
    minimum: int = data.p + 2
    for fold in folds:
        if fold.train.size < minimum or fold.test.size < minimum:
            raise FoldTooSmall(
                f"Fold {fold.name} has {fold.train.size} training and "
                f"{fold.test.size} test footprints; at least {minimum} of each needed."
            )
    return folds


def score_fold(
    draws: ChainDraws, test: FootprintTable, mesh: Mesh, seed: int, name: str
) -> ScoreReport:
    """
    Scores fitted draws on held-out footprints.

    Args:
        draws: draws fitted to the training footprints
        test: held-out footprints
        mesh: mesh the draws were fit on
        seed: run seed (prediction noise)
        name: fold description

    Returns:
        report of the held-out predictions
    """
    covariates = draws.metadata.centering.apply(test.covariates)
    projection = projection_matrix(mesh, test.coordinates)
    prediction = predict(draws, covariates, projection, PredictionNoise(seed))
    log_densities = predictive_log_density(
        draws, covariates, projection, test.response
    )
    return evaluate(prediction, test.response, log_densities, scheme=name)


def cross_validate(
    data: FootprintTable,
    mesh: Mesh,
    config: RunConfig,
    scheme: Optional[CvScheme] = None,
    models: Optional[Sequence[ModelKind]] = None,
) -> Dict[ModelKind, List[ScoreReport]]:
    """
    Refits each model on the training part of every fold and scores the held-out
    part.

    Args:
        data: all footprints
        mesh: mesh covering every footprint
        config: run configuration
        scheme: how to split (configured scheme if None)
        models: models to compare (configured models if None)

    Returns:
        per-model list of fold reports, in fold order
    """
    scheme = config["cv_scheme"] if scheme is None else scheme
    models = list(config["cv_models"]) if models is None else list(models)
    folds = make_folds(data, scheme, config["cv_holdout_fraction"], config["seed"])
    fem = assemble_fem(mesh)
    reports: Dict[ModelKind, List[ScoreReport]] = {model: [] for model in models}
    for fold in folds:
        train = data.subset(fold.train)
        test = data.subset(fold.test)
        logger.info(
            f"Fold {fold.name}: {len(train)} training and {len(test)} test footprints."
        )
        for model in models:
            draws = ChainDraws.concatenate(fit_chains(model, train, mesh, config, fem))
            name = f"{fold.name}:{model.label}"
            reports[model].append(score_fold(draws, test, mesh, config["seed"], name))
    return reports
