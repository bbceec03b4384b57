import os

import pytest
import yaml
from click.testing import CliRunner

from geomix.app.main import (
    COVARIATES_FILE_NAME,
    FOOTPRINTS_FILE_NAME,
    main,
    prediction_file_name,
    run,
)
from geomix.core.ModelKind import ModelKind
from geomix.core.Prediction import summary_band_names
from geomix.core.RasterGrid import read_raster
from geomix.core.RunDirectory import RunDirectory

SMALL_RUN_CONFIG = {
    "sim_domain": [0.0, 0.0, 3000.0, 3000.0],
    "sim_orbits": 3,
    "sim_tracks_per_orbit": 3,
    "sim_along_track_spacing": 100.0,
    "sim_across_track_spacing": 500.0,
    "sim_bands": 1,
    "sim_cellsize": 500.0,
    "sim_model": "typical",
    "mesh_spacing": 1000.0,
    "mesh_buffer": 1000.0,
    "draws": 3,
    "burn_in": 2,
    "log_every": 5,
    "seed": 21,
}
"""Configuration of a quick simulate-fit-predict round."""


@pytest.fixture
def config_path(tmp_path) -> str:
    """Path of a YAML file holding SMALL_RUN_CONFIG."""
    path = str(tmp_path / "config.yml")
    with open(path, "w") as file:
        yaml.safe_dump(SMALL_RUN_CONFIG, file)
    return path


def test_unknown_subcommand() -> None:
    """
    Checks that an unknown subcommand is a usage error.
    """
    assert run(["not-a-command"]) == 2
    return


def test_missing_config_file(tmp_path) -> None:
    """
    Checks that a nonexistent config file is rejected before anything runs.
    """
    status = run(
        [
            "fit-typical",
            "--config",
            str(tmp_path / "missing.yml"),
            "--footprints",
            str(tmp_path / "missing.csv"),
            "--out-dir",
            str(tmp_path / "run"),
        ]
    )
    assert status == 2
    assert not os.path.exists(tmp_path / "run")
    return


def test_config_command(config_path: str) -> None:
    """
    Checks that a single config variable can be printed.
    """
    result = CliRunner().invoke(main, ["config", "-c", config_path, "-n", "seed"])
    assert result.exit_code == 0
    assert "seed: 21" in result.output.splitlines()
    result = CliRunner().invoke(main, ["config", "-n", "nonsense"])
    assert "nonsense not in geomix config." in result.output
    return


def test_simulate_fit_predict_score(tmp_path, config_path: str, capsys) -> None:
    """
    Checks a full simulate, fit, predict and score round and that fitting is
    reproducible.
    """
    simulation = str(tmp_path / "simulation")
    assert run(["simulate", "-c", config_path, "-o", simulation]) == 0
    footprints = os.path.join(simulation, FOOTPRINTS_FILE_NAME)
    covariates = os.path.join(simulation, COVARIATES_FILE_NAME)
    assert os.path.exists(footprints)
    assert os.path.exists(covariates)
    fits = [str(tmp_path / f"fit_{index}") for index in range(2)]
    for fit in fits:
        arguments = ["fit-typical", "-c", config_path, "-f", footprints, "-o", fit]
        assert run(arguments) == 0
    (first, second) = [
        RunDirectory.from_directory(fit).load_draws(ModelKind.TYPICAL) for fit in fits
    ]
    assert len(first) == 3
    assert first == second
    arguments = ["predict", "-c", config_path, "-o", fits[0], "-r", covariates]
    assert run(arguments + ["-m", "typical"]) == 0
    predictions = RunDirectory(fits[0]).predictions_directory
    for band in summary_band_names(ModelKind.TYPICAL):
        raster = read_raster(prediction_file_name(predictions, ModelKind.TYPICAL, band))
        assert raster.bands == 1
    capsys.readouterr()
    assert run(["score", "-o", fits[0], "-f", footprints]) == 0
    assert "typical: total log CPO" in capsys.readouterr().out
    assert os.path.exists(
        os.path.join(RunDirectory(fits[0]).scores_directory, "cpo_typical_identity.yml")
    )
    return


def test_score_without_fit(tmp_path, config_path: str) -> None:
    """
    Checks that scoring a run with no stored draws fails with a usage error.
    """
    simulation = str(tmp_path / "simulation")
    assert run(["simulate", "-c", config_path, "-o", simulation]) == 0
    footprints = os.path.join(simulation, FOOTPRINTS_FILE_NAME)
    assert run(["score", "-o", simulation, "-f", footprints]) == 2
    return
