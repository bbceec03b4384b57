import logging
import os
import sys
from typing import List, Optional, Sequence

import click

from geomix.app.Options import (
    chains_option,
    config_option,
    cv_scheme_option,
    footprints_option,
    model_option,
    out_dir_option,
    plot_type_option,
    raster_option,
    seed_option,
    string_list_option,
    transform_option,
)
from geomix.app.Plotting import DrawPlotter, PlotType, plot_raster_band
from geomix.core.ChainDraws import ChainDraws
from geomix.core.Chains import fit_chains
from geomix.core.Config import RunConfig
from geomix.core.CrossValidation import cross_validate
from geomix.core.Errors import GeomixError
from geomix.core.Formatting import decimal_format, print_pandas_dataframe, score_table
from geomix.core.FootprintTable import FootprintTable
from geomix.core.Mesh import build_mesh, projection_matrix
from geomix.core.ModelKind import CvScheme, ModelKind
from geomix.core.Prediction import predict_raster, summary_band_names
from geomix.core.RasterGrid import RasterGrid, read_raster, write_raster
from geomix.core.RunDirectory import RunDirectory
from geomix.core.Scoring import cpo_report
from geomix.core.Simulation import simulate_from_config

logging.basicConfig(level=logging.INFO, force=True)
logger = logging.getLogger(__name__)

FOOTPRINTS_FILE_NAME: str = "footprints.csv"
"""Name of the simulated footprint file."""
COVARIATES_FILE_NAME: str = "covariates.asc"
"""Name of the simulated covariate raster file."""
TRUTH_DIRECTORY_NAME: str = "truth"
"""Subdirectory holding the generating parameters of a simulation."""
RASTER_EXTENSION: str = ".asc"
"""Extension of raster files."""


def _load_config(
    config_path: Optional[str], seed: Optional[int] = None, chains: Optional[int] = None
) -> RunConfig:
    """
    Loads a config file (or defaults) and applies command-line overrides.

    Args:
        config_path: YAML file, None for defaults
        seed: overriding seed, if any
        chains: overriding number of chains, if any

    Returns:
        the run configuration
    """
    config = RunConfig() if config_path is None else RunConfig.load(config_path)
    if seed is not None:
        config.override("seed", seed)
    if chains is not None:
        config.override("chains", chains)
    return config


def prediction_file_name(directory: str, model: ModelKind, band: str) -> str:
    """
    Makes the path of one prediction summary raster.

    Args:
        directory: predictions directory of a run
        model: fitted model
        band: summary band name, e.g. "mean"

    Returns:
        path of the single-band raster file
    """
    return os.path.join(directory, f"{model.label}_{band}{RASTER_EXTENSION}")


@click.group()
def main():
    """
    Bayesian spatial mixture models for point-referenced lidar observations.
    """


@main.command()
@config_option(required=False)
@seed_option
@out_dir_option
def simulate(config_path: Optional[str], seed: Optional[int], out_dir: str) -> None:
    """
    Simulates footprints along lidar tracks with covariates and responses.
    """
    config = _load_config(config_path, seed)
    run_directory = RunDirectory(out_dir, config)
    run_directory.save()
    (design, table, truth) = simulate_from_config(config)
    table.save(os.path.join(out_dir, FOOTPRINTS_FILE_NAME))
    if design.raster is not None:
        write_raster(design.raster, os.path.join(out_dir, COVARIATES_FILE_NAME))
    truth.save(os.path.join(out_dir, TRUTH_DIRECTORY_NAME))
    click.echo(f"Simulated {len(table)} footprints into {out_dir}.")
    return


def _fit(
    model: ModelKind,
    config_path: str,
    footprints: str,
    out_dir: str,
    seed: Optional[int],
    chains: Optional[int],
) -> None:
    """
    Fits a model and stores its configuration, mesh and draws in a run directory.

    Args:
        model: model to fit
        config_path: YAML config file
        footprints: footprint file
        out_dir: run directory
        seed: overriding seed, if any
        chains: overriding number of chains, if any
    """
    config = _load_config(config_path, seed, chains)
    data = FootprintTable.read(footprints)
    mesh = build_mesh(data.bbox, config["mesh_spacing"], config["mesh_buffer"])
    run_directory = RunDirectory(out_dir, config)
    run_directory.save()
    run_directory.save_mesh(mesh)
    draws = fit_chains(model, data, mesh, config)
    run_directory.save_chains(model, draws)
    logger.info(f"Stored {len(draws)} {model.label} chain(s) in {out_dir}.")
    summary = ChainDraws.concatenate(draws).summary()
    print_pandas_dataframe(summary, config["num_decimal_places"], print_func=click.echo)
    return


@main.command(name="fit-typical")
@config_option(required=True)
@footprints_option(required=True, help_suffix="to fit")
@out_dir_option
@seed_option
@chains_option
def fit_typical(
    config_path: str,
    footprints: str,
    out_dir: str,
    seed: Optional[int] = None,
    chains: Optional[int] = None,
) -> None:
    """
    Fits the linear spatial model by Gibbs sampling.
    """
    _fit(ModelKind.TYPICAL, config_path, footprints, out_dir, seed, chains)
    return


@main.command(name="fit-mixture")
@config_option(required=True)
@footprints_option(required=True, help_suffix="to fit")
@out_dir_option
@seed_option
@chains_option
def fit_mixture(
    config_path: str,
    footprints: str,
    out_dir: str,
    seed: Optional[int] = None,
    chains: Optional[int] = None,
) -> None:
    """
    Fits the two-class spatial mixture model by Gibbs sampling.
    """
    _fit(ModelKind.MIXTURE, config_path, footprints, out_dir, seed, chains)
    return


@main.command()
@config_option(required=True)
@out_dir_option
@raster_option
@model_option(default=ModelKind.MIXTURE)
@transform_option
def predict(
    config_path: str, out_dir: str, raster: str, model: ModelKind, transform: str
) -> None:
    """
    Predicts every cell of a covariate raster from a fitted run.

    Writes one single-band raster per summary (mean, sd, q025, q975 and, for the
    mixture model, class_mode and class_probability) into the predictions
    directory of the run.
    """
    config = _load_config(config_path)
    run_directory = RunDirectory.from_directory(out_dir)
    draws = run_directory.load_draws(model)
    summary: RasterGrid = predict_raster(
        draws,
        read_raster(raster),
        run_directory.load_mesh(),
        config["prediction_chunk_size"],
        transform=transform,
    )
    os.makedirs(run_directory.predictions_directory, exist_ok=True)
    for (index, band) in enumerate(summary_band_names(model)):
        write_raster(
            summary.band(index),
            prediction_file_name(run_directory.predictions_directory, model, band),
        )
    return


@main.command()
@out_dir_option
@footprints_option(required=True, help_suffix="the run was fit to")
@click.option(
    "--model",
    "-m",
    type=click.Choice([kind.label for kind in ModelKind], case_sensitive=False),
    required=False,
    help="model to score (every fitted model if omitted)",
)
@transform_option
def score(out_dir: str, footprints: str, model: Optional[str], transform: str) -> None:
    """
    Computes the conditional predictive ordinates of fitted models.
    """
    run_directory = RunDirectory.from_directory(out_dir)
    models: List[ModelKind] = (
        run_directory.fitted_models()
        if model is None
        else [ModelKind.from_label(model)]
    )
    if not models:
        raise click.UsageError(f"No fitted models found in {out_dir}.")
    data = FootprintTable.read(footprints)
    mesh = run_directory.load_mesh()
    projection = projection_matrix(mesh, data.coordinates)
    places: int = run_directory.config["num_decimal_places"]
    for kind in models:
        report = cpo_report(run_directory.load_draws(kind), data, projection, transform)
        report.save(run_directory.scores_directory, f"cpo_{kind.label}_{transform}")
        click.echo(
            f"{kind.label}: total log CPO "
            f"{decimal_format(report.total_log_cpo, places)} ({transform} scale)"
        )
    return


@main.command()
@config_option(required=True)
@footprints_option(required=True, help_suffix="to cross-validate on")
@out_dir_option
@cv_scheme_option
@seed_option
@chains_option
def cv(
    config_path: str,
    footprints: str,
    out_dir: str,
    scheme: Optional[CvScheme] = None,
    seed: Optional[int] = None,
    chains: Optional[int] = None,
) -> None:
    """
    Cross-validates the configured models by random or by-orbit holdout.
    """
    config = _load_config(config_path, seed, chains)
    data = FootprintTable.read(footprints)
    mesh = build_mesh(data.bbox, config["mesh_spacing"], config["mesh_buffer"])
    run_directory = RunDirectory(out_dir, config)
    run_directory.save()
    run_directory.save_mesh(mesh)
    reports = cross_validate(data, mesh, config, scheme=scheme)
    for (model, model_reports) in reports.items():
        for report in model_reports:
            name = f"cv_{report.scheme}".replace(":", "_")
            report.save(run_directory.scores_directory, name)
    print_pandas_dataframe(
        score_table(reports), config["num_decimal_places"], print_func=click.echo
    )
    return


@main.command()
@out_dir_option
@model_option(default=ModelKind.MIXTURE)
@plot_type_option(default=PlotType.TRACE)
@string_list_option("columns", "parameter name(s)", help_suffix="plot")
@click.option(
    "--band",
    "-b",
    required=False,
    type=str,
    help="prediction summary band to map instead of plotting draws (e.g. mean)",
)
@click.option("--file_name", required=False, type=str, help="png file to save")
@click.option(
    "--headless",
    required=False,
    default=False,
    is_flag=True,
    help="skips interactive plotting. Usually used with --file_name",
)
def plot(
    out_dir: str,
    model: ModelKind,
    plot_type: PlotType,
    columns: Optional[List[str]] = None,
    band: Optional[str] = None,
    file_name: Optional[str] = None,
    headless: bool = False,
) -> None:
    """
    Plots traces or histograms of draws, or maps a prediction raster.
    """
    run_directory = RunDirectory.from_directory(out_dir)
    if band is None:
        plotter = DrawPlotter(run_directory.load_draws(model), columns)
        plotter.plot(plot_type, file_name=file_name, headless=headless)
    else:
        if band not in summary_band_names(model):
            raise click.UsageError(
                f"--band must be one of {summary_band_names(model)} for {model.label}."
            )
        path = prediction_file_name(run_directory.predictions_directory, model, band)
        plot_raster_band(
            read_raster(path),
            title=f"{model.label} model prediction {band}",
            file_name=file_name,
            headless=headless,
        )
    return


@main.command()
@config_option(required=False)
@click.option("--name", "-n", required=False, type=str, help="config variable name")
def config(config_path: Optional[str] = None, name: Optional[str] = None) -> None:
    """
    Prints the configuration (defaults, or a config file merged with defaults).

    If a name is given, only the config variable with that name is printed.
    """
    _load_config(config_path).print(name=name, print_func=click.echo)
    return


def run(argv: Sequence[str]) -> int:
    """
    Runs a command line and converts failures into an exit status.

    Args:
        argv: arguments after the program name

    Returns:
        0 on success, 2 for usage errors and 1 for any other failure
    """
    try:
        main.main(args=list(argv), prog_name="geomix", standalone_mode=False)
    except click.exceptions.UsageError as error:
        error.show()
        return 2
    except click.exceptions.Abort:
        click.echo("Aborted.", err=True)
        return 1
    except click.exceptions.ClickException as error:
        error.show()
        return 1
    except (GeomixError, OSError, KeyError) as error:
        click.echo(f"Error: {error}", err=True)
        return 1
    return 0


def console_main() -> None:
    """Entry point of the geomix console script."""
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    console_main()
