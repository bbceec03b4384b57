import click

from geomix.app.Plotting import PlotType
from geomix.core.ModelKind import CvScheme, ModelKind


def config_option(required: bool):
    """
    Creates option decorator for the run configuration file.

    Args:
        required: True if a config file is necessary

    Returns:
        click option decorator
    """
    return click.option(
        "--config",
        "-c",
        "config_path",
        required=required,
        type=click.Path(exists=True, dir_okay=False),
        help="YAML file of config variables (defaults used for omitted keys)",
    )


seed_option = click.option(
    "--seed",
    "-s",
    required=False,
    type=click.IntRange(min=0),
    help="overrides the seed of the config",
)


chains_option = click.option(
    "--chains",
    required=False,
    type=click.IntRange(min=1),
    help="overrides the number of chains of the config",
)


out_dir_option = click.option(
    "--out-dir",
    "-o",
    "out_dir",
    required=True,
    type=click.Path(file_okay=False),
    help="run directory to write into",
)


def footprints_option(required: bool, help_suffix: str):
    """
    Creates option decorator for a footprint table.

    Args:
        required: True if the footprint file must be given
        help_suffix: help message is f"footprint file (CSV or parquet) {help_suffix}"

    Returns:
        click option decorator
    """
    return click.option(
        "--footprints",
        "-f",
        required=required,
        type=click.Path(exists=True, dir_okay=False),
        help=f"footprint file (CSV or parquet) {help_suffix}",
    )


raster_option = click.option(
    "--raster",
    "-r",
    required=True,
    type=click.Path(exists=True, dir_okay=False),
    help="covariate raster with one band per covariate",
)


def model_option(default: ModelKind):
    """
    Implements a click option for the ModelKind enum.

    Args:
        default: the default model

    Returns:
        click option decorator
    """
    return click.option(
        "--model",
        "-m",
        type=click.Choice([kind.label for kind in ModelKind], case_sensitive=False),
        show_choices=True,
        default=default.label,
        show_default=True,
        callback=(lambda ctx, param, label: ModelKind.from_label(label)),
        help="model whose draws are used",
    )


cv_scheme_option = click.option(
    "--scheme",
    type=click.Choice([scheme.label for scheme in CvScheme], case_sensitive=False),
    show_choices=True,
    required=False,
    callback=(
        lambda ctx, param, label: None if label is None else CvScheme.from_label(label)
    ),
    help="overrides the cross-validation scheme of the config",
)


transform_option = click.option(
    "--transform",
    "-t",
    type=click.Choice(["identity", "exp", "log"], case_sensitive=False),
    default="identity",
    show_default=True,
    help="response transformation applied before summarizing or scoring",
)


def plot_type_option(default: PlotType):
    """
    Creates an option decorator for the plot type enum.

    Args:
        default: default type of plot

    Returns:
        click option decorator
    """
    return click.option(
        "--plot_type",
        "-p",
        type=click.Choice(PlotType.__members__, case_sensitive=False),
        show_choices=True,
        default=default.name,
        show_default=True,
        callback=(lambda ctx, param, name: PlotType.__members__[name.upper()]),
        help="Type of plot to make",
    )


def string_list_option(option_name: str, description: str, help_suffix: str):
    """
    Creates an option that should be interpreted as a comma-separated list of strings.

    Args:
        option_name: the name to specify the option in the terminal
        description: few-words description of what is in the list
        help_suffix: string to put after "comma-separated {description} to " in help

    Returns:
        click option decorator
    """
    return click.option(
        f"--{option_name}",
        required=False,
        type=str,
        callback=(lambda ctx, param, s: None if s is None else s.split(",")),
        help=f"comma-separated {description} to {help_suffix}",
    )
