import copy
import logging
from typing import Any, Callable, Dict, Iterator, List, NamedTuple, Optional, Set

import yaml
from typing_extensions import Self

from geomix.core.Errors import ConfigInvalid
from geomix.core.ModelKind import CvScheme, ModelKind

logger = logging.getLogger(__name__)


def _positive_float(value: Any) -> float:
    """
    Parses a strictly positive float.

    Args:
        value: raw YAML value

    Returns:
        the value as a float
    """
    parsed = float(value)
    if not parsed > 0:
        raise ValueError(f"expected a positive number, got {value!r}")
    return parsed


def _non_negative_float(value: Any) -> float:
    """
    Parses a non-negative float.

    Args:
        value: raw YAML value

    Returns:
        the value as a float
    """
    parsed = float(value)
    if parsed < 0:
        raise ValueError(f"expected a non-negative number, got {value!r}")
    return parsed


def _probability(value: Any) -> float:
    """
    Parses a probability strictly between 0 and 1.

    Args:
        value: raw YAML value

    Returns:
        the value as a float
    """
    parsed = float(value)
    if not 0 < parsed < 1:
        raise ValueError(f"expected a number in (0, 1), got {value!r}")
    return parsed


def _positive_int(value: Any) -> int:
    """
    Parses a strictly positive integer.

    Args:
        value: raw YAML value

    Returns:
        the value as an int
    """
    if isinstance(value, bool) or int(value) != float(value):
        raise ValueError(f"expected an integer, got {value!r}")
    parsed = int(value)
    if parsed < 1:
        raise ValueError(f"expected a positive integer, got {value!r}")
    return parsed


def _non_negative_int(value: Any) -> int:
    """
    Parses a non-negative integer.

    Args:
        value: raw YAML value

    Returns:
        the value as an int
    """
    if isinstance(value, bool) or int(value) != float(value):
        raise ValueError(f"expected an integer, got {value!r}")
    parsed = int(value)
    if parsed < 0:
        raise ValueError(f"expected a non-negative integer, got {value!r}")
    return parsed


def _boolean(value: Any) -> bool:
    """
    Parses a boolean given either as a YAML bool or a true/false string.

    Args:
        value: raw YAML value

    Returns:
        the boolean
    """
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.lower() in ("true", "false"):
        return value.lower() == "true"
    raise ValueError(f"expected true or false, got {value!r}")


def _bounding_box(value: Any) -> List[float]:
    """
    Parses a rectangle given as [xmin, ymin, xmax, ymax].

    Args:
        value: raw YAML value (list or comma-separated string)

    Returns:
        list of four floats
    """
    if isinstance(value, str):
        value = value.split(",")
    parsed = [float(element) for element in value]
    if len(parsed) != 4 or parsed[2] <= parsed[0] or parsed[3] <= parsed[1]:
        raise ValueError("expected [xmin, ymin, xmax, ymax] with positive extent")
    return parsed


def _model_list(value: Any) -> List[ModelKind]:
    """
    Parses a list of model names.

    Args:
        value: list of names or comma-separated string

    Returns:
        list of ModelKind
    """
    if isinstance(value, str):
        value = value.split(",")
    models = [ModelKind.from_label(str(element).strip()) for element in value]
    if not models:
        raise ValueError("expected at least one model")
    return models


def _optional_float_list(value: Any) -> Optional[List[float]]:
    """
    Parses an optional list of floats.

    Args:
        value: None, a list or a comma-separated string

    Returns:
        None or list of floats
    """
    if value is None:
        return None
    if isinstance(value, str):
        value = value.split(",")
    return [float(element) for element in value]


DEFAULT_TRUTH: Dict[str, Any] = {
    "mu": 2.0,
    "beta": [0.3, -0.2],
    "tau2": 0.05,
    "sigma2": 0.1,
    "phi": 1500.0,
    "mu_1": 3.0,
    "beta_1": [0.3, -0.2],
    "tau2_1": 0.05,
    "sigma2_1": 0.1,
    "phi_1": 1000.0,
    "mu_0": 1.0,
    "beta_0": [0.1, 0.0],
    "tau2_0": 0.05,
    "sigma2_0": 0.04,
    "phi_0": 2000.0,
    "mu_z": 0.5,
    "beta_z": [0.5, 0.0],
    "sigma2_z": 2.25,
    "phi_z": 2000.0,
}
"""
Default generating parameters of simulated data. Unprefixed keys belong to the
typical model; suffixes _1, _0 and _z to the two classes and the Bernoulli process.
"""


def _truth(value: Any) -> Dict[str, Any]:
    """
    Parses a mapping of generating parameters, filling omitted keys with defaults.

    Args:
        value: mapping from parameter name to value

    Returns:
        complete mapping of generating parameters
    """
    if value is None:
        value = {}
    if not isinstance(value, dict):
        raise ValueError("expected a mapping of parameter names to values")
    unknown: Set[str] = set(value) - set(DEFAULT_TRUTH)
    if unknown:
        raise ValueError(f"unknown generating parameter(s) {sorted(unknown)}")
    parsed: Dict[str, Any] = copy.deepcopy(DEFAULT_TRUTH)
    for (key, element) in value.items():
        if key.startswith("beta"):
            parsed[key] = [float(entry) for entry in element]
        else:
            parsed[key] = float(element)
    return parsed


class ConfigVariable(NamedTuple):
    """A class to represent a config variable and its interface to YAML."""

    default: Any
    """default in YAML form (accepted by parser)"""
    parser: Callable[[Any], Any]
    """function that takes in YAML values and makes values of relevant types"""
    stringifier: Callable[[Any], Any] = lambda value: value
    """function that takes in values of relevant types and makes YAML values"""


DEFAULT_RUN_CONFIG: Dict[str, ConfigVariable] = {
    "mesh_spacing": ConfigVariable(1000.0, _positive_float),
    "mesh_buffer": ConfigVariable(7000.0, _non_negative_float),
    "prior_sigma": ConfigVariable(1.0, _positive_float),
    "prior_range": ConfigVariable(2000.0, _positive_float),
    "prior_sigma_z": ConfigVariable(10.0, _positive_float),
    "prior_sigma_1": ConfigVariable(0.5, _positive_float),
    "prior_sigma_0": ConfigVariable(0.2, _positive_float),
    "prior_range_z": ConfigVariable(2000.0, _positive_float),
    "prior_range_1": ConfigVariable(1000.0, _positive_float),
    "prior_range_0": ConfigVariable(2000.0, _positive_float),
    "prior_tail_probability": ConfigVariable(0.01, _probability),
    "draws": ConfigVariable(3000, _positive_int),
    "burn_in": ConfigVariable(3000, _non_negative_int),
    "thin": ConfigVariable(1, _positive_int),
    "seed": ConfigVariable(0, _non_negative_int),
    "chains": ConfigVariable(1, _positive_int),
    "proposal_scale": ConfigVariable(0.1, _positive_float),
    "target_acceptance": ConfigVariable(0.3, _probability),
    "log_every": ConfigVariable(500, _positive_int),
    "em_mu1": ConfigVariable(3.0, float),
    "em_mu0": ConfigVariable(1.0, float),
    "laplace_correction": ConfigVariable(False, _boolean),
    "newton_max_iterations": ConfigVariable(50, _positive_int),
    "newton_tolerance": ConfigVariable(1e-8, _positive_float),
    "standardize_covariates": ConfigVariable(False, _boolean),
    "cv_scheme": ConfigVariable(
        "random", CvScheme.from_label, lambda scheme: scheme.label
    ),
    "cv_holdout_fraction": ConfigVariable(0.1, _probability),
    "cv_models": ConfigVariable(
        ["typical", "mixture"],
        _model_list,
        lambda models: [model.label for model in models],
    ),
    "prediction_chunk_size": ConfigVariable(5000, _positive_int),
    "num_decimal_places": ConfigVariable(4, _non_negative_int),
    "sim_domain": ConfigVariable([0.0, 0.0, 10000.0, 10000.0], _bounding_box),
    "sim_orbits": ConfigVariable(3, _positive_int),
    "sim_azimuths": ConfigVariable(None, _optional_float_list),
    "sim_tracks_per_orbit": ConfigVariable(8, _positive_int),
    "sim_along_track_spacing": ConfigVariable(60.0, _positive_float),
    "sim_across_track_spacing": ConfigVariable(600.0, _positive_float),
    "sim_bands": ConfigVariable(2, _non_negative_int),
    "sim_covariate_range": ConfigVariable(3000.0, _positive_float),
    "sim_cellsize": ConfigVariable(100.0, _positive_float),
    "sim_model": ConfigVariable(
        "mixture", ModelKind.from_label, lambda model: model.label
    ),
    "sim_truth": ConfigVariable({}, _truth),
}
"""
Default run configuration dictionary. Keys are variable names and values are
(default, parser, stringifier) where default is in YAML form, parser creates a
value of the right type from YAML and stringifier goes back to YAML.
"""


class RunConfig:
    """
    Class to store the configuration of a fit, prediction or simulation run.
    """

    def __init__(self, values: Optional[Dict[str, Any]] = None):
        """
        Creates a configuration from YAML-form values, defaulting omitted keys.

        Args:
            values: mapping from config variable name to YAML-form value
        """
        values = {} if values is None else values
        unknown: Set[str] = set(values) - set(DEFAULT_RUN_CONFIG)
        if unknown:
            raise ConfigInvalid(
                f"The following keys are not config variables: {sorted(unknown)}."
            )
        self.values: Dict[str, Any] = {}
        for (key, variable) in DEFAULT_RUN_CONFIG.items():
            self._set(key, values.get(key, variable.default))

    def _set(self, key: str, value: Any) -> None:
        """
        Parses and stores a value.

        Args:
            key: the config variable to set
            value: the YAML form of the value
        """
        if key not in DEFAULT_RUN_CONFIG:
            raise ConfigInvalid(f"{key} is not a config variable.")
        try:
            self.values[key] = DEFAULT_RUN_CONFIG[key].parser(value)
        except (TypeError, ValueError) as exception:
            raise ConfigInvalid(f"Invalid value for {key}: {exception}")
        return

    def override(self, key: str, value: Any) -> None:
        """
        Replaces a single value, e.g. from a command-line flag.

        Args:
            key: the config variable to change
            value: the YAML form of the new value
        """
        self._set(key, value)
        logger.info(f"Overriding config variable {key} with {value}.")
        return

    def copy(self) -> Self:
        """Makes an independent copy of this configuration."""
        return RunConfig(self.to_dict())

    def to_dict(self) -> Dict[str, Any]:
        """
        Gets the YAML form of every config variable.

        Returns:
            mapping from name to stringified value
        """
        return {
            key: DEFAULT_RUN_CONFIG[key].stringifier(value)
            for (key, value) in self.values.items()
        }

    @classmethod
    def load(cls, path: str) -> Self:
        """
        Loads a configuration from a YAML file.

        Args:
            path: file containing a mapping of config variables

        Returns:
            the parsed configuration
        """
        with open(path, "r") as file:
            raw = yaml.safe_load(file)
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigInvalid(f"Config file {path} does not contain a mapping.")
        logger.info(f"Loaded config from {path}.")
        return cls(raw)

    def save(self, path: str) -> None:
        """
        Saves the resolved configuration to a YAML file.

        Args:
            path: file to write
        """
        with open(path, "w") as file:
            yaml.safe_dump(self.to_dict(), file, sort_keys=True)
        return

    def __getitem__(self, key: str) -> Any:
        """
        Gets the value associated with the config variable.

        Args:
            key: the config variable to retrieve

        Returns:
            the parsed value stored for the given key
        """
        return self.values[key]

    def __contains__(self, key: str) -> bool:
        """
        Checks if key represents a config variable.

        Args:
            key: the config variable to check for

        Returns:
            True if key represents a stored variable
        """
        return key in self.values

    def __iter__(self) -> Iterator:
        """Iterates over config variable names."""
        return self.values.__iter__()

    def __eq__(self, other: object) -> bool:
        """
        Checks equality of all stored values.

        Args:
            other: object to compare with

        Returns:
            True if other is a RunConfig with the same values
        """
        return isinstance(other, RunConfig) and self.to_dict() == other.to_dict()

    def print(
        self, name: Optional[str] = None, print_func: Callable[..., None] = print
    ) -> None:
        """
        Prints the configuration.

        Args:
            name: name of the config variable to print. None if all should be printed
            print_func: the function to use for printing
        """
        stringified: Dict[str, Any] = self.to_dict()
        if name is None:
            for key in sorted(stringified):
                print_func(f"{key}: {stringified[key]}")
        elif name in self:
            print_func(f"{name}: {stringified[name]}")
        else:
            print_func(f"{name} not in geomix config.")
        return
