import glob
import logging
import os
import shutil
from typing import List, Optional

from typing_extensions import Self

from geomix.core.ChainDraws import ChainDraws
from geomix.core.Config import RunConfig
from geomix.core.Mesh import Mesh
from geomix.core.ModelKind import ModelKind

logger = logging.getLogger(__name__)

CONFIG_FILE_NAME: str = "config.yml"
"""Name of the resolved configuration file of a run."""
MESH_DIRECTORY_NAME: str = "mesh"
"""Subdirectory holding the fit mesh."""
CHAINS_DIRECTORY_NAME: str = "chains"
"""Subdirectory holding one directory per model and chain."""
PREDICTIONS_DIRECTORY_NAME: str = "predictions"
"""Subdirectory holding prediction summary rasters."""
SCORES_DIRECTORY_NAME: str = "scores"
"""Subdirectory holding score reports."""


class RunDirectory:
    """
    Class to store info about how the files of a geomix run are laid out on disk.
    """

    def __init__(self, directory: str, config: Optional[RunConfig] = None):
        """
        Creates a run directory object (nothing is written until save is called).

        Args:
            directory: root directory of the run
            config: configuration of the run, read from the directory if None
        """
        self.directory: str = directory
        self._config: Optional[RunConfig] = config

    @staticmethod
    def make_config_filename(directory: str) -> str:
        """
        Makes a config file path from the directory it is stored in.

        Args:
            directory: root directory of a run

        Returns:
            full path to config file
        """
        return os.path.join(directory, CONFIG_FILE_NAME)

    @property
    def config_filename(self) -> str:
        """The filename of the config file of this run."""
        return self.make_config_filename(self.directory)

    @property
    def config(self) -> RunConfig:
        """
        Gets the configuration of the run, loading it from disk the first time.

        Returns:
            the run configuration
        """
        if self._config is None:
            self._config = RunConfig.load(self.config_filename)
        return self._config

    @classmethod
    def from_directory(cls, directory: str) -> Self:
        """
        Opens an existing run directory.

        Args:
            directory: root directory with a config file

        Returns:
            the run directory
        """
        if not os.path.exists(cls.make_config_filename(directory)):
            raise FileNotFoundError(f"{directory} holds no {CONFIG_FILE_NAME}.")
        logger.debug(f"Loading run from directory {directory}.")
        return cls(directory)

    def save(self) -> None:
        """Writes the resolved configuration into the directory."""
        os.makedirs(self.directory, exist_ok=True)
        self.config.save(self.config_filename)
        return

    @property
    def mesh_directory(self) -> str:
        """Directory of the fit mesh."""
        return os.path.join(self.directory, MESH_DIRECTORY_NAME)

    def save_mesh(self, mesh: Mesh) -> None:
        """
        Stores the mesh the run's models are fit on.

        Args:
            mesh: the mesh
        """
        mesh.save(self.mesh_directory)
        return

    def load_mesh(self) -> Mesh:
        """Loads the stored fit mesh."""
        return Mesh.load(self.mesh_directory)

    @property
    def predictions_directory(self) -> str:
        """Directory of prediction rasters."""
        return os.path.join(self.directory, PREDICTIONS_DIRECTORY_NAME)

    @property
    def scores_directory(self) -> str:
        """Directory of score reports."""
        return os.path.join(self.directory, SCORES_DIRECTORY_NAME)

    def chain_directory(self, model: ModelKind, chain: int) -> str:
        """
        Gets the directory of one chain's draws.

        Args:
            model: fitted model
            chain: chain index

        Returns:
            path of the chain directory
        """
        return os.path.join(
            self.directory, CHAINS_DIRECTORY_NAME, model.label, f"chain_{chain}"
        )

    def save_chains(self, model: ModelKind, chains: List[ChainDraws]) -> None:
        """
        Saves the draws of every chain of a model, replacing earlier draws.

        Args:
            model: fitted model
            chains: draws in chain order
        """
        model_directory = os.path.join(
            self.directory, CHAINS_DIRECTORY_NAME, model.label
        )
        if os.path.exists(model_directory):
            shutil.rmtree(model_directory)
        for (chain, draws) in enumerate(chains):
            draws.save(self.chain_directory(model, chain))
        return

    def fitted_models(self) -> List[ModelKind]:
        """Lists the models whose draws are stored, in ModelKind order."""
        return [model for model in ModelKind if self.chain_directories(model)]

    def chain_directories(self, model: ModelKind) -> List[str]:
        """
        Lists the stored chain directories of a model in chain order.

        Args:
            model: fitted model

        Returns:
            paths of the chain directories
        """
        pattern = os.path.join(
            self.directory, CHAINS_DIRECTORY_NAME, model.label, "chain_*"
        )
        return sorted(
            glob.glob(pattern), key=lambda path: int(path.rsplit("_", 1)[-1])
        )

    def load_draws(self, model: ModelKind) -> ChainDraws:
        """
        Loads and merges every chain of a model.

        Args:
            model: fitted model

        Returns:
            draws of all chains
        """
        directories = self.chain_directories(model)
        if not directories:
            raise FileNotFoundError(
                f"No {model.label} draws stored in {self.directory}."
            )
        return ChainDraws.concatenate(
            [ChainDraws.load(directory) for directory in directories]
        )
