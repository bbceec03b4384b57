import logging
import os
from typing import Any, Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
import yaml
from typing_extensions import Self

from geomix.core.Errors import DimensionMismatch, ParseError
from geomix.core.FootprintTable import Centering
from geomix.core.ModelKind import ModelKind

logger = logging.getLogger(__name__)

MATRIX_MAGIC: bytes = b"GMXMAT01"
"""First eight bytes of every binary matrix file."""
MATRIX_EXTENSION: str = ".gmx"
"""File extension of binary matrix files."""
SCALARS_FILE_NAME: str = "scalars.csv"
"""Name of the per-iteration scalar draws file inside a chain directory."""
METADATA_FILE_NAME: str = "chain.yml"
"""Name of the chain metadata file inside a chain directory."""
ITERATION_COLUMN: str = "iteration"
"""Column holding the sampler iteration (counted after burn-in) of each draw."""


def write_matrix(matrix: np.ndarray, path: str) -> None:
    """
    Writes a matrix in the binary container: magic, uint64 rows, uint64 cols, then
    little-endian float64 values in row-major order.

    Args:
        matrix: 2-D array
        path: file to write
    """
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    with open(path, "wb") as file:
        file.write(MATRIX_MAGIC)
        file.write(np.asarray(matrix.shape, dtype="<u8").tobytes())
        file.write(np.ascontiguousarray(matrix, dtype="<f8").tobytes())
    return


def read_matrix(path: str) -> np.ndarray:
    """
    Reads a matrix written by write_matrix.

    Args:
        path: file to read

    Returns:
        2-D float array
    """
    with open(path, "rb") as file:
        content = file.read()
    if content[: len(MATRIX_MAGIC)] != MATRIX_MAGIC:
        raise ParseError(f"{path} is not a geomix matrix file.")
    header_end: int = len(MATRIX_MAGIC) + 16
    (rows, cols) = np.frombuffer(content[len(MATRIX_MAGIC) : header_end], dtype="<u8")
    values = np.frombuffer(content[header_end:], dtype="<f8")
    if values.size != rows * cols:
        raise ParseError(
            f"{path} declares a {rows} x {cols} matrix but holds {values.size} values."
        )
    return values.reshape(int(rows), int(cols)).astype(float)


class ChainMetadata(NamedTuple):
    """Description of how a chain was produced."""

    model: ModelKind
    """which model was fit"""
    seed: int
    """seed of the chain's random stream"""
    chain: int
    """index of the chain within its run"""
    burn_in: int
    """number of discarded initial iterations"""
    thin: int
    """one in every `thin` post-burn-in iterations is stored"""
    centering: Centering
    """covariate centering constants of the training data"""
    band_names: List[str]
    """names of the covariate bands, in model order"""

    def to_dict(self) -> Dict[str, Any]:
        """Gets a YAML-compatible form."""
        return {
            "model": self.model.label,
            "seed": int(self.seed),
            "chain": int(self.chain),
            "burn_in": int(self.burn_in),
            "thin": int(self.thin),
            "centering": self.centering.to_dict(),
            "band_names": list(self.band_names),
        }

    @classmethod
    def from_dict(cls, stored: Dict[str, Any]) -> "ChainMetadata":
        """
        Creates metadata from its YAML form.

        Args:
            stored: mapping written by to_dict

        Returns:
            the metadata
        """
        return cls(
            model=ModelKind.from_label(stored["model"]),
            seed=int(stored["seed"]),
            chain=int(stored["chain"]),
            burn_in=int(stored["burn_in"]),
            thin=int(stored["thin"]),
            centering=Centering.from_dict(stored["centering"]),
            band_names=list(stored["band_names"]),
        )


class ChainDraws:
    """
    Class storing the recorded posterior draws of one or more MCMC chains.

    Scalar parameters live in a DataFrame (one row per stored iteration, one column
    per parameter); effect vectors and labels live in (draws, length) arrays.
    """

    def __init__(
        self,
        scalars: pd.DataFrame,
        effects: Dict[str, np.ndarray],
        metadata: ChainMetadata,
    ):
        """
        Creates draws from recorded values.

        Args:
            scalars: DataFrame with one row per stored iteration
            effects: mapping from effect name to (draws, length) array
            metadata: description of the chain
        """
        for (name, values) in effects.items():
            if values.ndim != 2 or values.shape[0] != len(scalars):
                raise DimensionMismatch(
                    f"Effect {name} has shape {values.shape} but there are "
                    f"{len(scalars)} scalar draws."
                )
        self.scalars: pd.DataFrame = scalars.reset_index(drop=True)
        self.effects: Dict[str, np.ndarray] = effects
        self.metadata: ChainMetadata = metadata

    @classmethod
    def from_records(
        cls,
        scalar_records: Sequence[Dict[str, float]],
        effect_records: Sequence[Dict[str, np.ndarray]],
        metadata: ChainMetadata,
    ) -> Self:
        """
        Creates draws from per-iteration records.

        Args:
            scalar_records: one mapping of scalar values per stored iteration
            effect_records: one mapping of effect vectors per stored iteration
            metadata: description of the chain

        Returns:
            the collected draws
        """
        scalars = pd.DataFrame(list(scalar_records))
        names: List[str] = list(effect_records[0]) if effect_records else []
        effects = {
            name: np.stack([record[name] for record in effect_records]).astype(float)
            for name in names
        }
        return cls(scalars, effects, metadata)

    @property
    def model(self) -> ModelKind:
        """The model these draws belong to."""
        return self.metadata.model

    @property
    def num_draws(self) -> int:
        """Number of stored draws M."""
        return len(self.scalars)

    def __len__(self) -> int:
        """
        Allows use of len built-in.

        Returns:
            number of stored draws
        """
        return self.num_draws

    def scalar(self, name: str) -> np.ndarray:
        """
        Gets the draws of a scalar parameter.

        Args:
            name: column name, e.g. "mu" or "c1.tau2"

        Returns:
            length-M array
        """
        return self.scalars[name].to_numpy(dtype=float)

    def columns_with_prefix(self, prefix: str) -> List[str]:
        """
        Lists scalar columns starting with a prefix.

        Args:
            prefix: e.g. "c1.beta_"

        Returns:
            matching column names in stored order
        """
        return [column for column in self.scalars.columns if column.startswith(prefix)]

    def matrix(self, prefix: str) -> np.ndarray:
        """
        Gathers a block of scalar columns (e.g. all regression coefficients).

        Args:
            prefix: common prefix of the columns

        Returns:
            (M, number of matching columns) array
        """
        columns = self.columns_with_prefix(prefix)
        values = self.scalars[columns].to_numpy(dtype=float)
        return values.reshape(self.num_draws, len(columns))

    def effect(self, name: str) -> np.ndarray:
        """
        Gets the draws of an effect vector.

        Args:
            name: effect name, e.g. "w" or "z.w"

        Returns:
            (M, length) array
        """
        return self.effects[name]

    def acceptance_rate(self, column: str) -> float:
        """
        Gets the fraction of accepted Metropolis proposals recorded in a column.

        Args:
            column: name of an acceptance flag column

        Returns:
            mean of the flags (nan if there are no draws)
        """
        if self.num_draws == 0:
            return float("nan")
        return float(self.scalar(column).mean())

    def save(self, directory: str) -> None:
        """
        Saves scalar draws (CSV), effects (binary matrices) and metadata (YAML).

        Args:
            directory: directory to write into (created if needed)
        """
        os.makedirs(directory, exist_ok=True)
        self.scalars.to_csv(
            os.path.join(directory, SCALARS_FILE_NAME),
            index=False,
            float_format="%.17g",
        )
        for (name, values) in self.effects.items():
            write_matrix(values, os.path.join(directory, f"{name}{MATRIX_EXTENSION}"))
        to_dump: Dict[str, Any] = self.metadata.to_dict()
        to_dump["effects"] = sorted(self.effects)
        to_dump["num_draws"] = self.num_draws
        with open(os.path.join(directory, METADATA_FILE_NAME), "w") as file:
            yaml.safe_dump(to_dump, file)
        logger.info(f"Saved {self.num_draws} draws to {directory}.")
        return

    @classmethod
    def load(cls, directory: str) -> Self:
        """
        Loads draws saved by save.

        Args:
            directory: directory written by save

        Returns:
            the draws
        """
        with open(os.path.join(directory, METADATA_FILE_NAME), "r") as file:
            stored = yaml.safe_load(file)
        scalars = pd.read_csv(
            os.path.join(directory, SCALARS_FILE_NAME), float_precision="round_trip"
        )
        effects = {
            name: read_matrix(os.path.join(directory, f"{name}{MATRIX_EXTENSION}"))
            for name in stored["effects"]
        }
        if len(scalars) != stored["num_draws"]:
            raise ParseError(
                f"{directory} declares {stored['num_draws']} draws but "
                f"{SCALARS_FILE_NAME} holds {len(scalars)}."
            )
        return cls(scalars, effects, ChainMetadata.from_dict(stored))

    @classmethod
    def concatenate(cls, chains: Sequence["ChainDraws"]) -> Self:
        """
        Merges chains of the same model into one set of draws.

        Args:
            chains: chains in the order they should be stacked

        Returns:
            draws of all chains; metadata is taken from the first chain
        """
        if not chains:
            raise ValueError("At least one chain is needed.")
        first: ChainDraws = chains[0]
        for chain in chains[1:]:
            if chain.model != first.model or set(chain.effects) != set(first.effects):
                raise DimensionMismatch("Only draws of the same model can be merged.")
        scalars = pd.concat([chain.scalars for chain in chains], ignore_index=True)
        effects = {
            name: np.concatenate([chain.effects[name] for chain in chains])
            for name in first.effects
        }
        return cls(scalars, effects, first.metadata)

    def __eq__(self, other: object) -> bool:
        """
        Checks exact equality of all draws and metadata.

        Args:
            other: object to compare with

        Returns:
            True if other holds identical draws
        """
        if not isinstance(other, ChainDraws):
            return False
        if self.metadata.to_dict() != other.metadata.to_dict():
            return False
        if list(self.scalars.columns) != list(other.scalars.columns):
            return False
        if not np.array_equal(
            self.scalars.to_numpy(dtype=float), other.scalars.to_numpy(dtype=float)
        ):
            return False
        if set(self.effects) != set(other.effects):
            return False
        return all(
            np.array_equal(values, other.effects[name])
            for (name, values) in self.effects.items()
        )

    def summary(self, columns: Optional[List[str]] = None) -> pd.DataFrame:
        """
        Summarizes scalar draws.

        Args:
            columns: columns to summarize (all but the iteration column if None)

        Returns:
            DataFrame indexed by parameter with mean, sd and 5%/50%/95% quantiles
        """
        if columns is None:
            columns = [
                column for column in self.scalars.columns if column != ITERATION_COLUMN
            ]
        values = self.scalars[columns]
        return pd.DataFrame(
            {
                "mean": values.mean(),
                "sd": values.std(),
                "q05": values.quantile(0.05),
                "median": values.quantile(0.5),
                "q95": values.quantile(0.95),
            }
        )
