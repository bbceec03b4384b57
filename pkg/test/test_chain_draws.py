import numpy as np
import pytest

from geomix.core.ChainDraws import (
    MATRIX_MAGIC,
    ChainDraws,
    ChainMetadata,
    read_matrix,
    write_matrix,
)
from geomix.core.Errors import DimensionMismatch, ParseError
from geomix.core.FootprintTable import Centering
from geomix.core.ModelKind import ModelKind


def make_metadata(
    chain: int = 0, model: ModelKind = ModelKind.TYPICAL
) -> ChainMetadata:
    """
    Makes metadata for a chain with one covariate band.

    Args:
        chain: index of the chain
        model: model of the chain

    Returns:
        the metadata
    """
    return ChainMetadata(
        model=model,
        seed=17,
        chain=chain,
        burn_in=5,
        thin=2,
        centering=Centering(np.array([0.5]), np.array([1.0])),
        band_names=["band_1"],
    )


def make_draws(num_draws: int, chain: int = 0, seed: int = 0) -> ChainDraws:
    """
    Makes random draws with two scalars, a coefficient and one effect.

    Args:
        num_draws: number of stored iterations
        chain: index of the chain
        seed: seed of the random values

    Returns:
        the draws
    """
    rng = np.random.default_rng(seed)
    scalar_records = [
        {
            "iteration": float(2 * index),
            "mu": rng.normal(),
            "beta_1": rng.normal(),
            "tau2": rng.gamma(2.0),
            "accepted": float(index % 2),
        }
        for index in range(num_draws)
    ]
    effect_records = [{"w": rng.normal(size=6)} for _ in range(num_draws)]
    return ChainDraws.from_records(scalar_records, effect_records, make_metadata(chain))


def test_matrix_file_layout(tmp_path) -> None:
    """
    Checks the magic, the shape header and row-major little-endian values.
    """
    matrix = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    path = str(tmp_path / "matrix.gmx")
    write_matrix(matrix, path)
    with open(path, "rb") as file:
        content = file.read()
    assert content[:8] == MATRIX_MAGIC
    assert np.frombuffer(content[8:24], dtype="<u8").tolist() == [2, 3]
    assert np.frombuffer(content[24:], dtype="<f8").tolist() == [1, 2, 3, 4, 5, 6]
    assert np.array_equal(read_matrix(path), matrix)
    return


def test_matrix_file_errors(tmp_path) -> None:
    """
    Checks that a wrong magic or a truncated body is a parse error.
    """
    wrong_magic = tmp_path / "wrong.gmx"
    wrong_magic.write_bytes(b"NOTAMTRX" + bytes(16))
    with pytest.raises(ParseError):
        read_matrix(str(wrong_magic))
    truncated = tmp_path / "truncated.gmx"
    write_matrix(np.ones((3, 3)), str(truncated))
    truncated.write_bytes(truncated.read_bytes()[:-8])
    with pytest.raises(ParseError):
        read_matrix(str(truncated))
    return


def test_from_records_and_accessors() -> None:
    """
    Checks the shapes and accessors of collected draws.
    """
    draws = make_draws(4)
    assert len(draws) == 4
    assert draws.model == ModelKind.TYPICAL
    assert draws.effect("w").shape == (4, 6)
    assert draws.scalar("mu").shape == (4,)
    assert draws.columns_with_prefix("beta_") == ["beta_1"]
    assert draws.matrix("beta_").shape == (4, 1)
    assert draws.matrix("gamma_").shape == (4, 0)
    assert draws.acceptance_rate("accepted") == 0.5
    return


def test_effect_length_must_match_scalars() -> None:
    """
    Checks that effects with a different number of draws are rejected.
    """
    draws = make_draws(3)
    with pytest.raises(DimensionMismatch):
        ChainDraws(draws.scalars, {"w": np.zeros((2, 6))}, draws.metadata)
    return


def test_save_and_load_are_exact(tmp_path) -> None:
    """
    Checks that saved draws load back bit for bit.
    """
    draws = make_draws(7, seed=3)
    directory = str(tmp_path / "chain_0")
    draws.save(directory)
    loaded = ChainDraws.load(directory)
    assert loaded == draws
    assert loaded.metadata.centering.means.tolist() == [0.5]
    assert loaded.metadata.band_names == ["band_1"]
    return


def test_load_detects_missing_draws(tmp_path) -> None:
    """
    Checks that a scalars file shorter than declared is rejected.
    """
    directory = tmp_path / "chain_0"
    make_draws(5).save(str(directory))
    scalars = directory / "scalars.csv"
    lines = scalars.read_text().splitlines()
    scalars.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ParseError):
        ChainDraws.load(str(directory))
    return


def test_concatenate() -> None:
    """
    Checks that chains are stacked in order with the first chain's metadata.
    """
    first = make_draws(3, chain=0, seed=1)
    second = make_draws(2, chain=1, seed=2)
    merged = ChainDraws.concatenate([first, second])
    assert len(merged) == 5
    assert np.array_equal(merged.effect("w")[3:], second.effect("w"))
    assert np.array_equal(merged.scalar("mu")[:3], first.scalar("mu"))
    assert merged.metadata.chain == 0
    with pytest.raises(ValueError):
        ChainDraws.concatenate([])
    mixture = ChainDraws(
        first.scalars, first.effects, make_metadata(0, ModelKind.MIXTURE)
    )
    with pytest.raises(DimensionMismatch):
        ChainDraws.concatenate([first, mixture])
    return


def test_equality() -> None:
    """
    Checks that equality depends on values and metadata.
    """
    assert make_draws(3, seed=4) == make_draws(3, seed=4)
    assert make_draws(3, seed=4) != make_draws(3, seed=5)
    assert make_draws(3, chain=0) != make_draws(3, chain=1)
    assert make_draws(3) != "draws"
    return


def test_summary() -> None:
    """
    Checks the summary columns and that the iteration column is left out.
    """
    draws = make_draws(50, seed=6)
    summary = draws.summary()
    assert "iteration" not in summary.index
    assert list(summary.columns) == ["mean", "sd", "q05", "median", "q95"]
    assert summary.loc["mu", "mean"] == pytest.approx(draws.scalar("mu").mean())
    assert summary.loc["tau2", "q05"] <= summary.loc["tau2", "median"]
    assert summary.loc["tau2", "median"] <= summary.loc["tau2", "q95"]
    assert list(draws.summary(["mu"]).index) == ["mu"]
    return
