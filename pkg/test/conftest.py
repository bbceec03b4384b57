import matplotlib

matplotlib.use("Agg")

from typing import Any, Callable, Optional

import numpy as np
import pytest

from geomix.core.Config import DEFAULT_TRUTH, RunConfig
from geomix.core.FootprintTable import FootprintTable
from geomix.core.Mesh import Mesh, build_mesh
from geomix.core.ModelKind import ModelKind
from geomix.core.Simulation import Design, simulate_response
from geomix.core.Spde import FemMatrices, assemble_fem


def pytest_configure(config) -> None:
    """
    Registers the markers used by the test suite.

    Args:
        config: the pytest config object
    """
    config.addinivalue_line("markers", "slow: long-running statistical checks")
    return


@pytest.fixture
def small_mesh() -> Mesh:
    """A 7 x 7 vertex lattice covering [0, 6000] x [0, 6000] meters."""
    return build_mesh((1000.0, 1000.0, 5000.0, 5000.0), 1000.0, 1000.0)


@pytest.fixture
def small_fem(small_mesh: Mesh) -> FemMatrices:
    """Finite element matrices of the small mesh."""
    return assemble_fem(small_mesh)


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded random stream."""
    return np.random.default_rng(12345)


@pytest.fixture
def linear_table() -> FootprintTable:
    """
    Eighty footprints inside the small mesh with one covariate band and response
    2 + 0.5 x + noise.
    """
    rng = np.random.default_rng(2024)
    coordinates = rng.uniform(500.0, 5500.0, (80, 2))
    covariates = rng.normal(size=(80, 1))
    response = 2.0 + 0.5 * covariates[:, 0] + 0.3 * rng.normal(size=80)
    orbits = np.arange(80) % 4
    return FootprintTable.from_arrays(coordinates, response, covariates, orbits=orbits)


@pytest.fixture
def short_config() -> RunConfig:
    """Configuration with a coarse mesh and very short chains."""
    return RunConfig(
        {"draws": 4, "burn_in": 6, "log_every": 5, "mesh_spacing": 1000.0}
    )


@pytest.fixture
def simulate_typical() -> Callable[..., FootprintTable]:
    """
    Factory of typical-model data sets with one covariate band, simulated on a
    given mesh over [0, 6000] x [0, 6000] meters.
    """

    def simulate(
        mesh: Mesh,
        fem: FemMatrices,
        num_points: int,
        seed: int,
        truth: Optional[dict] = None,
    ) -> FootprintTable:
        rng = np.random.default_rng(seed)
        design = Design(
            coordinates=rng.uniform(0.0, 6000.0, (num_points, 2)),
            orbits=np.zeros(num_points, dtype=np.int64),
            covariates=rng.normal(size=(num_points, 1)),
            raster=None,
            mesh=mesh,
        )
        truth = dict(DEFAULT_TRUTH, beta=[0.3]) if truth is None else truth
        (table, _) = simulate_response(design, truth, ModelKind.TYPICAL, rng, fem)
        return table

    return simulate


@pytest.fixture
def mixture_config() -> Callable[..., RunConfig]:
    """
    Factory of configurations that simulate roughly 1200 mixture footprints over
    [0, 6000] x [0, 6000] meters and fit them with weakly informative priors.
    """

    def make(seed: int, **changes: Any) -> RunConfig:
        values = {
            "sim_domain": [0.0, 0.0, 6000.0, 6000.0],
            "sim_orbits": 3,
            "sim_tracks_per_orbit": 4,
            "sim_model": "mixture",
            "mesh_spacing": 1000.0,
            "mesh_buffer": 2000.0,
            "prior_sigma_1": 1.0,
            "prior_sigma_0": 1.0,
            "prior_range_1": 300.0,
            "prior_range_0": 300.0,
            "prior_range_z": 300.0,
            "draws": 500,
            "burn_in": 500,
            "log_every": 500,
            "seed": seed,
        }
        values.update(changes)
        return RunConfig(values)

    return make
