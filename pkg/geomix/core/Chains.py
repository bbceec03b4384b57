import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional

from geomix.core.ChainDraws import ChainDraws
from geomix.core.Config import RunConfig
from geomix.core.FootprintTable import FootprintTable
from geomix.core.Mesh import Mesh, ProjectionMatrix, projection_matrix
from geomix.core.MixtureSampler import fit_mixture
from geomix.core.ModelKind import ModelKind
from geomix.core.Spde import FemMatrices, assemble_fem
from geomix.core.TypicalSampler import fit_typical

logger = logging.getLogger(__name__)

ChainFitter = Callable[..., ChainDraws]

FITTERS: Dict[ModelKind, ChainFitter] = {
    ModelKind.TYPICAL: fit_typical,
    ModelKind.MIXTURE: fit_mixture,
}
"""Single-chain sampler of each model."""


def fit_chains(
    model: ModelKind,
    data: FootprintTable,
    mesh: Mesh,
    config: RunConfig,
    fem: Optional[FemMatrices] = None,
    projection: Optional[ProjectionMatrix] = None,
) -> List[ChainDraws]:
    """
    Runs the configured number of independent chains of one model.

    Chains share the finite element matrices and projection, draw from their own
    seed sequences and run on a thread pool. The result does not depend on how the
    chains are scheduled.

    Args:
        model: which model to fit
        data: footprints to fit
        mesh: triangulation covering every footprint
        config: run configuration (chains, seed and sampler settings)
        fem: finite element matrices, assembled if None
        projection: projection of the footprints, computed if None

    Returns:
        draws of each chain, in chain order
    """
    fem = assemble_fem(mesh) if fem is None else fem
    if projection is None:
        projection = projection_matrix(mesh, data.coordinates)
    fitter: ChainFitter = FITTERS[model]
    num_chains: int = config["chains"]
    logger.info(
        f"Running {num_chains} {model.label} chain(s) with seed {config['seed']}."
    )
    if num_chains == 1:
        return [fitter(data, mesh, config, 0, fem, projection)]
    with ThreadPoolExecutor(max_workers=num_chains) as executor:
        futures = [
            executor.submit(fitter, data, mesh, config, chain, fem, projection)
            for chain in range(num_chains)
        ]
        return [future.result() for future in futures]
