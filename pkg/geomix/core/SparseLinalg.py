from collections import OrderedDict
import hashlib
import logging
import threading
from typing import Optional, Union

import numpy as np
import scipy.sparse as sparse
from scipy.sparse.csgraph import reverse_cuthill_mckee
from scipy.sparse.linalg import splu, spsolve_triangular
from typing_extensions import Self

from geomix.core.Errors import DimensionMismatch, NotPositiveDefinite

logger = logging.getLogger(__name__)

JITTER_START: float = 1e-10
"""First diagonal jitter (relative to the mean diagonal) tried after a failed pivot."""
JITTER_STOP: float = 1e-4
"""Largest relative jitter tried before giving up."""
JITTER_GROWTH: float = 10.0
"""Multiplicative escalation of the jitter between attempts."""
ORDERING_CACHE_SIZE: int = 64
"""Number of sparsity patterns whose orderings are remembered."""

ArrayLike = Union[np.ndarray, list]


class SparseSymMatrix:
    """
    Sparse symmetric matrix stored through its lower triangle (compressed columns).
    """

    def __init__(self, lower: sparse.spmatrix):
        """
        Creates a symmetric matrix from a lower triangular sparse matrix.

        Entries above the diagonal (if any) are discarded.

        Args:
            lower: square sparse matrix whose lower triangle defines the matrix
        """
        if lower.shape[0] != lower.shape[1]:
            raise DimensionMismatch(f"Matrix of shape {lower.shape} is not square.")
        if lower.shape[0] < 1:
            raise DimensionMismatch("Matrix dimension must be at least 1.")
        lower = sparse.tril(sparse.csc_matrix(lower), format="csc")
        lower.sum_duplicates()
        lower.sort_indices()
        self._lower: sparse.csc_matrix = lower
        self._pattern_key: Optional[bytes] = None

    @classmethod
    def from_coo(
        cls, rows: ArrayLike, cols: ArrayLike, values: ArrayLike, dimension: int
    ) -> Self:
        """
        Assembles a symmetric matrix from coordinate triplets.

        Triplets may lie in either triangle; (i, j) and (j, i) refer to the same
        logical entry. Repeated coordinates are summed, as in finite element assembly.

        Args:
            rows: 0-based row indices
            cols: 0-based column indices
            values: entry values
            dimension: number of rows (and columns)

        Returns:
            the assembled matrix
        """
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=float)
        if not (rows.shape == cols.shape == values.shape):
            raise DimensionMismatch("rows, cols and values must have equal lengths.")
        if rows.size and (
            min(rows.min(), cols.min()) < 0 or max(rows.max(), cols.max()) >= dimension
        ):
            raise DimensionMismatch(f"Coordinates must lie in [0, {dimension}).")
        high: np.ndarray = np.maximum(rows, cols)
        low: np.ndarray = np.minimum(rows, cols)
        coo = sparse.coo_matrix((values, (high, low)), shape=(dimension, dimension))
        return cls(coo.tocsc())

    @classmethod
    def from_full(cls, matrix: Union[np.ndarray, sparse.spmatrix]) -> Self:
        """
        Creates a symmetric matrix from a full (both triangles) representation.

        Args:
            matrix: dense array or sparse matrix assumed symmetric

        Returns:
            matrix built from the lower triangle of the input
        """
        if isinstance(matrix, np.ndarray):
            return cls(sparse.csc_matrix(np.tril(matrix)))
        return cls(sparse.tril(matrix, format="csc"))

    @classmethod
    def identity(cls, dimension: int) -> Self:
        """
        Creates an identity matrix.

        Args:
            dimension: number of rows

        Returns:
            identity matrix of the given dimension
        """
        return cls(sparse.identity(dimension, format="csc"))

    @classmethod
    def diagonal_matrix(cls, values: ArrayLike) -> Self:
        """
        Creates a diagonal matrix.

        Args:
            values: the diagonal entries

        Returns:
            diagonal matrix
        """
        return cls(sparse.diags(np.asarray(values, dtype=float), format="csc"))

    @property
    def dimension(self) -> int:
        """Number of rows (and columns) of the matrix."""
        return self._lower.shape[0]

    @property
    def lower(self) -> sparse.csc_matrix:
        """Lower triangle (including diagonal) in compressed-column form."""
        return self._lower

    @property
    def nnz(self) -> int:
        """Number of stored entries of the lower triangle."""
        return self._lower.nnz

    @property
    def pattern_key(self) -> bytes:
        """Digest of the sparsity pattern, used to cache fill-reducing orderings."""
        if self._pattern_key is None:
            digest = hashlib.blake2b(digest_size=20)
            digest.update(np.int64(self.dimension).tobytes())
            digest.update(self._lower.indptr.astype(np.int64).tobytes())
            digest.update(self._lower.indices.astype(np.int64).tobytes())
            self._pattern_key = digest.digest()
        return self._pattern_key

    def diagonal(self) -> np.ndarray:
        """Gets the diagonal entries."""
        return self._lower.diagonal()

    def full(self) -> sparse.csc_matrix:
        """
        Gets both triangles of the matrix.

        Returns:
            symmetric sparse matrix in compressed-column form
        """
        strict_lower = sparse.tril(self._lower, k=-1, format="csc")
        return (self._lower + strict_lower.T).tocsc()

    def toarray(self) -> np.ndarray:
        """Gets a dense copy of the matrix."""
        return self.full().toarray()

    def dot(self, vector: np.ndarray) -> np.ndarray:
        """
        Multiplies the matrix with a vector (or block of vectors).

        Args:
            vector: array whose first dimension is the matrix dimension

        Returns:
            matrix-vector product
        """
        vector = np.asarray(vector, dtype=float)
        if vector.shape[0] != self.dimension:
            raise DimensionMismatch(
                f"Vector of length {vector.shape[0]} cannot multiply "
                f"matrix of dimension {self.dimension}."
            )
        strict_lower = sparse.tril(self._lower, k=-1, format="csc")
        return self._lower @ vector + strict_lower.T @ vector

    def quadratic_form(self, vector: np.ndarray) -> float:
        """
        Evaluates x^T M x.

        Args:
            vector: the vector x

        Returns:
            value of the quadratic form
        """
        return float(np.dot(vector, self.dot(vector)))

    def scaled(self, factor: float) -> Self:
        """
        Multiplies every entry by a scalar.

        Args:
            factor: scalar multiplier

        Returns:
            new scaled matrix
        """
        return SparseSymMatrix(self._lower * factor)

    def __add__(self, other: Self) -> Self:
        """
        Adds two symmetric matrices of equal dimension.

        Args:
            other: matrix to add

        Returns:
            sum of the two matrices
        """
        if other.dimension != self.dimension:
            raise DimensionMismatch("Cannot add matrices of different dimensions.")
        return SparseSymMatrix(self._lower + other.lower)

    def __eq__(self, other: object) -> bool:
        """
        Checks for exact equality of stored entries.

        Args:
            other: object to compare with

        Returns:
            True if other is a SparseSymMatrix with identical entries
        """
        if not isinstance(other, SparseSymMatrix):
            return False
        if other.dimension != self.dimension:
            return False
        return (self._lower != other.lower).nnz == 0


_ORDERING_CACHE: "OrderedDict[bytes, np.ndarray]" = OrderedDict()
_ORDERING_LOCK = threading.Lock()
_COUNTER = threading.local()


def factorization_count() -> int:
    """
    Gets the number of Cholesky factorizations performed by the calling thread.

    Returns:
        count since the last reset in this thread
    """
    return getattr(_COUNTER, "count", 0)


def reset_factorization_count() -> None:
    """Resets the calling thread's factorization counter to zero."""
    _COUNTER.count = 0
    return


def fill_reducing_ordering(matrix: SparseSymMatrix) -> np.ndarray:
    """
    Computes (or recalls) a fill-reducing symmetric ordering of a sparsity pattern.

    Rows with many more entries than typical (e.g. the fixed-effect border of a
    block precision) are ordered last; reverse Cuthill-McKee orders the rest.

    Args:
        matrix: matrix whose pattern is ordered

    Returns:
        array `ordering` such that full[ordering][:, ordering] is the permuted matrix
    """
    key: bytes = matrix.pattern_key
    with _ORDERING_LOCK:
        if key in _ORDERING_CACHE:
            _ORDERING_CACHE.move_to_end(key)
            return _ORDERING_CACHE[key]
    full: sparse.csr_matrix = matrix.full().tocsr()
    dimension: int = matrix.dimension
    degrees: np.ndarray = np.diff(full.indptr)
    threshold: float = max(16.0, 10.0 * np.sqrt(dimension))
    dense_rows: np.ndarray = np.flatnonzero(degrees > threshold)
    if dense_rows.size == 0:
        ordering = np.asarray(
            reverse_cuthill_mckee(full, symmetric_mode=True), dtype=np.int64
        )
    else:
        sparse_rows: np.ndarray = np.flatnonzero(degrees <= threshold)
        ordering = dense_rows.astype(np.int64)
        if sparse_rows.size:
            submatrix = full[sparse_rows][:, sparse_rows].tocsr()
            local = reverse_cuthill_mckee(submatrix, symmetric_mode=True)
            ordering = np.concatenate([sparse_rows[local], dense_rows]).astype(np.int64)
    ordering.setflags(write=False)
    with _ORDERING_LOCK:
        _ORDERING_CACHE[key] = ordering
        while len(_ORDERING_CACHE) > ORDERING_CACHE_SIZE:
            _ORDERING_CACHE.popitem(last=False)
    return ordering


class CholFactor:
    """
    Cholesky factorization P Q P^T = L L^T of a sparse symmetric positive definite Q.
    """

    def __init__(
        self,
        permutation: np.ndarray,
        unit_lower: sparse.csc_matrix,
        pivots: np.ndarray,
        solver,
        solver_ordering: np.ndarray,
        jitter: float,
    ):
        """
        Stores the pieces of a factorization. Use `cholesky` to create one.

        Args:
            permutation: new-to-old index map; row a of P is e_{permutation[a]}
            unit_lower: unit lower triangular factor of P Q P^T = U D U^T form
            pivots: positive pivots D
            solver: SuperLU object for the matrix permuted by solver_ordering
            solver_ordering: ordering applied before handing the matrix to SuperLU
            jitter: absolute diagonal jitter that was added to Q (0 if none)
        """
        self.permutation: np.ndarray = permutation
        self.pivots: np.ndarray = pivots
        self.jitter: float = jitter
        self._unit_lower: sparse.csc_matrix = unit_lower
        self._unit_upper: sparse.csr_matrix = unit_lower.T.tocsr()
        self._solver = solver
        self._solver_ordering: np.ndarray = solver_ordering
        self._lower: Optional[sparse.csc_matrix] = None

    @property
    def dimension(self) -> int:
        """Dimension of the factored matrix."""
        return self.pivots.size

    @property
    def lower(self) -> sparse.csc_matrix:
        """Cholesky factor L (positive diagonal) of the permuted matrix."""
        if self._lower is None:
            self._lower = (
                self._unit_lower @ sparse.diags(np.sqrt(self.pivots))
            ).tocsc()
        return self._lower

    def _check_length(self, length: int) -> None:
        """
        Raises DimensionMismatch unless length equals the dimension.

        Args:
            length: length of a vector passed by the caller
        """
        if length != self.dimension:
            raise DimensionMismatch(
                f"Expected length {self.dimension} but received length {length}."
            )
        return

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """
        Solves Q x = rhs.

        Args:
            rhs: vector of length dimension, or dimension x r block

        Returns:
            solution with the same shape as rhs
        """
        rhs = np.asarray(rhs, dtype=float)
        self._check_length(rhs.shape[0])
        ordering: np.ndarray = self._solver_ordering
        solution: np.ndarray = np.empty_like(rhs)
        solution[ordering] = self._solver.solve(np.ascontiguousarray(rhs[ordering]))
        return solution

    def solve_lt(self, rhs: np.ndarray) -> np.ndarray:
        """
        Computes P^T L^-T rhs, which maps standard normals to N(0, Q^-1) draws.

        Args:
            rhs: vector of length dimension

        Returns:
            P^T L^-T rhs in the original indexing
        """
        rhs = np.asarray(rhs, dtype=float)
        self._check_length(rhs.shape[0])
        scaled: np.ndarray = rhs / np.sqrt(self.pivots)
        permuted: np.ndarray = spsolve_triangular(
            self._unit_upper, scaled, lower=False, unit_diagonal=True
        )
        result: np.ndarray = np.empty_like(permuted)
        result[self.permutation] = permuted
        return result

    def log_det(self) -> float:
        """Gets log|Q| = 2 sum log diag(L)."""
        return float(np.sum(np.log(self.pivots)))


def _numeric_factor(permuted: sparse.csc_matrix):
    """
    Attempts an unpivoted LU (equivalently LDL^T) factorization.

    Args:
        permuted: symmetric matrix in its fill-reducing ordering

    Returns:
        SuperLU object if every pivot is positive and no pivoting occurred, else None
    """
    try:
        solver = splu(
            permuted,
            permc_spec="NATURAL",
            diag_pivot_thresh=0.0,
            options=dict(SymmetricMode=True),
        )
    except RuntimeError:
        return None
    if not np.array_equal(solver.perm_r, solver.perm_c):
        return None
    pivots: np.ndarray = solver.U.diagonal()
    if (not np.all(np.isfinite(pivots))) or np.any(pivots <= 0):
        return None
    return solver


def cholesky(matrix: SparseSymMatrix) -> CholFactor:
    """
    Factors a sparse symmetric positive definite matrix.

    A fill-reducing ordering (cached per sparsity pattern) is applied first. If a
    pivot is not positive, a diagonal jitter starting at 1e-10 times the mean
    diagonal is added and escalated by factors of 10 up to 1e-4 times the mean
    diagonal.

    Args:
        matrix: the matrix Q

    Returns:
        factorization P Q P^T = L L^T
    """
    _COUNTER.count = factorization_count() + 1
    ordering: np.ndarray = fill_reducing_ordering(matrix)
    permuted: sparse.csc_matrix = matrix.full()[ordering][:, ordering].tocsc()
    dimension: int = matrix.dimension
    scale: float = float(np.mean(np.abs(permuted.diagonal())))
    if scale == 0 or not np.isfinite(scale):
        scale = 1.0
    jitter: float = 0.0
    solver = _numeric_factor(permuted)
    relative: float = JITTER_START
    while solver is None:
        if relative > JITTER_STOP * (1 + 1e-9):
            raise NotPositiveDefinite(
                f"Matrix of dimension {dimension} is not positive definite even "
                f"with a diagonal jitter of {JITTER_STOP:.0e} x mean diagonal."
            )
        jitter = relative * scale
        logger.warning(
            f"Cholesky pivot failure; retrying with diagonal jitter {jitter:.3e}."
        )
        shifted = (permuted + jitter * sparse.identity(dimension, format="csc")).tocsc()
        solver = _numeric_factor(shifted)
        relative *= JITTER_GROWTH
    inverse_post: np.ndarray = np.argsort(solver.perm_c)
    permutation: np.ndarray = ordering[inverse_post]
    return CholFactor(
        permutation=permutation,
        unit_lower=solver.L.tocsc(),
        pivots=solver.U.diagonal().copy(),
        solver=solver,
        solver_ordering=ordering,
        jitter=jitter,
    )


def solve(factor: CholFactor, rhs: np.ndarray) -> np.ndarray:
    """
    Solves Q x = rhs given the factorization of Q.

    Args:
        factor: Cholesky factorization of Q
        rhs: right hand side vector (or block of vectors)

    Returns:
        the solution x
    """
    return factor.solve(rhs)


def log_det(factor: CholFactor) -> float:
    """
    Computes the log-determinant of a factored matrix.

    Args:
        factor: Cholesky factorization of Q

    Returns:
        log|Q|
    """
    return factor.log_det()


def sample_gmrf(
    factor: CholFactor, mean: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """
    Draws from N(mean, Q^-1) given the factorization of the precision Q.

    Args:
        factor: Cholesky factorization of the precision
        mean: mean vector
        rng: random stream owned by the caller

    Returns:
        mean + P^T L^-T eps with eps standard normal
    """
    mean = np.asarray(mean, dtype=float)
    if mean.shape != (factor.dimension,):
        raise DimensionMismatch(
            f"Mean of shape {mean.shape} does not match dimension {factor.dimension}."
        )
    return mean + factor.solve_lt(rng.standard_normal(factor.dimension))
