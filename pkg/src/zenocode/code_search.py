"""Search for code subspaces on which a set of error generators acts orthogonally.

A candidate code of ``I`` codewords in ``C^N`` is held as an ``(I, N)`` array
whose rows are the codewords; flattening it row-major gives the stacked
supervector of length ``N * I``. Every code condition is a quadratic form
``<C|S_k|C>`` with a block supermatrix ``S_k``:

* ``<g_r|g_c> = 0`` for ``r < c`` (identity block at ``(r, c)``),
* ``<g_r|E_m|g_c> = 0`` for ``r <= c`` (``E_m`` block at ``(r, c)``).

The search iterates: solve a real linear system for the multipliers that
minimise ``||C + sum_k lambda_k S_k C||^2``, step along ``sum_k lambda_k S_k C``
and renormalize every codeword.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .quantum_core import ValidationError, as_matrix, check_hermitian

logger = logging.getLogger(__name__)

RANK_TOL = 1e-10


class SearchFailure(RuntimeError):
    """The code search exhausted its iteration and restart budget."""

    def __init__(self, message, best_residual, best_codewords=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.best_codewords = best_codewords


@dataclass(frozen=True)
class Placement:
    row: int
    col: int
    content: str  # "identity" or "error"
    error_index: int | None = None


@dataclass
class SuperMatrixSet:
    """The block supermatrices encoding the code conditions.

    ``matrices`` has shape ``(E, N*I, N*I)``; the first ``n_orthonormality``
    entries are the identity-block ones.
    """

    N: int
    I: int
    M: int
    matrices: np.ndarray
    block_map: list[Placement]

    @property
    def E(self) -> int:
        return len(self.block_map)

    @property
    def n_orthonormality(self) -> int:
        return sum(1 for p in self.block_map if p.content == "identity")

    def error_only(self) -> "SuperMatrixSet":
        keep = [k for k, p in enumerate(self.block_map) if p.content == "error"]
        return SuperMatrixSet(self.N, self.I, self.M, self.matrices[keep],
                              [self.block_map[k] for k in keep])


@dataclass
class SearchParams:
    max_iterations: int = 100_000
    target_residual: float = 1e-10
    step_fraction: float = 0.5
    restart_limit: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.step_fraction <= 1:
            raise ValidationError("step_fraction must lie in (0, 1]")
        if self.target_residual <= 0:
            raise ValidationError("target_residual must be positive")


@dataclass
class CodeBasis:
    """Codewords as the rows of an ``(I, N)`` array plus residual diagnostics."""

    codewords: np.ndarray
    residuals: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.codewords.shape[1]

    @property
    def I(self) -> int:
        return self.codewords.shape[0]

    def columns(self) -> np.ndarray:
        """Codewords as columns of an ``(N, I)`` matrix."""
        return self.codewords.T

    def gram(self) -> np.ndarray:
        return self.codewords.conj() @ self.codewords.T


def hamming_bound_check(A: int, M: int) -> bool:
    """Necessary dimension condition ``A - 1 >= M`` for ``M`` error generators."""
    if A < 1 or M < 0:
        raise ValidationError("need A >= 1 and M >= 0")
    return A - 1 >= M


def n_supermatrices(I: int, M: int) -> int:
    return I * (I - 1) // 2 + M * I * (I + 1) // 2


def _error_matrices(errors) -> list[np.ndarray]:
    mats = [check_hermitian(e) for e in errors]
    dims = {m.shape[0] for m in mats}
    if len(dims) > 1:
        raise ValidationError(f"error generators have mismatched dimensions {sorted(dims)}")
    return mats


def build_supermatrices(errors, I: int, N: int | None = None) -> SuperMatrixSet:
    mats = _error_matrices(errors)
    if I < 1:
        raise ValidationError("I must be >= 1")
    if mats:
        N = mats[0].shape[0]
    elif N is None:
        raise ValidationError("N is required when the error set is empty")
    placements = [Placement(r, c, "identity") for r in range(I) for c in range(r + 1, I)]
    placements += [
        Placement(r, c, "error", m)
        for m in range(len(mats))
        for r in range(I)
        for c in range(r, I)
    ]
    out = np.zeros((len(placements), N * I, N * I), dtype=complex)
    eye = np.eye(N)
    for k, p in enumerate(placements):
        block = eye if p.content == "identity" else mats[p.error_index]
        out[k, p.row * N:(p.row + 1) * N, p.col * N:(p.col + 1) * N] = block
    return SuperMatrixSet(N, I, len(mats), out, placements)


def _flat(C) -> np.ndarray:
    return np.asarray(C, dtype=complex).ravel()


def condition_residuals(C, S: SuperMatrixSet) -> tuple[np.ndarray, float]:
    """Values ``<C|S_k|C>`` for every supermatrix and their total squared modulus."""
    c = _flat(C)
    if c.size != S.N * S.I:
        raise ValidationError(f"supervector has length {c.size}, expected {S.N * S.I}")
    per_k = np.einsum("i,kij,j->k", c.conj(), S.matrices, c)
    return per_k, float(np.sum(np.abs(per_k) ** 2))


def lambda_system(C, S: SuperMatrixSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Assemble the real ``2E x 2E`` system ``K . Lambda = D``.

    Returns ``(K, D, SC)`` where ``SC[k] = S_k C``.
    """
    c = _flat(C)
    SC = S.matrices @ c
    gram = SC.conj() @ SC.T  # <C|S_i^dag S_j|C>
    d = SC @ c.conj()  # <C|S_k|C>
    K = np.block([[gram.real, -gram.imag], [gram.imag, gram.real]])
    D = np.concatenate([-d.real, d.imag])
    return K, D, SC


def solve_lambda_system(C, S: SuperMatrixSet, return_info: bool = False):
    """Multipliers ``lambda_k = alpha_k + i beta_k`` minimising ``||C + sum lambda_k S_k C||^2``.

    Singular systems get the minimum-norm least-squares solution.
    """
    K, D, SC = lambda_system(C, S)
    E = S.E
    sol, _, rank, _ = np.linalg.lstsq(K, D, rcond=RANK_TOL)
    lam = sol[:E] + 1j * sol[E:]
    if return_info:
        return lam, {"rank": int(rank), "singular": int(rank) < 2 * E, "SC": SC}
    return lam


def search_direction(C, S: SuperMatrixSet) -> np.ndarray:
    """``Delta C = sum_k lambda_k S_k C`` as a flat supervector."""
    lam, info = solve_lambda_system(C, S, return_info=True)
    return lam @ info["SC"]


def normalize_components(C, I: int, tol: float = 1e-300) -> np.ndarray | None:
    """Scale each codeword to unit norm; ``None`` if a component vanished."""
    blocks = np.asarray(C, dtype=complex).reshape(I, -1)
    norms = np.linalg.norm(blocks, axis=1)
    if np.any(norms <= tol) or not np.all(np.isfinite(norms)):
        return None
    return blocks / norms[:, None]


def random_supervector(rng: np.random.Generator, I: int, N: int) -> np.ndarray:
    z = rng.standard_normal((I, N)) + 1j * rng.standard_normal((I, N))
    return z


@dataclass
class SearchResult:
    codewords: np.ndarray
    converged: bool
    iterations: int
    residual: float
    initial_residual: float
    restarts: int
    history: list[float] = field(default_factory=list, repr=False)


def iterate_code_search(C0, S: SuperMatrixSet, params: SearchParams | None = None) -> SearchResult:
    """Run the multiplier iteration from ``C0`` until every condition is small.

    Convergence needs both the total residual and the largest single
    ``|<C|S_k|C>|`` below ``target_residual``.

    ``iterations`` counts completed update steps across all restarts. Stops
    unconverged at ``max_iterations`` (returning the best iterate seen); raises
    :class:`SearchFailure` if a vanished codeword forces more than
    ``params.restart_limit`` restarts.
    """
    p = params or SearchParams()
    rng = np.random.default_rng(p.seed)
    C = normalize_components(C0, S.I)
    if C is None:
        raise ValidationError("initial supervector has a zero component")
    per_k, res = condition_residuals(C, S)
    initial = res
    best = (res, C)
    history = [res]
    restarts = 0
    it = 0
    # the total is a sum of squares; also bound each condition so the code
    # passes element-wise checks at the same tolerance
    while res >= p.target_residual or np.max(np.abs(per_k), initial=0.0) >= p.target_residual:
        if it >= p.max_iterations:
            return SearchResult(best[1], False, it, best[0], initial, restarts, history)
        dC = search_direction(C, S)
        C_new = normalize_components(_flat(C) + p.step_fraction * dC, S.I)
        it += 1
        if C_new is None:
            restarts += 1
            if restarts > p.restart_limit:
                raise SearchFailure(
                    f"restart limit {p.restart_limit} exhausted (best residual {best[0]:.3e})",
                    best[0], best[1],
                )
            logger.info("component vanished at iteration %d; restarting", it)
            C_new = normalize_components(random_supervector(rng, S.I, S.N), S.I)
        C = C_new
        per_k, res = condition_residuals(C, S)
        history.append(res)
        if res < best[0]:
            best = (res, C)
    return SearchResult(C, True, it, res, initial, restarts, history)


def check_generalized_condition(codewords, errors, tol: float = 1e-8) -> dict:
    """Test ``<g_t|E_m|g_s> = delta_ts xi_m`` for every error generator.

    ``codewords`` is an ``(I, N)`` array (rows) or a :class:`CodeBasis`.
    Returns ``xi`` (mean diagonal per error, ``None`` where the diagonal is not
    constant), the per-error deviations, their maximum and ``satisfied``.
    """
    G = codewords.codewords if isinstance(codewords, CodeBasis) else np.asarray(codewords, complex)
    I = G.shape[0]
    gram_dev = float(np.max(np.abs(G.conj() @ G.T - np.eye(I))))
    if gram_dev > 1e-8:
        raise ValidationError(f"code basis is not orthonormal (max deviation {gram_dev:.3e})")
    xi, dev = [], []
    for e in _error_matrices(errors):
        block = G.conj() @ e @ G.T
        diag = np.real(np.diag(block))
        x = float(np.mean(diag))
        d = float(np.max(np.abs(block - x * np.eye(I))))
        dev.append(d)
        xi.append(x if d < tol else None)
    max_dev = max(dev) if dev else 0.0
    return {"xi": xi, "deviation": dev, "max_deviation": max_dev, "satisfied": max_dev < tol}


def max_error_element(codewords, errors) -> float:
    """``max |<g_t|E_m|g_s>|`` over all codeword pairs and errors."""
    G = np.asarray(codewords, complex)
    return max((float(np.max(np.abs(G.conj() @ e @ G.T))) for e in _error_matrices(errors)),
               default=0.0)


def find_code(errors, I: int, params: SearchParams | None = None, C0=None) -> CodeBasis:
    """Seeded end-to-end code search returning a validated :class:`CodeBasis`."""
    p = params or SearchParams()
    mats = _error_matrices(errors)
    if not mats:
        raise ValidationError("error set is empty")
    N = mats[0].shape[0]
    if N % I == 0 and not hamming_bound_check(N // I, len(mats)):
        warnings.warn(
            f"Hamming bound violated: A - 1 = {N // I - 1} < M = {len(mats)}",
            stacklevel=2,
        )
    S = build_supermatrices(mats, I)
    if C0 is None:
        C0 = random_supervector(np.random.default_rng([p.seed, 1]), I, N)
    result = iterate_code_search(C0, S, p)
    if not result.converged:
        raise SearchFailure(
            f"no convergence after {result.iterations} iterations "
            f"(best residual {result.residual:.3e})",
            result.residual, result.codewords,
        )
    G = result.codewords
    residuals = {
        "total": result.residual,
        "orthonormality": float(np.max(np.abs(G.conj() @ G.T - np.eye(I)))),
        "error_orthogonality": max_error_element(G, mats),
        "initial_total": result.initial_residual,
        "iterations": result.iterations,
        "restarts": result.restarts,
    }
    return CodeBasis(G, residuals)


class CodeSearch(BaseEstimator):
    """Estimator wrapper around :func:`find_code`.

    ``fit(errors)`` takes a sequence of ``N x N`` Hermitian generators (arrays or
    :class:`HermitianOperator`). After fitting, ``codewords_`` holds the code as
    an ``(I, N)`` array and ``transform`` maps information-space amplitudes
    ``(n_samples, I)`` to code-space states ``(n_samples, N)``.
    """

    def __init__(self, n_codewords=2, max_iterations=100_000, target_residual=1e-10,
                 step_fraction=0.5, restart_limit=10, random_state=0):
        self.n_codewords = n_codewords
        self.max_iterations = max_iterations
        self.target_residual = target_residual
        self.step_fraction = step_fraction
        self.restart_limit = restart_limit
        self.random_state = random_state

    def _params(self) -> SearchParams:
        return SearchParams(self.max_iterations, self.target_residual, self.step_fraction,
                            self.restart_limit, int(self.random_state or 0))

    def fit(self, X, y=None):
        errors = [as_matrix(e) for e in X]
        basis = find_code(errors, self.n_codewords, self._params())
        self.code_ = basis
        self.codewords_ = basis.codewords
        self.residual_ = basis.residuals["total"]
        self.n_iter_ = basis.residuals["iterations"]
        self.n_features_in_ = basis.N
        return self

    def transform(self, X):
        check_is_fitted(self, "codewords_")
        amps = np.atleast_2d(np.asarray(X, dtype=complex))
        if amps.shape[1] != self.n_codewords:
            raise ValidationError(
                f"expected {self.n_codewords} information amplitudes, got {amps.shape[1]}"
            )
        return amps @ self.codewords_

    def score(self, X, y=None):
        """Negative total residual of the fitted code against the error set ``X``."""
        check_is_fitted(self, "codewords_")
        S = build_supermatrices([as_matrix(e) for e in X], self.n_codewords)
        return -condition_residuals(self.codewords_, S)[1]
