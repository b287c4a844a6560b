"""Non-holonomic synthesis of the coding unitary from two alternating Hamiltonians.

A timing vector ``t = (t_1, ..., t_n)`` drives the system with ``H_a`` during
odd-numbered pulses and ``H_b`` during even-numbered ones::

    U(t) = ... exp(-i H_b t_2) exp(-i H_a t_1)

The solver looks for timings that make ``U(t)`` carry the information basis onto
a code: ``<g_r|U^dag E_m U|g_c> = 0`` for all ``r <= c`` and all errors.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .code_search import SuperMatrixSet, build_supermatrices, search_direction
from .quantum_core import HermitianOperator, ValidationError, as_matrix, check_hermitian

logger = logging.getLogger(__name__)

DEFAULT_ALPHA_GRID = (1.0, 0.5, 0.25, 0.1, 0.05, 0.01)
ROW_RANK_TOL = 1e-10


class ControlFailure(RuntimeError):
    """The timing solver ran out of steps before reaching ``target_G``."""

    def __init__(self, message, best_timings, best_G, trace=None):
        super().__init__(message)
        self.best_timings = best_timings
        self.best_G = best_G
        self.trace = trace or []


class Pulse(NamedTuple):
    hamiltonian: str  # "A" or "B"
    sign: int
    duration: float


class ControlPair:
    """Two control Hamiltonians of equal dimension, with cached eigendecompositions."""

    def __init__(self, Ha, Hb, time_unit: str = ""):
        a, b = check_hermitian(as_matrix(Ha)), check_hermitian(as_matrix(Hb))
        if a.shape != b.shape:
            raise ValidationError(f"control Hamiltonians differ in shape: {a.shape} vs {b.shape}")
        self.Ha = HermitianOperator(a, getattr(Ha, "label", "") or "A")
        self.Hb = HermitianOperator(b, getattr(Hb, "label", "") or "B")
        self.time_unit = time_unit
        self._eig = {"A": np.linalg.eigh(a), "B": np.linalg.eigh(b)}

    @property
    def dim(self) -> int:
        return self.Ha.dim

    def hamiltonian(self, which: str) -> np.ndarray:
        return self.Ha.matrix if which == "A" else self.Hb.matrix

    def pulse_unitary(self, which: str, duration: float, sign: int = 1) -> np.ndarray:
        w, v = self._eig[which]
        return (v * np.exp(-1j * sign * w * duration)) @ v.conj().T


@dataclass
class ControlSolveParams:
    delta_n: int = 2
    t_min: float = 2.0
    t_max: float = 8.0
    alpha_grid: tuple = DEFAULT_ALPHA_GRID
    target_G: float = 1e-8
    max_steps: int = 2000
    seed: int = 0
    step_fraction: float = 0.5

    def __post_init__(self):
        if self.t_min <= 0 or self.t_max <= self.t_min:
            raise ValidationError("need 0 < t_min < t_max")
        if not self.alpha_grid:
            raise ValidationError("alpha_grid must not be empty")
        if any(not 0 <= a <= 1 for a in self.alpha_grid):
            raise ValidationError("alpha_grid values must lie in [0, 1]")
        if self.delta_n < 0:
            raise ValidationError("delta_n must be nonnegative")


def coding_schedule(t) -> list[Pulse]:
    """A-first alternating schedule for the timing vector ``t``."""
    return [Pulse("A" if j % 2 == 0 else "B", 1, float(d)) for j, d in enumerate(np.ravel(t))]


def decoding_sequence(t) -> list[Pulse]:
    """Reverse-order schedule inverting :func:`coding_schedule` pulse by pulse.

    Pulse ``j`` of the code (Hamiltonian ``H_j``, duration ``t_j``) is undone by
    ``-H_j`` for ``t_j``; the last coding pulse is undone first.
    """
    return [Pulse(p.hamiltonian, -p.sign, p.duration) for p in reversed(coding_schedule(t))]


def schedule_propagator(schedule, pair: ControlPair) -> np.ndarray:
    U = np.eye(pair.dim, dtype=complex)
    for p in schedule:
        U = pair.pulse_unitary(p.hamiltonian, p.duration, p.sign) @ U
    return U


def propagator(t, pair: ControlPair) -> np.ndarray:
    """``U(t)`` for the A-first alternating sequence; accepts timings or a schedule."""
    if len(t) and isinstance(t[0], Pulse):
        return schedule_propagator(t, pair)
    t = np.ravel(np.asarray(t, dtype=float))
    if t.size < 1:
        raise ValidationError("need at least one pulse")
    return schedule_propagator(coding_schedule(t), pair)


def _error_supermatrices(S: SuperMatrixSet) -> SuperMatrixSet:
    return S.error_only() if S.n_orthonormality else S


def _lift(U: np.ndarray, C) -> np.ndarray:
    """Block-diagonal repetition of ``U`` applied to the supervector ``C``."""
    blocks = np.asarray(C, dtype=complex).reshape(-1, U.shape[0])
    return (blocks @ U.T).ravel()


def constraint_values(t, pair: ControlPair, C, S: SuperMatrixSet) -> np.ndarray:
    S = _error_supermatrices(S)
    phi = _lift(propagator(t, pair), C)
    return np.einsum("i,kij,j->k", phi.conj(), S.matrices, phi)


def test_function_G(t, pair: ControlPair, C, S: SuperMatrixSet) -> float:
    """``G(t) = sum_k |<C|U^dag S_k U|C>|^2`` over the error supermatrices only."""
    return float(np.sum(np.abs(constraint_values(t, pair, C, S)) ** 2))


test_function_G.__test__ = False  # not a pytest test despite the name


def constraint_jacobian(t, pair: ControlPair, C, S: SuperMatrixSet) -> tuple[np.ndarray, np.ndarray]:
    """Exact ``d<C|U^dag S_k U|C>/dt_j`` for all ``k, j``; also returns ``U C``.

    With ``U = P_n ... P_1`` and ``L_j = P_n ... P_{j+1}``, the derivative of
    ``U`` along ``t_j`` is ``-i A_j U`` with ``A_j = L_j H_j L_j^dag``, so the
    constraint derivative is ``i <phi|[A_j, S_k]|phi>`` at ``phi = U C``.
    """
    S = _error_supermatrices(S)
    sched = coding_schedule(t)
    units = [pair.pulse_unitary(p.hamiltonian, p.duration) for p in sched]
    U = np.eye(pair.dim, dtype=complex)
    for P in units:
        U = P @ U
    phi = _lift(U, C)
    S_phi = S.matrices @ phi
    jac = np.zeros((S.E, len(sched)), dtype=complex)
    L = np.eye(pair.dim, dtype=complex)
    for j in range(len(sched) - 1, -1, -1):
        A = L @ pair.hamiltonian(sched[j].hamiltonian) @ L.conj().T
        A_phi = _lift(A, phi)
        jac[:, j] = 1j * (S_phi @ A_phi.conj() - (S.matrices @ A_phi) @ phi.conj())
        L = L @ units[j]
    return jac, phi


def _real_rows(S: SuperMatrixSet):
    """Row selectors: real part of every constraint, imaginary part of off-diagonal ones.

    Diagonal placements carry Hermitian blocks, so their imaginary rows are 0 = 0.
    """
    sel = []
    for k, p in enumerate(S.block_map):
        sel.append((k, "re"))
        if p.row != p.col:
            sel.append((k, "im"))
    return sel


def _split(z: np.ndarray, sel) -> np.ndarray:
    return np.array([z[k].real if part == "re" else z[k].imag for k, part in sel])


def control_step_system(t, free_set, pair: ControlPair, C, S: SuperMatrixSet, dC=None,
                        step_fraction: float = 0.5) -> dict:
    """Linear system ``S_matrix . dt' = W`` for the free timings ``free_set``.

    ``dC`` is the code-search direction at ``C0 = U(t) C`` (computed if not
    given). ``W`` is the change of each constraint produced by the partial
    step ``C0 + step_fraction * dC``, divided by the squared norm of that
    stepped supervector. Rows follow :func:`_real_rows`.
    """
    S = _error_supermatrices(S)
    free_set = np.asarray(free_set, dtype=int)
    jac, phi = constraint_jacobian(t, pair, C, S)
    if dC is None:
        dC = search_direction(phi, S)
    stepped = phi + step_fraction * np.asarray(dC, dtype=complex).ravel()
    before = np.einsum("i,kij,j->k", phi.conj(), S.matrices, phi)
    after = np.einsum("i,kij,j->k", stepped.conj(), S.matrices, stepped)
    target = (after - before) / np.vdot(stepped, stepped).real

    sel = _real_rows(S)
    full = np.array([jac[k].real if part == "re" else jac[k].imag for k, part in sel])
    W = _split(target, sel)
    S_matrix = full[:, free_set]

    n_rows = len(sel)
    if S_matrix.size:
        _, R, _ = scipy.linalg.qr(S_matrix.T, pivoting=True, mode="economic")
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > ROW_RANK_TOL * max(diag[0], 1e-300))) if diag.size else 0
    else:
        rank = 0
    return {
        "S_matrix": S_matrix,
        "W": W,
        "rank": rank,
        "rank_deficient": rank < min(n_rows, len(free_set)),
        "jacobian": full,
    }


def solve_step(system: dict) -> np.ndarray:
    """Solve the (square) step system, least squares when it is rank deficient."""
    A, W = system["S_matrix"], system["W"]
    if not system["rank_deficient"] and A.shape[0] == A.shape[1]:
        return np.linalg.solve(A, W)
    return np.linalg.lstsq(A, W, rcond=ROW_RANK_TOL)[0]


@dataclass
class ControlResult:
    timings: np.ndarray
    G: float
    steps: int
    converged: bool
    trace: list[dict] = field(default_factory=list, repr=False)


def solve_timings(pair: ControlPair, C, errors_or_S, params: ControlSolveParams | None = None,
                  t0=None) -> ControlResult:
    """Find timings driving the information basis ``C`` (``(I, N)`` rows) onto a code.

    Each step moves the current supervector ``U(t) C`` along the code-search
    direction, translates that move into a timing increment on the current free
    set, and line-searches ``alpha`` over ``params.alpha_grid``, accepting the
    first value that lowers ``G`` and keeps every timing inside
    ``[t_min, t_max]``. When none does, the free set is redrawn.

    Raises :class:`ControlFailure` (carrying the best timings) after
    ``max_steps`` steps without reaching ``target_G``.
    """
    p = params or ControlSolveParams()
    C = np.atleast_2d(np.asarray(C, dtype=complex))
    I, N = C.shape
    if isinstance(errors_or_S, SuperMatrixSet):
        S = _error_supermatrices(errors_or_S)
    else:
        S = build_supermatrices(errors_or_S, I).error_only()
    if S.N != N or pair.dim != N:
        raise ValidationError(f"dimension mismatch: code N={N}, errors N={S.N}, pair N={pair.dim}")
    n_free = S.M * I * I
    n_c = n_free + p.delta_n
    rng = np.random.default_rng(p.seed)
    if t0 is None:
        t = rng.uniform(p.t_min, p.t_max, n_c)
    else:
        t = np.asarray(t0, dtype=float).copy()
        if t.size != n_c:
            raise ValidationError(f"t0 has {t.size} timings, expected {n_c}")
    perm_id = 0
    perm = rng.permutation(n_c)
    G = test_function_G(t, pair, C, S)
    trace = [{"step": 0, "G": G, "alpha": None, "permutation": perm_id, "accepted": True}]
    step = 0
    while G >= p.target_G:
        if step >= p.max_steps:
            raise ControlFailure(
                f"G = {G:.3e} after {step} steps (target {p.target_G:.1e})", t, G, trace
            )
        step += 1
        free = perm[:n_free]
        system = control_step_system(t, free, pair, C, S, step_fraction=p.step_fraction)
        dt = np.zeros(n_c)
        dt[free] = solve_step(system)
        accepted = None
        for alpha in p.alpha_grid:
            cand = t + alpha * dt
            if cand.min() < p.t_min or cand.max() > p.t_max:
                continue
            g = test_function_G(cand, pair, C, S)
            if g < G:
                accepted = (alpha, cand, g)
                break
        if accepted is None:
            old = set(free.tolist())
            for _ in range(100):
                perm = rng.permutation(n_c)
                if set(perm[:n_free].tolist()) != old or n_free in (0, n_c):
                    break
            perm_id += 1
            trace.append({"step": step, "G": G, "alpha": None, "permutation": perm_id,
                          "accepted": False})
            continue
        alpha, t, G = accepted
        trace.append({"step": step, "G": G, "alpha": alpha, "permutation": perm_id,
                      "accepted": True})
    return ControlResult(t, G, step, True, trace)


def bracket_generation_check(pair: ControlPair, tol: float = 1e-9) -> dict:
    """Dimension of the real Lie algebra generated by ``iH_a`` and ``iH_b``.

    Elements are tracked through their Hermitian representatives (the bracket
    of ``iX`` and ``iY`` is ``i * (i[X, Y])``), vectorized into ``R^{2N^2}`` and
    kept orthonormal. ``satisfied`` means the traceless part spans ``su(N)``;
    ``full_rank`` means the algebra is all of ``u(N)``.
    """
    n = pair.dim

    def vec(h):
        return np.concatenate([h.real.ravel(), h.imag.ravel()])

    basis: list[np.ndarray] = []
    elements: list[np.ndarray] = []

    def add(h, scale=1.0) -> np.ndarray | None:
        h = (h + h.conj().T) / 2
        nrm = np.linalg.norm(h)
        # brackets that cancel leave rounding noise, which must not be normalized up
        if nrm <= tol * scale:
            return None
        h = h / nrm
        v = vec(h)
        for _ in range(2):
            for b in basis:
                v = v - (b @ v) * b
        r = np.linalg.norm(v)
        if r <= tol:
            return None
        basis.append(v / r)
        re, im = np.split(v / r, 2)
        hm = (re + 1j * im).reshape(n, n)
        elements.append(hm)
        return hm

    gens = [pair.Ha.matrix, pair.Hb.matrix]
    frontier = [h for h in (add(g.copy()) for g in gens) if h is not None]
    while frontier and len(basis) < n * n:
        new = []
        for f in frontier:
            for g in gens:
                h = add(1j * (g @ f - f @ g), np.linalg.norm(g))
                if h is not None:
                    new.append(h)
        frontier = new

    rank = len(basis)
    if elements:
        traceless = [h - np.trace(h) / n * np.eye(n) for h in elements]
        traceless_rank = int(np.linalg.matrix_rank(np.array([vec(h) for h in traceless]),
                                                    tol=1e-8))
    else:
        traceless_rank = 0
    return {
        "rank": rank,
        "traceless_rank": traceless_rank,
        "dim": n,
        "full_rank": rank == n * n,
        "satisfied": traceless_rank == n * n - 1,
    }


class TimingSolver(BaseEstimator):
    """Estimator that learns pulse timings encoding an information basis.

    ``fit(X)`` takes the information basis as an ``(I, N)`` array of rows.
    Afterwards ``transform`` applies the coding propagator to states given as
    rows of an ``(n_samples, N)`` array and ``inverse_transform`` applies the
    reversed (decoding) schedule.
    """

    def __init__(self, control_pair=None, errors=None, delta_n=2, t_min=2.0, t_max=8.0,
                 alpha_grid=DEFAULT_ALPHA_GRID, target_G=1e-8, max_steps=2000, random_state=0):
        self.control_pair = control_pair
        self.errors = errors
        self.delta_n = delta_n
        self.t_min = t_min
        self.t_max = t_max
        self.alpha_grid = alpha_grid
        self.target_G = target_G
        self.max_steps = max_steps
        self.random_state = random_state

    def fit(self, X, y=None):
        if self.control_pair is None or self.errors is None:
            raise ValidationError("control_pair and errors must be set before fit")
        params = ControlSolveParams(self.delta_n, self.t_min, self.t_max, tuple(self.alpha_grid),
                                    self.target_G, self.max_steps, int(self.random_state or 0))
        result = solve_timings(self.control_pair, X, self.errors, params)
        self.timings_ = result.timings
        self.G_ = result.G
        self.n_iter_ = result.steps
        self.trace_ = result.trace
        self.coder_ = propagator(result.timings, self.control_pair)
        self.decoder_ = schedule_propagator(decoding_sequence(result.timings), self.control_pair)
        return self

    def transform(self, X):
        check_is_fitted(self, "coder_")
        return np.atleast_2d(np.asarray(X, dtype=complex)) @ self.coder_.T

    def inverse_transform(self, X):
        check_is_fitted(self, "decoder_")
        return np.atleast_2d(np.asarray(X, dtype=complex)) @ self.decoder_.T
