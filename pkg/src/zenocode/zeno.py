"""Protection cycle simulation: code, let errors act for a time T, decode, project.

States live in an N-dimensional space. The information subspace is the range of
``projector``; ``coder`` carries it onto the code and ``decoder`` brings it back.
Two propagation modes are available for the error interval:

* ``first_order``: ``I - i sum_m eps_m E_m`` (not unitary; the defect is O(T^2))
* ``exact_piecewise``: time-ordered product of ``exp(-i H(tau_j) dtau)``
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .quantum_core import (
    HermitianOperator,
    ValidationError,
    as_matrix,
    check_hermitian,
    matrix_exponential_hermitian,
    tensor_product,
)

logger = logging.getLogger(__name__)

SIGNAL_KINDS = ("constant", "sinusoid", "filtered_noise")
MODES = ("first_order", "exact_piecewise")
DEGENERATE_P = 1e-15
DEFAULT_N_STEPS = 64
FIRST_ORDER_LIMIT = 0.1


class DegenerateMeasurement(RuntimeError):
    """The projection onto the information subspace has (numerically) zero probability."""


@dataclass(frozen=True)
class Signal:
    """Time profile ``f(tau)`` of one error channel, in units of 1/time.

    ``constant``: ``a``; ``sinusoid``: ``a sin(2 pi freq tau + phase)``;
    ``filtered_noise``: ``a x(tau)`` with ``x`` a unit-variance
    Ornstein-Uhlenbeck process of correlation time ``corr_time``.
    """

    kind: str = "constant"
    amplitude: float = 0.0
    freq: float = 0.0
    phase: float = 0.0
    corr_time: float = 1.0

    def __post_init__(self):
        if self.kind not in SIGNAL_KINDS:
            raise ValidationError(f"unknown signal kind {self.kind!r}; expected one of {SIGNAL_KINDS}")
        for name in ("amplitude", "freq", "phase", "corr_time"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"signal {name} must be finite")
        if self.kind == "filtered_noise" and self.corr_time <= 0:
            raise ValidationError("filtered_noise needs corr_time > 0")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "amplitude": self.amplitude}
        if self.kind == "sinusoid":
            d.update(freq=self.freq, phase=self.phase)
        elif self.kind == "filtered_noise":
            d["corr_time"] = self.corr_time
        return d


class ErrorModel:
    """Error Hamiltonian ``H(tau) = sum_m f_m(tau) E_m`` with seeded signal profiles."""

    def __init__(self, generators, signals, seed: int = 0):
        gens = [g if isinstance(g, HermitianOperator) else HermitianOperator(as_matrix(g))
                for g in generators]
        if not gens:
            raise ValidationError("error model needs at least one generator")
        dims = {g.dim for g in gens}
        if len(dims) != 1:
            raise ValidationError(f"error generators differ in dimension: {sorted(dims)}")
        signals = [s if isinstance(s, Signal) else Signal(**s) for s in signals]
        if len(signals) != len(gens):
            raise ValidationError(f"{len(gens)} generators but {len(signals)} signals")
        self.generators = gens
        self.signals = signals
        self.seed = int(seed)
        self._stack = np.stack([g.matrix for g in gens])

    @classmethod
    def constant(cls, generators, amplitudes, seed: int = 0) -> "ErrorModel":
        return cls(generators, [Signal("constant", float(a)) for a in np.ravel(amplitudes)], seed)

    @property
    def dim(self) -> int:
        return self.generators[0].dim

    @property
    def M(self) -> int:
        return len(self.generators)

    @property
    def is_static(self) -> bool:
        return all(s.kind == "constant" for s in self.signals)

    def scaled(self, factor: float) -> "ErrorModel":
        sig = [Signal(s.kind, s.amplitude * factor, s.freq, s.phase, s.corr_time) for s in self.signals]
        return ErrorModel(self.generators, sig, self.seed)

    def hamiltonian(self, f: np.ndarray) -> np.ndarray:
        return np.tensordot(np.asarray(f, dtype=float), self._stack, axes=1)


@dataclass
class EpsilonSample:
    times: np.ndarray  # midpoints, shape (n_steps,)
    f: np.ndarray  # (M, n_steps)
    epsilon: np.ndarray  # (M,)
    dt: float


def sample_epsilon(model: ErrorModel, T: float, n_steps: int = DEFAULT_N_STEPS, cycle: int = 0) -> EpsilonSample:
    """Discretize each ``f_m`` at the ``n_steps`` interval midpoints and integrate.

    Noise channels draw from ``default_rng([seed, cycle, m])`` so a cycle's
    realization does not depend on how many cycles ran before it.
    """
    if not T > 0:
        raise ValidationError("T must be positive")
    if n_steps < 1:
        raise ValidationError("n_steps must be >= 1")
    dt = T / n_steps
    tau = (np.arange(n_steps) + 0.5) * dt
    f = np.zeros((model.M, n_steps))
    for m, s in enumerate(model.signals):
        if s.kind == "constant":
            f[m] = s.amplitude
        elif s.kind == "sinusoid":
            f[m] = s.amplitude * np.sin(2 * np.pi * s.freq * tau + s.phase)
        else:
            rng = np.random.default_rng([model.seed, cycle, m])
            decay = math.exp(-dt / s.corr_time)
            kick = math.sqrt(1 - decay**2)
            z = rng.standard_normal(n_steps)
            x = np.empty(n_steps)
            x[0] = z[0]
            for j in range(1, n_steps):
                x[j] = decay * x[j - 1] + kick * z[j]
            f[m] = s.amplitude * x
    return EpsilonSample(tau, f, f.sum(axis=1) * dt, dt)


def error_propagator(model: ErrorModel, T: float, mode: str = "exact_piecewise",
                     n_steps: int = DEFAULT_N_STEPS, cycle: int = 0) -> np.ndarray:
    if mode not in MODES:
        raise ValidationError(f"unknown propagation mode {mode!r}; expected one of {MODES}")
    sample = sample_epsilon(model, T, n_steps, cycle)
    N = model.dim
    if mode == "first_order":
        size = max(abs(e) * np.linalg.norm(g.matrix, 2) for e, g in zip(sample.epsilon, model.generators))
        if size >= FIRST_ORDER_LIMIT:
            warnings.warn(f"first-order propagation outside its regime: max |eps|*||E|| = {size:.3g}",
                          RuntimeWarning, stacklevel=2)
        return np.eye(N) - 1j * model.hamiltonian(sample.epsilon)
    if not np.any(sample.f):
        return np.eye(N, dtype=complex)
    if model.is_static:
        return matrix_exponential_hermitian(model.hamiltonian(sample.epsilon))
    U = np.eye(N, dtype=complex)
    for j in range(n_steps):
        U = matrix_exponential_hermitian(model.hamiltonian(sample.f[:, j]), sample.dt) @ U
    return U


def projector_onto(vectors) -> np.ndarray:
    """Orthogonal projector onto the span of the given columns (N, k)."""
    V = np.asarray(vectors, dtype=complex)
    if V.ndim == 1:
        V = V[:, None]
    Q, _ = np.linalg.qr(V)
    return Q @ Q.conj().T


def _check_projector(P: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    P = check_hermitian(as_matrix(P))
    if np.linalg.norm(P @ P - P) > tol * max(1.0, np.linalg.norm(P)):
        raise ValidationError("projector is not idempotent")
    return P


def _is_density(state: np.ndarray) -> bool:
    return state.ndim == 2


def fidelity(reference: np.ndarray, state: np.ndarray) -> float:
    """Squared overlap for pure states, Uhlmann fidelity when either side is a density matrix."""
    if not _is_density(reference) and not _is_density(state):
        return float(abs(np.vdot(reference, state)) ** 2)
    if not _is_density(reference):
        return float(np.real(reference.conj() @ state @ reference))
    if not _is_density(state):
        return float(np.real(state.conj() @ reference @ state))
    s = scipy.linalg.sqrtm(reference)
    inner = scipy.linalg.sqrtm(s @ state @ s)
    return float(np.real(np.trace(inner)) ** 2)


@dataclass
class ZenoCycleResult:
    pre_state: np.ndarray
    post_state: np.ndarray
    success_probability: float
    epsilon: np.ndarray


def zeno_cycle(state, coder, decoder, model: ErrorModel, T: float, projector,
               mode: str = "exact_piecewise", n_steps: int = DEFAULT_N_STEPS, cycle: int = 0,
               project: bool = True, _checked: bool = False) -> ZenoCycleResult:
    """One code / error / decode / measure cycle, post-selected on success.

    ``state`` is a vector (trajectory mode) or a density matrix. Without
    ``project`` the decoded state is only renormalized and p is reported as 1.
    """
    state = np.asarray(state, dtype=complex)
    C, D = np.asarray(coder, dtype=complex), np.asarray(decoder, dtype=complex)
    if not _checked:
        if np.linalg.norm(D @ C - np.eye(C.shape[0])) > 1e-8:
            raise ValidationError("decoder does not invert coder within 1e-8")
        projector = _check_projector(projector)
        if C.shape[0] != model.dim or state.shape[0] != model.dim:
            raise ValidationError(f"dimension mismatch: state {state.shape[0]}, coder {C.shape[0]}, "
                                  f"errors {model.dim}")
    eps = sample_epsilon(model, T, n_steps, cycle).epsilon
    K = D @ error_propagator(model, T, mode, n_steps, cycle) @ C
    if _is_density(state):
        rho = K @ state @ K.conj().T
        norm = float(np.real(np.trace(rho)))
        if project:
            rho_p = projector @ rho @ projector
            p = float(np.real(np.trace(rho_p))) / norm
            if p < DEGENERATE_P:
                raise DegenerateMeasurement(f"success probability {p:.3g} below {DEGENERATE_P}")
            rho = rho_p
        else:
            p = 1.0
        post = rho / np.real(np.trace(rho))
        post = (post + post.conj().T) / 2
    else:
        psi = K @ state
        norm = float(np.real(np.vdot(psi, psi)))
        if project:
            psi_p = projector @ psi
            p = float(np.real(np.vdot(psi_p, psi_p))) / norm
            if p < DEGENERATE_P:
                raise DegenerateMeasurement(f"success probability {p:.3g} below {DEGENERATE_P}")
            psi = psi_p
        else:
            p = 1.0
        post = psi / np.linalg.norm(psi)
    return ZenoCycleResult(state, post, min(max(p, 0.0), 1.0), eps)


def effective_hamiltonian(coder, errors, alpha, info_dim: int | None = None) -> list[HermitianOperator]:
    """Per-error information-space operators ``<alpha|C^dag E_m C|alpha>``.

    The space is information ⊗ ancilla with the ancilla index fast; ``alpha``
    is the ancilla reference state.
    """
    alpha = np.asarray(alpha, dtype=complex).ravel()
    alpha = alpha / np.linalg.norm(alpha)
    C = np.asarray(coder, dtype=complex)
    N = C.shape[0]
    A = alpha.size
    if info_dim is None:
        if N % A:
            raise ValidationError(f"coder dimension {N} is not a multiple of ancilla dimension {A}")
        info_dim = N // A
    if info_dim * A != N:
        raise ValidationError(f"info_dim {info_dim} x ancilla dim {A} != coder dimension {N}")
    V = tensor_product(np.eye(info_dim), alpha[:, None])
    out = []
    for E in errors:
        Em = E.matrix if isinstance(E, HermitianOperator) else as_matrix(E)
        h = V.conj().T @ C.conj().T @ Em @ C @ V
        out.append(HermitianOperator((h + h.conj().T) / 2, getattr(E, "label", "")))
    return out


@dataclass
class FidelityTrace:
    cycle: np.ndarray
    fidelity: np.ndarray
    cum_success: np.ndarray
    final_state: np.ndarray
    density: bool = False
    state_deviation: np.ndarray | None = None  # density mode: ||rho_n - rho_0||_F

    @property
    def final_fidelity(self) -> float:
        return float(self.fidelity[-1])

    @property
    def final_success(self) -> float:
        return float(self.cum_success[-1])

    def rows(self):
        for c, f, s in zip(self.cycle, self.fidelity, self.cum_success):
            yield int(c), float(f), float(s)


def run_protection(initial, cycles: int, T: float, coder, decoder, model: ErrorModel, projector,
                   mode: str = "exact_piecewise", n_steps: int = DEFAULT_N_STEPS,
                   project: bool = True) -> FidelityTrace:
    """Repeat :func:`zeno_cycle` and record fidelity against ``initial`` after every cycle."""
    if cycles < 0:
        raise ValidationError("cycles must be >= 0")
    psi0 = np.asarray(initial, dtype=complex)
    density = _is_density(psi0)
    if density:
        if abs(np.trace(psi0) - 1) > 1e-10:
            raise ValidationError("initial density matrix must have unit trace")
    else:
        psi0 = psi0 / np.linalg.norm(psi0)
    C, D = np.asarray(coder, dtype=complex), np.asarray(decoder, dtype=complex)
    if np.linalg.norm(D @ C - np.eye(C.shape[0])) > 1e-8:
        raise ValidationError("decoder does not invert coder within 1e-8")
    P = _check_projector(projector)
    if not (psi0.shape[0] == C.shape[0] == P.shape[0] == model.dim):
        raise ValidationError(f"dimension mismatch: state {psi0.shape[0]}, coder {C.shape[0]}, "
                              f"projector {P.shape[0]}, errors {model.dim}")
    fid, cum, dev = [1.0], [1.0], [0.0]
    state = psi0
    for k in range(cycles):
        res = zeno_cycle(state, C, D, model, T, P, mode, n_steps, cycle=k, project=project, _checked=True)
        state = res.post_state
        fid.append(fidelity(psi0, state))
        cum.append(cum[-1] * res.success_probability)
        if density:
            dev.append(float(np.linalg.norm(state - psi0)))
    return FidelityTrace(np.arange(cycles + 1), np.array(fid), np.array(cum), state, density,
                         np.array(dev) if density else None)


@dataclass
class ScalingFit:
    slope: float
    intercept: float
    T: np.ndarray
    values: np.ndarray
    used: np.ndarray
    metric: str
    sufficient: bool

    @property
    def n_used(self) -> int:
        return int(self.used.sum())


def per_cycle_loss(trace: FidelityTrace, metric: str = "failure") -> float:
    """Geometric-mean per-cycle failure probability (or infidelity) of a trace."""
    n = len(trace.cycle) - 1
    if n < 1:
        raise ValidationError("trace has no cycles")
    if metric == "failure":
        return float(-np.expm1(np.log(trace.final_success) / n))
    if metric == "infidelity":
        return float(-np.expm1(np.log(max(trace.final_fidelity, 1e-300)) / n))
    raise ValidationError(f"unknown metric {metric!r}")


def infidelity_scaling(T_list, total_time: float, initial, coder, decoder, model: ErrorModel, projector,
                       mode: str = "exact_piecewise", n_steps: int = DEFAULT_N_STEPS,
                       metric: str = "failure", noise_floor: float = 1e-15) -> ScalingFit:
    """Fit ``log(loss per cycle)`` against ``log T`` at fixed total protected time.

    Each T runs ``round(total_time / T)`` cycles (at least one). Losses at or
    below ``noise_floor`` are excluded with a warning; fewer than two usable
    points gives ``sufficient=False`` and a NaN slope.
    """
    T = np.asarray(T_list, dtype=float)
    if T.size < 4:
        raise ValidationError("need at least 4 values of T")
    if np.any(T <= 0):
        raise ValidationError("T values must be positive")
    if T.max() / T.min() < 10 * (1 - 1e-12):
        raise ValidationError("T values must span at least one decade")
    values = np.empty_like(T)
    for i, t in enumerate(T):
        cycles = max(1, int(round(total_time / t)))
        tr = run_protection(initial, cycles, t, coder, decoder, model, projector, mode, n_steps)
        values[i] = per_cycle_loss(tr, metric)
    used = values > noise_floor
    if not used.all():
        warnings.warn(f"{int((~used).sum())} of {T.size} losses at or below the noise floor were excluded",
                      RuntimeWarning, stacklevel=2)
    if used.sum() < 2:
        return ScalingFit(float("nan"), float("nan"), T, values, used, metric, False)
    slope, intercept = np.polyfit(np.log(T[used]), np.log(values[used]), 1)
    return ScalingFit(float(slope), float(intercept), T, values, used, metric, bool(used.sum() >= 4))
