"""The 78Rb Rydberg instance: one spin qubit protected by the L = 3 orbital ancilla.

Basis: ``|L=3, M_L; S=1/2, M_S>`` with ``M_L`` descending as the slow index and
``M_S`` descending as the fast one (14 states). Hamiltonians built here are in
angular-frequency units (rad/s) unless a ``time_unit`` rescales them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.constants
from scipy.integrate import solve_ivp

from .code_search import CodeBasis
from .control import ControlPair
from .quantum_core import (
    HermitianOperator,
    ValidationError,
    angular_momentum_operators,
    clebsch_gordan,
    coupling_matrix,
)

L_ORB = 3
S_SPIN = 0.5
DIM = 14

# Bohr magneton over hbar, rad s^-1 T^-1
MU_B_ANGULAR = 2 * math.pi * scipy.constants.physical_constants["Bohr magneton in Hz/T"][0]

PAPER_B_FIELD = (7e-3, 8.2e-3, -6.8e-3)  # tesla

PAPER_TIMINGS_NS = (
    3.9763, 6.4748, 4.2274, 3.6259, 2.8717, 3.6281, 7.2263, 6.4260, 4.8070, 5.0394,
    6.5242, 4.8890, 4.2400, 7.3834, 4.8653, 5.4799, 4.5341, 4.3099, 6.2959, 3.7346,
    6.5293, 6.8586, 6.0749, 5.1213, 4.6806, 3.4985, 3.9909, 4.6701, 4.5168, 6.4702,
    4.7787, 5.3476, 3.4567, 3.8009,
)


@dataclass(frozen=True)
class Rb78Space:
    L: int = L_ORB
    S: float = S_SPIN
    labels: tuple = field(default_factory=tuple)

    @property
    def dim(self) -> int:
        return len(self.labels)

    def index(self, m_l, m_s) -> int:
        return self.labels.index((float(m_l), float(m_s)))

    def label(self, index: int) -> tuple[float, float]:
        return self.labels[index]

    def basis_vector(self, m_l, m_s) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[self.index(m_l, m_s)] = 1.0
        return v


def build_space() -> Rb78Space:
    labels = tuple(
        (float(L_ORB - i), float(S_SPIN - k))
        for i in range(2 * L_ORB + 1)
        for k in range(2)
    )
    return Rb78Space(labels=labels)


def _orbital_spin_ops():
    lo = angular_momentum_operators(L_ORB)
    so = angular_momentum_operators(S_SPIN)
    i7, i2 = np.eye(2 * L_ORB + 1), np.eye(2)
    L = [np.kron(x, i2) for x in lo.components()]
    S = [np.kron(i7, x) for x in so.components()]
    return lo, L, S


def _unit(m: np.ndarray, normalize: bool) -> np.ndarray:
    return m / np.linalg.norm(m, 2) if normalize else m


def magnetic_errors(normalize: bool = True) -> list[HermitianOperator]:
    """``L_k + 2 S_k`` for ``k = x, y, z``, scaled to unit spectral norm by default."""
    _, L, S = _orbital_spin_ops()
    return [
        HermitianOperator(_unit(L[k] + 2 * S[k], normalize), f"magnetic_{'xyz'[k]}")
        for k in range(3)
    ]


def electric_errors(normalize: bool = True) -> list[HermitianOperator]:
    """Quadratic Stark differences ``(L_k^2 - L_l^2) (x) 1`` for ``kl = xy, xz, yz``."""
    lo, _, _ = _orbital_spin_ops()
    comps = lo.components()
    out = []
    for k, l in ((0, 1), (0, 2), (1, 2)):
        orb = comps[k] @ comps[k] - comps[l] @ comps[l]
        out.append(HermitianOperator(_unit(np.kron(orb, np.eye(2)), normalize),
                                     f"electric_{'xyz'[k]}{'xyz'[l]}"))
    return out


def error_set(normalize: bool = True) -> list[HermitianOperator]:
    return magnetic_errors(normalize) + electric_errors(normalize)


def appendix_codewords() -> CodeBasis:
    """Analytic code ``|M_L=-1, M_S=+1/2>``, ``|M_L=+1, M_S=-1/2>``."""
    sp = build_space()
    G = np.array([sp.basis_vector(-1, 0.5), sp.basis_vector(1, -0.5)])
    return CodeBasis(G, {"source": "analytic"})


def target_subspace(J: float = 2.5, m_j=(-1.5, -0.5)) -> np.ndarray:
    """Rows ``|J, m_j>`` of the L = 3 manifold expanded over the product basis."""
    sp = build_space()
    rows = []
    for mj in m_j:
        v = np.zeros(sp.dim, dtype=complex)
        for idx, (ml, ms) in enumerate(sp.labels):
            v[idx] = clebsch_gordan(L_ORB, ml, S_SPIN, ms, J, mj)
        rows.append(v)
    return np.array(rows)


def total_j_squared() -> np.ndarray:
    _, L, S = _orbital_spin_ops()
    J = [L[k] + S[k] for k in range(3)]
    return sum(j @ j for j in J)


def zeeman_hamiltonian(B=PAPER_B_FIELD) -> HermitianOperator:
    """``mu_B sum_k B_k (L_k + 2 S_k)`` in rad/s (``B`` in tesla)."""
    _, L, S = _orbital_spin_ops()
    h = sum(MU_B_ANGULAR * float(b) * (L[k] + 2 * S[k]) for k, b in enumerate(B))
    return HermitianOperator(np.asarray(h, dtype=complex) + np.zeros((DIM, DIM)), "zeeman")


@dataclass(frozen=True)
class RamanFields:
    """Amplitudes (V/m) and y-phases of the two laser fields of one pulse type."""

    Ex: float
    Ey: float
    phi_y: float
    Ex_prime: float
    Ey_prime: float
    phi_y_prime: float

    def vectors(self) -> tuple[np.ndarray, np.ndarray]:
        e = np.array([self.Ex, self.Ey * np.exp(-1j * self.phi_y)])
        ep = np.array([self.Ex_prime, self.Ey_prime * np.exp(-1j * self.phi_y_prime)])
        return e, ep


PAPER_FIELDS_A = RamanFields(8.5e5, 5.2e6, 2.3, 8.5e5, 5.2e6, 2.3)
PAPER_FIELDS_B = RamanFields(-5.2e6, 8.5e5, 2.3, -5.2e6, 8.5e5, 2.3)


@dataclass(frozen=True)
class ControlFieldSpec:
    """Zeeman and Raman control settings.

    ``raman_scale`` (rad/s per (V/m)^2/eV) absorbs the unpublished dipole matrix
    elements; ``primed_weight`` is the relative strength of the primed laser's
    path, which must differ from 1 because the two paths have opposite
    detunings and equal fields.
    """

    B: tuple = PAPER_B_FIELD
    fields_a: RamanFields = PAPER_FIELDS_A
    fields_b: RamanFields = PAPER_FIELDS_B
    delta: float = -1e-5  # eV
    delta_prime: float = 1e-5  # eV
    raman_scale: float = 1.0
    primed_weight: float = 1.5

    def __post_init__(self):
        if self.delta == 0 or self.delta_prime == 0:
            raise ValidationError("Raman detunings must be nonzero")

    def reversed(self) -> "ControlFieldSpec":
        """Field settings whose Hamiltonians are the negatives of these."""
        return replace(self, B=tuple(-b for b in self.B), delta=-self.delta,
                       delta_prime=-self.delta_prime)


def raman_hamiltonian(spec: ControlFieldSpec, variant: str = "A") -> HermitianOperator:
    """Second-order light shift within the 60f manifold (rad/s).

    ``H = scale * sum_{i,j in x,y} T_ij * (L_i L_j + L_j L_i) / 2``, with
    ``T_ij = conj(E_i) E_j / delta + w' conj(E'_i) E'_j / delta'``. Only the real
    part of ``T`` survives the symmetrization.
    """
    if spec.raman_scale <= 0:
        raise ValidationError("raman_scale must be positive")
    fields = {"A": spec.fields_a, "B": spec.fields_b}[variant]
    e, ep = fields.vectors()
    T = np.outer(e.conj(), e) / spec.delta + spec.primed_weight * np.outer(ep.conj(), ep) / spec.delta_prime
    lo = angular_momentum_operators(L_ORB)
    Lxy = (lo.x, lo.y)
    orb = np.zeros((2 * L_ORB + 1,) * 2, dtype=complex)
    for i in range(2):
        for j in range(2):
            orb += T[i, j].real * (Lxy[i] @ Lxy[j] + Lxy[j] @ Lxy[i]) / 2
    h = spec.raman_scale * np.kron(orb, np.eye(2))
    return HermitianOperator(h, f"raman_{variant}")


def calibrate_raman_scale(spec: ControlFieldSpec | None = None, ratio: float = 1.0) -> float:
    """``raman_scale`` making ``||H_R,A|| = ratio * ||W_Z||`` (spectral norms)."""
    spec = spec or ControlFieldSpec()
    unit = raman_hamiltonian(replace(spec, raman_scale=1.0), "A").matrix
    zee = zeeman_hamiltonian(spec.B).matrix
    return ratio * np.linalg.norm(zee, 2) / np.linalg.norm(unit, 2)


def default_field_spec() -> ControlFieldSpec:
    spec = ControlFieldSpec()
    return replace(spec, raman_scale=calibrate_raman_scale(spec))


def control_pair(spec: ControlFieldSpec | None = None, time_unit: float = 1e-9) -> ControlPair:
    """``H_A = W_Z + W_R,A`` and ``H_B = W_Z + W_R,B`` in radians per ``time_unit`` seconds."""
    spec = spec or default_field_spec()
    wz = zeeman_hamiltonian(spec.B).matrix
    ha = (wz + raman_hamiltonian(spec, "A").matrix) * time_unit
    hb = (wz + raman_hamiltonian(spec, "B").matrix) * time_unit
    unit = {1e-9: "ns", 1e-6: "us", 1.0: "s"}.get(time_unit, f"{time_unit:g} s")
    return ControlPair(HermitianOperator(ha, "A"), HermitianOperator(hb, "B"), time_unit=unit)


def paper_timings() -> np.ndarray:
    """The 34 published pulse durations in ns (I/O fixture, see README)."""
    return np.array(PAPER_TIMINGS_NS)


def fine_structure_projection(E) -> HermitianOperator:
    """Zero the blocks coupling the ``J = 5/2`` and ``J = 7/2`` multiplets."""
    m = E.matrix if isinstance(E, HermitianOperator) else np.asarray(E, dtype=complex)
    if m.shape != (DIM, DIM):
        raise ValidationError(f"operator must be {DIM}x{DIM}, got {m.shape}")
    U, labels = coupling_matrix(L_ORB, S_SPIN)
    in_j = U @ m @ U.T
    js = np.array([j for j, _ in labels])
    in_j[js[:, None] != js[None, :]] = 0.0
    label = getattr(E, "label", "")
    return HermitianOperator(U.T @ in_j @ U, f"{label}(0)" if label else "")


@dataclass(frozen=True)
class ProjectionRates:
    gamma1: float
    gamma2: float

    def __post_init__(self):
        if self.gamma1 <= 0 or self.gamma2 <= 0:
            raise ValidationError("projection rates must be positive")


def projection_efficiency(rates: ProjectionRates) -> float:
    g1, g2 = rates.gamma1, rates.gamma2
    return 2 * math.sqrt(g1 * g2) / (g1 + g2)


def gamma_ratio_from_cg() -> dict:
    """Rate ratio of the two projection paths from Clebsch-Gordan products, and eta."""
    cg = clebsch_gordan
    path1 = cg(1.5, -0.5, 1, -1, 2.5, -1.5) * cg(1.5, 0.5, 1, -1, 1.5, -0.5) * cg(0.5, -0.5, 1, 1, 1.5, 0.5)
    path2 = cg(1.5, 0.5, 1, -1, 2.5, -0.5) * cg(1.5, 1.5, 1, -1, 1.5, 0.5) * cg(0.5, 0.5, 1, 1, 1.5, 1.5)
    ratio = (path1 / path2) ** 2
    eta = projection_efficiency(ProjectionRates(ratio, 1.0))
    return {"ratio": ratio, "eta": eta}


PROJECTION_KEYS = ("g11", "g22", "g12", "n11", "n22", "n12")


def projection_rate_evolution(rho0: dict, rates: ProjectionRates, t: float) -> dict:
    """Closed-form solution of the projection-stage rate equations at time ``t``.

    ``rho0`` maps ``g11, g22, g12`` (Rydberg populations and coherence) and
    ``n11, n22, n12`` (ground-state ones) to their initial values.
    """
    if t < 0:
        raise ValidationError("t must be nonnegative")
    r = {k: complex(rho0.get(k, 0.0)) for k in PROJECTION_KEYS}
    g1, g2 = rates.gamma1, rates.gamma2
    e1, e2 = math.exp(-g1 * t), math.exp(-g2 * t)
    ec = math.exp(-(g1 + g2) * t / 2)
    eta = projection_efficiency(rates)
    return {
        "g11": r["g11"] * e1,
        "g22": r["g22"] * e2,
        "g12": r["g12"] * ec,
        "n11": r["n11"] + r["g11"] * (1 - e1),
        "n22": r["n22"] + r["g22"] * (1 - e2),
        "n12": r["n12"] + eta * r["g12"] * (1 - ec),
    }


def integrate_projection_rates(rho0: dict, rates: ProjectionRates, t: float,
                               rtol: float = 1e-12, atol: float = 1e-20) -> dict:
    """Numerical integration of the same rate equations (cross-check)."""
    g1, g2 = rates.gamma1, rates.gamma2
    y0 = np.array([complex(rho0.get(k, 0.0)) for k in PROJECTION_KEYS])

    def rhs(_, y):
        return np.array([
            -g1 * y[0],
            -g2 * y[1],
            -(g1 + g2) / 2 * y[2],
            g1 * y[0],
            g2 * y[1],
            math.sqrt(g1 * g2) * y[2],
        ])

    if t == 0:
        return dict(zip(PROJECTION_KEYS, y0))
    sol = solve_ivp(rhs, (0.0, t), y0, method="DOP853", rtol=rtol, atol=atol)
    return dict(zip(PROJECTION_KEYS, sol.y[:, -1]))
