"""Dense complex linear algebra and angular-momentum building blocks.

Basis conventions used throughout the package:

* ``|l, m>`` states are ordered with ``m`` descending (``m = l, l-1, ..., -l``).
* Composite orbital/spin spaces are built as ``orbital (x) spin`` so the
  orbital projection is the slow index, i.e. ``index = (l - m_l) * (2s + 1) + (s - m_s)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce

import numpy as np

HERMITIAN_TOL = 1e-12
UNITARY_TOL = 1e-10
NORM_TOL = 1e-12


class ValidationError(ValueError):
    """Raised when an input violates a structural precondition."""


# ---------------------------------------------------------------------------
# validation helpers


def as_matrix(a) -> np.ndarray:
    """Return ``a`` (array-like or :class:`HermitianOperator`) as a 2-D complex array."""
    if isinstance(a, HermitianOperator):
        return a.matrix
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2:
        raise ValidationError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError("matrix has non-finite entries")
    return m


def hermiticity_error(m: np.ndarray) -> float:
    """Max |m - m^dagger| relative to max |m| (0 for the zero matrix)."""
    scale = np.max(np.abs(m)) if m.size else 0.0
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(m - m.conj().T)) / scale)


def check_hermitian(a, tol: float = HERMITIAN_TOL) -> np.ndarray:
    m = as_matrix(a)
    if m.shape[0] != m.shape[1]:
        raise ValidationError(f"operator must be square, got shape {m.shape}")
    err = hermiticity_error(m)
    if err > tol:
        raise ValidationError(f"operator is not Hermitian (relative deviation {err:.3e})")
    return m


def unitarity_error(u: np.ndarray) -> float:
    """Frobenius norm of ``U^dagger U - I``."""
    u = np.asarray(u)
    return float(np.linalg.norm(u.conj().T @ u - np.eye(u.shape[1])))


def check_unitary(a, tol: float = UNITARY_TOL) -> np.ndarray:
    u = as_matrix(a)
    if u.shape[0] != u.shape[1]:
        raise ValidationError(f"unitary must be square, got shape {u.shape}")
    err = unitarity_error(u)
    if err > tol:
        raise ValidationError(f"matrix is not unitary (||U^dag U - I||_F = {err:.3e})")
    return u


def check_state(psi, tol: float = NORM_TOL) -> np.ndarray:
    v = np.asarray(psi, dtype=complex).ravel()
    n = np.vdot(v, v).real
    if abs(n - 1.0) > tol:
        raise ValidationError(f"state vector is not normalized (norm^2 = {n:.15g})")
    return v


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class HermitianOperator:
    """A labelled Hermitian matrix (error generator or control Hamiltonian)."""

    matrix: np.ndarray
    label: str = ""

    def __post_init__(self):
        m = check_hermitian(self.matrix)
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __neg__(self) -> "HermitianOperator":
        return HermitianOperator(-self.matrix, f"-{self.label}" if self.label else "")


@dataclass(frozen=True)
class AngularMomentumSet:
    """Angular-momentum matrices for spin ``l`` in the ``m``-descending basis."""

    l: float
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    plus: np.ndarray
    minus: np.ndarray
    m_values: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.z.shape[0]

    def components(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.x, self.y, self.z


# ---------------------------------------------------------------------------
# operations


def tensor_product(*factors) -> np.ndarray:
    """Kronecker product of the given matrices (or vectors), left factor slow."""
    if not factors:
        raise ValidationError("tensor_product needs at least one factor")
    return reduce(np.kron, (np.asarray(f) for f in factors))


def matrix_exponential_hermitian(H, t: float = 1.0) -> np.ndarray:
    """``exp(-i H t)`` through the eigendecomposition of the Hermitian ``H``."""
    h = check_hermitian(H)
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w * t)) @ v.conj().T


def _two_j(x) -> int:
    two = 2 * Fraction(x).limit_denominator(1000)
    if two.denominator != 1:
        raise ValidationError(f"{x!r} is not a half-integer")
    return int(two)


def angular_momentum_operators(l) -> AngularMomentumSet:
    """Standard ``Lx, Ly, Lz, L+, L-`` matrices for angular momentum ``l``.

    ``L+`` has entries ``sqrt(l(l+1) - m(m+1))`` just above the diagonal, so it
    raises ``m`` by one in the descending ordering.
    """
    two_l = _two_j(l)
    if two_l < 0:
        raise ValidationError(f"angular momentum must be nonnegative, got {l!r}")
    lv = two_l / 2
    m = lv - np.arange(two_l + 1)
    plus = np.zeros((two_l + 1, two_l + 1))
    for i in range(1, two_l + 1):
        plus[i - 1, i] = math.sqrt(lv * (lv + 1) - m[i] * (m[i] + 1))
    minus = plus.T.copy()
    x = (plus + minus) / 2
    y = (plus - minus) / 2j
    z = np.diag(m)
    return AngularMomentumSet(lv, x.astype(complex), y, z.astype(complex),
                              plus.astype(complex), minus.astype(complex), m)


def clebsch_gordan(j1, m1, j2, m2, J, M) -> float:
    """Clebsch-Gordan coefficient ``<j1 m1; j2 m2 | J M>`` (Condon-Shortley phase).

    Evaluated with the Racah factorial sum in exact rational arithmetic; returns
    0 for any combination outside the physical domain.
    """
    a, am, b, bm, c, cm = (_two_j(v) for v in (j1, m1, j2, m2, J, M))
    if min(a, b, c) < 0 or am + bm != cm:
        return 0.0
    if abs(am) > a or abs(bm) > b or abs(cm) > c:
        return 0.0
    if (a + am) % 2 or (b + bm) % 2 or (c + cm) % 2:
        return 0.0
    if c < abs(a - b) or c > a + b or (a + b + c) % 2:
        return 0.0

    f = math.factorial
    # all arguments below are integers once the half-integers are doubled
    j1p, j1m = (a + am) // 2, (a - am) // 2
    j2p, j2m = (b + bm) // 2, (b - bm) // 2
    Jp, Jm = (c + cm) // 2, (c - cm) // 2
    s1 = (c + a - b) // 2  # J + j1 - j2
    s2 = (c - a + b) // 2  # J - j1 + j2
    s3 = (a + b - c) // 2  # j1 + j2 - J
    s4 = (a + b + c) // 2 + 1  # j1 + j2 + J + 1

    pref2 = Fraction((c + 1) * f(s1) * f(s2) * f(s3), f(s4))
    pref2 *= f(Jp) * f(Jm) * f(j1p) * f(j1m) * f(j2p) * f(j2m)

    total = Fraction(0)
    for k in range(0, s3 + 1):
        d = (s3 - k, j1m - k, j2p - k, (c - b + am) // 2 + k, (c - a - bm) // 2 + k)
        if min(d) < 0:
            continue
        denom = f(k) * f(d[0]) * f(d[1]) * f(d[2]) * f(d[3]) * f(d[4])
        total += Fraction((-1) ** k, denom)
    if total == 0:
        return 0.0
    value2 = pref2 * total * total
    return math.copysign(math.sqrt(value2), total)


def coupling_matrix(j1, j2) -> tuple[np.ndarray, list[tuple[float, float]]]:
    """Orthogonal change of basis from ``|j1 m1; j2 m2>`` to ``|J M>``.

    Rows are indexed by coupled states ordered by ``J`` descending, then ``M``
    descending; columns follow the product ordering (``m1`` slow, ``m2`` fast,
    both descending). Returns the matrix and the ``(J, M)`` row labels.
    """
    a, b = _two_j(j1), _two_j(j2)
    m1s = [(a - 2 * i) / 2 for i in range(a + 1)]
    m2s = [(b - 2 * i) / 2 for i in range(b + 1)]
    labels = []
    for two_J in range(a + b, abs(a - b) - 1, -2):
        for i in range(two_J + 1):
            labels.append((two_J / 2, (two_J - 2 * i) / 2))
    U = np.zeros((len(labels), len(m1s) * len(m2s)))
    for r, (J, M) in enumerate(labels):
        for i, m1 in enumerate(m1s):
            for k, m2 in enumerate(m2s):
                U[r, i * len(m2s) + k] = clebsch_gordan(a / 2, m1, b / 2, m2, J, M)
    return U, labels


def gram_schmidt_complete(vectors, dim: int | None = None, tol: float = UNITARY_TOL) -> np.ndarray:
    """Unitary whose leading columns are ``vectors``; the rest complete the basis.

    ``vectors`` is a sequence of 1-D states or an ``(N, I)`` array of columns.
    Inputs already orthonormal to within ``tol`` are used verbatim; otherwise
    they are orthonormalized in order. The completion is deterministic: at each
    step the canonical basis vector with the largest residual is added.
    """
    cols = np.asarray(vectors, dtype=complex)
    if cols.ndim == 1:
        cols = cols[:, None]
    elif not (isinstance(vectors, np.ndarray) and vectors.ndim == 2):
        cols = cols.T  # list of states -> columns
    n = cols.shape[0] if dim is None else dim
    if cols.shape[0] != n:
        raise ValidationError(f"vectors have dimension {cols.shape[0]}, expected {n}")
    k = cols.shape[1]
    if k > n:
        raise ValidationError(f"cannot fit {k} vectors in a {n}-dimensional space")
    if np.linalg.matrix_rank(cols, tol=1e-10) < k:
        raise ValidationError("input vectors are linearly dependent")

    gram_err = np.linalg.norm(cols.conj().T @ cols - np.eye(k))
    if gram_err > tol:
        q = np.zeros_like(cols)
        for i in range(k):
            v = cols[:, i].copy()
            for _ in range(2):
                v -= q[:, :i] @ (q[:, :i].conj().T @ v)
            q[:, i] = v / np.linalg.norm(v)
        cols = q

    out = np.zeros((n, n), dtype=complex)
    out[:, :k] = cols
    basis = np.eye(n, dtype=complex)
    used = np.zeros(n, dtype=bool)
    for i in range(k, n):
        q = out[:, :i]
        resid = basis - q @ (q.conj().T @ basis)
        norms = np.linalg.norm(resid, axis=0)
        norms[used] = -1.0
        j = int(np.argmax(norms))
        used[j] = True
        v = resid[:, j]
        v -= q @ (q.conj().T @ v)
        out[:, i] = v / np.linalg.norm(v)
    return out


def coding_matrix(source, target) -> np.ndarray:
    """Unitary mapping the orthonormal columns of ``source`` onto those of ``target``."""
    src = gram_schmidt_complete(np.asarray(source, dtype=complex))
    tgt = gram_schmidt_complete(np.asarray(target, dtype=complex))
    return tgt @ src.conj().T


# ---------------------------------------------------------------------------
# serialization: {"rows", "cols", "entries": [[re, im], ...]} row-major


def matrix_to_dict(a) -> dict:
    m = np.atleast_2d(np.asarray(a, dtype=complex))
    return {
        "rows": int(m.shape[0]),
        "cols": int(m.shape[1]),
        "entries": [[float(z.real), float(z.imag)] for z in m.ravel()],
    }


def matrix_from_dict(d: dict) -> np.ndarray:
    rows, cols, entries = d["rows"], d["cols"], d["entries"]
    if len(entries) != rows * cols:
        raise ValidationError(
            f"matrix declares {rows}x{cols} but carries {len(entries)} entries"
        )
    flat = np.array([complex(re, im) for re, im in entries], dtype=complex)
    if not np.all(np.isfinite(flat)):
        raise ValidationError("matrix has non-finite entries")
    return flat.reshape(rows, cols)
