import json
import math

import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st
from sympy.physics.quantum.cg import CG

from zenocode import quantum_core as qc
from conftest import SX, SY, SZ, random_hermitian


def taylor_expm(A, terms=20):
    out = np.eye(A.shape[0], dtype=complex)
    term = np.eye(A.shape[0], dtype=complex)
    for k in range(1, terms + 1):
        term = term @ A / k
        out = out + term
    return out


# -- tensor product

def test_tensor_identity():
    assert np.array_equal(qc.tensor_product(np.eye(2), np.eye(7)), np.eye(14))


def test_tensor_diagonal_action():
    up, down = np.array([1, 0]), np.array([0, 1])
    op = qc.tensor_product(SZ, np.eye(2))
    v = qc.tensor_product(up, down)
    assert np.allclose(op @ v, v)


def test_tensor_lz_doubled_spectrum():
    lz = qc.angular_momentum_operators(3).z
    w = np.linalg.eigvalsh(qc.tensor_product(lz, np.eye(2)))
    assert np.allclose(np.sort(w), np.repeat(np.arange(-3, 4), 2))


def test_tensor_associative_integer():
    rng = np.random.default_rng(0)
    A, B, C = (rng.integers(-3, 4, (2, 3)) for _ in range(3))
    left = qc.tensor_product(qc.tensor_product(A, B), C)
    right = qc.tensor_product(A, qc.tensor_product(B, C))
    assert np.array_equal(left, right)


# -- exponential

def test_expm_zero_time():
    assert np.allclose(qc.matrix_exponential_hermitian(SX, 0.0), np.eye(2))


def test_expm_diagonal_phase():
    U = qc.matrix_exponential_hermitian(np.diag([math.pi, 0.0]), 1.0)
    assert np.allclose(U, np.diag([-1, 1]), atol=1e-14)


def test_expm_sigma_x_against_taylor():
    U = qc.matrix_exponential_hermitian(SX, math.pi / 2)
    assert np.allclose(U, -1j * SX, atol=1e-12)
    assert np.allclose(U, taylor_expm(-1j * SX * math.pi / 2, 20), atol=1e-12)


def test_expm_rejects_non_hermitian():
    with pytest.raises(qc.ValidationError):
        qc.matrix_exponential_hermitian(np.array([[0, 1], [0, 0]]), 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.floats(-10, 10), st.integers(0, 2**31 - 1))
def test_expm_unitary_property(n, t, seed):
    H = random_hermitian(np.random.default_rng(seed), n)
    U = qc.matrix_exponential_hermitian(H, t)
    assert qc.unitarity_error(U) < 1e-10
    assert abs(abs(np.linalg.det(U)) - 1) < 1e-8


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.floats(-2, 2), st.integers(0, 2**31 - 1))
def test_expm_matches_taylor_property(n, t, seed):
    H = random_hermitian(np.random.default_rng(seed), n)
    H = H / max(1.0, np.linalg.norm(H, 2))
    assert np.allclose(qc.matrix_exponential_hermitian(H, t), taylor_expm(-1j * H * t, 40), atol=1e-10)


# -- angular momentum

def test_spin_half_is_pauli_over_two():
    s = qc.angular_momentum_operators(0.5)
    for a, p in zip(s.components(), (SX, SY, SZ)):
        assert np.allclose(a, p / 2)


def test_l3_lz_diagonal():
    s = qc.angular_momentum_operators(3)
    assert s.dim == 7
    assert np.allclose(s.z, np.diag([3, 2, 1, 0, -1, -2, -3]))


@pytest.mark.parametrize("l", [0, 0.5, 1, 1.5, 2, 3, 4.5])
def test_commutators_and_casimir(l):
    s = qc.angular_momentum_operators(l)
    x, y, z = s.components()
    assert np.allclose(x @ y - y @ x, 1j * z, atol=1e-12)
    assert np.allclose(y @ z - z @ y, 1j * x, atol=1e-12)
    assert np.allclose(z @ x - x @ z, 1j * y, atol=1e-12)
    assert np.allclose(x @ x + y @ y + z @ z, l * (l + 1) * np.eye(s.dim), atol=1e-10)


def test_ladder_shifts():
    s = qc.angular_momentum_operators(3)
    m = np.diag(s.z)
    for k in range(1, 7):
        e = np.zeros(7)
        e[k] = 1
        up = s.plus @ e
        assert np.allclose(s.z @ up, (m[k] + 1) * up)


@pytest.mark.parametrize("bad", [-1, 0.3, 1.25])
def test_angular_momentum_rejects(bad):
    with pytest.raises(qc.ValidationError):
        qc.angular_momentum_operators(bad)


# -- Clebsch-Gordan

def test_cg_stretched():
    assert qc.clebsch_gordan(0.5, 0.5, 1, 1, 1.5, 1.5) == pytest.approx(1.0, abs=1e-15)


def test_cg_out_of_domain_zero():
    assert qc.clebsch_gordan(1, 1, 1, 1, 1, 1) == 0.0  # M mismatch
    assert qc.clebsch_gordan(1, 0, 1, 0, 3, 0) == 0.0  # triangle
    assert qc.clebsch_gordan(1, 2, 1, -2, 1, 0) == 0.0  # |m| > j


def _half(x):
    return sympy.Rational(int(round(2 * x)), 2)


@pytest.mark.parametrize("args", [
    (3, -1, 0.5, 0.5, 2.5, -0.5),
    (3, -2, 0.5, 0.5, 2.5, -1.5),
    (3, -1, 0.5, -0.5, 2.5, -1.5),
    (1.5, -0.5, 1, -1, 2.5, -1.5),
    (1.5, 0.5, 1, -1, 1.5, -0.5),
    (0.5, -0.5, 1, 1, 1.5, 0.5),
    (2, 1, 2, -1, 3, 0),
    (4.5, 2.5, 3.5, -1.5, 5, 1),
])
def test_cg_against_sympy(args):
    ref = float(CG(*map(_half, args)).doit())
    assert qc.clebsch_gordan(*args) == pytest.approx(ref, abs=1e-14)


def test_cg_recursion_oracle():
    # J_- |J M> expanded in the product basis must reproduce |J M-1>
    j1, j2, J, M = 3, 0.5, 2.5, -0.5
    def amp(M_):
        return {(m1, M_ - m1): qc.clebsch_gordan(j1, m1, j2, M_ - m1, J, M_)
                for m1 in np.arange(-j1, j1 + 1) if abs(M_ - m1) <= j2}
    hi, lo = amp(M), amp(M - 1)
    c = math.sqrt(J * (J + 1) - M * (M - 1))
    for (m1, m2), v in lo.items():
        lhs = 0.0
        for (a, b), w in hi.items():
            if (a - 1, b) == (m1, m2):
                lhs += w * math.sqrt(j1 * (j1 + 1) - a * (a - 1))
            if (a, b - 1) == (m1, m2):
                lhs += w * math.sqrt(j2 * (j2 + 1) - b * (b - 1))
        assert lhs / c == pytest.approx(v, abs=1e-13)


@pytest.mark.parametrize("j1,j2", [(0.5, 0.5), (1, 0.5), (3, 0.5), (2, 1.5), (1.5, 1)])
def test_cg_completeness_and_orthogonality(j1, j2):
    U, labels = qc.coupling_matrix(j1, j2)
    assert np.allclose(U @ U.T, np.eye(U.shape[0]), atol=1e-12)
    assert np.allclose((U ** 2).sum(axis=0), 1.0, atol=1e-12)
    assert labels[0] == (j1 + j2, j1 + j2)


def test_cg_large_j_exact():
    # cancellation-heavy case still orthonormal
    U, _ = qc.coupling_matrix(5, 4.5)
    assert np.allclose(U @ U.T, np.eye(U.shape[0]), atol=1e-12)


# -- Gram-Schmidt completion and coding matrix

def test_gram_schmidt_canonical_is_identity():
    U = qc.gram_schmidt_complete(np.eye(5)[:, :2])
    assert np.allclose(U, np.eye(5))


def test_gram_schmidt_keeps_orthonormal_inputs_verbatim():
    from zenocode import rb78
    G = rb78.appendix_codewords().codewords
    U = qc.gram_schmidt_complete(G.T)
    assert np.array_equal(U[:, :2], G.T)
    assert qc.unitarity_error(U) < 1e-10


def test_gram_schmidt_rank_deficient():
    v = np.array([1.0, 1.0, 0.0])
    with pytest.raises(qc.ValidationError):
        qc.gram_schmidt_complete(np.stack([v, 2 * v], axis=1))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 10), st.data())
def test_gram_schmidt_unitary_property(n, data):
    k = data.draw(st.integers(1, n))
    seed = data.draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k))
    U = qc.gram_schmidt_complete(V)
    assert qc.unitarity_error(U) < 1e-10
    # leading columns span the inputs
    Q = U[:, :k]
    assert np.allclose(Q @ (Q.conj().T @ V), V, atol=1e-9)


def test_coding_matrix_maps_columns():
    rng = np.random.default_rng(3)
    src = np.linalg.qr(rng.standard_normal((6, 2)) + 1j * rng.standard_normal((6, 2)))[0]
    tgt = np.linalg.qr(rng.standard_normal((6, 2)) + 1j * rng.standard_normal((6, 2)))[0]
    C = qc.coding_matrix(src, tgt)
    assert np.allclose(C @ src, tgt, atol=1e-12)
    assert qc.unitarity_error(C) < 1e-10


# -- validation and serialization

def test_hermitian_operator_validates_and_freezes():
    op = qc.HermitianOperator(SX, "sx")
    assert op.dim == 2
    with pytest.raises(ValueError):
        op.matrix[0, 0] = 5
    with pytest.raises(qc.ValidationError):
        qc.HermitianOperator(np.array([[0, 1], [2, 0]]))
    assert np.allclose((-op).matrix, -SX)


def test_check_state_norm():
    qc.check_state(np.array([1, 1j]) / math.sqrt(2))
    with pytest.raises(qc.ValidationError):
        qc.check_state(np.array([1, 1]))


def test_matrix_round_trip_exact(tmp_path):
    rng = np.random.default_rng(9)
    m = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
    p = tmp_path / "m.json"
    p.write_text(json.dumps(qc.matrix_to_dict(m)))
    back = qc.matrix_from_dict(json.loads(p.read_text()))
    assert np.array_equal(back, m)


def test_matrix_from_dict_entry_count():
    with pytest.raises(qc.ValidationError):
        qc.matrix_from_dict({"rows": 2, "cols": 2, "entries": [[1, 0]]})
