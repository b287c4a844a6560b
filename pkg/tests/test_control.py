import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from zenocode import code_search as cs
from zenocode import control as nh
from zenocode import rb78
from zenocode.quantum_core import coding_matrix, matrix_exponential_hermitian, unitarity_error
from conftest import SX, SY, SZ, random_hermitian


def small_instance(seed=7, N=4, M=2):
    rng = np.random.default_rng(seed)
    pair = nh.ControlPair(random_hermitian(rng, N), random_hermitian(rng, N))
    errors = [random_hermitian(rng, N) for _ in range(M)]
    C = np.zeros((1, N), dtype=complex)
    C[0, 0] = 1
    return pair, errors, C


# -- propagator

def test_propagator_single_pulse():
    pair = nh.ControlPair(SX, SZ)
    assert np.allclose(nh.propagator([0.7], pair), matrix_exponential_hermitian(SX, 0.7))


def test_propagator_zero_timings_identity():
    pair = nh.ControlPair(SX, SZ)
    assert np.allclose(nh.propagator([0, 0, 0, 0], pair), np.eye(2))


def test_propagator_order_a_first():
    pair = nh.ControlPair(SX, SZ)
    U = nh.propagator([0.3, 0.5], pair)
    ref = matrix_exponential_hermitian(SZ, 0.5) @ matrix_exponential_hermitian(SX, 0.3)
    assert np.allclose(U, ref)


def test_propagator_additivity_oracle():
    pair, _, _ = small_instance()
    assert np.allclose(nh.propagator([0.4, 0.0, 0.9], pair), nh.propagator([1.3], pair), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=30), st.integers(0, 2**31 - 1))
def test_propagator_unitary_property(t, seed):
    rng = np.random.default_rng(seed)
    pair = nh.ControlPair(random_hermitian(rng, 5), random_hermitian(rng, 5))
    assert unitarity_error(nh.propagator(t, pair)) < 1e-9


def test_pair_shape_mismatch():
    with pytest.raises(nh.ValidationError):
        nh.ControlPair(SX, np.eye(3))


# -- decoding

def test_decoding_single_pulse():
    sched = nh.decoding_sequence([1.2])
    assert sched == [nh.Pulse("A", -1, 1.2)]
    pair = nh.ControlPair(SX, SZ)
    assert np.allclose(nh.propagator(sched, pair) @ nh.propagator([1.2], pair), np.eye(2))


def test_decoding_order_even():
    sched = nh.decoding_sequence([1, 2, 3, 4])
    assert [(p.hamiltonian, p.sign, p.duration) for p in sched] == [
        ("B", -1, 4), ("A", -1, 3), ("B", -1, 2), ("A", -1, 1)]


def test_decoding_paper_schedule_on_rb_pair():
    pair = rb78.control_pair()
    t = rb78.paper_timings()
    U = nh.propagator(t, pair)
    V = nh.schedule_propagator(nh.decoding_sequence(t), pair)
    assert np.linalg.norm(V @ U - np.eye(14)) < 1e-8
    assert np.allclose(V, U.conj().T, atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 8), min_size=1, max_size=15), st.integers(0, 2**31 - 1))
def test_decoding_inverse_property(t, seed):
    rng = np.random.default_rng(seed)
    pair = nh.ControlPair(random_hermitian(rng, 4), random_hermitian(rng, 4))
    U = nh.propagator(t, pair)
    V = nh.schedule_propagator(nh.decoding_sequence(t), pair)
    assert np.linalg.norm(V @ U - np.eye(4)) < 1e-8


# -- test function and step system

def test_G_zero_for_known_coder():
    # a one-pulse "pair" whose single propagator is an exact coding matrix
    errors = rb78.error_set()
    info = rb78.target_subspace()
    code = cs.find_code(errors, 2, cs.SearchParams(seed=0))
    coder = coding_matrix(info.T, code.columns())
    T, Z = scipy.linalg.schur(coder, output="complex")
    H = Z @ np.diag(-np.angle(np.diag(T))) @ Z.conj().T
    pair = nh.ControlPair((H + H.conj().T) / 2, np.zeros((14, 14)))
    assert np.allclose(nh.propagator([1.0], pair), coder, atol=1e-10)
    assert nh.test_function_G([1.0], pair, info, cs.build_supermatrices(errors, 2)) < 1e-16


def test_G_global_phase_invariant():
    pair, errors, C = small_instance()
    S = cs.build_supermatrices(errors, 1)
    t = np.linspace(2, 5, 4)
    assert nh.test_function_G(t, pair, C, S) == pytest.approx(
        nh.test_function_G(t, pair, np.exp(0.7j) * C, S), rel=1e-12)


def test_jacobian_against_finite_differences():
    rng = np.random.default_rng(11)
    N, I = 6, 2
    pair = nh.ControlPair(random_hermitian(rng, N), random_hermitian(rng, N))
    errors = [random_hermitian(rng, N) for _ in range(2)]
    S = cs.build_supermatrices(errors, I)
    C = np.linalg.qr(rng.standard_normal((N, I)) + 0j)[0].T
    t = rng.uniform(2, 8, 10)
    jac, _ = nh.constraint_jacobian(t, pair, C, S)
    h = 1e-6 * np.mean(t)
    fd = np.empty_like(jac)
    for j in range(t.size):
        tp, tm = t.copy(), t.copy()
        tp[j] += h
        tm[j] -= h
        fd[:, j] = (nh.constraint_values(tp, pair, C, S) - nh.constraint_values(tm, pair, C, S)) / (2 * h)
    assert np.linalg.norm(jac - fd) / np.linalg.norm(fd) < 1e-4


def test_step_system_shape_and_rows():
    rng = np.random.default_rng(5)
    N, I, M = 6, 2, 2
    pair = nh.ControlPair(random_hermitian(rng, N), random_hermitian(rng, N))
    errors = [random_hermitian(rng, N) for _ in range(M)]
    S = cs.build_supermatrices(errors, I)
    C = np.linalg.qr(rng.standard_normal((N, I)) + 0j)[0].T
    n_c = M * I * I + 2
    t = rng.uniform(2, 8, n_c)
    free = rng.permutation(n_c)[: M * I * I]
    sysm = nh.control_step_system(t, free, pair, C, S)
    assert sysm["S_matrix"].shape == (M * I * I, M * I * I)
    assert sysm["W"].shape == (M * I * I,)
    # S_matrix is the free-column slice of the real-row Jacobian
    jac, phi = nh.constraint_jacobian(t, pair, C, S)
    rows = []
    for k, p in enumerate(S.error_only().block_map):
        rows.append(jac[k].real)
        if p.row != p.col:
            rows.append(jac[k].imag)
    assert np.allclose(sysm["S_matrix"], np.array(rows)[:, free])
    # W from its definition
    Se = S.error_only()
    dC = cs.search_direction(phi, Se)
    st_ = phi + 0.5 * dC
    val = lambda v: np.einsum("i,kij,j->k", v.conj(), Se.matrices, v)
    w = (val(st_) - val(phi)) / np.vdot(st_, st_).real
    ref = []
    for k, p in enumerate(Se.block_map):
        ref.append(w[k].real)
        if p.row != p.col:
            ref.append(w[k].imag)
    assert np.allclose(sysm["W"], ref, atol=1e-14)


def test_step_system_finite_difference_rows():
    pair, errors, C = small_instance()
    S = cs.build_supermatrices(errors, 1)
    t = np.array([2.5, 3.1, 4.4, 5.0])
    sysm = nh.control_step_system(t, [0, 2], pair, C, S)
    h = 1e-6 * t.mean()
    for col, j in enumerate([0, 2]):
        tp, tm = t.copy(), t.copy()
        tp[j] += h
        tm[j] -= h
        fd = (nh.constraint_values(tp, pair, C, S) - nh.constraint_values(tm, pair, C, S)).real / (2 * h)
        assert np.allclose(sysm["S_matrix"][:, col], fd, rtol=1e-4, atol=1e-9)


# -- solver

def test_solver_small_instance_converges():
    pair, errors, C = small_instance()
    assert nh.bracket_generation_check(pair)["satisfied"]
    res = nh.solve_timings(pair, C, errors, nh.ControlSolveParams(seed=0))
    assert res.converged and res.G < 1e-8
    assert res.timings.size == 2 * 1 + 2
    assert np.all((res.timings >= 2) & (res.timings <= 8))
    # accepted steps strictly decrease G; rejected ones leave it and redraw the free set
    prev = res.trace[0]
    for rec in res.trace[1:]:
        if rec["accepted"]:
            assert rec["G"] < prev["G"] and rec["alpha"] in nh.DEFAULT_ALPHA_GRID
            assert rec["permutation"] == prev["permutation"]
        else:
            assert rec["G"] == prev["G"] and rec["alpha"] is None
            assert rec["permutation"] == prev["permutation"] + 1
        prev = rec
    U = nh.propagator(res.timings, pair)
    V = nh.schedule_propagator(nh.decoding_sequence(res.timings), pair)
    assert np.linalg.norm(V @ U - np.eye(4)) < 1e-8


def test_solver_deterministic():
    pair, errors, C = small_instance()
    a = nh.solve_timings(pair, C, errors, nh.ControlSolveParams(seed=3))
    b = nh.solve_timings(pair, C, errors, nh.ControlSolveParams(seed=3))
    assert np.array_equal(a.timings, b.timings)


def test_solver_commuting_pair_fails():
    rng = np.random.default_rng(2)
    Q = np.linalg.qr(rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4)))[0]
    Ha = Q @ np.diag([1.0, 2.0, -1.0, 0.5]) @ Q.conj().T
    Hb = Q @ np.diag([0.3, -1.0, 2.0, 1.0]) @ Q.conj().T
    pair = nh.ControlPair(Ha, Hb)
    assert not nh.bracket_generation_check(pair)["satisfied"]
    errors = [random_hermitian(rng, 4) for _ in range(2)]
    C = np.array([[1, 0, 0, 0]], dtype=complex)
    with pytest.raises(nh.ControlFailure) as info:
        nh.solve_timings(pair, C, errors, nh.ControlSolveParams(max_steps=100))
    assert info.value.best_G > 1e-8
    assert len(info.value.best_timings) == 4


def test_solver_rejects_dimension_mismatch():
    pair, errors, _ = small_instance()
    with pytest.raises(nh.ValidationError):
        nh.solve_timings(pair, np.ones((1, 3)), errors)


def test_params_validation():
    with pytest.raises(nh.ValidationError):
        nh.ControlSolveParams(t_min=3, t_max=2)
    with pytest.raises(nh.ValidationError):
        nh.ControlSolveParams(alpha_grid=())
    with pytest.raises(nh.ValidationError):
        nh.ControlSolveParams(alpha_grid=(1.5,))


# -- bracket generation

def test_bgc_pauli():
    rep = nh.bracket_generation_check(nh.ControlPair(SX, SZ))
    assert rep["rank"] >= 3 and rep["satisfied"]


def test_bgc_commuting():
    rep = nh.bracket_generation_check(nh.ControlPair(SZ, 2 * SZ + np.eye(2)))
    assert rep["rank"] == 2 and not rep["satisfied"]


def test_bgc_random_full():
    rng = np.random.default_rng(0)
    rep = nh.bracket_generation_check(nh.ControlPair(random_hermitian(rng, 4), random_hermitian(rng, 4)))
    assert rep["traceless_rank"] == 15 and rep["satisfied"] and rep["full_rank"]


def test_bgc_rank_never_exceeds_dimension():
    rng = np.random.default_rng(1)
    for n in (2, 3, 5):
        rep = nh.bracket_generation_check(nh.ControlPair(random_hermitian(rng, n), random_hermitian(rng, n)))
        assert rep["rank"] <= n * n


def test_bgc_rb_pair_structural_bound():
    # both Hamiltonians are (orbital x 1) + 1 x (B.S): every bracket lives in u(7) x 1,
    # so the closure is at most 49 + 1 dimensional and su(14) is out of reach
    rep = nh.bracket_generation_check(rb78.control_pair())
    assert rep["rank"] <= 50
    assert not rep["satisfied"]


# -- estimator

def test_timing_solver_estimator():
    pair, errors, C = small_instance()
    est = nh.TimingSolver(control_pair=pair, errors=errors, random_state=0)
    assert clone(est).get_params()["random_state"] == 0
    est.fit(C)
    assert est.G_ < 1e-8
    X = np.random.default_rng(0).standard_normal((3, 4)) + 0j
    assert np.allclose(est.inverse_transform(est.transform(X)), X, atol=1e-10)
    with pytest.raises(nh.ValidationError):
        nh.TimingSolver().fit(C)
