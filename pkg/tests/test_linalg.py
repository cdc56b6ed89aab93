import numpy as np
import pytest

from segab.errors import ConvergenceError
from segab.linalg import (
    RidgeNormalSolver,
    SeededRng,
    derive_stream,
    dominant_eigvec,
    solve_regularized_normal,
    standard_complex_normal,
)

from oracles import jacobi_eigvalsh


def test_seeded_rng_reproducible():
    a = SeededRng(1234, 7).generator().standard_normal(64)
    b = SeededRng(1234, 7).generator().standard_normal(64)
    assert np.array_equal(a, b)
    c = SeededRng(1234, 8).generator().standard_normal(64)
    assert not np.array_equal(a, c)


def test_derive_stream_stable_and_distinct():
    s1 = derive_stream("chan", 0, 3)
    assert s1 == derive_stream("chan", 0, 3)
    assert s1 != derive_stream("chan", 0, 4)
    assert 0 <= s1 < 2 ** 64


def test_split_streams_independent():
    root = SeededRng(99)
    a = root.split("noise", 0).generator().standard_normal(16)
    b = root.split("noise", 1).generator().standard_normal(16)
    assert not np.array_equal(a, b)


def test_complex_norm_matches_interleaved_real_norm():
    v = standard_complex_normal(SeededRng(5).generator(), 33)
    stacked = np.concatenate([v.real, v.imag])
    assert np.linalg.norm(v) == pytest.approx(np.linalg.norm(stacked), rel=1e-15)


def test_dominant_eigvec_diagonal():
    phi = dominant_eigvec(np.diag([3.0, 1.0]).astype(complex))
    assert abs(phi[0]) == pytest.approx(1.0, abs=1e-9)
    val = np.real(np.vdot(phi, np.diag([3.0, 1.0]) @ phi))
    assert val == pytest.approx(3.0, abs=1e-9)


def test_dominant_eigvec_rank_one():
    gen = SeededRng(2).generator()
    w = standard_complex_normal(gen, 5)
    m = np.outer(w, w.conj())
    phi = dominant_eigvec(m)
    val = np.real(np.vdot(phi, m @ phi))
    assert val == pytest.approx(np.linalg.norm(w) ** 2, rel=1e-10)
    # phi matches w up to a global phase
    assert abs(np.vdot(w / np.linalg.norm(w), phi)) == pytest.approx(1.0, abs=1e-8)


def test_dominant_eigvec_matches_dense_oracle():
    gen = SeededRng(11).generator()
    for _ in range(5):
        b = standard_complex_normal(gen, (6, 6))
        m = b @ b.conj().T
        phi = dominant_eigvec(m, tol=1e-12)
        val = np.real(np.vdot(phi, m @ phi))
        assert val == pytest.approx(jacobi_eigvalsh(m)[-1], abs=1e-8)


def test_dominant_eigvec_rayleigh_dominates_random_vectors():
    gen = SeededRng(12).generator()
    b = standard_complex_normal(gen, (7, 7))
    m = b @ b.conj().T
    phi = dominant_eigvec(m, tol=1e-11)
    top = np.real(np.vdot(phi, m @ phi))
    for _ in range(100):
        u = standard_complex_normal(gen, 7)
        u /= np.linalg.norm(u)
        assert np.real(np.vdot(u, m @ u)) <= top + 1e-9


def test_dominant_eigvec_start_orthogonal_to_top_eigenvector():
    # The all-ones start has zero overlap; the seeded fallback must recover.
    u = np.array([1.0, -1.0]) / np.sqrt(2.0)
    m = np.outer(u, u.conj()).astype(complex)
    phi = dominant_eigvec(m)
    assert np.real(np.vdot(phi, m @ phi)) == pytest.approx(1.0, abs=1e-9)


def test_dominant_eigvec_zero_matrix():
    phi = dominant_eigvec(np.zeros((3, 3), dtype=complex))
    assert np.linalg.norm(phi) == pytest.approx(1.0)


def test_dominant_eigvec_phase_fix_deterministic():
    gen = SeededRng(3).generator()
    b = standard_complex_normal(gen, (4, 4))
    m = b @ b.conj().T
    p1 = dominant_eigvec(m)
    p2 = dominant_eigvec(m * np.exp(0j))
    assert np.allclose(p1, p2)
    pivot = p1[np.argmax(np.abs(p1))]
    assert pivot.real > 0 and abs(pivot.imag) < 1e-9


def test_dominant_eigvec_rejects_non_hermitian():
    m = np.array([[1.0, 2.0], [0.5, 1.0]], dtype=complex)
    with pytest.raises(ValueError, match="Hermitian"):
        dominant_eigvec(m)


def test_dominant_eigvec_nonconvergence_carries_rayleigh():
    gen = SeededRng(4).generator()
    b = standard_complex_normal(gen, (6, 6))
    m = b @ b.conj().T
    with pytest.raises(ConvergenceError) as err:
        dominant_eigvec(m, tol=1e-15, max_iter=2)
    assert "rayleigh" in err.value.info


def test_solve_regularized_normal_identity():
    rhs = standard_complex_normal(SeededRng(6).generator(), 4)
    assert np.allclose(solve_regularized_normal([], rhs), rhs)


def test_solve_regularized_normal_single_basis_vector():
    e1 = np.zeros(3, dtype=complex)
    e1[0] = 1.0
    x = solve_regularized_normal([e1], e1)
    assert x[0] == pytest.approx(0.5)
    assert np.allclose(x[1:], 0.0)


def test_solve_regularized_normal_residual():
    gen = SeededRng(7).generator()
    a_list = [standard_complex_normal(gen, 8) for _ in range(4)]
    rhs = standard_complex_normal(gen, 8)
    x = solve_regularized_normal(a_list, rhs)
    m = np.eye(8, dtype=complex) + sum(np.outer(a, a.conj()) for a in a_list)
    assert np.linalg.norm(m @ x - rhs) <= 1e-10 * np.linalg.norm(rhs)


def test_solve_regularized_normal_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        solve_regularized_normal([np.ones(3, dtype=complex)],
                                 np.ones(4, dtype=complex))


def test_ridge_solver_matches_direct_solve():
    gen = SeededRng(8).generator()
    a_list = [standard_complex_normal(gen, 6) for _ in range(3)]
    solver = RidgeNormalSolver(a_list)
    rhs = standard_complex_normal(gen, (4, 6))
    batch = solver.solve(rhs)
    for row, out in zip(rhs, batch):
        assert np.allclose(out, solve_regularized_normal(a_list, row), atol=1e-12)
