import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from biotbrinkman.solvers import (STOP_CONVERGED, STOP_EXACT, STOP_MAX_ITER, BreakdownError,
                                  NotPositiveDefiniteError, SingularMatrixError, as_sparse,
                                  direct_solve, estimate_spectrum, factorize, minres,
                                  read_matrix_market, read_vector, write_matrix_market,
                                  write_vector)


def random_spd(n, seed):
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((n, n))
    return q @ q.T + n * np.eye(n)


def random_indefinite(n, seed):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eig = rng.uniform(0.5, 3.0, n) * rng.choice([-1, 1], n)
    return q @ np.diag(eig) @ q.T


def test_direct_examples():
    assert np.allclose(direct_solve(sp.diags([2.0, 1.0]), [2.0, 1.0]), [1.0, 1.0])
    with pytest.raises(SingularMatrixError):
        factorize(np.ones((2, 2)))
    with pytest.raises(NotPositiveDefiniteError, match="'blk'"):
        factorize(sp.diags([1.0, -1.0]), spd_hint=True, name="blk")


def test_factorize_rejects_non_square_and_nonfinite():
    with pytest.raises(ValueError):
        as_sparse(np.ones((2, 3)))
    with pytest.raises(ValueError):
        factorize(sp.csr_matrix((0, 0)))
    with pytest.raises(Exception):
        factorize(np.array([[np.nan, 0.0], [0.0, 1.0]]))


@given(st.integers(2, 40), st.integers(0, 1000))
@settings(max_examples=25, deadline=None)
def test_spd_factorization_solves(n, seed):
    A = random_spd(n, seed)
    b = np.random.default_rng(seed + 1).standard_normal(n)
    f = factorize(A, spd_hint=True)
    assert f.spd
    assert np.linalg.norm(A @ f.solve(b) - b) <= 1e-12 * np.linalg.norm(b) * n


def test_badly_scaled_matrix_is_not_called_singular():
    A = sp.diags([1e-16, 1.0, 1e16])
    assert np.allclose(direct_solve(A, [1e-16, 1.0, 1e16]), 1.0)


def test_refinement_improves_residual():
    rng = np.random.default_rng(0)
    A = random_indefinite(60, 1) @ np.diag(10.0 ** rng.uniform(-6, 6, 60))
    b = rng.standard_normal(60)
    plain = factorize(A, refine_steps=0).solve(b)
    refined = factorize(A, refine_steps=2).solve(b)
    assert np.linalg.norm(A @ refined - b) <= np.linalg.norm(A @ plain - b) + 1e-300


def test_minres_examples():
    x, rep = minres(sp.diags([1.0, -1.0, 2.0, -2.0]), None, np.ones(4), rel_tol=1e-10)
    assert rep.converged and rep.iterations <= 4
    assert np.allclose(x, [1.0, -1.0, 0.5, -0.5])
    x, rep = minres(sp.eye(5), None, np.arange(5.0))
    assert rep.iterations == 1 and rep.stop_reason == STOP_CONVERGED


def test_minres_zero_rhs():
    x, rep = minres(sp.eye(3), None, np.zeros(3))
    assert rep.converged and rep.iterations == 0 and np.all(x == 0)


@given(st.integers(5, 60), st.integers(0, 1000), st.sampled_from([1e-4, 1e-6, 1e-8]))
@settings(max_examples=25, deadline=None)
def test_minres_properties(n, seed, tol):
    A = random_indefinite(n, seed)
    M = random_spd(n, seed + 7)
    Minv = np.linalg.inv(M)
    b = np.random.default_rng(seed).standard_normal(n)
    x, rep = minres(A, Minv, b, rel_tol=tol, max_iter=10 * n)
    hist = np.array(rep.residual_history)
    assert rep.converged
    # preconditioned residual estimates never increase
    assert np.all(np.diff(hist) <= 1e-12 * hist[0])
    assert len(rep.true_residual_history) == rep.iterations + 1
    assert np.linalg.norm(b - A @ x) <= tol * np.linalg.norm(b) * (1 + 1e-8)
    assert rep.final_residual == pytest.approx(np.linalg.norm(b - A @ x), rel=1e-8, abs=1e-14)


def test_minres_with_callable_operators_matches_matrix_form():
    A = random_indefinite(30, 2)
    M = np.linalg.inv(random_spd(30, 3))
    b = np.ones(30)
    x1, r1 = minres(A, M, b)
    x2, r2 = minres(lambda v: A @ v, lambda v: M @ v, b)
    assert r1.iterations == r2.iterations
    assert np.allclose(x1, x2)


def test_minres_initial_guess():
    A = random_indefinite(20, 4)
    b = np.ones(20)
    x0 = np.linalg.solve(A, b) + 1e-3
    x, rep = minres(A, None, b, x0=x0, rel_tol=1e-6)
    r0 = np.linalg.norm(b - A @ x0)
    assert rep.true_residual_history[0] == pytest.approx(r0)
    assert np.linalg.norm(b - A @ x) <= 1e-6 * r0


def test_minres_stops_at_max_iter():
    A = sp.diags(np.linspace(1, 100, 50) * np.resize([1, -1], 50))
    x, rep = minres(A, None, np.ones(50), rel_tol=1e-14, max_iter=3)
    assert rep.iterations == 3 and not rep.converged and rep.stop_reason == STOP_MAX_ITER


def test_minres_reports_exhausted_krylov_space():
    # singular consistent system: Krylov space closes before the tolerance
    A = sp.diags([1.0, 2.0, 0.0])
    x, rep = minres(A, None, np.array([1.0, 2.0, 0.0]), rel_tol=1e-300)
    assert rep.stop_reason in (STOP_EXACT, STOP_CONVERGED)
    assert np.allclose(x, [1.0, 1.0, 0.0])


def test_minres_rejects_indefinite_preconditioner():
    with pytest.raises(BreakdownError):
        minres(sp.eye(2), sp.diags([-1.0, -1.0]), np.ones(2))


def test_minres_argument_checks():
    with pytest.raises(ValueError):
        minres(sp.eye(2), None, np.ones(2), rel_tol=0.0)
    with pytest.raises(ValueError):
        minres(sp.eye(2), None, np.ones(2), max_iter=-1)


@pytest.mark.parametrize("steps", [5, 20, 40])
def test_minres_iterates_match_scipy(steps):
    from scipy.sparse.linalg import minres as sp_minres
    A = random_indefinite(80, 11)
    M = np.linalg.inv(random_spd(80, 13))
    b = np.random.default_rng(12).standard_normal(80)
    ref, _ = sp_minres(A, b, M=M, rtol=1e-300, maxiter=steps)
    x, rep = minres(A, M, b, rel_tol=1e-300, max_iter=steps)
    assert rep.iterations == steps
    assert np.linalg.norm(x - ref) <= 1e-8 * np.linalg.norm(ref)


def test_spectrum():
    s = estimate_spectrum(np.diag([1.0, -4.0]), np.diag([2.0, 2.0]))
    assert np.allclose(s.eigenvalues, [-2.0, 0.5])
    assert (s.min_abs, s.max_abs, s.condition) == pytest.approx((0.5, 2.0, 4.0))
    with pytest.raises(ValueError):
        estimate_spectrum(np.eye(3), np.eye(3), max_dofs=2)
    with pytest.raises(ValueError):
        estimate_spectrum(np.eye(3), np.eye(2))


def test_matrix_market_round_trip(tmp_path):
    A = sp.random(30, 30, density=0.1, random_state=5, format="csr") + sp.eye(30)
    write_matrix_market(tmp_path / "a.mtx", A, comment="test")
    B = read_matrix_market(tmp_path / "a.mtx")
    assert (abs(A - B)).max() == 0.0
    v = np.random.default_rng(0).standard_normal(30)
    write_vector(tmp_path / "v.txt", v)
    assert np.array_equal(read_vector(tmp_path / "v.txt"), v)
