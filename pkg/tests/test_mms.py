import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from biotbrinkman.assembly import assemble_system, build_spaces
from biotbrinkman.fe_spaces import ParameterSet
from biotbrinkman.mesh import BoundarySpec, build_unit_square_mesh
from biotbrinkman.mms import (ErrorReport, compute_errors, convergence_rates, interpolate_exact,
                              manufactured_case)
from biotbrinkman.solvers import direct_solve

FD_STEP = 1e-5
RNG_POINTS = np.random.default_rng(7).uniform(0.05, 0.95, size=(2, 20))


def d_dx(f, x, y):
    return (f(x + FD_STEP, y) - f(x - FD_STEP, y)) / (2 * FD_STEP)


def d_dy(f, x, y):
    return (f(x, y + FD_STEP) - f(x, y - FD_STEP)) / (2 * FD_STEP)


def fd_div(f, x, y):
    return d_dx(lambda a, b: f(a, b)[0], x, y) + d_dy(lambda a, b: f(a, b)[1], x, y)


def fd_grad(f, x, y):
    return np.array([d_dx(f, x, y), d_dy(f, x, y)])


def fd_div_tensor(f, x, y):
    rows = [lambda a, b, i=i: f(a, b)[i] for i in range(2)]
    return np.array([fd_div(r, x, y) for r in rows])


CASES = [ParameterSet(), ParameterSet(mu=2.0, lam=30.0, nu=0.3, kappa=0.5, c0=0.2, alpha=0.8),
         ParameterSet(nu=0.0)]


def close(a, b, tol=1e-6):
    return np.max(np.abs(np.asarray(a) - np.asarray(b))) <= tol * max(1.0, np.max(np.abs(b)))


@pytest.mark.parametrize("P", CASES)
def test_derivatives_against_finite_differences(P):
    ex = manufactured_case(P)
    x, y = RNG_POINTS
    grad_u = ex.grad_u(x, y)
    for i in range(2):
        assert close(grad_u[i], fd_grad(lambda a, b: ex.u(a, b)[i], x, y))
    assert close(ex.div_u(x, y), fd_div(ex.u, x, y))
    assert close(ex.grad_div_u(x, y), fd_grad(ex.div_u, x, y))
    assert close(ex.div_strain(x, y), fd_div_tensor(ex.strain, x, y))
    assert close(ex.grad_p(x, y), fd_grad(ex.p, x, y))
    assert close(ex.grad_phi(x, y), fd_grad(ex.phi, x, y))
    assert close(ex.div_v(x, y), fd_div(ex.v, x, y))
    assert close(ex.grad_div_v(x, y), fd_grad(ex.div_v, x, y))
    curl = d_dx(lambda a, b: ex.v(a, b)[1], x, y) - d_dy(lambda a, b: ex.v(a, b)[0], x, y)
    assert close(ex.curl_v(x, y), curl)
    assert close(ex.grad_omega(x, y), fd_grad(ex.omega, x, y))


@pytest.mark.parametrize("P", CASES)
def test_forcing_terms_against_finite_differences(P):
    ex = manufactured_case(P)
    x, y = RNG_POINTS
    # momentum: -div(2 mu eps(u) - phi I) = b
    assert close(ex.b(x, y), -fd_div_tensor(ex.stress, x, y))
    # Brinkman: v/kappa + sqrt(nu/kappa) curl omega - (nu/kappa) grad div v + grad p = f
    g_om = fd_grad(ex.omega, x, y)
    f = (ex.v(x, y) / P.kappa + ex.scale * np.array([g_om[1], -g_om[0]])
         - (P.nu / P.kappa) * fd_grad(ex.div_v, x, y) + fd_grad(ex.p, x, y))
    assert close(ex.f(x, y), f)
    # mass balance
    g = (-(P.c0 + P.alpha**2 / P.lam) * ex.p(x, y) + (P.alpha / P.lam) * ex.phi(x, y)
         - fd_div(ex.v, x, y))
    assert close(ex.g(x, y), g)


def test_values_at_origin():
    ex = manufactured_case(ParameterSet())
    z = np.zeros(1)
    assert np.allclose(ex.u(z, z).ravel(), [0.0, 1.0])
    assert np.allclose(ex.v(z, z).ravel(), [0.0, 1.0])
    assert np.allclose(ex.p(z, z), 0.0)
    assert np.allclose(ex.omega(z, z), 0.0)
    # div u(0,0) = pi cos(0) + 0
    assert np.allclose(ex.phi(z, z), -np.pi)


def test_biot_limit_has_no_vorticity():
    ex = manufactured_case(ParameterSet(nu=0.0))
    x, y = RNG_POINTS
    assert np.all(ex.omega(x, y) == 0)
    assert np.all(ex.grad_omega(x, y) == 0)


def test_scale_is_square_root_of_ratio():
    ex = manufactured_case(ParameterSet(nu=4.0, kappa=0.25))
    x, y = RNG_POINTS
    assert np.allclose(ex.omega(x, y), 4.0 * ex.curl_v(x, y))


def _report(h, e):
    return ErrorReport(h=h, dofs=0, e_u=e, e_v=e, e_omega=e, e_phi=e, e_p=e, weighted=e)


@given(st.floats(0.5, 3.0), st.floats(1e-3, 10.0))
@settings(max_examples=30)
def test_rates_recover_power_law(order, c):
    reports = [_report(h, c * h**order) for h in (0.5, 0.25, 0.125)]
    rates = convergence_rates(reports)
    assert rates["e_u"][0] is None
    assert rates["e_u"][1] == pytest.approx(order, rel=1e-12)
    assert rates["weighted"][2] == pytest.approx(order, rel=1e-12)


def test_rates_skip_zero_and_nan():
    rates = convergence_rates([_report(0.5, 0.0), _report(0.25, 0.0), _report(0.125, math.nan)],
                              ["e_omega"])
    assert rates["e_omega"] == [None, None, None]
    assert convergence_rates([{"h": 1.0, "e_p": 1.0}, {"h": 0.5, "e_p": 0.25}],
                             ["e_p"])["e_p"] == [None, pytest.approx(2.0)]
    with pytest.raises(ValueError):
        convergence_rates([])


def test_kappa_must_be_positive():
    P = ParameterSet()
    object.__setattr__(P, "kappa", 0.0)
    with pytest.raises(ValueError):
        manufactured_case(P)


@pytest.mark.parametrize("k", [0, 1])
def test_interpolation_errors_converge(k):
    ex = manufactured_case(ParameterSet())
    reports = []
    for n in (4, 8):
        mesh = build_unit_square_mesh(n)
        reports.append(compute_errors(interpolate_exact(build_spaces(mesh, k), ex), ex))
    rates = convergence_rates(reports)
    for key in ("e_v", "e_omega", "e_phi", "e_p"):
        assert rates[key][1] == pytest.approx(k + 1, abs=0.2), key
    assert rates["e_u"][1] == pytest.approx(k + 2, abs=0.2)


@pytest.mark.parametrize("k", [0, 1])
@pytest.mark.parametrize("n", [4, 8])
def test_solution_is_quasi_optimal(k, n):
    """The weighted error of the discrete solution stays within a small
    factor of the interpolation error."""
    P = ParameterSet()
    ex = manufactured_case(P)
    mesh = build_unit_square_mesh(n)
    spaces = build_spaces(mesh, k)
    system = assemble_system(mesh, spaces, P, BoundarySpec(), ex)
    fields_ = system.to_fields(direct_solve(system.matrix, system.rhs))
    ratio = compute_errors(fields_, ex).weighted / compute_errors(
        interpolate_exact(spaces, ex), ex).weighted
    assert 0.5 <= ratio <= 2.0


def test_omitted_vorticity_counts_as_zero():
    P = ParameterSet()
    ex = manufactured_case(P)
    mesh = build_unit_square_mesh(2)
    fields_ = interpolate_exact(build_spaces(mesh, 0), ex)
    full = compute_errors(fields_, ex)
    without = compute_errors({k: v for k, v in fields_.items() if k != "omega"}, ex)
    assert without.e_omega > full.e_omega
    assert without.e_u == full.e_u
