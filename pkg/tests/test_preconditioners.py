import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from biotbrinkman.assembly import assemble_system, build_spaces
from biotbrinkman.fe_spaces import LAGRANGE_CONT, LAGRANGE_DISC, ParameterSet, build_space
from biotbrinkman.mesh import BoundarySpec, build_unit_square_mesh, classify_boundary
from biotbrinkman.mms import manufactured_case
from biotbrinkman.preconditioners import (DG_BOUNDARY_CHOICES, VARIANTS, build_preconditioner,
                                          dg_laplacian)
from biotbrinkman.solvers import minres

MIXED = BoundarySpec("mixed")
DIRICHLET = BoundarySpec("all_dirichlet")
GRID = [ParameterSet(lam=lam, nu=nu, kappa=kappa, c0=c0)
        for lam in (1.0, 1e8) for nu in (1e-8, 1.0) for kappa in (1e-8, 1.0) for c0 in (1e-8, 1.0)]


def _system(n, P, bc=MIXED, k=0):
    mesh = build_unit_square_mesh(n)
    return assemble_system(mesh, build_spaces(mesh, k), P, bc, manufactured_case(P))


def test_dg_laplacian_single_square():
    q = build_space(build_unit_square_mesh(1), LAGRANGE_DISC, 0)
    assert np.allclose(dg_laplacian(q, boundary="none").toarray(), [[1, -1], [-1, 1]])
    assert np.allclose(dg_laplacian(q, boundary="all").toarray(), [[3, -1], [-1, 3]])
    assert np.allclose(dg_laplacian(q, eta=0.0, boundary="all").toarray(), 0.0)
    assert np.allclose(dg_laplacian(q, eta=2.5, boundary="all").toarray(),
                       2.5 * np.array([[3, -1], [-1, 3]]))


def test_dg_laplacian_boundary_sets():
    mesh = classify_boundary(build_unit_square_mesh(2), MIXED)
    q = build_space(mesh, LAGRANGE_DISC, 0)
    one = np.ones(q.n_dofs)
    # constants only see the boundary penalty, which is 1/h_e * h_e = 1 per edge
    totals = {b: one @ dg_laplacian(q, boundary=b) @ one for b in DG_BOUNDARY_CHOICES}
    assert totals == pytest.approx({"none": 0.0, "gamma": 4.0, "sigma": 4.0, "all": 8.0})


@pytest.mark.parametrize("degree", [0, 1])
@pytest.mark.parametrize("boundary", DG_BOUNDARY_CHOICES)
def test_dg_laplacian_symmetric_semidefinite(degree, boundary):
    mesh = classify_boundary(build_unit_square_mesh(3), MIXED)
    q = build_space(mesh, LAGRANGE_DISC, degree)
    eta = np.random.default_rng(0).uniform(0.5, 2.0, mesh.n_cells)
    L = dg_laplacian(q, eta, boundary=boundary).toarray()
    assert np.allclose(L, L.T, atol=1e-13)
    eig = np.linalg.eigvalsh(L)
    assert eig.min() >= -1e-12
    if boundary == "none":
        assert np.allclose(L @ np.ones(q.n_dofs), 0.0, atol=1e-12)
        assert np.sum(eig < 1e-10) == 1
    else:
        assert eig.min() > 1e-8


def test_dg_laplacian_p1_matches_continuous_stiffness_on_continuous_fields():
    """For a continuous field the jumps vanish and only the volume term remains."""
    mesh = build_unit_square_mesh(3)
    q = build_space(mesh, LAGRANGE_DISC, 1)
    c = build_space(mesh, LAGRANGE_CONT, 1)
    f = lambda x, y: 2 * x - y
    from biotbrinkman.fe_spaces import interpolate
    qc = interpolate(q, f).coeffs
    assert qc @ dg_laplacian(q, boundary="none") @ qc == pytest.approx(5.0, abs=1e-12)


def test_dg_laplacian_rejects_other_spaces():
    mesh = build_unit_square_mesh(1)
    with pytest.raises(ValueError):
        dg_laplacian(build_space(mesh, LAGRANGE_CONT, 1))
    with pytest.raises(ValueError):
        dg_laplacian(build_space(mesh, LAGRANGE_DISC, 0), boundary="left")
    with pytest.raises(ValueError):
        dg_laplacian(build_space(mesh, LAGRANGE_DISC, 0), eta=-1.0)


@pytest.mark.parametrize("bc", [MIXED, DIRICHLET])
def test_b3_pressure_block_against_dense_inverses(bc):
    system = _system(1, ParameterSet(lam=3.0, kappa=0.2, c0=0.5, alpha=0.7), bc)
    pc = build_preconditioner("B3", system)
    idx, M1 = pc.blocks["pressure"]
    M2 = pc.extra["M2"]
    expected = np.linalg.inv(M1.toarray()) + np.linalg.inv(M2.toarray())
    r = np.random.default_rng(1).standard_normal(system.n_dofs)
    out = pc(r)
    assert np.allclose(out[idx], expected @ r[idx], rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("P", GRID[::3])
def test_every_block_is_spd(variant, P):
    system = _system(2, P)
    pc = build_preconditioner(variant, system)
    mats = [m for _, m in pc.blocks.values()] + ([pc.extra["M2"]] if variant == "B3" else [])
    for m in mats:
        d = m.toarray()
        assert np.allclose(d, d.T, rtol=0, atol=1e-12 * np.abs(d).max())
        assert np.linalg.eigvalsh(d).min() > 0
    assert all(f.spd for f in pc.factors.values())


@pytest.mark.parametrize("variant", VARIANTS)
def test_preconditioner_is_symmetric_positive(variant):
    system = _system(2, ParameterSet(nu=0.3, kappa=0.1), DIRICHLET)
    pc = build_preconditioner(variant, system)
    rng = np.random.default_rng(2)
    for _ in range(5):
        x, y = rng.standard_normal((2, system.n_dofs))
        assert x @ pc(y) == pytest.approx(y @ pc(x), rel=1e-10)
        assert x @ pc(x) > 0


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("bc", [MIXED, DIRICHLET])
def test_norm_matrix_is_inverse_of_apply(variant, bc):
    system = _system(1, ParameterSet(kappa=0.5), bc)
    pc = build_preconditioner(variant, system)
    N = pc.norm_matrix()
    r = np.random.default_rng(3).standard_normal(system.n_dofs)
    assert np.allclose(N @ pc(r), r, atol=1e-10)


def test_b1_b2_agree_as_permeability_vanishes():
    gaps = []
    for kappa in (1e-2, 1e-4, 1e-6):
        system = _system(2, ParameterSet(kappa=kappa))
        p1 = build_preconditioner("B1", system).blocks["p"][1].toarray()
        p2 = build_preconditioner("B2", system).blocks["p"][1].toarray()
        gaps.append(np.abs(p1 - p2).max())
    assert gaps[1] < 1e-1 * gaps[0] and gaps[2] < 1e-1 * gaps[1]
    assert gaps[2] <= 1e-4


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("bc", [MIXED, DIRICHLET])
def test_variants_converge_on_coarse_mesh(variant, bc):
    system = _system(2, ParameterSet(), bc)
    pc = build_preconditioner(variant, system)
    _, rep = minres(system.matrix, pc, system.rhs, rel_tol=1e-6, max_iter=100)
    assert rep.converged


def test_input_validation():
    system = _system(1, ParameterSet())
    with pytest.raises(ValueError):
        build_preconditioner("B4", system)
    pc = build_preconditioner("B1", system)
    with pytest.raises(ValueError):
        pc(np.zeros(system.n_dofs + 1))


@given(st.sampled_from(GRID), st.sampled_from(VARIANTS))
@settings(max_examples=12, deadline=None)
def test_blocks_cover_every_unknown(P, variant):
    system = _system(1, P, DIRICHLET)
    pc = build_preconditioner(variant, system)
    covered = np.concatenate([idx for idx, _ in pc.blocks.values()] + [pc.multipliers])
    assert np.array_equal(np.sort(covered), np.arange(system.n_dofs))
