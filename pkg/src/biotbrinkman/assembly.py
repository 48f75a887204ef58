"""Global assembly of the five-field Biot-Brinkman system.

Unknowns are ordered ``(u, v, omega, phi, p)``. The assembled rows are::

    [ A1    0     0    B1^T   0   ] u
    [ 0     A2   B2^T   0   Bh^T  ] v
    [ 0     B2   -A3    0     0   ] omega
    [ B1    0     0    -A4   B3   ] phi
    [ 0     Bh    0    B3^T  -A5  ] p

with ``A1 = 2 mu (eps, eps)``, ``A2 = (1/kappa)(v, z) + (nu/kappa)(div v, div z)``,
``B2 = sqrt(nu/kappa)(curl theta, v)``, ``A3 = (omega, theta)``,
``A4 = (1/lam)(phi, psi)``, ``B3 = (alpha/lam)(p, psi)``,
``A5 = (c0 + alpha^2/lam)(p, q)``, ``B1 = -(psi, div u)``, ``Bh = -(q, div v)``.

Essential conditions on gamma edges are lifted out of the system, so the
matrix acts on free DOFs only and stays symmetric.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from types import SimpleNamespace

import numpy as np
import scipy.sparse as sp

from .fe_spaces import (LAGRANGE_CONT, LAGRANGE_DISC, RAVIART_THOMAS, REF_VERTICES,
                        DiscreteField, FeSpace, ParameterSet, build_space,
                        evaluate_basis, evaluate_field, map_points, mean_value_functional,
                        set_essential_bc)
from .mesh import GAMMA, LOCAL_EDGES, SIGMA, BoundarySpec, Mesh, classify_boundary
from .quadrature import edge_rule, triangle_rule

FIELDS = ("u", "v", "omega", "phi", "p")
LOAD_DEGREE = 10


def build_spaces(mesh: Mesh, k: int) -> dict:
    """Discrete spaces for polynomial degree ``k`` in {0, 1}: continuous
    P(k+2) displacement, RT_k flux, continuous P(k+1) vorticity and
    discontinuous P_k total and fluid pressures."""
    if k not in (0, 1):
        raise ValueError(f"k must be 0 or 1, got {k!r}")
    return {
        "u": build_space(mesh, LAGRANGE_CONT, k + 2, 1),
        "v": build_space(mesh, RAVIART_THOMAS, k, 1),
        "omega": build_space(mesh, LAGRANGE_CONT, k + 1, 0),
        "phi": build_space(mesh, LAGRANGE_DISC, k, 0),
        "p": build_space(mesh, LAGRANGE_DISC, k, 0),
    }


def _poly_degree(space: FeSpace) -> int:
    return space.degree + 1 if space.family == RAVIART_THOMAS else space.degree


def _rule(*degrees):
    return triangle_rule(max(1, sum(degrees)))


def _weights(mesh: Mesh, rule) -> np.ndarray:
    return 2.0 * mesh.areas[:, None] * rule.weights[None, :]


def _assemble(local, row_space: FeSpace, col_space: FeSpace) -> sp.csr_matrix:
    nc, nr, ns = local.shape
    rows = np.broadcast_to(row_space.cell_dofs[:, :, None], local.shape)
    cols = np.broadcast_to(col_space.cell_dofs[:, None, :], local.shape)
    mat = sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())),
                        shape=(row_space.n_dofs, col_space.n_dofs))
    return mat.tocsr()


def _check_mesh(*spaces):
    mesh = spaces[0].mesh
    for s in spaces[1:]:
        if s.mesh is not mesh and s.mesh.n_cells != mesh.n_cells:
            raise ValueError("spaces are defined on different meshes")


# ---------------------------------------------------------------------------
# unweighted building blocks


def mass_matrix(space: FeSpace) -> sp.csr_matrix:
    """L2 Gram matrix of a scalar or vector space."""
    rule = _rule(_poly_degree(space), _poly_degree(space))
    b = evaluate_basis(space, rule.points)
    w = _weights(space.mesh, rule)
    if b.values.ndim == 4:
        local = np.einsum("cq,cqid,cqjd->cij", w, b.values, b.values)
    else:
        local = np.einsum("cq,cqi,cqj->cij", w, b.values, b.values)
    return _assemble(local, space, space)


def stiffness_matrix(space: FeSpace) -> sp.csr_matrix:
    """``(grad w, grad z)`` on a scalar Lagrange space."""
    d = max(_poly_degree(space) - 1, 0)
    rule = _rule(d, d)
    b = evaluate_basis(space, rule.points)
    local = np.einsum("cq,cqid,cqjd->cij", _weights(space.mesh, rule), b.grad, b.grad)
    return _assemble(local, space, space)


def div_div_matrix(space: FeSpace) -> sp.csr_matrix:
    d = _poly_degree(space) - 1
    rule = _rule(d, d)
    b = evaluate_basis(space, rule.points)
    local = np.einsum("cq,cqi,cqj->cij", _weights(space.mesh, rule), b.div, b.div)
    return _assemble(local, space, space)


def strain_matrix(space: FeSpace) -> sp.csr_matrix:
    """``(eps(u), eps(g))`` on a vector Lagrange space."""
    d = _poly_degree(space) - 1
    rule = _rule(d, d)
    b = evaluate_basis(space, rule.points)
    eps = 0.5 * (b.grad + np.swapaxes(b.grad, -1, -2))
    local = np.einsum("cq,cqiab,cqjab->cij", _weights(space.mesh, rule), eps, eps)
    return _assemble(local, space, space)


def div_coupling_matrix(q_space: FeSpace, vec_space: FeSpace) -> sp.csr_matrix:
    """``(q, div z)``; rows index ``q_space``, columns ``vec_space``."""
    _check_mesh(q_space, vec_space)
    rule = _rule(_poly_degree(q_space), _poly_degree(vec_space) - 1)
    q = evaluate_basis(q_space, rule.points)
    z = evaluate_basis(vec_space, rule.points)
    local = np.einsum("cq,cqi,cqj->cij", _weights(q_space.mesh, rule), q.values, z.div)
    return _assemble(local, q_space, vec_space)


def curl_coupling_matrix(w_space: FeSpace, v_space: FeSpace) -> sp.csr_matrix:
    """``(curl theta, z)`` with the vector curl of a scalar; rows index the
    scalar space."""
    _check_mesh(w_space, v_space)
    rule = _rule(_poly_degree(w_space) - 1, _poly_degree(v_space))
    th = evaluate_basis(w_space, rule.points)
    z = evaluate_basis(v_space, rule.points)
    local = np.einsum("cq,cqid,cqjd->cij", _weights(w_space.mesh, rule), th.curl, z.values)
    return _assemble(local, w_space, v_space)


def cross_mass_matrix(a: FeSpace, b: FeSpace) -> sp.csr_matrix:
    _check_mesh(a, b)
    rule = _rule(_poly_degree(a), _poly_degree(b))
    ba, bb = evaluate_basis(a, rule.points), evaluate_basis(b, rule.points)
    local = np.einsum("cq,cqi,cqj->cij", _weights(a.mesh, rule), ba.values, bb.values)
    return _assemble(local, a, b)


# ---------------------------------------------------------------------------
# weighted forms


def assemble_form_a1(u_space: FeSpace, params: ParameterSet) -> sp.csr_matrix:
    return 2.0 * params.mu * strain_matrix(u_space)


def assemble_form_a2(v_space: FeSpace, params: ParameterSet) -> sp.csr_matrix:
    a2 = mass_matrix(v_space) / params.kappa
    if params.nu:
        a2 = a2 + (params.nu / params.kappa) * div_div_matrix(v_space)
    return a2.tocsr()


def assemble_forms_b1_b1hat_b2_a3_a4_a5_b3(spaces: dict, params: ParameterSet) -> dict:
    """Remaining blocks, keyed ``b1`` (phi x u), ``b1hat`` (p x v),
    ``b2`` (omega x v), ``a3``, ``a4``, ``a5``, ``b3`` (phi x p)."""
    P = params
    m_q = mass_matrix(spaces["p"])
    if spaces["phi"].n_dofs == spaces["p"].n_dofs and spaces["phi"].degree == spaces["p"].degree:
        m_phi, m_cross = m_q, m_q
    else:
        m_phi, m_cross = mass_matrix(spaces["phi"]), cross_mass_matrix(spaces["phi"], spaces["p"])
    w_b2 = math.sqrt(P.nu / P.kappa)
    if w_b2:
        b2 = w_b2 * curl_coupling_matrix(spaces["omega"], spaces["v"])
    else:
        b2 = sp.csr_matrix((spaces["omega"].n_dofs, spaces["v"].n_dofs))
    b3 = (P.alpha / P.lam) * m_cross
    return {
        "b1": (-div_coupling_matrix(spaces["phi"], spaces["u"])).tocsr(),
        "b1hat": (-div_coupling_matrix(spaces["p"], spaces["v"])).tocsr(),
        "b2": b2.tocsr(),
        "a3": mass_matrix(spaces["omega"]),
        "a4": (m_phi / P.lam).tocsr(),
        "a5": ((P.c0 + P.alpha**2 / P.lam) * m_q).tocsr(),
        "b3": sp.csr_matrix(b3),
    }


def global_matrix(spaces: dict, params: ParameterSet) -> sp.csr_matrix:
    """Full symmetric operator on all DOFs (no boundary conditions)."""
    blocks = assemble_forms_b1_b1hat_b2_a3_a4_a5_b3(spaces, params)
    a1 = assemble_form_a1(spaces["u"], params)
    a2 = assemble_form_a2(spaces["v"], params)
    B = blocks
    grid = [
        [a1, None, None, B["b1"].T, None],
        [None, a2, B["b2"].T, None, B["b1hat"].T],
        [None, B["b2"], -B["a3"], None, None],
        [B["b1"], None, None, -B["a4"], B["b3"]],
        [None, B["b1hat"], None, B["b3"].T, -B["a5"]],
    ]
    sizes = [spaces[n].n_dofs for n in FIELDS]
    for i, row in enumerate(grid):
        for j, blk in enumerate(row):
            if blk is None:
                grid[i][j] = sp.csr_matrix((sizes[i], sizes[j]))
    return sp.bmat(grid, format="csr")


# ---------------------------------------------------------------------------
# loads


def _load_scalar(space: FeSpace, fn) -> np.ndarray:
    rule = triangle_rule(LOAD_DEGREE)
    x = map_points(space.mesh, rule.points)
    fx = np.broadcast_to(fn(x[..., 0], x[..., 1]), x.shape[:2])
    b = evaluate_basis(space, rule.points)
    local = np.einsum("cq,cq,cqi->ci", _weights(space.mesh, rule), fx, b.values)
    return np.bincount(space.cell_dofs.ravel(), local.ravel(), minlength=space.n_dofs)


def _load_vector(space: FeSpace, fn) -> np.ndarray:
    rule = triangle_rule(LOAD_DEGREE)
    x = map_points(space.mesh, rule.points)
    fx = np.moveaxis(np.broadcast_to(fn(x[..., 0], x[..., 1]), (2,) + x.shape[:2]), 0, -1)
    b = evaluate_basis(space, rule.points)
    local = np.einsum("cq,cqd,cqid->ci", _weights(space.mesh, rule), fx, b.values)
    return np.bincount(space.cell_dofs.ravel(), local.ravel(), minlength=space.n_dofs)


def boundary_edge_points(mesh: Mesh, edges: np.ndarray, degree: int = LOAD_DEGREE):
    """Quadrature data on boundary edges, grouped by local edge index.

    Yields ``(cells, ref_points, x, normals, weights)`` where ``x`` has shape
    ``(ne, nq, 2)``, ``normals`` are outward unit normals ``(ne, 2)`` and
    ``weights`` include the edge length ``(ne, nq)``.
    """
    rule = edge_rule(degree)
    owner = mesh.edge_cells[edges, 0]
    for i, (a, b) in enumerate(LOCAL_EDGES):
        sel = owner[:, 1] == i
        if not sel.any():
            continue
        cells = owner[sel, 0]
        ref = REF_VERTICES[a] + rule.points[:, None] * (REF_VERTICES[b] - REF_VERTICES[a])
        xv = mesh.vertices[mesh.cells[cells]]
        d = xv[:, b] - xv[:, a]
        length = np.hypot(d[:, 0], d[:, 1])
        normals = np.stack([d[:, 1], -d[:, 0]], axis=1) / length[:, None]
        x = xv[:, a][:, None, :] + rule.points[None, :, None] * d[:, None, :]
        yield cells, ref, x, normals, length[:, None] * rule.weights[None, :]


def _natural_loads(spaces: dict, params: ParameterSet, data, tag: str = SIGMA) -> dict:
    """Boundary terms from integration by parts on the natural part."""
    mesh = spaces["u"].mesh
    edges = mesh.edges_with_tag(tag)
    out = {name: np.zeros(spaces[name].n_dofs) for name in ("u", "v", "omega")}
    if edges.size == 0:
        return out
    scale = math.sqrt(params.nu / params.kappa)
    for cells, ref, x, n, w in boundary_edge_points(mesh, edges):
        X, Y = x[..., 0], x[..., 1]
        # u: (2 mu eps(u) - phi I) n . gamma
        traction = np.einsum("ijeq,ej->eqi", data.stress(X, Y), n)
        bu = evaluate_basis(spaces["u"], ref, cells)
        loc = np.einsum("eq,eqd,eqid->ei", w, traction, bu.values)
        np.add.at(out["u"], spaces["u"].cell_dofs[cells], loc)
        # v: ((nu/kappa) div v - p) zeta . n
        flux = (params.nu / params.kappa) * data.div_v(X, Y) - data.p(X, Y)
        bv = evaluate_basis(spaces["v"], ref, cells)
        zn = np.einsum("eqid,ed->eqi", bv.values, n)
        loc = np.einsum("eq,eq,eqi->ei", w, flux, zn)
        np.add.at(out["v"], spaces["v"].cell_dofs[cells], loc)
        # omega: -sqrt(nu/kappa) theta (v2 n1 - v1 n2)
        if scale:
            vv = data.v(X, Y)
            tang = vv[1] * n[:, 0, None] - vv[0] * n[:, 1, None]
            bw = evaluate_basis(spaces["omega"], ref, cells)
            loc = -scale * np.einsum("eq,eq,eqi->ei", w, tang, bw.values)
            np.add.at(out["omega"], spaces["omega"].cell_dofs[cells], loc)
    return out


def zero_data() -> SimpleNamespace:
    """Homogeneous data with the same interface as an exact solution."""
    z = lambda x, y: np.zeros_like(x)
    zv = lambda x, y: np.zeros((2,) + np.shape(x))
    zt = lambda x, y: np.zeros((2, 2) + np.shape(x))
    return SimpleNamespace(u=zv, v=zv, omega=z, phi=z, p=z, b=zv, f=zv, g=z,
                           stress=zt, div_v=z)


# ---------------------------------------------------------------------------
# the block system


@dataclass
class BlockSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    block_ranges: dict
    params: ParameterSet
    spaces: dict
    bc: BoundarySpec
    full_rhs: np.ndarray = field(repr=False, default=None)

    @property
    def mesh(self) -> Mesh:
        return self.spaces["u"].mesh

    @property
    def has_multipliers(self) -> bool:
        return "m_phi" in self.block_ranges

    @property
    def n_dofs(self) -> int:
        return self.matrix.shape[0]

    def block(self, row: str, col: str) -> sp.csr_matrix:
        return self.matrix[self.block_ranges[row], self.block_ranges[col]]

    def to_fields(self, x: np.ndarray) -> dict:
        """Full coefficient vectors, essential values restored."""
        out = {}
        for name in FIELDS:
            s = self.spaces[name]
            c = np.zeros(s.n_dofs)
            c[s.essential_dofs] = s.essential_values
            c[s.free_dofs] = x[self.block_ranges[name]]
            out[name] = DiscreteField(s, c)
        return out

    def from_fields(self, fields_: dict) -> np.ndarray:
        """Inverse of :meth:`to_fields` on the free DOFs; multipliers zero."""
        x = np.zeros(self.n_dofs)
        for name in FIELDS:
            x[self.block_ranges[name]] = fields_[name].coeffs[self.spaces[name].free_dofs]
        return x


def assemble_system(mesh: Mesh, spaces: dict, params: ParameterSet, bc: BoundarySpec,
                    data=None, multipliers: bool | None = None) -> BlockSystem:
    """Assemble the lifted system for the given data.

    ``data`` provides ``b, f, g`` and the boundary data ``u, v, omega``
    (essential, on gamma), ``stress, div_v, p, v`` (natural, on sigma) and
    ``phi, p`` for the mean values; an :class:`~biotbrinkman.mms.ExactSolution`
    fits. Mean-value multiplier rows are added by default when every
    boundary edge is essential.
    """
    for name in FIELDS:
        if spaces[name].mesh.n_cells != mesh.n_cells:
            raise ValueError(f"space {name!r} does not belong to this mesh")
    mesh = classify_boundary(mesh, bc)
    data = zero_data() if data is None else data
    if multipliers is None:
        multipliers = bc.mode == "all_dirichlet"

    spaces = {name: _rebind(s, mesh) for name, s in spaces.items()}
    spaces["u"] = set_essential_bc(spaces["u"], GAMMA, data.u)
    spaces["v"] = set_essential_bc(spaces["v"], GAMMA, data.v)
    spaces["omega"] = set_essential_bc(spaces["omega"], GAMMA, data.omega)

    K = global_matrix(spaces, params)
    natural = _natural_loads(spaces, params, data)
    F = np.concatenate([
        _load_vector(spaces["u"], data.b) + natural["u"],
        _load_vector(spaces["v"], data.f) + natural["v"],
        natural["omega"],
        np.zeros(spaces["phi"].n_dofs),
        _load_scalar(spaces["p"], data.g),
    ])

    offsets = np.cumsum([0] + [spaces[n].n_dofs for n in FIELDS])
    free = np.concatenate([offsets[i] + spaces[n].free_dofs for i, n in enumerate(FIELDS)])
    fixed = np.concatenate([offsets[i] + spaces[n].essential_dofs for i, n in enumerate(FIELDS)])
    lift = np.concatenate([spaces[n].essential_values for n in FIELDS])
    K_free = K[free][:, free]
    rhs = F[free] - K[free][:, fixed] @ lift

    ranges, start = {}, 0
    for n in FIELDS:
        size = spaces[n].free_dofs.size
        ranges[n] = slice(start, start + size)
        start += size

    if multipliers:
        rows, vals = [], []
        for name in ("phi", "p"):
            m = np.zeros(start)
            m[ranges[name]] = mean_value_functional(spaces[name])[spaces[name].free_dofs]
            rows.append(m)
            vals.append(_integral(mesh, getattr(data, name)))
        C = sp.csr_matrix(np.array(rows))
        K_free = sp.bmat([[K_free, C.T], [C, None]], format="csr")
        rhs = np.concatenate([rhs, vals])
        ranges["m_phi"] = slice(start, start + 1)
        ranges["m_p"] = slice(start + 1, start + 2)

    K_free.sort_indices()
    return BlockSystem(K_free, rhs, ranges, params, spaces, bc, full_rhs=F)


def _rebind(space: FeSpace, mesh: Mesh) -> FeSpace:
    return replace(space, mesh=mesh)


def _integral(mesh: Mesh, fn) -> float:
    rule = triangle_rule(LOAD_DEGREE)
    x = map_points(mesh, rule.points)
    fx = np.broadcast_to(fn(x[..., 0], x[..., 1]), x.shape[:2])
    return float(np.sum(_weights(mesh, rule) * fx))


# ---------------------------------------------------------------------------
# mass balance residual


def loss_of_mass(fields_: dict, params: ParameterSet, g, quad_degree: int = LOAD_DEGREE) -> float:
    """Max-norm of the L2 projection onto the pressure space of
    ``-(c0 + alpha^2/lam) p_h + (alpha/lam) phi_h - div v_h - g``."""
    Q = fields_["p"].space
    if fields_["phi"].space.n_dofs != Q.n_dofs:
        raise ValueError("total and fluid pressure must share a space")
    rule = triangle_rule(quad_degree)
    mesh = Q.mesh
    w = _weights(mesh, rule)
    bq = evaluate_basis(Q, rule.points)
    x = map_points(mesh, rule.points)
    divv = evaluate_field(fields_["v"].space, fields_["v"].coeffs, rule.points).div
    pv = evaluate_field(Q, fields_["p"].coeffs, rule.points).values
    phv = evaluate_field(Q, fields_["phi"].coeffs, rule.points).values
    resid = (-(params.c0 + params.alpha**2 / params.lam) * pv + (params.alpha / params.lam) * phv
             - divv - np.broadcast_to(g(x[..., 0], x[..., 1]), pv.shape))
    rhs = np.einsum("cq,cq,cqi->ci", w, resid, bq.values)
    mass = np.einsum("cq,cqi,cqj->cij", w, bq.values, bq.values)
    proj = np.linalg.solve(mass, rhs[..., None])[..., 0]
    return float(np.abs(proj).max())
