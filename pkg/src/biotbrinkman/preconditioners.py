"""Parameter-weighted block-diagonal preconditioners for MINRES.

Each diagonal block is the Galerkin matrix of one term of the weighted
norm, restricted to the free DOFs of the system, and is applied through a
sparse factorization. Three variants differ in the pressure blocks:

``B1``
    ``(c0 + alpha^2/lam + kappa) M`` for the fluid pressure.
``B2``
    ``(c0 + alpha^2/lam) M + kappa L`` with ``L`` the DG Laplacian.
``B3``
    the coupled pair ``M1^-1 + M2^-1`` acting on ``(phi, p)`` together, and
    a flux block with divergence weight ``1 + nu/kappa``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import div_div_matrix, mass_matrix, stiffness_matrix, strain_matrix
from .fe_spaces import LAGRANGE_DISC, FeSpace, ParameterSet
from .mesh import GAMMA, INTERIOR, SIGMA, Mesh
from .quadrature import edge_rule
from .solvers import Factorization, factorize

VARIANTS = ("B1", "B2", "B3")
# which boundary facets carry the penalty term of the DG Laplacian
DG_BOUNDARY_CHOICES = ("gamma", "sigma", "all", "none")
DEFAULT_DG_BOUNDARY = "sigma"


def _cell_values(eta, n_cells: int) -> np.ndarray:
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (n_cells,)).copy()
    if np.any(eta < 0) or not np.all(np.isfinite(eta)):
        raise ValueError("eta must be finite and nonnegative")
    return eta


def _boundary_edge_set(mesh: Mesh, which: str) -> np.ndarray:
    if which not in DG_BOUNDARY_CHOICES:
        raise ValueError(f"dg boundary must be one of {DG_BOUNDARY_CHOICES}, got {which!r}")
    if which == "none":
        return np.empty(0, dtype=np.int64)
    if which == "all":
        return mesh.boundary_edges
    return mesh.edges_with_tag(GAMMA if which == "gamma" else SIGMA)


def _edge_basis(space: FeSpace, cells: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Values of the local basis of ``cells`` at physical points ``x``
    (shape ``(ne, nq, 2)``); returns ``(ne, nq, nloc)``."""
    m = space.mesh
    x0 = m.vertices[m.cells[cells, 0]]
    Jinv = np.linalg.inv(m.jacobians[cells])
    ref = np.einsum("eij,eqj->eqi", Jinv, x - x0[:, None, :])
    vals, _ = space.element.tabulate(ref.reshape(-1, 2))
    return vals.reshape(x.shape[0], x.shape[1], -1)


def dg_laplacian(p_space: FeSpace, eta=1.0, mesh: Mesh | None = None,
                 boundary: str = DEFAULT_DG_BOUNDARY) -> sp.csr_matrix:
    """Interior-penalty Laplacian on a discontinuous pressure space::

        sum_K (eta grad p, grad q)_K
          + sum_{interior e} (avg eta / h_e) <[p], [q]>_e
          + sum_{boundary e} (eta / h_e) <p, q>_e

    with ``h_e`` the facet length. The volume term vanishes for piecewise
    constants. ``boundary`` selects the penalized boundary facets by tag.
    """
    if p_space.family != LAGRANGE_DISC or p_space.is_vector:
        raise ValueError("dg_laplacian needs a scalar discontinuous Lagrange space")
    mesh = p_space.mesh if mesh is None else mesh
    eta = _cell_values(eta, mesh.n_cells)
    n = p_space.n_dofs
    rows, cols, vals = [], [], []

    if p_space.degree > 0:
        K = stiffness_matrix(p_space)
        # stiffness is block diagonal per cell for a discontinuous space
        cell_of_dof = np.empty(n, dtype=np.int64)
        cell_of_dof[p_space.cell_dofs] = np.arange(mesh.n_cells)[:, None]
        Kc = K.tocoo()
        rows.append(Kc.row)
        cols.append(Kc.col)
        vals.append(Kc.data * eta[cell_of_dof[Kc.row]])

    rule = edge_rule(max(1, 2 * p_space.degree))
    a = mesh.vertices[mesh.edges[:, 0]]
    d = mesh.vertices[mesh.edges[:, 1]] - a
    h = mesh.edge_lengths

    interior = np.flatnonzero(mesh.boundary_tags == INTERIOR)
    if interior.size:
        ec = mesh.edge_cells[interior]
        cp, cm = ec[:, 0, 0], ec[:, 1, 0]
        x = a[interior, None, :] + rule.points[None, :, None] * d[interior, None, :]
        jump = np.concatenate([_edge_basis(p_space, cp, x), -_edge_basis(p_space, cm, x)], axis=2)
        coef = 0.5 * (eta[cp] + eta[cm]) / h[interior]
        # h_e from the penalty cancels against the edge length in the weights
        w = (coef * h[interior])[:, None] * rule.weights[None, :]
        local = np.einsum("eq,eqi,eqj->eij", w, jump, jump)
        dofs = np.concatenate([p_space.cell_dofs[cp], p_space.cell_dofs[cm]], axis=1)
        rows.append(np.broadcast_to(dofs[:, :, None], local.shape).ravel())
        cols.append(np.broadcast_to(dofs[:, None, :], local.shape).ravel())
        vals.append(local.ravel())

    bnd = _boundary_edge_set(mesh, boundary)
    if bnd.size:
        c = mesh.edge_cells[bnd, 0, 0]
        x = a[bnd, None, :] + rule.points[None, :, None] * d[bnd, None, :]
        phi = _edge_basis(p_space, c, x)
        w = eta[c][:, None] * rule.weights[None, :]
        local = np.einsum("eq,eqi,eqj->eij", w, phi, phi)
        dofs = p_space.cell_dofs[c]
        rows.append(np.broadcast_to(dofs[:, :, None], local.shape).ravel())
        cols.append(np.broadcast_to(dofs[:, None, :], local.shape).ravel())
        vals.append(local.ravel())

    if not rows:
        return sp.csr_matrix((n, n))
    mat = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n, n)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def _restrict(mat, space: FeSpace) -> sp.csr_matrix:
    free = space.free_dofs
    return sp.csr_matrix(mat[free][:, free])


@dataclass
class BlockPreconditioner:
    """Block-diagonal operator ``r -> B r``.

    ``blocks`` maps a name to ``(index, matrix)`` where ``index`` addresses
    the system vector; for ``B3`` the entry ``"pressure"`` covers ``phi``
    and ``p`` together and holds ``M1``, with ``M2`` in ``extra``.
    """

    variant: str
    n_dofs: int
    blocks: dict
    factors: dict
    multipliers: np.ndarray
    extra: dict = field(default_factory=dict)

    def apply(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if r.shape != (self.n_dofs,):
            raise ValueError(f"expected a vector of length {self.n_dofs}, got {r.shape}")
        out = np.zeros_like(r)
        for name, (idx, _) in self.blocks.items():
            out[idx] = self.factors[name].solve(r[idx])
            if name == "pressure":
                out[idx] += self.factors["pressure_2"].solve(r[idx])
        out[self.multipliers] = r[self.multipliers]
        return out

    __call__ = apply

    def norm_matrix(self) -> np.ndarray:
        """Dense matrix ``B^-1`` of the Riesz norm realized by the blocks."""
        N = np.zeros((self.n_dofs, self.n_dofs))
        for name, (idx, mat) in self.blocks.items():
            dense = mat.toarray()
            if name == "pressure":
                m2 = self.extra["M2"].toarray()
                dense = np.linalg.inv(np.linalg.inv(dense) + np.linalg.inv(m2))
                dense = 0.5 * (dense + dense.T)
            N[np.ix_(idx, idx)] = dense
        N[self.multipliers, self.multipliers] = 1.0
        return N


def _indices(system, *names) -> np.ndarray:
    return np.concatenate([np.arange(system.n_dofs)[system.block_ranges[n]] for n in names])


def build_preconditioner(variant: str, system, dg_boundary: str = DEFAULT_DG_BOUNDARY,
                         check_spd: bool = True) -> BlockPreconditioner:
    """Assemble and factorize the diagonal blocks for ``system`` (a
    :class:`~biotbrinkman.assembly.BlockSystem`). Every block is factorized
    with the SPD test on, so a block that is not positive definite raises
    an error naming it."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown preconditioner {variant!r}; choose from {VARIANTS}")
    P: ParameterSet = system.params
    S = system.spaces
    mesh = system.mesh

    m_v = mass_matrix(S["v"])
    w_div = P.nu / P.kappa + (1.0 if variant == "B3" else 0.0)
    v_block = m_v / P.kappa
    if w_div:
        v_block = v_block + w_div * div_div_matrix(S["v"])
    om_block = mass_matrix(S["omega"])
    if P.nu:
        om_block = om_block + P.nu * stiffness_matrix(S["omega"])

    mats = {
        "u": 2.0 * P.mu * _restrict(strain_matrix(S["u"]), S["u"]),
        "v": _restrict(v_block, S["v"]),
        "omega": _restrict(om_block, S["omega"]),
    }
    M = _restrict(mass_matrix(S["p"]), S["p"])
    a_phi = 1.0 / P.lam + 1.0 / (2.0 * P.mu)
    c = P.c0 + P.alpha**2 / P.lam
    extra = {}
    if variant in ("B2", "B3"):
        L = _restrict(dg_laplacian(S["p"], 1.0, mesh, dg_boundary), S["p"])
        extra["L"] = L

    # a field can be fully constrained on very coarse meshes
    blocks = {name: (_indices(system, name), mat) for name, mat in mats.items()
              if mat.shape[0]}
    if variant == "B3":
        b = P.alpha / P.lam
        M1 = sp.bmat([[a_phi * M, b * M], [b * M, (1.0 + c) * M]], format="csr")
        M2 = sp.bmat([[a_phi * M, b * M], [b * M, c * M + P.kappa * extra["L"]]], format="csr")
        blocks["pressure"] = (_indices(system, "phi", "p"), M1)
        extra["M2"] = M2
    else:
        blocks["phi"] = (_indices(system, "phi"), (a_phi * M).tocsr())
        p_mat = (c + P.kappa) * M if variant == "B1" else c * M + P.kappa * extra["L"]
        blocks["p"] = (_indices(system, "p"), sp.csr_matrix(p_mat))

    factors: dict[str, Factorization] = {}
    for name, (_, mat) in blocks.items():
        factors[name] = factorize(mat, spd_hint=check_spd, name=name, refine_steps=0)
    if variant == "B3":
        factors["pressure_2"] = factorize(extra["M2"], spd_hint=check_spd, name="pressure (M2)",
                                          refine_steps=0)

    mult = [n for n in ("m_phi", "m_p") if n in system.block_ranges]
    mult_idx = _indices(system, *mult) if mult else np.empty(0, dtype=np.int64)
    return BlockPreconditioner(variant, system.n_dofs, blocks, factors, mult_idx, extra)
