"""Finite element spaces on triangle meshes.

Supported families:

* ``lagrange_cont`` -- continuous P1, P2, P3, scalar or 2-vector
* ``lagrange_disc`` -- discontinuous P0, P1 (nodal basis)
* ``raviart_thomas`` -- RT0, RT1

Bases are built on the reference triangle by inverting the degree-of-freedom
matrix of a monomial spanning set, then mapped to each cell: affinely for
Lagrange elements, by the contravariant Piola transform for Raviart-Thomas.
RT degrees of freedom are normal moments against shifted Legendre
polynomials on each edge (plus the cell averages of the two components for
RT1), so the global sign of edge moment ``m`` in a cell is ``s**(m + 1)``
with ``s`` the cell's edge orientation sign.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Iterable

import numpy as np

from .mesh import LOCAL_EDGES, Mesh
from .quadrature import edge_rule, triangle_rule

LAGRANGE_CONT = "lagrange_cont"
LAGRANGE_DISC = "lagrange_disc"
RAVIART_THOMAS = "raviart_thomas"

SUPPORTED = {
    (LAGRANGE_CONT, 1), (LAGRANGE_CONT, 2), (LAGRANGE_CONT, 3),
    (LAGRANGE_DISC, 0), (LAGRANGE_DISC, 1),
    (RAVIART_THOMAS, 0), (RAVIART_THOMAS, 1),
}

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


@dataclass(frozen=True)
class ParameterSet:
    """Model coefficients: Lame constants ``mu``, ``lam``, fluid viscosity
    ``nu``, permeability ``kappa``, storativity ``c0``, Biot-Willis ``alpha``.
    """

    mu: float = 1.0
    lam: float = 1.0
    nu: float = 1.0
    kappa: float = 1.0
    c0: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        for name in ("mu", "lam", "kappa"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        for name in ("nu", "c0", "alpha"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)!r}")

    def as_dict(self) -> dict:
        return {"mu": self.mu, "lambda": self.lam, "nu": self.nu,
                "kappa": self.kappa, "c0": self.c0, "alpha": self.alpha}


# ---------------------------------------------------------------------------
# reference elements


def _monomials(degree):
    return [(a, d - a) for d in range(degree + 1) for a in range(d, -1, -1)]


def _eval_monomials(exps, pts):
    x, y = pts[:, 0], pts[:, 1]
    vals = np.stack([x**a * y**b for a, b in exps], axis=-1)
    dx = np.stack([a * x ** max(a - 1, 0) * y**b for a, b in exps], axis=-1)
    dy = np.stack([b * x**a * y ** max(b - 1, 0) for a, b in exps], axis=-1)
    return vals, np.stack([dx, dy], axis=-1)


@dataclass(frozen=True, eq=False)
class LagrangeElement:
    degree: int
    nodes: np.ndarray
    coeffs: np.ndarray
    # number of nodes on each vertex, each edge, and the interior
    counts: tuple

    @property
    def n_local(self) -> int:
        return len(self.nodes)

    def tabulate(self, pts):
        """Values ``(nq, nloc)`` and reference gradients ``(nq, nloc, 2)``."""
        exps = _monomials(self.degree)
        vals, grads = _eval_monomials(exps, np.atleast_2d(pts))
        return vals @ self.coeffs, np.einsum("qmd,mi->qid", grads, self.coeffs)


@lru_cache(maxsize=None)
def lagrange_element(degree: int) -> LagrangeElement:
    centroid = np.array([[1.0 / 3.0, 1.0 / 3.0]])
    if degree == 0:
        nodes, counts = centroid, (0, 0, 1)
    else:
        pts = [REF_VERTICES]
        for a, b in LOCAL_EDGES:
            t = np.arange(1, degree)[:, None] / degree
            pts.append(REF_VERTICES[a] + t * (REF_VERTICES[b] - REF_VERTICES[a]))
        n_int = (degree - 1) * (degree - 2) // 2
        if n_int:
            if degree != 3:
                raise ValueError(f"Lagrange degree {degree} not supported")
            pts.append(centroid)
        nodes = np.vstack(pts)
        counts = (1, degree - 1, n_int)
    vander, _ = _eval_monomials(_monomials(degree), nodes)
    return LagrangeElement(degree, nodes, np.linalg.inv(vander), counts)


def _rt_span(k, pts):
    """Monomial spanning set of RT_k: values ``(nq, m, 2)``, divergence ``(nq, m)``."""
    x, y = pts[:, 0], pts[:, 1]
    one, zero = np.ones_like(x), np.zeros_like(x)
    if k == 0:
        vals = [(one, zero), (zero, one), (x, y)]
        divs = [zero, zero, 2 * one]
    else:
        vals = [(one, zero), (x, zero), (y, zero), (zero, one), (zero, x), (zero, y),
                (x * x, x * y), (x * y, y * y)]
        divs = [zero, one, zero, zero, zero, one, 3 * x, 3 * y]
    v = np.stack([np.stack(p, axis=-1) for p in vals], axis=1)
    return v, np.stack(divs, axis=1)


def edge_moment_weights(k, t):
    """Shifted Legendre polynomials ``P_m(2t - 1)``, ``m = 0..k``; shape ``(nq, k+1)``."""
    return np.stack([np.ones_like(t), 2 * t - 1][: k + 1], axis=-1)


@dataclass(frozen=True, eq=False)
class RaviartThomasElement:
    degree: int
    coeffs: np.ndarray

    @property
    def n_edge_dofs(self) -> int:
        return self.degree + 1

    @property
    def n_interior(self) -> int:
        return 2 if self.degree == 1 else 0

    @property
    def n_local(self) -> int:
        return 3 * self.n_edge_dofs + self.n_interior

    def tabulate(self, pts):
        """Reference values ``(nq, nloc, 2)`` and divergence ``(nq, nloc)``."""
        v, d = _rt_span(self.degree, np.atleast_2d(pts))
        return np.einsum("qmd,mi->qid", v, self.coeffs), d @ self.coeffs

    def dofs(self, fn: Callable[[np.ndarray], np.ndarray], quad_degree: int = 8) -> np.ndarray:
        """Apply the local DOF functionals to a reference-frame vector field.

        ``fn`` maps points ``(..., nq, 2)`` to values ``(..., nq, 2)``; any
        leading batch axes are kept.
        """
        er = edge_rule(quad_degree)
        q = edge_moment_weights(self.degree, er.points)
        out = []
        for a, b in LOCAL_EDGES:
            d = REF_VERTICES[b] - REF_VERTICES[a]
            pts = REF_VERTICES[a] + er.points[:, None] * d
            scaled_normal = np.array([d[1], -d[0]])  # outward normal times length
            vn = fn(pts) @ scaled_normal
            out.append(np.einsum("...q,q,qm->...m", vn, er.weights, q))
        if self.n_interior:
            tr = triangle_rule(quad_degree)
            out.append(np.einsum("...qd,q->...d", fn(tr.points), tr.weights))
        return np.concatenate(out, axis=-1)


@lru_cache(maxsize=None)
def raviart_thomas_element(k: int) -> RaviartThomasElement:
    probe = RaviartThomasElement(k, np.eye(3 if k == 0 else 8))
    dof_matrix = probe.dofs(lambda p: np.moveaxis(_rt_span(k, p)[0], 1, 0)).T
    return RaviartThomasElement(k, np.linalg.inv(dof_matrix))


# ---------------------------------------------------------------------------
# global spaces


@dataclass(frozen=True, eq=False)
class FeSpace:
    mesh: Mesh
    family: str
    degree: int
    value_rank: int
    element: object
    cell_dofs: np.ndarray
    cell_signs: np.ndarray
    n_dofs: int
    node_coords: np.ndarray | None = field(default=None, repr=False)
    essential_dofs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64),
                                       repr=False)
    essential_values: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    @property
    def is_vector(self) -> bool:
        return self.value_rank == 1

    @property
    def n_scalar(self) -> int:
        return self.n_dofs // 2 if self.is_vector else self.n_dofs

    @property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.essential_dofs] = False
        return np.flatnonzero(mask)

    def __repr__(self):
        return (f"FeSpace({self.family}, degree={self.degree}, "
                f"value_rank={self.value_rank}, n_dofs={self.n_dofs})")


@dataclass
class DiscreteField:
    space: FeSpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.n_dofs,):
            raise ValueError(f"expected {self.space.n_dofs} coefficients, "
                             f"got shape {self.coeffs.shape}")


def build_space(m: Mesh, family: str, degree: int, value_rank: int = 0) -> FeSpace:
    if (family, degree) not in SUPPORTED:
        raise ValueError(f"unsupported element {family} of degree {degree}")
    if family == RAVIART_THOMAS:
        if value_rank != 1:
            raise ValueError("Raviart-Thomas spaces are vector valued")
        return _build_rt(m, degree)
    if value_rank not in (0, 1):
        raise ValueError(f"value_rank must be 0 or 1, got {value_rank}")
    if family == LAGRANGE_DISC and value_rank:
        raise ValueError("vector discontinuous spaces are not supported")

    el = lagrange_element(degree)
    nc = m.n_cells
    if family == LAGRANGE_DISC:
        dofs = np.arange(nc * el.n_local).reshape(nc, el.n_local)
        n_scalar = nc * el.n_local
    else:
        n_vert, n_edge, n_int = el.counts
        dofs = [m.cells]
        base = m.n_vertices
        j = np.arange(n_edge)
        for i in range(3):
            e = m.cell_to_edges[:, i, None]
            forward = m.cell_edge_signs[:, i, None] > 0
            dofs.append(base + e * n_edge + np.where(forward, j, n_edge - 1 - j))
        base += m.n_edges * n_edge
        if n_int:
            dofs.append(base + np.arange(nc)[:, None] * n_int + np.arange(n_int))
        dofs = np.hstack(dofs)
        n_scalar = base + nc * n_int

    coords = np.empty((n_scalar, 2))
    coords[dofs] = _map_points(m, el.nodes)
    if value_rank:
        dofs = np.hstack([dofs, dofs + n_scalar])
        n_dofs = 2 * n_scalar
    else:
        n_dofs = n_scalar
    return FeSpace(m, family, degree, value_rank, el, dofs, np.ones(dofs.shape),
                   n_dofs, coords)


def _build_rt(m: Mesh, k: int) -> FeSpace:
    el = raviart_thomas_element(k)
    ne, ni = el.n_edge_dofs, el.n_interior
    dofs, signs = [], []
    for i in range(3):
        e = m.cell_to_edges[:, i, None]
        s = m.cell_edge_signs[:, i, None].astype(float)
        dofs.append(e * ne + np.arange(ne))
        signs.append(s ** (np.arange(ne) + 1))
    if ni:
        dofs.append(m.n_edges * ne + np.arange(m.n_cells)[:, None] * ni + np.arange(ni))
        signs.append(np.ones((m.n_cells, ni)))
    n_dofs = m.n_edges * ne + m.n_cells * ni
    return FeSpace(m, RAVIART_THOMAS, k, 1, el, np.hstack(dofs), np.hstack(signs), n_dofs)


def _map_points(m: Mesh, ref_pts, cells=None):
    """Physical coordinates ``(nc, nq, 2)`` of reference points in each cell."""
    cells = slice(None) if cells is None else cells
    x0 = m.vertices[m.cells[cells, 0]]
    return x0[:, None, :] + np.einsum("cij,qj->cqi", m.jacobians[cells], np.atleast_2d(ref_pts))


def map_points(m: Mesh, ref_pts, cells=None) -> np.ndarray:
    return _map_points(m, ref_pts, cells)


# ---------------------------------------------------------------------------
# basis evaluation


@dataclass
class BasisValues:
    """Physical basis data on a set of cells; axes are ``(cell, point, basis, ...)``.

    ``grad`` of a vector basis is indexed ``[..., component, derivative]``.
    ``curl`` is the vector curl ``(d/dy, -d/dx)`` for scalar bases and the
    scalar curl ``dv2/dx - dv1/dy`` for vector bases.
    """

    values: np.ndarray
    grad: np.ndarray | None = None
    div: np.ndarray | None = None
    curl: np.ndarray | None = None


def evaluate_basis(space: FeSpace, points, cells=None) -> BasisValues:
    """Evaluate the global basis functions of ``space`` at reference ``points``.

    Signs are already applied, so ``coeffs[space.cell_dofs] @ values`` gives
    field values.
    """
    m = space.mesh
    cells = np.arange(m.n_cells) if cells is None else np.asarray(cells)
    J = m.jacobians[cells]
    detJ = np.linalg.det(J)
    pts = np.atleast_2d(points)
    if space.family == RAVIART_THOMAS:
        v_ref, d_ref = space.element.tabulate(pts)
        sg = space.cell_signs[cells][:, None, :]
        values = np.einsum("cij,qnj->cqni", J, v_ref) / detJ[:, None, None, None]
        values *= sg[..., None]
        div = d_ref[None] / detJ[:, None, None] * sg
        return BasisValues(values, div=div)

    phi, dphi = space.element.tabulate(pts)
    Jinv_t = np.linalg.inv(J).transpose(0, 2, 1)
    grad = np.einsum("cij,qnj->cqni", Jinv_t, dphi)
    nc, nq, nloc = grad.shape[:3]
    if not space.is_vector:
        values = np.broadcast_to(phi[None], (nc, nq, nloc))
        curl = np.stack([grad[..., 1], -grad[..., 0]], axis=-1)
        return BasisValues(values, grad=grad, curl=curl)

    values = np.zeros((nc, nq, 2 * nloc, 2))
    values[:, :, :nloc, 0] = phi
    values[:, :, nloc:, 1] = phi
    vgrad = np.zeros((nc, nq, 2 * nloc, 2, 2))
    vgrad[:, :, :nloc, 0, :] = grad
    vgrad[:, :, nloc:, 1, :] = grad
    div = vgrad[..., 0, 0] + vgrad[..., 1, 1]
    curl = vgrad[..., 1, 0] - vgrad[..., 0, 1]
    return BasisValues(values, grad=vgrad, div=div, curl=curl)


def local_coeffs(space: FeSpace, coeffs, cells=None) -> np.ndarray:
    cells = slice(None) if cells is None else cells
    return np.asarray(coeffs)[space.cell_dofs[cells]]


def evaluate_field(space: FeSpace, coeffs, points, cells=None) -> BasisValues:
    """Field values and derivatives at reference ``points`` of each cell.

    Same layout as :class:`BasisValues` without the basis axis.
    """
    b = evaluate_basis(space, points, cells)
    c = local_coeffs(space, coeffs, cells)

    def contract(arr):
        if arr is None:
            return None
        return np.einsum("cqn...,cn->cq...", arr, c)

    return BasisValues(contract(b.values), contract(b.grad), contract(b.div), contract(b.curl))


# ---------------------------------------------------------------------------
# interpolation


def interpolate(space: FeSpace, f: Callable, quad_degree: int = 12) -> DiscreteField:
    """Canonical interpolant of an analytic field.

    ``f(x, y)`` takes coordinate arrays of any shape and returns an array of
    that shape (scalar) or with a leading axis of length 2 (vector).
    Continuous Lagrange spaces use nodal values, discontinuous ones the local
    L2 projection, Raviart-Thomas spaces the moment degrees of freedom.
    """
    m = space.mesh
    if space.family == LAGRANGE_CONT:
        vals = np.asarray(f(space.node_coords[:, 0], space.node_coords[:, 1]), dtype=float)
        coeffs = vals.ravel() if space.is_vector else np.broadcast_to(vals, (space.n_dofs,))
        return DiscreteField(space, np.array(coeffs))

    if space.family == LAGRANGE_DISC:
        rule = triangle_rule(quad_degree)
        phi, _ = space.element.tabulate(rule.points)
        x = _map_points(m, rule.points)
        fx = np.broadcast_to(f(x[..., 0], x[..., 1]), x.shape[:2])
        mass = phi.T @ (rule.weights[:, None] * phi)
        rhs = np.einsum("cq,q,qi->ci", fx, rule.weights, phi)
        local = np.linalg.solve(mass, rhs.T).T
        coeffs = np.empty(space.n_dofs)
        coeffs[space.cell_dofs] = local
        return DiscreteField(space, coeffs)

    J = m.jacobians
    detJ = np.linalg.det(J)
    Jinv = np.linalg.inv(J)
    x0 = m.vertices[m.cells[:, 0]]

    def pullback(ref_pts):
        x = x0[:, None, :] + np.einsum("cij,qj->cqi", J, ref_pts)
        fx = np.moveaxis(np.asarray(f(x[..., 0], x[..., 1]), dtype=float), 0, -1)
        fx = np.broadcast_to(fx, x.shape)
        return detJ[:, None, None] * np.einsum("cij,cqj->cqi", Jinv, fx)

    local = space.element.dofs(pullback, quad_degree) * space.cell_signs
    coeffs = np.empty(space.n_dofs)
    coeffs[space.cell_dofs] = local
    return DiscreteField(space, coeffs)


# ---------------------------------------------------------------------------
# essential boundary conditions and mean values


def boundary_dofs(space: FeSpace, tags: str | Iterable[str]) -> np.ndarray:
    """Global DOFs living on the closure of the edges with the given tag(s)."""
    m = space.mesh
    tags = [tags] if isinstance(tags, str) else list(tags)
    edges = np.flatnonzero(np.isin(m.boundary_tags, tags))
    if space.family == LAGRANGE_DISC or edges.size == 0:
        return np.zeros(0, dtype=np.int64)
    if space.family == RAVIART_THOMAS:
        ne = space.element.n_edge_dofs
        return (edges[:, None] * ne + np.arange(ne)).ravel()
    n_edge = space.element.counts[1]
    nodes = [np.unique(m.edges[edges].ravel())]
    if n_edge:
        nodes.append((m.n_vertices + edges[:, None] * n_edge + np.arange(n_edge)).ravel())
    nodes = np.concatenate(nodes)
    if space.is_vector:
        nodes = np.concatenate([nodes, nodes + space.n_scalar])
    return np.sort(nodes)


def set_essential_bc(space: FeSpace, boundary_tag: str | Iterable[str],
                     g: Callable | None = None, quad_degree: int = 12) -> FeSpace:
    """Copy of ``space`` with the DOFs on the tagged edges fixed.

    The prescribed values are those of the interpolant of ``g`` (zero when
    ``g`` is None): nodal values for Lagrange spaces and normal moments for
    Raviart-Thomas spaces.
    """
    dofs = boundary_dofs(space, boundary_tag)
    if g is None:
        values = np.zeros(dofs.size)
    else:
        values = interpolate(space, g, quad_degree).coeffs[dofs]
    return replace(space, essential_dofs=dofs, essential_values=values)


def mean_value_functional(space: FeSpace) -> np.ndarray:
    """Vector ``m`` with ``m @ c`` equal to the integral of the field ``c``."""
    if space.is_vector:
        raise ValueError("mean value functional needs a scalar space")
    rule = triangle_rule(max(space.degree, 1))
    phi, _ = space.element.tabulate(rule.points)
    local = np.outer(space.mesh.areas * 2.0, rule.weights @ phi)
    return np.bincount(space.cell_dofs.ravel(), weights=local.ravel(), minlength=space.n_dofs)
