"""Uniform triangulations of the unit square.

Cells are counter-clockwise vertex triples. Local edge ``i`` of a cell is the
edge opposite local vertex ``i`` and is traversed counter-clockwise, i.e.
``(v1, v2)``, ``(v2, v0)``, ``(v0, v1)``. Every edge carries a global
orientation from its lower to its higher vertex index; ``cell_edge_signs`` is
+1 where the local traversal agrees with it.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

INTERIOR = "interior"
GAMMA = "gamma"
SIGMA = "sigma"

LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])

_COORD_TOL = 1e-12


@dataclass(frozen=True)
class BoundarySpec:
    """How boundary edges are split between the essential part and the rest.

    ``all_dirichlet`` puts every boundary edge in gamma. ``mixed`` puts the
    edges on ``x = 0`` or ``y = 0`` in gamma and the remaining ones in sigma.
    """

    mode: str = "all_dirichlet"

    def __post_init__(self):
        if self.mode not in ("all_dirichlet", "mixed"):
            raise ValueError(f"unknown boundary mode {self.mode!r}")


@dataclass(frozen=True, eq=False)
class Mesh:
    n: int
    vertices: np.ndarray
    cells: np.ndarray
    edges: np.ndarray
    cell_to_edges: np.ndarray
    cell_edge_signs: np.ndarray
    boundary_tags: np.ndarray = field(repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @cached_property
    def h_max(self) -> float:
        """Largest cell diameter (longest edge for triangles)."""
        return float(self.edge_lengths[self.cell_to_edges].max())

    @cached_property
    def jacobians(self) -> np.ndarray:
        """Affine map Jacobians, shape ``(n_cells, 2, 2)``; columns are the
        edge vectors ``x1 - x0`` and ``x2 - x0``."""
        x = self.vertices[self.cells]
        return np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]], axis=-1)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.det(self.jacobians)

    @cached_property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def edge_normals(self) -> np.ndarray:
        """Unit normals of the globally oriented edges, the tangent rotated
        clockwise. These are not outward on every boundary edge; see
        :func:`biotbrinkman.assembly.boundary_edge_points` for outward ones."""
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.stack([d[:, 1], -d[:, 0]], axis=1) / self.edge_lengths[:, None]

    @cached_property
    def edge_cells(self) -> np.ndarray:
        """For each edge the adjacent ``(cell, local_edge)`` pairs, shape
        ``(n_edges, 2, 2)``; the second slot is ``-1`` on boundary edges.
        The first slot is the cell where the edge has sign +1 whenever such
        a cell exists."""
        out = -np.ones((self.n_edges, 2, 2), dtype=np.int64)
        for c in range(self.n_cells):
            for i in range(3):
                e = self.cell_to_edges[c, i]
                slot = 0 if self.cell_edge_signs[c, i] > 0 else 1
                if out[e, slot, 0] >= 0:
                    slot = 1 - slot
                out[e, slot] = (c, i)
        boundary = out[:, 0, 0] < 0
        out[boundary, 0] = out[boundary, 1]
        out[boundary, 1] = -1
        return out

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_tags != INTERIOR)

    def edges_with_tag(self, tag: str) -> np.ndarray:
        return np.flatnonzero(self.boundary_tags == tag)

    def min_angles(self) -> np.ndarray:
        """Smallest interior angle of every cell, radians."""
        x = self.vertices[self.cells]
        angles = []
        for i in range(3):
            a = x[:, (i + 1) % 3] - x[:, i]
            b = x[:, (i + 2) % 3] - x[:, i]
            cos = np.einsum("ij,ij->i", a, b) / (
                np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles.append(np.arccos(np.clip(cos, -1.0, 1.0)))
        return np.min(angles, axis=0)

    def to_text(self) -> str:
        """Plain-text dump of vertices and cells, for debugging."""
        lines = [f"vertices {self.n_vertices}"]
        lines += [f"{x:.17g} {y:.17g}" for x, y in self.vertices]
        lines.append(f"cells {self.n_cells}")
        lines += [" ".join(map(str, c)) for c in self.cells]
        return "\n".join(lines) + "\n"


def build_unit_square_mesh(n: int) -> Mesh:
    """Uniform ``n x n`` grid of squares, each cut by its lower-left to
    upper-right diagonal. All boundary edges are tagged gamma."""
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    t = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(t, t)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    v00 = (i + j * (n + 1)).ravel()
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    cells = np.empty((2 * n * n, 3), dtype=np.int64)
    cells[0::2] = lower
    cells[1::2] = upper

    local = cells[:, LOCAL_EDGES]  # (nc, 3, 2) in ccw traversal order
    signs = np.where(local[..., 0] < local[..., 1], 1, -1)
    keys = np.sort(local, axis=-1).reshape(-1, 2)
    edges, inverse = np.unique(keys, axis=0, return_inverse=True)
    cell_to_edges = inverse.reshape(-1, 3)

    mesh = Mesh(n=n, vertices=vertices, cells=cells, edges=edges,
                cell_to_edges=cell_to_edges, cell_edge_signs=signs,
                boundary_tags=np.full(len(edges), INTERIOR, dtype="<U8"))
    return classify_boundary(mesh, BoundarySpec("all_dirichlet"))


def refine_uniform(m: Mesh) -> Mesh:
    refined = build_unit_square_mesh(2 * m.n)
    if m.edges_with_tag(SIGMA).size:
        refined = classify_boundary(refined, BoundarySpec("mixed"))
    return refined


def classify_boundary(m: Mesh, spec: BoundarySpec) -> Mesh:
    counts = np.bincount(m.cell_to_edges.ravel(), minlength=m.n_edges)
    tags = np.full(m.n_edges, INTERIOR, dtype="<U8")
    on_boundary = counts == 1
    if spec.mode == "all_dirichlet":
        tags[on_boundary] = GAMMA
    else:
        mid = 0.5 * (m.vertices[m.edges[:, 0]] + m.vertices[m.edges[:, 1]])
        on_axes = (np.abs(mid[:, 0]) < _COORD_TOL) | (np.abs(mid[:, 1]) < _COORD_TOL)
        tags[on_boundary & on_axes] = GAMMA
        tags[on_boundary & ~on_axes] = SIGMA
    return replace(m, boundary_tags=tags)
