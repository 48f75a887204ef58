"""Sparse symmetric linear algebra: direct factorizations, preconditioned
MINRES and a dense generalized eigenvalue diagnostic.

Sparse matrices are ``scipy.sparse.csr_matrix`` instances with sorted,
duplicate-free column indices (see :func:`as_sparse`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

SparseMatrix = sp.csr_matrix
MAX_DENSE_DOFS = 2000


class LinearSolveError(RuntimeError):
    pass


class SingularMatrixError(LinearSolveError):
    pass


class NotPositiveDefiniteError(LinearSolveError):
    pass


class BreakdownError(LinearSolveError):
    pass


def as_sparse(a) -> sp.csr_matrix:
    """Square CSR copy with summed duplicates and sorted column indices."""
    m = sp.csr_matrix(a, dtype=float, copy=True)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"matrix must be square, got shape {m.shape}")
    m.sum_duplicates()
    m.sort_indices()
    return m


# ---------------------------------------------------------------------------
# direct solves


@dataclass
class Factorization:
    """LU factors of a square sparse matrix.

    ``solve`` applies a few steps of iterative refinement against the
    original matrix. Without it the error in the mass balance rows grows
    like ``1/h^2`` times round-off, which is visible on fine meshes.
    """

    matrix: sp.csr_matrix
    lu: object
    spd: bool
    name: str | None = None
    refine_steps: int = 2

    @property
    def shape(self):
        return self.matrix.shape

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        x = self.lu.solve(rhs)
        for _ in range(self.refine_steps):
            x = x + self.lu.solve(rhs - self.matrix @ x)
        return x


def _label(name):
    return f" in block {name!r}" if name else ""


def factorize(a, spd_hint: bool = False, name: str | None = None,
              refine_steps: int = 2) -> Factorization:
    """Factorize a square sparse matrix.

    With ``spd_hint`` the factorization uses a symmetric ordering and no
    numerical pivoting, so ``U`` carries the pivots of an LDL^T
    factorization; any nonpositive pivot raises
    :class:`NotPositiveDefiniteError`. This doubles as the SPD test.
    """
    m = as_sparse(a)
    n = m.shape[0]
    if n == 0:
        raise ValueError("cannot factorize an empty matrix")
    if not np.all(np.isfinite(m.data)):
        raise LinearSolveError(f"matrix has non-finite entries{_label(name)}")
    try:
        if spd_hint:
            lu = spla.splu(m.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                           options={"SymmetricMode": True})
        else:
            lu = spla.splu(m.tocsc())
    except RuntimeError as exc:
        raise SingularMatrixError(f"matrix is singular{_label(name)}: {exc}") from exc

    pivots = lu.U.diagonal()
    if not np.all(np.isfinite(pivots)) or np.any(pivots == 0):
        raise SingularMatrixError(f"matrix is singular{_label(name)}")
    if spd_hint:
        if not np.array_equal(lu.perm_r, lu.perm_c):
            raise NotPositiveDefiniteError(f"row pivoting was required{_label(name)}")
        if np.any(pivots <= 0):
            bad = int(np.sum(pivots <= 0))
            raise NotPositiveDefiniteError(
                f"{bad} nonpositive pivot(s){_label(name)}, matrix is not positive definite")
    return Factorization(m, lu, spd_hint, name, refine_steps)


def solve(fact: Factorization, rhs) -> np.ndarray:
    return fact.solve(rhs)


def direct_solve(a, rhs) -> np.ndarray:
    return factorize(a).solve(rhs)


# ---------------------------------------------------------------------------
# MINRES


@dataclass
class SolverReport:
    """Outcome of an iterative solve.

    ``residual_history`` holds the preconditioned residual norm estimate of
    the recurrence, starting with the initial residual; it is non-increasing.
    ``true_residual_history`` holds the Euclidean norm of ``b - A x`` at the
    same iterates, which drives the stopping test.
    """

    iterations: int
    residual_history: list = field(default_factory=list)
    true_residual_history: list = field(default_factory=list)
    converged: bool = False
    stop_reason: str = ""

    @property
    def final_residual(self) -> float:
        return self.true_residual_history[-1] if self.true_residual_history else math.nan


STOP_CONVERGED = "converged"
STOP_MAX_ITER = "max_iter"
STOP_EXACT = "krylov_exhausted"


def _as_operator(op) -> Callable[[np.ndarray], np.ndarray]:
    if op is None:
        return lambda r: r.copy()
    if callable(op):
        return op
    return lambda r: op @ r


def minres(apply_A, apply_B, rhs, rel_tol: float = 1e-6, max_iter: int = 500,
           x0: np.ndarray | None = None) -> tuple[np.ndarray, SolverReport]:
    """Preconditioned MINRES (Paige and Saunders) for symmetric ``A`` with a
    symmetric positive definite preconditioner ``B`` approximating ``A^-1``.

    Stops once ``||b - A x||_2 <= rel_tol * ||b - A x0||_2`` or after
    ``max_iter`` iterations. ``apply_A`` and ``apply_B`` may be callables or
    matrices; ``apply_B=None`` means no preconditioning.
    """
    if not rel_tol > 0:
        raise ValueError("rel_tol must be positive")
    if max_iter < 0:
        raise ValueError("max_iter must be nonnegative")
    A, B = _as_operator(apply_A), _as_operator(apply_B)
    b = np.asarray(rhs, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)

    r1 = b - A(x)
    r0_norm = float(np.linalg.norm(r1))
    report = SolverReport(0, true_residual_history=[r0_norm])
    y = B(r1)
    beta1 = float(r1 @ y)
    if beta1 < 0 or not math.isfinite(beta1):
        raise BreakdownError("preconditioner is not positive definite")
    beta1 = math.sqrt(beta1)
    report.residual_history.append(beta1)
    target = rel_tol * r0_norm
    if r0_norm == 0.0 or beta1 == 0.0:
        report.converged, report.stop_reason = True, STOP_CONVERGED
        return x, report

    eps = np.finfo(float).eps
    oldb, beta, dbar, epsln, phibar = 0.0, beta1, 0.0, 0.0, beta1
    cs, sn = -1.0, 0.0
    w = np.zeros_like(b)
    w2 = np.zeros_like(b)
    r2 = r1.copy()

    for itn in range(1, max_iter + 1):
        v = y / beta
        y = A(v)
        if itn >= 2:
            y = y - (beta / oldb) * r1
        alfa = float(v @ y)
        y = y - (alfa / beta) * r2
        r1, r2 = r2, y
        y = B(r2)
        oldb = beta
        beta_sq = float(r2 @ y)
        if not math.isfinite(beta_sq) or not math.isfinite(alfa):
            raise BreakdownError(f"non-finite value in the recurrence at iteration {itn}")
        if beta_sq < 0:
            raise BreakdownError("preconditioner is not positive definite")
        beta = math.sqrt(beta_sq)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(math.hypot(gbar, beta), eps)
        cs, sn = gbar / gamma, beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w
        if not np.all(np.isfinite(x)):
            raise BreakdownError(f"non-finite iterate at iteration {itn}")

        res = float(np.linalg.norm(b - A(x)))
        report.iterations = itn
        report.residual_history.append(phibar)
        report.true_residual_history.append(res)
        if res <= target:
            report.converged, report.stop_reason = True, STOP_CONVERGED
            return x, report
        if beta <= eps * beta1 or phibar == 0.0:
            # Krylov space exhausted
            report.stop_reason = STOP_EXACT
            return x, report

    report.stop_reason = STOP_MAX_ITER
    return x, report


# ---------------------------------------------------------------------------
# spectrum


@dataclass
class Spectrum:
    eigenvalues: np.ndarray

    @property
    def min_abs(self) -> float:
        return float(np.abs(self.eigenvalues).min())

    @property
    def max_abs(self) -> float:
        return float(np.abs(self.eigenvalues).max())

    @property
    def condition(self) -> float:
        return self.max_abs / self.min_abs


def estimate_spectrum(a_dense, b_dense, max_dofs: int = MAX_DENSE_DOFS) -> Spectrum:
    """All eigenvalues ``lam`` of ``A x = lam B x`` for symmetric ``A`` and
    SPD ``B``, in ascending order."""
    a = a_dense.toarray() if sp.issparse(a_dense) else np.asarray(a_dense, dtype=float)
    b = b_dense.toarray() if sp.issparse(b_dense) else np.asarray(b_dense, dtype=float)
    if a.shape != b.shape or a.shape[0] != a.shape[1]:
        raise ValueError("A and B must be square and of equal size")
    if a.shape[0] > max_dofs:
        raise ValueError(f"dense eigensolve capped at {max_dofs} DOFs, got {a.shape[0]}")
    a = 0.5 * (a + a.T)
    b = 0.5 * (b + b.T)
    return Spectrum(scipy.linalg.eigh(a, b, eigvals_only=True))


# ---------------------------------------------------------------------------
# Matrix Market


def write_matrix_market(path, a, comment: str = "") -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(a), comment=comment, symmetry="general")


def read_matrix_market(path) -> sp.csr_matrix:
    return as_sparse(scipy.io.mmread(str(path)))


def write_vector(path, vec) -> None:
    np.savetxt(str(path), np.asarray(vec, dtype=float), fmt="%.17g")


def read_vector(path) -> np.ndarray:
    return np.atleast_1d(np.loadtxt(str(path), dtype=float))
