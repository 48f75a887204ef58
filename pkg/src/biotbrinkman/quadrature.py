"""Gauss rules on the reference triangle and the unit interval.

Triangle rules are collapsed (Duffy) tensor products of Gauss-Legendre and
Gauss-Jacobi(1, 0) rules, so all weights are positive and points lie strictly
inside the reference triangle ``(0,0), (1,0), (0,1)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

MAX_DEGREE = 12


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    exactness: int

    def __len__(self):
        return len(self.weights)


def _check_degree(degree: int) -> int:
    if int(degree) != degree or not 1 <= degree <= MAX_DEGREE:
        raise ValueError(f"quadrature degree must be in 1..{MAX_DEGREE}, got {degree!r}")
    return int(degree)


@lru_cache(maxsize=None)
def edge_rule(degree: int) -> QuadratureRule:
    """Gauss-Legendre rule on ``[0, 1]``; ``points`` has shape ``(n,)``."""
    degree = _check_degree(degree)
    n = degree // 2 + 1
    x, w = np.polynomial.legendre.leggauss(n)
    return QuadratureRule(0.5 * (x + 1.0), 0.5 * w, degree)


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    """Rule exact for bivariate polynomials of total degree ``<= degree``;
    ``points`` has shape ``(n, 2)`` and the weights sum to 1/2."""
    degree = _check_degree(degree)
    n = degree // 2 + 1
    s, ws = np.polynomial.legendre.leggauss(n)
    s, ws = 0.5 * (s + 1.0), 0.5 * ws
    # weight (1 - t) on [0, 1] absorbs the Duffy Jacobian
    t, wt = roots_jacobi(n, 1.0, 0.0)
    t, wt = 0.5 * (t + 1.0), 0.25 * wt
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(ws, wt)
    pts = np.column_stack([(S * (1.0 - T)).ravel(), T.ravel()])
    return QuadratureRule(pts, W.ravel(), degree)
