"""Manufactured solution on the unit square, error norms and rates.

Exact fields::

    u = (sin(pi (x + y)), cos(pi (x^2 + y^2)))
    v = (sin(pi x) sin(pi y), cos(pi x) cos(2 pi y))
    p = sin(pi x + y) sin(pi y)
    omega = sqrt(nu / kappa) curl v,   phi = -lam div u + alpha p

All derivatives below are written out by hand; the tests check them against
finite differences.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .fe_spaces import (DiscreteField, ParameterSet, evaluate_field, interpolate,
                        map_points)
from .quadrature import triangle_rule

PI = np.pi
FIELDS = ("u", "v", "omega", "phi", "p")


class ExactSolution:
    """Exact fields and derived data for one parameter set.

    Every method takes coordinate arrays ``x, y`` of the same shape and
    returns that shape for scalars, ``(2, ...)`` for vectors and
    ``(2, 2, ...)`` for tensors.
    """

    def __init__(self, params: ParameterSet):
        self.params = params
        self.scale = math.sqrt(params.nu / params.kappa)

    # displacement ---------------------------------------------------------
    def u(self, x, y):
        return np.array([np.sin(PI * (x + y)), np.cos(PI * (x * x + y * y))])

    def grad_u(self, x, y):
        """``grad_u[i, j] = d u_i / d x_j``."""
        c = PI * np.cos(PI * (x + y))
        s = np.sin(PI * (x * x + y * y))
        return np.array([[c, c], [-2 * PI * x * s, -2 * PI * y * s]])

    def div_u(self, x, y):
        g = self.grad_u(x, y)
        return g[0, 0] + g[1, 1]

    def strain(self, x, y):
        g = self.grad_u(x, y)
        return 0.5 * (g + g.transpose(1, 0, *range(2, g.ndim)))

    def _hessians_u(self, x, y):
        s1 = -PI**2 * np.sin(PI * (x + y))
        r = PI * (x * x + y * y)
        s, c = np.sin(r), np.cos(r)
        u2_xx = -2 * PI * s - 4 * PI**2 * x * x * c
        u2_xy = -4 * PI**2 * x * y * c
        u2_yy = -2 * PI * s - 4 * PI**2 * y * y * c
        return (s1, s1, s1), (u2_xx, u2_xy, u2_yy)

    def grad_div_u(self, x, y):
        (u1_xx, u1_xy, _), (_, u2_xy, u2_yy) = self._hessians_u(x, y)
        return np.array([u1_xx + u2_xy, u1_xy + u2_yy])

    def div_strain(self, x, y):
        (u1_xx, u1_xy, u1_yy), (u2_xx, u2_xy, u2_yy) = self._hessians_u(x, y)
        return np.array([u1_xx + 0.5 * (u1_yy + u2_xy),
                         0.5 * (u1_xy + u2_xx) + u2_yy])

    # pressures ------------------------------------------------------------
    def p(self, x, y):
        return np.sin(PI * x + y) * np.sin(PI * y)

    def grad_p(self, x, y):
        a = PI * x + y
        return np.array([PI * np.cos(a) * np.sin(PI * y),
                         np.cos(a) * np.sin(PI * y) + PI * np.sin(a) * np.cos(PI * y)])

    def phi(self, x, y):
        return -self.params.lam * self.div_u(x, y) + self.params.alpha * self.p(x, y)

    def grad_phi(self, x, y):
        return -self.params.lam * self.grad_div_u(x, y) + self.params.alpha * self.grad_p(x, y)

    # filtration flux and vorticity ------------------------------------------
    def v(self, x, y):
        return np.array([np.sin(PI * x) * np.sin(PI * y),
                         np.cos(PI * x) * np.cos(2 * PI * y)])

    def div_v(self, x, y):
        return PI * np.cos(PI * x) * np.sin(PI * y) - 2 * PI * np.cos(PI * x) * np.sin(2 * PI * y)

    def grad_div_v(self, x, y):
        return np.array([
            -PI**2 * np.sin(PI * x) * np.sin(PI * y) + 2 * PI**2 * np.sin(PI * x) * np.sin(2 * PI * y),
            PI**2 * np.cos(PI * x) * np.cos(PI * y) - 4 * PI**2 * np.cos(PI * x) * np.cos(2 * PI * y),
        ])

    def curl_v(self, x, y):
        """Scalar curl ``dv2/dx - dv1/dy``."""
        return -PI * np.sin(PI * x) * (np.cos(2 * PI * y) + np.cos(PI * y))

    def omega(self, x, y):
        return self.scale * self.curl_v(x, y)

    def grad_omega(self, x, y):
        return self.scale * np.array([
            -PI**2 * np.cos(PI * x) * (np.cos(2 * PI * y) + np.cos(PI * y)),
            PI**2 * np.sin(PI * x) * (2 * np.sin(2 * PI * y) + np.sin(PI * y)),
        ])

    def curl_omega(self, x, y):
        """Vector curl ``(d omega/dy, -d omega/dx)``."""
        g = self.grad_omega(x, y)
        return np.array([g[1], -g[0]])

    # data -----------------------------------------------------------------
    def stress(self, x, y):
        """Total stress ``2 mu eps(u) - phi I``."""
        s = 2 * self.params.mu * self.strain(x, y)
        ph = self.phi(x, y)
        s[0, 0] -= ph
        s[1, 1] -= ph
        return s

    def b(self, x, y):
        return -2 * self.params.mu * self.div_strain(x, y) + self.grad_phi(x, y)

    def f(self, x, y):
        P = self.params
        return (self.v(x, y) / P.kappa + self.scale * self.curl_omega(x, y)
                - (P.nu / P.kappa) * self.grad_div_v(x, y) + self.grad_p(x, y))

    def g(self, x, y):
        P = self.params
        return (-(P.c0 + P.alpha**2 / P.lam) * self.p(x, y)
                + (P.alpha / P.lam) * self.phi(x, y) - self.div_v(x, y))


def manufactured_case(params: ParameterSet) -> ExactSolution:
    if not params.kappa > 0:
        raise ValueError("kappa must be positive")
    return ExactSolution(params)


# ---------------------------------------------------------------------------
# errors


@dataclass
class ErrorReport:
    """Unweighted per-field errors as tabulated, plus the weighted total.

    ``e_u`` is the H1 seminorm, ``e_v`` the H(div) norm, ``e_omega`` the H1
    norm of the scalar vorticity, ``e_phi`` and ``e_p`` L2 norms.
    """

    h: float
    dofs: int
    e_u: float
    e_v: float
    e_omega: float
    e_phi: float
    e_p: float
    weighted: float
    loss_of_mass: float = float("nan")
    components: dict = field(default_factory=dict, repr=False)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "components"}


def _sq_errors(fields_: dict, exact: ExactSolution, quad_degree: int, chunk: int = 2048) -> dict:
    """Squared L2 norms of each error component, integrated cell by cell."""
    mesh = fields_["u"].space.mesh
    rule = triangle_rule(quad_degree)
    totals: dict[str, float] = {}

    def add(name, arr, w):
        sq = (arr * arr).reshape(w.shape + (-1,)).sum(axis=-1)
        totals[name] = totals.get(name, 0.0) + float(np.sum(sq * w))

    for start in range(0, mesh.n_cells, chunk):
        cells = np.arange(start, min(start + chunk, mesh.n_cells))
        x = map_points(mesh, rule.points, cells)
        X, Y = x[..., 0], x[..., 1]
        w = 2.0 * mesh.areas[cells][:, None] * rule.weights[None, :]

        u = evaluate_field(fields_["u"].space, fields_["u"].coeffs, rule.points, cells)
        gu = np.moveaxis(exact.grad_u(X, Y), (0, 1), (-2, -1)) - u.grad
        add("grad_u", gu, w)
        eu = np.moveaxis(exact.strain(X, Y), (0, 1), (-2, -1)) - 0.5 * (
            u.grad + np.swapaxes(u.grad, -1, -2))
        add("eps_u", eu, w)

        v = evaluate_field(fields_["v"].space, fields_["v"].coeffs, rule.points, cells)
        add("v", np.moveaxis(exact.v(X, Y), 0, -1) - v.values, w)
        add("div_v", exact.div_v(X, Y) - v.div, w)

        if "omega" in fields_:
            om = evaluate_field(fields_["omega"].space, fields_["omega"].coeffs, rule.points, cells)
            add("omega", exact.omega(X, Y) - om.values, w)
            add("grad_omega", np.moveaxis(exact.grad_omega(X, Y), 0, -1) - om.grad, w)
        else:
            add("omega", exact.omega(X, Y), w)
            add("grad_omega", np.moveaxis(exact.grad_omega(X, Y), 0, -1), w)

        ph = evaluate_field(fields_["phi"].space, fields_["phi"].coeffs, rule.points, cells)
        pp = evaluate_field(fields_["p"].space, fields_["p"].coeffs, rule.points, cells)
        dphi = exact.phi(X, Y) - ph.values
        dp = exact.p(X, Y) - pp.values
        add("phi", dphi, w)
        add("p", dp, w)
        add("phi_alpha_p", dphi + exact.params.alpha * dp, w)
    return totals


def compute_errors(fields_: dict, exact: ExactSolution, quad_degree: int = 10) -> ErrorReport:
    """Errors of discrete fields ``{"u", "v", "omega", "phi", "p"}`` against
    ``exact``. ``omega`` may be omitted, in which case the discrete vorticity
    is taken as zero."""
    P = exact.params
    sq = _sq_errors(fields_, exact, quad_degree)
    weighted = (2 * P.mu * sq["grad_u"] + sq["v"] / P.kappa + (P.nu / P.kappa) * sq["div_v"]
                + sq["omega"] + P.nu * sq["grad_omega"] + sq["phi"] / (2 * P.mu)
                + sq["phi_alpha_p"] / P.lam + P.c0 * sq["p"])
    if P.nu > 0:
        # computable upper bound for the sum-space pressure norm
        weighted += (P.kappa / P.nu + P.c0) * sq["p"]
    mesh = fields_["u"].space.mesh
    return ErrorReport(
        h=mesh.h_max,
        dofs=sum(f.space.n_dofs for f in fields_.values()),
        e_u=math.sqrt(sq["grad_u"]),
        e_v=math.sqrt(sq["v"] + sq["div_v"]),
        e_omega=math.sqrt(sq["omega"] + sq["grad_omega"]),
        e_phi=math.sqrt(sq["phi"]),
        e_p=math.sqrt(sq["p"]),
        weighted=math.sqrt(weighted),
        components=sq,
    )


def interpolate_exact(spaces: dict, exact: ExactSolution) -> dict:
    """Canonical interpolants of the exact fields in the given spaces."""
    funcs = {"u": exact.u, "v": exact.v, "omega": exact.omega, "phi": exact.phi, "p": exact.p}
    return {name: interpolate(space, funcs[name]) for name, space in spaces.items()}


RATE_FIELDS = ("e_u", "e_v", "e_omega", "e_phi", "e_p", "weighted")


def convergence_rates(reports: Sequence, keys: Sequence[str] = RATE_FIELDS) -> dict:
    """``log(e_coarse / e_fine) / log(h_coarse / h_fine)`` for each adjacent
    pair of levels. The first level has no rate (None); a rate is also None
    when either error is zero or non-finite."""
    reports = list(reports)
    if len(reports) < 1:
        raise ValueError("need at least one level")
    out = {}
    for key in keys:
        rates: list = [None]
        for a, b in zip(reports[:-1], reports[1:]):
            ea, eb = _get(a, key), _get(b, key)
            ha, hb = _get(a, "h"), _get(b, "h")
            if not (ea > 0 and eb > 0 and math.isfinite(ea) and math.isfinite(eb)):
                rates.append(None)
            else:
                rates.append(math.log(ea / eb) / math.log(ha / hb))
        out[key] = rates
    return out


def _get(report, key):
    return report[key] if isinstance(report, dict) else getattr(report, key)
