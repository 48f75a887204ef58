"""Command-line front end: convergence studies, preconditioner sweeps,
single solves and spectrum diagnostics, all reported as CSV.

Configuration is plain ``key = value`` text, one entry per line, ``#`` starts
a comment. Recognized keys and their defaults are listed in ``DEFAULTS``;
list-valued keys take comma-separated values.
"""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import math
import sys
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .assembly import assemble_system, build_spaces, loss_of_mass
from .fe_spaces import ParameterSet
from .mesh import BoundarySpec, build_unit_square_mesh
from .mms import RATE_FIELDS, compute_errors, convergence_rates, manufactured_case
from .preconditioners import DG_BOUNDARY_CHOICES, DEFAULT_DG_BOUNDARY, VARIANTS, build_preconditioner
from .solvers import LinearSolveError, MAX_DENSE_DOFS, direct_solve, estimate_spectrum, minres

MODES = ("convergence", "robustness", "single_solve", "spectrum")
SOLVERS = ("direct", "minres")
PARAM_KEYS = ("mu", "lambda", "nu", "kappa", "c0", "alpha")

# the parameter grid of the robustness study
DEFAULT_SWEEP = {
    "mu": (1.0,), "lambda": (1.0, 1e8), "nu": (1e-8, 1.0),
    "kappa": (1e-8, 1.0), "c0": (1e-8, 1.0), "alpha": (1.0,),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs. ``bc_mode=None`` picks ``mixed`` for the
    robustness and spectrum modes and ``all_dirichlet`` otherwise."""

    mode: str = "convergence"
    k: int = 0
    levels: int = 4
    params: ParameterSet = field(default_factory=ParameterSet)
    sweep: dict = field(default_factory=lambda: dict(DEFAULT_SWEEP))
    bc_mode: str | None = None
    solver: str = "direct"
    preconditioners: tuple = VARIANTS
    rel_tol: float = 1e-6
    max_iter: int = 500
    dg_boundary: str = DEFAULT_DG_BOUNDARY
    output: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.k not in (0, 1):
            raise ConfigError(f"k must be 0 or 1, got {self.k!r}")
        if self.levels < 1:
            raise ConfigError("levels must be at least 1")
        if self.bc_mode not in (None, "all_dirichlet", "mixed"):
            raise ConfigError(f"unknown bc {self.bc_mode!r}")
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        bad = [p for p in self.preconditioners if p not in VARIANTS]
        if bad or not self.preconditioners:
            raise ConfigError(f"preconditioners must be drawn from {VARIANTS}, got {bad or '()'}")
        if not self.rel_tol > 0:
            raise ConfigError("rel_tol must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")
        if self.dg_boundary not in DG_BOUNDARY_CHOICES:
            raise ConfigError(f"dg_boundary must be one of {DG_BOUNDARY_CHOICES}")

    @property
    def bc(self) -> BoundarySpec:
        if self.bc_mode is not None:
            return BoundarySpec(self.bc_mode)
        return BoundarySpec("mixed" if self.mode in ("robustness", "spectrum") else "all_dirichlet")

    @property
    def precond(self) -> str:
        return self.preconditioners[-1]

    def mesh_sizes(self) -> list[int]:
        """Level ``l`` (counted from 1) is the ``2^l x 2^l`` grid."""
        return [2**level for level in range(1, self.levels + 1)]

    def sweep_params(self) -> list[ParameterSet]:
        combos = itertools.product(*(self.sweep[key] for key in PARAM_KEYS))
        out = [ParameterSet(mu=mu, lam=lam, nu=nu, kappa=ka, c0=c0, alpha=al)
               for mu, lam, nu, ka, c0, al in combos]
        return sorted(out, key=_param_tuple)


def _param_tuple(p: ParameterSet) -> tuple:
    return (p.mu, p.lam, p.nu, p.kappa, p.c0, p.alpha)


# ---------------------------------------------------------------------------
# config parsing


def _int(text):
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def _float(text):
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"expected a finite number, got {text!r}")
    return value


def _floats(text):
    values = tuple(_float(t) for t in text.split(",") if t.strip())
    if not values:
        raise ValueError("expected at least one value")
    return values


def _names(text):
    return tuple(t.strip() for t in text.split(",") if t.strip())


_PARSERS = {
    "mode": str, "k": _int, "levels": _int, "bc": str, "solver": str,
    "precond": _names, "rel_tol": _float, "max_iter": _int,
    "dg_boundary": str, "out": str,
    **{key: _float for key in PARAM_KEYS},
    **{f"sweep_{key}": _floats for key in PARAM_KEYS},
}

DEFAULTS = {
    "mode": "convergence", "k": 0, "levels": 4, "bc": "(mode dependent)", "solver": "direct",
    "precond": ",".join(VARIANTS), "rel_tol": 1e-6, "max_iter": 500,
    "dg_boundary": DEFAULT_DG_BOUNDARY, "out": "(stdout)",
    **{key: 1.0 for key in PARAM_KEYS},
    **{f"sweep_{key}": ",".join(f"{v:g}" for v in DEFAULT_SWEEP[key]) for key in PARAM_KEYS},
}


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines into a :class:`RunConfig`.

    Unknown keys, repeated keys and malformed values raise
    :class:`ConfigError` quoting the line number.
    """
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = (_PARSERS[key](value), lineno)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    return _build_config(values)


def _build_config(values: dict) -> RunConfig:
    def get(key, default):
        return values[key][0] if key in values else default

    def fail(key, exc):
        where = f"line {values[key][1]}: " if key in values else ""
        raise ConfigError(f"{where}{exc}") from None

    def check(key, name, value):
        try:
            ParameterSet(**{("lam" if name == "lambda" else name): value})
        except ValueError as exc:
            fail(key, exc)

    for name in PARAM_KEYS:
        if name in values:
            check(name, name, values[name][0])
        for value in values.get(f"sweep_{name}", ((),))[0]:
            check(f"sweep_{name}", name, value)
    params = ParameterSet(mu=get("mu", 1.0), lam=get("lambda", 1.0), nu=get("nu", 1.0),
                          kappa=get("kappa", 1.0), c0=get("c0", 1.0), alpha=get("alpha", 1.0))
    sweep = {key: get(f"sweep_{key}", DEFAULT_SWEEP[key]) for key in PARAM_KEYS}

    fields_ = {
        "mode": ("mode", get("mode", "convergence")),
        "k": ("k", get("k", 0)),
        "levels": ("levels", get("levels", 4)),
        "bc_mode": ("bc", get("bc", None)),
        "solver": ("solver", get("solver", "direct")),
        "preconditioners": ("precond", get("precond", VARIANTS)),
        "rel_tol": ("rel_tol", get("rel_tol", 1e-6)),
        "max_iter": ("max_iter", get("max_iter", 500)),
        "dg_boundary": ("dg_boundary", get("dg_boundary", DEFAULT_DG_BOUNDARY)),
        "output": ("out", get("out", None)),
    }
    cfg = RunConfig(params=params, sweep=sweep)
    # apply one field at a time so a validation error can name its line
    for attr, (key, value) in fields_.items():
        try:
            cfg = replace(cfg, **{attr: value})
        except ConfigError as exc:
            fail(key, exc)
    return cfg


# ---------------------------------------------------------------------------
# runners


@dataclass
class LevelResult:
    n: int
    dofs: int
    fields: dict | None
    iterations: int | None
    converged: bool
    seconds: float
    error: str = ""


def solve_level(n: int, k: int, params: ParameterSet, bc: BoundarySpec, solver: str = "direct",
                precond: str = "B3", rel_tol: float = 1e-6, max_iter: int = 500,
                dg_boundary: str = DEFAULT_DG_BOUNDARY) -> LevelResult:
    """Assemble and solve the manufactured problem on the ``n x n`` mesh."""
    start = time.perf_counter()
    mesh = build_unit_square_mesh(n)
    system = assemble_system(mesh, build_spaces(mesh, k), params, bc, manufactured_case(params))
    iterations, converged = None, True
    try:
        if solver == "direct":
            x = direct_solve(system.matrix, system.rhs)
        else:
            pc = build_preconditioner(precond, system, dg_boundary=dg_boundary)
            x, report = minres(system.matrix, pc, system.rhs, rel_tol=rel_tol, max_iter=max_iter)
            iterations, converged = report.iterations, report.converged
    except LinearSolveError as exc:
        return LevelResult(n, system.n_dofs, None, None, False,
                           time.perf_counter() - start, str(exc))
    return LevelResult(n, system.n_dofs, system.to_fields(x), iterations, converged,
                       time.perf_counter() - start)


_FIELD_COLUMNS = {"e_u": "u", "e_v": "v", "e_omega": "omega", "e_phi": "phi", "e_p": "p",
                  "weighted": "weighted"}


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float) and math.isnan(value):
        return "nan"
    return f"{float(value):.10e}"


def convergence_columns(params: ParameterSet) -> list[str]:
    cols = ["level", "n", "h", "dofs"]
    for key, short in _FIELD_COLUMNS.items():
        if key == "e_omega" and params.nu == 0:
            continue
        cols += [key, f"rate_{short}"]
    return cols + ["loss_of_mass", "solver", "iters", "converged", "error"]


def run_convergence(cfg: RunConfig) -> list[dict]:
    """One row per level with per-field errors, rates (empty on the first
    level) and the loss of mass. Solver failures are recorded and the run
    continues."""
    exact = manufactured_case(cfg.params)
    rows, reports = [], []
    for level, n in enumerate(cfg.mesh_sizes(), start=1):
        res = solve_level(n, cfg.k, cfg.params, cfg.bc, cfg.solver, cfg.precond,
                          cfg.rel_tol, cfg.max_iter, cfg.dg_boundary)
        row = {"level": level, "n": n, "dofs": res.dofs, "solver": cfg.solver,
               "iters": res.iterations, "converged": res.converged, "error": res.error}
        if res.fields is not None:
            rep = compute_errors(res.fields, exact)
            rep.loss_of_mass = loss_of_mass(res.fields, cfg.params, exact.g)
            row.update(h=rep.h, loss_of_mass=rep.loss_of_mass, **{k: getattr(rep, k) for k in RATE_FIELDS})
            reports.append(rep)
        else:
            row["h"] = build_unit_square_mesh(n).h_max
            reports.append({"h": row["h"], **{k: math.nan for k in RATE_FIELDS}})
        rows.append(row)
    rates = convergence_rates(reports)
    for i, row in enumerate(rows):
        for key, short in _FIELD_COLUMNS.items():
            row[f"rate_{short}"] = rates[key][i]
    return rows


ROBUSTNESS_COLUMNS = ["mu", "lambda", "nu", "kappa", "c0", "alpha", "level", "dofs",
                      "precond", "iters", "converged"]


def run_robustness(cfg: RunConfig) -> list[dict]:
    """MINRES iteration counts for every parameter combination, mesh level
    and preconditioner, sorted by parameter tuple, then level."""
    rows = []
    for params in cfg.sweep_params():
        exact = manufactured_case(params)
        for level, n in enumerate(cfg.mesh_sizes(), start=1):
            mesh = build_unit_square_mesh(n)
            system = assemble_system(mesh, build_spaces(mesh, cfg.k), params, cfg.bc, exact)
            for variant in cfg.preconditioners:
                row = _param_row(params) | {"level": level, "dofs": system.n_dofs,
                                            "precond": variant}
                try:
                    pc = build_preconditioner(variant, system, dg_boundary=cfg.dg_boundary)
                    _, report = minres(system.matrix, pc, system.rhs, rel_tol=cfg.rel_tol,
                                       max_iter=cfg.max_iter)
                    row.update(iters=report.iterations, converged=report.converged)
                except LinearSolveError:
                    row.update(iters=None, converged=False)
                rows.append(row)
    return rows


SPECTRUM_COLUMNS = ["mu", "lambda", "nu", "kappa", "c0", "alpha", "level", "dofs", "precond",
                    "min_abs", "max_abs", "condition"]


def run_spectrum(cfg: RunConfig) -> list[dict]:
    """Extreme generalized eigenvalues of the system against the chosen
    preconditioner's norm matrix; levels above the dense size cap are skipped."""
    rows = []
    for params in cfg.sweep_params():
        for level, n in enumerate(cfg.mesh_sizes(), start=1):
            mesh = build_unit_square_mesh(n)
            system = assemble_system(mesh, build_spaces(mesh, cfg.k), params, cfg.bc)
            if system.n_dofs > MAX_DENSE_DOFS:
                break
            for variant in cfg.preconditioners:
                pc = build_preconditioner(variant, system, dg_boundary=cfg.dg_boundary)
                spec = estimate_spectrum(system.matrix, pc.norm_matrix())
                rows.append(_param_row(params) | {
                    "level": level, "dofs": system.n_dofs, "precond": variant,
                    "min_abs": spec.min_abs, "max_abs": spec.max_abs, "condition": spec.condition})
    return rows


def run_single(cfg: RunConfig) -> list[dict]:
    """Solve on the finest configured level only."""
    n = cfg.mesh_sizes()[-1]
    exact = manufactured_case(cfg.params)
    res = solve_level(n, cfg.k, cfg.params, cfg.bc, cfg.solver, cfg.precond,
                      cfg.rel_tol, cfg.max_iter, cfg.dg_boundary)
    row = {"level": cfg.levels, "n": n, "dofs": res.dofs, "solver": cfg.solver,
           "iters": res.iterations, "converged": res.converged, "error": res.error,
           "h": build_unit_square_mesh(n).h_max}
    if res.fields is not None:
        rep = compute_errors(res.fields, exact)
        row.update(loss_of_mass=loss_of_mass(res.fields, cfg.params, exact.g),
                   **{k: getattr(rep, k) for k in RATE_FIELDS})
    return [row]


def _param_row(p: ParameterSet) -> dict:
    return {"mu": p.mu, "lambda": p.lam, "nu": p.nu, "kappa": p.kappa, "c0": p.c0, "alpha": p.alpha}


def write_csv(rows: list[dict], columns: list[str], stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) if not isinstance(row.get(c), str) else row[c]
                         for c in columns])


def to_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    write_csv(rows, columns, buf)
    return buf.getvalue()


def run(cfg: RunConfig) -> str:
    """Execute ``cfg`` and return the CSV text."""
    if cfg.mode == "convergence":
        return to_csv(run_convergence(cfg), convergence_columns(cfg.params))
    if cfg.mode == "robustness":
        return to_csv(run_robustness(cfg), ROBUSTNESS_COLUMNS)
    if cfg.mode == "spectrum":
        return to_csv(run_spectrum(cfg), SPECTRUM_COLUMNS)
    cols = [c for c in convergence_columns(cfg.params) if not c.startswith("rate_")]
    return to_csv(run_single(cfg), cols)


# ---------------------------------------------------------------------------
# entry point

_SUBCOMMANDS = {"convergence": "convergence", "robustness": "robustness",
                "solve": "single_solve", "spectrum": "spectrum"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="biotbrinkman",
        description="Mixed finite element solver for the five-field Biot-Brinkman equations.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--out", help="CSV output path (default: stdout)")
        p.add_argument("--k", type=int, help="polynomial degree, 0 or 1")
        p.add_argument("--levels", type=int, help="number of mesh levels (level l is 2^l x 2^l)")
        p.add_argument("--precond", help="preconditioner(s), comma separated, from B1,B2,B3; "
                       "for convergence and solve this selects MINRES with that preconditioner")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = ""
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        cfg = parse_config(text)
        overrides = {"mode": _SUBCOMMANDS[args.command]}
        if args.k is not None:
            overrides["k"] = args.k
        if args.levels is not None:
            overrides["levels"] = args.levels
        if args.precond is not None:
            overrides["preconditioners"] = _names(args.precond)
            if args.command in ("convergence", "solve"):
                overrides["solver"] = "minres"
        if args.out is not None:
            overrides["output"] = args.out
        cfg = replace(cfg, **overrides)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    text = run(cfg)
    if cfg.output:
        with open(cfg.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0
