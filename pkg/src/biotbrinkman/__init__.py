"""Mixed finite elements and parameter-robust block preconditioners for the
vorticity-based Biot-Brinkman equations on the unit square."""
from .assembly import BlockSystem, assemble_system, build_spaces, loss_of_mass
from .fe_spaces import ParameterSet
from .mesh import BoundarySpec, Mesh, build_unit_square_mesh
from .mms import compute_errors, convergence_rates, manufactured_case
from .preconditioners import build_preconditioner, dg_laplacian
from .solvers import direct_solve, estimate_spectrum, minres

__version__ = "0.1.0"

__all__ = [
    "BlockSystem", "BoundarySpec", "Mesh", "ParameterSet", "assemble_system",
    "build_preconditioner", "build_spaces", "build_unit_square_mesh", "compute_errors",
    "convergence_rates", "dg_laplacian", "direct_solve", "estimate_spectrum",
    "loss_of_mass", "manufactured_case", "minres",
]
