"""Two-derivative DGSEM solver with predictor-corrector time stepping."""

from .basis import Basis, build_basis
from .mesh import CartesianMesh, build_cartesian_mesh
from .equations import Euler, InadmissibleStateError, LinearAdvection, NavierStokes, make_equation
from .operators import DiscreteSpace, compute_r1, compute_r2, compute_r1_r2

__version__ = "0.1.0"

__all__ = [
    "Basis",
    "build_basis",
    "CartesianMesh",
    "build_cartesian_mesh",
    "Euler",
    "NavierStokes",
    "LinearAdvection",
    "InadmissibleStateError",
    "make_equation",
    "DiscreteSpace",
    "compute_r1",
    "compute_r2",
    "compute_r1_r2",
]
