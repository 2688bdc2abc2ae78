"""Lowest-order hybridized virtual elements for 2D mixed elasticity.

Stress and displacement are approximated independently on polygonal
meshes; interior-edge Lagrange multipliers enforce traction continuity
and allow static condensation to a symmetric positive definite system.
"""

__version__ = "0.1.0"

from .hybrid import (  # noqa: E402
    FactorizationError,
    SolverError,
    assemble_broken,
    assemble_conforming,
    solve_condensed,
    solve_conforming,
    solve_hybrid,
    static_condense,
    timing_report,
)
from .material import LameParameters, MaterialField  # noqa: E402
from .mesh import Mesh, MeshError, build_mesh, generate_family, load_mesh, save_mesh  # noqa: E402
from .postprocess import build_ustar, pi_nabla  # noqa: E402
from .verification import (  # noqa: E402
    compute_errors,
    patch_test_case,
    run_convergence,
    testcase_2d,
)

__all__ = [
    "FactorizationError", "SolverError", "assemble_broken", "assemble_conforming",
    "solve_condensed", "solve_conforming", "solve_hybrid", "static_condense", "timing_report",
    "LameParameters", "MaterialField", "Mesh", "MeshError", "build_mesh", "generate_family",
    "load_mesh", "save_mesh", "build_ustar", "pi_nabla", "compute_errors", "patch_test_case",
    "run_convergence", "testcase_2d",
]
