"""p-harmonic Dirichlet problems with finite energy on meshed non-compact manifolds."""
from .capacity import CapacityEstimate, CapacitySequence, capacity_closed, capacity_compact
from .criterion import (FINITE, INCONCLUSIVE, NONE_FOUND, BoundednessRule, CriterionVerdict,
                        WitnessFamily, classify, criterion_check, witness_search_constants)
from .energy import (EnergyReport, ExponentError, ScalarField, dirichlet_energy, energy_gradient,
                     weak_residual)
from .mesh import (ExhaustionSequence, GrowthRule, MeshError, MeshManifold, Region, build_mesh,
                   exhaustion, refine, volume)
from .meshio import read_mesh, write_mesh
from .models import (RevolutionSpec, annulus_mesh, disk_mesh, exterior_disk, half_plane,
                     half_plane_mesh, revolution_manifold, unit_square)
from .oracle import RadialProfile, radial_oracle
from .poincare import PoincareEstimate, poincare_constant
from .solver import (SolverError, SolverParams, SolveResult, minimize_energy, solve_dirichlet,
                     solve_neumann_member, solve_p2_direct)

__all__ = [
    "BoundednessRule", "CapacityEstimate", "CapacitySequence", "CriterionVerdict", "EnergyReport",
    "ExhaustionSequence", "ExponentError", "FINITE", "GrowthRule", "INCONCLUSIVE", "MeshError",
    "MeshManifold", "NONE_FOUND", "PoincareEstimate", "RadialProfile", "Region", "RevolutionSpec",
    "ScalarField", "SolveResult", "SolverError", "SolverParams", "WitnessFamily", "annulus_mesh",
    "build_mesh", "capacity_closed", "capacity_compact", "classify", "criterion_check",
    "dirichlet_energy", "disk_mesh", "energy_gradient", "exhaustion", "exterior_disk",
    "half_plane", "half_plane_mesh", "minimize_energy", "poincare_constant", "radial_oracle",
    "read_mesh", "refine", "revolution_manifold", "solve_dirichlet", "solve_neumann_member",
    "solve_p2_direct", "unit_square", "volume", "weak_residual", "witness_search_constants",
    "write_mesh",
]
