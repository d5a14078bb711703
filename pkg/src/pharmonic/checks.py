"""Fast invariant suite run by ``pharmonic --seed-check``.

Each check builds a small problem, compares against an independent value and
returns a :class:`CheckResult`. The suite takes a few seconds.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .capacity import capacity_compact
from .energy import dirichlet_energy, energy_gradient, interior_test_mask, weak_residual
from .mesh import region_from_elements
from .models import annulus_mesh, unit_square
from .oracle import radial_oracle
from .poincare import poincare_constant
from .solver import SolverParams, solve_dirichlet, solve_p2_direct


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float

    def to_dict(self) -> dict:
        return asdict(self)


def _check(name, value, tol) -> CheckResult:
    return CheckResult(name, bool(value <= tol), float(value), float(tol))


def check_oracle() -> CheckResult:
    prof = radial_oracle(2, 2.0, 0.5, 1.0, points=2000)
    exact = 2 * math.pi / math.log(2.0)
    return _check("oracle annulus capacity", abs(prof.capacity - exact) / exact, 1e-6)


def check_gradient(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    mesh = unit_square(2)
    worst = 0.0
    for p in (1.5, 2.0, 3.0):
        u = rng.standard_normal(mesh.n_vertices)
        g = energy_gradient(mesh, u, p, 1e-8)
        d = rng.standard_normal(mesh.n_vertices)
        t = 1e-6
        fd = (dirichlet_energy(mesh, u + t * d, p, 1e-8).value
              - dirichlet_energy(mesh, u - t * d, p, 1e-8).value) / (2 * t)
        worst = max(worst, abs(fd - g @ d) / max(abs(fd), 1e-300))
    return _check("energy gradient vs central differences", worst, 1e-6)


def check_homogeneity(seed: int = 1) -> CheckResult:
    rng = np.random.default_rng(seed)
    mesh = unit_square(3)
    interior = np.flatnonzero(interior_test_mask(mesh))
    K = rng.choice(interior, 5, replace=False)
    omega = region_from_elements(mesh, np.arange(mesh.n_elements), "M")
    psi = rng.uniform(-1, 1, mesh.n_vertices)
    params = SolverParams(p=3.0, rel_tol_residual=1e-12)
    c1 = capacity_compact(mesh, K, omega, psi, params).value
    c2 = capacity_compact(mesh, K, omega, 2.5 * psi, params).value
    return _check("capacity homogeneity", abs(c2 - 2.5 ** 3 * c1) / abs(2.5 ** 3 * c1), 1e-8)


def check_p2_direct(seed: int = 2) -> CheckResult:
    rng = np.random.default_rng(seed)
    mesh = annulus_mesh(0.5, 1.0, 1, outer="boundary")
    h = rng.uniform(-1, 1, mesh.n_vertices)
    a = solve_dirichlet(mesh, h, SolverParams(p=2.0, rel_tol_residual=1e-13)).values
    b = solve_p2_direct(mesh, h).values
    return _check("p = 2 solver vs direct linear solve", float(np.max(np.abs(a - b))), 1e-8)


def check_linear_residual() -> CheckResult:
    mesh = unit_square(2)
    u = 0.3 + 1.7 * mesh.vertices[:, 0] - 0.4 * mesh.vertices[:, 1]
    worst = max(weak_residual(mesh, u, p, interior_test_mask(mesh)) for p in (1.5, 2.0, 3.0))
    return _check("linear field weak residual", worst, 1e-12)


def check_poincare() -> CheckResult:
    C = poincare_constant(unit_square(3), 2.0).C
    return _check("unit square Poincare constant", abs(C * math.pi ** 2 - 1.0), 0.05)


CHECKS = (check_oracle, check_gradient, check_homogeneity, check_p2_direct,
          check_linear_residual, check_poincare)


def run_checks() -> list[CheckResult]:
    return [fn() for fn in CHECKS]
