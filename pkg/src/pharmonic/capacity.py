"""Weighted p-capacities of node sets and their exhaustion sequences.

``cap_psi(K, Omega)`` is the least energy of a field equal to ``psi`` on the
node set ``K`` and vanishing off ``Omega``: on nodes outside the region, on
its interface with the rest of the mesh, and on the truncation. Nodes of
``K`` keep ``psi`` even where they touch the interface.
"""
from __future__ import annotations

import csv
import io
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .energy import ScalarField, assembler
from .mesh import ExhaustionSequence, MeshManifold, Region, boundary_measure, interface_nodes
from .solver import SolverParams, minimize_energy

log = logging.getLogger(__name__)

DIRECTIONS = ("growing-K", "growing-Omega", "diagonal")


@dataclass(eq=False)
class CapacityEstimate:
    value: float
    K: np.ndarray
    Omega: Region
    psi: ScalarField
    minimizer: ScalarField
    residual: float
    iterations: int
    converged: bool
    epsilon: float
    p: float
    tol_residual: float = 0.0
    empty_K: bool = False

    def to_dict(self) -> dict:
        return {"value": self.value, "p": self.p, "epsilon": self.epsilon,
                "region": self.Omega.name, "K_size": int(self.K.size),
                "tolerance": self.tol_residual, "residual": self.residual,
                "iterations": self.iterations, "converged": self.converged,
                "empty_K": self.empty_K}


@dataclass(eq=False)
class CapacitySequence:
    direction: str
    levels: list[int] = field(default_factory=list)
    sizes: list[float] = field(default_factory=list)
    estimates: list[CapacityEstimate] = field(default_factory=list)
    monotone: bool | None = None
    max_violation: float = 0.0
    skipped: list[int] = field(default_factory=list)

    @property
    def values(self) -> np.ndarray:
        return np.array([e.value for e in self.estimates])

    def to_dict(self) -> dict:
        return {"direction": self.direction, "levels": list(self.levels),
                "sizes": list(self.sizes), "values": self.values.tolist(),
                "monotone": self.monotone, "max_violation": self.max_violation,
                "skipped_levels": list(self.skipped),
                "estimates": [e.to_dict() for e in self.estimates]}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "size", "capacity"])
        for lvl, size, e in zip(self.levels, self.sizes, self.estimates):
            w.writerow([lvl, repr(float(size)), repr(float(e.value))])
        return buf.getvalue()


def _psi_values(mesh, psi) -> np.ndarray:
    if callable(psi) and not hasattr(psi, "values"):
        return np.asarray(psi(mesh.vertices), dtype=float)
    v = np.asarray(getattr(psi, "values", psi), dtype=float)
    if v.ndim == 0:
        return np.full(mesh.n_vertices, float(v))
    return v


def admissible_masks(mesh: MeshManifold, K, Omega: Region):
    """Return (fixed mask, K mask) for the capacity problem on ``(K, Omega)``."""
    Kmask = mesh.mask(K)
    zero = np.ones(mesh.n_vertices, dtype=bool)
    zero[Omega.node_set] = False
    zero[interface_nodes(mesh, Omega)] = True
    zero |= mesh.truncation_mask
    zero &= ~Kmask
    return zero | Kmask, Kmask


def capacity_compact(mesh: MeshManifold, K, Omega: Region, psi, params: SolverParams,
                     initial=None) -> CapacityEstimate:
    """Discrete ``cap_psi(K, Omega)`` with its minimizer.

    Parameters
    ----------
    K : int array
        Node indices of the compact set; should lie in ``Omega.node_set``.
    Omega : Region
        Region outside of which admissible fields vanish.
    psi : ScalarField, array, scalar or callable of the vertex array
        Data prescribed on ``K``.
    """
    K = np.unique(np.asarray(K, dtype=np.int64))
    psi_v = _psi_values(mesh, psi)
    psi_field = psi if isinstance(psi, ScalarField) else ScalarField(psi_v)
    if K.size and not np.all(np.isin(K, Omega.node_set)):
        raise ValueError("K must lie in the closure of Omega")
    fixed, Kmask = admissible_masks(mesh, K, Omega)
    ref = np.where(Kmask, psi_v, 0.0)
    if K.size == 0:
        warnings.warn("capacity of an empty set is 0", RuntimeWarning, stacklevel=2)
    res = minimize_energy(mesh, ref, fixed, params, initial=initial)
    if not res.converged:
        log.warning("capacity solve did not converge (residual %.3e)", res.residual)
    # the reported value is the unregularized energy of the regularized minimizer
    value = assembler(mesh).energy(res.field.values, params.p, 0.0)
    return CapacityEstimate(
        value=value, K=K, Omega=Omega, psi=psi_field, minimizer=res.field,
        residual=res.residual, iterations=res.iterations, converged=res.converged,
        epsilon=res.energy.epsilon, p=params.p, tol_residual=res.tol_residual,
        empty_K=K.size == 0,
    )


def boundary_rule(mesh: MeshManifold):
    """Node-set rule ``E ∩ closure(Omega_i)`` with ``E`` the manifold boundary."""
    def rule(region: Region) -> np.ndarray:
        return np.intersect1d(mesh.boundary_nodes, region.node_set)
    return rule


def capacity_closed(mesh: MeshManifold, E, exhaustion: ExhaustionSequence, psi,
                    params: SolverParams, direction: str = "growing-K",
                    slack: float = 1e-8) -> CapacitySequence:
    """Capacities of the compacts ``K_i = E ∩ closure(Omega_i)`` along an exhaustion.

    ``direction`` chooses the pairs: "growing-K" uses ``(K_i, Omega_last)``,
    "growing-Omega" uses ``(K_1, Omega_i)`` and "diagonal" ``(K_i, Omega_i)``.
    The first two are checked for the monotonicity forced by set inclusion.
    ``E`` is a callable mapping a region to node indices, or a node array.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    pick = E if callable(E) else (lambda region, _E=np.asarray(E): np.intersect1d(_E, region.node_set))
    seq = CapacitySequence(direction=direction)
    last = exhaustion[len(exhaustion) - 1]
    K_first = None
    for i, region in enumerate(exhaustion):
        K = np.asarray(pick(region), dtype=np.int64)
        if K.size == 0:
            warnings.warn(f"level {i + 1} has an empty compact; skipped", RuntimeWarning, stacklevel=2)
            seq.skipped.append(i + 1)
            continue
        if K_first is None:
            K_first = K
        if direction == "growing-K":
            Ki, Om = K, last
        elif direction == "growing-Omega":
            Ki, Om = K_first, region
        else:
            Ki, Om = K, region
        est = capacity_compact(mesh, Ki, Om, psi, params)
        seq.levels.append(i + 1)
        seq.sizes.append(_size(mesh, Ki))
        seq.estimates.append(est)
    vals = seq.values
    if direction != "diagonal" and vals.size > 1:
        steps = np.diff(vals) if direction == "growing-K" else -np.diff(vals)
        seq.max_violation = float(max(0.0, -steps.min()))
        seq.monotone = bool(seq.max_violation <= slack)
    return seq


def _size(mesh: MeshManifold, K: np.ndarray) -> float:
    """Metric measure of the boundary facets in ``K``; node count as fallback."""
    m = boundary_measure(mesh, K) if mesh.dim > 1 else 0.0
    return float(m) if m > 0 else float(K.size)
