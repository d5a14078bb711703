"""p-Dirichlet energy of piecewise-linear fields and its derivatives.

The regularized energy density is ``(|grad u|^2 + eps^2)^(p/2)``, where
``|grad u|^2 = g^ij d_i u d_j u`` uses the element's inverse metric. Gradients
are constant per element, so every integral below is exact.

All element sums are scattered with ``np.bincount``/COO assembly in a fixed
element order, which makes repeated evaluations bit-identical.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import MeshManifold, Region

DEFAULT_EPS_FACTOR = 1e-8


class ExponentError(ValueError):
    pass


@dataclass(eq=False)
class ScalarField:
    """Nodal values with an optional per-node constraint mask.

    ``fixed[i]`` True means node ``i`` keeps its value under any solver
    action. ``tag`` records where the field came from ("data", "solver",
    "witness", ...).
    """

    values: np.ndarray
    fixed: np.ndarray | None = None
    tag: str = "data"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.fixed is not None:
            self.fixed = np.asarray(self.fixed, dtype=bool)
            if self.fixed.shape != self.values.shape:
                raise ValueError("constraint mask and values differ in length")

    def __len__(self) -> int:
        return self.values.size

    @classmethod
    def from_function(cls, mesh: MeshManifold, fn, tag: str = "data") -> "ScalarField":
        return cls(np.asarray(fn(mesh.vertices), dtype=float).reshape(mesh.n_vertices), tag=tag)

    @classmethod
    def constant(cls, mesh: MeshManifold, c: float, tag: str = "data") -> "ScalarField":
        return cls(np.full(mesh.n_vertices, float(c)), tag=tag)


@dataclass
class EnergyReport:
    value: float
    p: float
    epsilon: float
    per_region: dict[str, float] = field(default_factory=dict)
    region: str = "M"
    tolerance: float | None = None

    def to_dict(self) -> dict:
        out = {"value": self.value, "p": self.p, "epsilon": self.epsilon,
               "region": self.region, "tolerance": self.tolerance}
        if self.per_region:
            out["per_region"] = dict(self.per_region)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def check_exponent(p: float) -> float:
    p = float(p)
    if not p > 1:
        raise ExponentError(f"exponent p must exceed 1, got {p}")
    return p


def default_epsilon(mesh: MeshManifold) -> float:
    return DEFAULT_EPS_FACTOR * max(mesh.diameter, 1e-300)


def _values(field_or_array) -> np.ndarray:
    return np.asarray(getattr(field_or_array, "values", field_or_array), dtype=float)


class Assembler:
    """Element-level kernels for a fixed mesh.

    Caches the per-element P1 stiffness blocks ``vol * B G^-1 B^T`` and the
    sparsity pattern, then assembles weighted matrices and nodal vectors.
    """

    def __init__(self, mesh: MeshManifold):
        self.mesh = mesh
        S = mesh.simplices
        B = mesh.hat_gradients  # (ne, k, d)
        self.vol = mesh.element_volume
        self.GB = np.einsum("eij,ekj->eki", mesh.inverse_metric, B)  # (ne, k, d): G^-1 B_k
        self.local_stiffness = np.einsum("ekd,eld->ekl", B, self.GB) * self.vol[:, None, None]
        k = S.shape[1]
        self.rows = np.repeat(S, k, axis=1).ravel()
        self.cols = np.tile(S, (1, k)).ravel()
        self.n = mesh.n_vertices
        self._B = B

    def gradients(self, u: np.ndarray):
        # differences to the first vertex: constants give an exactly zero gradient
        U = u[self.mesh.simplices]
        gu = np.einsum("ea,ead->ed", U[:, 1:] - U[:, :1], self._B[:, 1:])
        s = np.einsum("ed,edk,ek->e", gu, self.mesh.inverse_metric, gu)
        return gu, np.maximum(s, 0.0)

    def density(self, s: np.ndarray, p: float, eps: float) -> np.ndarray:
        if eps == 0.0:
            return np.sqrt(s) ** p
        return (s + eps * eps) ** (0.5 * p)

    def weights(self, s: np.ndarray, p: float, eps: float) -> np.ndarray:
        """IRLS weights ``(s + eps^2)^((p-2)/2)``."""
        if p == 2.0:
            return np.ones_like(s)
        base = s + eps * eps
        with np.errstate(divide="ignore"):
            return base ** (0.5 * (p - 2.0))

    def energy_per_element(self, u, p, eps) -> np.ndarray:
        _, s = self.gradients(u)
        return self.density(s, p, eps) * self.vol

    def energy(self, u, p, eps) -> float:
        return float(np.sum(self.energy_per_element(u, p, eps)))

    def scatter(self, local: np.ndarray) -> np.ndarray:
        return np.bincount(self.mesh.simplices.ravel(), weights=local.ravel(), minlength=self.n)

    def gradient(self, u, p, eps) -> np.ndarray:
        gu, s = self.gradients(u)
        w = self.weights(s, p, eps)
        # (G^-1 grad u) . B_a per element and local vertex
        flux = np.einsum("ed,ekd->ek", gu, self.GB)
        return p * self.scatter((w * self.vol)[:, None] * flux)

    def weighted_matrix(self, w: np.ndarray) -> sp.csr_matrix:
        data = (w[:, None, None] * self.local_stiffness).ravel()
        return sp.coo_matrix((data, (self.rows, self.cols)), shape=(self.n, self.n)).tocsr()

    def hessian(self, u, p, eps) -> sp.csr_matrix:
        gu, s = self.gradients(u)
        base = s + eps * eps
        data = self.local_stiffness * (p * self.weights(s, p, eps))[:, None, None]
        if p != 2.0:
            with np.errstate(divide="ignore", invalid="ignore"):
                w2 = p * (p - 2.0) * base ** (0.5 * (p - 4.0)) * self.vol
            w2 = np.where(np.isfinite(w2), w2, 0.0)
            flux = np.einsum("ed,ekd->ek", gu, self.GB)
            data = data + w2[:, None, None] * flux[:, :, None] * flux[:, None, :]
        return sp.coo_matrix((data.ravel(), (self.rows, self.cols)), shape=(self.n, self.n)).tocsr()


def assembler(mesh: MeshManifold) -> Assembler:
    cached = getattr(mesh, "_assembler", None)
    if cached is None:
        cached = Assembler(mesh)
        object.__setattr__(mesh, "_assembler", cached)
    return cached


def _resolve_eps(mesh, epsilon):
    if epsilon is None:
        return default_epsilon(mesh)
    epsilon = float(epsilon)
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    return epsilon


def dirichlet_energy(mesh: MeshManifold, field, p: float, epsilon: float | None = 0.0,
                     regions: list[Region] | None = None) -> EnergyReport:
    """Total ``sum_e (|grad u|^2 + eps^2)^(p/2) vol_e``; exact ``int |grad u|^p dV`` at eps=0."""
    p = check_exponent(p)
    eps = _resolve_eps(mesh, epsilon)
    per_el = assembler(mesh).energy_per_element(_values(field), p, eps)
    report = EnergyReport(value=float(np.sum(per_el)), p=p, epsilon=eps)
    for r in regions or ():
        report.per_region[r.name] = float(np.sum(per_el[r.element_set]))
    return report


def energy_gradient(mesh: MeshManifold, field, p: float, epsilon: float | None = None,
                    free: np.ndarray | None = None) -> np.ndarray:
    """Derivative of the regularized energy w.r.t. each nodal value.

    Nodes not in ``free`` (or marked fixed on a :class:`ScalarField`) report 0.
    For ``p < 2`` the density is not differentiable at zero gradient, so
    ``epsilon`` must be positive there.
    """
    p = check_exponent(p)
    eps = _resolve_eps(mesh, epsilon)
    if p < 2 and eps == 0.0:
        raise ValueError("energy gradient for p < 2 needs epsilon > 0")
    g = assembler(mesh).gradient(_values(field), p, eps)
    if free is None and getattr(field, "fixed", None) is not None:
        free = ~field.fixed
    if free is not None:
        g = np.where(np.asarray(free, dtype=bool), g, 0.0)
    return g


def weak_residual(mesh: MeshManifold, field, p: float, test_mask, epsilon: float | None = None) -> float:
    """Max over test nodes of ``|int g^ij |grad u|^(p-2) d_j u d_i phi dV|``.

    ``phi`` ranges over the nodal hat functions selected by ``test_mask``.
    This equals ``max|energy_gradient| / p`` on the mask.
    """
    p = check_exponent(p)
    eps = _resolve_eps(mesh, epsilon)
    mask = np.asarray(test_mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty test space")
    g = assembler(mesh).gradient(_values(field), p, eps) / p
    return float(np.max(np.abs(g[mask])))


def interior_test_mask(mesh: MeshManifold) -> np.ndarray:
    """Test space for the Dirichlet problem: vanish on dM and the truncation."""
    return ~(mesh.boundary_mask | mesh.truncation_mask)


def natural_test_mask(mesh: MeshManifold) -> np.ndarray:
    """Test space for the natural boundary condition: vanish only on the truncation."""
    return ~mesh.truncation_mask


def mass_matrix(mesh: MeshManifold, elements: np.ndarray | None = None) -> sp.csr_matrix:
    """Consistent P1 mass matrix with metric volumes."""
    d = mesh.dim
    k = d + 1
    local = (np.ones((k, k)) + np.eye(k)) / ((d + 1) * (d + 2))
    vol = mesh.element_volume.copy()
    if elements is not None:
        keep = np.zeros(mesh.n_elements, dtype=bool)
        keep[elements] = True
        vol = np.where(keep, vol, 0.0)
    A = assembler(mesh)
    data = (vol[:, None, None] * local[None]).ravel()
    n = mesh.n_vertices
    return sp.coo_matrix((data, (A.rows, A.cols)), shape=(n, n)).tocsr()


def integrate(mesh: MeshManifold, field, elements: np.ndarray | None = None) -> float:
    """Exact ``int u dV`` of the P1 interpolant."""
    u = _values(field)
    per = u[mesh.simplices].mean(axis=1) * mesh.element_volume
    if elements is not None:
        per = per[elements]
    return float(np.sum(per))
