"""Constrained minimization of the p-Dirichlet energy.

Three problems share one engine, :func:`minimize_energy`, which minimizes the
regularized energy over fields agreeing with a reference on a fixed-node mask:

* :func:`solve_dirichlet` fixes the manifold boundary and the truncation;
* :func:`solve_neumann_member` fixes only the truncation (natural condition
  on the boundary), returning ``w = seed - v``;
* :mod:`pharmonic.capacity` fixes ``K`` to ``psi`` and the complement of the
  region to zero.

:func:`solve_p2_direct` is a separate linear path for p = 2 used as a
cross-check; it assembles its own stiffness matrix.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .energy import (EnergyReport, ScalarField, assembler, check_exponent, default_epsilon,
                     interior_test_mask, natural_test_mask)
from .mesh import MeshManifold

log = logging.getLogger(__name__)

METHODS = ("irls", "newton", "gd")


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverParams:
    """Solver configuration.

    ``tol_residual=None`` means ``1e-8`` times the energy scale, taken as
    ``max(E(initial guess), 1e-300)``. The tolerance is never set below the
    double-precision roundoff level of the residual at the returned field. ``epsilon=None`` means ``1e-8`` times
    the mesh diameter. Once a step lowers the energy by less than
    ``tol_energy`` (relative), energy comparisons are near roundoff and the
    solver finishes with Newton steps accepted on residual decrease.
    """

    p: float = 2.0
    epsilon: float | None = None
    tol_residual: float | None = None
    rel_tol_residual: float = 1e-8
    tol_energy: float = 1e-12
    max_iter: int = 200
    damping: float = 1.0
    method: str = "irls"

    def __post_init__(self):
        check_exponent(self.p)
        if self.tol_residual is not None and not self.tol_residual > 0:
            raise ValueError("tol_residual must be positive")
        if not self.rel_tol_residual > 0 or not self.tol_energy > 0:
            raise ValueError("tolerances must be positive")
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.epsilon is not None and self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")

    def with_(self, **kw) -> "SolverParams":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {"p": self.p, "epsilon": self.epsilon, "tol_residual": self.tol_residual,
                "rel_tol_residual": self.rel_tol_residual, "tol_energy": self.tol_energy,
                "max_iter": self.max_iter, "damping": self.damping, "method": self.method}


@dataclass
class SolveResult:
    field: ScalarField
    energy: EnergyReport
    residual: float
    iterations: int
    converged: bool
    tol_residual: float = 0.0
    history: list = field(default_factory=list, repr=False)

    @property
    def values(self) -> np.ndarray:
        return self.field.values

    def to_dict(self) -> dict:
        return {"values": self.field.values.tolist(), "energy": self.energy.to_dict(),
                "residual": self.residual, "tol_residual": self.tol_residual,
                "iterations": self.iterations, "converged": self.converged}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass
class NeumannSolution:
    """A member of the natural-boundary class with its full-test-space certificate."""

    result: SolveResult
    full_test_space_residual: float
    test_space: str = "all nodes except outer truncation"

    @property
    def field(self) -> ScalarField:
        return self.result.field

    @property
    def values(self) -> np.ndarray:
        return self.result.field.values

    def to_dict(self) -> dict:
        out = self.result.to_dict()
        out["full_test_space_residual"] = self.full_test_space_residual
        out["test_space"] = self.test_space
        return out


def _epsilon(mesh, params):
    return default_epsilon(mesh) if params.epsilon is None else float(params.epsilon)


def _components(mesh: MeshManifold):
    cached = getattr(mesh, "_components", None)
    if cached is None:
        A = assembler(mesh)
        adj = sp.coo_matrix((np.ones(A.rows.size), (A.rows, A.cols)),
                            shape=(mesh.n_vertices, mesh.n_vertices))
        cached = connected_components(adj, directed=False)[1]
        object.__setattr__(mesh, "_components", cached)
    return cached


def _pins(mesh: MeshManifold, fixed: np.ndarray) -> np.ndarray:
    """Lowest-index node of every connected component with no fixed node."""
    labels = _components(mesh)
    has_fixed = np.zeros(labels.max() + 1, dtype=bool)
    has_fixed[labels[fixed]] = True
    pins = []
    for c in np.flatnonzero(~has_fixed):
        pins.append(int(np.flatnonzero(labels == c)[0]))
    return np.array(pins, dtype=np.int64)


def _restore_means(mesh, u, ref, pins):
    """Shift each pinned component so its volume mean matches ``ref``."""
    if pins.size == 0:
        return u
    labels = _components(mesh)
    vol = mesh.element_volume
    el_label = labels[mesh.simplices[:, 0]]
    u = u.copy()
    for pin in pins:
        c = labels[pin]
        els = el_label == c
        nodes = labels == c
        total = vol[els].sum()
        if total <= 0:
            u[nodes] += ref[pin] - u[pin]
            continue
        mean_u = np.sum(u[mesh.simplices[els]].mean(axis=1) * vol[els]) / total
        mean_r = np.sum(ref[mesh.simplices[els]].mean(axis=1) * vol[els]) / total
        u[nodes] += mean_r - mean_u
    return u


class _Problem:
    def __init__(self, mesh, fixed, params):
        self.mesh = mesh
        self.A = assembler(mesh)
        self.p = params.p
        self.eps = _epsilon(mesh, params)
        self.fixed = fixed
        self.free = ~fixed
        self.free_idx = np.flatnonzero(self.free)

    def energy(self, u):
        return self.A.energy(u, self.p, self.eps)

    def gradient(self, u):
        return self.A.gradient(u, self.p, self.eps)

    def residual(self, u, mask):
        if not mask.any():
            return 0.0
        return float(np.max(np.abs(self.gradient(u)[mask]))) / self.p

    def roundoff_floor(self, u, mask):
        """Residual level reachable in double precision: ``100 eps max(|A(w)| |u|)``."""
        if not mask.any():
            return 0.0
        _, s = self.A.gradients(u)
        W = self.A.weighted_matrix(self.A.weights(s, self.p, self.eps))
        return 100 * np.finfo(float).eps * float(np.max((abs(W) @ np.abs(u))[mask]))

    def solve_free(self, M: sp.csr_matrix, rhs: np.ndarray) -> np.ndarray:
        f = self.free_idx
        Mff = M[f][:, f].tocsc()
        try:
            return spla.splu(Mff).solve(rhs[f])
        except RuntimeError as exc:
            raise SolverError(f"singular linear system on free nodes: {exc}") from exc

    def harmonic(self, u):
        """p = 2 minimizer with the same fixed values (metric Laplacian)."""
        K = self.A.weighted_matrix(np.ones(self.mesh.n_elements))
        out = u.copy()
        if self.free_idx.size:
            # solve for the offset from the mean fixed value, so constant data stay exact
            c = float(np.mean(u[self.fixed])) if self.fixed.any() else 0.0
            rhs = -(K @ np.where(self.fixed, u - c, 0.0))
            out[self.free_idx] = c + self.solve_free(K, rhs)
        return out

    def direction(self, u, method, K0):
        g = self.gradient(u)
        d = np.zeros_like(u)
        if method == "irls":
            _, s = self.A.gradients(u)
            W = self.A.weighted_matrix(self.A.weights(s, self.p, self.eps))
            target = u.copy()
            target[self.free_idx] = self.solve_free(W, -(W @ np.where(self.fixed, u, 0.0)))
            d = target - u
            d[self.fixed] = 0.0
        elif method == "newton":
            H = self.A.hessian(u, self.p, self.eps)
            d[self.free_idx] = self.solve_free(H, -g)
        else:
            d[self.free_idx] = self.solve_free(K0, -g)
        return d, g


def minimize_energy(mesh: MeshManifold, reference, fixed, params: SolverParams,
                    initial=None, test_mask=None) -> SolveResult:
    """Minimize the regularized energy over fields equal to ``reference`` on ``fixed``.

    Components without a fixed node are pinned at one node during the solve
    and shifted afterwards to the reference's volume mean, which removes the
    constant null direction without changing the energy.

    Returns a :class:`SolveResult` whose residual is the weak-form residual
    over ``test_mask`` (default: all free nodes).
    """
    ref = np.asarray(getattr(reference, "values", reference), dtype=float)
    fixed = np.asarray(fixed, dtype=bool).copy()
    if ref.shape != (mesh.n_vertices,) or fixed.shape != ref.shape:
        raise ValueError("reference field and mask must have one entry per vertex")
    if not np.all(np.isfinite(ref[fixed])):
        raise ValueError("fixed values must be finite")
    pins = _pins(mesh, fixed)
    solve_fixed = fixed.copy()
    solve_fixed[pins] = True
    free_mask = ~fixed
    test = free_mask if test_mask is None else np.asarray(test_mask, dtype=bool)
    prob = _Problem(mesh, solve_fixed, params)

    if initial is None:
        start = np.where(solve_fixed, ref, 0.0)
        u = prob.harmonic(start) if prob.free_idx.size else start
    else:
        u = np.where(solve_fixed, ref, np.asarray(getattr(initial, "values", initial), dtype=float))

    E = prob.energy(u)
    tol = params.tol_residual if params.tol_residual is not None else params.rel_tol_residual * max(E, 1e-300)
    method = params.method
    K0 = prob.A.weighted_matrix(np.ones(mesh.n_elements)) if method == "gd" else None
    history = [E]
    res = prob.residual(u, test)
    it = 0
    endgame = False
    free_all = prob.free
    while res > max(tol, prob.roundoff_floor(u, test)) and it < params.max_iter and prob.free_idx.size:
        it += 1
        if endgame:
            # energy differences are at roundoff level: Newton steps judged by the residual
            d, g = prob.direction(u, "newton", K0)
            r0 = prob.residual(u, free_all)
            t = 1.0
            for _ in range(30):
                trial = u + t * d
                if prob.residual(trial, free_all) < r0:
                    break
                t *= 0.5
            else:
                log.debug("residual line search failed at iteration %d", it)
                break
            u = trial
            E = prob.energy(u)
            history.append(E)
            res = prob.residual(u, test)
            continue
        d, g = prob.direction(u, method, K0)
        slope = float(g @ d)
        if slope >= 0 and method != "irls":
            # not a descent direction (numerical breakdown): fall back to IRLS
            d, g = prob.direction(u, "irls", K0)
            slope = float(g @ d)
        t = params.damping
        if method == "irls" and params.p > 2:
            # reweighting overshoots by ~(p-1) for p > 2; start at the Newton-consistent scale
            t /= params.p - 1.0
        E_new = E
        accepted = False
        for _ in range(60):
            trial = u + t * d
            E_new = prob.energy(trial)
            if E_new <= E + 1e-14 * abs(E):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            endgame = True
            continue
        u = trial
        decrease = E - E_new
        E = E_new
        history.append(E)
        res = prob.residual(u, test)
        if decrease <= params.tol_energy * max(abs(E), 1e-300):
            endgame = True
    u = _restore_means(mesh, u, ref, pins)
    res = prob.residual(u, test) if prob.free_idx.size else (prob.residual(u, test) if test.any() else 0.0)
    E = prob.energy(u)
    tol = max(tol, prob.roundoff_floor(u, test))
    converged = bool(res <= tol)
    if not converged:
        log.warning("solver stopped after %d iterations, residual %.3e > tol %.3e", it, res, tol)
    out = ScalarField(u, fixed=fixed, tag="solver")
    return SolveResult(field=out, energy=EnergyReport(E, params.p, prob.eps, tolerance=float(tol)),
                       residual=res, iterations=it, converged=converged,
                       tol_residual=tol, history=history)


def dirichlet_mask(mesh: MeshManifold, h=None) -> np.ndarray:
    fixed = mesh.boundary_mask | mesh.truncation_mask
    extra = getattr(h, "fixed", None)
    if extra is not None:
        fixed = fixed | extra
    return fixed


def solve_dirichlet(mesh: MeshManifold, h, params: SolverParams, initial=None,
                    candidates=()) -> SolveResult:
    """Discrete p-harmonic function with the values of ``h`` on the boundary.

    Fixed nodes are the boundary and the truncation, plus any nodes marked
    fixed on ``h``. Each admissible field in ``candidates`` is compared with
    the result; a lower candidate energy is logged as a certificate failure.
    """
    fixed = dirichlet_mask(mesh, h)
    if not fixed.any():
        raise SolverError("Dirichlet problem has no fixed nodes")
    result = minimize_energy(mesh, h, fixed, params, initial=initial,
                             test_mask=interior_test_mask(mesh) & ~fixed)
    ref = np.asarray(getattr(h, "values", h), dtype=float)
    A = assembler(mesh)
    for c in candidates:
        cv = np.asarray(getattr(c, "values", c), dtype=float)
        if not np.allclose(cv[fixed], ref[fixed]):
            raise ValueError("candidate is not admissible: differs on fixed nodes")
        if A.energy(cv, params.p, result.energy.epsilon) < result.energy.value * (1 - 1e-12):
            log.warning("admissible candidate has lower energy than the solver output")
            result.converged = False
    return result


def _p1_stiffness(mesh: MeshManifold) -> sp.csr_matrix:
    """Classical P1 stiffness assembly via inverse vertex matrices."""
    d = mesh.dim
    rows, cols, vals = [], [], []
    for e in range(mesh.n_elements):
        X = np.hstack([np.ones((d + 1, 1)), mesh.chart_coords[e]])
        C = np.linalg.inv(X)  # column a holds the coefficients of hat function a
        grads = C[1:, :].T  # (d+1, d)
        g_inv = np.linalg.inv(mesh.element_metric[e])
        vol = abs(np.linalg.det(X)) / math.factorial(d) * math.sqrt(np.linalg.det(mesh.element_metric[e]))
        Ke = vol * grads @ g_inv @ grads.T
        idx = mesh.simplices[e]
        rows.append(np.repeat(idx, d + 1))
        cols.append(np.tile(idx, d + 1))
        vals.append(Ke.ravel())
    n = mesh.n_vertices
    return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n)).tocsr()


def solve_p2_direct(mesh: MeshManifold, h, fixed=None) -> SolveResult:
    """Direct sparse solve of the p = 2 problem; independent of the nonlinear engine."""
    ref = np.asarray(getattr(h, "values", h), dtype=float)
    fixed = dirichlet_mask(mesh, h) if fixed is None else np.asarray(fixed, dtype=bool)
    if not fixed.any():
        raise SolverError("system is singular: no fixed node constrains the constant mode; "
                          "fix at least one node (boundary or truncation)")
    K = _p1_stiffness(mesh)
    free = np.flatnonzero(~fixed)
    u = np.where(fixed, ref, 0.0)
    if free.size:
        Kff = K[free][:, free].tocsc()
        rhs = -(K @ u)[free]
        u[free] = spla.spsolve(Kff, rhs)
    # a free component without fixed nodes makes Kff singular
    if not np.all(np.isfinite(u)):
        raise SolverError("system is singular: a connected component has no fixed node")
    g = K @ u
    res = float(np.max(np.abs(g[free]))) if free.size else 0.0
    E = float(u @ g)
    return SolveResult(field=ScalarField(u, fixed=fixed, tag="solver"),
                       energy=EnergyReport(E, 2.0, 0.0), residual=res, iterations=1,
                       converged=True, tol_residual=0.0)


def solve_neumann_member(mesh: MeshManifold, seed, params: SolverParams,
                         initial=None) -> NeumannSolution:
    """Project ``seed`` onto the natural-boundary class.

    Minimizes ``E(seed - phi)`` over ``phi`` vanishing on the truncation, i.e.
    the energy over fields agreeing with ``seed`` on the truncation, and
    returns ``w = seed - v``. Components with no truncation node keep the
    seed's volume mean.
    """
    ref = np.asarray(getattr(seed, "values", seed), dtype=float)
    fixed = mesh.truncation_mask
    result = minimize_energy(mesh, ref, fixed, params, initial=initial,
                             test_mask=natural_test_mask(mesh))
    result.field.tag = "witness"
    full = result.residual
    return NeumannSolution(result=result, full_test_space_residual=full)
