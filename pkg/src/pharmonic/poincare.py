"""Discrete Poincare constants on a region ``G``.

Two forms are estimated, both as the supremum of a quotient over P1 fields:

* ``"mean"``: ``int_G |u - alpha|^p <= C int_G |grad u|^p`` with ``alpha`` the
  volume mean of ``u`` on ``G``;
* ``"integral"``: ``int_G |u|^p <= C (int_G |grad u|^p + |int_omega u|^p)``
  for a subset ``omega`` of positive measure.

For p = 2 the supremum is a generalized eigenvalue problem and the constant
is certified for every discrete field. For other p the quotient is maximized
by L-BFGS from the p = 2 extremal; the result is a lower bound.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import minimize

from .energy import assembler, check_exponent, mass_matrix
from .mesh import MeshManifold, Region, build_mesh, volume

DENSE_LIMIT = 2500

# degree-2 rules in barycentric coordinates: (points, weights summing to 1)
_A, _B = 0.5854101966249685, 0.1381966011250105
_RULES = {
    1: (np.array([[0.5 + 0.5 / math.sqrt(3), 0.5 - 0.5 / math.sqrt(3)],
                  [0.5 - 0.5 / math.sqrt(3), 0.5 + 0.5 / math.sqrt(3)]]), np.full(2, 0.5)),
    2: (np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]), np.full(3, 1 / 3)),
    3: (np.array([[_A, _B, _B, _B], [_B, _A, _B, _B], [_B, _B, _A, _B], [_B, _B, _B, _A]]),
        np.full(4, 0.25)),
}


@dataclass
class PoincareEstimate:
    C: float
    p: float
    G: str
    omega: str
    form: str
    method: str
    alpha: float = 0.0
    epsilon: float = 0.0
    tolerance: float | None = None
    extremal: np.ndarray | None = field(default=None, repr=False)
    _sub: "_SubProblem | None" = field(default=None, repr=False)

    @property
    def certified(self) -> bool:
        return self.method == "eigensolve"

    def sides(self, u) -> tuple[float, float]:
        """(left side, C * bracket) of the certified inequality for a field on the full mesh."""
        return self._sub.sides(np.asarray(getattr(u, "values", u), dtype=float), self.C)

    def holds(self, u, rtol: float = 1e-9) -> bool:
        lhs, rhs = self.sides(u)
        return lhs <= rhs * (1 + rtol) + 1e-300

    def to_dict(self) -> dict:
        return {"value": self.C, "p": self.p, "epsilon": self.epsilon, "region": self.G,
                "omega": self.omega, "form": self.form, "method": self.method,
                "alpha": self.alpha, "tolerance": self.tolerance}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def submesh(mesh: MeshManifold, region: Region) -> tuple[MeshManifold, np.ndarray]:
    """Mesh made of the region's elements, plus the map local node -> global node."""
    nodes = region.node_set
    local = np.full(mesh.n_vertices, -1, dtype=np.int64)
    local[nodes] = np.arange(nodes.size)
    S = local[mesh.simplices[region.element_set]]
    sub = build_mesh(mesh.vertices[nodes], S, mesh.element_metric[region.element_set],
                     periods=mesh.periods)
    return sub, nodes


class _SubProblem:
    def __init__(self, mesh, G, omega, p, form, eps):
        self.sub, self.nodes = submesh(mesh, G)
        self.p, self.form, self.eps = p, form, eps
        sub = self.sub
        self.K = assembler(sub).weighted_matrix(np.ones(sub.n_elements))
        self.M = mass_matrix(sub)
        vol = sub.element_volume
        self.mean_weights = np.bincount(sub.simplices.ravel(),
                                        weights=np.repeat(vol / sub.simplices.shape[1], sub.simplices.shape[1]),
                                        minlength=sub.n_vertices)
        self.vol_G = float(vol.sum())
        self.b = None
        if form == "integral":
            in_omega = np.isin(G.element_set, omega.element_set)
            w = np.where(in_omega, vol, 0.0) / sub.simplices.shape[1]
            self.b = np.bincount(sub.simplices.ravel(), weights=np.repeat(w, sub.simplices.shape[1]),
                                 minlength=sub.n_vertices)
        pts, wts = _RULES[sub.dim]
        nq = pts.shape[0]
        rows = np.arange(sub.n_elements * nq).repeat(sub.dim + 1)
        cols = np.repeat(sub.simplices, nq, axis=0).ravel()
        data = np.tile(pts, (sub.n_elements, 1)).ravel()
        self.P = sp.csr_matrix((data, (rows, cols)), shape=(sub.n_elements * nq, sub.n_vertices))
        self.qw = np.repeat(vol, nq) * np.tile(wts, sub.n_elements)

    def local(self, u_full):
        return u_full[self.nodes]

    def alpha(self, u):
        return float(self.mean_weights @ u) / self.vol_G

    def numerator(self, u):
        if self.form == "mean":
            u = u - self.alpha(u)
        if self.p == 2.0:
            return float(u @ (self.M @ u))
        return float(self.qw @ np.abs(self.P @ u) ** self.p)

    def denominator(self, u, eps=0.0):
        d = assembler(self.sub).energy(u, self.p, eps)
        if self.b is not None:
            d += abs(float(self.b @ u)) ** self.p
        return d

    def sides(self, u_full, C):
        u = self.local(u_full)
        return self.numerator(u), C * self.denominator(u)


def _eig_p2(sp_: _SubProblem):
    """Largest quotient for p = 2 and its extremal field."""
    K, M = sp_.K, sp_.M
    n = K.shape[0]
    scale = float(K.diagonal().sum() / M.diagonal().sum())
    if sp_.form == "integral":
        if n <= DENSE_LIMIT:
            A = K.toarray() + np.outer(sp_.b, sp_.b)
            vals, vecs = sla.eigh(A, M.toarray(), subset_by_index=[0, 0])
            return 1.0 / vals[0], vecs[:, 0]
        sigma = -1e-3 * scale
        lu = spla.splu((K - sigma * M).tocsc())
        b = sp_.b
        zb = lu.solve(b)
        denom = 1.0 + b @ zb

        def op(x):
            z = lu.solve(x)
            return z - zb * (b @ z) / denom

        OPinv = spla.LinearOperator((n, n), matvec=op, dtype=float)
        A = spla.LinearOperator((n, n), matvec=lambda x: K @ x + b * (b @ x), dtype=float)
        vals, vecs = spla.eigsh(A, k=1, M=M, sigma=sigma, OPinv=OPinv, which="LM")
        return 1.0 / vals[0], vecs[:, 0]
    # mean form: smallest eigenvalue past the constant mode
    if n <= DENSE_LIMIT:
        vals, vecs = sla.eigh(K.toarray(), M.toarray(), subset_by_index=[0, min(2, n - 1)])
    else:
        vals, vecs = spla.eigsh(K.tocsc(), k=3, M=M.tocsc(), sigma=-1e-3 * scale, which="LM")
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
    zero = 1e-9 * scale
    if vals[1] <= zero:
        return math.inf, vecs[:, 1]
    return 1.0 / vals[1], vecs[:, 1]


def poincare_constant(mesh: MeshManifold, p: float, G: Region | None = None,
                      omega: Region | None = None, form: str | None = None,
                      epsilon: float = 1e-10, max_iter: int = 500) -> PoincareEstimate:
    """Estimate the Poincare constant of ``G`` (the whole mesh by default).

    ``form`` defaults to "mean" when ``omega`` is None and "integral"
    otherwise. Raises ``ValueError`` when ``omega`` has zero measure or is not
    contained in ``G``.
    """
    p = check_exponent(p)
    G = G if G is not None else mesh.full_region("G")
    form = form or ("mean" if omega is None else "integral")
    if form not in ("mean", "integral"):
        raise ValueError("form must be 'mean' or 'integral'")
    if form == "integral":
        if omega is None:
            raise ValueError("integral form needs a subset omega")
        if not np.all(np.isin(omega.element_set, G.element_set)):
            raise ValueError("omega must be contained in G")
        if omega.element_set.size == 0 or volume(mesh, omega) <= 0:
            raise ValueError("omega has zero measure")
    omega_name = omega.name if omega is not None else G.name
    prob = _SubProblem(mesh, G, omega, p, form, epsilon)
    C2, vec = _eig_p2(prob)
    if p == 2.0:
        ext = vec
        return PoincareEstimate(C=float(C2), p=p, G=G.name, omega=omega_name, form=form,
                                method="eigensolve", alpha=prob.alpha(ext) if form == "mean" else 0.0,
                                epsilon=0.0, extremal=_lift(mesh, prob, ext), _sub=prob)

    def objective(u):
        N, gN = _numerator_grad(prob, u)
        D, gD = _denominator_grad(prob, u)
        return math.log(D) - math.log(N), gD / D - gN / N

    x0 = vec / np.max(np.abs(vec))
    out = minimize(objective, x0, jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "gtol": 1e-10, "ftol": 1e-14})
    u = out.x
    C = prob.numerator(u) / prob.denominator(u)
    return PoincareEstimate(C=float(C), p=p, G=G.name, omega=omega_name, form=form,
                            method="quotient ascent (lower bound)",
                            alpha=prob.alpha(u) if form == "mean" else 0.0, epsilon=epsilon,
                            tolerance=float(np.max(np.abs(out.jac))) if out.jac is not None else None,
                            extremal=_lift(mesh, prob, u), _sub=prob)


def _lift(mesh, prob, u):
    full = np.zeros(mesh.n_vertices)
    full[prob.nodes] = u
    return full


def _numerator_grad(prob: _SubProblem, u):
    p = prob.p
    alpha = prob.alpha(u) if prob.form == "mean" else 0.0
    r = prob.P @ u - alpha
    a = np.abs(r)
    N = float(prob.qw @ a ** p)
    t = prob.qw * p * a ** (p - 1) * np.sign(r)
    g = prob.P.T @ t
    if prob.form == "mean":
        g = g - t.sum() * prob.mean_weights / prob.vol_G
    return N, g


def _denominator_grad(prob: _SubProblem, u):
    A = assembler(prob.sub)
    D = A.energy(u, prob.p, prob.eps)
    g = A.gradient(u, prob.p, prob.eps)
    if prob.b is not None:
        s = float(prob.b @ u)
        D += abs(s) ** prob.p
        g = g + prob.p * abs(s) ** (prob.p - 1) * np.sign(s) * prob.b
    return D, g
