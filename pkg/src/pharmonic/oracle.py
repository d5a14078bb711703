"""Independent 1-D radial oracle.

Minimizes the reduced energy ``|S^(n-1)| * int_r^R |u'|^p rho^(n-1) drho`` on a
uniform grid with midpoint gradients. Shares no code with the mesh solver:
the 1-D problem is convex and solved by damped Newton steps on its
tridiagonal Hessian.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded


@dataclass(frozen=True, eq=False)
class RadialProfile:
    n: int
    p: float
    r: float
    R: float
    a: float
    b: float
    radii: np.ndarray
    values: np.ndarray
    capacity: float
    iterations: int = 0

    def __call__(self, rho):
        return np.interp(np.asarray(rho, dtype=float), self.radii, self.values)


def sphere_measure(n: int) -> float:
    """Surface measure of the unit sphere in R^n."""
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


def _energy(u, h, w, p, S):
    delta = np.diff(u) / h
    return S * float(np.sum(np.abs(delta) ** p * w)) * h


def radial_oracle(n: int, p: float, r: float, R: float, a: float = 1.0, b: float = 0.0,
                  points: int = 10_000, tol: float = 1e-12, max_iter: int = 200) -> RadialProfile:
    """Radial p-harmonic profile on ``r <= rho <= R`` with ``u(r)=a, u(R)=b``.

    The returned ``capacity`` is the minimal reduced energy; for ``a=1, b=0``
    it is the p-capacity of the condenser between the two spheres.
    """
    if int(n) != n or n < 2:
        raise ValueError("dimension n must be an integer >= 2")
    if not p > 1:
        raise ValueError("exponent p must exceed 1")
    if not 0 < r < R:
        raise ValueError("need 0 < r < R")
    if points < 2:
        raise ValueError("need at least 2 grid points")
    n = int(n)
    rho = np.linspace(r, R, points)
    if a == b:
        return RadialProfile(n, p, r, R, a, b, rho, np.full(points, float(a)), 0.0)
    h = (R - r) / (points - 1)
    w = (0.5 * (rho[1:] + rho[:-1])) ** (n - 1)
    S = sphere_measure(n)
    u = a + (b - a) * (rho - r) / (R - r)
    E = _energy(u, h, w, p, S)
    scale = abs(b - a)
    it = 0
    for it in range(1, max_iter + 1):
        delta = np.diff(u) / h
        flux = w * np.abs(delta) ** (p - 2) * delta  # per cell
        grad = S * p * (flux[:-1] - flux[1:])  # interior nodes
        curv = S * p * (p - 1) * w * np.abs(delta) ** (p - 2) / h
        ab = np.zeros((3, points - 2))
        ab[1] = curv[:-1] + curv[1:]
        ab[0, 1:] = -curv[1:-1]
        ab[2, :-1] = -curv[1:-1]
        step = solve_banded((1, 1), ab, -grad)
        t = 1.0
        while True:
            trial = u.copy()
            trial[1:-1] += t * step
            E_new = _energy(trial, h, w, p, S)
            if E_new <= E or t < 1e-12:
                break
            t *= 0.5
        u, E = trial, E_new
        if np.max(np.abs(t * step)) <= tol * scale:
            break
    return RadialProfile(n, p, r, R, float(a), float(b), rho, u, E, iterations=it)


def annulus_capacity_closed_form(n: int, p: float, r: float, R: float) -> float:
    """Continuum p-capacity of the spherical condenser (used only in tests/reports)."""
    S = sphere_measure(n)
    if p == n:
        return S * math.log(R / r) ** (1 - p)
    q = (p - n) / (p - 1)
    return S * abs((R ** q - r ** q) / q) ** (1 - p)
