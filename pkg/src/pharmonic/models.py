"""Model manifolds: annuli, surfaces of revolution, half-plane strips.

Each generator returns a validated :class:`~pharmonic.mesh.MeshManifold` with
the manifold boundary and the outer truncation labeled. :func:`exterior_disk`
and :func:`half_plane` bundle a mesh with its exhaustion and boundary data.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .mesh import GrowthRule, MeshManifold, build_mesh, exhaustion, ExhaustionSequence, refine
from .oracle import RadialProfile, radial_oracle  # noqa: F401  (re-exported)


def _polar_rings(radii: np.ndarray, n_theta: int):
    theta = 2 * np.pi * np.arange(n_theta) / n_theta
    nr = radii.size
    V = np.column_stack([
        np.outer(radii, np.cos(theta)).ravel(),
        np.outer(radii, np.sin(theta)).ravel(),
    ])
    idx = np.arange(nr * n_theta).reshape(nr, n_theta)
    tris = []
    for k in range(nr - 1):
        for j in range(n_theta):
            a, b = idx[k, j], idx[k, (j + 1) % n_theta]
            c, d = idx[k + 1, j], idx[k + 1, (j + 1) % n_theta]
            if (j + k) % 2 == 0:
                tris += [(a, b, d), (a, d, c)]
            else:
                tris += [(a, b, c), (b, d, c)]
    return V, np.array(tris, dtype=np.int64), idx


def annulus_mesh(r: float, R: float, refinement: int = 0, *, n_theta: int | None = None,
                 radii=None, outer: str = "truncation") -> MeshManifold:
    """Flat annulus ``r <= |x| <= R`` on a polar grid with geometric ring spacing.

    The inner circle is the manifold boundary. ``outer`` selects the label of
    the outer circle: "truncation" or "boundary" (second boundary component).
    Refinement level ``k`` uses ``16 * 2**k`` sectors.
    """
    if not 0 < r < R:
        raise ValueError(f"annulus needs 0 < r < R, got r={r}, R={R}")
    if refinement < 0:
        raise ValueError("refinement must be >= 0")
    if n_theta is None:
        n_theta = 16 * 2 ** refinement
    if radii is None:
        n_r = max(1, math.ceil(n_theta * math.log(R / r) / (2 * math.pi)))
        radii = r * (R / r) ** (np.arange(n_r + 1) / n_r)
    radii = np.asarray(radii, dtype=float)
    if radii[0] != r or abs(radii[-1] - R) > 1e-12 * R or np.any(np.diff(radii) <= 0):
        raise ValueError("radii must increase from r to R")
    V, T, idx = _polar_rings(radii, n_theta)
    inner, outer_nodes = idx[0], idx[-1]
    if outer == "truncation":
        return build_mesh(V, T, boundary_nodes=inner, truncation_nodes=outer_nodes,
                          node_labels={"inner": inner, "outer": outer_nodes})
    if outer == "boundary":
        return build_mesh(V, T, boundary_nodes=np.concatenate([inner, outer_nodes]),
                          node_labels={"inner": inner, "outer": outer_nodes})
    raise ValueError(f"outer must be 'truncation' or 'boundary', got {outer!r}")


def disk_mesh(radius: float = 1.0, refinement: int = 0) -> MeshManifold:
    """Disk with concentric rings of ``6k`` vertices; boundary circle labeled."""
    N = 2 ** refinement
    pts = [np.zeros((1, 2))]
    rings = [np.array([0])]
    start = 1
    for k in range(1, N + 1):
        m = 6 * k
        th = 2 * np.pi * np.arange(m) / m
        pts.append(radius * k / N * np.column_stack([np.cos(th), np.sin(th)]))
        rings.append(np.arange(start, start + m))
        start += m
    V = np.vstack(pts)
    tris = []
    for k in range(1, N + 1):
        inner, outer = rings[k - 1], rings[k]
        if inner.size == 1:
            for j in range(outer.size):
                tris.append((inner[0], outer[j], outer[(j + 1) % outer.size]))
            continue
        ni, no = inner.size, outer.size
        i = j = 0
        while i < ni or j < no:
            # advance along whichever ring has the smaller next angle
            ai = (i + 1) / ni
            ao = (j + 1) / no
            if j < no and (i >= ni or ao <= ai):
                tris.append((inner[i % ni], outer[j % no], outer[(j + 1) % no]))
                j += 1
            else:
                tris.append((inner[i % ni], outer[j % no], inner[(i + 1) % ni]))
                i += 1
    return build_mesh(V, np.array(tris), boundary_nodes=rings[-1])


def unit_square(refinement: int = 0) -> MeshManifold:
    """Unit square, two right triangles refined uniformly; all sides are boundary."""
    m = build_mesh([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2], [0, 2, 3]],
                   boundary_nodes=[0, 1, 2, 3])
    for _ in range(refinement):
        m = refine(m)
    return m


def rectangle_mesh(x0: float, x1: float, y0: float, y1: float, nx: int, ny: int):
    """Structured right-triangle mesh; returns (vertices, triangles, index grid)."""
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    V = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    T = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return V, T, idx


def half_plane_mesh(W: float, H: float, refinement: int = 0,
                    spacing: float | None = None) -> MeshManifold:
    """Flat rectangle ``[-W/2, W/2] x [0, H]`` with spacing ``2**-refinement``.

    ``spacing`` overrides the base cell size (it is still halved per
    refinement level). The bottom edge (corners included) is the manifold
    boundary; the other three edges are the truncation.
    """
    if not (W > 0 and H > 0):
        raise ValueError("W and H must be positive")
    h = (1.0 if spacing is None else float(spacing)) * 2.0 ** -refinement
    nx = max(1, round(W / h))
    ny = max(1, round(H / h))
    V, T, idx = rectangle_mesh(-W / 2, W / 2, 0.0, H, nx, ny)
    bottom = idx[0]
    rest = np.unique(np.concatenate([idx[1:, 0], idx[1:, -1], idx[-1]]))
    return build_mesh(V, T, boundary_nodes=bottom, truncation_nodes=rest)


@dataclass(frozen=True)
class RevolutionSpec:
    """Warped product ``dt^2 + f(t)^2 dtheta^2`` on ``[t0, t1] x S^1``.

    ``t`` is the (strictly increasing) sample grid, used as the mesh grid in
    ``t``; ``f`` holds the profile samples, or is a callable of ``t``.
    ``truncation`` optionally cuts the grid at a smaller ``t``.
    """

    t: tuple
    f: tuple | Callable
    n_theta: int = 32
    truncation: float | None = None
    outer: str = "truncation"

    def profile(self, t):
        if callable(self.f):
            return np.asarray(self.f(np.asarray(t, dtype=float)), dtype=float)
        return np.interp(t, np.asarray(self.t, dtype=float), np.asarray(self.f, dtype=float))


def revolution_manifold(spec: RevolutionSpec) -> MeshManifold:
    """Mesh of the ``(t, theta)`` cylinder with periodic ``theta``."""
    t = np.asarray(spec.t, dtype=float)
    if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0):
        raise ValueError("t grid must be strictly increasing with >= 2 points")
    if spec.truncation is not None:
        t = t[t <= spec.truncation * (1 + 1e-12)]
        if t.size < 2:
            raise ValueError("truncation leaves fewer than 2 grid points")
    samples = spec.profile(t)
    if np.any(samples <= 0) or not np.all(np.isfinite(samples)):
        raise ValueError("profile f must be strictly positive")
    if spec.n_theta < 3:
        raise ValueError("need at least 3 angular cells")
    n = spec.n_theta
    theta = 2 * np.pi * np.arange(n) / n
    T, Th = np.meshgrid(t, theta, indexing="ij")
    V = np.column_stack([T.ravel(), Th.ravel()])
    idx = np.arange(t.size * n).reshape(t.size, n)
    tris = []
    for k in range(t.size - 1):
        for j in range(n):
            a, b = idx[k, j], idx[k, (j + 1) % n]
            c, d = idx[k + 1, j], idx[k + 1, (j + 1) % n]
            tris += [(a, b, d), (a, d, c)]

    def metric_fn(bary: np.ndarray) -> np.ndarray:
        f = spec.profile(bary[:, 0])
        if np.any(f <= 0):
            raise ValueError("profile f must be strictly positive")
        G = np.zeros((bary.shape[0], 2, 2))
        G[:, 0, 0] = 1.0
        G[:, 1, 1] = f * f
        return G

    inner, outer = idx[0], idx[-1]
    kw = dict(boundary_nodes=inner, truncation_nodes=outer)
    if spec.outer == "boundary":
        kw = dict(boundary_nodes=np.concatenate([inner, outer]))
    return build_mesh(V, np.array(tris), periods=(None, 2 * np.pi), metric_fn=metric_fn,
                      node_labels={"inner": inner, "outer": outer}, **kw)


@dataclass(eq=False)
class Model:
    """A truncated non-compact manifold with its exhaustion and boundary data."""

    name: str
    mesh: MeshManifold
    exhaustion: ExhaustionSequence
    h: Callable[[np.ndarray], np.ndarray] | None = None
    params: dict = field(default_factory=dict)


def exterior_disk(r: float = 1.0, levels=(4.0, 8.0, 16.0, 32.0), n_theta: int = 64,
                  rings_per_doubling: int = 8) -> Model:
    """Exterior of a disk, truncated at the last level; rings hit every level radius.

    Levels must be ``r`` times powers of two.
    """
    levels = tuple(float(x) for x in levels)
    R = levels[-1]
    doublings = math.log2(R / r)
    if abs(doublings - round(doublings)) > 1e-9:
        raise ValueError("exterior_disk levels must be r times powers of two")
    n_r = int(round(doublings)) * rings_per_doubling
    radii = r * (R / r) ** (np.arange(n_r + 1) / n_r)
    mesh = annulus_mesh(r, R, n_theta=n_theta, radii=radii)
    ex = exhaustion(mesh, GrowthRule(marker="radius", thresholds=levels))
    return Model("exterior_disk", mesh, ex, h=lambda x: np.ones(x.shape[0]),
                 params={"r": r, "levels": list(levels), "n_theta": n_theta,
                         "rings_per_doubling": rings_per_doubling})


def half_plane(half_periods: int = 16, height: float = 8.0, refinement: int = 3) -> Model:
    """Upper half-plane strip with ``h = sin x`` on the bottom edge, exhausted by ``|x|``.

    The strip is ``|x| <= half_periods * pi`` with cell size ``pi / 2**refinement``,
    and the levels are ``|x| <= pi * 2**k``: every level ends at a zero of ``h``.
    """
    width = 2 * math.pi * half_periods
    start = math.pi
    mesh = half_plane_mesh(width, height, refinement, spacing=math.pi)
    ex = exhaustion(mesh, GrowthRule(marker="abs_x", start=start, factor=2.0))
    return Model("half_plane", mesh, ex, h=lambda x: np.sin(x[:, 0]),
                 params={"half_periods": half_periods, "height": height,
                         "refinement": refinement})
