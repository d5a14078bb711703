"""Simplicial meshes carrying a piecewise-constant Riemannian metric.

A :class:`MeshManifold` is a triangulated chart of a manifold with boundary.
Each element stores a constant symmetric positive-definite metric ``g_ij``;
the metric volume of an element is its chart volume times ``sqrt(det g)``.
Boundary nodes (the manifold boundary) and outer truncation nodes (the
artificial cut of a non-compact manifold) are kept as separate node sets.

Lipschitz regularity of regions is assumed, never checked.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

BOUNDARY = "boundary"
TRUNCATION = "truncation"

MetricFn = Callable[[np.ndarray], np.ndarray]


class MeshError(ValueError):
    """Raised for invalid mesh descriptions."""


@dataclass(frozen=True, eq=False)
class Region:
    """A named union of elements; ``node_set`` is the set of their vertices."""

    name: str
    element_set: np.ndarray
    node_set: np.ndarray
    is_precompact: bool = True

    @property
    def n_elements(self) -> int:
        return int(self.element_set.size)

    def contains(self, other: "Region") -> bool:
        return bool(np.all(np.isin(other.element_set, self.element_set)))


@dataclass(frozen=True, eq=False)
class ExhaustionSequence:
    """Strictly nested regions; the last one is the whole (truncated) mesh."""

    regions: tuple[Region, ...]
    thresholds: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.regions)

    def __getitem__(self, i: int) -> Region:
        return self.regions[i]

    def __iter__(self):
        return iter(self.regions)


@dataclass(frozen=True, eq=False)
class GradientField:
    """Per-element chart gradient and its metric norm."""

    chart: np.ndarray  # (ne, d)
    norm: np.ndarray  # (ne,)


@dataclass(frozen=True, eq=False)
class MeshManifold:
    """Discrete manifold ``(M, g, dM)``. Immutable after construction.

    Use :func:`build_mesh` rather than the constructor: it validates the
    input and precomputes the element geometry.
    """

    vertices: np.ndarray  # (nv, d)
    simplices: np.ndarray  # (ne, d+1)
    element_metric: np.ndarray  # (ne, d, d)
    boundary_nodes: np.ndarray
    outer_truncation_nodes: np.ndarray
    node_labels: Mapping[str, np.ndarray] = field(default_factory=dict)
    element_labels: Mapping[str, np.ndarray] = field(default_factory=dict)
    periods: tuple = ()
    metric_fn: MetricFn | None = None
    # derived geometry, filled by build_mesh
    chart_coords: np.ndarray = field(default=None, repr=False)  # (ne, d+1, d)
    chart_volume: np.ndarray = field(default=None, repr=False)  # (ne,)
    volume_factor: np.ndarray = field(default=None, repr=False)  # (ne,)
    hat_gradients: np.ndarray = field(default=None, repr=False)  # (ne, d+1, d)
    inverse_metric: np.ndarray = field(default=None, repr=False)  # (ne, d, d)

    @property
    def dim(self) -> int:
        return int(self.vertices.shape[1])

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_elements(self) -> int:
        return int(self.simplices.shape[0])

    @property
    def element_volume(self) -> np.ndarray:
        """Metric volume of each element."""
        return self.chart_volume * self.volume_factor

    @property
    def diameter(self) -> float:
        """Chart diameter (bounding-box diagonal)."""
        span = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(span))

    def mask(self, nodes: Iterable[int]) -> np.ndarray:
        m = np.zeros(self.n_vertices, dtype=bool)
        m[np.asarray(list(nodes) if not isinstance(nodes, np.ndarray) else nodes, dtype=int)] = True
        return m

    @property
    def boundary_mask(self) -> np.ndarray:
        return self.mask(self.boundary_nodes)

    @property
    def truncation_mask(self) -> np.ndarray:
        return self.mask(self.outer_truncation_nodes)

    def full_region(self, name: str = "M") -> Region:
        return region_from_elements(self, np.arange(self.n_elements), name=name)

    def with_labels(self, **node_labels: np.ndarray) -> "MeshManifold":
        labels = dict(self.node_labels)
        labels.update({k: np.unique(np.asarray(v, dtype=int)) for k, v in node_labels.items()})
        return build_mesh(
            self.vertices, self.simplices, metric=self.element_metric,
            boundary_nodes=self.boundary_nodes,
            truncation_nodes=self.outer_truncation_nodes,
            node_labels=labels, element_labels=self.element_labels,
            periods=self.periods, metric_fn=self.metric_fn,
        )


def _unwrap(coords: np.ndarray, periods: Sequence) -> np.ndarray:
    """Shift periodic chart coordinates so each element is contiguous."""
    out = coords.copy()
    for axis, period in enumerate(periods):
        if not period:
            continue
        ref = out[:, :1, axis]
        out[:, :, axis] -= period * np.round((out[:, :, axis] - ref) / period)
    return out


def _barycenters(mesh_like_coords: np.ndarray) -> np.ndarray:
    return mesh_like_coords.mean(axis=1)


def build_mesh(
    vertices,
    simplices,
    metric=None,
    *,
    boundary_nodes=(),
    truncation_nodes=(),
    node_labels: Mapping | None = None,
    element_labels: Mapping | None = None,
    periods: Sequence = (),
    metric_fn: MetricFn | None = None,
) -> MeshManifold:
    """Validate a mesh description and precompute element geometry.

    Parameters
    ----------
    vertices : (nv, d) array
        Chart coordinates.
    simplices : (ne, d+1) int array
        Vertex indices per element, 0-based.
    metric : None, (d, d) array, (ne, d, d) array or "flat"
        Element metric. ``None``/"flat" gives the identity. If ``metric_fn``
        is given and ``metric`` is None, the metric is sampled at element
        barycenters.
    boundary_nodes, truncation_nodes : index sequences
        The manifold boundary and the artificial outer boundary; disjoint.
    periods : sequence of float or None
        Per-axis period of the chart (for identified coordinates).
    """
    V = np.array(vertices, dtype=float)
    if V.ndim != 2 or V.shape[1] not in (1, 2, 3):
        raise MeshError(f"vertices must be (nv, d) with d in 1..3, got shape {V.shape}")
    nv, d = V.shape
    S = np.array(simplices, dtype=np.int64)
    if S.ndim != 2 or S.shape[1] != d + 1:
        raise MeshError(f"simplices must be (ne, {d + 1}), got shape {S.shape}")
    if S.size and (S.min() < 0 or S.max() >= nv):
        bad = int(S.max()) if S.max() >= nv else int(S.min())
        raise MeshError(f"simplex references vertex {bad}, mesh has {nv} vertices")
    for row in S:
        if len(set(row.tolist())) != d + 1:
            raise MeshError(f"simplex {row.tolist()} repeats a vertex")
    periods = tuple(periods) + (None,) * (d - len(periods))

    coords = _unwrap(V[S], periods)
    ne = S.shape[0]
    if metric is None and metric_fn is not None:
        G = np.asarray(metric_fn(_barycenters(coords)), dtype=float)
    elif metric is None or (isinstance(metric, str) and metric == "flat"):
        G = np.broadcast_to(np.eye(d), (ne, d, d))
    else:
        G = np.asarray(metric, dtype=float)
        if G.shape == (d, d):
            G = np.broadcast_to(G, (ne, d, d))
    if G.shape != (ne, d, d):
        raise MeshError(f"metric must be ({ne}, {d}, {d}), got {G.shape}")
    G = np.array(G)
    if not np.allclose(G, np.swapaxes(G, 1, 2), rtol=1e-12, atol=1e-14):
        raise MeshError("element metric is not symmetric")
    eig = np.linalg.eigvalsh(G) if ne else np.ones((0, d))
    if ne and eig.min() <= 0:
        e = int(np.argmin(eig.min(axis=1)))
        raise MeshError(f"metric of element {e} is not positive definite")

    jac = np.swapaxes(coords[:, 1:, :] - coords[:, :1, :], 1, 2)  # (ne, d, d) columns = edges
    det = np.linalg.det(jac) if ne else np.zeros(0)
    chart_vol = np.abs(det) / math.factorial(d)
    scale = np.max(np.abs(V)) if V.size else 1.0
    tiny = 1e-14 * max(scale, 1.0) ** d
    if ne and chart_vol.min() <= tiny:
        e = int(np.argmin(chart_vol))
        raise MeshError(f"simplex {e} is degenerate (chart volume {chart_vol[e]:.3e})")
    jinv = np.linalg.inv(jac)  # rows: gradients of barycentric coords 1..d
    grads = np.empty((ne, d + 1, d))
    grads[:, 1:, :] = jinv
    grads[:, 0, :] = -jinv.sum(axis=1)

    bnd = np.unique(np.asarray(boundary_nodes, dtype=np.int64))
    trn = np.unique(np.asarray(truncation_nodes, dtype=np.int64))
    for name, nodes in ((BOUNDARY, bnd), (TRUNCATION, trn)):
        if nodes.size and (nodes.min() < 0 or nodes.max() >= nv):
            raise MeshError(f"{name} node index out of range")
    if np.intersect1d(bnd, trn).size:
        raise MeshError("boundary and truncation node sets overlap")
    nl = {}
    for k, v in (node_labels or {}).items():
        arr = np.unique(np.asarray(v, dtype=np.int64))
        if arr.size and (arr.min() < 0 or arr.max() >= nv):
            raise MeshError(f"node label {k!r} index out of range")
        nl[k] = arr
    el = {}
    for k, v in (element_labels or {}).items():
        arr = np.unique(np.asarray(v, dtype=np.int64))
        if arr.size and (arr.min() < 0 or arr.max() >= ne):
            raise MeshError(f"element label {k!r} index out of range")
        el[k] = arr

    for arr in (V, S, G, bnd, trn, coords, chart_vol, grads, *nl.values(), *el.values()):
        arr.setflags(write=False)
    vf = np.sqrt(np.linalg.det(G)) if ne else np.zeros(0)
    ginv = np.linalg.inv(G) if ne else np.zeros((0, d, d))
    vf.setflags(write=False)
    ginv.setflags(write=False)
    return MeshManifold(
        vertices=V, simplices=S, element_metric=G,
        boundary_nodes=bnd, outer_truncation_nodes=trn,
        node_labels=nl, element_labels=el, periods=periods, metric_fn=metric_fn,
        chart_coords=coords, chart_volume=chart_vol, volume_factor=vf,
        hat_gradients=grads, inverse_metric=ginv,
    )


def region_from_elements(mesh: MeshManifold, elements, name: str = "region",
                         is_precompact: bool = True) -> Region:
    els = np.unique(np.asarray(elements, dtype=np.int64))
    nodes = np.unique(mesh.simplices[els]) if els.size else np.zeros(0, dtype=np.int64)
    return Region(name=name, element_set=els, node_set=nodes, is_precompact=is_precompact)


def region_from_label(mesh: MeshManifold, label: str) -> Region:
    return region_from_elements(mesh, mesh.element_labels[label], name=label)


def interface_nodes(mesh: MeshManifold, region: Region) -> np.ndarray:
    """Nodes of ``region`` that also belong to an element outside it."""
    outside = np.ones(mesh.n_elements, dtype=bool)
    outside[region.element_set] = False
    touched = np.unique(mesh.simplices[outside])
    return np.intersect1d(region.node_set, touched)


def volume(mesh: MeshManifold, region: Region | None = None) -> float:
    """Metric volume ``sum(chart_vol * sqrt(det g))`` of a region.

    An empty region gives 0 and a :class:`RuntimeWarning`.
    """
    vols = mesh.element_volume
    if region is None:
        return float(np.sum(vols))
    if region.element_set.size == 0:
        warnings.warn(f"region {region.name!r} is empty; volume 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return float(np.sum(vols[region.element_set]))


def element_gradient(mesh: MeshManifold, values) -> GradientField:
    """Exact gradient of the piecewise-linear interpolant of nodal ``values``."""
    u = np.asarray(getattr(values, "values", values), dtype=float)
    if u.shape != (mesh.n_vertices,):
        raise ValueError(f"field has {u.shape} values, mesh has {mesh.n_vertices} vertices")
    U = u[mesh.simplices]
    gu = np.einsum("ea,ead->ed", U[:, 1:] - U[:, :1], mesh.hat_gradients[:, 1:])
    s = np.einsum("ed,edk,ek->e", gu, mesh.inverse_metric, gu)
    return GradientField(chart=gu, norm=np.sqrt(np.maximum(s, 0.0)))


def boundary_facets(mesh: MeshManifold) -> np.ndarray:
    """Facets (sorted vertex tuples) that belong to exactly one element."""
    d = mesh.dim
    faces = []
    for drop in range(d + 1):
        faces.append(np.delete(mesh.simplices, drop, axis=1))
    faces = np.sort(np.concatenate(faces), axis=1)
    uniq, counts = np.unique(faces, axis=0, return_counts=True)
    return uniq[counts == 1]


def boundary_measure(mesh: MeshManifold, nodes) -> float:
    """Metric (d-1)-measure of the boundary facets spanned by ``nodes``.

    Each facet is measured with the metric of its element.
    """
    d = mesh.dim
    mask = mesh.mask(nodes)
    total = 0.0
    if d == 1:
        return float(np.count_nonzero(mask[np.unique(boundary_facets(mesh))]))
    simplices = mesh.simplices
    for e in range(mesh.n_elements):
        local = mask[simplices[e]]
        if local.sum() < d:
            continue
        for drop in range(d + 1):
            keep = [a for a in range(d + 1) if a != drop]
            if not local[keep].all():
                continue
            total += _facet_measure(mesh, e, keep) * _facet_is_boundary(mesh, simplices[e][keep])
    return float(total)


def _facet_measure(mesh: MeshManifold, e: int, keep) -> float:
    pts = mesh.chart_coords[e][keep]
    edges = (pts[1:] - pts[:1]).T  # (d, d-1)
    gram = edges.T @ mesh.element_metric[e] @ edges
    return math.sqrt(max(np.linalg.det(gram), 0.0)) / math.factorial(edges.shape[1])


def _facet_is_boundary(mesh: MeshManifold, facet) -> bool:
    cache = getattr(mesh, "_bfacets", None)
    if cache is None:
        cache = {tuple(f) for f in boundary_facets(mesh).tolist()}
        object.__setattr__(mesh, "_bfacets", cache)
    return tuple(sorted(int(i) for i in facet)) in cache


# -- refinement ---------------------------------------------------------------

# Bey's subdivision: corner tets plus the octahedron split along edge (m02, m13).
_TET_CHILDREN = [
    (0, 4, 5, 6), (4, 1, 7, 8), (5, 7, 2, 9), (6, 8, 9, 3),
    (4, 5, 6, 8), (4, 5, 7, 8), (5, 6, 8, 9), (5, 7, 8, 9),
]
# local midpoint numbering: 4=(0,1) 5=(0,2) 6=(0,3) 7=(1,2) 8=(1,3) 9=(2,3)
_TET_EDGES = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
_TRI_EDGES = [(0, 1), (1, 2), (0, 2)]
_TRI_CHILDREN = [(0, 3, 5), (3, 1, 4), (5, 4, 2), (3, 4, 5)]
_SEG_EDGES = [(0, 1)]
_SEG_CHILDREN = [(0, 2), (2, 1)]


def refine(mesh: MeshManifold) -> MeshManifold:
    """Uniform subdivision: segments into 2, triangles into 4, tetrahedra into 8.

    New vertices are edge midpoints (in the unwrapped chart for periodic
    axes). A midpoint joins a node label when both edge ends carry it and,
    for labels living on the mesh boundary, the edge lies on a boundary facet.
    The metric is re-sampled from ``metric_fn`` when the mesh has one and
    inherited from the parent element otherwise.
    """
    d = mesh.dim
    local_edges, children = {1: (_SEG_EDGES, _SEG_CHILDREN),
                              2: (_TRI_EDGES, _TRI_CHILDREN),
                              3: (_TET_EDGES, _TET_CHILDREN)}[d]
    S = mesh.simplices
    nv = mesh.n_vertices
    all_edges = np.sort(np.concatenate([S[:, list(e)] for e in local_edges]), axis=1)
    uniq, inverse = np.unique(all_edges, axis=0, return_inverse=True)
    inverse = inverse.reshape(len(local_edges), -1).T  # (ne, n_local_edges)
    mid_index = nv + inverse

    # midpoint coordinates from the unwrapped element charts
    mids = np.zeros((uniq.shape[0], d))
    for k, (a, b) in enumerate(local_edges):
        mids[inverse[:, k]] = 0.5 * (mesh.chart_coords[:, a] + mesh.chart_coords[:, b])
    for axis, period in enumerate(mesh.periods):
        if period:
            mids[:, axis] = np.mod(mids[:, axis], period)
    V = np.vstack([mesh.vertices, mids])

    local = np.hstack([S, mid_index])
    new_S = np.concatenate([local[:, list(c)] for c in children])
    n_children = len(children)
    parent = np.tile(np.arange(mesh.n_elements), n_children)
    order = np.argsort(parent, kind="stable")
    new_S, parent = new_S[order], parent[order]

    bfacets = boundary_facets(mesh)
    on_boundary_edge = np.zeros(uniq.shape[0], dtype=bool)
    if d == 1:
        on_boundary_edge[:] = False
    else:
        bedges = set()
        for f in bfacets.tolist():
            for i in range(len(f)):
                for j in range(i + 1, len(f)):
                    bedges.add((f[i], f[j]))
        on_boundary_edge = np.array([tuple(e) in bedges for e in uniq.tolist()], dtype=bool)
    boundary_vertices = np.zeros(nv, dtype=bool)
    boundary_vertices[np.unique(bfacets)] = True

    def grow(nodes: np.ndarray) -> np.ndarray:
        m = np.zeros(nv, dtype=bool)
        m[nodes] = True
        both = m[uniq[:, 0]] & m[uniq[:, 1]]
        if nodes.size and boundary_vertices[nodes].all():
            both &= on_boundary_edge
        return np.concatenate([nodes, nv + np.flatnonzero(both)])

    G = None if mesh.metric_fn is not None else mesh.element_metric[parent]
    el = {}
    for k, v in mesh.element_labels.items():
        pm = np.zeros(mesh.n_elements, dtype=bool)
        pm[v] = True
        el[k] = np.flatnonzero(pm[parent])
    return build_mesh(
        V, new_S, G,
        boundary_nodes=grow(mesh.boundary_nodes),
        truncation_nodes=grow(mesh.outer_truncation_nodes),
        node_labels={k: grow(v) for k, v in mesh.node_labels.items()},
        element_labels=el, periods=mesh.periods, metric_fn=mesh.metric_fn,
    )


# -- exhaustion ---------------------------------------------------------------

@dataclass(frozen=True)
class GrowthRule:
    """Thresholds on a per-vertex marker; an element's marker is its vertex max.

    ``marker`` is "radius" (chart norm), "abs_x", or a callable mapping the
    vertex array to one value per vertex. Thresholds are either explicit or
    ``start * factor**k`` up to the largest marker.
    """

    marker: str | Callable[[np.ndarray], np.ndarray] = "radius"
    start: float | None = None
    factor: float = 2.0
    thresholds: tuple[float, ...] | None = None
    rtol: float = 1e-9

    def vertex_marker(self, mesh: MeshManifold) -> np.ndarray:
        if callable(self.marker):
            return np.asarray(self.marker(mesh.vertices), dtype=float)
        if self.marker == "radius":
            return np.linalg.norm(mesh.vertices, axis=1)
        if self.marker == "abs_x":
            return np.abs(mesh.vertices[:, 0])
        raise ValueError(f"unknown marker {self.marker!r}")


def exhaustion(mesh: MeshManifold, rule: GrowthRule) -> ExhaustionSequence:
    """Nested regions ``{elements with marker <= t_i}`` ending at the full mesh."""
    vm = rule.vertex_marker(mesh)
    em = vm[mesh.simplices].max(axis=1)
    top = float(em.max())
    if rule.thresholds is not None:
        ts = [float(t) for t in rule.thresholds]
    else:
        if rule.start is None or rule.start <= 0 or rule.factor <= 1:
            raise ValueError("growth rule needs start > 0 and factor > 1")
        ts, t = [], float(rule.start)
        while t < top * (1 - rule.rtol):
            ts.append(t)
            t *= rule.factor
        ts.append(t)
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValueError("thresholds must be strictly increasing")
    regions, used = [], []
    prev = -1
    for t in ts:
        els = np.flatnonzero(em <= t * (1 + rule.rtol) + rule.rtol)
        if els.size == 0 or els.size == prev:
            continue
        prev = els.size
        regions.append(region_from_elements(mesh, els, name=f"Omega_{len(regions) + 1}"))
        used.append(t)
        if els.size == mesh.n_elements:
            break
    if regions and regions[-1].n_elements != mesh.n_elements:
        regions.append(mesh.full_region(name=f"Omega_{len(regions) + 1}"))
        used.append(top)
    if len(regions) < 2:
        raise ValueError(f"growth rule produced {len(regions)} level(s); need at least 2")
    return ExhaustionSequence(regions=tuple(regions), thresholds=tuple(used))
