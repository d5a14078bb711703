"""Line-oriented text format for meshes and nodal fields.

::

    DIM d NV nv NE ne
    PERIODIC axis period          (optional, one line per periodic axis)
    x_1 ... x_d                   (nv lines)
    i_0 ... i_d [g upper triangle] (ne lines, d(d+1)/2 metric entries)
    LABEL <name> NODES|ELEMENTS <count>
    <indices, whitespace separated, any number of lines>
    FIELD <name> <nv>
    <values>

Indices are 0-based. Node labels named ``boundary`` and ``truncation`` are
the manifold boundary and the outer truncation.
"""
from __future__ import annotations

import os
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np

from .mesh import BOUNDARY, TRUNCATION, MeshError, MeshManifold, build_mesh


def _upper(d: int):
    return [(i, j) for i in range(d) for j in range(i, d)]


def format_mesh(mesh: MeshManifold, fields: Mapping[str, np.ndarray] | None = None) -> str:
    d = mesh.dim
    lines = [f"DIM {d} NV {mesh.n_vertices} NE {mesh.n_elements}"]
    for axis, period in enumerate(mesh.periods):
        if period:
            lines.append(f"PERIODIC {axis} {float(period)!r}")
    lines += [" ".join(repr(float(c)) for c in row) for row in mesh.vertices]
    write_metric = not np.allclose(mesh.element_metric, np.eye(d), rtol=0, atol=0)
    ut = _upper(d)
    for e, simplex in enumerate(mesh.simplices):
        parts = [str(int(i)) for i in simplex]
        if write_metric:
            g = mesh.element_metric[e]
            parts += [repr(float(g[i, j])) for i, j in ut]
        lines.append(" ".join(parts))
    labels = {BOUNDARY: mesh.boundary_nodes, TRUNCATION: mesh.outer_truncation_nodes}
    labels.update(mesh.node_labels)
    for name, nodes in labels.items():
        lines.append(f"LABEL {name} NODES {nodes.size}")
        if nodes.size:
            lines.append(" ".join(str(int(i)) for i in nodes))
    for name, els in mesh.element_labels.items():
        lines.append(f"LABEL {name} ELEMENTS {els.size}")
        if els.size:
            lines.append(" ".join(str(int(i)) for i in els))
    for name, values in (fields or {}).items():
        values = np.asarray(getattr(values, "values", values), dtype=float)
        if values.size != mesh.n_vertices:
            raise ValueError(f"field {name!r} has {values.size} values, mesh has {mesh.n_vertices}")
        lines.append(f"FIELD {name} {values.size}")
        lines.append(" ".join(repr(float(v)) for v in values))
    return "\n".join(lines) + "\n"


def atomic_write(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_mesh(mesh: MeshManifold, path, fields=None) -> None:
    atomic_write(path, format_mesh(mesh, fields))


def parse_mesh(text: str):
    """Parse the text format; returns ``(mesh, fields)``."""
    tokens_by_line = [ln.split() for ln in text.splitlines()]
    tokens_by_line = [t for t in tokens_by_line if t and not t[0].startswith("#")]
    if not tokens_by_line:
        raise MeshError("empty mesh file")
    head = tokens_by_line[0]
    if len(head) != 6 or head[0] != "DIM" or head[2] != "NV" or head[4] != "NE":
        raise MeshError("header must read 'DIM d NV nv NE ne'")
    d, nv, ne = int(head[1]), int(head[3]), int(head[5])
    pos = 1
    periods = [None] * d
    while pos < len(tokens_by_line) and tokens_by_line[pos][0] == "PERIODIC":
        _, axis, period = tokens_by_line[pos]
        periods[int(axis)] = float(period)
        pos += 1
    try:
        V = np.array([[float(x) for x in tokens_by_line[pos + i]] for i in range(nv)])
    except (IndexError, ValueError) as exc:
        raise MeshError(f"bad vertex block: {exc}") from exc
    pos += nv
    if V.shape != (nv, d):
        raise MeshError(f"expected {nv} vertices of dimension {d}")
    S = np.zeros((ne, d + 1), dtype=np.int64)
    ut = _upper(d)
    metrics = []
    for e in range(ne):
        try:
            row = tokens_by_line[pos + e]
        except IndexError as exc:
            raise MeshError(f"missing element line {e}") from exc
        if len(row) not in (d + 1, d + 1 + len(ut)):
            raise MeshError(f"element line {e} has {len(row)} entries")
        S[e] = [int(x) for x in row[: d + 1]]
        if len(row) > d + 1:
            g = np.zeros((d, d))
            for (i, j), val in zip(ut, row[d + 1:]):
                g[i, j] = g[j, i] = float(val)
            metrics.append(g)
    pos += ne
    if metrics and len(metrics) != ne:
        raise MeshError("metric entries must be given for all elements or none")
    node_labels, element_labels, fields = {}, {}, {}
    rest = [tok for line in tokens_by_line[pos:] for tok in line]
    i = 0
    while i < len(rest):
        kind = rest[i]
        if kind == "LABEL":
            name, what, count = rest[i + 1], rest[i + 2], int(rest[i + 3])
            vals = np.array([int(x) for x in rest[i + 4:i + 4 + count]], dtype=np.int64)
            if what == "NODES":
                node_labels[name] = vals
            elif what == "ELEMENTS":
                element_labels[name] = vals
            else:
                raise MeshError(f"label kind must be NODES or ELEMENTS, got {what}")
            i += 4 + count
        elif kind == "FIELD":
            name, count = rest[i + 1], int(rest[i + 2])
            fields[name] = np.array([float(x) for x in rest[i + 3:i + 3 + count]])
            if fields[name].size != count:
                raise MeshError(f"field {name!r} is truncated")
            i += 3 + count
        else:
            raise MeshError(f"unexpected token {kind!r}")
    bnd = node_labels.pop(BOUNDARY, np.zeros(0, dtype=np.int64))
    trn = node_labels.pop(TRUNCATION, np.zeros(0, dtype=np.int64))
    mesh = build_mesh(V, S, np.array(metrics) if metrics else None,
                      boundary_nodes=bnd, truncation_nodes=trn,
                      node_labels=node_labels, element_labels=element_labels, periods=periods)
    return mesh, fields


def read_mesh(path):
    return parse_mesh(Path(path).read_text(encoding="utf-8"))
