"""Run configuration: YAML documents, defaults, validation and model building."""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .criterion import BoundednessRule, WitnessFamily
from .mesh import GrowthRule, MeshManifold, exhaustion, region_from_label
from .meshio import read_mesh
from .models import (RevolutionSpec, annulus_mesh, disk_mesh, exterior_disk, half_plane,
                     half_plane_mesh, revolution_manifold, unit_square)
from .solver import SolverParams

COMMANDS = ("solve", "capacity", "criterion", "poincare", "study")

DEFAULTS: dict = {
    "command": "criterion",
    "model": {
        "type": "exterior_disk",
        "r": 1.0,
        "R": 2.0,
        "levels": [4.0, 8.0, 16.0, 32.0],
        "n_theta": 64,
        "rings_per_doubling": 8,
        "refinement": 3,
        "width": 4.0,
        "height": 2.0,
        "half_periods": 16,
        "t": None,
        "f": None,
        "path": None,
    },
    "data": {"h": "1"},
    "solver": {
        "p": 2.0,
        "epsilon": None,
        "tol_residual": None,
        "rel_tol_residual": 1e-8,
        "tol_energy": 1e-12,
        "max_iter": 200,
        "damping": 1.0,
        "method": "irls",
    },
    "exhaustion": {"marker": "radius", "start": None, "factor": 2.0, "thresholds": None},
    "capacity": {"K": "boundary", "omega": "all", "psi": "1"},
    "criterion": {
        "witness": "constants",
        "direction": "diagonal",
        "rule": BoundednessRule().to_dict(),
    },
    "poincare": {"form": "mean", "G": "all", "omega": None},
    "study": {"levels": 4, "r": 0.5, "R": 1.0, "p": 2.0},
    "output": {"dir": "out", "formats": ["json"], "export_field": False},
}


class ConfigError(ValueError):
    pass


def merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if k not in out:
            raise ConfigError(f"unknown config key {k!r}")
        if isinstance(out[k], dict) and isinstance(v, dict) and k != "rule":
            out[k] = merge(out[k], v)
        elif k == "rule":
            rule = dict(out[k])
            for rk, rv in v.items():
                if rk not in rule:
                    raise ConfigError(f"unknown rule key {rk!r}")
                rule[rk] = rv
            out[k] = rule
        else:
            out[k] = v
    return out


def load(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        doc = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    return doc


def defaults_text() -> str:
    return yaml.safe_dump(DEFAULTS, sort_keys=False)


@dataclass
class RunConfig:
    raw: dict

    @property
    def command(self) -> str:
        return self.raw["command"]

    def solver_params(self) -> SolverParams:
        try:
            return SolverParams(**self.raw["solver"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def validate(raw: dict) -> RunConfig:
    if raw.get("command") not in COMMANDS:
        raise ConfigError(f"unknown command {raw.get('command')!r}; expected one of {COMMANDS}")
    p = raw["solver"]["p"]
    if not isinstance(p, (int, float)) or not p > 1:
        raise ConfigError(f"exponent p must exceed 1, got {p}")
    if raw["command"] == "study" and not raw["study"]["p"] > 1:
        raise ConfigError("study exponent p must exceed 1")
    model = raw["model"]
    if model["type"] == "mesh":
        if not model.get("path") or not Path(model["path"]).exists():
            raise ConfigError(f"mesh file {model.get('path')!r} does not exist")
    w = raw["criterion"]["witness"]
    if isinstance(w, str) and w.startswith("file:") and not Path(w[5:]).exists():
        raise ConfigError(f"witness file {w[5:]!r} does not exist")
    fmts = raw["output"]["formats"]
    if isinstance(fmts, str):
        raw["output"]["formats"] = fmts = [f.strip() for f in fmts.split(",") if f.strip()]
    for f in fmts:
        if f not in ("json", "csv"):
            raise ConfigError(f"unknown output format {f!r}")
    cfg = RunConfig(raw)
    cfg.solver_params()
    return cfg


# -- expressions and models ----------------------------------------------------

_NAMESPACE = {name: getattr(np, name) for name in
              ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "arctan2", "sinh", "cosh",
               "tanh", "minimum", "maximum", "where", "pi")}


def evaluate(expr, mesh: MeshManifold, fields: dict | None = None) -> np.ndarray:
    """Nodal values of a number, an expression in x, y, z, r, or ``field:<name>``."""
    n = mesh.n_vertices
    if isinstance(expr, (int, float)):
        return np.full(n, float(expr))
    if isinstance(expr, (list, tuple)):
        arr = np.asarray(expr, dtype=float)
        if arr.shape != (n,):
            raise ConfigError("explicit value list has the wrong length")
        return arr
    expr = str(expr)
    if expr.startswith("field:"):
        name = expr[6:]
        if not fields or name not in fields:
            raise ConfigError(f"mesh file has no field {name!r}")
        return np.asarray(fields[name], dtype=float)
    X = mesh.vertices
    env = dict(_NAMESPACE)
    env.update(x=X[:, 0], y=X[:, 1] if X.shape[1] > 1 else 0.0,
               z=X[:, 2] if X.shape[1] > 2 else 0.0, r=np.linalg.norm(X, axis=1))
    try:
        val = eval(compile(expr, "<expr>", "eval"), {"__builtins__": {}}, env)  # noqa: S307
    except Exception as exc:  # pragma: no cover - message passthrough
        raise ConfigError(f"cannot evaluate expression {expr!r}: {exc}") from exc
    return np.broadcast_to(np.asarray(val, dtype=float), (n,)).copy()


def build_model(raw: dict):
    """Return ``(mesh, exhaustion or None, fields)`` for the configured model."""
    m = raw["model"]
    kind = m["type"]
    fields: dict = {}
    ex = None
    if kind == "exterior_disk":
        model = exterior_disk(r=m["r"], levels=m["levels"], n_theta=m["n_theta"],
                              rings_per_doubling=m["rings_per_doubling"])
        return model.mesh, model.exhaustion, fields
    if kind == "half_plane":
        model = half_plane(half_periods=m["half_periods"], height=m["height"],
                           refinement=m["refinement"])
        return model.mesh, model.exhaustion, fields
    if kind == "annulus":
        mesh = annulus_mesh(m["r"], m["R"], m["refinement"])
    elif kind == "disk":
        mesh = disk_mesh(m["R"], m["refinement"])
    elif kind == "unit_square":
        mesh = unit_square(m["refinement"])
    elif kind == "strip":
        mesh = half_plane_mesh(m["width"], m["height"], m["refinement"])
    elif kind == "revolution":
        if m["t"] is None or m["f"] is None:
            raise ConfigError("revolution model needs 't' and 'f' samples")
        mesh = revolution_manifold(RevolutionSpec(t=tuple(m["t"]), f=tuple(m["f"]),
                                                  n_theta=m["n_theta"]))
    elif kind == "mesh":
        mesh, fields = read_mesh(m["path"])
    else:
        raise ConfigError(f"unknown model type {kind!r}")
    e = raw["exhaustion"]
    if e["start"] is not None or e["thresholds"] is not None:
        ex = exhaustion(mesh, GrowthRule(marker=e["marker"], start=e["start"], factor=e["factor"],
                                         thresholds=tuple(e["thresholds"]) if e["thresholds"] else None))
    return mesh, ex, fields


def region(mesh: MeshManifold, spec):
    if spec in (None, "all"):
        return mesh.full_region("M" if spec is None else "all")
    if isinstance(spec, str) and spec.startswith("label:"):
        return region_from_label(mesh, spec[6:])
    raise ConfigError(f"bad region spec {spec!r}")


def node_set(mesh: MeshManifold, spec) -> np.ndarray:
    if spec == "boundary":
        return mesh.boundary_nodes
    if spec == "truncation":
        return mesh.outer_truncation_nodes
    if isinstance(spec, str) and spec.startswith("label:"):
        return mesh.node_labels[spec[6:]]
    if isinstance(spec, list):
        return np.asarray(spec, dtype=np.int64)
    raise ConfigError(f"bad node set spec {spec!r}")


def witness_family(spec, mesh: MeshManifold) -> WitnessFamily:
    if spec == "constants":
        return WitnessFamily(constants="search")
    if spec == "none":
        return WitnessFamily(constants=[0.0])
    if spec == "neumann":
        return WitnessFamily(constants="none", neumann=True)
    if isinstance(spec, str) and spec.startswith("file:"):
        fmesh, fields = read_mesh(spec[5:])
        if fmesh.n_vertices != mesh.n_vertices or not fields:
            raise ConfigError("witness file must hold fields on the model mesh")
        return WitnessFamily(constants="none", fields=[fields[k] for k in fields])
    raise ConfigError(f"unknown witness spec {spec!r}")


def finite_or_none(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None
