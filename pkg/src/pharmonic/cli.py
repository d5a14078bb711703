"""Command-line front end.

``pharmonic [command] [--config run.yaml] [flags]`` runs one of the
``solve``, ``capacity``, ``criterion``, ``poincare`` or ``study`` pipelines and
writes ``report.json`` (plus ``report.csv`` and a field export on request) to
the output directory. Exit codes: 0 success, 2 invalid configuration, 3
solver non-convergence, 4 inconclusive verdict, 1 failed ``--seed-check``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .capacity import capacity_closed, boundary_rule, capacity_compact
from .checks import run_checks
from .config import ConfigError, RunConfig
from .criterion import INCONCLUSIVE, BoundednessRule, criterion_check
from .energy import ExponentError
from .mesh import MeshError
from .meshio import atomic_write, format_mesh
from .models import annulus_mesh
from .oracle import radial_oracle
from .poincare import poincare_constant
from .solver import SolverError, solve_dirichlet

EXIT_OK, EXIT_CHECK, EXIT_INVALID, EXIT_NONCONVERGED, EXIT_INCONCLUSIVE = 0, 1, 2, 3, 4
TOOL = "pharmonic"

log = logging.getLogger(__name__)


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:  # pragma: no cover - source checkout
        return "0.0.0"


def _clean(obj):
    """JSON-safe copy: numpy scalars and arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    return obj


class RunReport:
    """Report of one run; ``timing`` is kept apart so the rest is deterministic."""

    def __init__(self, config: RunConfig, results: dict, status: int, csv_text: str | None = None,
                 field_text: str | None = None):
        self.config = config
        self.results = results
        self.status = status
        self.csv_text = csv_text
        self.field_text = field_text
        self.timing: dict = {}

    def to_dict(self, timing: bool = True) -> dict:
        out = {
            "tool": TOOL,
            "version": tool_version(),
            "command": self.config.command,
            "exit_status": self.status,
            "config": self.config.raw,
            "decision_rule": self.config.raw["criterion"]["rule"],
            "results": self.results,
        }
        if timing:
            out["timing"] = self.timing
        return _clean(out)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def write(self, out_dir) -> list[Path]:
        out_dir = Path(out_dir)
        written = [out_dir / "report.json"]
        atomic_write(written[0], self.to_json())
        formats = self.config.raw["output"]["formats"]
        if "csv" in formats and self.csv_text is not None:
            written.append(out_dir / "report.csv")
            atomic_write(written[-1], self.csv_text)
        if self.field_text is not None:
            written.append(out_dir / "field.txt")
            atomic_write(written[-1], self.field_text)
        return written


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


# -- pipelines -----------------------------------------------------------------

def _run_solve(cfg: RunConfig):
    mesh, _, fields = cfgmod.build_model(cfg.raw)
    params = cfg.solver_params()
    h = cfgmod.evaluate(cfg.raw["data"]["h"], mesh, fields)
    res = solve_dirichlet(mesh, h, params)
    results = {"energy": res.energy.to_dict(), "residual": res.residual,
               "tol_residual": res.tol_residual, "iterations": res.iterations,
               "converged": res.converged, "n_vertices": mesh.n_vertices}
    field = format_mesh(mesh, {"u": res.values}) if cfg.raw["output"]["export_field"] else None
    rows = [(i, *mesh.vertices[i], res.values[i]) for i in range(mesh.n_vertices)]
    header = ["node"] + [f"x{k}" for k in range(mesh.dim)] + ["u"]
    status = EXIT_OK if res.converged else EXIT_NONCONVERGED
    return results, status, _csv(header, rows), field


def _run_capacity(cfg: RunConfig):
    mesh, ex, fields = cfgmod.build_model(cfg.raw)
    params = cfg.solver_params()
    c = cfg.raw["capacity"]
    psi = cfgmod.evaluate(c["psi"], mesh, fields)
    if ex is not None and c["K"] == "boundary":
        seq = capacity_closed(mesh, boundary_rule(mesh), ex, psi, params,
                              direction=cfg.raw["criterion"]["direction"])
        converged = all(e.converged for e in seq.estimates)
        results = {"value": float(seq.values[-1]), "sequence": seq.to_dict()}
        minimizer = seq.estimates[-1].minimizer.values
        csv_text = seq.to_csv()
    else:
        K = cfgmod.node_set(mesh, c["K"])
        omega = cfgmod.region(mesh, c["omega"])
        est = capacity_compact(mesh, K, omega, psi, params)
        converged = est.converged
        results = est.to_dict()
        minimizer = est.minimizer.values
        csv_text = _csv(["K_size", "capacity"], [(int(est.K.size), est.value)])
    field = format_mesh(mesh, {"minimizer": minimizer}) if cfg.raw["output"]["export_field"] else None
    return results, EXIT_OK if converged else EXIT_NONCONVERGED, csv_text, field


def _run_criterion(cfg: RunConfig):
    mesh, ex, fields = cfgmod.build_model(cfg.raw)
    if ex is None:
        raise ConfigError("criterion needs an exhaustion: use a model with levels or set "
                          "exhaustion.start / exhaustion.thresholds")
    params = cfg.solver_params()
    crit = cfg.raw["criterion"]
    h = cfgmod.evaluate(cfg.raw["data"]["h"], mesh, fields)
    family = cfgmod.witness_family(crit["witness"], mesh)
    try:
        rule = BoundednessRule(**crit["rule"])
    except TypeError as exc:
        raise ConfigError(f"bad decision rule: {exc}") from exc
    verdict = criterion_check(mesh, ex, h, params, family=family, rule=rule,
                              direction=crit["direction"])
    results = verdict.to_dict()
    results["family"] = family.describe()
    field = None
    if verdict.solution is not None and cfg.raw["output"]["export_field"]:
        field = format_mesh(mesh, {"u": verdict.solution.u.values,
                                   "witness": verdict.witness.witness.values})
    converged = all(e.converged for r in verdict.results for e in r.sequence.estimates)
    if verdict.solution is not None:
        converged = converged and verdict.solution.converged
    if not converged:
        status = EXIT_NONCONVERGED
    elif verdict.verdict == INCONCLUSIVE:
        status = EXIT_INCONCLUSIVE
    else:
        status = EXIT_OK
    return results, status, verdict.to_csv(), field


def _run_poincare(cfg: RunConfig):
    mesh, _, _ = cfgmod.build_model(cfg.raw)
    pc = cfg.raw["poincare"]
    G = cfgmod.region(mesh, pc["G"])
    omega = cfgmod.region(mesh, pc["omega"]) if pc["omega"] is not None else None
    try:
        est = poincare_constant(mesh, cfg.raw["solver"]["p"], G=G, omega=omega, form=pc["form"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    field = format_mesh(mesh, {"extremal": est.extremal}) if cfg.raw["output"]["export_field"] else None
    return est.to_dict(), EXIT_OK, _csv(["form", "p", "C"], [(est.form, est.p, est.C)]), field


def convergence_study(cfg: RunConfig):
    """Annulus capacity at refinement levels ``1..L`` against the radial oracle.

    Returns ``(results, per-level wall times)``. The observed order between
    consecutive levels is ``log2(e_{k-1} / e_k)`` and "n/a" on the first row.
    """
    st = cfg.raw["study"]
    L = int(st["levels"])
    if L < 1:
        raise ConfigError("study needs at least one level")
    r, R, p = float(st["r"]), float(st["R"]), float(st["p"])
    if cfg.raw["model"]["type"] not in ("annulus", "exterior_disk"):
        raise ConfigError("study needs a model with a radial oracle reference (annulus)")
    params = cfg.solver_params().with_(p=p)
    oracle = radial_oracle(2, p, r, R).capacity
    rows, times = [], []
    prev = None
    for k in range(1, L + 1):
        t0 = time.perf_counter()
        mesh = annulus_mesh(r, R, k)
        est = capacity_compact(mesh, mesh.node_labels["inner"], mesh.full_region(), 1.0, params)
        times.append(time.perf_counter() - t0)
        err = abs(est.value - oracle) / oracle
        order = "n/a" if prev is None or err <= 0 else math.log2(prev / err)
        rows.append({"level": k, "n_vertices": mesh.n_vertices, "capacity": est.value,
                     "oracle": oracle, "relative_error": err, "order": order,
                     "residual": est.residual, "tolerance": est.tol_residual,
                     "epsilon": est.epsilon, "converged": est.converged})
        prev = err
    results = {"model": "annulus", "r": r, "R": R, "p": p, "rows": rows}
    return results, times


def _run_study(cfg: RunConfig):
    results, times = convergence_study(cfg)
    csv_text = _csv(["level", "n_vertices", "capacity", "oracle", "relative_error", "order",
                     "wall_time"],
                    [(row["level"], row["n_vertices"], row["capacity"], row["oracle"],
                      row["relative_error"], row["order"], t)
                     for row, t in zip(results["rows"], times)])
    status = EXIT_OK if all(row["converged"] for row in results["rows"]) else EXIT_NONCONVERGED
    return results, status, csv_text, None, times


PIPELINES = {"solve": _run_solve, "capacity": _run_capacity, "criterion": _run_criterion,
             "poincare": _run_poincare}


def run(cfg: RunConfig) -> RunReport:
    """Execute the configured pipeline; the report is not written to disk."""
    t0 = time.perf_counter()
    level_times = None
    if cfg.command == "study":
        results, status, csv_text, field, level_times = _run_study(cfg)
    else:
        results, status, csv_text, field = PIPELINES[cfg.command](cfg)
    report = RunReport(cfg, results, status, csv_text, field)
    report.timing = {"wall_time": time.perf_counter() - t0}
    if level_times is not None:
        report.timing["levels"] = level_times
    return report


# -- argument handling ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog=TOOL, description="p-harmonic Dirichlet problems on "
                                 "meshed manifolds: solves, capacities and the existence criterion.")
    ap.add_argument("command", nargs="?", choices=cfgmod.COMMANDS,
                    help="pipeline to run (overrides the config's command)")
    ap.add_argument("--config", help="YAML run configuration")
    ap.add_argument("--p", type=float, help="exponent p > 1")
    ap.add_argument("--tol", type=float, help="absolute weak-residual tolerance")
    ap.add_argument("--levels", type=int, help="number of exhaustion or study levels")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--format", dest="formats", help="comma-separated report formats: json,csv")
    ap.add_argument("--witness", help="constants | none | neumann | file:<path>")
    ap.add_argument("--seed-check", action="store_true", help="run the invariant suite and exit")
    ap.add_argument("--print-defaults", action="store_true", help="print the default config and exit")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def apply_flags(raw: dict, args) -> dict:
    if args.command:
        raw["command"] = args.command
    if args.p is not None:
        raw["solver"]["p"] = args.p
        raw["study"]["p"] = args.p
    if args.tol is not None:
        raw["solver"]["tol_residual"] = args.tol
    if args.levels is not None:
        n = args.levels
        raw["study"]["levels"] = n
        m = raw["model"]
        if m["type"] == "exterior_disk":
            m["levels"] = [float(m["r"]) * 2.0 ** (k + 1) for k in range(1, n + 1)]
        elif m["type"] == "half_plane":
            m["half_periods"] = 2 ** max(n - 1, 0)
    if args.out is not None:
        raw["output"]["dir"] = args.out
    if args.formats is not None:
        raw["output"]["formats"] = args.formats
    if args.witness is not None:
        raw["criterion"]["witness"] = args.witness
    return raw


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.print_defaults:
        sys.stdout.write(cfgmod.defaults_text())
        return EXIT_OK
    if args.seed_check:
        checks = run_checks()
        for c in checks:
            print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.value:.3e} (tol {c.tolerance:.0e})")
        return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK
    try:
        raw = cfgmod.merge(cfgmod.DEFAULTS, cfgmod.load(args.config) if args.config else {})
        cfg = cfgmod.validate(apply_flags(raw, args))
        report = run(cfg)
    except (ConfigError, MeshError, ExponentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    paths = report.write(cfg.raw["output"]["dir"])
    for pth in paths:
        print(pth)
    return report.status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
