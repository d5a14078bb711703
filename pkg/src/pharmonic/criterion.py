"""Existence criterion for the Dirichlet problem with finite Dirichlet integral.

The problem ``Delta_p u = 0``, ``u = h`` on the boundary, ``int |grad u|^p < inf``
is solvable iff ``cap_{h-w}(dM) < inf`` for some ``w`` in the natural-boundary
class. A finite tool can only try finitely many witnesses ``w`` and watch the
capacity sequence along an exhaustion, so the verdicts are

* ``finite-witness-found``: some witness gives a bounded sequence;
* ``no-witness-found-in-family``: every witness tried gives a diverging one;
* ``inconclusive``: anything else, or fewer than 3 levels.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .capacity import CapacitySequence, boundary_rule, capacity_closed, capacity_compact
from .energy import ScalarField, interior_test_mask
from .mesh import ExhaustionSequence, MeshManifold
from .solver import SolverParams, minimize_energy, solve_neumann_member

log = logging.getLogger(__name__)

FINITE = "finite-witness-found"
NONE_FOUND = "no-witness-found-in-family"
INCONCLUSIVE = "inconclusive"
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class BoundednessRule:
    """Decision rule applied to the last ``window`` levels of a capacity sequence.

    Bounded: relative spread below ``bounded_rel_change``, or no step rising
    by more than that fraction (a non-increasing diagonal sequence bounds the
    capacity of the whole boundary from above). Diverging: every step grows
    by more than ``growth_factor`` and the log-log slope against the level
    size exceeds ``min_slope``.
    """

    window: int = 3
    bounded_rel_change: float = 0.01
    growth_factor: float = 0.10
    min_slope: float = 0.5
    zero_tol: float = 1e-12

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Diagnostics:
    classification: str
    relative_change: float | None
    step_growth: list
    growth_exponent: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def classify(values, sizes, rule: BoundednessRule) -> Diagnostics:
    """Label a capacity sequence "bounded", "diverging" or "inconclusive"."""
    v = np.asarray(values, dtype=float)
    s = np.asarray(sizes, dtype=float)
    if v.size < rule.window:
        return Diagnostics(INCONCLUSIVE, None, [], None)
    tail, stail = v[-rule.window:], s[-rule.window:]
    top = float(np.max(np.abs(tail)))
    if top <= rule.zero_tol:
        return Diagnostics("bounded", 0.0, [0.0] * (rule.window - 1), None)
    rel = float((tail.max() - tail.min()) / top)
    with np.errstate(divide="ignore", invalid="ignore"):
        growth = (tail[1:] - tail[:-1]) / np.abs(tail[:-1])
    growth = [float(g) for g in growth]
    slope = None
    if np.all(tail > 0) and np.all(np.diff(stail) > 0):
        slope = float(np.polyfit(np.log(stail), np.log(tail), 1)[0])
    if rel < rule.bounded_rel_change or max(growth) <= rule.bounded_rel_change:
        label = "bounded"
    elif min(growth) > rule.growth_factor and slope is not None and slope > rule.min_slope:
        label = "diverging"
    else:
        label = INCONCLUSIVE
    return Diagnostics(label, rel, growth, slope)


@dataclass
class WitnessFamily:
    """Finite witness family.

    ``constants``: "search" (golden-section best constant plus the bracket
    ends), a sequence of explicit constants, or "none". ``fields``: nodal
    arrays supplied by the user. ``neumann``: include the natural-boundary
    projection of ``h``.
    """

    constants: object = "search"
    fields: list = field(default_factory=list)
    neumann: bool = False

    def describe(self) -> dict:
        c = self.constants if isinstance(self.constants, str) else [float(x) for x in self.constants]
        return {"constants": c, "fields": len(self.fields), "neumann": self.neumann}


@dataclass(eq=False)
class WitnessResult:
    label: str
    witness: ScalarField
    sequence: CapacitySequence
    diagnostics: Diagnostics
    neumann_residual: float | None = None

    def to_dict(self) -> dict:
        out = {"label": self.label, "sequence": self.sequence.to_dict(),
               "diagnostics": self.diagnostics.to_dict()}
        if self.neumann_residual is not None:
            out["neumann_residual"] = self.neumann_residual
        return out


@dataclass(eq=False)
class CandidateSolution:
    """``u = u1 + w - u0`` assembled on the last exhaustion level."""

    u: ScalarField
    u1: ScalarField
    u0: ScalarField
    energy: float
    residual: float
    tol_residual: float
    dirichlet_error: float
    converged: bool

    def to_dict(self) -> dict:
        return {"energy": self.energy, "residual": self.residual,
                "tol_residual": self.tol_residual, "dirichlet_error": self.dirichlet_error,
                "converged": self.converged}


@dataclass(eq=False)
class CriterionVerdict:
    verdict: str
    witness: WitnessResult | None
    results: list[WitnessResult]
    rule: BoundednessRule
    solution: CandidateSolution | None = None
    constant_search: dict | None = None
    note: str = ""

    @property
    def sequence(self) -> CapacitySequence | None:
        return self.witness.sequence if self.witness else None

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "witness": self.witness.label if self.witness else None,
            "decision_rule": self.rule.to_dict(),
            "witnesses": [r.to_dict() for r in self.results],
            "constant_search": self.constant_search,
            "solution": self.solution.to_dict() if self.solution else None,
            "note": self.note,
        }

    def to_csv(self) -> str:
        rows = ["witness,level,size,capacity"]
        for r in self.results:
            for lvl, size, e in zip(r.sequence.levels, r.sequence.sizes, r.sequence.estimates):
                rows.append(f"{r.label},{lvl},{float(size)!r},{float(e.value)!r}")
        return "\n".join(rows) + "\n"


def _h_values(mesh, h) -> np.ndarray:
    if callable(h) and not hasattr(h, "values"):
        return np.asarray(h(mesh.vertices), dtype=float)
    return np.asarray(getattr(h, "values", h), dtype=float)


def golden_section(f, a: float, b: float, xtol: float, max_iter: int = 200):
    """Minimize a unimodal ``f`` on ``[a, b]``; returns ``(x, f(x), evaluations)``."""
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    n = 2
    while abs(b - a) > xtol and n < max_iter:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
        n += 1
    return (c, fc, n) if fc <= fd else (d, fd, n)


def witness_search_constants(mesh: MeshManifold, h, exhaustion: ExhaustionSequence,
                             params: SolverParams, xtol: float = 1e-6,
                             direction: str = "diagonal"):
    """Best constant witness ``c*`` minimizing ``cap_{h-c}(K_last, Omega_last)^(1/p)``.

    The map is convex in ``c`` (homogeneity plus the triangle inequality for
    ``cap^(1/p)``), so golden-section search on ``[min h, max h]`` over the
    boundary applies. Returns ``(c*, sequence for c*, search info)``.
    """
    hv = _h_values(mesh, h)
    last = exhaustion[len(exhaustion) - 1]
    K = np.intersect1d(mesh.boundary_nodes, last.node_set)
    lo, hi = float(hv[K].min()), float(hv[K].max())
    p = params.p
    cache: dict[float, float] = {}

    def objective(c: float) -> float:
        if c not in cache:
            cache[c] = capacity_compact(mesh, K, last, hv - c, params).value ** (1.0 / p)
        return cache[c]

    if hi - lo <= 1e-14 * max(1.0, abs(lo)):
        c_star, evals = lo, 0
    else:
        c_star, _, evals = golden_section(objective, lo, hi, xtol * (hi - lo))
    seq = capacity_closed(mesh, boundary_rule(mesh), exhaustion, hv - c_star, params,
                          direction=direction)
    info = {"c_star": float(c_star), "bracket": [lo, hi], "evaluations": int(evals),
            "capacity_at_c_star": float(seq.values[-1]) if seq.values.size else 0.0}
    return float(c_star), seq, info


def assemble_solution(mesh: MeshManifold, h, w, u1, params: SolverParams) -> CandidateSolution:
    """``u = u1 + w - u0`` with ``u0`` minimizing ``E(u1 + w - u0)``, ``u0 = 0`` on dM and truncation."""
    hv = _h_values(mesh, h)
    wv = np.asarray(getattr(w, "values", w), dtype=float)
    u1v = np.asarray(getattr(u1, "values", u1), dtype=float)
    base = u1v + wv
    fixed = mesh.boundary_mask | mesh.truncation_mask
    res = minimize_energy(mesh, base, fixed, params, test_mask=interior_test_mask(mesh) & ~fixed)
    u = res.field.values
    u0 = base - u
    derr = float(np.max(np.abs(u[mesh.boundary_mask] - hv[mesh.boundary_mask]))) \
        if mesh.boundary_nodes.size else 0.0
    return CandidateSolution(
        u=ScalarField(u, fixed=fixed, tag="solver"), u1=ScalarField(u1v, tag="solver"),
        u0=ScalarField(u0, tag="solver"), energy=res.energy.value, residual=res.residual,
        tol_residual=res.tol_residual, dirichlet_error=derr, converged=res.converged,
    )


def criterion_check(mesh: MeshManifold, exhaustion: ExhaustionSequence, h, params: SolverParams,
                    family: WitnessFamily | None = None, rule: BoundednessRule | None = None,
                    direction: str = "diagonal", construct: bool = True) -> CriterionVerdict:
    """Test ``cap_{h-w}(dM) < inf`` over a finite witness family.

    For each witness ``w`` the capacity sequence of ``psi = h - w`` on the
    compacts ``dM ∩ closure(Omega_i)`` is classified with ``rule``. When a
    bounded witness exists and ``construct`` is set, the candidate solution
    ``u = u1 + w - u0`` is assembled on the last level and reported.
    """
    family = family or WitnessFamily()
    rule = rule or BoundednessRule()
    hv = _h_values(mesh, h)
    if len(exhaustion) < rule.window:
        return CriterionVerdict(INCONCLUSIVE, None, [], rule,
                                note=f"exhaustion has {len(exhaustion)} levels; need {rule.window}")

    witnesses: list[tuple[str, np.ndarray, float | None]] = []
    search_info = None
    precomputed: dict[str, CapacitySequence] = {}
    consts = family.constants
    if isinstance(consts, str):
        if consts == "search":
            c_star, seq, search_info = witness_search_constants(mesh, hv, exhaustion, params,
                                                                direction=direction)
            label = f"constant:{c_star:.6g}"
            precomputed[label] = seq
            witnesses.append((label, np.full(mesh.n_vertices, c_star), None))
            for c in search_info["bracket"]:
                lab = f"constant:{c:.6g}"
                if all(lab != w[0] for w in witnesses):
                    witnesses.append((lab, np.full(mesh.n_vertices, c), None))
        elif consts != "none":
            raise ValueError(f"unknown constant family {consts!r}")
    else:
        for c in consts:
            witnesses.append((f"constant:{float(c):.6g}", np.full(mesh.n_vertices, float(c)), None))
    for k, f in enumerate(family.fields):
        witnesses.append((f"field:{k}", _h_values(mesh, f), None))
    if family.neumann:
        ns = solve_neumann_member(mesh, hv, params)
        witnesses.append(("neumann", ns.values, ns.full_test_space_residual))
    if not witnesses:
        raise ValueError("witness family is empty")

    results = []
    for label, w, nres in witnesses:
        seq = precomputed.get(label)
        if seq is None:
            seq = capacity_closed(mesh, boundary_rule(mesh), exhaustion, hv - w, params,
                                  direction=direction)
        diag = classify(seq.values, seq.sizes, rule)
        results.append(WitnessResult(label, ScalarField(w, tag="witness"), seq, diag, nres))
        log.info("witness %s: %s", label, diag.classification)

    bounded = [r for r in results if r.diagnostics.classification == "bounded"]
    if bounded:
        best = min(bounded, key=lambda r: r.sequence.values[-1])
        verdict = CriterionVerdict(FINITE, best, results, rule, constant_search=search_info)
        if construct:
            u1 = best.sequence.estimates[-1].minimizer
            verdict.solution = assemble_solution(mesh, hv, best.witness, u1, params)
        return verdict
    if all(r.diagnostics.classification == "diverging" for r in results):
        best = min(results, key=lambda r: r.sequence.values[-1])
        return CriterionVerdict(NONE_FOUND, best, results, rule, constant_search=search_info)
    best = min(results, key=lambda r: r.sequence.values[-1])
    return CriterionVerdict(INCONCLUSIVE, best, results, rule, constant_search=search_info)
