import json

import numpy as np
import pytest

from pharmonic.capacity import capacity_compact
from pharmonic.criterion import (FINITE, INCONCLUSIVE, BoundednessRule, WitnessFamily,
                                 classify, criterion_check, golden_section,
                                 witness_search_constants)
from pharmonic.energy import interior_test_mask, weak_residual
from pharmonic.mesh import GrowthRule, build_mesh, exhaustion
from pharmonic.models import annulus_mesh, exterior_disk, rectangle_mesh
from pharmonic.solver import SolverParams

RULE = BoundednessRule()


@pytest.mark.parametrize("values, label", [
    ([5.0, 4.0, 3.5, 3.49, 3.48], "bounded"),
    ([1.0, 1.001, 1.002], "bounded"),
    ([4.5, 3.0, 2.3, 1.8], "bounded"),  # non-increasing
    ([1.0, 2.0, 4.0, 8.0], "diverging"),
    ([0.0, 0.0, 0.0], "bounded"),
    ([1.0, 1.05, 1.5], INCONCLUSIVE),
    ([1.0, 2.0], INCONCLUSIVE),
])
def test_classify(values, label):
    sizes = 2.0 ** np.arange(len(values))
    assert classify(values, sizes, RULE).classification == label


def test_classify_needs_slope():
    # growth above 10% per level but flat against a rapidly growing size
    d = classify([1.0, 1.2, 1.44], [1.0, 100.0, 10000.0], RULE)
    assert d.classification == INCONCLUSIVE and d.growth_exponent < 0.5


def test_classify_reports_fitted_exponent():
    sizes = np.array([2.0, 4.0, 8.0, 16.0])
    d = classify(3 * sizes, sizes, RULE)
    assert d.growth_exponent == pytest.approx(1.0, abs=1e-12)


def test_golden_section_quadratic():
    x, fx, n = golden_section(lambda c: (c - 0.3) ** 2, -1.0, 2.0, 1e-8)
    assert x == pytest.approx(0.3, abs=1e-7) and fx < 1e-13 and n > 10


@pytest.fixture(scope="module")
def two_boundary():
    """Rectangle [0, 3] x [0, 1]: dM is the left and right edges, truncation top and bottom.

    h is 0 on the left component and 1 on the right. Zero-extension nodes are
    needed for the constant shift to matter: with no truncation the capacity
    of h - c does not depend on c.
    """
    V, T, idx = rectangle_mesh(0.0, 3.0, 0.0, 1.0, 12, 4)
    left, right = idx[:, 0], idx[:, -1]
    rest = np.setdiff1d(np.concatenate([idx[0], idx[-1]]), np.concatenate([left, right]))
    m = build_mesh(V, T, boundary_nodes=np.concatenate([left, right]), truncation_nodes=rest,
                   node_labels={"left": left, "right": right})
    ex = exhaustion(m, GrowthRule(marker=lambda X: X[:, 1], thresholds=(0.5, 1.0)))
    h = np.where(np.isin(np.arange(m.n_vertices), right), 1.0, 0.0)
    return m, ex, h


def test_constant_data_gives_its_constant():
    model = exterior_disk(levels=(2.0, 4.0, 8.0), n_theta=16, rings_per_doubling=2)
    h = np.full(model.mesh.n_vertices, 5.0)
    c, seq, info = witness_search_constants(model.mesh, h, model.exhaustion, SolverParams(p=2.0))
    assert c == 5.0 and info["capacity_at_c_star"] == 0.0 and np.all(seq.values == 0.0)


def test_two_valued_data_interior_optimum(two_boundary):
    m, ex, h = two_boundary
    params = SolverParams(p=2.0, rel_tol_residual=1e-12)
    c, _, info = witness_search_constants(m, h, ex, params)
    assert 0.0 < c < 1.0

    def cap(cc):
        return capacity_compact(m, m.boundary_nodes, ex[len(ex) - 1], h - cc, params).value

    grid = np.linspace(0, 1, 41)
    scan = np.array([cap(cc) for cc in grid])
    assert cap(c) <= min(cap(0.0), cap(1.0))
    assert cap(c) <= scan.min() * (1 + 1e-6)
    assert abs(c - grid[scan.argmin()]) <= 0.025 + 1e-6
    assert c == pytest.approx(0.5, abs=1e-4)  # left-right symmetry


def test_constant_shift_convexity(two_boundary):
    m, ex, h = two_boundary
    params = SolverParams(p=3.0, rel_tol_residual=1e-12)
    last = ex[len(ex) - 1]
    rng = np.random.default_rng(0)
    for _ in range(5):
        c1, c2 = rng.uniform(-1, 2, 2)
        f = [capacity_compact(m, m.boundary_nodes, last, h - c, params).value ** (1 / 3)
             for c in (c1, c2, (c1 + c2) / 2)]
        assert f[2] <= (f[0] + f[1]) / 2 + 1e-6


def test_constant_data_verdict():
    model = exterior_disk(levels=(2.0, 4.0, 8.0), n_theta=16, rings_per_doubling=2)
    h = np.full(model.mesh.n_vertices, -2.0)
    v = criterion_check(model.mesh, model.exhaustion, h, SolverParams(p=2.0))
    assert v.verdict == FINITE
    np.testing.assert_allclose(v.solution.u.values, -2.0, atol=1e-12)


def test_short_exhaustion_inconclusive():
    m = annulus_mesh(1.0, 4.0, 0)
    ex = exhaustion(m, GrowthRule(marker="radius", thresholds=(2.0, 4.0)))
    v = criterion_check(m, ex, np.ones(m.n_vertices), SolverParams(p=2.0))
    assert v.verdict == INCONCLUSIVE and "levels" in v.note


def test_sufficiency_assembly():
    model = exterior_disk(levels=(2.0, 4.0, 8.0, 16.0), n_theta=32, rings_per_doubling=4)
    m = model.mesh
    h = 1.0 + 0.2 * np.cos(np.arctan2(m.vertices[:, 1], m.vertices[:, 0]))
    v = criterion_check(m, model.exhaustion, h, SolverParams(p=3.0),
                        family=WitnessFamily(constants=[0.0, 1.0]))
    assert v.verdict == FINITE
    sol = v.solution
    b = m.boundary_mask
    np.testing.assert_array_equal(sol.u.values[b], h[b])
    assert sol.dirichlet_error == 0.0 and sol.converged
    mask = interior_test_mask(m)
    assert weak_residual(m, sol.u.values, 3.0, mask) <= sol.tol_residual
    assert np.isfinite(sol.energy)


def test_family_variants_and_report():
    model = exterior_disk(levels=(2.0, 4.0, 8.0), n_theta=16, rings_per_doubling=2)
    m = model.mesh
    h = np.ones(m.n_vertices)
    fam = WitnessFamily(constants="none", fields=[np.zeros(m.n_vertices)], neumann=True)
    v = criterion_check(m, model.exhaustion, h, SolverParams(p=2.0), family=fam)
    labels = [r.label for r in v.results]
    assert labels == ["field:0", "neumann"]
    neumann = v.results[1]
    assert neumann.neumann_residual is not None
    doc = json.loads(json.dumps(v.to_dict()))
    assert doc["decision_rule"] == RULE.to_dict()
    assert v.to_csv().splitlines()[0] == "witness,level,size,capacity"


def test_empty_family_rejected():
    model = exterior_disk(levels=(2.0, 4.0, 8.0), n_theta=16, rings_per_doubling=2)
    with pytest.raises(ValueError):
        criterion_check(model.mesh, model.exhaustion, np.ones(model.mesh.n_vertices),
                        SolverParams(p=2.0), family=WitnessFamily(constants="none"))

