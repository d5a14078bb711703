import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pharmonic.capacity import (admissible_masks, boundary_rule, capacity_closed,
                                capacity_compact)
from pharmonic.energy import dirichlet_energy
from pharmonic.mesh import GrowthRule, exhaustion, interface_nodes, refine, region_from_elements
from pharmonic.models import annulus_mesh, exterior_disk, unit_square
from pharmonic.solver import SolverParams

TIGHT = SolverParams(p=2.0, rel_tol_residual=1e-12)


@pytest.fixture(scope="module")
def square():
    return unit_square(3)


def centre_nodes(mesh, radius):
    c = np.linalg.norm(mesh.vertices - 0.5, axis=1)
    return np.flatnonzero(c <= radius + 1e-12)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_zero_psi(square, p):
    est = capacity_compact(square, centre_nodes(square, 0.2), square.full_region(), 0.0,
                           SolverParams(p=p))
    assert est.value == 0.0 and est.converged


def test_empty_K_flagged(square):
    with pytest.warns(RuntimeWarning):
        est = capacity_compact(square, [], square.full_region(), 1.0, TIGHT)
    assert est.value == 0.0 and est.empty_K


def test_K_outside_omega_rejected(square):
    left = region_from_elements(square, np.flatnonzero(square.chart_coords.mean(axis=1)[:, 0] < 0.3))
    far = np.flatnonzero(square.vertices[:, 0] > 0.9)
    with pytest.raises(ValueError):
        capacity_compact(square, far, left, 1.0, TIGHT)


def test_scaling_ratio_nine(square):
    K = centre_nodes(square, 0.2)
    psi = np.random.default_rng(0).uniform(-1, 1, square.n_vertices)
    a = capacity_compact(square, K, square.full_region(), psi, TIGHT).value
    b = capacity_compact(square, K, square.full_region(), 3 * psi, TIGHT).value
    assert b / a == pytest.approx(9.0, rel=1e-10)


def test_annulus_capacity_refinement_4():
    m = annulus_mesh(0.5, 1.0, 4)
    est = capacity_compact(m, m.node_labels["inner"], m.full_region(), 1.0, SolverParams(p=2.0))
    assert est.value == pytest.approx(2 * math.pi / math.log(2), rel=0.02)


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_estimate_invariants(square, p):
    inner = region_from_elements(
        square, np.flatnonzero(np.abs(square.chart_coords.mean(axis=1) - 0.5).max(axis=1) < 0.35), "inner")
    K = centre_nodes(square, 0.15)
    psi = np.random.default_rng(1).uniform(0.5, 1.5, square.n_vertices)
    est = capacity_compact(square, K, inner, psi, SolverParams(p=p))
    u = est.minimizer.values
    outside = np.setdiff1d(np.arange(square.n_vertices), inner.node_set)
    assert np.all(u[outside] == 0.0)
    assert np.all(u[interface_nodes(square, inner)] == 0.0)
    np.testing.assert_array_equal(u[K], psi[K])
    assert est.value == dirichlet_energy(square, u, p, 0.0).value
    assert est.residual <= est.tol_residual


def test_admissible_masks_K_overrides_zero(square):
    K = np.array([0, 5])  # corner 0 is on the boundary of every region
    reg = square.full_region()
    fixed, Kmask = admissible_masks(square, K, reg)
    assert Kmask[0] and fixed[0]
    assert fixed.sum() >= K.size


@settings(max_examples=12, deadline=None)
@given(st.floats(-3, 3).filter(lambda x: abs(x) > 0.05), st.sampled_from([1.5, 2.0, 3.0]),
       st.integers(0, 2 ** 16))
def test_homogeneity_property(lam, p, seed):
    m = unit_square(2)
    rng = np.random.default_rng(seed)
    K = rng.choice(np.flatnonzero(~m.boundary_mask), 3, replace=False)
    psi = rng.uniform(-1, 1, m.n_vertices)
    params = SolverParams(p=p, rel_tol_residual=1e-13)
    a = capacity_compact(m, K, m.full_region(), psi, params).value
    b = capacity_compact(m, K, m.full_region(), lam * psi, params).value
    assert b == pytest.approx(abs(lam) ** p * a, rel=1e-10)


@settings(max_examples=12, deadline=None)
@given(st.sampled_from([1.5, 2.0, 3.0]), st.integers(0, 2 ** 16))
def test_subadditivity_property(p, seed):
    m = unit_square(2)
    rng = np.random.default_rng(seed)
    K = rng.choice(np.flatnonzero(~m.boundary_mask), 4, replace=False)
    psi1, psi2 = rng.uniform(-1, 1, (2, m.n_vertices))
    params = SolverParams(p=p, rel_tol_residual=1e-12)
    full = m.full_region()
    c = [capacity_compact(m, K, full, f, params).value ** (1 / p) for f in (psi1, psi2, psi1 + psi2)]
    assert c[2] <= c[0] + c[1] + 1e-6


def test_monotone_in_K_and_omega(square):
    big = square.full_region()
    small = region_from_elements(
        square, np.flatnonzero(np.abs(square.chart_coords.mean(axis=1) - 0.5).max(axis=1) < 0.4), "small")
    K1, K2 = centre_nodes(square, 0.1), centre_nodes(square, 0.2)
    c11 = capacity_compact(square, K1, big, 1.0, TIGHT).value
    c22 = capacity_compact(square, K2, small, 1.0, TIGHT).value
    c21 = capacity_compact(square, K2, big, 1.0, TIGHT).value
    c12 = capacity_compact(square, K1, small, 1.0, TIGHT).value
    assert c11 <= c21 + 1e-8 and c21 <= c22 + 1e-8 and c11 <= c12 + 1e-8


def test_refinement_does_not_increase_capacity():
    coarse = unit_square(2)
    fine = refine(coarse)
    K_c = centre_nodes(coarse, 0.25)
    K_f = np.flatnonzero(np.isin(np.round(fine.vertices, 12).view([("x", float), ("y", float)]).ravel(),
                                 np.round(coarse.vertices[K_c], 12).view([("x", float), ("y", float)]).ravel()))
    assert K_f.size == K_c.size
    a = capacity_compact(coarse, K_c, coarse.full_region(), 1.0, TIGHT).value
    b = capacity_compact(fine, K_f, fine.full_region(), 1.0, TIGHT).value
    assert b <= a * (1 + 1e-10)


def test_closed_single_level_matches_compact():
    m = annulus_mesh(0.5, 1.0, 1, outer="boundary")
    ex = exhaustion(m, GrowthRule(marker="radius", thresholds=(0.8, 1.0)))
    seq = capacity_closed(m, boundary_rule(m), ex, 1.0, TIGHT, direction="growing-K")
    direct = capacity_compact(m, m.boundary_nodes, m.full_region(), 1.0, TIGHT).value
    assert seq.values[-1] == pytest.approx(direct, rel=1e-12)


@pytest.mark.parametrize("direction", ["growing-K", "growing-Omega"])
def test_sequence_monotone(direction):
    model = exterior_disk(levels=(2.0, 4.0, 8.0), n_theta=32, rings_per_doubling=4)
    seq = capacity_closed(model.mesh, boundary_rule(model.mesh), model.exhaustion, 1.0, TIGHT,
                          direction=direction)
    assert seq.monotone and seq.max_violation <= 1e-8
    steps = np.diff(seq.values)
    assert np.all(steps >= -1e-8) if direction == "growing-K" else np.all(steps <= 1e-8)


def test_exterior_disk_decay():
    model = exterior_disk()
    seq = capacity_closed(model.mesh, boundary_rule(model.mesh), model.exhaustion, 1.0,
                          SolverParams(p=2.0), direction="diagonal")
    R = np.array(model.params["levels"])
    np.testing.assert_allclose(seq.values, 2 * np.pi / np.log(R), rtol=0.05)
    assert np.all(np.diff(seq.values) < 0)


def test_sequence_csv_and_dict():
    model = exterior_disk(levels=(2.0, 4.0), n_theta=16, rings_per_doubling=2)
    seq = capacity_closed(model.mesh, boundary_rule(model.mesh), model.exhaustion, 1.0, TIGHT)
    lines = seq.to_csv().splitlines()
    assert lines[0] == "level,size,capacity" and len(lines) == 3
    d = seq.to_dict()
    assert d["direction"] == "growing-K" and len(d["values"]) == 2


def test_empty_levels_skipped():
    m = annulus_mesh(1.0, 4.0, 0)
    ex = exhaustion(m, GrowthRule(marker="radius", thresholds=(2.0, 4.0)))
    # the target set lives on the outer ring only, absent from the first level
    outer = np.flatnonzero(np.linalg.norm(m.vertices, axis=1) > 3.9)
    m2 = m.with_labels(target=outer)
    with pytest.warns(RuntimeWarning):
        seq = capacity_closed(m2, m2.node_labels["target"], ex, 1.0, TIGHT, direction="diagonal")
    assert seq.skipped == [1]
