import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import CubicSpline

from pharmonic.energy import (ExponentError, ScalarField, dirichlet_energy, energy_gradient,
                              interior_test_mask, natural_test_mask, weak_residual)
from pharmonic.mesh import build_mesh, refine, region_from_elements
from pharmonic.models import annulus_mesh, disk_mesh, unit_square
from pharmonic.oracle import radial_oracle


def linear_stiffness(mesh):
    """Dense P1 stiffness from the inverse vertex matrices (test-local oracle)."""
    n, d = mesh.n_vertices, mesh.dim
    K = np.zeros((n, n))
    for e, s in enumerate(mesh.simplices):
        X = np.hstack([np.ones((d + 1, 1)), mesh.chart_coords[e]])
        B = np.linalg.inv(X)[1:].T
        g = mesh.element_metric[e]
        vol = abs(np.linalg.det(X)) / math.factorial(d) * math.sqrt(np.linalg.det(g))
        K[np.ix_(s, s)] += vol * B @ np.linalg.inv(g) @ B.T
    return K


@pytest.fixture(scope="module")
def skew_mesh():
    rng = np.random.default_rng(0)
    m = unit_square(2)
    V = m.vertices + 0.04 * rng.standard_normal(m.vertices.shape) * ~m.boundary_mask[:, None]
    G = np.array([[1.5, 0.2], [0.2, 0.8]])
    return build_mesh(V, m.simplices, G, boundary_nodes=m.boundary_nodes)


@pytest.mark.parametrize("p", [1.5, 2.0, 4.0])
def test_constant_field_zero_energy(p):
    m = unit_square(2)
    assert dirichlet_energy(m, np.full(m.n_vertices, 3.0), p).value == 0.0


def test_linear_field_p4():
    m = unit_square(3)
    assert dirichlet_energy(m, m.vertices[:, 0], 4.0).value == pytest.approx(1.0, rel=1e-13)


def test_disk_x_energy():
    m = disk_mesh(1.0, 4)
    assert dirichlet_energy(m, m.vertices[:, 0], 2.0).value == pytest.approx(math.pi, abs=1e-2)


@pytest.mark.parametrize("p", [1.0, 0.5, -2.0, float("nan")])
def test_exponent_guard(p):
    with pytest.raises(ExponentError):
        dirichlet_energy(unit_square(0), np.zeros(4), p)


def test_negative_epsilon_rejected():
    with pytest.raises(ValueError):
        dirichlet_energy(unit_square(0), np.zeros(4), 2.0, epsilon=-1.0)


def test_regularized_density():
    m = unit_square(1)
    eps = 0.3
    E = dirichlet_energy(m, 2 * m.vertices[:, 1], 3.0, epsilon=eps).value
    assert E == pytest.approx((4 + eps ** 2) ** 1.5, rel=1e-13)


def test_per_region_breakdown_and_json():
    m = unit_square(2)
    left = region_from_elements(m, np.flatnonzero(m.chart_coords.mean(axis=1)[:, 0] < 0.5), "left")
    rep = dirichlet_energy(m, m.vertices[:, 0], 2.0, regions=[left])
    assert rep.per_region["left"] == pytest.approx(0.5, rel=1e-13)
    doc = json.loads(rep.to_json())
    assert {"value", "p", "epsilon", "region", "tolerance"} <= set(doc)


@settings(max_examples=30, deadline=None)
@given(st.floats(1.1, 5.0), st.floats(-4, 4).filter(lambda x: abs(x) > 1e-3), st.integers(0, 2 ** 16))
def test_homogeneity(p, lam, seed):
    m = unit_square(2)
    u = np.random.default_rng(seed).standard_normal(m.n_vertices)
    a = dirichlet_energy(m, lam * u, p).value
    b = abs(lam) ** p * dirichlet_energy(m, u, p).value
    assert a == pytest.approx(b, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(1.1, 5.0), st.integers(0, 2 ** 16))
def test_convexity(p, seed):
    m = unit_square(2)
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal((2, m.n_vertices))
    mid = dirichlet_energy(m, (u + v) / 2, p, 1e-8).value
    avg = (dirichlet_energy(m, u, p, 1e-8).value + dirichlet_energy(m, v, p, 1e-8).value) / 2
    assert mid <= avg + 1e-12


def test_zero_energy_only_for_componentwise_constants():
    m = unit_square(2)
    u = np.zeros(m.n_vertices)
    u[np.flatnonzero(~m.boundary_mask)[0]] = 1e-6
    assert dirichlet_energy(m, u, 2.0).value > 0


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_gradient_constant_field(p):
    m = unit_square(2)
    np.testing.assert_array_equal(energy_gradient(m, np.full(m.n_vertices, 1.7), p, 1e-8), 0.0)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_gradient_finite_differences(skew_mesh, p):
    rng = np.random.default_rng(int(p * 10))
    eps = 1e-8
    for _ in range(3):
        u = rng.standard_normal(skew_mesh.n_vertices)
        g = energy_gradient(skew_mesh, u, p, eps)
        for i in rng.choice(skew_mesh.n_vertices, 5, replace=False):
            h = 1e-6 * (1 + abs(u[i]))
            up, um = u.copy(), u.copy()
            up[i] += h
            um[i] -= h
            fd = (dirichlet_energy(skew_mesh, up, p, eps).value
                  - dirichlet_energy(skew_mesh, um, p, eps).value) / (2 * h)
            assert abs(fd - g[i]) <= 1e-6 * max(abs(fd), 1e-3)


def test_gradient_fixed_nodes_report_zero():
    m = unit_square(2)
    u = np.random.default_rng(1).standard_normal(m.n_vertices)
    g = energy_gradient(m, ScalarField(u, fixed=m.boundary_mask), 3.0, 1e-8)
    assert np.all(g[m.boundary_mask] == 0.0) and np.any(g != 0.0)


def test_gradient_p2_matches_linear_assembly(skew_mesh):
    u = np.random.default_rng(2).standard_normal(skew_mesh.n_vertices)
    K = linear_stiffness(skew_mesh)
    g = energy_gradient(skew_mesh, u, 2.0, 0.0)
    np.testing.assert_allclose(g, 2 * K @ u, atol=1e-12 * np.abs(K).max() * np.abs(u).max() * 10)


def test_gradient_needs_epsilon_below_two():
    with pytest.raises(ValueError):
        energy_gradient(unit_square(1), np.zeros(9), 1.5, 0.0)


@pytest.mark.parametrize("p", [1.2, 1.5, 2.0, 3.0, 6.0])
def test_linear_field_weak_residual(skew_mesh, p):
    u = 0.4 - 1.3 * skew_mesh.vertices[:, 0] + 2.1 * skew_mesh.vertices[:, 1]
    assert weak_residual(skew_mesh, u, p, interior_test_mask(skew_mesh)) <= 1e-12


def test_weak_residual_empty_test_space():
    m = unit_square(0)
    with pytest.raises(ValueError):
        weak_residual(m, np.zeros(4), 2.0, np.zeros(4, dtype=bool))


def test_weak_residual_is_gradient_norm_over_p():
    m = unit_square(2)
    u = np.random.default_rng(4).standard_normal(m.n_vertices)
    mask = interior_test_mask(m)
    g = energy_gradient(m, u, 3.0, 1e-8)
    assert weak_residual(m, u, 3.0, mask, 1e-8) == pytest.approx(np.abs(g[mask]).max() / 3.0)


def test_test_masks():
    m = annulus_mesh(0.5, 1.0, 0)
    assert not np.any(interior_test_mask(m) & (m.boundary_mask | m.truncation_mask))
    nat = natural_test_mask(m)
    assert np.all(nat[m.boundary_nodes]) and not np.any(nat[m.outer_truncation_nodes])


def test_radial_p3_residual_decreases():
    # a cubic interpolant keeps the oracle's own sampling error below the FEM residual
    prof = radial_oracle(2, 3.0, 0.5, 1.0)
    spline = CubicSpline(prof.radii, prof.values)
    res = []
    for k in (1, 2, 3):
        m = annulus_mesh(0.5, 1.0, k)
        u = spline(np.linalg.norm(m.vertices, axis=1))
        res.append(weak_residual(m, u, 3.0, interior_test_mask(m)))
    assert res[0] > res[1] > res[2]


def test_scalar_field_validation():
    with pytest.raises(ValueError):
        ScalarField(np.zeros(3), fixed=np.zeros(4, dtype=bool))
    m = refine(unit_square(0))
    f = ScalarField.from_function(m, lambda X: X[:, 0] + X[:, 1])
    assert len(f) == m.n_vertices and f.values.max() == 2.0
