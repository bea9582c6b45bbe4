import numpy as np
import pytest

from projtractor import exprfield as ef
from projtractor.chartgeom import (REGISTRY_NAMES, ChartGeometry, Domain, curvature, density_derivative,
                                   geodesic, projective_change, registry)
from projtractor.errors import ValidationError

import oracles


def test_klein_christoffels_closed_form():
    g = registry("klein(2)")
    rng = np.random.default_rng(1)
    for x in rng.uniform(-0.6, 0.6, (10, 2)):
        d = 1.0 - x @ x
        expect = (np.einsum("a,cb->cab", x, np.eye(2)) + np.einsum("b,ca->cab", x, np.eye(2))) / d
        np.testing.assert_allclose(g.gamma_jet(x)[0], expect, atol=1e-14)
        np.testing.assert_allclose(g.alpha_jet(x)[0], x / d, atol=1e-14)


def test_metric_christoffels_match_finite_difference_oracle():
    rng = np.random.default_rng(2)
    for name, metric, r in [("sphere-stereo(3)", oracles.sphere_metric, 1.0),
                            ("ppwave", oracles.ppwave_metric, 1.0),
                            ("s2xs2", oracles.s2xs2_metric, 1.0)]:
        g = registry(name)
        for x in rng.uniform(-r, r, (3, g.n)):
            np.testing.assert_allclose(g.gamma_jet(x)[0], oracles.christoffel(metric, x), atol=1e-9)


def test_sphere_origin_values():
    g = registry("sphere-stereo(2)")
    np.testing.assert_allclose(g.gamma_jet(np.zeros(2))[0], 0.0, atol=1e-15)
    np.testing.assert_allclose(curvature(g, np.zeros(2)).P, 4 * np.eye(2), atol=1e-13)


def test_klein_schouten_at_origin():
    P = curvature(registry("klein(2)"), np.zeros(2)).P
    np.testing.assert_allclose(P, -np.eye(2), atol=1e-13)


def test_ppwave_is_ricci_flat_but_curved():
    c = curvature(registry("ppwave"), np.array([0.1, -0.2, 0.3, 0.4]))
    np.testing.assert_allclose(c.Ric, 0.0, atol=1e-13)
    assert np.abs(c.R).max() > 0.5


def test_s2xs2_ricci_equals_metric():
    g = registry("s2xs2")
    x = np.array([0.3, -0.1, 0.5, 0.2])
    np.testing.assert_allclose(curvature(g, x).Ric, oracles.s2xs2_metric(x), atol=1e-12)


def test_curvature_symmetries():
    c = curvature(projective_change(registry("klein(3)"), ["x2", "x1*x3", "1"]), np.array([0.1, 0.2, -0.3]))
    np.testing.assert_allclose(c.R, -np.swapaxes(c.R, 0, 1), atol=1e-13)
    bianchi = c.R + np.einsum("abcd->bdca", c.R) + np.einsum("abcd->dacb", c.R)
    np.testing.assert_allclose(bianchi, 0.0, atol=1e-12)


def test_projective_change_zero_is_identity():
    g = registry("klein(2)")
    x = np.array([0.2, -0.3])
    same = projective_change(g, ["0", "0"])
    np.testing.assert_allclose(same.gamma_jet(x, 1)[1], g.gamma_jet(x, 1)[1], atol=1e-15)


def test_projective_change_constant_on_flat():
    g = projective_change(registry("flat(2)"), ["1", "0"])
    G = g.gamma_jet(np.zeros(2))[0]
    assert G[0, 0, 0] == pytest.approx(2.0)
    assert G[1, 0, 1] == pytest.approx(1.0) and G[1, 1, 1] == pytest.approx(0.0)
    # same unparametrized geodesics: the path is still a straight line
    x0, v0 = np.array([-0.5, -0.2]), np.array([0.3, 0.4])
    res = geodesic(g, x0, v0, 0.5, 1e-3)
    d = res.x - x0
    cross = d[:, 0] * v0[1] - d[:, 1] * v0[0]
    assert np.abs(cross).max() < 1e-12
    assert not np.allclose(res.x[-1], x0 + 0.5 * v0)


def test_projective_change_keeps_schouten_transformation():
    base = registry("sphere-stereo(2)")
    g = projective_change(base, ["x1", "0"])
    x = np.array([0.2, 0.1])
    # P changes by -nabla U + U U, here with U = x1 dx1
    G = base.gamma_jet(x)[0]
    u = np.array([1.0, 0.0])
    nabla_u = -np.einsum("cab,c->ab", G, u * x[0]) + np.array([[1.0, 0], [0, 0]])
    U = u * x[0]
    expect = curvature(base, x).P - nabla_u + np.outer(U, U)
    np.testing.assert_allclose(curvature(g, x).P, expect, atol=1e-12)


def test_flat_geodesics_are_straight():
    res = geodesic(registry("flat(3)"), [0.1, 0.2, 0.3], [1.0, -0.5, 0.25], 0.8, 1e-2)
    np.testing.assert_allclose(res.x[-1], [0.9, -0.2, 0.5], atol=1e-14)


def test_klein_geodesic_stays_on_axis():
    res = geodesic(registry("klein(2)"), [0.0, 0.0], [1.0, 0.0], 0.6, 1e-3)
    assert np.abs(res.x[:, 1]).max() < 1e-9
    # affine parameter is arctanh of the coordinate
    np.testing.assert_allclose(res.x[-1, 0], np.tanh(0.6), atol=1e-10)


def test_rk4_is_fourth_order():
    g = registry("sphere-stereo(2)")
    x0, v0, T = [0.3, -0.2], [0.7, 0.4], 1.0
    ref = geodesic(g, x0, v0, T, 1e-4).x[-1]
    e1 = np.abs(geodesic(g, x0, v0, T, 0.1).x[-1] - ref).max()
    e2 = np.abs(geodesic(g, x0, v0, T, 0.05).x[-1] - ref).max()
    assert 12 < e1 / e2 < 20


def test_geodesic_flags_domain_exit():
    res = geodesic(registry("klein(2)"), [0.0, 0.0], [1.0, 0.0], 10.0, 1e-2)
    assert res.exited
    assert np.all(registry("klein(2)").domain.contains(res.x))


def test_density_derivative_parallel_volume_on_ppwave():
    g = registry("ppwave")
    # the Levi-Civita volume density has alpha = d log sqrt|det g| / (n+1) = 0 here
    one = ef.parse("1", 4)
    np.testing.assert_allclose(density_derivative(g, 1.0, one, np.array([0.2, 0.1, 0.3, -0.4])), 0.0, atol=1e-14)


def test_density_derivative_weight_term():
    g = registry("klein(2)")
    f = ef.parse("x1", 2)
    x = np.array([0.3, 0.1])
    d = 1 - x @ x
    np.testing.assert_allclose(density_derivative(g, -1.0, f, x), [1.0, 0.0] - x * x[0] / d, atol=1e-14)


def test_registry_lookup():
    assert registry("klein(3)").n == 3
    assert registry("flat", 4).n == 4
    assert set(REGISTRY_NAMES) == {"flat", "klein", "sphere-stereo", "ppwave", "s2xs2"}
    for bad in ["nope", "klein(x)", "klein(3", "ppwave(3)"]:
        with pytest.raises(ValidationError):
            registry(bad)


def test_rejects_asymmetric_connection():
    z, one = ef.parse("0", 2), ef.parse("1", 2)
    gamma = [[[z, one], [z, z]], [[z, z], [z, z]]]
    with pytest.raises(ValidationError):
        ChartGeometry(2, Domain.box(2, 1.0), gamma=gamma)
