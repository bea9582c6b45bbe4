import numpy as np
import pytest

from projtractor.chartgeom import geodesic, registry
from projtractor.cone import (ConePoint, ConeTangent, cone_exp, cone_geodesic, cone_ricci, cone_volume,
                              euler_derivative, euler_field, tangent_to_tractor)
from projtractor.errors import DomainExit, ValidationError
from projtractor.ode import trace_deviation


def _cone_points(geom, m, seed):
    rng = np.random.default_rng(seed)
    xs = geom.domain.sample(rng, m, 0.6)
    return [ConePoint(x, float(r)) for x, r in zip(xs, rng.uniform(0.5, 2.0, m))]


@pytest.mark.parametrize("name", ["flat(2)", "klein(3)", "sphere-stereo(2)", "ppwave", "s2xs2"])
def test_euler_field_derivative_is_identity(name):
    g = registry(name)
    for p in _cone_points(g, 20, 1):
        np.testing.assert_allclose(euler_derivative(g, p), np.eye(g.n + 1), atol=1e-8)


@pytest.mark.parametrize("name", ["klein(2)", "ppwave"])
def test_cone_is_ricci_flat(name):
    g = registry(name)
    for p in _cone_points(g, 20, 2):
        assert np.abs(cone_ricci(g, p)).max() < 1e-8


def test_vertical_geodesics_are_fibre_lines():
    g = registry("sphere-stereo(2)")
    p0 = ConePoint([0.3, -0.2], 1.0)
    res = cone_geodesic(g, p0, ConeTangent([0.0, 0.0], 0.7), 1.0, 1e-2)
    np.testing.assert_allclose(res.x, np.broadcast_to(p0.x, res.x.shape), atol=1e-14)
    np.testing.assert_allclose(res.rho, 1.0 + 0.7 * res.t, atol=1e-13)


def test_flat_horizontal_geodesic_is_a_straight_line():
    g = registry("flat(2)")
    res = cone_geodesic(g, ConePoint([0.0, 0.0], 1.0), ConeTangent([0.5, 0.2], 0.0), 1.0, 1e-2)
    np.testing.assert_allclose(res.rho, 1.0, atol=1e-14)
    np.testing.assert_allclose(res.x[-1], [0.5, 0.2], atol=1e-14)


def test_cone_exp_examples():
    g = registry("flat(2)")
    p0 = ConePoint([0.0, 0.0], 1.0)
    end = cone_exp(g, p0, ConeTangent([0.4, -0.3], 0.0))
    np.testing.assert_allclose(end.x, [0.4, -0.3], atol=1e-14)
    assert end.rho == pytest.approx(1.0)
    k = registry("klein(2)")
    q = ConePoint([0.2, 0.1], 1.3)
    same = cone_exp(k, q, ConeTangent([0.0, 0.0], 0.0))
    np.testing.assert_array_equal(same.x, q.x)
    assert same.rho == q.rho


def test_cone_exp_is_equivariant_under_dilation():
    g = registry("klein(2)")
    p0, t0 = ConePoint([0.1, -0.2], 1.0), ConeTangent([0.3, 0.2], 0.1)
    base = cone_exp(g, p0, t0)
    r = 2.5
    scaled = cone_exp(g, p0.scaled(r), ConeTangent(t0.xi, r * t0.v))
    np.testing.assert_allclose(scaled.x, base.x, atol=1e-8)
    assert scaled.rho == pytest.approx(r * base.rho, abs=1e-8)


def test_cone_exp_reports_domain_exit():
    with pytest.raises(DomainExit):
        cone_exp(registry("klein(2)"), ConePoint([0.0, 0.0], 1.0), ConeTangent([3.0, 0.0], 0.0))


def test_projected_geodesics_match_base_traces():
    g = registry("klein(2)")
    x0, v0 = np.array([0.1, 0.2]), np.array([0.5, -0.3])
    cone = cone_geodesic(g, ConePoint(x0, 1.0), ConeTangent(v0, 0.0), 1.2, 1e-3)
    base = geodesic(g, x0, v0, 3.0, 1e-3)
    assert trace_deviation(cone.x, base.x) < 1e-6


def test_transport_preserves_cone_volume():
    g = registry("ppwave")
    p0 = ConePoint([0.1, 0.0, 0.3, -0.2], 1.0)
    frame = np.eye(5)
    res = cone_geodesic(g, p0, ConeTangent([0.2, 0.1, -0.3, 0.4], 0.3), 1.0, 1e-3, frame=frame)
    assert cone_volume(res.end, res.frame) == pytest.approx(cone_volume(p0, frame), abs=1e-6)


def test_euler_field_maps_to_canonical_tractor_direction():
    g = registry("klein(2)")
    p = ConePoint([0.2, 0.3], 1.7)
    np.testing.assert_allclose(tangent_to_tractor(g, p, euler_field(p)), [1.7, 0.0, 0.0])


def test_rejects_nonpositive_rho():
    with pytest.raises(ValidationError):
        ConePoint([0.0, 0.0], 0.0)
