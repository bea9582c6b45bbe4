import numpy as np
import pytest

from projtractor import bgg
from projtractor.chartgeom import projective_change, registry
from projtractor.errors import ValidationError
from projtractor.ode import Polyline
from projtractor.tractor import TractorField, TractorValue


def _pts(geom, m=20, seed=0, shrink=0.6):
    return geom.domain.sample(np.random.default_rng(seed), m, shrink)


FLAT = registry("flat(2)")
KLEIN = registry("klein(2)")
PPWAVE = registry("ppwave")


@pytest.mark.parametrize("sigma", ["1", "x1", "2 - x1 + 3*x2"])
def test_affine_functions_solve_the_flat_k1_equation(sigma):
    assert bgg.bgg_residual_k1(FLAT, sigma, _pts(FLAT)).max < 1e-12


def test_ppwave_constant_solves_k1():
    assert bgg.bgg_residual_k1(PPWAVE, "1", _pts(PPWAVE)).max < 1e-8


def test_k1_rejects_a_quadratic():
    assert bgg.bgg_residual_k1(FLAT, "x1*x2", _pts(FLAT)).max > 0.5


@pytest.mark.parametrize("sigma", ["x1^2", "x1^2 + x2^2 - 1", "x1*x2 - 3*x1 + 2"])
def test_quadratics_solve_the_flat_k2_equation(sigma):
    assert bgg.bgg_residual_k2(FLAT, sigma, _pts(FLAT)).max < 1e-12


def test_klein_einstein_scale_solves_k2():
    assert bgg.bgg_residual_k2(KLEIN, "x1^2 + x2^2 - 1", _pts(KLEIN, 50)).max < 1e-8


def test_k2_rejects_a_cubic():
    assert bgg.bgg_residual_k2(FLAT, "x1^3", _pts(FLAT)).max > 1.0


@pytest.mark.parametrize("upsilon", [["x2", "x1^2"], ["sin(x1)", "exp(x2)/3"]])
def test_residuals_are_projectively_invariant(upsilon):
    pts = _pts(FLAT, 20, 3, 0.4)
    g = projective_change(FLAT, upsilon)
    assert bgg.bgg_residual_k1(g, "1 + x1 - x2", pts).max < 1e-8
    assert bgg.bgg_residual_k2(g, "x1^2 + x2^2 - 1", pts).max < 1e-8
    k = projective_change(KLEIN, upsilon)
    assert bgg.bgg_residual_k2(k, "x1^2 + x2^2 - 1", pts).max < 1e-8


def test_skew_examples():
    pts = _pts(FLAT)
    k = bgg.skew_from_pair("x1", "x2", 2)
    assert bgg.bgg_residual_skew(FLAT, k, pts).max < 1e-14
    assert bgg.bgg_residual_skew(FLAT, ["0", "0"], pts).max == 0.0
    assert bgg.bgg_residual_skew(FLAT, ["x2", "x1"], pts).max > 0.5


def test_skew_from_klein_solutions():
    # x1 and x2 solve the weight-one equation on Klein too, so their pairing solves the skew one
    pts = _pts(KLEIN, 10, 5)
    assert bgg.bgg_residual_k1(KLEIN, "x1", pts).max < 1e-12
    k = bgg.skew_from_pair("x1", "x2", 2)
    assert bgg.bgg_residual_skew(KLEIN, k, pts).max < 1e-12


def test_prolong_k1_examples():
    x = np.array([0.3, -0.7])
    np.testing.assert_allclose(bgg.prolong_k1(FLAT, "1")(x).comp, [1.0, 0.0, 0.0])
    np.testing.assert_allclose(bgg.prolong_k1(FLAT, "x1")(x).comp, [0.3, 1.0, 0.0])
    np.testing.assert_allclose(bgg.prolong_k1(PPWAVE, "1")(np.array([0.1, 0.2, 0.3, 0.4])).comp,
                               [1.0, 0, 0, 0, 0], atol=1e-15)


def test_prolong_k2_examples():
    x = np.array([0.3, -0.7])
    H = bgg.prolong_k2(FLAT, "x1^2 + x2^2 - 1")(x).comp
    np.testing.assert_allclose(H[1:, 1:], np.eye(2), atol=1e-14)
    np.testing.assert_allclose(H[0, 1:], x, atol=1e-14)
    assert H[0, 0] == pytest.approx(x @ x - 1)
    # at the Klein origin the weight term cancels the Hessian; h = P sigma = delta
    K = bgg.prolong_k2(KLEIN, "x1^2 + x2^2 - 1")(np.zeros(2)).comp
    np.testing.assert_allclose(K, np.diag([-1.0, 1.0, 1.0]), atol=1e-14)
    np.testing.assert_array_equal(bgg.prolong_k2(KLEIN, "0")(x).comp, 0.0)


def test_saturation_round_trips():
    pts = _pts(KLEIN, 5, 6)
    sigma = "x1^2 + x2^2 - 1"
    H = bgg.prolong_k2(KLEIN, sigma)
    np.testing.assert_allclose(bgg.saturate(H(pts), "Sym2"), (pts**2).sum(1) - 1, atol=1e-14)
    np.testing.assert_allclose(bgg.saturate(bgg.prolong_k1(FLAT, "x2")(pts), "Covector"), pts[:, 1])
    K = np.zeros((3, 3))
    K[1:, 0] = [2.0, -1.0]
    K[0, 1:] = [-2.0, 1.0]
    np.testing.assert_allclose(bgg.saturate(TractorValue(2, 0.0, K), "Skew2"), [-2.0, 1.0])
    with pytest.raises(ValidationError):
        bgg.saturate(K, "Spinor")


def test_constant_model_metric_saturates_to_quadric():
    model = np.diag([-1.0, 1.0, 1.0])
    pts = _pts(FLAT, 10, 7)
    X = np.column_stack([np.ones(len(pts)), pts])
    np.testing.assert_allclose(np.einsum("pa,ab,pb->p", X, model, X), bgg.saturate(
        bgg.prolong_k2(FLAT, "x1^2 + x2^2 - 1")(pts), "Sym2"), atol=1e-14)


def test_skew_saturation_relation():
    rng = np.random.default_rng(8)
    I1 = TractorField.constant(rng.normal(size=4))
    I2 = TractorField.constant(rng.normal(size=4))
    K = bgg.wedge(I1, I2)(np.zeros(3))
    for X in rng.normal(size=(5, 4)):
        assert abs(X @ bgg.saturate(K, "Skew2", X)) < 1e-12


def test_normality_certificates():
    rng = np.random.default_rng(9)
    flat_curves = bgg.random_curves(FLAT, rng, 3)
    assert bgg.normality_check(FLAT, bgg.prolong_k1(FLAT, "x1"), flat_curves) < 1e-8
    klein_curves = bgg.random_curves(KLEIN, rng, 3)
    assert bgg.normality_check(KLEIN, bgg.prolong_k2(KLEIN, "x1^2 + x2^2 - 1"), klein_curves) < 1e-6
    bad = bgg.prolong_k1(FLAT, "x1*x2/(1+x1^2+x2^2)")
    assert bgg.normality_check(FLAT, bad, flat_curves) > 1e-2
    pp_curves = bgg.random_curves(PPWAVE, rng, 2)
    assert bgg.normality_check(PPWAVE, bgg.prolong_k1(PPWAVE, "1"), pp_curves) < 1e-8


def test_pair_and_products_are_parallel_on_flat():
    curves = [Polyline([[-0.5, -0.3], [0.4, 0.1], [0.0, 0.6]])]
    I1, I2 = bgg.prolong_k1(FLAT, "x1"), bgg.prolong_k1(FLAT, "1 - x2")
    for V in (bgg.pair(I1, I2), bgg.sym_product(I1, I2), bgg.wedge(I1, I2)):
        assert bgg.normality_check(FLAT, V, curves) < 1e-8


def test_polynomial_solution_space_on_flat():
    pts = _pts(FLAT, 12, 10)
    assert bgg.polynomial_solution_dimension(FLAT, 2, pts) == (6, 6)
    assert bgg.polynomial_solution_dimension(FLAT, 3, pts) == (6, 10)
    f3 = registry("flat(3)")
    assert bgg.polynomial_solution_dimension(f3, 3, _pts(f3, 12, 11))[0] == 10
