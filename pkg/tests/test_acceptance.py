"""Acceptance criteria, one test per criterion.

Every test records a single PASS/FAIL line (printed again in the terminal summary)
with the measured quantity next to its pinned tolerance.  Default numerical
settings throughout: RK4 step 1e-3, normality tolerance 1e-6, zero band 1e-9.
"""

import math

import numpy as np
import pytest

import oracles
from projtractor import bgg, cone, modelalg, strat
from projtractor.chartgeom import curvature, flat, geodesic, klein, ppwave, projective_change, registry, \
    s2xs2, sphere_stereo
from projtractor.normalframe import build_normal_frame
from projtractor.ode import Circle, rectangle, trace_deviation
from projtractor.tractor import transport_matrix

H_STEP = 1e-3
NORMALITY = 1e-6
BAND = 1e-9

HOLONOMY_TOL = 1e-6
ORACLE_TOL = 1e-6
EULER_TOL = 1e-8
CONE_RICCI_TOL = 1e-5
TRACE_TOL = 1e-6
CONSTANCY_TOL = 1e-6
SATURATION_TOL = 1e-6
RESIDUAL_TOL = 1e-8
EINSTEIN_TOL = 1e-6
INCREMENT_REL = 0.05

KLEIN_SIGMA = "x1^2+x2^2-1"
EINSTEIN_S2XS2 = "exp(0.8*log((1+x1^2+x2^2)*(1+x3^2+x4^2)/4))"


def _inside(nf, pts, frac=0.95):
    return pts[np.linalg.norm(pts - nf.adapted.q, axis=1) < frac * nf.W]


@pytest.fixture(scope="module")
def klein_frame():
    g = klein(2)
    return g, build_normal_frame(g, np.zeros(2), h=H_STEP)


@pytest.fixture(scope="module")
def flat_frame():
    g = flat(2)
    return g, build_normal_frame(g, np.zeros(2), h=H_STEP)


def _random_loops(g, rng, count):
    n = g.n
    loops = []
    for i in range(count):
        plane = tuple(sorted(rng.choice(n, 2, replace=False)))
        c = g.domain.sample(rng, 1, shrink=0.4)[0]
        if i % 2:
            loops.append(Circle(c, rng.uniform(0.1, 0.5), plane))
        else:
            loops.append(rectangle(c, rng.uniform(0.1, 0.5, 2), plane))
    return loops


def test_criterion_01_flat_baseline(criteria):
    rng = np.random.default_rng(1)
    exact = True
    for n in (2, 3):
        g = flat(n)
        cd = curvature(g, g.domain.sample(rng, 20))
        exact &= all(np.all(t == 0.0) for t in (cd.R, cd.Ric, cd.P, cd.dP))
    dev = 0.0
    for n in (2, 3):
        g = flat(n)
        for loop in _random_loops(g, rng, 10):
            M = transport_matrix(g, loop, H_STEP).matrix
            dev = max(dev, float(np.max(np.abs(M - np.eye(n + 1)))))
    ok = exact and dev < HOLONOMY_TOL
    criteria.record(1, ok, f"flat curvature exactly zero={exact}; holonomy dev {dev:.2e} < {HOLONOMY_TOL:g} (20 loops)")
    assert ok


@pytest.mark.parametrize("name", ["klein(2)", "sphere-stereo(2)", "ppwave", "s2xs2"])
def test_criterion_02_schouten_oracle(criteria, name):
    metric = {"klein(2)": oracles.klein_metric, "sphere-stereo(2)": oracles.sphere_metric,
              "ppwave": oracles.ppwave_metric, "s2xs2": oracles.s2xs2_metric}[name]
    g = registry(name)
    pts = g.domain.sample(np.random.default_rng(2), 50)
    P = curvature(g, pts).P
    err = max(float(np.max(np.abs(P[i] - oracles.schouten(metric, pts[i])))) for i in range(len(pts)))
    ok = err < ORACLE_TOL
    criteria.record(2, ok, f"{name}: |P - P_fd| = {err:.2e} < {ORACLE_TOL:g} at 50 points")
    assert ok


def test_criterion_03_euler_field_and_ricci_flat(criteria):
    rng = np.random.default_rng(3)
    worst_e, worst_r = 0.0, 0.0
    for g in (flat(2), klein(2), sphere_stereo(2), ppwave(), s2xs2()):
        for x in g.domain.sample(rng, 20):
            p = cone.ConePoint(x, rng.uniform(0.5, 2.0))
            worst_e = max(worst_e, float(np.max(np.abs(cone.euler_derivative(g, p) - np.eye(g.n + 1)))))
            worst_r = max(worst_r, float(np.max(np.abs(cone.cone_ricci(g, p)))))
    ok = worst_e < EULER_TOL and worst_r < CONE_RICCI_TOL
    criteria.record(3, ok, f"|nabla zeta - Id| = {worst_e:.2e} < {EULER_TOL:g}; "
                           f"|cone Ric| = {worst_r:.2e} < {CONE_RICCI_TOL:g}")
    assert ok


def test_criterion_04_projected_cone_geodesics(criteria):
    g = klein(2)
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(5):
        x0 = g.domain.sample(rng, 1, shrink=0.4)[0]
        xi = rng.normal(size=2)
        xi *= 0.4 / np.linalg.norm(xi)
        cg = cone.cone_geodesic(g, cone.ConePoint(x0, rng.uniform(0.5, 2)), cone.ConeTangent(xi, rng.normal()),
                                1.0, H_STEP)
        base = geodesic(g, x0, xi, 1.0, H_STEP)
        worst = max(worst, trace_deviation(cg.x, base.x))
    ok = worst < TRACE_TOL
    criteria.record(4, ok, f"klein(2) trace deviation {worst:.2e} < {TRACE_TOL:g} (5 geodesics)")
    assert ok


def test_criterion_05_constant_components(criteria, klein_frame):
    g, nf = klein_frame
    H = bgg.prolong_k2(g, KLEIN_SIGMA)
    pts = _inside(nf, g.domain.sample(np.random.default_rng(5), 120))[:100]
    c = nf.components(H, np.vstack([nf.adapted.q, pts]))
    dev_k = float(np.max(np.abs(c[1:] - c[0])))

    pp = ppwave()
    nfp = build_normal_frame(pp, np.zeros(4), h=H_STEP)
    I = bgg.prolong_k1(pp, "1")
    pts4 = _inside(nfp, pp.domain.sample(np.random.default_rng(5), 400, shrink=0.5), 0.9)[:100]
    cp = nfp.components(I, np.vstack([nfp.adapted.q, pts4]))
    dev_p = float(np.max(np.abs(cp[1:] - cp[0])))
    ok = len(pts) >= 100 and len(pts4) >= 100 and dev_k < CONSTANCY_TOL and dev_p < CONSTANCY_TOL
    criteria.record(5, ok, f"normal-frame components constant: klein {dev_k:.2e}, ppwave {dev_p:.2e} "
                           f"< {CONSTANCY_TOL:g} ({len(pts)}, {len(pts4)} samples)")
    assert ok


def test_criterion_06_saturation_and_solution_space(criteria, klein_frame, flat_frame):
    errs = {}
    for g, nf in (klein_frame, flat_frame):
        H = bgg.prolong_k2(g, KLEIN_SIGMA)
        Hq = nf.components(H, nf.adapted.q[None, :])[0]
        pts = _inside(nf, g.domain.sample(np.random.default_rng(6), 60))
        X = nf.hom_coords(pts)
        sigma = pts[:, 0] ** 2 + pts[:, 1] ** 2 - 1
        errs[g.name] = float(np.max(np.abs(np.einsum("pa,ab,pb->p", X, Hq, X) - sigma)))
    probe = flat(2).domain.sample(np.random.default_rng(6), 12)
    dim2, size2 = bgg.polynomial_solution_dimension(flat(2), 2, probe)
    dim3, size3 = bgg.polynomial_solution_dimension(flat(2), 3, probe)
    ok = all(e < SATURATION_TOL for e in errs.values()) and dim2 == 6 and dim3 == 6
    criteria.record(6, ok, "sigma = H(X,X): " + ", ".join(f"{k} {v:.2e}" for k, v in errs.items())
                    + f" < {SATURATION_TOL:g}; solution space dim {dim3} in degree-3 ansatz of {size3} "
                      f"(degree 2: {dim2} of {size2})")
    assert ok


def test_criterion_07_bgg_residuals(criteria):
    pts2 = flat(2).domain.sample(np.random.default_rng(7), 30)
    kpts = klein(2).domain.sample(np.random.default_rng(7), 30)
    ppts = ppwave().domain.sample(np.random.default_rng(7), 30)
    ups2 = ["0.3*x1-0.2*x2^2", "0.1+0.25*x1*x2"]
    ups4 = ["0.2*x3", "0.1*x1^2", "-0.3*x4", "0.2*x2*x3"]

    worst = {}
    for label, u2, u4 in (("plain", None, None), ("changed", ups2, ups4)):
        f2 = flat(2) if u2 is None else projective_change(flat(2), u2)
        k2 = klein(2) if u2 is None else projective_change(klein(2), u2)
        pw = ppwave() if u4 is None else projective_change(ppwave(), u4)
        worst[f"k1 ppwave[{label}]"] = bgg.bgg_residual_k1(pw, "1", ppts).max
        worst[f"k1 flat linear[{label}]"] = bgg.bgg_residual_k1(f2, "1+2*x1-x2", pts2).max
        worst[f"k2 klein[{label}]"] = bgg.bgg_residual_k2(k2, KLEIN_SIGMA, kpts).max
        worst[f"skew flat[{label}]"] = bgg.bgg_residual_skew(f2, bgg.skew_from_pair("x1", "x2", 2), pts2).max
    top = max(worst.values())
    ok = top < RESIDUAL_TOL
    criteria.record(7, ok, f"max BGG residual {top:.2e} < {RESIDUAL_TOL:g} over "
                           f"{len(worst)} cases (incl. random projective change)")
    assert ok, worst


def test_criterion_08_stratification(criteria, flat_frame):
    g, nf = flat_frame
    grid = strat.Grid.square(2, 1.2, 101)
    rep = strat.stratify(g, bgg.prolong_k2(g, "x1^2+x2^2-1"), "Sym2", grid, nf=nf, band=BAND, tol=NORMALITY)
    radii = np.array([np.linalg.norm(z.x) for z in rep.zero_points])
    circle_err = float(np.max(np.abs(radii - 1.0)))
    ok_sym = (len(rep.strata) == 3 and len(rep.zero_points) > 0 and all(z.smooth for z in rep.zero_points)
              and circle_err < grid.spacing and rep.agreed == rep.compared > 0)
    pair = bgg.pair(bgg.prolong_k1(g, "x1"), bgg.prolong_k1(g, "x2"))
    rp = strat.stratify(g, pair, "PairCovectors", grid, nf=nf, band=BAND, tol=NORMALITY)
    sing = rp.singular_points
    ok_pair = (len(rp.strata) == 4 and len(sing) == 1 and float(np.linalg.norm(sing[0])) < 1e-12
               and rp.agreed == rp.compared > 0)
    ok = ok_sym and ok_pair
    criteria.record(8, ok, f"Sym2: {len(rep.strata)} strata, circle err {circle_err:.1e}, smooth, routes "
                           f"{rep.agreed}/{rep.compared}; pair: {len(rp.strata)} labels, {len(sing)} singular "
                           f"point(s) at origin")
    assert ok


def test_criterion_09_einstein_scales(criteria):
    rng = np.random.default_rng(9)
    disc = flat(2).domain.sample(rng, 200)
    disc = disc[np.linalg.norm(disc, axis=1) < 0.9][:50]
    kl = strat.scale_geometry_check(flat(2), "1-x1^2-x2^2", 2, disc)
    s = s2xs2()
    se = strat.scale_geometry_check(s, EINSTEIN_S2XS2, 2, s.domain.sample(rng, 50))
    pw = strat.scale_geometry_check(ppwave(), "1", 1, ppwave().domain.sample(rng, 50))
    ok = (kl.dP_sup < EINSTEIN_TOL and kl.c_spread < EINSTEIN_TOL and kl.c_mean < 0
          and se.dP_sup < EINSTEIN_TOL and se.c_spread < EINSTEIN_TOL and se.c_mean > 0
          and pw.P_sup < EINSTEIN_TOL)
    criteria.record(9, ok, f"klein interior c={kl.c_mean:.6f} spread {kl.c_spread:.1e}, |nabla P| {kl.dP_sup:.1e}; "
                           f"s2xs2 c={se.c_mean:.6f} spread {se.c_spread:.1e}; ppwave |P| {pw.P_sup:.1e} "
                           f"(tol {EINSTEIN_TOL:g})")
    assert ok


def test_criterion_10_completeness_and_signature_change(criteria):
    g = flat(2)
    pr = strat.completeness_profile(g, "1-x1^2-x2^2", 2, [0.0, 0.0], [1.0, 0.0], h=H_STEP, band=BAND)
    ks = list(range(1, 9))
    ts = [pr.t_at(1 - 10.0**-k) for k in ks]
    inc = np.diff(ts)
    ref = np.diff([math.atanh(1 - 10.0**-k) for k in ks])
    rel = float(np.max(np.abs(inc / ref - 1)))
    jump = pr.t_at(1 - 1e-6) - pr.t_at(1 - 1e-3)
    expected = 3 * math.log(10) / 2
    monotone = bool(np.all(np.diff(pr.t) > 0))
    inside = strat.induced_signature(g, "1-x1^2-x2^2", [0.3, 0.2])
    outside = strat.induced_signature(g, "1-x1^2-x2^2", [1.1, 0.3])
    ok = (monotone and pr.reached_band and rel < INCREMENT_REL and abs(jump / expected - 1) < INCREMENT_REL
          and inside != outside)
    criteria.record(10, ok, f"t(1-10^-k) increments vs arctanh rel err {rel:.1e} < {INCREMENT_REL:g}, "
                            f"t grows to {pr.t[-1]:.2f}; signature inside {inside} vs outside {outside}")
    assert ok


def test_criterion_11_g_type_constancy(criteria, klein_frame):
    g, nf = klein_frame
    H = bgg.prolong_k2(g, KLEIN_SIGMA)
    pts = _inside(nf, g.domain.sample(np.random.default_rng(11), 60))
    comps = nf.components(H, pts)
    sigs = {modelalg.signature(0.5 * (c + c.T), 1e-6)[:2] for c in comps}
    Hq = nf.components(H, nf.adapted.q[None, :])[0]
    model = modelalg.ModelTensor("Sym2", 0.5 * (Hq + Hq.T))
    base = modelalg.g_type(model)
    rng = np.random.default_rng(11)
    same = all(modelalg.g_type(model.conjugate(modelalg.random_unimodular(rng, 3))) == base for _ in range(50))
    ok = len(sigs) == 1 and same
    criteria.record(11, ok, f"signatures at {len(pts)} samples: {sorted(sigs)}; "
                            f"invariant under 50 unimodular conjugations: {same}")
    assert ok
