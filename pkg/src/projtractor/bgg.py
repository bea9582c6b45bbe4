"""First BGG operators for weight-1 and weight-2 densities and weight-2 one-forms,
their prolongations to tractors, saturation by ``X``, and the parallel-tractor
certificate used to decide normality.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import exprfield as ef
from .chartgeom import ChartGeometry, alpha_from_gamma, schouten_jet
from .errors import ValidationError
from .jets import covariant_derivative, symmetrize
from .ode import Curve
from .tractor import TractorField, TractorValue, act, omega_jet

FAMILIES = ("Covector", "Sym2", "Skew2", "SymK", "PairCovectors")


@dataclass(frozen=True)
class DensitySolution:
    w: int
    f: ef.ScalarFieldExpr


@dataclass(frozen=True)
class WeightedOneForm:
    comps: tuple
    w: int = 2


def _as_expr(f, n: int) -> ef.ScalarFieldExpr:
    if isinstance(f, DensitySolution):
        return f.f
    if isinstance(f, str):
        return ef.parse(f, n)
    if isinstance(f, (int, float)):
        return ef.constant(float(f), n)
    return f


# ------------------------------------------------------------------ density jets

def density_derivatives(geom: ChartGeometry, sigma, w: float, x, order: int = 3) -> list[np.ndarray]:
    """``[sigma, nabla sigma, nabla nabla sigma, nabla^3 sigma][:order+1]`` (outer index first)."""
    n = geom.n
    f = _as_expr(sigma, n)
    x = np.asarray(x, dtype=float)
    sj = [np.take(a, 0, axis=x.ndim - 1) for a in f.bundle(order)(x)]
    if order == 0:
        return [sj[0]]
    gj = geom.gamma_jet(x, max(order - 1, 0))
    aj = alpha_from_gamma(gj, n)
    out = [sj[0]]
    cur = sj
    for r in range(order):
        cur = covariant_derivative(cur, r, w, gj, aj)
        out.append(cur[0])
    return out


def _schouten_and_derivative(geom: ChartGeometry, x):
    gj = geom.gamma_jet(x, 2)
    pj = schouten_jet(gj, geom.n)
    P, dPp = pj[0], pj[1]                      # dPp axes (b, c, a)
    G = gj[0]
    dP = (np.einsum("...bca->...abc", dPp)
          - np.einsum("...dab,...dc->...abc", G, P)
          - np.einsum("...dac,...bd->...abc", G, P))
    return P, dP


# ------------------------------------------------------------------ residuals

@dataclass
class Residual:
    value: np.ndarray       # the symmetrised residual tensor
    skew: np.ndarray | None = None    # antisymmetric remainder (diagnostic)

    @property
    def max(self) -> float:
        return float(np.max(np.abs(self.value)))


def bgg_residual_k1(geom: ChartGeometry, sigma, x) -> Residual:
    """``nabla_a nabla_b sigma + P_ab sigma`` for a weight-one density."""
    s, _, dd = density_derivatives(geom, sigma, 1, x, 2)
    P = schouten_jet(geom.gamma_jet(x, 1), geom.n)[0]
    t = dd + P * s[..., None, None]
    return Residual(symmetrize(t, 2), 0.5 * (t - np.swapaxes(t, -1, -2)))


def bgg_residual_k2(geom: ChartGeometry, sigma, x) -> Residual:
    """``nabla_(a nabla_b nabla_c) sigma + 4 P_(ab nabla_c) sigma + 2 (nabla_(a P_bc)) sigma``."""
    s, d1, _, d3 = density_derivatives(geom, sigma, 2, x, 3)
    P, dP = _schouten_and_derivative(geom, x)
    t = d3 + 4 * np.einsum("...ab,...c->...abc", P, d1) + 2 * dP * s[..., None, None, None]
    sym = symmetrize(t, 3)
    return Residual(sym, t - sym)


def bgg_residual_skew(geom: ChartGeometry, k, x) -> Residual:
    """``nabla_(a k_b)`` for a weight-two one-form given by component expressions."""
    n = geom.n
    comps = k.comps if isinstance(k, WeightedOneForm) else k
    comps = [_as_expr(c, n) for c in comps]
    x = np.asarray(x, dtype=float)
    jets = [[np.take(a, 0, axis=x.ndim - 1) for a in c.bundle(1)(x)] for c in comps]
    kj = [np.stack([j[i] for j in jets], axis=x.ndim - 1) for i in range(2)]
    gj = geom.gamma_jet(x, 0)
    aj = alpha_from_gamma(gj, n)
    t = covariant_derivative(kj, 1, 2.0, gj, aj)[0]
    return Residual(symmetrize(t, 2), 0.5 * (t - np.swapaxes(t, -1, -2)))


def skew_from_pair(s1: str, s2: str, n: int) -> WeightedOneForm:
    """``k_a = s1 d_a s2 - s2 d_a s1`` as expressions (the density terms cancel)."""
    a, b = ef.parse(s1, n), ef.parse(s2, n)
    comps = tuple(ef.ScalarFieldExpr(ef.sub(ef.mul(a.node, ef.diff(b.node, i)), ef.mul(b.node, ef.diff(a.node, i))), n)
                  for i in range(n))
    return WeightedOneForm(comps)


# ------------------------------------------------------------------ prolongation

def prolong_k1(geom: ChartGeometry, sigma) -> TractorField:
    """The cotractor ``(sigma ; nabla_b sigma)`` of a weight-one density."""
    n = geom.n
    f = _as_expr(sigma, n)

    def fn(x):
        s, d = density_derivatives(geom, f, 1, x, 1)
        return np.concatenate([s[..., None], d], axis=-1)

    return TractorField(1, 0, fn, n, "Covector", f"prolong_k1({f})")


def prolong_k2(geom: ChartGeometry, sigma) -> TractorField:
    """Symmetric cotractor ``(sigma ; nu_a ; h_ab)`` of a weight-two density.

    ``nu_a = nabla_a sigma / 2`` and ``h_ab = (nabla_(a nabla_b) sigma) / 2 + P_(ab) sigma``.
    """
    n = geom.n
    f = _as_expr(sigma, n)

    def fn(x):
        s, d1, d2 = density_derivatives(geom, f, 2, x, 2)
        P = schouten_jet(geom.gamma_jet(x, 1), n)[0]
        h = 0.5 * symmetrize(d2, 2) + symmetrize(P, 2) * s[..., None, None]
        out = np.empty(np.shape(s) + (n + 1, n + 1))
        out[..., 0, 0] = s
        out[..., 0, 1:] = 0.5 * d1
        out[..., 1:, 0] = 0.5 * d1
        out[..., 1:, 1:] = h
        return out

    return TractorField(2, 0, fn, n, "Sym2", f"prolong_k2({f})")


def sym_product(I1: TractorField, I2: TractorField) -> TractorField:
    """``S_AB = I1_A I2_B + I2_A I1_B``."""
    def fn(x):
        a, b = I1.comp(x), I2.comp(x)
        t = a[..., :, None] * b[..., None, :]
        return t + np.swapaxes(t, -1, -2)

    return TractorField(2, I1.w + I2.w, fn, I1.n, "Sym2", f"sym({I1.label},{I2.label})")


def wedge(I1: TractorField, I2: TractorField) -> TractorField:
    """``K_AB = I1_A I2_B - I2_A I1_B``."""
    def fn(x):
        a, b = I1.comp(x), I2.comp(x)
        t = a[..., :, None] * b[..., None, :]
        return t - np.swapaxes(t, -1, -2)

    return TractorField(2, I1.w + I2.w, fn, I1.n, "Skew2", f"wedge({I1.label},{I2.label})")


def pair(I1: TractorField, I2: TractorField) -> TractorField:
    """The pair ``(I1, I2)`` carried as one field with a leading axis of length two."""
    def fn(x):
        return np.stack([I1.comp(x), I2.comp(x)], axis=-2)

    return TractorField(1, I1.w, fn, I1.n, "PairCovectors", f"pair({I1.label},{I2.label})")


# ------------------------------------------------------------------ saturation

def saturate(V: TractorValue | np.ndarray, family: str, X=None) -> np.ndarray:
    """Contract with the canonical tractor ``X`` (slot 0 unless ``X`` is given).

    Covector -> ``I.X``; Sym2 -> ``H(X, X)``; SymK -> ``H(X, ..., X)``;
    Skew2 -> ``X^A K_AB`` (a weight-two one-form in the chart, slots ``(0, b)``);
    PairCovectors -> ``(I1.X, I2.X)``.
    """
    comp = V.comp if isinstance(V, TractorValue) else np.asarray(V, dtype=float)
    if family == "Covector":
        return comp[..., 0] if X is None else comp @ X
    if family == "Sym2":
        return comp[..., 0, 0] if X is None else np.einsum("...ab,a,b->...", comp, X, X)
    if family == "SymK":
        k = V.k if isinstance(V, TractorValue) else None
        if k is None:
            raise ValidationError("SymK saturation needs a TractorValue with its valence")
        out = comp
        for _ in range(k):
            out = out[..., 0] if X is None else out @ X
        return out
    if family == "Skew2":
        if X is None:
            return comp[..., 0, 1:]
        return np.einsum("a,...ab->...b", X, comp)
    if family == "PairCovectors":
        return comp[..., 0] if X is None else comp @ X
    raise ValidationError(f"unsupported tractor family {family!r}")


# ------------------------------------------------------------------ certificate

def _sample_times(curve: Curve, m: int, margin: float) -> np.ndarray:
    bps = curve.breakpoints()
    ts = []
    for t0, t1 in zip(bps[:-1], bps[1:]):
        if t1 - t0 <= 4 * margin:
            continue
        k = max(2, int(round(m * (t1 - t0) / curve.length)))
        ts.extend(np.linspace(t0 + 2 * margin, t1 - 2 * margin, k))
    return np.array(ts)


def tractor_derivative_along(geom: ChartGeometry, V: TractorField, curve: Curve, t: np.ndarray,
                             delta: float = 1e-3) -> np.ndarray:
    """``c'^a nabla_a V`` at curve parameters ``t`` from a five-point difference along the curve."""
    offs = np.array([-2, -1, 1, 2]) * delta
    pts = np.array([[curve.position(ti + o) for o in offs] for ti in t])
    comps = V.comp(pts.reshape(-1, geom.n)).reshape((len(t), 4) + V.comp(pts[:1, 0]).shape[1:])
    dV = (comps[:, 0] - 8 * comps[:, 1] + 8 * comps[:, 2] - comps[:, 3]) / (12 * delta)
    x = np.array([curve.position(ti) for ti in t])
    v = np.array([curve.velocity(ti) for ti in t])
    val = V.comp(x)
    om = omega_jet(geom, x, 0)[0]
    ov = np.einsum("pa,paBC->pBC", v, om)
    if V.family == "PairCovectors":
        ov = ov[:, None]
    res = dV + act(ov, val, V.k)
    if V.w:
        av = np.einsum("pa,pa->p", geom.alpha_jet(x, 0)[0], v)
        res = res + V.w * av.reshape((-1,) + (1,) * (res.ndim - 1)) * val
    return res


def normality_check(geom: ChartGeometry, V: TractorField, curves: Sequence[Curve], samples: int = 40,
                    delta: float = 1e-3) -> float:
    """Sup over curves and sample points of ``|c' . nabla V|`` (max norm)."""
    worst = 0.0
    for c in curves:
        t = _sample_times(c, samples, delta)
        if len(t) == 0:
            continue
        worst = max(worst, float(np.max(np.abs(tractor_derivative_along(geom, V, c, t, delta)))))
    return worst


def random_curves(geom: ChartGeometry, rng: np.random.Generator, count: int = 5, shrink: float = 0.7):
    """Random polylines with three legs inside a shrunken copy of the domain."""
    from .ode import Polyline
    return [Polyline(geom.domain.sample(rng, 4, shrink)) for _ in range(count)]


# ------------------------------------------------------------------ solution spaces

def monomials(n: int, degree: int) -> list[str]:
    out = []
    for d in range(degree + 1):
        for mi in itertools.combinations_with_replacement(range(n), d):
            out.append("*".join(f"x{i + 1}" for i in mi) if mi else "1")
    return out


def polynomial_solution_dimension(geom: ChartGeometry, degree: int, points, tol: float = 1e-8) -> tuple[int, int]:
    """Dimension of the polynomial solutions of the weight-two operator (and ansatz size).

    Each monomial's residual at ``points`` is one column; the solution space is the
    numerical null space of that matrix.
    """
    cols = []
    mons = monomials(geom.n, degree)
    for m in mons:
        r = bgg_residual_k2(geom, m, points).value
        cols.append(r.ravel())
    A = np.stack(cols, axis=1)
    s = np.linalg.svd(A, compute_uv=False)
    scale = max(1.0, s[0]) if len(s) else 1.0
    rank = int(np.sum(s > tol * scale))
    return len(mons) - rank, len(mons)
