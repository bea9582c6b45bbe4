"""Projective structures on a single coordinate chart.

A structure is represented by one torsion-free connection ``Gamma^c_{ab}`` in the
projective class, given directly as expression fields or derived from a metric.
Projective changes are stored as additive covector shifts so that they compose
exactly.

Curvature convention: ``R_{ab}{}^c{}_d v^d = (nabla_a nabla_b - nabla_b nabla_a) v^c``,
``Ric_{bd} = R_{cb}{}^c{}_d`` and ``(n-1) P_{ab} = Ric_{ab} - 2/(n+1) Ric_{[ab]}``.
With these signs the unit sphere has ``P = g`` and hyperbolic space ``P = -g``.
Densities of weight ``w`` are trivialised by the chart volume and differentiated by
``nabla_a f = d_a f + w alpha_a f`` with ``alpha_a = Gamma^b_{ba}/(n+1)``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import exprfield as ef
from .errors import EvaluationError, ValidationError
from .jets import _front, leibniz, mat_leibniz
from .ode import rk4


@dataclass(frozen=True)
class Domain:
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    radius: float | None = None

    @classmethod
    def box(cls, n: int, a: float, radius: float | None = None) -> "Domain":
        return cls((-a,) * n, (a,) * n, radius)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        ok = np.all((x > np.asarray(self.lo)) & (x < np.asarray(self.hi)), axis=-1)
        if self.radius is not None:
            ok &= np.sum(x * x, axis=-1) < self.radius**2
        return ok

    def sample(self, rng: np.random.Generator, m: int, shrink: float = 0.9) -> np.ndarray:
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        out = []
        while len(out) < m:
            p = shrink * (lo + (hi - lo) * rng.random(len(lo)))
            if self.radius is None or p @ p < (shrink * self.radius) ** 2:
                out.append(p)
        return np.array(out)


class ExprCovector:
    """Covector field with components given by expressions."""

    def __init__(self, comps: Sequence[ef.ScalarFieldExpr]):
        self.comps = tuple(comps)
        self.n = len(self.comps)
        self._bundles: dict[int, ef.JetBundle] = {}
        self._lock = threading.Lock()

    def jet(self, x, order: int, strict: bool = True) -> list[np.ndarray]:
        b = self._bundles.get(order)
        if b is None:
            with self._lock:
                b = self._bundles.setdefault(order, ef.JetBundle([c.node for c in self.comps], self.n, order))
        return b(x, strict)


@dataclass
class CurvatureData:
    R: np.ndarray       # [..., a, b, c, d] = R_ab^c_d
    Ric: np.ndarray     # [..., a, b]
    P: np.ndarray       # [..., a, b]
    dP: np.ndarray      # [..., a, b, c] = nabla_a P_bc
    dP_partial: np.ndarray | None = None   # [..., b, c, a] = d_a P_bc


class ChartGeometry:
    """Torsion-free connection on a chart domain, plus projective shifts."""

    def __init__(self, n: int, domain: Domain, *, gamma=None, metric=None, shifts=(), name: str | None = None):
        if n < 2:
            raise ValidationError("dimension must be at least 2")
        if (gamma is None) == (metric is None):
            raise ValidationError("give exactly one of gamma or metric")
        self.n = n
        self.domain = domain
        self.name = name or "chart"
        self.shifts = tuple(shifts)
        self._bundles: dict[int, ef.JetBundle] = {}
        self._lock = threading.Lock()
        if gamma is not None:
            g = np.empty((n, n, n), dtype=object)
            for c in range(n):
                for a in range(n):
                    for b in range(n):
                        e1, e2 = gamma[c][a][b], gamma[c][b][a]
                        if e1.node is not e2.node:
                            raise ValidationError(f"Gamma^{c + 1}_{{{a + 1}{b + 1}}} is not symmetric in its lower indices")
                        g[c, a, b] = e1
            self.gamma = g
            self.metric = None
        else:
            m = np.empty((n, n), dtype=object)
            for i in range(n):
                for j in range(n):
                    if metric[i][j].node is not metric[j][i].node:
                        raise ValidationError(f"metric entry ({i + 1},{j + 1}) is not symmetric")
                    m[i, j] = metric[i][j]
            self.metric = m
            self.gamma = None

    @property
    def provenance(self) -> str:
        return "explicit" if self.gamma is not None else "derived-from-metric"

    def __repr__(self) -> str:
        return f"ChartGeometry({self.name!r}, n={self.n}, {self.provenance}, shifts={len(self.shifts)})"

    def with_shift(self, upsilon) -> "ChartGeometry":
        new = object.__new__(ChartGeometry)
        new.__dict__.update(self.__dict__)
        new.shifts = self.shifts + (upsilon,)
        new._bundles = self._bundles
        return new

    # ------------------------------------------------------------ jets
    def _bundle(self, order: int) -> ef.JetBundle:
        b = self._bundles.get(order)
        if b is None:
            with self._lock:
                b = self._bundles.get(order)
                if b is None:
                    src = self.gamma if self.gamma is not None else self.metric
                    b = ef.JetBundle([e.node for e in src.ravel()], self.n, order)
                    self._bundles[order] = b
        return b

    def metric_jet(self, x, order: int, strict: bool = True) -> list[np.ndarray]:
        if self.metric is None:
            raise ValidationError("geometry has no metric")
        n = self.n
        raw = self._bundle(order)(x, strict)
        return [a.reshape(a.shape[: a.ndim - 1 - k] + (n, n) + (n,) * k) for k, a in enumerate(raw)]

    def gamma_jet(self, x, order: int = 0, strict: bool = True) -> list[np.ndarray]:
        """``[Gamma, dGamma, d2Gamma][:order+1]`` with axes ``(c, a, b, derivs...)``."""
        n = self.n
        x = np.asarray(x, dtype=float)
        if self.gamma is not None:
            raw = self._bundle(order)(x, strict)
            jet = [a.reshape(a.shape[: a.ndim - 1 - k] + (n, n, n) + (n,) * k) for k, a in enumerate(raw)]
        else:
            jet = _levi_civita_jet(self.metric_jet(x, order + 1, strict), order, strict)
        if self.shifts:
            eye = np.eye(n)
            for u in self.shifts:
                uj = u.jet(x, order, strict) if isinstance(u, ExprCovector) else u.jet(x, order)
                for k in range(order + 1):
                    t = uj[k]
                    # Upsilon_a delta^c_b + Upsilon_b delta^c_a
                    add = np.einsum("...a" + "UVW"[:k] + ",cb->...cab" + "UVW"[:k], t, eye)
                    jet[k] = jet[k] + add + np.swapaxes(add, -2 - k, -1 - k)
        return jet

    def alpha_jet(self, x, order: int = 0, strict: bool = True) -> list[np.ndarray]:
        g = self.gamma_jet(x, order, strict)
        return alpha_from_gamma(g, self.n)


def alpha_from_gamma(gjet: list[np.ndarray], n: int) -> list[np.ndarray]:
    """Jet of ``alpha_a = Gamma^b_{ba} / (n+1)``."""
    out = []
    for k, t in enumerate(gjet):
        out.append(np.trace(t, axis1=t.ndim - 3 - k, axis2=t.ndim - 2 - k) / (n + 1))
    return out


def _levi_civita_jet(gj: list[np.ndarray], order: int, strict: bool) -> list[np.ndarray]:
    g = gj[0]
    try:
        with np.errstate(all="raise" if strict else "ignore"):
            ginv = np.linalg.inv(g)
    except np.linalg.LinAlgError:
        raise EvaluationError("singular metric") from None
    if strict and not np.all(np.isfinite(ginv)):
        raise EvaluationError("singular metric")
    # inverse-metric jet: d(ginv) = -ginv dg ginv, iterated by the Leibniz rule
    neg = [-t for t in gj[: order + 1]]
    inv_jet = [ginv]
    if order >= 1:
        inv_jet.append(mat_leibniz([ginv, np.zeros_like(gj[1])], [neg[0], neg[1]], 1)[1])
        inv_jet[1] = np.moveaxis(_front(inv_jet[1], 1) @ ginv[..., None, :, :], -3, -1)
    if order >= 2:
        # d2(ginv) = -ginv d2g ginv - d(ginv) dg ginv - ginv dg d(ginv)
        gi = ginv[..., None, None, :, :]
        d2g = _front(gj[2], 2)
        dg = _front(gj[1], 1)
        di = _front(inv_jet[1], 1)
        dgv = dg[..., None, :, :, :]
        diu = di[..., :, None, :, :]
        t = -(gi @ d2g @ gi) - diu @ dgv @ gi - gi @ dgv @ diu
        inv_jet.append(np.moveaxis(t, (-4, -3), (-2, -1)))
    # lowered Christoffels: L_dab = (d_a g_db + d_b g_da - d_d g_ab)/2
    low = []
    for k in range(order + 1):
        d = gj[k + 1]
        s = "UVW"[:k]
        t1 = np.einsum(f"...dba{s}->...dab{s}", d)
        t3 = np.einsum(f"...abd{s}->...dab{s}", d)
        low.append(0.5 * (t1 + d - t3))
    return mat_leibniz(inv_jet, low, order)


# ---------------------------------------------------------------- curvature

def riemann_jet(gjet: list[np.ndarray]) -> list[np.ndarray]:
    """Jet of ``R_ab^c_d`` (axes ``a,b,c,d``) from a Christoffel jet one order higher."""
    dG = gjet[1:]
    # d_a Gamma^c_bd as jet: dG[k] axes (c,b,d,a, derivs)
    first = [np.einsum("...cbda" + "UVW"[:k] + "->...abcd" + "UVW"[:k], t) for k, t in enumerate(dG)]
    quad = leibniz("cae,ebd->abcd", gjet, gjet, len(dG) - 1)
    R = []
    for k in range(len(dG)):
        f = first[k]
        q = quad[k]
        R.append(f - np.swapaxes(f, -4 - k, -3 - k) + q - np.swapaxes(q, -4 - k, -3 - k))
    return R


def curvature_from_gamma(gjet: list[np.ndarray], n: int) -> CurvatureData:
    """Curvature, Ricci, Schouten and its derivatives from ``[G, dG, d2G]``."""
    Rj = riemann_jet(gjet)
    Ricj = [np.einsum("...cbcd" + "UVW"[:k] + "->...bd" + "UVW"[:k], t) for k, t in enumerate(Rj)]
    Pj = []
    for k, t in enumerate(Ricj):
        skew = 0.5 * (t - np.swapaxes(t, -2 - k, -1 - k))
        Pj.append((t - 2.0 / (n + 1) * skew) / (n - 1))
    R, Ric, P = Rj[0], Ricj[0], Pj[0]
    if len(Pj) > 1:
        dPp = Pj[1]  # axes b,c,a
        G = gjet[0]
        dP = (np.einsum("...bca->...abc", dPp)
              - np.einsum("...dab,...dc->...abc", G, P)
              - np.einsum("...dac,...bd->...abc", G, P))
    else:
        dPp = None
        dP = np.full(P.shape[:-2] + (n, n, n), np.nan)
    return CurvatureData(R, Ric, P, dP, dPp)


def _ricci0(G: np.ndarray, dG: np.ndarray) -> np.ndarray:
    """``Ric_bd = d_c G^c_bd - d_b G^c_cd + G^c_ce G^e_bd - G^c_be G^e_cd`` at a point."""
    n = G.shape[-1]
    batch = G.shape[:-3]
    t1 = np.einsum("...cbdc->...bd", dG)
    t2 = np.einsum("...ccdb->...bd", dG)
    tr = np.einsum("...cce->...e", G)
    t3 = (tr[..., None, :] @ G.reshape(batch + (n, n * n))).reshape(batch + (n, n))
    # G^c_be G^e_cd: rows (b), contraction over (c, e)
    A = np.swapaxes(G, -3, -2).reshape(batch + (n, n * n))          # [b, (c, e)]
    B = np.swapaxes(G, -3, -2).reshape(batch + (n * n, n))          # [(c, e), d] from G^e_cd
    t4 = A @ B
    return t1 - t2 + t3 - t4


def schouten_jet(gjet: list[np.ndarray], n: int) -> list[np.ndarray]:
    if len(gjet) == 2:
        ric = _ricci0(gjet[0], gjet[1])
        skew = 0.5 * (ric - np.swapaxes(ric, -1, -2))
        return [(ric - 2.0 / (n + 1) * skew) / (n - 1)]
    Rj = riemann_jet(gjet)
    out = []
    for k, t in enumerate(Rj):
        ric = np.einsum("...cbcd" + "UVW"[:k] + "->...bd" + "UVW"[:k], t)
        skew = 0.5 * (ric - np.swapaxes(ric, -2 - k, -1 - k))
        out.append((ric - 2.0 / (n + 1) * skew) / (n - 1))
    return out


def curvature(geom: ChartGeometry, x) -> CurvatureData:
    """Curvature data of the geometry's connection at ``x`` (batched)."""
    return curvature_from_gamma(geom.gamma_jet(x, 2), geom.n)


def projective_change(geom: ChartGeometry, upsilon) -> ChartGeometry:
    """``Gamma^c_ab + Upsilon_a delta^c_b + Upsilon_b delta^c_a``.

    ``upsilon`` is a sequence of expressions (or strings) or any object with a
    ``jet(x, order)`` method returning covector jets.
    """
    if not hasattr(upsilon, "jet"):
        comps = [ef.parse(u, geom.n) if isinstance(u, str) else u for u in upsilon]
        if len(comps) != geom.n:
            raise ValidationError("Upsilon needs one component per chart dimension")
        upsilon = ExprCovector(comps)
    return geom.with_shift(upsilon)


def density_derivative(geom: ChartGeometry, w: float, f: ef.ScalarFieldExpr, x) -> np.ndarray:
    """``nabla_a f = d_a f + w alpha_a f`` for a density of weight ``w``."""
    j = ef.eval_jet(f, x, 1)
    if w == 0:
        return j.gradient
    alpha = geom.alpha_jet(x, 0)[0]
    return j.gradient + w * alpha * j.value[..., None]


@dataclass
class GeodesicResult:
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    exited: bool


def geodesic_rhs(geom: ChartGeometry):
    n = geom.n

    def f(t, y):
        x, v = y[..., :n], y[..., n:]
        G = geom.gamma_jet(x, 0, strict=False)[0]
        acc = -np.einsum("...cab,...a,...b->...c", G, v, v)
        return np.concatenate([v, acc], axis=-1)

    return f


def geodesic(geom: ChartGeometry, x0, v0, T: float, h: float = 1e-3) -> GeodesicResult:
    """Fixed-step RK4 geodesic; a domain exit returns the samples up to the exit, flagged."""
    n = geom.n
    y0 = np.concatenate([np.asarray(x0, float), np.asarray(v0, float)])
    if not geom.domain.contains(y0[:n]):
        raise ValidationError("initial point outside the chart domain")
    traj = rk4(geodesic_rhs(geom), y0, T, h, inside=lambda y: geom.domain.contains(y[..., :n]))
    y = traj.y
    if traj.exited:
        # drop the frozen tail
        keep = np.concatenate([[True], np.any(np.diff(y, axis=0) != 0, axis=1)])
        last = int(np.nonzero(keep)[0][-1]) + 1
        return GeodesicResult(traj.t[:last], y[:last, :n], y[:last, n:], True)
    return GeodesicResult(traj.t, y[:, :n], y[:, n:], False)


# ---------------------------------------------------------------- registry

def _sym_metric(entries: dict[tuple[int, int], str], n: int) -> list[list[ef.ScalarFieldExpr]]:
    zero = ef.parse("0", n)
    m = [[zero] * n for _ in range(n)]
    for (i, j), s in entries.items():
        e = ef.parse(s, n)
        m[i][j] = e
        m[j][i] = e
    return m


def _conformal_flat(n: int, factor: str) -> list[list[ef.ScalarFieldExpr]]:
    return _sym_metric({(i, i): factor for i in range(n)}, n)


def flat(n: int = 2) -> ChartGeometry:
    zero = ef.parse("0", n)
    gamma = [[[zero] * n for _ in range(n)] for _ in range(n)]
    return ChartGeometry(n, Domain.box(n, 1.5), gamma=gamma, name=f"flat({n})")


def klein(n: int = 2) -> ChartGeometry:
    r2 = "+".join(f"x{i + 1}^2" for i in range(n))
    d = f"(1-({r2}))"
    entries = {}
    for i in range(n):
        for j in range(i, n):
            s = f"x{i + 1}*x{j + 1}/{d}^2"
            entries[(i, j)] = f"1/{d}+{s}" if i == j else s
    return ChartGeometry(n, Domain.box(n, 0.95, 0.95), metric=_sym_metric(entries, n), name=f"klein({n})")


def sphere_stereo(n: int = 2) -> ChartGeometry:
    r2 = "+".join(f"x{i + 1}^2" for i in range(n))
    return ChartGeometry(n, Domain.box(n, 2.0), metric=_conformal_flat(n, f"4/(1+{r2})^2"),
                         name=f"sphere-stereo({n})")


def ppwave() -> ChartGeometry:
    """``2 du dv + (x^2 - y^2) du^2 + dx^2 + dy^2`` in coordinates ``(u, v, x, y)``."""
    m = _sym_metric({(0, 0): "x3^2-x4^2", (0, 1): "1", (2, 2): "1", (3, 3): "1"}, 4)
    return ChartGeometry(4, Domain.box(4, 1.5), metric=m, name="ppwave")


def s2xs2() -> ChartGeometry:
    a, b = "4/(1+x1^2+x2^2)^2", "4/(1+x3^2+x4^2)^2"
    m = _sym_metric({(0, 0): a, (1, 1): a, (2, 2): b, (3, 3): b}, 4)
    return ChartGeometry(4, Domain.box(4, 2.0), metric=m, name="s2xs2")


_REGISTRY = {"flat": flat, "klein": klein, "sphere-stereo": sphere_stereo,
             "ppwave": ppwave, "s2xs2": s2xs2}
REGISTRY_NAMES = tuple(_REGISTRY)


def registry(name: str, n: int | None = None) -> ChartGeometry:
    """Look up an example geometry, e.g. ``"klein(3)"`` or ``registry("flat", 2)``."""
    base, _, arg = name.strip().partition("(")
    if arg:
        if not arg.endswith(")"):
            raise ValidationError(f"malformed geometry name {name!r}")
        try:
            n = int(arg[:-1])
        except ValueError:
            raise ValidationError(f"malformed geometry name {name!r}") from None
    if base not in _REGISTRY:
        raise ValidationError(f"unknown geometry {base!r}; known: {', '.join(REGISTRY_NAMES)}")
    if base in ("ppwave", "s2xs2"):
        if n not in (None, 4):
            raise ValidationError(f"{base} is four-dimensional")
        return _REGISTRY[base]()
    return _REGISTRY[base](2 if n is None else n)
