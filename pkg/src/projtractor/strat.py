"""Stratification of a chart by P-type, Einstein/Ricci-flat checks on open strata,
and the affine reparametrisation profile of geodesics running into the zero set.

Scale conventions: a nonvanishing density ``sigma`` of weight ``w`` selects the
connection ``Gamma + Upsilon``-change with ``Upsilon = -(1/w) sigma^{-1} nabla sigma``,
for which ``sigma`` is parallel.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import exprfield as ef
from . import modelalg as ma
from .bgg import density_derivatives, normality_check, prolong_k2, random_curves, saturate
from .chartgeom import ChartGeometry, ExprCovector, curvature, geodesic_rhs
from .cone import _AlphaShift
from .errors import CertificateError, EvaluationError, ValidationError
from .normalframe import NormalFrameData, build_normal_frame
from .tractor import TractorField

# ------------------------------------------------------------------ grids


@dataclass(frozen=True)
class Grid:
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    m: int

    @classmethod
    def square(cls, n: int, a: float, m: int) -> "Grid":
        return cls((-a,) * n, (a,) * n, m)

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(l, h, self.m) for l, h in zip(self.lo, self.hi)]

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    @property
    def spacing(self) -> float:
        return max((h - l) / (self.m - 1) for l, h in zip(self.lo, self.hi))

    def edges(self) -> np.ndarray:
        """Index pairs of grid neighbours along each axis (flattened C order)."""
        n = len(self.lo)
        idx = np.arange(self.m**n).reshape((self.m,) * n)
        out = []
        for ax in range(n):
            a = np.take(idx, np.arange(self.m - 1), axis=ax).ravel()
            b = np.take(idx, np.arange(1, self.m), axis=ax).ravel()
            out.append(np.stack([a, b], axis=1))
        return np.concatenate(out)


# ------------------------------------------------------------------ scalar fields of a tractor

def _scalar_channels(family: str, comp: np.ndarray) -> np.ndarray:
    """Saturated scalar channels whose signs define labels, shape ``(..., c)``."""
    if family in ("Covector", "Sym2"):
        return saturate(comp, family)[..., None]
    if family == "PairCovectors":
        return saturate(comp, family)
    raise ValidationError(f"stratification supports Covector, Sym2 and PairCovectors, not {family!r}")


def _gradient(family: str, comp: np.ndarray) -> np.ndarray:
    """Chart gradient of the saturated scalar at points of its zero set, from tractor slots.

    On the zero set the density terms drop out, so ``d sigma`` is read off the
    injecting slots: ``mu`` for a cotractor, ``2 nu`` for a symmetric one, and the
    product rule for the union of a pair's zero sets.
    """
    if family == "Covector":
        return comp[..., 1:]
    if family == "Sym2":
        return 2.0 * comp[..., 1:, 0]
    s1, s2 = comp[..., 0, 0], comp[..., 1, 0]
    return s2[..., None] * comp[..., 0, 1:] + s1[..., None] * comp[..., 1, 1:]


def _labels(family: str, ch: np.ndarray, band: float) -> list[str]:
    if family == "PairCovectors":
        return [ma.label_from_values(family, c, band) for c in ch]
    return [ma.sign_label(float(c[0]), band) for c in ch]


# ------------------------------------------------------------------ report


@dataclass
class ZeroPoint:
    x: np.ndarray
    label: str
    smooth: bool
    grad_norm: float
    boundary_form: np.ndarray | None = None
    boundary_signature: tuple | None = None


@dataclass
class StratReport:
    grid: Grid
    family: str
    labels: list[str]
    counts: Counter
    zero_points: list[ZeroPoint]
    normal_labels: dict = field(default_factory=dict)
    W: float = float("nan")
    compared: int = 0
    agreed: int = 0
    normality: float = float("nan")
    constant_components: np.ndarray | None = None

    @property
    def strata(self) -> list[str]:
        labs = set(self.labels) | {z.label for z in self.zero_points}
        return sorted(labs)

    @property
    def singular_points(self) -> list[np.ndarray]:
        return [z.x for z in self.zero_points if not z.smooth]

    def to_text(self) -> str:
        lines = [
            f"family: {self.family}",
            f"grid: lo={[float(v) for v in self.grid.lo]} hi={[float(v) for v in self.grid.hi]} m={self.grid.m}",
            f"normality: {self.normality:.3e}",
            f"validity_radius: {self.W:.6f}",
            f"strata: {' '.join(self.strata)}",
        ]
        for lab in sorted(self.counts):
            lines.append(f"count[{lab}]: {self.counts[lab]}")
        lines.append(f"zero_points: {len(self.zero_points)}")
        lines.append(f"singular_points: {len(self.singular_points)}")
        for p in self.singular_points:
            lines.append(f"  singular at {' '.join(f'{v:.17g}' for v in p)}")
        lines.append(f"route_agreement: {self.agreed}/{self.compared}")
        sigs = Counter(z.boundary_signature for z in self.zero_points if z.boundary_signature is not None)
        for sig, c in sorted(sigs.items()):
            lines.append(f"boundary_signature{list(sig)}: {c}")
        return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ stratify


def _bisect_edges(V: TractorField, family: str, a: np.ndarray, b: np.ndarray, channel: int,
                  iters: int = 60) -> np.ndarray:
    fa = _scalar_channels(family, V.comp(a))[:, channel]
    for _ in range(iters):
        m = 0.5 * (a + b)
        fm = _scalar_channels(family, V.comp(m))[:, channel]
        same = np.sign(fm) == np.sign(fa)
        a = np.where(same[:, None], m, a)
        fa = np.where(same, fm, fa)
        b = np.where(same[:, None], b, m)
    return 0.5 * (a + b)


def stratify(geom: ChartGeometry, V: TractorField, family: str, grid: Grid, *, band: float = ma.BAND,
             tol: float = 1e-6, q=None, nf: NormalFrameData | None = None, h: float = 1e-3,
             seed: int = 42, use_normal_frame: bool = True) -> StratReport:
    """Label grid points by P-type and locate the zero set.

    Direct labels come from the signs of the saturated field.  Independently, the
    constant normal-frame components at ``q`` are saturated with the homogeneous
    coordinates at every grid point inside the validity radius; the two routes are
    compared point by point.
    """
    rng = np.random.default_rng(seed)
    norm = normality_check(geom, V, random_curves(geom, rng, 4))
    if not norm < tol:
        raise CertificateError(f"tractor is not parallel (normality {norm:.3e} >= {tol:.1e})")
    pts = grid.points()
    inside = geom.domain.contains(pts)
    if not inside.all():
        raise ValidationError("grid leaves the chart domain")
    comps = V.comp(pts)
    ch = _scalar_channels(family, comps)
    labels = _labels(family, ch, band)
    counts = Counter(labels)

    zeros: list[ZeroPoint] = []
    cand = [pts[np.any(np.abs(ch) <= band, axis=1)]]
    E = grid.edges()
    for c in range(ch.shape[1]):
        fa, fb = ch[E[:, 0], c], ch[E[:, 1], c]
        sel = (fa > band) & (fb < -band) | (fa < -band) & (fb > band)
        if sel.any():
            cand.append(_bisect_edges(V, family, pts[E[sel, 0]], pts[E[sel, 1]], c))
    zpts = np.concatenate(cand) if cand else np.zeros((0, geom.n))
    if len(zpts):
        zc = V.comp(zpts)
        zch = _scalar_channels(family, zc)
        grads = _gradient(family, zc)
        gn = np.linalg.norm(grads, axis=-1)
        for i, x in enumerate(zpts):
            lab = _labels(family, zch[i:i + 1], band)[0]
            zp = ZeroPoint(x, lab, bool(gn[i] > 1e-6), float(gn[i]))
            if family == "Sym2" and gn[i] > 1e-6:
                zp.boundary_form, zp.boundary_signature = _boundary_form(zc[i], grads[i])
            zeros.append(zp)

    rep = StratReport(grid, family, labels, counts, zeros, normality=norm)
    if use_normal_frame:
        _normal_frame_route(geom, V, family, pts, labels, rep, band, q, nf, h)
    return rep


def _boundary_form(comp: np.ndarray, grad: np.ndarray):
    """The h-slot restricted to the kernel of ``d sigma`` and its signature."""
    h = comp[1:, 1:]
    u = grad / np.linalg.norm(grad)
    # orthonormal basis of the complement of u
    Q, _ = np.linalg.qr(np.column_stack([u, np.eye(len(u))]))
    T = Q[:, 1:len(u)]
    B = T.T @ h @ T
    r, s, _ = ma.signature(B)
    return B, (r, s)


def _normal_frame_route(geom, V, family, pts, labels, rep: StratReport, band, q, nf, h):
    if nf is None:
        q = np.zeros(geom.n) if q is None else np.asarray(q, dtype=float)
        nf = build_normal_frame(geom, q, h=h)
    rep.W = nf.W
    const = nf.components(V, nf.adapted.q[None, :])[0]
    rep.constant_components = const
    if family == "Sym2":
        const = 0.5 * (const + const.T)
    model = ma.ModelTensor(family, const)
    d = np.linalg.norm(pts - nf.adapted.q, axis=1)
    sel = np.nonzero(d < 0.98 * nf.W)[0]
    if len(sel) == 0:
        return
    X = nf.hom_coords(pts[sel])
    agreed = 0
    for i, Xi in zip(sel, X):
        lab = ma.p_type(model, Xi, band)
        rep.normal_labels[int(i)] = lab
        agreed += lab == labels[i]
    rep.compared, rep.agreed = len(sel), agreed


# ------------------------------------------------------------------ scale geometry


def scale_upsilon(geom: ChartGeometry, sigma, w: float) -> list:
    """Shifts taking ``geom`` to the connection preserving ``sigma``: ``-(1/w) d log|sigma|``
    and ``-alpha``."""
    n = geom.n
    f = ef.parse(sigma, n) if isinstance(sigma, str) else sigma
    comps = [ef.ScalarFieldExpr(ef.mul(ef.num(-1.0 / w), ef.div(ef.diff(f.node, i), f.node)), n) for i in range(n)]
    return [ExprCovector(comps), _AlphaShift(geom)]


def scale_geometry(geom: ChartGeometry, sigma, w: float) -> ChartGeometry:
    g = geom
    for u in scale_upsilon(geom, sigma, w):
        g = g.with_shift(u)
    g.name = f"{geom.name}[sigma]"
    return g


@dataclass
class ScaleCheck:
    P_hat: np.ndarray
    dP_sup: float
    P_sup: float
    c: np.ndarray | None = None
    c_mean: float = float("nan")
    c_spread: float = float("nan")
    pointwise: float = float("nan")
    metric: np.ndarray | None = None
    signature: tuple | None = None
    flipped: bool = False


def _sym2_metric(geom: ChartGeometry, sigma, x, sgn: float = 1.0):
    """``g = h^sigma / |sigma|`` from the prolonged tractor in the sigma splitting."""
    H = prolong_k2(geom, sigma).comp(x) * sgn
    s = H[..., 0, 0]
    nu = H[..., 1:, 0]
    f = ef.parse(sigma, geom.n) if isinstance(sigma, str) else sigma
    _, d1 = density_derivatives(geom, f, 2, x, 1)
    ups = -0.5 * d1 / (sgn * s)[..., None]
    h = H[..., 1:, 1:]
    hs = (h + ups[..., :, None] * nu[..., None, :] + nu[..., :, None] * ups[..., None, :]
          + s[..., None, None] * ups[..., :, None] * ups[..., None, :])
    return hs / np.abs(s)[..., None, None]


def scale_geometry_check(geom: ChartGeometry, sigma, w: float, points, band: float = ma.BAND) -> ScaleCheck:
    """Schouten tensor of the scale connection and, for weight 2, the Einstein ratio.

    For ``w = 2`` the tractor ``H = prolong_k2(sigma)`` is normalised so that its
    signature ``(r, s)`` has ``r >= s``; the metric is ``g = h^sigma / |sigma|`` and
    ``c`` is the least-squares ratio in ``P_hat = c g`` at each point.
    """
    x = np.asarray(points, dtype=float)
    f = ef.parse(sigma, geom.n) if isinstance(sigma, str) else sigma
    vals = f(x)
    if np.any(np.abs(vals) <= band):
        raise EvaluationError("the scale vanishes on the sample set")
    g = scale_geometry(geom, f, w)
    cd = curvature(g, x)
    out = ScaleCheck(cd.P, float(np.max(np.abs(cd.dP))), float(np.max(np.abs(cd.P))))
    if w == 2:
        H0 = prolong_k2(geom, f).comp(x[:1])[0]
        r, s, _ = ma.signature(H0)
        sgn = -1.0 if r < s else 1.0
        gm = _sym2_metric(geom, f, x, sgn)
        num = np.einsum("...ab,...ab->...", cd.P, gm)
        den = np.einsum("...ab,...ab->...", gm, gm)
        c = num / den
        out.c = c
        out.c_mean = float(np.mean(c))
        out.c_spread = float(np.max(c) - np.min(c))
        out.pointwise = float(np.max(np.abs(cd.P - c[..., None, None] * gm)))
        out.metric = gm
        out.signature = ma.signature(gm.reshape(-1, geom.n, geom.n)[0])[:2]
        out.flipped = sgn < 0
    return out


def induced_signature(geom: ChartGeometry, sigma, x) -> tuple[int, int]:
    """Signature of ``h^sigma / |sigma|`` at one point, with the sign of ``H`` normalised
    at that point."""
    x = np.asarray(x, dtype=float)[None, :]
    H0 = prolong_k2(geom, sigma).comp(x)[0]
    r, s, _ = ma.signature(H0)
    sgn = -1.0 if r < s else 1.0
    return ma.signature(_sym2_metric(geom, sigma, x, sgn)[0])[:2]


# ------------------------------------------------------------------ completeness


@dataclass
class Profile:
    s: np.ndarray
    t: np.ndarray
    sigma: np.ndarray
    reached_band: bool

    def t_at(self, s: float) -> float:
        if s > self.s[-1]:
            raise ValueError("requested parameter beyond the computed profile")
        return float(np.interp(s, self.s, self.t))


def completeness_profile(geom: ChartGeometry, sigma, w: float, x0, v0, h: float = 1e-3,
                         band: float = ma.BAND, switch: float = 0.5, s_max: float = 50.0,
                         hl: float = 1e-2) -> Profile:
    """Affine parameter ``t(s)`` of the scale connection along the geodesic ``(x0, v0)``.

    Along a geodesic of ``geom`` with affine parameter ``s`` the scale-affine
    parameter obeys ``t'' = 2 Upsilon(gamma') t'`` with ``Upsilon`` as in
    :func:`scale_upsilon`.  The equation is integrated for ``u = log t'``.  Once
    ``|sigma|`` has dropped below ``switch * |sigma(x0)|`` the independent variable
    becomes ``lambda = -log|sigma|``, which lets the integration follow ``t`` all the
    way to the band.
    """
    n = geom.n
    f = ef.parse(sigma, n) if isinstance(sigma, str) else sigma
    ups = scale_upsilon(geom, f, w)
    x0 = np.asarray(x0, dtype=float)
    s0 = float(f(x0))
    if abs(s0) <= band:
        raise EvaluationError("the scale vanishes at the start point")
    geo = geodesic_rhs(geom)

    def ds_rhs(y):
        # y = (x, v, u, t, s)
        x, v, u = y[:n], y[n:2 * n], y[2 * n]
        acc = geo(0.0, y[:2 * n])[n:]
        U = sum(np.asarray(sh.jet(x, 0)[0]) for sh in ups)
        return np.concatenate([v, acc, [2.0 * U @ v, math.exp(u), 1.0]])

    def sig(x):
        j = ef.eval_jet(f, x, 1)
        return float(j.value), j.gradient

    y = np.concatenate([x0, np.asarray(v0, dtype=float), [0.0, 0.0, 0.0]])
    S, T, SG = [0.0], [0.0], [s0]
    def inside(y):
        return bool(geom.domain.contains(y[:n]))

    # phase 1: step in s
    while True:
        sv, _ = sig(y[:n])
        if abs(sv) < switch * abs(s0) or y[-1] >= s_max:
            break
        k1 = ds_rhs(y)
        k2 = ds_rhs(y + h / 2 * k1)
        k3 = ds_rhs(y + h / 2 * k2)
        k4 = ds_rhs(y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not inside(y):
            return Profile(np.array(S), np.array(T), np.array(SG), False)
        S.append(y[-1]); T.append(y[2 * n + 1]); SG.append(sig(y[:n])[0])

    # phase 2: step in lambda = -log|sigma|
    def dl_rhs(y):
        sv, gr = sig(y[:n])
        dsig = gr @ y[n:2 * n]
        if dsig == 0.0:
            raise EvaluationError("geodesic is tangent to a level set of sigma")
        return ds_rhs(y) * (-sv / dsig)

    lam = -math.log(abs(sig(y[:n])[0]))
    lam_end = -math.log(band)
    while lam < lam_end and y[-1] < s_max:
        hh = min(hl, lam_end - lam)
        try:
            k1 = dl_rhs(y)
            k2 = dl_rhs(y + hh / 2 * k1)
            k3 = dl_rhs(y + hh / 2 * k2)
            k4 = dl_rhs(y + hh * k3)
        except (EvaluationError, FloatingPointError):
            break
        ynew = y + hh / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not inside(ynew) or not np.all(np.isfinite(ynew)):
            break
        y = ynew
        lam += hh
        S.append(y[-1]); T.append(y[2 * n + 1]); SG.append(sig(y[:n])[0])
    return Profile(np.array(S), np.array(T), np.array(SG), lam >= lam_end)
