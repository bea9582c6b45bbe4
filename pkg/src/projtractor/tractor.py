"""Covariant tractors, the tractor connection, transport and the Thomas operator.

Components are stored in the splitting determined by the geometry's own connection
``nabla`` (with densities trivialised by the chart).  Slot ``0`` is the scalar slot,
obtained by contracting with the canonical tractor ``X``; slots ``1..n`` carry the
weighted covector part.  For a rank-one cotractor ``V = (sigma; mu_b)``

    nabla_a V = (nabla_a sigma - mu_a ; nabla_a mu_b + P_ab sigma),

which in chart components reads ``d_a V + Omega_a V``.  Higher valence acts slotwise
and a tractor of weight ``w`` picks up an extra ``w alpha_a`` term.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import exprfield as ef
from .chartgeom import ChartGeometry, alpha_from_gamma, density_derivative, schouten_jet
from .errors import DomainExit, EvaluationError
from .ode import Curve, steps_for


@dataclass
class TractorValue:
    """Components of a covariant tractor of valence ``k`` and weight ``w`` at a point."""

    k: int
    w: float
    comp: np.ndarray

    def __post_init__(self):
        self.comp = np.asarray(self.comp, dtype=float)
        if self.k and self.comp.shape[-self.k:] != (self.comp.shape[-1],) * self.k:
            raise ValueError("component array must be square in its tractor slots")

    @property
    def slot0(self) -> np.ndarray:
        """Full contraction with ``X``: the all-zero component."""
        return self.comp[(Ellipsis,) + (0,) * self.k]

    def __add__(self, other: "TractorValue") -> "TractorValue":
        return TractorValue(self.k, self.w, self.comp + other.comp)

    def __rmul__(self, c: float) -> "TractorValue":
        return TractorValue(self.k, self.w, c * self.comp)


class TractorField:
    """Tractor field given by a batched component function ``x -> comp``."""

    def __init__(self, k: int, w: float, fn: Callable[[np.ndarray], np.ndarray], n: int,
                 family: str | None = None, label: str = ""):
        self.k, self.w, self.n = k, w, n
        self._fn = fn
        self.family = family
        self.label = label

    def comp(self, x) -> np.ndarray:
        return self._fn(np.asarray(x, dtype=float))

    def __call__(self, x) -> TractorValue:
        return TractorValue(self.k, self.w, self.comp(x))

    @classmethod
    def constant(cls, comp, w: float = 0.0, family: str | None = None) -> "TractorField":
        comp = np.asarray(comp, dtype=float)
        n = comp.shape[0] - 1

        def fn(x):
            return np.broadcast_to(comp, x.shape[:-1] + comp.shape).copy()

        return cls(comp.ndim, w, fn, n, family, "constant")


# ------------------------------------------------------------------ connection

def omega_jet(geom: ChartGeometry, x, order: int = 0, strict: bool = True) -> list[np.ndarray]:
    """Jet of the connection matrices ``Omega[a, B, C]``."""
    n = geom.n
    x = np.asarray(x, dtype=float)
    gj = geom.gamma_jet(x, order + 1, strict)
    aj = alpha_from_gamma(gj, n)
    pj = schouten_jet(gj, n)
    eye = np.eye(n)
    out = []
    for k in range(order + 1):
        batch = x.shape[:-1]
        om = np.zeros(batch + (n, n + 1, n + 1) + (n,) * k)
        dsl = (slice(None),) * k
        a = aj[k]
        om[(Ellipsis, slice(None), 0, 0) + dsl] = a
        g = np.moveaxis(gj[k], -3 - k, -1 - k)  # (a, b, c, derivs)
        blk = -g + np.einsum("...a" + "UVW"[:k] + ",bc->...abc" + "UVW"[:k], a, eye)
        om[(Ellipsis, slice(None), slice(1, None), slice(1, None)) + dsl] = blk
        om[(Ellipsis, slice(None), slice(1, None), 0) + dsl] = pj[k]
        if k == 0:
            om[..., :, 0, 1:] = -eye
        out.append(om)
    return out


def tractor_connection_matrix(geom: ChartGeometry, x) -> np.ndarray:
    """``Omega[a, B, C]`` such that ``nabla_a V = d_a V + Omega_a V`` on rank-one cotractors."""
    return omega_jet(geom, x, 0)[0]


def act(m: np.ndarray, comp: np.ndarray, k: int) -> np.ndarray:
    """Apply the matrix ``m`` (derivation action) to every slot of a valence-``k`` tractor."""
    if k == 0:
        return np.zeros_like(comp)
    letters = string.ascii_lowercase[:k]
    out = None
    for i in range(k):
        src = letters[:i] + "z" + letters[i + 1:]
        term = np.einsum(f"...{letters[i]}z,...{src}->...{letters}", m, comp)
        out = term if out is None else out + term
    return out


def covariant_derivative_along(geom: ChartGeometry, x, v, comp: np.ndarray, dcomp: np.ndarray,
                               k: int, w: float, strict: bool = True) -> np.ndarray:
    """``v^a nabla_a V`` from the values and directional derivative of the components."""
    om = omega_jet(geom, x, 0, strict)[0]
    ov = np.einsum("...a,...aBC->...BC", v, om)
    res = dcomp + act(ov, comp, k)
    if w:
        alpha = geom.alpha_jet(x, 0, strict)[0]
        res = res + w * np.einsum("...a,...a->...", alpha, v)[(Ellipsis,) + (None,) * k] * comp
    return res


def tractor_curvature(geom: ChartGeometry, x) -> np.ndarray:
    """``kappa[a, b, B, C] = d_a Omega_b - d_b Omega_a + [Omega_a, Omega_b]``."""
    om, dom = omega_jet(geom, x, 1)
    d = np.einsum("...bBCa->...abBC", dom)
    comm = np.einsum("...aBD,...bDC->...abBC", om, om)
    return d - np.swapaxes(d, -4, -3) + comm - np.swapaxes(comm, -4, -3)


# ------------------------------------------------------------------ transport

@dataclass
class TransportResult:
    matrix: np.ndarray      # fundamental matrix on rank-one cotractors
    log_scale: float        # transport of weight-one densities is exp(log_scale)
    exited: bool


def _stage_times(curve: Curve, h: float) -> tuple[np.ndarray, np.ndarray]:
    """RK4 stage times ``(nsteps, 3)`` (start, middle, end) and step sizes per step."""
    rows, steps = [], []
    for t0, t1 in zip(curve.breakpoints()[:-1], curve.breakpoints()[1:]):
        nsteps, hh = steps_for(t1 - t0, h)
        if nsteps == 0:
            continue
        # evaluate just inside each piece so that one-sided velocities are used at corners
        eps = 1e-12 * max(1.0, abs(t1 - t0))
        ts = t0 + hh * np.arange(nsteps)
        st = np.stack([ts, ts + hh / 2, ts + hh], axis=1)
        st[0, 0] += eps
        st[-1, 2] -= eps
        rows.append(st)
        steps.append(np.full(nsteps, hh))
    return np.concatenate(rows), np.concatenate(steps)


def transport_matrix(geom: ChartGeometry, curve: Curve, h: float = 1e-3) -> TransportResult:
    """Fundamental solution of ``dM/dt = -Omega(c') M`` along ``curve`` by RK4.

    The connection is evaluated exactly at the RK4 stage points; all stage points
    are known in advance, so they are evaluated in one batch.  Smooth pieces between
    breakpoints are integrated separately so no step straddles a corner.
    """
    n1 = geom.n + 1
    st, hs = _stage_times(curve, h)
    flat_t = st.ravel()
    xs = np.array([curve.position(t) for t in flat_t])
    vs = np.array([curve.velocity(t) for t in flat_t])
    if not np.all(geom.domain.contains(xs)):
        raise DomainExit("curve leaves the chart domain")
    om = omega_jet(geom, xs, 0)[0]
    A = -np.einsum("...a,...aBC->...BC", vs, om).reshape(len(hs), 3, n1, n1)
    al = -np.einsum("...a,...a->...", geom.alpha_jet(xs, 0)[0], vs).reshape(len(hs), 3)
    M = np.eye(n1)
    for i, hh in enumerate(hs):
        a0, am, a1 = A[i]
        k1 = a0 @ M
        k2 = am @ (M + hh / 2 * k1)
        k3 = am @ (M + hh / 2 * k2)
        k4 = a1 @ (M + hh * k3)
        M = M + hh / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    ell = float(np.sum(hs / 6 * (al[:, 0] + 4 * al[:, 1] + al[:, 2])))
    if not np.all(np.isfinite(M)):
        raise EvaluationError("non-finite tractor transport")
    return TransportResult(M, ell, False)


def apply_transport(res: TransportResult, V: TractorValue) -> TractorValue:
    comp = V.comp
    for i in range(V.k):
        comp = np.moveaxis(np.tensordot(res.matrix, comp, axes=(1, comp.ndim - V.k + i)), 0, comp.ndim - V.k + i)
    return TractorValue(V.k, V.w, np.exp(V.w * res.log_scale) * comp)


def tractor_transport(geom: ChartGeometry, curve: Curve, V0: TractorValue, h: float = 1e-3) -> TractorValue:
    """Parallel transport of ``V0`` from the start to the end of ``curve``."""
    return apply_transport(transport_matrix(geom, curve, h), V0)


def density_transport(geom: ChartGeometry, curve: Curve, w: float, f0: float, h: float = 1e-3) -> float:
    return float(f0 * np.exp(w * transport_matrix(geom, curve, h).log_scale))


# ------------------------------------------------------------------ Thomas operator

def thomas_D(geom: ChartGeometry, w: float, f: ef.ScalarFieldExpr, x) -> TractorValue:
    """``D f = (w f ; nabla_a f)`` for a density ``f`` of weight ``w``."""
    x = np.asarray(x, dtype=float)
    val = f(x)
    grad = density_derivative(geom, w, f, x)
    comp = np.concatenate([np.asarray(w * val)[..., None], grad], axis=-1)
    return TractorValue(1, w - 1, comp)


def scale_tractor(geom: ChartGeometry, w: float, f: ef.ScalarFieldExpr, x) -> TractorValue:
    """``Y = (1/w) f^{-1} D f``, the cotractor of the scale ``f``; its slot 0 equals 1."""
    x = np.asarray(x, dtype=float)
    val = np.asarray(f(x))
    if np.any(val == 0.0):
        raise EvaluationError("scale vanishes at the requested point")
    D = thomas_D(geom, w, f, x)
    return TractorValue(1, 0, D.comp / (w * val[..., None]))
