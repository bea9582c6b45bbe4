"""The Thomas cone over a chart and its Ricci-flat affine connection.

Cone coordinates are ``Z = (rho, x^1, ..., x^n)`` with ``rho > 0`` the fibre
coordinate of the positive density ray bundle in the chart trivialisation, so index
``0`` is the fibre direction throughout.  The connection is assembled from the
chart-scale representative ``Gamma^s`` of the projective class (the trace-free one,
``Gamma^s = Gamma - alpha (x) delta - delta (x) alpha``) and its Schouten tensor:

    Gh^c_ab = Gs^c_ab,  Gh^0_ab = -rho Ps_ab,  Gh^c_a0 = Gh^c_0a = delta^c_a / rho,

all other symbols zero.  The Euler field ``zeta = rho d_rho`` then satisfies
``nabla zeta = Id`` and ``rho^n d rho ^ dx`` is parallel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chartgeom import ChartGeometry, _ricci0, alpha_from_gamma, schouten_jet
from .errors import DomainExit, ValidationError
from .ode import rk4


@dataclass(frozen=True)
class ConePoint:
    x: np.ndarray
    rho: float

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        if not self.rho > 0:
            raise ValidationError("cone points need rho > 0")

    def scaled(self, r: float) -> "ConePoint":
        return ConePoint(self.x, self.rho * r)


@dataclass(frozen=True)
class ConeTangent:
    xi: np.ndarray
    v: float

    def __post_init__(self):
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=float))

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([[self.v], self.xi])


def euler_field(p: ConePoint) -> ConeTangent:
    return ConeTangent(np.zeros_like(p.x), p.rho)


class _AlphaShift:
    """The covector ``-alpha``: shifting by it makes the connection trace-free."""

    def __init__(self, geom: ChartGeometry):
        self.geom = geom

    def jet(self, x, order: int, strict: bool = True):
        return [-a for a in self.geom.alpha_jet(x, order, strict)]


def chart_scale_geometry(geom: ChartGeometry) -> ChartGeometry:
    """The representative ``nabla^s`` of the class that preserves the chart volume."""
    new = geom.with_shift(_AlphaShift(geom))
    new.name = f"{geom.name}^s"
    return new


def chart_scale_data(geom: ChartGeometry, x, order: int = 0, strict: bool = True):
    """``(Gamma^s jet, P^s jet, Gamma jet, alpha jet)`` from one evaluation of ``Gamma``.

    ``order`` is the jet order of ``Gamma^s`` and ``P^s``.
    """
    n = geom.n
    gj = geom.gamma_jet(x, order + 1, strict)
    aj = alpha_from_gamma(gj, n)
    eye = np.eye(n)
    gs = []
    for k in range(order + 2):
        s = "UVW"[:k]
        add = np.einsum(f"...a{s},cb->...cab{s}", aj[k], eye)
        gs.append(gj[k] - add - np.swapaxes(add, -2 - k, -1 - k))
    ps = schouten_jet(gs, n)
    return gs[: order + 1], ps, gj, aj


def christoffel_from_data(gs: np.ndarray, ps: np.ndarray, rho) -> np.ndarray:
    """Assemble ``Gh[..., A, B, C]`` from ``Gamma^s`` and ``P^s`` at fibre value ``rho``."""
    n = gs.shape[-1]
    rho = np.asarray(rho, dtype=float)
    out = np.zeros(gs.shape[:-3] + (n + 1,) * 3)
    out[..., 1:, 1:, 1:] = gs
    out[..., 0, 1:, 1:] = -rho[..., None, None] * ps
    d = np.eye(n) / rho[..., None, None]
    out[..., 1:, 1:, 0] = d
    out[..., 1:, 0, 1:] = d
    return out


def cone_connection(geom: ChartGeometry, p: ConePoint) -> np.ndarray:
    """Christoffel symbols ``Gh[A, B, C]`` of the cone connection at ``p``."""
    gs, ps, _, _ = chart_scale_data(geom, p.x, 0)
    return christoffel_from_data(gs[0], ps[0], p.rho)


def cone_christoffel_batch(geom: ChartGeometry, x, rho, strict: bool = True) -> np.ndarray:
    gs, ps, _, _ = chart_scale_data(geom, x, 0, strict)
    return christoffel_from_data(gs[0], ps[0], rho)


def cone_christoffel_jet(geom: ChartGeometry, x, rho) -> tuple[np.ndarray, np.ndarray]:
    """``Gh`` and its first derivatives ``dGh[..., A, B, C, U]`` (``U = 0`` is ``d/d rho``)."""
    gs, ps, _, _ = chart_scale_data(geom, x, 1)
    rho = np.asarray(rho, dtype=float)
    G = christoffel_from_data(gs[0], ps[0], rho)
    n = geom.n
    dG = np.zeros(G.shape + (n + 1,))
    dG[..., 1:, 1:, 1:, 1:] = gs[1]
    dG[..., 0, 1:, 1:, 1:] = -rho[..., None, None, None] * ps[1]
    dG[..., 0, 1:, 1:, 0] = -ps[0]
    d = -np.eye(n) / (rho**2)[..., None, None]
    dG[..., 1:, 1:, 0, 0] = d
    dG[..., 1:, 0, 1:, 0] = d
    return G, dG


def cone_ricci(geom: ChartGeometry, p: ConePoint) -> np.ndarray:
    """Ricci tensor of the cone connection at ``p``; it vanishes identically."""
    G, dG = cone_christoffel_jet(geom, p.x, p.rho)
    return _ricci0(G, dG)


def euler_derivative(geom: ChartGeometry, p: ConePoint) -> np.ndarray:
    """The matrix ``nabla_B zeta^A`` (rows ``A``, columns ``B``)."""
    G = cone_connection(geom, p)
    n1 = geom.n + 1
    zeta = np.zeros(n1)
    zeta[0] = p.rho
    dz = np.zeros((n1, n1))
    dz[0, 0] = 1.0
    return dz + np.einsum("ABC,C->AB", G, zeta)


def cone_volume(p: ConePoint, frame: np.ndarray) -> float:
    """Parallel volume ``rho^n d rho ^ dx^1 ^ ... ^ dx^n`` of a frame (columns are cone vectors)."""
    n = len(p.x)
    return float(p.rho**n * np.linalg.det(frame))


# ------------------------------------------------------------------ geodesics

def cone_rhs(geom: ChartGeometry, frame_cols: int = 0):
    """RHS for ``y = (Z, Z', F)``; ``F`` holds ``frame_cols`` parallel cone vectors."""
    n1 = geom.n + 1

    def f(t, y):
        Z, dZ = y[..., :n1], y[..., n1:2 * n1]
        G = cone_christoffel_batch(geom, Z[..., 1:], Z[..., 0], strict=False)
        acc = -np.einsum("...ABC,...B,...C->...A", G, dZ, dZ)
        parts = [dZ, acc]
        if frame_cols:
            F = y[..., 2 * n1:].reshape(y.shape[:-1] + (n1, frame_cols))
            dF = -np.einsum("...ABC,...B,...Ck->...Ak", G, dZ, F)
            parts.append(dF.reshape(y.shape[:-1] + (n1 * frame_cols,)))
        return np.concatenate(parts, axis=-1)

    return f


def _inside(geom: ChartGeometry):
    n1 = geom.n + 1

    def ok(y):
        return geom.domain.contains(y[..., 1:n1]) & (y[..., 0] > 0)

    return ok


@dataclass
class ConeGeodesic:
    t: np.ndarray
    rho: np.ndarray
    x: np.ndarray
    drho: np.ndarray
    dx: np.ndarray
    exited: bool
    frame: np.ndarray | None = None

    @property
    def end(self) -> ConePoint:
        return ConePoint(self.x[-1], float(self.rho[-1]))


def cone_geodesic(geom: ChartGeometry, p0: ConePoint, t0: ConeTangent, T: float, h: float = 1e-3,
                  frame: np.ndarray | None = None) -> ConeGeodesic:
    """RK4 geodesic of the cone connection; optionally transports a frame alongside."""
    n1 = geom.n + 1
    if not geom.domain.contains(p0.x):
        raise ValidationError("initial point outside the chart domain")
    cols = 0 if frame is None else frame.shape[1]
    y0 = np.concatenate([[p0.rho], p0.x, t0.vector] + ([frame.ravel()] if cols else []))
    traj = rk4(cone_rhs(geom, cols), y0, T, h, inside=_inside(geom))
    y = traj.y
    if traj.exited:
        moving = np.concatenate([[True], np.any(np.diff(y, axis=0) != 0, axis=1)])
        last = int(np.nonzero(moving)[0][-1]) + 1
        y, ts = y[:last], traj.t[:last]
    else:
        ts = traj.t
    F = y[-1, 2 * n1:].reshape(n1, cols) if cols else None
    return ConeGeodesic(ts, y[:, 0], y[:, 1:n1], y[:, n1], y[:, n1 + 1:2 * n1], bool(traj.exited), F)


def cone_exp(geom: ChartGeometry, p0: ConePoint, t0: ConeTangent, h: float = 1e-3) -> ConePoint:
    """Endpoint at parameter 1 of the cone geodesic with initial data ``(p0, t0)``."""
    g = cone_geodesic(geom, p0, t0, 1.0, h)
    if g.exited:
        raise DomainExit("cone geodesic leaves the chart before parameter 1")
    return g.end


def tangent_to_tractor(geom: ChartGeometry, p: ConePoint, t: ConeTangent) -> np.ndarray:
    """Contravariant tractor ``(r; nu^a)`` of a cone tangent, in the splitting of ``geom``.

    In the chart-scale splitting ``r = v`` and ``nu = rho xi``; passing to the
    splitting of ``nabla`` shifts ``r`` by ``-alpha(nu)``.
    """
    alpha = geom.alpha_jet(p.x, 0)[0]
    nu = p.rho * t.xi
    return np.concatenate([[t.v - alpha @ nu], nu])
