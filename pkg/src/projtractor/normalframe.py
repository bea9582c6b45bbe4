"""Normal frames and generalised homogeneous coordinates.

Starting from a unit-volume cone frame ``e_0 = zeta, e_1..e_n`` at a lift of ``q``,
a target point ``y`` is reached by the cone geodesic with initial velocity
``x^i e_i`` whose projection ends at ``y``.  The frame ``f_A`` at ``y`` is the
parallel tractor transport of ``e_A`` along that projected curve, so parallel
tractors have constant components in it.  The Euler field at the endpoint of the
cone geodesic is ``rho_end X = f_0 + x^i f_i``, which gives the homogeneous
coordinates ``X^A = (1, x^1, ..., x^n) / rho_end``.

Internally the dual coframe (rows are cotractors) is transported, since that is
what pairs with the covariant tractor fields produced elsewhere.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .chartgeom import ChartGeometry, schouten_jet
from .errors import ShootingError, ValidationError
from .ode import rk4
from .tractor import TractorField


@dataclass
class AdaptedFrame:
    q: np.ndarray
    rho0: float
    basis: np.ndarray        # columns xi_i, already rescaled for unit volume
    tractors: np.ndarray     # columns e_A as contravariant tractors (nabla splitting)
    det_norm: float


def adapted_frame(geom: ChartGeometry, q, vectors, rho0: float = 1.0) -> AdaptedFrame:
    """Unit-volume cone frame ``(zeta, c e_1, ..., c e_n)`` at ``(q, rho0)``."""
    n = geom.n
    q = np.asarray(q, dtype=float)
    xi = np.array(vectors, dtype=float).reshape(n, n).T
    if not rho0 > 0:
        raise ValidationError("rho0 must be positive")
    d = np.linalg.det(xi)
    if abs(d) < 1e-12 or np.linalg.cond(xi) > 1e12:
        raise ValidationError("frame vectors are linearly dependent")
    target = 1.0 / (rho0 ** (n + 1) * d)
    if target < 0 and n % 2 == 0:
        raise ValidationError("frame vectors must be positively oriented in even dimension")
    c = math.copysign(abs(target) ** (1.0 / n), target)
    basis = c * xi
    alpha = geom.alpha_jet(q, 0)[0]
    E = np.zeros((n + 1, n + 1))
    E[0, 0] = rho0
    nu = rho0 * basis
    E[1:, 1:] = nu
    E[0, 1:] = -alpha @ nu
    det_norm = rho0 ** (n + 1) * np.linalg.det(basis)
    return AdaptedFrame(q, rho0, basis, E, float(det_norm))


@dataclass
class _Shot:
    coeffs: np.ndarray       # x^i
    rho_end: float
    coframe: np.ndarray | None   # rows f^A as cotractors at the target
    residual: float


@dataclass
class NormalFrameData:
    geom: ChartGeometry
    adapted: AdaptedFrame
    W: float
    h: float = 1e-3
    tol: float = 1e-10
    max_iter: int = 50
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    # -------------------------------------------------------------- shooting
    def _integrate(self, coeffs: np.ndarray, h: float, with_frame: bool):
        """Integrate the cone geodesics ``exp(x^i e_i)`` for a batch of coefficients."""
        geom, fr = self.geom, self.adapted
        n1 = geom.n + 1
        m = coeffs.shape[0]
        y0 = np.zeros((m, 2 * n1 + (n1 * n1 if with_frame else 0)))
        y0[:, 0] = fr.rho0
        y0[:, 1:n1] = fr.q
        y0[:, n1 + 1:2 * n1] = coeffs @ fr.basis.T
        if with_frame:
            y0[:, 2 * n1:] = np.linalg.inv(fr.tractors).ravel()
        rhs = _shoot_rhs(geom, with_frame)
        traj = rk4(rhs, y0, 1.0, h, inside=lambda y: geom.domain.contains(y[..., 1:n1]) & (y[..., 0] > 0),
                   record=False)
        return traj.final, np.asarray(traj.exited)

    def _jacobian(self, x: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Endpoints and forward-difference Jacobians of the projected exponential map."""
        n = self.geom.n
        eps = 1e-6
        xs = np.repeat(x[:, None, :], n + 1, axis=1)
        xs[:, 1:, :] += eps * np.eye(n)
        fin, ex = self._integrate(xs.reshape(-1, n), h, False)
        P = fin[:, 1:n + 1].reshape(-1, n + 1, n)
        J = np.transpose((P[:, 1:, :] - P[:, :1, :]) / eps, (0, 2, 1))
        return P[:, 0, :], J, ex.reshape(-1, n + 1).any(axis=1)

    def _solve(self, targets: np.ndarray, with_frame: bool = False) -> list[_Shot]:
        """Newton shooting: a cheap predictor on a 10x coarser step, then chord
        iterations on the working step until the residual is below ``tol``."""
        fr = self.adapted
        n, n1 = self.geom.n, self.geom.n + 1
        m = len(targets)
        x = np.linalg.solve(fr.basis, (targets - fr.q).T).T
        hc = 10 * self.h
        J = np.zeros((m, n, n))
        it = 0
        act = np.ones(m, dtype=bool)
        while it < self.max_iter and act.any():
            it += 1
            end, Jn, ex = self._jacobian(x[act], hc)
            J[act] = Jn
            F = end - targets[act]
            res = np.linalg.norm(F, axis=1)
            if np.any(ex | ~np.isfinite(res)):
                break
            step = np.linalg.solve(Jn, F[..., None])[..., 0]
            x[act] -= step
            idx = np.nonzero(act)[0]
            act[idx[np.linalg.norm(step, axis=1) < 1e-12]] = False
        res = np.full(m, np.inf)
        while it < self.max_iter:
            it += 1
            final, ex = self._integrate(x, self.h, False)
            F = final[:, 1:n1] - targets
            F[ex] = np.nan
            res = np.linalg.norm(F, axis=1)
            if np.any(~np.isfinite(res)) or np.all(res < self.tol):
                break
            x = x - np.linalg.solve(J, F[..., None])[..., 0]
        bad = ~(np.isfinite(res) & (res < self.tol))
        if bad.any():
            i = int(np.nonzero(bad)[0][0])
            raise ShootingError(f"shooting to {targets[i].tolist()} did not converge (residual {res[i]:.3g})")
        frames = [None] * m
        if with_frame:
            ff, _ = self._integrate(x, self.h, True)
            frames = [ff[i, 2 * n1:].reshape(n1, n1) for i in range(m)]
        return [_Shot(x[i].copy(), float(final[i, 0]), frames[i], float(res[i])) for i in range(m)]

    def shoot(self, points, with_frame: bool = False) -> list[_Shot]:
        """Converged shots to ``points``; the transported coframe is filled in on request."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        keys = [tuple(p.tolist()) for p in pts]
        missing = [i for i, k in enumerate(keys)
                   if k not in self._cache or (with_frame and self._cache[k].coframe is None)]
        if missing:
            if not np.all(self.geom.domain.contains(pts[missing])):
                raise ShootingError("target outside the chart domain")
            far = np.linalg.norm(pts[missing] - self.adapted.q, axis=1) > self.W
            if self.W > 0 and far.any():
                i = missing[int(np.argmax(far))]
                raise ShootingError(f"target {pts[i].tolist()} lies outside the validity radius {self.W:.6g}")
            shots = self._solve(pts[missing], with_frame)
            with self._lock:
                for i, s in zip(missing, shots):
                    old = self._cache.get(keys[i])
                    if old is None or old.coframe is None:
                        self._cache[keys[i]] = s
        return [self._cache[k] for k in keys]

    # -------------------------------------------------------------- public queries
    def hom_coords(self, points) -> np.ndarray:
        """``X^A`` at each point: ``(1, x^1..x^n) / rho_end``."""
        shots = self.shoot(points)
        return np.array([np.concatenate([[1.0], s.coeffs]) / s.rho_end for s in shots])

    def coframe(self, points) -> np.ndarray:
        """Rows ``f^A`` (cotractors in the splitting of the geometry) at each point."""
        return np.array([s.coframe for s in self.shoot(points, with_frame=True)])

    def frame_at(self, point) -> dict:
        """``e_A``, ``f_A`` (columns) and the dual coframes at ``point``."""
        s = self.shoot(point, with_frame=True)[0]
        fco = s.coframe
        f = np.linalg.inv(fco)
        X = np.concatenate([[1.0], s.coeffs]) / s.rho_end
        n1 = len(X)
        U = np.eye(n1)
        U[1:, 0] = X[1:] / X[0]
        e = f @ U                      # e_0 = f_0 + (X^i/X^0) f_i, e_i = f_i
        eco = np.linalg.inv(U) @ fco   # e^0 = f^0, e^i = f^i - (X^i/X^0) f^0
        return {"e": e, "f": f, "e_dual": eco, "f_dual": fco, "X": X}

    def components(self, V: TractorField, points) -> np.ndarray:
        """Components ``V(f_A, f_B, ...)`` of a covariant tractor field at each point."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        comps = V.comp(pts)
        F = np.linalg.inv(self.coframe(pts))   # columns f_A
        out = comps
        k = V.k
        for i in range(k):
            ax = out.ndim - k + i
            out = np.moveaxis(np.einsum("pB...,pBA->pA...", np.moveaxis(out, ax, 1), F), 1, ax)
        return out

    def normal_scale(self, points) -> np.ndarray:
        """Ratio of the normal scale to the chart scale, ``X^0``."""
        return self.hom_coords(points)[:, 0]


def _shoot_rhs(geom: ChartGeometry, with_frame: bool):
    """RHS for cone geodesics ``(rho, x, rho', x')`` and optionally transported coframe rows.

    With ``v = x'`` the cone equations reduce to
    ``rho'' = rho P^s(v, v)`` and ``x'' = -Gamma^s(v, v) - 2 (rho'/rho) v``, where
    ``Gamma^s(v, v) = Gamma(v, v) - 2 alpha(v) v`` and
    ``P^s(v, v) = Ric(v, v)/(n-1) + d alpha(v, v) - alpha(Gamma(v, v)) + alpha(v)^2``.
    Only these contractions are formed.
    """
    n, n1 = geom.n, geom.n + 1
    eye = np.eye(n)

    def f(t, y):
        rho, x = y[..., 0], y[..., 1:n1]
        drho, v = y[..., n1], y[..., n1 + 1:2 * n1]
        G, dG = geom.gamma_jet(x, 1, strict=False)
        vv = v[..., :, None] * v[..., None, :]
        M = np.einsum("...cbe,...b->...ce", G, v)              # Gamma^c_(v) e
        Gv = np.einsum("...ce,...e->...c", M, v)
        tr = np.einsum("...cce->...e", G)                      # (n+1) alpha
        dtr = np.einsum("...ccdb->...bd", dG)                  # d_b of the trace
        ric = (np.einsum("...cbdc,...bd->...", dG, vv) - np.einsum("...bd,...bd->...", dtr, vv)
               + np.einsum("...e,...e->...", tr, Gv) - np.einsum("...ce,...ec->...", M, M))
        av = np.einsum("...e,...e->...", tr, v) / n1
        ps = ric / (n - 1) + np.einsum("...bd,...bd->...", dtr, vv) / n1 - np.einsum("...e,...e->...", tr, Gv) / n1 + av**2
        parts = [drho[..., None], v, (rho * ps)[..., None],
                 -Gv + 2.0 * av[..., None] * v - 2.0 * (drho / rho)[..., None] * v]
        if with_frame:
            # cotractor rows: C' = -C Omega(x')^T with Omega in the splitting of nabla
            P = schouten_jet([G, dG], n)[0]
            A = np.zeros(x.shape[:-1] + (n1, n1))
            A[..., 0, 0] = av
            A[..., 0, 1:] = -v
            A[..., 1:, 0] = np.einsum("...a,...ab->...b", v, P)
            A[..., 1:, 1:] = -np.swapaxes(M, -1, -2) + av[..., None, None] * eye
            C = y[..., 2 * n1:].reshape(x.shape[:-1] + (n1, n1))
            dC = -C @ np.swapaxes(A, -1, -2)
            parts.append(dC.reshape(x.shape[:-1] + (n1 * n1,)))
        return np.concatenate(parts, axis=-1)

    return f


def _probe_radius(nf: NormalFrameData, rmax: float, nrays: int = 16, cond_max: float = 1e6) -> float:
    """Radius of the chart ball about ``q`` on which the exponential chart is trusted.

    Since ``exp(r c) = gamma_c(r)``, each ray of coefficients is one geodesic run to
    parameter ``rmax``, integrated together with finite-difference perturbations of
    ``c``.  A ray stops at its first domain exit or at a Jacobian with condition
    number above ``cond_max``; ``W`` is the smallest chart distance reached before any
    ray stops.
    """
    geom, fr = nf.geom, nf.adapted
    n, n1 = geom.n, geom.n + 1
    if n == 2:
        th = np.linspace(0, 2 * np.pi, nrays, endpoint=False)
        dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
    else:
        rng = np.random.default_rng(0)
        dirs = np.concatenate([np.eye(n), -np.eye(n), rng.normal(size=(nrays, n))])
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    cdirs = np.linalg.solve(fr.basis, dirs.T).T
    eps = 1e-6
    cs = np.repeat(cdirs[:, None, :], n + 1, axis=1)
    cs[:, 1:, :] += eps * np.eye(n)
    cs = cs.reshape(-1, n)
    m = cs.shape[0]
    y0 = np.zeros((m, 2 * n1))
    y0[:, 0] = fr.rho0
    y0[:, 1:n1] = fr.q
    y0[:, n1 + 1:] = cs @ fr.basis.T
    hh = min(10 * nf.h, rmax / 50)
    traj = rk4(_shoot_rhs(geom, False), y0, rmax, hh,
               inside=lambda y: geom.domain.contains(y[..., 1:n1]) & (y[..., 0] > 0))
    pos = traj.y[:, :, 1:n1].reshape(len(traj.t), -1, n + 1, n)
    ts = traj.t
    # first time each ray leaves: frozen state means exit
    stopped = np.zeros(pos.shape[1], dtype=bool)
    W = np.inf
    reach = np.zeros(pos.shape[1])
    for i in range(1, len(ts)):
        P = pos[i]
        moved = np.all(np.any(P != pos[i - 1], axis=-1), axis=-1)
        J = (P[:, 1:, :] - P[:, :1, :]) / eps
        with np.errstate(all="ignore"):
            conds = np.linalg.cond(J)
        bad = ~moved | ~np.isfinite(conds) | (conds > cond_max)
        newly = bad & ~stopped
        if newly.any():
            W = min(W, float(np.min(reach[newly])))
            stopped |= newly
        reach = np.where(stopped, reach, np.linalg.norm(P[:, 0, :] - fr.q, axis=1))
        if stopped.all():
            break
    if not np.isfinite(W):
        W = float(np.min(reach))
    return W


def build_normal_frame(geom: ChartGeometry, q, vectors=None, rho0: float = 1.0, h: float = 1e-3,
                       rmax: float | None = None) -> NormalFrameData:
    """Adapted frame at ``q`` plus a detected validity radius ``W`` (in chart distance)."""
    n = geom.n
    q = np.asarray(q, dtype=float)
    if not geom.domain.contains(q):
        raise ValidationError("base point outside the chart domain")
    if vectors is None:
        vectors = np.eye(n)
    fr = adapted_frame(geom, q, vectors, rho0)
    if rmax is None:
        lo, hi = np.asarray(geom.domain.lo), np.asarray(geom.domain.hi)
        rmax = float(np.max(np.maximum(hi - q, q - lo))) * math.sqrt(n)
    nf = NormalFrameData(geom, fr, 0.0, h)
    nf.W = _probe_radius(nf, rmax)
    return nf
