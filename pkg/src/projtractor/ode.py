"""Fixed-step RK4 integration and simple parametrised curves."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass
class Trajectory:
    t: np.ndarray
    y: np.ndarray
    exited: np.ndarray | bool

    @property
    def final(self) -> np.ndarray:
        return self.y[-1]


def steps_for(span: float, h: float) -> tuple[int, float]:
    """Number of steps and the adjusted step so that the last step lands on ``span``."""
    if span == 0.0:
        return 0, 0.0
    n = max(1, int(math.ceil(abs(span) / h - 1e-9)))
    return n, span / n


def rk4(f: Callable[[float, np.ndarray], np.ndarray], y0, span: float, h: float,
        inside: Callable[[np.ndarray], np.ndarray] | None = None, t0: float = 0.0,
        record: bool = True) -> Trajectory:
    """Classical RK4 with a fixed step.

    ``y0`` may carry leading batch axes; ``inside(y)`` returns a boolean per batch
    element.  A trajectory that leaves the domain is frozen at its last interior
    state and flagged in ``exited``; integration never raises mid-flight.
    """
    y = np.array(y0, dtype=float)
    nsteps, hh = steps_for(span, h)
    batch_shape = y.shape[:-1]
    alive = np.ones(batch_shape, dtype=bool)
    exited = np.zeros(batch_shape, dtype=bool)
    ts = [t0]
    ys = [y.copy()] if record else None
    t = t0
    with np.errstate(all="ignore"):
        for i in range(nsteps):
            k1 = f(t, y)
            k2 = f(t + hh / 2, y + hh / 2 * k1)
            k3 = f(t + hh / 2, y + hh / 2 * k2)
            k4 = f(t + hh, y + hh * k3)
            ynew = y + hh / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            ok = alive & np.all(np.isfinite(ynew), axis=-1)
            if inside is not None:
                ok &= inside(ynew)
            exited |= alive & ~ok
            alive = ok
            y = np.where(ok[..., None], ynew, y)
            t = t0 + (i + 1) * hh
            if record:
                ts.append(t)
                ys.append(y.copy())
            if not alive.any():
                break
    if not record:
        ts, ys = [t], [y]
    ex = exited if batch_shape else bool(exited)
    return Trajectory(np.array(ts), np.array(ys), ex)


class Curve:
    """A parametrised curve with exact velocity, defined on ``[0, length]``."""

    length: float

    def position(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def velocity(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def breakpoints(self) -> list[float]:
        return [0.0, self.length]


class Polyline(Curve):
    def __init__(self, points):
        self.points = np.asarray(points, dtype=float)
        seg = np.diff(self.points, axis=0)
        self.seglen = np.linalg.norm(seg, axis=1)
        self.cum = np.concatenate([[0.0], np.cumsum(self.seglen)])
        self.length = float(self.cum[-1])

    def _locate(self, t):
        i = int(np.searchsorted(self.cum, t, side="right") - 1)
        return min(max(i, 0), len(self.seglen) - 1)

    def position(self, t):
        i = self._locate(t)
        u = (t - self.cum[i]) / self.seglen[i]
        return self.points[i] + u * (self.points[i + 1] - self.points[i])

    def velocity(self, t):
        i = self._locate(t)
        return (self.points[i + 1] - self.points[i]) / self.seglen[i]

    def breakpoints(self):
        return list(self.cum)


class Circle(Curve):
    """Circle of radius ``r`` about ``center`` in the plane of coordinates ``(i, j)``."""

    def __init__(self, center, radius: float, plane=(0, 1)):
        self.center = np.asarray(center, dtype=float)
        self.r = float(radius)
        self.i, self.j = plane
        self.length = 2 * math.pi * self.r

    def position(self, t):
        p = self.center.copy()
        th = t / self.r
        p[self.i] += self.r * math.cos(th)
        p[self.j] += self.r * math.sin(th)
        return p

    def velocity(self, t):
        v = np.zeros_like(self.center)
        th = t / self.r
        v[self.i] = -math.sin(th)
        v[self.j] = math.cos(th)
        return v


def rectangle(corner, sides, plane=(0, 1)) -> Polyline:
    """Closed axis-aligned rectangular loop starting at ``corner``."""
    c = np.asarray(corner, dtype=float)
    a, b = sides
    i, j = plane
    p1 = c.copy(); p1[i] += a
    p2 = p1.copy(); p2[j] += b
    p3 = c.copy(); p3[j] += b
    return Polyline([c, p1, p2, p3, c])


def resample_by_arclength(points: np.ndarray, m: int, length: float | None = None) -> np.ndarray:
    """Resample a polyline at ``m`` points equally spaced in arc length (up to ``length``)."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1] if length is None else min(length, cum[-1])
    s = np.linspace(0.0, total, m)
    return np.stack([np.interp(s, cum, points[:, k]) for k in range(points.shape[1])], axis=1)


def trace_deviation(a: np.ndarray, b: np.ndarray, m: int = 400) -> float:
    """Max pointwise distance between two curve traces compared by arc length."""
    la = np.sum(np.linalg.norm(np.diff(a, axis=0), axis=1))
    lb = np.sum(np.linalg.norm(np.diff(b, axis=0), axis=1))
    length = min(la, lb)
    ra = resample_by_arclength(a, m, length)
    rb = resample_by_arclength(b, m, length)
    return float(np.max(np.linalg.norm(ra - rb, axis=1)))
