"""Constant tensors on R^{n+1}: saturated polynomial systems, orbit invariants under
the full group (G-type) and ray labels under the stabiliser of a ray (P-type).
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

BAND = 1e-9
FAMILIES = ("Covector", "Sym2", "Skew2", "SymK", "PairCovectors")
PAIR_LABELS = ("{}", "{1}", "{2}", "{1,2}")


@dataclass(frozen=True)
class ModelTensor:
    family: str
    comp: np.ndarray

    def __post_init__(self):
        c = np.array(self.comp, dtype=float)
        object.__setattr__(self, "comp", c)
        f = self.family
        if f not in FAMILIES:
            raise ValidationError(f"unsupported tensor family {f!r}; supported: {', '.join(FAMILIES)}")
        if not np.all(np.isfinite(c)):
            raise ValidationError("tensor components must be finite")
        if f == "Covector" and c.ndim != 1:
            raise ValidationError("a Covector has one index")
        if f == "PairCovectors" and (c.ndim != 2 or c.shape[0] != 2):
            raise ValidationError("PairCovectors needs a 2 x (n+1) array")
        if f in ("Sym2", "Skew2") and (c.ndim != 2 or c.shape[0] != c.shape[1]):
            raise ValidationError(f"{f} needs a square matrix")
        if f == "Sym2" and not np.array_equal(c, c.T):
            raise ValidationError("Sym2 tensor is not symmetric")
        if f == "Skew2" and not np.array_equal(c, -c.T):
            raise ValidationError("Skew2 tensor is not antisymmetric")
        if f == "SymK":
            if not 1 <= c.ndim <= 4 or len(set(c.shape)) != 1:
                raise ValidationError("SymK needs valence 1..4 with equal index ranges")
            for p in itertools.permutations(range(c.ndim)):
                if not np.array_equal(c, np.transpose(c, p)):
                    raise ValidationError("SymK tensor is not fully symmetric")

    @property
    def dim(self) -> int:
        return self.comp.shape[-1]

    @property
    def valence(self) -> int:
        return {"Covector": 1, "PairCovectors": 1, "Sym2": 2, "Skew2": 2}.get(self.family, self.comp.ndim)

    def conjugate(self, A: np.ndarray) -> "ModelTensor":
        """Pull back by the linear map ``A`` (each index contracted with ``A``)."""
        c = self.comp
        if self.family == "PairCovectors":
            return ModelTensor(self.family, c @ A)
        for i in range(c.ndim):
            c = np.moveaxis(np.tensordot(c, A, axes=([i], [0])), -1, i)
        if self.family == "Sym2":
            c = 0.5 * (c + c.T)
        elif self.family == "Skew2":
            c = 0.5 * (c - c.T)
        elif self.family == "SymK":
            c = _symmetrize(c)
        return ModelTensor(self.family, c)


def _symmetrize(c: np.ndarray) -> np.ndarray:
    perms = list(itertools.permutations(range(c.ndim)))
    return sum(np.transpose(c, p) for p in perms) / len(perms)


def _contract_all(c: np.ndarray, X: np.ndarray, keep: int = 0) -> np.ndarray:
    for _ in range(c.ndim - keep):
        c = np.tensordot(X, c, axes=([0], [0]))
    return c


def polynomial_system(I: ModelTensor, X) -> np.ndarray:
    """Saturated values ``Q(X)``; a scalar for scalar families, a vector otherwise."""
    X = np.asarray(X, dtype=float)
    if not np.any(X):
        raise ValidationError("X must be nonzero")
    f, c = I.family, I.comp
    if f in ("Covector", "Sym2", "SymK"):
        return np.asarray(_contract_all(c, X))
    if f == "Skew2":
        return X @ c
    return c @ X  # PairCovectors


def jacobian(I: ModelTensor, X) -> np.ndarray:
    """Derivative of the saturated system in ``X`` (rows: equations)."""
    X = np.asarray(X, dtype=float)
    f, c = I.family, I.comp
    if f == "Covector":
        return c[None, :]
    if f in ("Sym2", "SymK"):
        k = c.ndim
        return (k * _contract_all(c, X, keep=1))[None, :]
    if f == "Skew2":
        return c.T
    return c.copy()


# ------------------------------------------------------------------ G-type

def signature(H: np.ndarray, tol: float = BAND) -> tuple[int, int, int]:
    """``(positive, negative, kernel)`` counts of a symmetric matrix."""
    ev = np.linalg.eigvalsh(H)
    scale = max(1.0, float(np.max(np.abs(ev)))) if ev.size else 1.0
    pos = int(np.sum(ev > tol * scale))
    neg = int(np.sum(ev < -tol * scale))
    return pos, neg, len(ev) - pos - neg


def _rank(M: np.ndarray, tol: float = BAND) -> int:
    s = np.linalg.svd(np.atleast_2d(M), compute_uv=False)
    return int(np.sum(s > tol * max(1.0, float(s[0]) if s.size else 1.0)))


def g_type(I: ModelTensor) -> dict:
    f, c = I.family, I.comp
    is_zero = not np.any(np.abs(c) > BAND)
    if f == "Covector":
        return {"family": f, "kind": "zero" if is_zero else "nonzero"}
    if f == "Sym2" or (f == "SymK" and c.ndim == 2):
        r, s, k = signature(c)
        return {"family": f, "signature": (r, s), "kernel": k}
    if f == "Skew2":
        return {"family": f, "rank": _rank(c)}
    if f == "PairCovectors":
        return {"family": f, "span": _rank(c)}
    out = {"family": f, "valence": c.ndim, "is_zero": is_zero}
    if c.ndim == 1:
        out["kind"] = "zero" if is_zero else "nonzero"
    return out


# ------------------------------------------------------------------ P-type

def sign_label(v: float, band: float = BAND) -> str:
    if v > band:
        return "+"
    if v < -band:
        return "-"
    return "0"


def label_from_values(family: str, q, band: float = BAND) -> str:
    """P-type label from already saturated values."""
    if family in ("Covector", "Sym2", "SymK"):
        return sign_label(float(q), band)
    if family == "Skew2":
        return "k=0" if np.max(np.abs(q)) <= band else "k!=0"
    z1, z2 = abs(q[0]) <= band, abs(q[1]) <= band
    return {(False, False): "{}", (True, False): "{1}", (False, True): "{2}", (True, True): "{1,2}"}[(z1, z2)]


def p_type(I: ModelTensor, X, band: float = BAND) -> str:
    return label_from_values(I.family, polynomial_system(I, X), band)


def expected_codim(I: ModelTensor, X, band: float = BAND) -> int:
    if I.family == "PairCovectors":
        q = polynomial_system(I, X)
        return int(np.sum(np.abs(q) <= band))
    if I.family == "Skew2":
        return 2
    return 1


def zero_locus_smooth(I: ModelTensor, X, band: float = BAND) -> str:
    """``"smooth"`` or ``"singular"`` at a ray on the zero locus.

    The Jacobian of the vanishing equations is restricted to the complement of the
    Euler direction ``X`` and its rank compared with the expected codimension.
    """
    X = np.asarray(X, dtype=float)
    q = np.atleast_1d(polynomial_system(I, X))
    scale = max(1.0, float(np.linalg.norm(X)) ** I.valence)
    if np.max(np.abs(q)) > band * scale and I.family != "PairCovectors":
        raise ValidationError("X is not on the zero locus")
    J = jacobian(I, X)
    if I.family == "PairCovectors":
        rows = np.abs(q) <= band * scale
        if not rows.any():
            raise ValidationError("X is not on the zero locus")
        J = J[rows]
    u = X / np.linalg.norm(X)
    Jp = J - np.outer(J @ u, u)
    return "smooth" if _rank(Jp, 1e-7) >= expected_codim(I, X, band * scale) else "singular"


# ------------------------------------------------------------------ sampling

def random_rays(rng: np.random.Generator, m: int, dim: int) -> np.ndarray:
    r = rng.normal(size=(m, dim))
    return r / np.linalg.norm(r, axis=1, keepdims=True)


def _scalar_values(I: ModelTensor, rays: np.ndarray) -> np.ndarray:
    return np.array([float(polynomial_system(I, r)) for r in rays])


def bisect_zero(I: ModelTensor, a: np.ndarray, b: np.ndarray, iters: int = 80) -> np.ndarray:
    """A zero of a scalar saturated system on the segment between rays of opposite sign."""
    fa = float(polynomial_system(I, a))
    for _ in range(iters):
        m = 0.5 * (a + b)
        fm = float(polynomial_system(I, m))
        if fm == 0.0:
            return m
        if (fm > 0) == (fa > 0):
            a, fa = m, fm
        else:
            b = m
    return 0.5 * (a + b)


@dataclass
class Census:
    counts: Counter
    zero_rays: list
    singular: list


def census(I: ModelTensor, rng: np.random.Generator, m: int = 10_000, band: float = BAND,
           max_zero: int = 200) -> Census:
    """P-type counts on random rays; for sign families, zero rays come from one bisection
    between consecutive sampled rays of opposite sign."""
    rays = random_rays(rng, m, I.dim)
    labels = [p_type(I, r, band) for r in rays]
    zeros = []
    if I.family in ("Covector", "Sym2", "SymK"):
        vals = _scalar_values(I, rays)
        for i in range(m - 1):
            if len(zeros) >= max_zero:
                break
            if vals[i] * vals[i + 1] < 0:
                z = bisect_zero(I, rays[i], rays[i + 1])
                z = z / np.linalg.norm(z)
                zeros.append(z)
                labels.append(p_type(I, z, band))
    else:
        zeros = [r for r, lab in zip(rays, labels) if lab not in ("{}", "k!=0")]
    singular = []
    for z in zeros:
        try:
            if zero_locus_smooth(I, z, band) == "singular":
                singular.append(z)
        except ValidationError:
            continue
    return Census(Counter(labels), zeros, singular)


def random_unimodular(rng: np.random.Generator, dim: int) -> np.ndarray:
    while True:
        A = rng.normal(size=(dim, dim))
        d = np.linalg.det(A)
        if abs(d) > 0.1:
            A = A / np.sign(d) / abs(d) ** (1.0 / dim)
            if np.linalg.det(A) < 0:
                A[:, 0] *= -1
            return A


def random_ray_stabilizer(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Random invertible ``A`` with ``A e_0`` a positive multiple of ``e_0``.

    Pulling a tensor back by such an ``A`` does not change its label at ``e_0``.
    """
    A = rng.normal(size=(dim, dim)) + 2 * np.eye(dim)
    A[1:, 0] = 0.0
    A[0, 0] = abs(A[0, 0]) + 0.5
    return A
