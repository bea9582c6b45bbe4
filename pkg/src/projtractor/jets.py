"""Leibniz-rule products and covariant derivatives of tensor jets.

A jet of order ``m`` is a list ``[T, dT, ..., d^m T]`` of arrays where ``d^k T``
carries ``k`` trailing, fully symmetric derivative axes.  Leading batch axes are
allowed everywhere (``...`` in einsum terms).
"""

from __future__ import annotations

import itertools
import string

import numpy as np

_DERIV_LETTERS = "UVWXYZ"


def leibniz(spec: str, a: list[np.ndarray], b: list[np.ndarray], order: int | None = None) -> list[np.ndarray]:
    """Jet of ``einsum(spec, A, B)`` computed by the Leibniz rule.

    ``spec`` names only component axes, e.g. ``"cab,b->ca"``; batch axes are implicit.
    """
    ins, out = spec.split("->")
    sa, sb = ins.split(",")
    m = min(len(a), len(b)) - 1 if order is None else order
    result = []
    for k in range(m + 1):
        dl = _DERIV_LETTERS[:k]
        acc = None
        for mask in itertools.product((0, 1), repeat=k):
            la = "".join(d for d, s in zip(dl, mask) if s == 0)
            lb = "".join(d for d, s in zip(dl, mask) if s == 1)
            term = np.einsum(f"...{sa}{la},...{sb}{lb}->...{out}{dl}", a[len(la)], b[len(lb)])
            acc = term if acc is None else acc + term
        result.append(acc)
    return result


def jadd(*jets: list[np.ndarray]) -> list[np.ndarray]:
    m = min(len(j) for j in jets)
    return [sum(j[k] for j in jets) for k in range(m)]


def jscale(c: float, jet: list[np.ndarray]) -> list[np.ndarray]:
    return [c * t for t in jet]


def partial(jet: list[np.ndarray], ncomp: int) -> list[np.ndarray]:
    """Jet of the partial derivative ``d_a T`` with ``a`` inserted as the first component axis."""
    out = []
    for k in range(1, len(jet)):
        t = jet[k]
        # axis layout: batch..., comps(ncomp), deriv_1 .. deriv_k ; deriv_1 becomes the new first comp
        src = t.ndim - k
        dst = t.ndim - k - ncomp
        out.append(np.moveaxis(t, src, dst))
    return out


def covariant_derivative(tjet: list[np.ndarray], rank: int, weight: float,
                         gamma: list[np.ndarray], alpha: list[np.ndarray]) -> list[np.ndarray]:
    """Jet of ``nabla_a T_{b1..br}`` for a covariant tensor density of the given weight.

    ``gamma`` is the jet of ``Gamma^c_{ab}`` (axes ``c, a, b``) and ``alpha`` the jet
    of the density one-form ``Gamma^b_{ba}/(n+1)``; the density part contributes
    ``weight * alpha_a T``.
    """
    res = partial(tjet, rank)
    letters = string.ascii_lowercase[:rank]
    for i in range(rank):
        src = letters.replace(letters[i], "z")
        spec = f"zq{letters[i]},{src}->q{letters}"
        res = jadd(res, jscale(-1.0, leibniz(spec, gamma, tjet, len(res) - 1)))
    if weight != 0.0:
        spec = f"q,{letters}->q{letters}"
        res = jadd(res, jscale(weight, leibniz(spec, alpha, tjet, len(res) - 1)))
    return res


def symmetrize(t: np.ndarray, axes: int) -> np.ndarray:
    """Symmetrise over the last ``axes`` axes."""
    lead = t.ndim - axes
    perms = list(itertools.permutations(range(lead, t.ndim)))
    acc = np.zeros_like(t)
    for p in perms:
        acc = acc + np.transpose(t, tuple(range(lead)) + p)
    return acc / len(perms)


def _front(t: np.ndarray, k: int) -> np.ndarray:
    """Move the ``k`` trailing derivative axes in front of the component axes."""
    return np.moveaxis(t, tuple(range(t.ndim - k, t.ndim)), tuple(range(t.ndim - k - 2, t.ndim - 2))) if k else t


def mat_leibniz(A: list[np.ndarray], T: list[np.ndarray], order: int) -> list[np.ndarray]:
    """Jet of ``A^c_d T^d...`` (matrix acting on the first component axis of ``T``), order <= 2.

    Same result as :func:`leibniz` with spec ``"cd,d...->c..."`` but routed through
    ``matmul``, which is much faster for small components and large batches.
    """
    bnd = A[0].ndim - 2
    nd = A[0].shape[-1]
    rest = T[0].shape[bnd + 1:]
    batch = A[0].shape[:bnd]
    nr = int(np.prod(rest, dtype=int))

    def flat(t, k):  # (..., d, R, derivs) -> (..., derivs, d, R)
        t = t.reshape(batch + (nd, nr) + t.shape[t.ndim - k:])
        return _front(t, k)

    def back(t, k):  # (..., derivs, c, R) -> (..., c, rest, derivs)
        c = t.shape[-2]
        t = np.moveaxis(t, tuple(range(bnd, bnd + k)), tuple(range(t.ndim - k, t.ndim)))
        return t.reshape(batch + (c,) + rest + t.shape[t.ndim - k:])

    out = [back(A[0] @ flat(T[0], 0), 0)]
    if order >= 1:
        a1 = _front(A[1], 1)                    # (..., U, c, d)
        t1 = flat(T[1], 1)                      # (..., U, d, R)
        out.append(back(A[0][..., None, :, :] @ t1 + a1 @ flat(T[0], 0)[..., None, :, :], 1))
    if order >= 2:
        a2 = _front(A[2], 2)                    # (..., U, V, c, d)
        t2 = flat(T[2], 2)
        cross = a1[..., :, None, :, :] @ t1[..., None, :, :, :]   # (..., U, V, c, R)
        s = (A[0][..., None, None, :, :] @ t2 + cross + np.swapaxes(cross, bnd, bnd + 1)
             + a2 @ flat(T[0], 0)[..., None, None, :, :])
        out.append(back(s, 2))
    return out
