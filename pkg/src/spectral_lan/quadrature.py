"""Graded Gauss-Legendre quadrature on [0, pi] for integrands singular at 0.

Panels are the dyadic intervals ``[pi 2^-(j+1), pi 2^-j]``; panels wider than
``2 pi / k_max`` (one period of the top frequency) are split uniformly so that ``cos(k x)`` is resolved.  The
leftover ``[0, eps]`` is filled in by a local power-law fit.  The Gauss order
doubles until two successive orders agree to the requested tolerance.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from .errors import QuadratureError


@dataclass(frozen=True)
class QuadSpec:
    """Settings of the graded quadrature.

    depth: minimum number of dyadic panels toward 0.
    order: starting Gauss-Legendre order per panel.
    tol: relative agreement required between successive orders.
    max_order: order budget; exceeding it raises ``QuadratureError``.
    max_depth: hard cap on the dyadic depth.
    atol: absolute floor of the agreement test, for integrands that vanish
        identically up to roundoff.
    """

    depth: int = 40
    order: int = 8
    tol: float = 1e-9
    max_order: int = 64
    max_depth: int = 1000
    atol: float = 1e-14

    def to_dict(self):
        return asdict(self)


DEFAULT_QUAD = QuadSpec()


@lru_cache(maxsize=None)
def _gauss(order):
    return np.polynomial.legendre.leggauss(order)


def _panels(kmax, depth):
    edges = np.pi * 2.0 ** -np.arange(depth + 1, dtype=float)
    lo, hi = edges[1:], edges[:-1]
    if kmax > 0:
        width = 2.0 * np.pi / kmax
        pieces = np.maximum(1, np.ceil((hi - lo) / width).astype(int))
        if np.any(pieces > 1):
            los, his = [], []
            for a, b, m in zip(lo, hi, pieces):
                cuts = np.linspace(a, b, m + 1)
                los.append(cuts[:-1])
                his.append(cuts[1:])
            lo, hi = np.concatenate(los), np.concatenate(his)
    return lo, hi


def _nodes(lo, hi, order):
    t, w = _gauss(order)
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    x = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    wx = (half[:, None] * w[None, :]).ravel()
    return x, wx


def _as_columns(values, size):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    elif values.shape[0] != size:
        values = values.T
    return values


def _cos_moments(x, weighted, kmax, chunk=64):
    out = np.empty((kmax + 1, weighted.shape[1]))
    for start in range(0, kmax + 1, chunk):
        ks = np.arange(start, min(kmax + 1, start + chunk), dtype=float)
        out[start:start + ks.size] = np.cos(np.outer(ks, x)) @ weighted
    return out


def _tail(func, eps):
    # int_0^eps of f ~ |x|^(-alpha) L(x), from the ratio f(eps/2) / f(eps)
    vals = _as_columns(func(np.array([eps, eps / 2])), 2)
    f1, f2 = vals[0], vals[1]
    tail = np.zeros_like(f1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = f2 / f1
    ok = np.isfinite(ratio) & (ratio > 0)
    alpha = np.where(ok, np.log2(np.where(ok, ratio, 1.0)), 0.0)
    if np.any(alpha[ok] >= 1.0):
        raise QuadratureError("integrand is not integrable at 0 (local exponent >= 1)")
    tail[ok] = eps * f1[ok] / (1.0 - alpha[ok])
    return tail, np.abs(eps * f1)


def cosine_integrals(func, kmax, spec: QuadSpec = DEFAULT_QUAD):
    """``int_0^pi cos(k x) F(x) dx`` for k = 0..kmax.

    Parameters
    ----------
    func : callable
        Vectorized; maps an array of nodes to values of shape (N,) or (N, m)
        (or (m, N)).  May be singular at 0 with exponent above -1.
    kmax : int
        Largest frequency.
    spec : QuadSpec

    Returns
    -------
    ndarray of shape (kmax + 1, m)
    """
    kmax = int(kmax)
    depth = spec.depth
    # deepen the dyadic grading until the extrapolated [0, eps] piece is negligible
    while True:
        eps = np.pi * 2.0 ** -depth
        tail, tail_size = _tail(func, eps)
        lo, hi = _panels(0, depth)
        x, w = _nodes(lo, hi, spec.order)
        scale = np.abs(_as_columns(func(x), x.size)).T @ w
        if np.all(tail_size <= 1e-3 * spec.tol * scale + spec.atol) or depth >= spec.max_depth:
            break
        depth = min(spec.max_depth, depth + 20)
    lo, hi = _panels(kmax, depth)
    order = spec.order
    x, w = _nodes(lo, hi, order)
    prev = _cos_moments(x, _as_columns(func(x), x.size) * w[:, None], kmax)
    while True:
        order *= 2
        if order > spec.max_order:
            raise QuadratureError(
                f"Gauss order budget {spec.max_order} exhausted before reaching tol {spec.tol}")
        x, w = _nodes(lo, hi, order)
        vals = _as_columns(func(x), x.size)
        cur = _cos_moments(x, vals * w[:, None], kmax)
        ref = np.abs(vals).T @ w
        floor = max(spec.atol, 64 * np.finfo(float).eps * float(np.max(ref)))
        if np.all(np.max(np.abs(cur - prev), axis=0) <= spec.tol * ref + floor):
            return cur + tail[None, :]
        prev = cur


def integrate_0_pi(func, spec: QuadSpec = DEFAULT_QUAD):
    """``int_0^pi F(x) dx`` for a possibly vector-valued F singular at 0."""
    out = cosine_integrals(func, 0, spec)[0]
    return out
