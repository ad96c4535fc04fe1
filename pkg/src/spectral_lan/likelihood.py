"""Exact Gaussian likelihoods of stationary models and their theta-derivatives.

Notation used throughout: ``G = T_n(f_theta) / (2 pi)`` is the covariance of
the observed vector, ``S = G^{-1}``, ``G_a`` the covariance built from the
partial ``d_a f_theta`` (``a`` a sorted index tuple) and ``A_a = S G_a``.
With ``y = S x`` the log-likelihood ``l(theta) = -n/2 log 2pi - 1/2 log det G
- 1/2 x'Sx`` has

* ``d_j l = 1/2 y'G_j y - 1/2 tr A_j``
* ``d_jk l = 1/2 y'G_jk y - v_j'S v_k - 1/2 tr A_jk + 1/2 tr A_j A_k``

where ``v_j = G_j y``.  The third derivative follows by one more product rule,
see :meth:`LikelihoodState.third`.  ``F_n(theta) = l(theta) - l(theta0)``.
"""

from __future__ import annotations

import itertools
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from .errors import DomainError, DomainExitError, NotPositiveDefiniteError
from .quadrature import DEFAULT_QUAD, QuadSpec, cosine_integrals
from .spectral_models import FractionalGaussianNoise, ScaleFamily, SpectralModel
from .toeplitz_algebra import (SymmetricToeplitz, build_toeplitz, cholesky, model_autocovariances,
                               solve)

LOG_2PI = float(np.log(2.0 * np.pi))


def _index_sets(dim, order):
    keys = [()]
    for r in range(1, order + 1):
        keys.extend(itertools.combinations_with_replacement(range(dim), r))
    return keys


def _colsum(a, b):
    return np.einsum("ij,ij->j", a, b)


class LikelihoodState:
    """Everything the likelihood needs at one (model, theta, n).

    Autocovariances of the density and of its partials up to ``order`` are
    computed once; the Cholesky factor, ``S`` and the ``A_a`` matrices are
    built lazily.  Data-dependent methods take ``X`` of shape (n,) or (n, R)
    and return one value per column.
    """

    def __init__(self, model: SpectralModel, theta, n: int, order: int = 0,
                 quad: QuadSpec = DEFAULT_QUAD, method: str = "auto"):
        self.model = model
        self.theta = model.check(theta)
        self.n = int(n)
        self.order = int(order)
        self.keys = _index_sets(model.dim, self.order)
        acv = model_autocovariances(model, self.theta, self.n, self.keys, quad, method)
        self.lags = {k: acv[k].lags for k in self.keys}
        self.toeplitz = {k: SymmetricToeplitz(self.lags[k]) for k in self.keys}
        self.factor = cholesky(build_toeplitz(self.lags[()]))
        self.logdet = self.factor.logdet
        self._scale = isinstance(model, ScaleFamily)
        self._S = None
        self._A = {}
        self._tr1 = {}
        self._tr2 = {}
        self._tr3 = {}

    # -- deterministic pieces -------------------------------------------------
    # For scale families f = sigma2 * exp(h), partials containing the scale
    # index 0 once equal the remaining partial divided by sigma2 (A_0 = I /
    # sigma2), and vanish when 0 appears twice.  Keys are reduced to
    # (factor, base) with base () standing for the identity.
    def _reduce(self, key):
        key = tuple(sorted(key))
        if not self._scale:
            return 1.0, key
        c0 = key.count(0)
        if c0 >= 2:
            return 0.0, key[c0:]
        return (1.0 / self.theta[0]) ** c0, key[c0:]

    @property
    def S(self):
        if self._S is None:
            inv, info = lapack.dpotri(self.factor.lower, lower=1)
            if info != 0:
                raise np.linalg.LinAlgError(f"dpotri failed with info {info}")
            low = np.tril(inv)
            self._S = low + np.tril(inv, -1).T
        return self._S

    def A(self, key):
        """``S G_key`` as a dense matrix (``key`` without the scale index)."""
        key = tuple(sorted(key))
        if key not in self._A:
            lags = self.lags[key]
            if self.n <= 64:
                self._A[key] = self.S @ linalg.toeplitz(lags)
            else:
                # S G = (G S)' with G S formed by FFT Toeplitz products
                self._A[key] = linalg.matmul_toeplitz(lags, self.S, check_finite=False).T
        return self._A[key]

    def trace(self, key):
        """``tr A_key`` (``S`` and ``G_key`` are symmetric)."""
        fac, base = self._reduce(key)
        if fac == 0.0:
            return 0.0
        if base == ():
            return fac * self.n
        if base not in self._tr1:
            if base in self._A:
                self._tr1[base] = float(np.trace(self._A[base]))
            else:
                self._tr1[base] = float(np.sum(self.S * linalg.toeplitz(self.lags[base])))
        return fac * self._tr1[base]

    def _trace_bases(self, bases):
        bases = sorted(b for b in bases if b != ())
        if not bases:
            return float(self.n)
        if len(bases) == 1:
            return self.trace(bases[0])
        memo = self._tr2 if len(bases) == 2 else self._tr3
        key = tuple(bases)
        if key not in memo:
            if len(bases) == 2:
                memo[key] = float(np.sum(self.A(bases[0]) * self.A(bases[1]).T))
            else:
                memo[key] = float(np.sum((self.A(bases[0]) @ self.A(bases[1]))
                                         * self.A(bases[2]).T))
        return memo[key]

    def _trace_product(self, keys):
        total = 1.0
        bases = []
        for k in keys:
            fac, base = self._reduce(k)
            if fac == 0.0:
                return 0.0
            total *= fac
            bases.append(base)
        return total * self._trace_bases(bases)

    def trace2(self, a, b):
        """``tr A_a A_b``."""
        return self._trace_product((a, b))

    def trace3(self, a, b, c):
        """``tr A_a A_b A_c`` for first-order keys; symmetric in its arguments."""
        return self._trace_product((a, b, c))

    def release(self):
        """Drop the dense n x n caches (traces are kept)."""
        self._S = None
        self._A.clear()

    # -- data-dependent pieces -----------------------------------------------
    def _cols(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[0] != self.n:
            raise ValueError(f"expected {self.n} observations, got {X.shape[0]}")
        return X if X.ndim == 2 else X[:, None]

    def _out(self, X, vals):
        vals = np.asarray(vals)
        return vals[..., 0] if np.ndim(X) == 1 else vals

    def _gmul(self, key, Y):
        return self.toeplitz[tuple(sorted(key))].matmul(Y)

    def quad_form(self, X):
        """``x' S x`` per column."""
        Xc = self._cols(X)
        return self._out(X, _colsum(Xc, solve(self.factor, Xc)))

    def log_density(self, X):
        q = self.quad_form(X)
        return -0.5 * self.n * LOG_2PI - 0.5 * self.logdet - 0.5 * q

    def _first(self, Y):
        dim = self.model.dim
        V = [self._gmul((a,), Y) for a in range(dim)]
        return V

    def grad(self, X):
        """Gradient of the log-likelihood, shape (m,) or (m, R)."""
        if self.order < 1:
            raise ValueError("state built without first partials")
        Xc = self._cols(X)
        Y = solve(self.factor, Xc)
        V = self._first(Y)
        g = np.array([0.5 * _colsum(Y, V[a]) - 0.5 * self.trace((a,))
                      for a in range(self.model.dim)])
        return self._out(X, g)

    def hessian(self, X):
        """Hessian of the log-likelihood, shape (m, m) or (m, m, R)."""
        if self.order < 2:
            raise ValueError("state built without second partials")
        Xc = self._cols(X)
        m = self.model.dim
        Y = solve(self.factor, Xc)
        V = self._first(Y)
        W = [solve(self.factor, v) for v in V]
        H = np.empty((m, m, Xc.shape[1]))
        for a in range(m):
            for b in range(a, m):
                key = (a, b)
                val = (0.5 * _colsum(Y, self._gmul(key, Y)) - _colsum(V[a], W[b])
                       - 0.5 * self.trace(key) + 0.5 * self.trace2((a,), (b,)))
                H[a, b] = H[b, a] = val
        return self._out(X, H)

    def third(self, X, index):
        """Third partial ``d_jkl`` of the log-likelihood for ``index = (j, k, l)``."""
        if self.order < 3:
            raise ValueError("state built without third partials")
        j, k, l = sorted(index)
        Xc = self._cols(X)
        Y = solve(self.factor, Xc)
        V = {a: self._gmul((a,), Y) for a in {j, k, l}}
        W = {a: solve(self.factor, V[a]) for a in V}

        def vv(a, b):
            # v_ab' S v_c is written as w_c' v_ab
            return self._gmul((a, b), Y)

        quad = (0.5 * _colsum(Y, self._gmul((j, k, l), Y))
                - _colsum(W[j], vv(k, l)) - _colsum(W[l], vv(j, k)) - _colsum(W[k], vv(j, l))
                + _colsum(W[j], self._gmul((k,), W[l])) + _colsum(W[k], self._gmul((j,), W[l]))
                + _colsum(W[j], self._gmul((l,), W[k])))
        tr = (-0.5 * self.trace((j, k, l))
              + 0.5 * (self.trace2((j,), (k, l)) + self.trace2((j, k), (l,))
                       + self.trace2((k,), (j, l)))
              - self.trace3((j,), (k,), (l,)))
        return self._out(X, quad + tr)

    def expected_hessian(self):
        """``E_theta`` of the Hessian: ``-1/2 tr A_j A_k``."""
        m = self.model.dim
        return np.array([[-0.5 * self.trace2((a,), (b,)) for b in range(m)] for a in range(m)])


class StateCache:
    """Small LRU cache of :class:`LikelihoodState` objects."""

    def __init__(self, maxsize: int = 4, quad: QuadSpec = DEFAULT_QUAD):
        self.maxsize = maxsize
        self.quad = quad
        self._items: OrderedDict = OrderedDict()

    def get(self, model, theta, n, order=0):
        th = model.check(theta)
        key = (model, tuple(th.tolist()), int(n))
        hit = self._items.get(key)
        if hit is not None and hit.order >= order:
            self._items.move_to_end(key)
            return hit
        state = LikelihoodState(model, th, n, order, self.quad)
        self._items[key] = state
        while len(self._items) > self.maxsize:
            self._items.popitem(last=False)
        return state


_CACHE = StateCache()


def _state(model, theta, n, order=0, quad=DEFAULT_QUAD):
    if quad is DEFAULT_QUAD:
        return _CACHE.get(model, theta, n, order)
    return LikelihoodState(model, theta, n, order, quad)


# ---------------------------------------------------------------------------
# public operations


def log_density(x, model, theta, quad: QuadSpec = DEFAULT_QUAD):
    """Gaussian log-density of ``x`` (shape (n,) or (n, R)) under ``f_theta``."""
    x = np.asarray(x, dtype=float)
    return _state(model, theta, x.shape[0], 0, quad).log_density(x)


def log_likelihood_ratio(x, model, theta1, theta0, quad: QuadSpec = DEFAULT_QUAD):
    """``log dP_theta1 / dP_theta0 (x)``.

    Evaluated as ``1/2 <x, (G0^{-1} - G1^{-1}) x> + 1/2 log det(G1^{-1} G0)``.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    s1 = _state(model, theta1, n, 0, quad)
    s0 = _state(model, theta0, n, 0, quad)
    return 0.5 * (s0.quad_form(x) - s1.quad_form(x)) + 0.5 * (s0.logdet - s1.logdet)


def F_n(theta, x, theta0, model, quad: QuadSpec = DEFAULT_QUAD):
    """Centered log-likelihood ``F_n(theta) = log p_theta(x) - log p_theta0(x)``."""
    return log_likelihood_ratio(x, model, theta, theta0, quad)


def grad_F_n(theta, x, theta0, model, quad: QuadSpec = DEFAULT_QUAD):
    """Gradient of F_n in theta (theta0 only shifts F_n by a constant)."""
    x = np.asarray(x, dtype=float)
    return _state(model, theta, x.shape[0], 1, quad).grad(x)


def hessian_F_n(theta, x, theta0, model, quad: QuadSpec = DEFAULT_QUAD):
    x = np.asarray(x, dtype=float)
    return _state(model, theta, x.shape[0], 2, quad).hessian(x)


def third_partial_F_n(theta, x, theta0, model, index, quad: QuadSpec = DEFAULT_QUAD):
    x = np.asarray(x, dtype=float)
    return _state(model, theta, x.shape[0], 3, quad).third(x, index)


@dataclass(frozen=True)
class ScoreVector:
    """Normalized score ``Z_n = grad F_n(theta0) / sqrt(n)``."""

    values: np.ndarray
    n: int
    theta0: tuple

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def score(x, theta0, model, quad: QuadSpec = DEFAULT_QUAD) -> ScoreVector:
    x = np.asarray(x, dtype=float)
    g = grad_F_n(theta0, x, theta0, model, quad)
    th = model.check(theta0)
    return ScoreVector(g / np.sqrt(x.shape[0]), x.shape[0], tuple(th.tolist()))


# ---------------------------------------------------------------------------
# Fisher information


@dataclass(frozen=True)
class FisherMatrix:
    matrix: np.ndarray
    names: tuple
    theta: tuple
    quad: QuadSpec = field(default=DEFAULT_QUAD)

    def to_dict(self):
        return {"names": list(self.names), "theta": list(self.theta),
                "matrix": self.matrix.tolist(), "quadrature": self.quad.to_dict()}

    def to_json(self):
        from .io import dumps
        return dumps(self.to_dict())


def fisher_information(model: SpectralModel, theta, quad: QuadSpec = DEFAULT_QUAD) -> FisherMatrix:
    """``I_kj = (1/4pi) int_{-pi}^{pi} d_k log f d_j log f dx`` by graded quadrature."""
    th = model.check(theta)
    m = model.dim
    pairs = [(a, b) for a in range(m) for b in range(a, m)]

    def integrand(x):
        lg = model.log_gradient(th, x)
        return np.stack([lg[a] * lg[b] for a, b in pairs], axis=1)

    vals = cosine_integrals(integrand, 0, quad)[0] / (2.0 * np.pi)
    I = np.empty((m, m))
    for (a, b), v in zip(pairs, vals):
        I[a, b] = I[b, a] = v
    return FisherMatrix(I, model.names, tuple(th.tolist()), quad)


# ---------------------------------------------------------------------------
# LAN expansion


@dataclass(frozen=True)
class LanExpansionRecord:
    t: tuple
    n: int
    ratio: float
    linear: float
    quadratic: float
    remainder: float

    def to_dict(self):
        return {"t": list(self.t), "n": self.n, "ratio": self.ratio, "linear": self.linear,
                "quadratic": self.quadratic, "remainder": self.remainder}


def local_alternative(model, theta0, t, n):
    """``theta0 + t / sqrt(n)``; DomainExitError when it leaves the domain."""
    th0 = model.check(theta0)
    th = th0 + np.asarray(t, dtype=float) / np.sqrt(n)
    try:
        return model.check(th)
    except DomainError as exc:
        raise DomainExitError(f"theta0 + t/sqrt(n) = {th.tolist()} is outside the domain: {exc}") \
            from None


def lan_expansion(x, model, theta0, t, fisher: FisherMatrix | None = None,
                  quad: QuadSpec = DEFAULT_QUAD) -> LanExpansionRecord:
    """Split ``F_n(theta0 + t/sqrt(n))`` into linear, quadratic and remainder parts."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    t = np.asarray(t, dtype=float).reshape(-1)
    th = local_alternative(model, theta0, t, n)
    I = (fisher or fisher_information(model, theta0, quad)).matrix
    ratio = float(log_likelihood_ratio(x, model, th, theta0, quad))
    linear = float(t @ np.asarray(score(x, theta0, model, quad)))
    quadratic = float(-0.5 * t @ I @ t)
    return LanExpansionRecord(tuple(t.tolist()), n, ratio, linear, quadratic,
                              ratio - linear - quadratic)


def lan_records_to_csv(rows) -> str:
    """``rows``: iterable of (rep, LanExpansionRecord)."""
    rows = list(rows)
    m = len(rows[0][1].t) if rows else 0
    head = ["n", "rep"] + [f"t{i + 1}" for i in range(m)] + ["ratio", "linear", "quadratic",
                                                             "remainder"]
    lines = [",".join(head)]
    for rep, r in rows:
        vals = [str(r.n), str(rep)] + ["%.17g" % v for v in
                                       (*r.t, r.ratio, r.linear, r.quadratic, r.remainder)]
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def lan_records_to_json(rows) -> str:
    from .io import dumps
    return dumps([dict(rep=rep, **r.to_dict()) for rep, r in rows])


# ---------------------------------------------------------------------------
# fractional Brownian motion observed at integer times


def fbm_covariance(sigma2, H, n, dtype=float):
    """``R(s, t) = sigma2/2 (t^{2H} + s^{2H} - |t - s|^{2H})`` for s, t = 1..n."""
    t = np.arange(1, n + 1, dtype=dtype)
    h2 = dtype(2.0) * dtype(H)
    p = t ** h2
    return dtype(0.5) * dtype(sigma2) * (p[:, None] + p[None, :]
                                         - np.abs(t[:, None] - t[None, :]) ** h2)


def _cholesky_extended(A):
    # column Cholesky in A's dtype; LAPACK has no long double routines
    n = A.shape[0]
    L = np.zeros_like(A)
    for j in range(n):
        v = A[j:, j] - L[j:, :j] @ L[j, :j]
        if not v[0] > 0:
            raise NotPositiveDefiniteError(j + 1)
        L[j, j] = np.sqrt(v[0])
        L[j + 1:, j] = v[1:] / L[j, j]
    return L


def fbm_log_density(b, sigma2, H):
    """Log-density of the fBm vector ``(B_H(1), ..., B_H(n))`` from its direct covariance.

    The covariance grows like ``t^{2H}`` and is badly conditioned, so the
    factorization and the triangular solve run in ``np.longdouble``.  Cost is
    cubic without BLAS, which is fine for paths of a few hundred points.
    """
    ext = np.longdouble
    b = np.asarray(b, dtype=ext)
    n = b.shape[0]
    L = _cholesky_extended(fbm_covariance(sigma2, H, n, dtype=ext))
    y = np.zeros_like(b)
    for i in range(n):
        y[i] = (b[i] - L[i, :i] @ y[:i]) / L[i, i]
    q = np.sum(y * y, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return float(-0.5 * n * LOG_2PI - 0.5 * logdet - 0.5 * q)


def fbm_log_likelihood_ratio(b, theta1, theta0):
    """``log dP_theta1 / dP_theta0`` for an fBm path ``b``; theta = (sigma2, H)."""
    FractionalGaussianNoise().check(theta1)
    FractionalGaussianNoise().check(theta0)
    return fbm_log_density(b, *theta1) - fbm_log_density(b, *theta0)
