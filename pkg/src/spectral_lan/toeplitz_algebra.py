"""Toeplitz covariance matrices built from spectral densities.

``T_n(f)`` denotes the matrix with entries ``int exp(i(k-j)x) f(x) dx``; the
covariance of n consecutive observations is ``T_n(f) / (2 pi)``, whose first
row holds the autocovariances ``c_0 .. c_{n-1}``.  Routines here work on the
covariance scale; trace functionals are scale free.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import linalg, special
from scipy.linalg import lapack

from .errors import IntegrabilityWarning, NotPositiveDefiniteError
from .quadrature import DEFAULT_QUAD, QuadSpec, cosine_integrals
from .spectral_models import ARFIMA, FractionalGaussianNoise, SpectralModel, WhiteNoise

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# types


@dataclass(frozen=True)
class AutocovSequence:
    """Autocovariances ``c_0 .. c_{n-1}`` and where they came from."""

    lags: np.ndarray
    provenance: str = "user"

    def __post_init__(self):
        object.__setattr__(self, "lags", np.asarray(self.lags, dtype=float).reshape(-1))

    def __len__(self):
        return self.lags.size

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["lag", "value"])
        for k, v in enumerate(self.lags):
            writer.writerow([k, repr(float(v))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, provenance="user"):
        rows = list(csv.DictReader(io.StringIO(text)))
        lags = np.empty(len(rows))
        for row in rows:
            lags[int(row["lag"])] = float(row["value"])
        return cls(lags, provenance)


@dataclass(frozen=True)
class SymmetricToeplitz:
    """Symmetric Toeplitz matrix given by its first row."""

    first_row: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "first_row", np.asarray(self.first_row, dtype=float).reshape(-1))

    @property
    def n(self):
        return self.first_row.size

    def dense(self):
        return linalg.toeplitz(self.first_row)

    def matmul(self, x):
        """``M @ x`` through FFT-based Toeplitz multiplication."""
        x = np.asarray(x, dtype=float)
        if self.n <= 64:
            return self.dense() @ x
        return linalg.matmul_toeplitz(self.first_row, x, check_finite=False)


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower Cholesky factor with the log-determinant of the factored matrix."""

    lower: np.ndarray
    logdet: float

    @property
    def n(self):
        return self.lower.shape[0]

    def solve(self, b):
        return solve(self, b)


# ---------------------------------------------------------------------------
# Fourier coefficients and closed-form autocovariances


def fourier_coefficient(f: Callable, k: int, quad: QuadSpec = DEFAULT_QUAD) -> float:
    """``int_{-pi}^{pi} exp(ikx) f(x) dx`` for an even f (no 1/2pi factor)."""
    return float(2.0 * cosine_integrals(f, int(k), quad)[int(k), 0])


def fourier_coefficients(f: Callable, n: int, quad: QuadSpec = DEFAULT_QUAD) -> np.ndarray:
    """Coefficients for k = 0..n-1 at once; f may return (N, m) for m densities.

    Returns shape (n,) or (n, m).
    """
    out = 2.0 * cosine_integrals(f, int(n) - 1, quad)
    return out[:, 0] if out.shape[1] == 1 else out


_FGN_SERIES_LAG = 4
_FGN_SERIES_TERMS = 24


def fgn_autocovariance_closed(k, sigma2, H, order=0):
    """Autocovariance of fractional Gaussian noise at lag(s) k.

    ``(sigma2 / 2) (|k+1|^{2H} - 2|k|^{2H} + |k-1|^{2H})``; with ``order > 0``
    the ``order``-th derivative in H is returned instead.

    The second difference loses about ``k^2`` in relative accuracy, so lags
    ``k >= 4`` use the even binomial series
    ``sigma2 k^{2H} sum_j binom(2H, 2j) k^{-2j}``, differentiated in H through
    truncated Taylor jets.
    """
    k = np.abs(np.asarray(k, dtype=float))

    def pw(j):
        j = np.abs(j)
        with np.errstate(divide="ignore"):
            lj = np.log(np.where(j > 0, j, 1.0))
        return np.where(j > 0, (2.0 * lj) ** order * j ** (2.0 * H), 0.0)

    out = 0.5 * sigma2 * (pw(k + 1) - 2.0 * pw(k) + pw(k - 1))
    far = k >= _FGN_SERIES_LAG
    if np.any(far):
        out = np.array(out, dtype=float)
        out[far] = sigma2 * _fgn_series(k[far], 2.0 * H, order) * 2.0 ** order
    return out


def _fgn_series(k, a, order):
    """``d^order/da^order [k^a sum_{j>=1} binom(a, 2j) k^{-2j}]`` for k >= 2."""
    m = order + 1
    binom = np.zeros(m)
    binom[0] = 1.0
    series = np.zeros((m, k.size))
    inv2 = k ** -2.0
    scale = np.ones_like(k)
    for i in range(2 * _FGN_SERIES_TERMS):
        # binom(a, i+1) = binom(a, i) (a - i) / (i + 1), as a Taylor jet in a
        step = np.zeros(m)
        step[0] = (a - i) / (i + 1)
        if m > 1:
            step[1] = 1.0 / (i + 1)
        binom = np.array([sum(binom[r] * step[s - r] for r in range(s + 1)) for s in range(m)])
        if i % 2 == 1:
            scale = scale * inv2
            series += binom[:, None] * scale[None, :]
    logk = np.log(k)
    power = np.array([logk ** r / math.factorial(r) for r in range(m)]) * k ** a
    coef = sum(power[r] * series[order - r] for r in range(order + 1))
    return math.factorial(order) * coef


def _jet_mul(a, b):
    out = [0.0] * 4
    for i in range(4):
        if a[i]:
            for j in range(4 - i):
                out[i + j] += a[i] * b[j]
    return out


def arfima_autocovariance_closed(n, sigma2, d, order=0):
    """Autocovariances of ARFIMA(0, d, 0) and their d-derivatives.

    ``c_0 = sigma2 Gamma(1-2d) / Gamma(1-d)^2`` and
    ``c_k = c_{k-1} (k - 1 + d) / (k - d)``.  Derivatives come from propagating
    third-order Taylor jets in d through that recursion.

    Returns
    -------
    ndarray of shape (order + 1, n)
    """
    # Taylor coefficients of log c_0 in powers of (d' - d)
    a = [np.log(sigma2) + special.gammaln(1 - 2 * d) - 2 * special.gammaln(1 - d)]
    fact = 1.0
    for m in range(1, 4):
        fact *= m
        dm = ((-2.0) ** m * special.polygamma(m - 1, 1 - 2 * d)
              - 2.0 * (-1.0) ** m * special.polygamma(m - 1, 1 - d))
        a.append(dm / fact)
    e0 = np.exp(a[0])
    jet = [e0, e0 * a[1], e0 * (a[2] + a[1] ** 2 / 2),
           e0 * (a[3] + a[1] * a[2] + a[1] ** 3 / 6)]
    out = np.empty((4, n))
    out[:, 0] = jet
    for k in range(1, n):
        num = [k - 1 + d, 1.0, 0.0, 0.0]
        den0 = k - d
        inv = [1.0 / den0, 1.0 / den0 ** 2, 1.0 / den0 ** 3, 1.0 / den0 ** 4]
        jet = _jet_mul(jet, _jet_mul(num, inv))
        out[:, k] = jet
    factorials = np.array([1.0, 1.0, 2.0, 6.0])[:, None]
    return (out * factorials)[:order + 1]


# ---------------------------------------------------------------------------
# model autocovariances


def _closed_form(model, th, n, index):
    n_scale = index.count(0)
    rest = [i for i in index if i != 0]
    if isinstance(model, WhiteNoise):
        lags = np.zeros(n)
        if n_scale == len(index) <= 1:
            lags[0] = 1.0 if n_scale else th[0]
        return lags, "closed-form-white"
    if n_scale >= 2:
        return np.zeros(n), None
    scale = 1.0 if n_scale else th[0]
    if isinstance(model, FractionalGaussianNoise) and set(rest) <= {1}:
        lags = fgn_autocovariance_closed(np.arange(n), scale, th[1], order=len(rest))
        return lags, "closed-form-fgn"
    if isinstance(model, ARFIMA) and model.p == model.q == 0 and set(rest) <= {1}:
        lags = arfima_autocovariance_closed(n, scale, th[1], order=len(rest))[len(rest)]
        return lags, "closed-form-arfima"
    return None, None


def model_autocovariances(model: SpectralModel, theta, n: int, indices: Sequence = ((),),
                          quad: QuadSpec = DEFAULT_QUAD, method: str = "auto"):
    """Autocovariances of f_theta and of its parameter partials.

    Parameters
    ----------
    indices : sequence of tuples
        ``()`` selects the density itself; ``(k,)``, ``(j, k)`` ... select partials.
    method : {"auto", "closed", "quadrature"}
        ``auto`` prefers closed forms (white noise, fGn, ARFIMA(0, d, 0)).

    Returns
    -------
    dict mapping each sorted index tuple to an AutocovSequence of length n.
    """
    th = model.check(theta)
    keys = [tuple(sorted(ix)) for ix in indices]
    out = {}
    pending = []
    for key in keys:
        if key in out or key in pending:
            continue
        lags, prov = (None, None) if method == "quadrature" else _closed_form(model, th, n, key)
        if lags is not None:
            out[key] = AutocovSequence(lags, prov or "closed-form")
        elif method == "closed":
            raise ValueError(f"no closed form for {model.layout} partial {key}")
        else:
            pending.append(key)
    if pending:
        def integrand(x):
            cols = [model.density(th, x) if key == () else model.partial(th, x, key)
                    for key in pending]
            return np.stack(cols, axis=1)

        coefs = fourier_coefficients(integrand, n, quad).reshape(n, len(pending))
        for j, key in enumerate(pending):
            out[key] = AutocovSequence(coefs[:, j] / TWO_PI, "quadrature")
    return out


def model_autocovariance(model, theta, n, index=(), quad=DEFAULT_QUAD, method="auto"):
    key = tuple(sorted(index))
    return model_autocovariances(model, theta, n, (key,), quad, method)[key]


# ---------------------------------------------------------------------------
# dense linear algebra


def build_toeplitz(c, n: int | None = None) -> SymmetricToeplitz:
    lags = c.lags if isinstance(c, AutocovSequence) else np.asarray(c, dtype=float)
    n = lags.size if n is None else int(n)
    if lags.size < n:
        raise ValueError(f"need {n} lags, got {lags.size}")
    return SymmetricToeplitz(lags[:n])


def cholesky(M) -> CholeskyFactor:
    """Cholesky factorization; raises NotPositiveDefiniteError with the pivot."""
    a = M.dense() if isinstance(M, SymmetricToeplitz) else np.asarray(M, dtype=float)
    lower, info = lapack.dpotrf(a, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise NotPositiveDefiniteError(info)
    if info < 0:
        raise ValueError(f"dpotrf: illegal argument {-info}")
    diag = np.diag(lower)
    return CholeskyFactor(lower, float(2.0 * np.sum(np.log(diag))))


def solve(factor: CholeskyFactor, b):
    b = np.asarray(b, dtype=float)
    if b.shape[0] != factor.n:
        raise ValueError(f"dimension mismatch: factor is {factor.n}, rhs has {b.shape[0]} rows")
    return linalg.cho_solve((factor.lower, True), b, check_finite=False)


def solve_levinson(c, b):
    """Levinson-Durbin solve of ``toeplitz(c) y = b`` (O(n^2))."""
    lags = c.lags if isinstance(c, AutocovSequence) else np.asarray(c, dtype=float)
    b = np.asarray(b, dtype=float)
    return linalg.solve_toeplitz(lags[:b.shape[0]], b, check_finite=False)


# ---------------------------------------------------------------------------
# trace functionals


def _lags_of(obj, n, quad):
    if isinstance(obj, AutocovSequence):
        return obj.lags[:n]
    if isinstance(obj, SymmetricToeplitz):
        return obj.first_row[:n]
    if callable(obj):
        return fourier_coefficients(obj, n, quad) / TWO_PI
    lags = np.asarray(obj, dtype=float)
    if lags.size < n:
        raise ValueError(f"need {n} lags, got {lags.size}")
    return lags[:n]


def trace_product(f, g_list, n: int, quad: QuadSpec = DEFAULT_QUAD) -> float:
    """``(1/n) tr[prod_l T_n(f)^{-1} T_n(g_l)]``.

    ``f`` and each ``g`` are densities (callables, integrated by quadrature) or
    autocovariance lags.  Each factor ``T_n(f)^{-1} T_n(g_l)`` is formed by n
    triangular solves against the Cholesky factor of ``T_n(f)``.
    """
    if not 1 <= len(g_list) <= 3:
        raise ValueError("trace_product supports 1 to 3 factors")
    factor = cholesky(build_toeplitz(_lags_of(f, n, quad), n))
    mats = [solve(factor, linalg.toeplitz(_lags_of(g, n, quad))) for g in g_list]
    return trace_of_product(mats) / n


def trace_of_product(mats):
    """Trace of a product of up to three square matrices without forming all of it."""
    if len(mats) == 1:
        return float(np.trace(mats[0]))
    head = mats[0]
    for m in mats[1:-1]:
        head = head @ m
    return float(np.sum(head * mats[-1].T))


def spectral_limit_integral(f: Callable, g_list, quad: QuadSpec = DEFAULT_QUAD,
                            alpha: float | None = None, beta: float | None = None) -> float:
    """``(1/2pi) int_{-pi}^{pi} f^{-p} prod_l g_l dx`` for even f, g_l.

    When ``alpha`` (memory exponent of f) and ``beta`` (growth exponent of the
    g's) are supplied, ``p (beta - alpha) >= 1`` triggers an IntegrabilityWarning.
    """
    p = len(g_list)
    if alpha is not None and beta is not None and p * (beta - alpha) >= 1:
        warnings.warn(f"p (beta - alpha) = {p * (beta - alpha):.3g} >= 1: the limit "
                      "integrand may not be integrable", IntegrabilityWarning, stacklevel=2)

    def integrand(x):
        val = np.asarray(f(x), dtype=float) ** (-p)
        for g in g_list:
            val = val * np.asarray(g(x), dtype=float)
        return val

    from .quadrature import integrate_0_pi
    return float(integrate_0_pi(integrand, quad)[0] / np.pi)


# ---------------------------------------------------------------------------
# operator norms


@dataclass
class NormEstimate:
    value: float
    iterations: int
    converged: bool


def operator_norm_estimate(apply: Callable, n: int, iterations: int = 10000,
                           tol: float = 1e-6, seed: int = 0) -> NormEstimate:
    """Largest eigenvalue of a symmetric positive semidefinite operator by power iteration.

    The start vector is drawn from a fixed seed, so estimates are reproducible.
    If the iteration cap is hit the best estimate is returned with
    ``converged=False``.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for it in range(1, iterations + 1):
        w = np.asarray(apply(v), dtype=float)
        new = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return NormEstimate(0.0, it, True)
        v = w / norm
        if it > 1 and abs(new - lam) <= tol * abs(new):
            return NormEstimate(new, it, True)
        lam = new
    return NormEstimate(lam, iterations, False)


def toeplitz_norm_ratio(f_lags, g_lags, n: int, iterations=10000, tol=1e-10, seed=0):
    """``||T_n(f)^{-1/2} T_n(g)^{1/2}||_2`` via power iteration.

    Uses ``L^{-1} T_n(g) L^{-T}`` (``T_n(f) = L L^T``), which shares the spectrum
    of ``T_n(f)^{-1/2} T_n(g) T_n(f)^{-1/2}``; the norm is the square root of its
    top eigenvalue.
    """
    factor = cholesky(build_toeplitz(f_lags, n))
    tg = build_toeplitz(g_lags, n)
    L = factor.lower

    def apply(v):
        u = linalg.solve_triangular(L, v, lower=True, trans="T", check_finite=False)
        return linalg.solve_triangular(L, tg.matmul(u), lower=True, check_finite=False)

    est = operator_norm_estimate(apply, n, iterations, tol, seed)
    return NormEstimate(float(np.sqrt(max(est.value, 0.0))), est.iterations, est.converged)
