"""Parametric spectral densities with parameter derivatives up to order three.

Every density here follows the autocovariance convention

    c_k(f) = (1/2pi) * int_{-pi}^{pi} exp(ikx) f(x) dx,

so a white noise of variance ``s2`` has the constant density ``s2``.

Three concrete families are provided (white noise, fractional Gaussian noise,
ARFIMA(p, d, q)).  User models subclass :class:`SpectralModel` and implement
``check``, ``alpha`` and ``_density``; their parameter partials then fall back
to central finite differences.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import ClassVar, Sequence

import numpy as np
from scipy import special

from .errors import DomainError, SingularityError

TWO_PI = 2.0 * np.pi

ROOT_TOL = 1e-8
DEFAULT_K_TAIL = 2000


@dataclass(frozen=True)
class ThetaVector:
    """Parameter values tagged with the layout they belong to."""

    values: tuple
    layout: str

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype or float)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]


def _set_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [(first,) + part[i]] + part[i + 1:]
        yield [(first,)] + part


class SpectralModel:
    """Base class of a parametric, even spectral density.

    Subclasses must provide ``names``, ``check``, ``alpha`` and ``_density``.
    Overriding ``_analytic_partial`` enables exact parameter derivatives;
    otherwise (or with ``derivative_scheme="fd"``) finite differences are used.
    """

    layout: ClassVar[str] = "custom"
    derivative_scheme: str = "analytic"

    @property
    def names(self) -> tuple:
        raise NotImplementedError

    @property
    def dim(self) -> int:
        return len(self.names)

    def theta(self, values) -> ThetaVector:
        th = self.check(values)
        return ThetaVector(tuple(th), self.layout)

    def check(self, theta) -> np.ndarray:
        """Validate ``theta`` and return it as a float array."""
        raise NotImplementedError

    def in_domain(self, theta) -> bool:
        try:
            self.check(theta)
        except DomainError:
            return False
        return True

    def alpha(self, theta) -> float:
        """Memory exponent: f(x) behaves like |x|^(-alpha) near zero."""
        raise NotImplementedError

    def _density(self, th, x):
        raise NotImplementedError

    def _zero_value(self, th):
        # continuous extension at x = 0 when alpha <= 0
        if self.alpha(th) < 0:
            return 0.0
        return float(self._density(th, np.array([1e-9]))[0])

    def _analytic_partial(self, th, x, index):
        return None

    def _check_dim(self, th):
        if th.shape != (self.dim,):
            raise DomainError(f"{self.layout} expects {self.dim} parameters, got {th.size}")

    # ------------------------------------------------------------------
    def density(self, theta, x):
        th = self.check(theta)
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        xv = np.atleast_1d(x)
        zero = xv == 0
        if zero.any():
            if self.alpha(th) > 0:
                raise SingularityError(
                    f"density is infinite at x = 0 (alpha = {self.alpha(th):g})")
            out = np.empty_like(xv)
            out[zero] = self._zero_value(th)
            if (~zero).any():
                out[~zero] = self._density(th, xv[~zero])
        else:
            out = self._density(th, xv)
        return out[0] if scalar else out

    def partial(self, theta, x, index: Sequence[int]):
        """Mixed partial derivative of f_theta(x) over the components in ``index``."""
        th = self.check(theta)
        index = tuple(sorted(int(i) for i in index))
        if not 1 <= len(index) <= 3:
            raise ValueError("multi-index must have length 1, 2 or 3")
        if any(i < 0 or i >= self.dim for i in index):
            raise ValueError(f"multi-index {index} out of range for dimension {self.dim}")
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        xv = np.atleast_1d(x)
        if (xv == 0).any():
            raise SingularityError("parameter partials are not defined at x = 0")
        out = None
        if self.derivative_scheme == "analytic":
            out = self._analytic_partial(th, xv, index)
        if out is None:
            out = self._fd_partial(th, xv, index)
        return out[0] if scalar else out

    def _fd_partial(self, th, x, index):
        ell = len(index)
        steps = {i: np.finfo(float).eps ** (1.0 / (ell + 2)) * max(1.0, abs(th[i]))
                 for i in set(index)}
        total = np.zeros_like(x)
        for signs in itertools.product((1.0, -1.0), repeat=ell):
            shifted = th.copy()
            for s, i in zip(signs, index):
                shifted[i] += s * steps[i]
            total += np.prod(signs) * self._density(shifted, x)
        return total / np.prod([2.0 * steps[i] for i in index])

    def x_partial(self, theta, x):
        """Derivative of f_theta with respect to the frequency x."""
        th = self.check(theta)
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        xv = np.atleast_1d(x)
        if (xv == 0).any():
            raise SingularityError("x-derivative is not defined at x = 0")
        out = self._x_partial(th, xv)
        return out[0] if scalar else out

    def _x_partial(self, th, x):
        h = 1e-6 * np.maximum(1.0, np.abs(x))
        return (self._density(th, x + h) - self._density(th, x - h)) / (2 * h)

    def log_gradient(self, theta, x):
        """Array of shape (dim, len(x)) holding d log f / d theta_k."""
        th = self.check(theta)
        xv = np.atleast_1d(np.asarray(x, dtype=float))
        f = self.density(th, xv)
        return np.stack([self.partial(th, xv, (k,)) / f for k in range(self.dim)])


class ScaleFamily(SpectralModel):
    """Density of the form ``sigma2 * exp(h(eta, x))`` with ``theta = (sigma2, eta)``.

    Subclasses supply ``_log_shape`` (h) and ``_log_shape_partials`` (partials of
    h over blocks of eta indices); the exponential's higher derivatives follow
    from the set-partition form of Faa di Bruno's formula.
    """

    def _log_shape(self, th, x):
        raise NotImplementedError

    def _log_shape_partials(self, th, x, blocks):
        raise NotImplementedError

    def _log_shape_x(self, th, x):
        raise NotImplementedError

    def _density(self, th, x):
        return th[0] * np.exp(self._log_shape(th, x))

    def _analytic_partial(self, th, x, index):
        n_scale = index.count(0)
        if n_scale >= 2:
            return np.zeros_like(x)
        rest = tuple(i for i in index if i != 0)
        base = np.exp(self._log_shape(th, x))
        if rest:
            parts = list(_set_partitions(rest))
            blocks = {tuple(sorted(b)) for part in parts for b in part}
            hp = self._log_shape_partials(th, x, blocks)
            total = np.zeros_like(x)
            for part in parts:
                term = np.ones_like(x)
                for b in part:
                    term = term * hp[tuple(sorted(b))]
                total += term
            base = base * total
        return base if n_scale else th[0] * base

    def _x_partial(self, th, x):
        return self._density(th, x) * self._log_shape_x(th, x)

    def log_gradient(self, theta, x):
        th = self.check(theta)
        xv = np.atleast_1d(np.asarray(x, dtype=float))
        if self.derivative_scheme != "analytic":
            return super().log_gradient(th, xv)
        out = np.empty((self.dim, xv.size))
        out[0] = 1.0 / th[0]
        if self.dim > 1:
            hp = self._log_shape_partials(th, xv, {(k,) for k in range(1, self.dim)})
            for k in range(1, self.dim):
                out[k] = hp[(k,)]
        return out


@dataclass(frozen=True)
class WhiteNoise(ScaleFamily):
    """Constant density ``sigma2``; theta = (sigma2,)."""

    derivative_scheme: str = "analytic"
    layout: ClassVar[str] = "white"

    @property
    def names(self):
        return ("sigma2",)

    def check(self, theta):
        th = np.asarray(theta, dtype=float).reshape(-1)
        self._check_dim(th)
        if not th[0] > 0:
            raise DomainError(f"sigma2 must be positive, got {th[0]}")
        return th

    def alpha(self, theta):
        return 0.0

    def _log_shape(self, th, x):
        return np.zeros_like(x)

    def _log_shape_partials(self, th, x, blocks):
        return {}

    def _log_shape_x(self, th, x):
        return np.zeros_like(x)

    def _zero_value(self, th):
        return float(th[0])


# ---------------------------------------------------------------------------
# Fractional Gaussian noise


def c2_constant(H):
    """``pi / (H Gamma(2H) sin(pi H))``, the normalizing constant of the fGn density."""
    H = np.asarray(H, dtype=float)
    return np.pi / (H * special.gamma(2 * H) * np.sin(np.pi * H))


def _tail_partials(x, H, K_tail, order):
    # Euler-Maclaurin (midpoint) tail of sum_{|k| > K} |x + 2k pi|^(-a), a = 2H + 1,
    # returned with its H-derivatives up to ``order``.
    a = 2.0 * H + 1.0
    b = a - 1.0
    out = np.zeros((order + 1, x.size))
    for s in (1.0, -1.0):
        v0 = TWO_PI * (K_tail + 0.5) + s * x
        L = np.log(v0)
        e_int = np.exp(-b * L)
        e_cor = np.exp(-(a + 1.0) * L)
        for m in range(order + 1):
            integral = sum(math.factorial(m) / math.factorial(m - j) * L ** (m - j) / b ** (j + 1)
                           for j in range(m + 1))
            integral = (-1) ** m * e_int * integral / TWO_PI
            poly = (-L) ** m * a + (m * (-L) ** (m - 1) if m else 0.0)
            correction = -(TWO_PI / 24.0) * e_cor * poly
            out[m] += 2.0 ** m * (integral + correction)
    return out


def fgn_lattice_sum_derivatives(x, H, K_tail=DEFAULT_K_TAIL, order=0, chunk=512):
    """H-derivatives of ``S(x, H) = sum_k |x + 2k pi|^(-2H-1)``.

    The sum is truncated to ``|k| <= K_tail`` and completed by the integral of
    the summand beyond ``K_tail + 1/2`` plus the first Euler-Maclaurin term.

    Returns
    -------
    ndarray of shape (order + 1, len(x))
        Row ``m`` holds the m-th derivative in H.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    a = 2.0 * H + 1.0
    k = TWO_PI * np.arange(-K_tail, K_tail + 1, dtype=float)
    out = np.empty((order + 1, x.size))
    for start in range(0, x.size, chunk):
        xs = x[start:start + chunk]
        logy = np.log(np.abs(xs[:, None] + k[None, :]))
        term = np.exp(-a * logy)
        for m in range(order + 1):
            out[m, start:start + chunk] = term.sum(axis=1)
            if m < order:
                term = term * (-2.0 * logy)
    return out + _tail_partials(x, H, K_tail, order)


def fgn_lattice_sum(x, H, K_tail=DEFAULT_K_TAIL):
    """``sum_{k in Z} |x + 2k pi|^(-2H-1)`` with integral tail correction."""
    x = np.asarray(x, dtype=float)
    out = fgn_lattice_sum_derivatives(np.atleast_1d(x), H, K_tail, 0)[0]
    return out[0] if x.ndim == 0 else out


def _fgn_lattice_sum_x(x, H, K_tail):
    a = 2.0 * H + 1.0
    k = TWO_PI * np.arange(-K_tail, K_tail + 1, dtype=float)
    y = x[:, None] + k[None, :]
    body = (-a * np.sign(y) * np.abs(y) ** (-a - 1.0)).sum(axis=1)
    tail = np.zeros_like(x)
    for s in (1.0, -1.0):
        v0 = TWO_PI * (K_tail + 0.5) + s * x
        tail += -s * v0 ** (-a) / TWO_PI + s * (TWO_PI / 24.0) * a * (a + 1.0) * v0 ** (-a - 2.0)
    return body + tail


def _log_kappa_derivatives(H):
    # log of Gamma(2H + 1) sin(pi H) and its first three H-derivatives
    s, c = np.sin(np.pi * H), np.cos(np.pi * H)
    return (
        special.gammaln(2 * H + 1) + np.log(s),
        2 * special.digamma(2 * H + 1) + np.pi * c / s,
        4 * special.polygamma(1, 2 * H + 1) - np.pi ** 2 / s ** 2,
        8 * special.polygamma(2, 2 * H + 1) + 2 * np.pi ** 3 * c / s ** 3,
    )


@dataclass(frozen=True)
class FractionalGaussianNoise(ScaleFamily):
    """Increments of fractional Brownian motion; theta = (sigma2, H).

    The density is ``2 pi sigma2 |e^{ix} - 1|^2 S(x, H) / C_2^2(H)``; the factor
    ``2 pi`` puts it on the package-wide autocovariance convention so that the
    lag-0 autocovariance equals ``sigma2`` for every H.
    """

    k_tail: int = DEFAULT_K_TAIL
    derivative_scheme: str = "analytic"
    layout: ClassVar[str] = "fgn"

    @property
    def names(self):
        return ("sigma2", "hurst")

    def check(self, theta):
        th = np.asarray(theta, dtype=float).reshape(-1)
        self._check_dim(th)
        if not th[0] > 0:
            raise DomainError(f"sigma2 must be positive, got {th[0]}")
        if not 0 < th[1] < 1:
            raise DomainError(f"Hurst index must lie in (0, 1), got {th[1]}")
        return th

    def alpha(self, theta):
        return 2.0 * float(np.asarray(theta, dtype=float).reshape(-1)[1]) - 1.0

    def _log_shape(self, th, x):
        H = th[1]
        S = fgn_lattice_sum_derivatives(x, H, self.k_tail, 0)[0]
        return _log_kappa_derivatives(H)[0] + np.log(4.0 * np.sin(x / 2) ** 2) + np.log(S)

    def _log_shape_partials(self, th, x, blocks):
        H = th[1]
        order = max(len(b) for b in blocks)
        S = fgn_lattice_sum_derivatives(x, H, self.k_tail, order)
        r = [None] + [S[m] / S[0] for m in range(1, order + 1)]
        logS = [None, r[1]]
        if order >= 2:
            logS.append(r[2] - r[1] ** 2)
        if order >= 3:
            logS.append(r[3] - 3 * r[1] * r[2] + 2 * r[1] ** 3)
        lk = _log_kappa_derivatives(H)
        return {b: lk[len(b)] + logS[len(b)] for b in blocks}

    def _log_shape_x(self, th, x):
        S = fgn_lattice_sum_derivatives(x, th[1], self.k_tail, 0)[0]
        return 1.0 / np.tan(x / 2) + _fgn_lattice_sum_x(x, th[1], self.k_tail) / S

    def _zero_value(self, th):
        if th[1] < 0.5:
            return 0.0
        return float(th[0])


# ---------------------------------------------------------------------------
# ARFIMA(p, d, q)


def _poly_roots(coefs):
    # roots of 1 + c_1 z + ... + c_m z^m
    c = np.asarray(coefs, dtype=float)
    # negligible top coefficients only add roots far outside the unit circle
    keep = np.nonzero(np.abs(c) > 1e-14)[0]
    c = c[:keep[-1] + 1] if keep.size else c[:0]
    if c.size == 0:
        return np.array([], dtype=complex)
    return np.roots(np.concatenate([c[::-1], [1.0]]))


@dataclass(frozen=True)
class ARFIMA(ScaleFamily):
    """ARFIMA(p, d, q); theta = (sigma2, d, Phi_1..Phi_p, Psi_1..Psi_q).

    ``f(x) = sigma2 |e^{ix} - 1|^(-2d) |Psi(e^{ix}) / Phi(e^{ix})|^2`` with
    ``Phi(z) = 1 + sum Phi_j z^j`` and ``Psi(z) = 1 + sum Psi_j z^j``.
    """

    p: int = 0
    q: int = 0
    derivative_scheme: str = "analytic"
    layout: ClassVar[str] = "arfima"

    @property
    def names(self):
        return (("sigma2", "d") + tuple(f"phi{j}" for j in range(1, self.p + 1))
                + tuple(f"psi{j}" for j in range(1, self.q + 1)))

    def check(self, theta):
        th = np.asarray(theta, dtype=float).reshape(-1)
        self._check_dim(th)
        if not th[0] > 0:
            raise DomainError(f"sigma2 must be positive, got {th[0]}")
        if not th[1] < 0.5:
            raise DomainError(f"d must be below 1/2 for an integrable density, got {th[1]}")
        ar, ma = _poly_roots(th[2:2 + self.p]), _poly_roots(th[2 + self.p:])
        for name, roots in (("AR", ar), ("MA", ma)):
            if roots.size and np.min(np.abs(roots)) - 1.0 <= ROOT_TOL:
                raise DomainError(f"{name} polynomial has a root of modulus <= 1")
        if ar.size and ma.size and np.min(np.abs(ar[:, None] - ma[None, :])) <= ROOT_TOL:
            raise DomainError("AR and MA polynomials share a root")
        return th

    def alpha(self, theta):
        return 2.0 * float(np.asarray(theta, dtype=float).reshape(-1)[1])

    def _polys(self, th, x):
        z = np.exp(1j * x)
        ar = np.ones_like(z)
        ma = np.ones_like(z)
        for j in range(1, self.p + 1):
            ar = ar + th[1 + j] * z ** j
        for j in range(1, self.q + 1):
            ma = ma + th[1 + self.p + j] * z ** j
        return z, ar, ma

    def _log_shape(self, th, x):
        _, ar, ma = self._polys(th, x)
        return (-2.0 * th[1] * np.log(np.abs(2.0 * np.sin(x / 2)))
                + 2.0 * np.log(np.abs(ma)) - 2.0 * np.log(np.abs(ar)))

    def _group(self, i):
        if i == 1:
            return "d", 0
        if i < 2 + self.p:
            return "ar", i - 1
        return "ma", i - 1 - self.p

    def _log_shape_partials(self, th, x, blocks):
        z, ar, ma = self._polys(th, x)
        out = {}
        for b in blocks:
            groups = [self._group(i) for i in b]
            kinds = {g for g, _ in groups}
            m = len(b)
            if len(kinds) > 1:
                out[b] = np.zeros_like(x)
            elif kinds == {"d"}:
                out[b] = (-2.0 * np.log(np.abs(2.0 * np.sin(x / 2))) if m == 1
                          else np.zeros_like(x))
            else:
                kind = kinds.pop()
                power = sum(j for _, j in groups)
                poly, sign = (ar, -1.0) if kind == "ar" else (ma, 1.0)
                coef = sign * 2.0 * (-1) ** (m - 1) * math.factorial(m - 1)
                out[b] = coef * np.real(z ** power / poly ** m)
        return out

    def _log_shape_x(self, th, x):
        z, ar, ma = self._polys(th, x)
        dar = np.zeros_like(z)
        dma = np.zeros_like(z)
        for j in range(1, self.p + 1):
            dar = dar + j * th[1 + j] * z ** (j - 1)
        for j in range(1, self.q + 1):
            dma = dma + j * th[1 + self.p + j] * z ** (j - 1)
        return (-th[1] / np.tan(x / 2)
                + 2.0 * np.real(1j * z * dma / ma) - 2.0 * np.real(1j * z * dar / ar))

    def _zero_value(self, th):
        if th[1] < 0:
            return 0.0
        _, ar, ma = self._polys(th, np.zeros(1))
        return float(th[0] * np.abs(ma[0] / ar[0]) ** 2)


# ---------------------------------------------------------------------------
# functional interface


def eval_density(model: SpectralModel, theta, x):
    return model.density(theta, x)


def eval_theta_partial(model: SpectralModel, theta, x, multi_index):
    return model.partial(theta, x, multi_index)


def eval_x_partial(model: SpectralModel, theta, x):
    return model.x_partial(theta, x)


def alpha_of(model: SpectralModel, theta) -> float:
    return model.alpha(model.check(theta))


def make_model(layout: str, *, p=0, q=0, k_tail=DEFAULT_K_TAIL, derivative_scheme="analytic"):
    """Build a model from its layout tag (``white``, ``fgn`` or ``arfima``)."""
    if derivative_scheme not in ("analytic", "fd"):
        raise ValueError(f"unknown derivative scheme {derivative_scheme!r}")
    if layout == "white":
        return WhiteNoise(derivative_scheme=derivative_scheme)
    if layout == "fgn":
        return FractionalGaussianNoise(k_tail=int(k_tail), derivative_scheme=derivative_scheme)
    if layout == "arfima":
        return ARFIMA(p=int(p), q=int(q), derivative_scheme=derivative_scheme)
    raise ValueError(f"unknown model layout {layout!r}")


# ---------------------------------------------------------------------------
# envelope diagnostics


@dataclass
class BoundCheckReport:
    """Empirical envelope constants over a (theta, x) grid.

    ``c1_density`` and ``c2_density`` bound f between ``c1 |x|^(-alpha+delta)``
    and ``c2 |x|^(-alpha-delta)``; ``c2_x_partial`` bounds |df/dx| against
    ``|x|^(-alpha-1-delta)``; ``c2_theta_partials`` bounds every theta-partial of
    order 1 to 3 against ``|x|^(-alpha-delta)``.
    """

    delta: float
    x_grid: np.ndarray
    theta_grid: np.ndarray
    c1_density: float
    c2_density: float
    c2_x_partial: float
    c2_theta_partials: float
    points_checked: int
    passed: bool
    per_theta: list = field(default_factory=list)

    def to_dict(self):
        return {
            "delta": self.delta,
            "x_grid": {"min": float(self.x_grid.min()), "max": float(self.x_grid.max()),
                       "count": int(self.x_grid.size)},
            "theta_grid": self.theta_grid.tolist(),
            "c1_density": self.c1_density,
            "c2_density": self.c2_density,
            "c2_x_partial": self.c2_x_partial,
            "c2_theta_partials": self.c2_theta_partials,
            "points_checked": self.points_checked,
            "passed": self.passed,
            "per_theta": self.per_theta,
        }


def make_grid(x_min, x_max, count, spacing="log"):
    if spacing == "log":
        return np.geomspace(x_min, x_max, int(count))
    if spacing == "linear":
        return np.linspace(x_min, x_max, int(count))
    raise ValueError(f"unknown spacing {spacing!r}")


def verify_assumption_bounds(model: SpectralModel, theta_grid, delta=0.05, x_grid=None):
    """Fit the envelope constants of the power-law regularity conditions.

    The x-grid is mirrored to negative frequencies; a check passes when every
    constant is finite and positive.
    """
    theta_grid = np.atleast_2d(np.asarray(theta_grid, dtype=float))
    if x_grid is None:
        x_grid = make_grid(1e-4, np.pi, 200)
    x_grid = np.asarray(x_grid, dtype=float)
    if theta_grid.size == 0 or x_grid.size == 0:
        raise ValueError("grids must be nonempty")
    if np.any(x_grid == 0):
        raise ValueError("x grid must avoid 0")
    xs = np.concatenate([-x_grid[::-1], x_grid])
    ax = np.abs(xs)
    c1, c2, c2x, c2t = np.inf, 0.0, 0.0, 0.0
    per_theta = []
    indices = [ix for ell in (1, 2, 3)
               for ix in itertools.combinations_with_replacement(range(model.dim), ell)]
    for th in theta_grid:
        a = model.alpha(model.check(th))
        f = model.density(th, xs)
        lo = np.min(f / ax ** (-a + delta))
        hi = np.max(f / ax ** (-a - delta))
        hx = np.max(np.abs(model.x_partial(th, xs)) / ax ** (-a - 1 - delta))
        ht = max(np.max(np.abs(model.partial(th, xs, ix)) / ax ** (-a - delta)) for ix in indices)
        per_theta.append({"theta": th.tolist(), "c1": float(lo), "c2": float(hi),
                          "c2_x": float(hx), "c2_theta": float(ht)})
        c1, c2, c2x, c2t = min(c1, lo), max(c2, hi), max(c2x, hx), max(c2t, ht)
    consts = np.array([c1, c2, c2x, c2t])
    passed = bool(np.all(np.isfinite(consts)) and c1 > 0 and c2 > 0)
    return BoundCheckReport(delta=float(delta), x_grid=x_grid, theta_grid=theta_grid,
                            c1_density=float(c1), c2_density=float(c2),
                            c2_x_partial=float(c2x), c2_theta_partials=float(c2t),
                            points_checked=int(theta_grid.shape[0] * xs.size),
                            passed=passed, per_theta=per_theta)
