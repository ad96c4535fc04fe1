"""Exact simulation of stationary Gaussian models.

Random streams: every draw comes from a Philox generator keyed by a 64-bit
master seed and a tuple ``spawn_key`` (e.g. ``(stream, n, replication)``)
through :class:`numpy.random.SeedSequence`, so a replication's numbers do not
depend on how replications are scheduled.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .io import csv_text, dumps
from .spectral_models import FractionalGaussianNoise, SpectralModel
from .toeplitz_algebra import (CholeskyFactor, SymmetricToeplitz, build_toeplitz, cholesky,
                               fgn_autocovariance_closed, model_autocovariance)


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Generator for master ``seed`` and child ``key``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SamplePath:
    values: np.ndarray
    model: str
    theta: tuple
    seed: int
    method: str

    def __post_init__(self):
        if self.values.size == 0 or not np.all(np.isfinite(self.values)):
            raise ValueError("sample path must be non-empty and finite")

    def __len__(self):
        return self.values.size

    def to_csv(self) -> str:
        return csv_text(["index", "value"], ((i + 1, float(v)) for i, v in enumerate(self.values)))

    def sidecar(self) -> str:
        return dumps({"model": self.model, "theta": list(self.theta), "seed": self.seed,
                      "method": self.method, "n": int(self.values.size)})


def cholesky_factor(model: SpectralModel, theta, n: int) -> CholeskyFactor:
    return cholesky(build_toeplitz(model_autocovariance(model, theta, n)))


def standard_normals(seed: int, n: int, key=()) -> np.ndarray:
    return rng_for(seed, *key).standard_normal(n)


def sample_cholesky(model: SpectralModel, theta, n: int, seed: int, key=(),
                    factor: CholeskyFactor | None = None) -> SamplePath:
    """``x = L z`` with ``L`` the Cholesky factor of the covariance."""
    th = model.check(theta)
    factor = factor or cholesky_factor(model, th, n)
    z = standard_normals(seed, n, key)
    return SamplePath(factor.lower @ z, model.layout, tuple(th.tolist()), int(seed), "cholesky")


def circulant_eigenvalues(c: np.ndarray) -> np.ndarray:
    """Eigenvalues of the minimal power-of-two circulant embedding of lags ``c``."""
    n = c.size
    M = 1
    while M < 2 * (n - 1):
        M *= 2
    M = max(M, 2)
    row = np.zeros(M)
    row[:n] = c
    row[M - n + 1:] = c[1:][::-1]
    lam = np.fft.rfft(row).real
    top = np.max(np.abs(lam))
    if np.min(lam) < -1e-12 * top:
        raise np.linalg.LinAlgError(
            f"circulant embedding has a negative eigenvalue {np.min(lam):.3g}")
    if np.min(lam) < 0:
        warnings.warn("clamping round-off negative circulant eigenvalues", RuntimeWarning,
                      stacklevel=2)
        lam = np.maximum(lam, 0.0)
    return lam, M


def sample_fgn_circulant(sigma2: float, H: float, n: int, seed: int, key=()) -> SamplePath:
    """Fractional Gaussian noise by circulant embedding."""
    th = FractionalGaussianNoise().check((sigma2, H))
    c = fgn_autocovariance_closed(np.arange(n), sigma2, H)
    if n == 1:
        return SamplePath(np.sqrt(sigma2) * standard_normals(seed, 1, key), "fgn",
                          tuple(th.tolist()), int(seed), "circulant")
    lam, M = circulant_eigenvalues(c)
    rng = rng_for(seed, *key)
    # Hermitian white noise with E|w_k|^2 = M lam_k gives covariance c after the real FFT
    z = rng.standard_normal(M)
    w = np.fft.rfft(z) * np.sqrt(lam)
    x = np.fft.irfft(w, n=M)[:n]
    return SamplePath(x, "fgn", tuple(th.tolist()), int(seed), "circulant")


def fbm_path_from_fgn(x) -> np.ndarray:
    """``b_k = x_1 + ... + x_k``; fBm at integer times from its increments."""
    values = x.values if isinstance(x, SamplePath) else np.asarray(x, dtype=float)
    return np.cumsum(values, axis=0)


def fgn_from_fbm_path(b) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    return np.diff(b, axis=0, prepend=np.zeros((1,) + b.shape[1:]))


@dataclass(frozen=True)
class QuadraticFormSpectrum:
    """Eigenvalues of ``G^{1/2} A G^{1/2}``; ``<Y, A Y>`` is a weighted chi-square sum."""

    eigenvalues: np.ndarray
    n: int

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draws from ``sum_j lambda_j chi2_1``."""
        chi = rng.standard_normal((size, self.n)) ** 2
        return chi @ self.eigenvalues


def quadratic_form_spectrum(gamma, A) -> QuadraticFormSpectrum:
    """Spectrum of ``G^{1/2} A G^{1/2}`` (same as ``L' A L`` with ``G = L L'``)."""
    G = gamma.dense() if isinstance(gamma, SymmetricToeplitz) else np.asarray(gamma, dtype=float)
    A = np.asarray(A, dtype=float)
    n = G.shape[0]
    if n > 512:
        raise ValueError("quadratic_form_spectrum is limited to n <= 512")
    if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.max(np.abs(A)))):
        raise ValueError("A must be symmetric")
    L = cholesky(G).lower
    M = L.T @ A @ L
    lam = linalg.eigvalsh(0.5 * (M + M.T))
    return QuadraticFormSpectrum(lam, n)
