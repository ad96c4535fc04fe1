"""Monte Carlo experiments for the LAN expansion, trace limits and norm growth.

All random numbers of replication ``r`` at sample size ``n`` come from the
stream ``(seed, STREAM_LAN, n, r)``.  Replications are processed in blocks of
a fixed size and reduced in block order, so reports do not depend on the
number of worker threads.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from threadpoolctl import threadpool_limits

from .errors import NotPositiveDefiniteError
from .likelihood import LikelihoodState, fisher_information
from .quadrature import DEFAULT_QUAD, QuadSpec
from .sampler import rng_for
from .spectral_models import FractionalGaussianNoise, SpectralModel
from .toeplitz_algebra import (model_autocovariances, spectral_limit_integral, toeplitz_norm_ratio,
                               trace_product)

SCHEMA_VERSION = "1.0"
STREAM_LAN = 1
QUANTILES = (0.1, 0.25, 0.5, 0.75, 0.9)
STATISTICS = ("score", "hessian", "remainder", "third")


def default_t_grid(dim: int, points: int = 9) -> np.ndarray:
    """``points`` directions on the unit sphere, the origin, and ``+-2 e_i``."""
    if dim == 1:
        unit = np.array([[1.0], [-1.0]])
    else:
        # spread points with a fixed golden-angle sequence, then project to the sphere
        k = np.arange(points)
        ang = k * np.pi * (3.0 - np.sqrt(5.0))
        unit = np.zeros((points, dim))
        unit[:, 0] = np.cos(ang)
        unit[:, 1] = np.sin(ang)
        if dim > 2:
            rng = np.random.Generator(np.random.Philox(0))
            unit[:, 2:] = 0.5 * rng.standard_normal((points, dim - 2))
        unit /= np.linalg.norm(unit, axis=1, keepdims=True)
    far = 2.0 * np.vstack([np.eye(dim), -np.eye(dim)])
    return np.vstack([unit, np.zeros((1, dim)), far])


def theta_grid(theta0, r: float) -> np.ndarray:
    """``theta0 + r s / sqrt(m)`` for s in {-1, 0, 1}^m (inside the closed r-ball)."""
    th = np.asarray(theta0, dtype=float)
    m = th.size
    steps = np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=m)))
    return th + r * steps / np.sqrt(m)


@dataclass
class ExperimentConfig:
    """Settings of :func:`run_lan_experiment`."""

    model: SpectralModel
    theta0: tuple
    n_ladder: tuple
    replications: int
    seed: int = 0
    t_grid: np.ndarray | None = None
    delta: float = 0.05
    r: float = 0.05
    statistics: tuple = ("score", "hessian", "remainder")
    directions: np.ndarray | None = None
    block_size: int = 25
    sampler: str = "cholesky"
    quad: QuadSpec = DEFAULT_QUAD

    def __post_init__(self):
        self.theta0 = tuple(float(v) for v in self.model.check(self.theta0))
        self.n_ladder = tuple(int(n) for n in self.n_ladder)
        m = self.model.dim
        if not self.n_ladder or any(b <= a for a, b in zip(self.n_ladder, self.n_ladder[1:])):
            raise ValueError("n_ladder must be non-empty and strictly increasing")
        if self.n_ladder[0] < 2:
            raise ValueError("sample sizes must be at least 2")
        if self.replications < 1:
            raise ValueError("replications must be positive")
        if self.block_size < 1:
            raise ValueError("block_size must be positive")
        unknown = set(self.statistics) - set(STATISTICS)
        if unknown:
            raise ValueError(f"unknown statistics {sorted(unknown)}")
        self.t_grid = (default_t_grid(m) if self.t_grid is None
                       else np.asarray(self.t_grid, dtype=float).reshape(-1, m))
        if self.directions is None:
            dirs = list(np.eye(m))
            if m > 1:
                dirs.append(np.ones(m) / np.sqrt(m))
            self.directions = np.array(dirs)
        self.directions = np.asarray(self.directions, dtype=float).reshape(-1, m)
        if self.sampler not in ("cholesky", "circulant"):
            raise ValueError("sampler must be 'cholesky' or 'circulant'")
        if self.sampler == "circulant" and not isinstance(self.model, FractionalGaussianNoise):
            raise ValueError("the circulant sampler is available for fGn only")

    def domain_exits(self):
        """t-grid points with theta0 + t/sqrt(n) outside the domain at the smallest n."""
        n = self.n_ladder[0]
        th0 = np.asarray(self.theta0)
        return [tuple(t) for t in self.t_grid if not self.model.in_domain(th0 + t / np.sqrt(n))]

    def to_dict(self):
        return {
            "model": self.model.layout,
            "model_options": _model_options(self.model),
            "names": list(self.model.names),
            "theta0": list(self.theta0),
            "n_ladder": list(self.n_ladder),
            "replications": self.replications,
            "seed": self.seed,
            "t_grid": self.t_grid.tolist(),
            "delta": self.delta,
            "r": self.r,
            "statistics": list(self.statistics),
            "directions": self.directions.tolist(),
            "block_size": self.block_size,
            "sampler": self.sampler,
            "quadrature": self.quad.to_dict(),
        }


def _model_options(model):
    opts = {}
    for name in ("p", "q", "k_tail", "derivative_scheme"):
        if hasattr(model, name):
            opts[name] = getattr(model, name)
    return opts


def _summary(values):
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return {"count": 0, "median": None, "mean": None,
                "quantiles": {str(q): None for q in QUANTILES}}
    return {"count": int(v.size), "median": float(np.median(v)), "mean": float(np.mean(v)),
            "quantiles": {str(q): float(np.quantile(v, q)) for q in QUANTILES}}


@dataclass(frozen=True)
class KsResult:
    statistic: float
    pvalue: float


def ks_statistic(samples, cdf=stats.norm.cdf) -> KsResult:
    """One-sample Kolmogorov-Smirnov statistic and asymptotic p-value."""
    samples = np.asarray(samples, dtype=float).reshape(-1)
    if samples.size < 50:
        raise ValueError(f"ks_statistic needs at least 50 samples, got {samples.size}")
    res = stats.kstest(samples, cdf, method="asymp")
    return KsResult(float(res.statistic), float(res.pvalue))


def strictly_decreasing(values) -> bool:
    v = [x for x in values]
    if any(x is None or not np.isfinite(x) for x in v):
        return False
    return all(b < a for a, b in zip(v, v[1:]))


@dataclass
class LanReport:
    config: dict
    fisher: list
    per_n: list = field(default_factory=list)
    trends: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, "kind": "lan", "config": self.config,
                "fisher": self.fisher, "per_n": self.per_n, "trends": self.trends,
                "failures": self.failures}

    def to_json(self):
        from .io import dumps
        return dumps(self.to_dict())

    def row(self, n):
        for r in self.per_n:
            if r["n"] == n:
                return r
        raise KeyError(n)


class _Runner:
    def __init__(self, workers):
        self.workers = max(1, int(workers))

    def map(self, fn, items):
        items = list(items)
        if self.workers == 1 or len(items) <= 1:
            return [fn(i) for i in items]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(fn, items))


def _blocks(R, size):
    return [(s, min(R, s + size)) for s in range(0, R, size)]


def _sample_block(cfg, n, lower, lags, block):
    lo, hi = block
    if cfg.sampler == "circulant":
        from .sampler import sample_fgn_circulant
        sigma2, H = cfg.theta0
        return np.column_stack([sample_fgn_circulant(sigma2, H, n, cfg.seed,
                                                     (STREAM_LAN, n, r)).values
                                for r in range(lo, hi)])
    Z = np.column_stack([rng_for(cfg.seed, STREAM_LAN, n, r).standard_normal(n)
                         for r in range(lo, hi)])
    return lower @ Z


def run_lan_experiment(cfg: ExperimentConfig, workers: int = 1) -> LanReport:
    """Simulate under theta0 and collect LAN statistics along the n-ladder."""
    with threadpool_limits(limits=1):
        return _run_lan(cfg, _Runner(workers))


def _run_lan(cfg, runner):
    model = cfg.model
    m = model.dim
    th0 = np.asarray(cfg.theta0)
    I = fisher_information(model, th0, cfg.quad).matrix
    I_norm = float(np.linalg.norm(I, 2))
    want = set(cfg.statistics)
    order = 2 if "hessian" in want else (1 if want & {"score", "remainder"} else 0)
    report = LanReport(cfg.to_dict(), I.tolist())
    totals = {"domain_exit": 0, "not_positive_definite": 0, "nonfinite": 0}
    cells_total = 0
    R = cfg.replications
    blocks = _blocks(R, cfg.block_size)

    for n in cfg.n_ladder:
        row = {"n": n}
        fail = {"domain_exit": 0, "not_positive_definite": 0, "nonfinite": 0}
        state0 = LikelihoodState(model, th0, n, order, cfg.quad)
        lower = state0.factor.lower
        X = np.concatenate(runner.map(lambda b: _sample_block(cfg, n, lower, None, b), blocks),
                           axis=1)
        q0 = np.concatenate(runner.map(lambda b: state0.quad_form(X[:, b[0]:b[1]]), blocks))

        Z = None
        if want & {"score", "remainder"}:
            G = np.concatenate(runner.map(lambda b: state0.grad(X[:, b[0]:b[1]]), blocks), axis=1)
            Z = G / np.sqrt(n)
        if "score" in want:
            cells_total += R
            bad = ~np.all(np.isfinite(Z), axis=0)
            fail["nonfinite"] += int(bad.sum())
            Zg = Z[:, ~bad]
            mean = Zg.mean(axis=1)
            cov = np.cov(Zg) if Zg.shape[1] > 1 else np.full((m, m), np.nan)
            cov = np.atleast_2d(cov)
            se = Zg.std(axis=1, ddof=1) / np.sqrt(Zg.shape[1])
            ks = []
            for u in cfg.directions:
                s = (u @ Zg) / np.sqrt(u @ I @ u)
                res = ks_statistic(s) if s.size >= 100 else None
                ks.append({"direction": u.tolist(),
                           "statistic": None if res is None else res.statistic,
                           "pvalue": None if res is None else res.pvalue})
            row["score"] = {
                "mean": mean.tolist(), "standard_error": se.tolist(),
                "max_abs_mean_over_se": float(np.max(np.abs(mean) / se)),
                "covariance": cov.tolist(),
                "spectral_distance": float(np.linalg.norm(cov - I, 2)),
                "frobenius_distance": float(np.linalg.norm(cov - I, "fro")),
                "relative_spectral_distance": float(np.linalg.norm(cov - I, 2) / I_norm),
                "ks": ks,
            }
        if "hessian" in want:
            cells_total += R

            def hess_block(b):
                Hb = state0.hessian(X[:, b[0]:b[1]])
                return np.array([np.linalg.norm(Hb[:, :, i] / n + I, 2)
                                 for i in range(Hb.shape[2])])

            dist = np.concatenate(runner.map(hess_block, blocks))
            fail["nonfinite"] += int(np.sum(~np.isfinite(dist)))
            row["hessian"] = _summary(dist)
            row["hessian"]["relative_median"] = (None if row["hessian"]["median"] is None else
                                                 row["hessian"]["median"] / I_norm)
        state0.release()

        if "remainder" in want:
            sup = np.zeros(R)
            used = 0
            for t in cfg.t_grid:
                cells_total += R
                th = th0 + t / np.sqrt(n)
                if not model.in_domain(th):
                    fail["domain_exit"] += R
                    continue
                try:
                    st = LikelihoodState(model, th, n, 0, cfg.quad)
                except NotPositiveDefiniteError:
                    fail["not_positive_definite"] += R
                    continue
                q = np.concatenate(runner.map(lambda b: st.quad_form(X[:, b[0]:b[1]]), blocks))
                ratio = 0.5 * (q0 - q) + 0.5 * (state0.logdet - st.logdet)
                psi = ratio - t @ Z + 0.5 * t @ I @ t
                bad = ~np.isfinite(psi)
                fail["nonfinite"] += int(bad.sum())
                sup = np.fmax(sup, np.where(bad, np.nan, np.abs(psi)))
                used += 1
                del st
            row["remainder"] = _summary(sup if used else np.full(R, np.nan))
            row["remainder"]["t_points_used"] = used

        if "third" in want:
            best = np.zeros(R)
            triples = list(itertools.combinations_with_replacement(range(m), 3))
            for th in theta_grid(th0, cfg.r):
                cells_total += R
                if not model.in_domain(th):
                    fail["domain_exit"] += R
                    continue
                try:
                    st = LikelihoodState(model, th, n, 3, cfg.quad)
                except NotPositiveDefiniteError:
                    fail["not_positive_definite"] += R
                    continue
                for ix in triples:
                    vals = np.concatenate(runner.map(lambda b: st.third(X[:, b[0]:b[1]], ix),
                                                     blocks))
                    best = np.fmax(best, np.abs(vals))
                st.release()
                del st
            row["third"] = _summary(best / n ** 1.5)

        row["failures"] = fail
        for k, v in fail.items():
            totals[k] += v
        report.per_n.append(row)
        del X

    trends = {}
    for key in ("hessian", "remainder", "third"):
        if key in want:
            meds = [r[key]["median"] for r in report.per_n]
            trends[key] = {"medians": meds, "strictly_decreasing": strictly_decreasing(meds)}
    if "score" in want:
        d = [r["score"]["spectral_distance"] for r in report.per_n]
        trends["score_covariance"] = {
            "spectral_distances": d,
            "nonincreasing": all(b <= a for a, b in zip(d, d[1:]))}
    report.trends = trends
    total_fail = sum(totals.values())
    report.failures = dict(totals, cells=cells_total,
                           rate=(total_fail / cells_total) if cells_total else 0.0)
    return report


# ---------------------------------------------------------------------------
# trace limits


@dataclass
class TraceLimitTable:
    model: str
    theta0: tuple
    g: tuple
    p: int
    rows: list
    integral: float

    @property
    def deviations(self):
        return [r["deviation"] for r in self.rows]

    @property
    def decreasing(self):
        return strictly_decreasing(self.deviations)

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, "kind": "trace_limit", "model": self.model,
                "theta0": list(self.theta0), "g": list(self.g), "p": self.p,
                "integral": self.integral, "rows": self.rows,
                "strictly_decreasing": self.decreasing,
                "final_deviation": self.rows[-1]["deviation"] if self.rows else None}


def run_trace_limit_experiment(model: SpectralModel, theta0, g, p: int, n_ladder,
                               quad: QuadSpec = DEFAULT_QUAD, delta: float = 0.05,
                               workers: int = 1) -> TraceLimitTable:
    """Deviation of ``(1/n) tr[(T_n(f)^{-1} T_n(g))^p]`` from its spectral limit.

    ``g`` is a sorted index tuple selecting a theta-partial of f; ``()`` means
    g = f.
    """
    th = model.check(theta0)
    g = tuple(sorted(g))
    if p not in (1, 2, 3):
        raise ValueError("p must be 1, 2 or 3")
    alpha = model.alpha(th)
    beta = alpha if g == () else alpha + delta

    def fx(x):
        return model.density(th, x)

    def gx(x):
        return model.density(th, x) if g == () else model.partial(th, x, g)

    integral = spectral_limit_integral(fx, [gx] * p, quad, alpha=alpha, beta=beta)

    def one(n):
        with threadpool_limits(limits=1):
            acv = model_autocovariances(model, th, n, [(), g], quad)
            tr = trace_product(acv[()], [acv[g]] * p, n, quad)
        return {"n": n, "trace": tr, "integral": integral, "deviation": abs(tr - integral)}

    rows = _Runner(workers).map(one, [int(n) for n in n_ladder])
    return TraceLimitTable(model.layout, tuple(th.tolist()), g, p, rows, integral)


# ---------------------------------------------------------------------------
# norm growth


@dataclass
class NormBoundRecord:
    f_model: str
    theta_f: tuple
    g_model: str
    theta_g: tuple
    ns: list
    norms: list
    converged: list
    slope: float
    beta1: float
    beta2: float
    threshold: float

    @property
    def passed(self):
        return bool(np.isfinite(self.slope) and self.slope <= self.threshold)

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, "kind": "norm_bound",
                "f_model": self.f_model, "theta_f": list(self.theta_f),
                "g_model": self.g_model, "theta_g": list(self.theta_g),
                "n": self.ns, "norms": self.norms, "converged": self.converged,
                "slope": self.slope, "beta1": self.beta1, "beta2": self.beta2,
                "threshold": self.threshold, "passed": self.passed}


def run_norm_bound_experiment(f_model: SpectralModel, theta_f, g_model: SpectralModel, theta_g,
                              n_ladder, delta: float = 0.05, quad: QuadSpec = DEFAULT_QUAD,
                              workers: int = 1, tol: float = 1e-8,
                              iterations: int = 20000) -> NormBoundRecord:
    """Growth exponent of ``||T_n(f)^{-1/2} T_n(g)^{1/2}||`` in n.

    The exponent is the least-squares slope of log norm against log n and is
    compared with ``max((beta2 - beta1) / 2, 0) + 0.1`` where
    ``beta1 = alpha_f - delta`` and ``beta2 = alpha_g + delta``.
    """
    tf, tg = f_model.check(theta_f), g_model.check(theta_g)
    ns = [int(n) for n in n_ladder]

    def one(n):
        with threadpool_limits(limits=1):
            fl = model_autocovariances(f_model, tf, n, [()], quad)[()]
            gl = model_autocovariances(g_model, tg, n, [()], quad)[()]
            return toeplitz_norm_ratio(fl, gl, n, iterations=iterations, tol=tol)

    ests = _Runner(workers).map(one, ns)
    norms = [e.value for e in ests]
    slope = float(np.polyfit(np.log(ns), np.log(norms), 1)[0]) if len(ns) > 1 else float("nan")
    beta1 = f_model.alpha(tf) - delta
    beta2 = g_model.alpha(tg) + delta
    threshold = max((beta2 - beta1) / 2.0, 0.0) + 0.1
    return NormBoundRecord(f_model.layout, tuple(tf.tolist()), g_model.layout,
                           tuple(tg.tolist()), ns, norms, [e.converged for e in ests], slope,
                           beta1, beta2, threshold)
