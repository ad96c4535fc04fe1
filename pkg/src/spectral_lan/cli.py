"""Command-line entry point.

Exit codes: 0 success, 1 a gated check failed, 2 configuration error,
3 numerical failure (factorization or quadrature).
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import Config, load_config
from .errors import ConfigError, DomainError, QuadratureError
from .io import atomic_write, csv_text, dumps

EXIT_OK, EXIT_GATE, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

COMMANDS = {
    "simulate": "draw one sample path of the configured model",
    "loglik": "exact Gaussian log-likelihood (and ratio) of a data file",
    "score": "normalized score Z_n of a data file at the model parameters",
    "fisher": "Fisher information matrix by quadrature",
    "lan-verify": "Monte Carlo check of the LAN expansion",
    "trace-limit": "Toeplitz trace functionals against their spectral limits",
    "norm-bound": "growth exponent of Toeplitz norm ratios",
    "check-bounds": "empirical envelope constants of the density and its partials",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI configuration file")
    common.add_argument("--out", metavar="DIR", default=".", help="output directory (default: .)")
    common.add_argument("--seed", metavar="U64", type=int, help="master seed (overrides run.seed)")
    common.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                        dest="overrides", help="override a config entry, e.g. model.theta=1,0.7")
    common.add_argument("--workers", metavar="N", type=int,
                        help="worker threads (default: run.workers or logical cores)")
    parser = argparse.ArgumentParser(
        prog="spectral-lan",
        description="Toeplitz likelihoods and LAN diagnostics for stationary Gaussian models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    for name, text in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


# ---------------------------------------------------------------------------
# helpers


def _model(cfg: Config, section="model"):
    from .spectral_models import make_model
    sec = cfg.section(section)
    if "layout" not in sec:
        raise ConfigError(f"missing required key {section}.layout")
    if "theta" not in sec:
        raise ConfigError(f"missing required key {section}.theta")
    try:
        model = make_model(sec["layout"], p=sec["p"], q=sec["q"], k_tail=sec["k_tail"],
                           derivative_scheme=sec["derivative_scheme"])
        theta = model.check(sec["theta"])
    except (ValueError, DomainError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from None
    return model, theta


def _seed(args, cfg):
    return int(args.seed) if args.seed is not None else int(cfg.get("run", "seed"))


def _workers(args, cfg):
    if args.workers is not None:
        return max(1, args.workers)
    w = cfg.get("run", "workers")
    return max(1, int(w)) if w is not None else (os.cpu_count() or 1)


def _read_data(cfg):
    path = cfg.get("data", "path", required=True)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read data file {path}: {exc}") from None
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ConfigError(f"data file {path} is empty")
    col = 0
    try:
        float(rows[0][-1])
    except ValueError:
        header = [h.strip() for h in rows[0]]
        if "value" not in header:
            raise ConfigError(f"data file {path}: header needs a 'value' column") from None
        col = header.index("value")
        rows = rows[1:]
    else:
        col = len(rows[0]) - 1
    try:
        return np.array([float(r[col]) for r in rows if r])
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"data file {path}: {exc}") from None


class Gates:
    def __init__(self):
        self.results = []

    _NEGATED = {" <= ": " > ", " < ": " >= "}

    def check(self, name, ok, detail):
        """Record a gate; ``detail`` states the passing comparison, flipped on failure."""
        self.results.append((name, bool(ok)))
        if not ok:
            for op, neg in self._NEGATED.items():
                if op in detail:
                    detail = detail.replace(op, neg)
                    break
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")

    @property
    def passed(self):
        return all(ok for _, ok in self.results)


def _decreasing_or_zero(meds):
    from .harness import strictly_decreasing
    if meds and all(m == 0 for m in meds):
        return True
    return len(meds) < 2 or strictly_decreasing(meds)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args, cfg, out):
    from .sampler import sample_cholesky, sample_fgn_circulant
    from .spectral_models import FractionalGaussianNoise
    model, theta = _model(cfg)
    n = cfg.get("simulate", "n", required=True)
    if n < 1:
        raise ConfigError("simulate.n must be positive")
    method = cfg.get("simulate", "method")
    seed = _seed(args, cfg)
    if method == "circulant":
        if not isinstance(model, FractionalGaussianNoise):
            raise ConfigError("simulate.method = circulant requires the fgn layout")
        path = sample_fgn_circulant(theta[0], theta[1], n, seed)
    elif method == "cholesky":
        path = sample_cholesky(model, theta, n, seed)
    else:
        raise ConfigError(f"simulate.method must be cholesky or circulant, got {method!r}")
    atomic_write(out / "path.csv", path.to_csv())
    atomic_write(out / "path.json", path.sidecar())
    print(f"simulate: wrote {n} values ({model.layout}, {method}, seed {seed}) to "
          f"{out / 'path.csv'}")
    return EXIT_OK


def cmd_loglik(args, cfg, out):
    from .likelihood import log_density, log_likelihood_ratio
    model, theta = _model(cfg)
    x = _read_data(cfg)
    quad = cfg.quad()
    result = {"model": model.layout, "theta": theta.tolist(), "n": int(x.size),
              "log_density": float(log_density(x, model, theta, quad))}
    theta1 = cfg.get("loglik", "theta1")
    if theta1:
        try:
            theta1 = model.check(theta1)
        except DomainError as exc:
            raise ConfigError(f"loglik.theta1: {exc}") from None
        result["theta1"] = theta1.tolist()
        result["log_likelihood_ratio"] = float(log_likelihood_ratio(x, model, theta1, theta, quad))
    atomic_write(out / "loglik.json", dumps(result))
    print(f"loglik: log density {result['log_density']:.10g} at n = {x.size}")
    return EXIT_OK


def cmd_score(args, cfg, out):
    from .likelihood import score
    model, theta = _model(cfg)
    x = _read_data(cfg)
    z = score(x, theta, model, cfg.quad())
    result = {"model": model.layout, "names": list(model.names), "theta0": list(z.theta0),
              "n": z.n, "score": z.values.tolist()}
    atomic_write(out / "score.json", dumps(result))
    print(f"score: Z_n = {np.array2string(z.values, precision=6)} at n = {z.n}")
    return EXIT_OK


def cmd_fisher(args, cfg, out):
    from .likelihood import fisher_information
    model, theta = _model(cfg)
    fm = fisher_information(model, theta, cfg.quad())
    atomic_write(out / "fisher.json", fm.to_json())
    print(f"fisher: I = {np.array2string(fm.matrix, precision=8)}")
    return EXIT_OK


def cmd_lan_verify(args, cfg, out):
    from .harness import ExperimentConfig, run_lan_experiment
    model, theta = _model(cfg)
    sec = cfg.section("experiment")
    for key in ("n_ladder", "replications"):
        if key not in sec:
            raise ConfigError(f"missing required key experiment.{key}")
    try:
        ec = ExperimentConfig(
            model, theta, sec["n_ladder"], sec["replications"], seed=_seed(args, cfg),
            t_grid=np.array(sec["t_grid"]) if sec.get("t_grid") else None,
            delta=sec["delta"], r=sec["r"], statistics=tuple(sec["statistics"]),
            directions=np.array(sec["directions"]) if sec.get("directions") else None,
            block_size=sec["block_size"], sampler=sec["sampler"], quad=cfg.quad())
    except ValueError as exc:
        raise ConfigError(f"[experiment]: {exc}") from None
    report = run_lan_experiment(ec, workers=_workers(args, cfg))
    atomic_write(out / "lan_report.json", report.to_json())
    atomic_write(out / "lan_summary.csv", _lan_csv(report))

    gates = Gates()
    g = cfg.section("gates")
    rate = report.failures["rate"]
    gates.check("failure_rate", rate < g["failure_rate"],
                f"{rate:.4g} < {g['failure_rate']:g}")
    for row in report.per_n:
        sc = row.get("score")
        if sc is None:
            continue
        n = row["n"]
        gates.check(f"score_mean[n={n}]", sc["max_abs_mean_over_se"] <= g["score_mean_se"],
                    f"max |mean|/SE = {sc['max_abs_mean_over_se']:.4g} <= {g['score_mean_se']:g}")
        if "score_cov_rel" in g:
            v = sc["relative_spectral_distance"]
            gates.check(f"score_covariance[n={n}]", v <= g["score_cov_rel"],
                        f"||Cov - I|| / ||I|| = {v:.4g} <= {g['score_cov_rel']:g}")
        if "ks_pvalue" in g:
            pv = [k["pvalue"] for k in sc["ks"] if k["pvalue"] is not None]
            if pv:
                gates.check(f"score_ks[n={n}]", min(pv) > g["ks_pvalue"],
                            f"min p-value = {min(pv):.4g} > {g['ks_pvalue']:g}")
    last = report.per_n[-1]
    if "hessian_rel" in g and "hessian" in last:
        v = last["hessian"]["relative_median"]
        gates.check(f"hessian[n={last['n']}]", v is not None and v <= g["hessian_rel"],
                    f"median ||H/n + I|| / ||I|| = {v} <= {g['hessian_rel']:g}")
    if g["require_decreasing"]:
        for key in ("hessian", "remainder", "third"):
            if key in report.trends:
                meds = report.trends[key]["medians"]
                gates.check(f"{key}_trend", _decreasing_or_zero(meds),
                            "medians " + ", ".join("%.4g" % m if m is not None else "nan"
                                                   for m in meds))
    print(f"lan-verify: report written to {out / 'lan_report.json'}")
    return EXIT_OK if gates.passed else EXIT_GATE


def _lan_csv(report):
    rows = []
    for row in report.per_n:
        for key in ("hessian", "remainder", "third"):
            if key in row:
                s = row[key]
                rows.append([row["n"], key, s["count"],
                             *(float("nan") if v is None else v for v in
                               [s["median"]] + list(s["quantiles"].values()))])
    head = ["n", "statistic", "count", "median"] + [f"q{q}" for q in
                                                    ("10", "25", "50", "75", "90")]
    return csv_text(head, [[r[0], r[1], r[2]] + r[3:] for r in rows])


def cmd_trace_limit(args, cfg, out):
    from .harness import run_trace_limit_experiment
    model, theta = _model(cfg)
    sec = cfg.section("trace_limit")
    if "n_ladder" not in sec:
        raise ConfigError("missing required key trace_limit.n_ladder")
    g = tuple(sec["g"])
    if any(i < 0 or i >= model.dim for i in g) or len(g) > 3:
        raise ConfigError(f"trace_limit.g must hold 0 to 3 indices below {model.dim}")
    if any(p not in (1, 2, 3) for p in sec["p"]):
        raise ConfigError("trace_limit.p entries must be 1, 2 or 3")
    tables = [run_trace_limit_experiment(model, theta, g, p, sec["n_ladder"], cfg.quad(),
                                         sec["delta"], workers=_workers(args, cfg))
              for p in sec["p"]]
    atomic_write(out / "trace_limit.json", dumps({"schema_version": "1.0", "kind": "trace_limit",
                                                  "tables": [t.to_dict() for t in tables]}))
    atomic_write(out / "trace_limit.csv", csv_text(
        ["p", "n", "trace", "integral", "deviation"],
        [[t.p, r["n"], r["trace"], r["integral"], r["deviation"]] for t in tables
         for r in t.rows]))
    gates = Gates()
    gsec = cfg.section("gates")
    for t in tables:
        devs = t.deviations
        if gsec["require_decreasing"]:
            gates.check(f"trace_trend[p={t.p}]", _decreasing_or_zero(devs),
                        "deviations " + ", ".join("%.3g" % d for d in devs))
        if "trace_max_deviation" in gsec:
            gates.check(f"trace_final[p={t.p}]", devs[-1] <= gsec["trace_max_deviation"],
                        f"{devs[-1]:.4g} <= {gsec['trace_max_deviation']:g}")
    return EXIT_OK if gates.passed else EXIT_GATE


def cmd_norm_bound(args, cfg, out):
    from .harness import run_norm_bound_experiment
    fm, tf = _model(cfg, "f_model")
    gm, tg = _model(cfg, "g_model")
    sec = cfg.section("bounds")
    if "n_ladder" not in sec:
        raise ConfigError("missing required key bounds.n_ladder")
    rec = run_norm_bound_experiment(fm, tf, gm, tg, sec["n_ladder"], sec["delta"], cfg.quad(),
                                    workers=_workers(args, cfg))
    atomic_write(out / "norm_bound.json", dumps(rec.to_dict()))
    gates = Gates()
    gates.check("norm_exponent", rec.passed, f"slope {rec.slope:.4g} <= {rec.threshold:.4g}")
    return EXIT_OK if gates.passed else EXIT_GATE


def cmd_check_bounds(args, cfg, out):
    from .spectral_models import make_grid, verify_assumption_bounds
    model, theta = _model(cfg)
    sec = cfg.section("bounds")
    thetas = np.array(sec["thetas"]) if sec.get("thetas") else theta[None, :]
    try:
        grid = make_grid(sec["x_min"], sec["x_max"], sec["x_count"], sec["x_spacing"])
        for th in thetas:
            model.check(th)
    except (ValueError, DomainError) as exc:
        raise ConfigError(f"[bounds]: {exc}") from None
    rep = verify_assumption_bounds(model, thetas, sec["delta"], grid)
    atomic_write(out / "bounds.json", dumps(rep.to_dict()))
    gates = Gates()
    gates.check("envelope", rep.passed,
                f"c1 = {rep.c1_density:.4g}, c2 = {rep.c2_density:.4g}, "
                f"c2_x = {rep.c2_x_partial:.4g}, c2_theta = {rep.c2_theta_partials:.4g}")
    return EXIT_OK if gates.passed else EXIT_GATE


HANDLERS = {
    "simulate": cmd_simulate, "loglik": cmd_loglik, "score": cmd_score, "fisher": cmd_fisher,
    "lan-verify": cmd_lan_verify, "trace-limit": cmd_trace_limit, "norm-bound": cmd_norm_bound,
    "check-bounds": cmd_check_bounds,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        out = Path(args.out)
        return HANDLERS[args.command](args, cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (np.linalg.LinAlgError, QuadratureError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
