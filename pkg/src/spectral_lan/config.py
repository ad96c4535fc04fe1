"""INI configuration shared by all subcommands.

Every section and key is declared in ``SCHEMA`` with a parser; anything else
is rejected with :class:`ConfigError`.  Overrides use dotted paths
(``experiment.replications=500``).
"""

from __future__ import annotations

import configparser
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .quadrature import QuadSpec


def _int(s):
    return int(s.strip())


def _float(s):
    return float(s.strip())


def _str(s):
    return s.strip()


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s):
    s = s.strip()
    return tuple(float(v) for v in s.split(",")) if s else ()


def _ints(s):
    s = s.strip()
    return tuple(int(v) for v in s.split(",")) if s else ()


def _strs(s):
    return tuple(v.strip() for v in s.split(",") if v.strip())


def _points(s):
    """Semicolon-separated points, each a comma-separated vector."""
    s = s.strip()
    if not s:
        return ()
    return tuple(_floats(p) for p in s.split(";") if p.strip())


def _model_keys():
    return {"layout": _str, "theta": _floats, "p": _int, "q": _int, "k_tail": _int,
            "derivative_scheme": _str}


SCHEMA = {
    "model": _model_keys(),
    "f_model": _model_keys(),
    "g_model": _model_keys(),
    "quadrature": {"depth": _int, "order": _int, "tol": _float, "max_order": _int,
                   "max_depth": _int, "atol": _float},
    "run": {"seed": _int, "workers": _int},
    "simulate": {"n": _int, "method": _str},
    "data": {"path": _str},
    "loglik": {"theta1": _floats},
    "experiment": {"n_ladder": _ints, "replications": _int, "t_grid": _points, "r": _float,
                   "delta": _float, "statistics": _strs, "block_size": _int, "sampler": _str,
                   "directions": _points},
    "trace_limit": {"g": _ints, "p": _ints, "n_ladder": _ints, "delta": _float},
    "bounds": {"n_ladder": _ints, "delta": _float, "thetas": _points, "x_min": _float,
               "x_max": _float, "x_count": _int, "x_spacing": _str},
    "gates": {"score_mean_se": _float, "score_cov_rel": _float, "ks_pvalue": _float,
              "hessian_rel": _float, "failure_rate": _float, "require_decreasing": _bool,
              "trace_max_deviation": _float},
}

DEFAULTS = {
    "model": {"p": 0, "q": 0, "k_tail": 2000, "derivative_scheme": "analytic"},
    "run": {"seed": 0, "workers": 1},
    "simulate": {"method": "cholesky"},
    "experiment": {"r": 0.05, "delta": 0.05, "statistics": ("score", "hessian", "remainder"),
                   "block_size": 25, "sampler": "cholesky"},
    "trace_limit": {"g": (), "p": (1, 2, 3), "delta": 0.05},
    "bounds": {"delta": 0.05, "x_min": 1e-4, "x_max": float(np.pi), "x_count": 200,
               "x_spacing": "log"},
    "gates": {"score_mean_se": 4.0, "failure_rate": 0.01, "require_decreasing": True},
}
for _sec in ("f_model", "g_model"):
    DEFAULTS[_sec] = dict(DEFAULTS["model"])


class Config:
    """Parsed, validated configuration: ``cfg.get("experiment", "replications")``."""

    def __init__(self, values: dict):
        self.values = values

    def has(self, section, key=None):
        if section not in self.values:
            return False
        return key is None or key in self.values[section]

    def get(self, section, key, default=None, required=False):
        sec = self.values.get(section, {})
        if key in sec:
            return sec[key]
        if key in DEFAULTS.get(section, {}):
            return DEFAULTS[section][key]
        if required:
            raise ConfigError(f"missing required key {section}.{key}")
        return default

    def section(self, name):
        out = dict(DEFAULTS.get(name, {}))
        out.update(self.values.get(name, {}))
        return out

    def quad(self) -> QuadSpec:
        return QuadSpec(**self.values.get("quadrature", {}))


def _parse_value(section, key, raw):
    if section not in SCHEMA:
        raise ConfigError(f"unknown section [{section}]")
    parsers = SCHEMA[section]
    if key not in parsers:
        raise ConfigError(f"unknown key {section}.{key}")
    try:
        return parsers[key](raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid value for {section}.{key}: {raw!r} ({exc})") from None


def load_config(path=None, overrides=()) -> Config:
    """Read an INI file (optional) and apply ``section.key=value`` overrides."""
    values: dict = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, strict=True)
        parser.optionxform = str
        try:
            text = Path(path).read_text()
            parser.read_string(text, source=str(path))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]")
            for key, raw in parser.items(section):
                values.setdefault(section, {})[key] = _parse_value(section, key, raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        lhs, raw = item.split("=", 1)
        if "." not in lhs:
            raise ConfigError(f"override key must be section.key, got {lhs!r}")
        section, key = lhs.strip().split(".", 1)
        values.setdefault(section, {})[key] = _parse_value(section, key, raw)
    return Config(values)
