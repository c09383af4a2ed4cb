"""Flat INI configuration with strict key checking and full defaults.

Every key has a documented default (see DEFAULTS and the README table); a
config file only overrides what it names.  Unknown sections or keys are
rejected so typos cannot silently fall back to defaults.  Values are coerced
by the type of their default; empty values mean "use the default".  The
resolved configuration can be written back out and re-parsed to reproduce a
run exactly.
"""

from __future__ import annotations

import configparser
import copy

import numpy as np

from .dynamics import Nonlinearity, nonlinearity_from_spec
from .spectral import CosineBasis, DiffusionSpec, DomainSpec, build_basis, diffusion

__all__ = ["ConfigError", "Config", "DEFAULTS", "load_config", "default_config"]


class ConfigError(ValueError):
    """Malformed or unknown configuration input."""


_SWEEP_DEFAULT = tuple(float(2**j) for j in range(9))

DEFAULTS = {
    "domain": {
        "components": 1,        # system size n
        "modes": 128,           # cosine modes K
        "quad_points": None,    # quadrature nodes G; empty -> 2K + 2
    },
    "diffusion": {
        "eps": (1.0,),          # diagonal diffusion coefficients
        "m0": None,             # lower bound; empty -> min(eps)
    },
    "sweep": {
        "d_eps": _SWEEP_DEFAULT,  # geometric sweep values for rate studies
    },
    "nonlinearity": {
        "name": "tanh",         # tanh | saturated_cubic | coupled_tanh | zero | linear
        "beta": 2.0,            # tanh slope
        "gamma": 2.0,           # saturated_cubic scale
        "a": 1.2,               # coupled_tanh diagonal
        "c": 0.6,               # coupled_tanh coupling / linear slope
    },
    "dynamics": {
        "dt": 1e-3,
        "horizon": 20.0,
        "scheme": "etd2rk",     # etd1 | etd2rk
        "stride": 10,           # diagnostics every this many steps
    },
    "semigroup": {
        "m_horizon": 10.0,      # horizon for the operational constants M, mu
    },
    "attractor": {
        "n_tails": 24,
        "w_amplitude": 0.3,     # L2 size of the mean-free tail perturbations
        "w_modes": 8,
        "t_trans": 1.0,
        "sample_dt": 0.01,      # arc and breadcrumb sampling interval
        "arc_dt": 5e-4,
        "longtime_seeds": 2000,
        "longtime_box": None,   # empty -> bound(F) + 1
        "t_burn": None,         # empty -> auto from the slowest stable rate
        "t_end": None,          # empty -> t_burn + 16
        "dedup_cell": 1.25e-3,
        "deflection_t_trans": 10.0,
    },
    "manifold": {
        "grid_points": 21,
        "iterations": 4,
        "seed_amplitude": 0.1,
    },
    "tolerances": {
        "slope": 0.02,          # |fitted slope + 1/2| for rate verdicts
        "attained": 1e-12,      # |gap * sqrt(d lam1 + 1) - 1|
        "decay_rel": 1e-3,      # relative rate error, linear decay case
        "seminorm_const": 1e-10,
        "projection": 1e-12,
        "contour": 1e-8,
        "hausdorff_slope": -0.4,
        "zero_floor": 1e-10,    # below this a measurement counts as zero
    },
    "run": {
        "out_root": "runs",
        "seed": 1234,
        "jobs": 1,
        "quiet": False,
    },
}

# keys whose default is None still need a concrete type for coercion
_OPTIONAL_TYPES = {
    ("domain", "quad_points"): int,
    ("diffusion", "m0"): float,
    ("attractor", "longtime_box"): float,
    ("attractor", "t_burn"): float,
    ("attractor", "t_end"): float,
}


def _coerce(section: str, key: str, raw: str):
    raw = raw.strip()
    default = DEFAULTS[section][key]
    if raw == "":
        return copy.deepcopy(default)
    kind = type(default) if default is not None else _OPTIONAL_TYPES[(section, key)]
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(f"expected a boolean, got {raw!r}")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is tuple:
            return tuple(float(part) for part in raw.split(",") if part.strip())
        return raw
    except ValueError as err:
        raise ConfigError(f"[{section}] {key}: {err}") from None


class Config:
    """Resolved configuration; sections are attribute-accessible dicts."""

    def __init__(self, data: dict):
        self.data = data

    def __getitem__(self, section: str) -> dict:
        return self.data[section]

    def get(self, section: str, key: str):
        return self.data[section][key]

    # -- derived objects ----------------------------------------------------

    def domain(self) -> DomainSpec:
        return DomainSpec(components=self.get("domain", "components"))

    def basis(self, modes: int | None = None) -> CosineBasis:
        modes = self.get("domain", "modes") if modes is None else modes
        return build_basis(self.domain(), modes, self.get("domain", "quad_points"))

    def diffusion_spec(self, eps=None) -> DiffusionSpec:
        eps = self.get("diffusion", "eps") if eps is None else eps
        eps = tuple(eps)
        n = self.get("domain", "components")
        if len(eps) == 1 and n > 1:
            eps = eps * n
        if len(eps) != n:
            raise ConfigError(f"[diffusion] eps has {len(eps)} entries for {n} components")
        return diffusion(eps, self.get("diffusion", "m0"))

    def nonlinearity(self) -> Nonlinearity:
        name = self.get("nonlinearity", "name")
        params = {
            "tanh": {"beta": self.get("nonlinearity", "beta")},
            "saturated_cubic": {"gamma": self.get("nonlinearity", "gamma")},
            "coupled_tanh": {"a": self.get("nonlinearity", "a"),
                             "c": self.get("nonlinearity", "c")},
            "linear": {"c": self.get("nonlinearity", "c")},
            "zero": {},
        }.get(name)
        if params is None:
            raise ConfigError(f"[nonlinearity] unknown name {name!r}")
        F = nonlinearity_from_spec(name, **params)
        n = self.get("domain", "components")
        if name == "coupled_tanh" and n != 2:
            raise ConfigError("[nonlinearity] coupled_tanh needs components = 2")
        return F

    def nonlinearity_spec(self) -> dict:
        F = self.nonlinearity()
        return {"name": F.name, **F.params}

    # -- persistence ---------------------------------------------------------

    def to_ini(self) -> str:
        lines = []
        for section, entries in self.data.items():
            lines.append(f"[{section}]")
            for key, value in entries.items():
                if value is None:
                    text = ""
                elif isinstance(value, bool):
                    text = "true" if value else "false"
                elif isinstance(value, tuple):
                    text = ",".join(f"{x:.17g}" for x in value)
                elif isinstance(value, float):
                    text = f"{value:.17g}"
                else:
                    text = str(value)
                lines.append(f"{key} = {text}")
            lines.append("")
        return "\n".join(lines)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_ini())


def default_config() -> Config:
    return Config(copy.deepcopy(DEFAULTS))


def load_config(path=None) -> Config:
    """Parse an INI file against DEFAULTS; unknown keys are rejected."""
    cfg = default_config()
    if path is None:
        return cfg
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"),
                                       interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except configparser.Error as err:
        raise ConfigError(f"config parse error in {path}: {err}") from None
    for section in parser.sections():
        if section not in DEFAULTS:
            known = ", ".join(DEFAULTS)
            raise ConfigError(f"unknown section [{section}]; known sections: {known}")
        for key, raw in parser.items(section):
            if key not in DEFAULTS[section]:
                known = ", ".join(DEFAULTS[section])
                raise ConfigError(f"unknown key {key!r} in [{section}]; known keys: {known}")
            cfg.data[section][key] = _coerce(section, key, raw)
    _validate(cfg)
    return cfg


def _validate(cfg: Config) -> None:
    if cfg.get("domain", "components") < 1:
        raise ConfigError("[domain] components must be >= 1")
    if cfg.get("domain", "modes") < 2:
        raise ConfigError("[domain] modes must be >= 2")
    if any(e <= 0 for e in cfg.get("diffusion", "eps")):
        raise ConfigError("[diffusion] eps entries must be positive")
    if cfg.get("dynamics", "dt") <= 0:
        raise ConfigError("[dynamics] dt must be positive")
    if cfg.get("dynamics", "scheme") not in ("etd1", "etd2rk"):
        raise ConfigError("[dynamics] scheme must be etd1 or etd2rk")
    sweep = cfg.get("sweep", "d_eps")
    if len(sweep) < 4:
        raise ConfigError("[sweep] d_eps needs at least 4 values")
    if any(b <= a for a, b in zip(sweep, sweep[1:])):
        raise ConfigError("[sweep] d_eps must be strictly increasing")
    if cfg.get("run", "jobs") < 1:
        raise ConfigError("[run] jobs must be >= 1")
    if not np.isfinite(cfg.get("tolerances", "slope")):
        raise ConfigError("[tolerances] slope must be finite")
