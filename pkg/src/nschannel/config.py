"""Run configuration: one JSON document drives every command.

All defaults are embedded here and printable via the ``defaults``
subcommand; a fixed seed makes the random forcing and perturbation streams
bit-identical between runs.
"""

from __future__ import annotations

import copy
import json


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "schema_version": 1,
    "seed": 0,
    "geometry": {"length": 3.0, "height": 1.0, "nx": 48, "ny": 16, "grading": 1.0},
    "boundary": {"bottom": "dirichlet", "top": "dirichlet",
                 "left": "neumann", "right": "neumann"},
    "n_modes": 24,
    "time": {"t_end": 1.0, "intervals": 64, "gauss_points": 4},
    "newton": {"max_iters": 12, "abs_tol": 1e-11, "damping": 1.0, "linear_tol": 1e-9},
    "forcing": {"amplitude": 1.0, "target_solution_norm": 10.0},
    "perturbation": {"scales": [1e-3, 1e-2], "trials": 10, "target_stokes_norm": 0.1},
    "corner": {
        "re_window": [-20.0, 20.0],
        "im_window": [-1.05, -0.005],
        "grid_re": 121,
        "grid_im": 41,
        "fit_delta": 0.25,
    },
    "output": {"figures": True, "vtk": False, "halve_dt": False},
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def _merge(base: dict, override: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {path + k!r} must be an object")
            out[k] = _merge(base[k], v, path + k + ".")
        else:
            out[k] = v
    return out


def load_config(path=None, overrides=None) -> dict:
    cfg = default_config()
    if path is not None:
        with open(path) as f:
            try:
                user = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        cfg = _merge(cfg, user)
    if overrides:
        cfg = _merge(cfg, overrides)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    g = cfg["geometry"]
    if g["length"] <= 0 or g["height"] <= 0:
        raise ConfigError("geometry.length and geometry.height must be positive")
    if int(g["nx"]) < 1 or int(g["ny"]) < 1:
        raise ConfigError("geometry.nx and geometry.ny must be >= 1")
    if g["grading"] < 1.0:
        raise ConfigError("geometry.grading must be >= 1")
    for side, tag in cfg["boundary"].items():
        if side not in ("bottom", "top", "left", "right"):
            raise ConfigError(f"unknown boundary side {side!r}")
        if tag not in ("dirichlet", "neumann"):
            raise ConfigError(f"boundary.{side} must be 'dirichlet' or 'neumann'")
    if not any(t == "dirichlet" for t in cfg["boundary"].values()):
        raise ConfigError("at least one boundary side must be dirichlet")
    if int(cfg["n_modes"]) < 1:
        raise ConfigError("n_modes must be >= 1")
    t = cfg["time"]
    if t["t_end"] <= 0 or int(t["intervals"]) < 1 or int(t["gauss_points"]) < 2:
        raise ConfigError("time parameters out of range")
    n = cfg["newton"]
    if n["abs_tol"] <= 0 or n["linear_tol"] <= 0 or int(n["max_iters"]) < 1:
        raise ConfigError("newton tolerances must be positive, max_iters >= 1")
    if not 0 < n["damping"] <= 1:
        raise ConfigError("newton.damping must be in (0, 1]")
    p = cfg["perturbation"]
    if int(p["trials"]) < 1 or not p["scales"] or any(s < 0 for s in p["scales"]):
        raise ConfigError("perturbation parameters out of range")
    c = cfg["corner"]
    if c["re_window"][0] >= c["re_window"][1] or c["im_window"][0] >= c["im_window"][1]:
        raise ConfigError("corner windows must be nonempty intervals")
    if c["fit_delta"] <= 0:
        raise ConfigError("corner.fit_delta must be positive")
