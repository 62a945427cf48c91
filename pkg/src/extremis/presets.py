"""Named environment and simulator presets.

All numbers here are synthetic.  They are chosen to produce two
qualitatively different regimes, not to match any measured site:

* ``site-a-like``: 10-minute states, pure Weibull wind marginal, small
  short-term scale relative to the variation of the median surface, so
  long-term variability dominates and contour methods work well.
* ``brittany-like``: 1-hour states, hybrid Weibull+GPD marginal, large
  short-term scale at mid-range winds, so short-term variability
  dominates and contour methods underestimate.
* ``misspecified``: site-a-like surfaces but a GEV block-maximum law
  with shape 0.1, for studying model misspecification.
"""
import json

from .envmodel import env_model_from_dict
from .errors import ConfigError
from .simulator import SimPreset

__all__ = [
    "ENV_PRESETS",
    "SIM_PRESET_NAMES",
    "env_preset",
    "sim_preset",
    "sim_preset_from_file",
    "write_env_preset",
]

ENV_PRESETS = {
    "site-a-like": {
        "marginal_u": {"kind": "weibull", "shape": 2.2, "scale": 9.5},
        "conditional_sigma": {
            "kind": "lognormal_given_u",
            "mu_coeffs": [-0.7, 0.07, -0.0005],
            "sigma_coeffs": [0.32, -0.004],
        },
        "state_duration_hours": 1.0 / 6.0,
    },
    "brittany-like": {
        "marginal_u": {
            "kind": "hybrid_weibull_gpd",
            "shape": 2.0,
            "scale": 8.0,
            "junction": 16.0,
            "gpd_shape": -0.05,
            "gpd_scale": 1.5,
        },
        "conditional_sigma": {
            "kind": "lognormal_given_u",
            "mu_coeffs": [-0.8, 0.075, -0.0006],
            "sigma_coeffs": [0.34, -0.004],
        },
        "state_duration_hours": 1.0,
    },
}

_SIM_PRESETS = {
    "site-a-like": dict(
        name="site-a-like",
        median_params=(9.5, 12.0, 5.5, 0.35),
        scale_params=(0.57, 12.0, 5.5, 0.35),
        shape=0.0,
    ),
    "brittany-like": dict(
        name="brittany-like",
        median_params=(4.0, 10.0, 6.0, 0.05),
        scale_params=(3.0, 10.0, 6.0, 0.05),
        shape=0.0,
    ),
    "misspecified": dict(
        name="misspecified",
        median_params=(9.5, 12.0, 5.5, 0.35),
        scale_params=(0.57, 12.0, 5.5, 0.35),
        shape=0.1,
    ),
}

SIM_PRESET_NAMES = tuple(_SIM_PRESETS)


def env_preset(name):
    """Environment model for a named preset."""
    if name not in ENV_PRESETS:
        raise ConfigError("env", f"unknown preset {name!r}, expected one of {sorted(ENV_PRESETS)}")
    return env_model_from_dict(ENV_PRESETS[name])


def sim_preset(name, **overrides):
    """Simulator preset by name, with optional field overrides."""
    if name not in _SIM_PRESETS:
        raise ConfigError(
            "sim", f"unknown preset {name!r}, expected one of {sorted(_SIM_PRESETS)}"
        )
    cfg = dict(_SIM_PRESETS[name])
    cfg.update(overrides)
    cfg["median_params"] = tuple(cfg["median_params"])
    cfg["scale_params"] = tuple(cfg["scale_params"])
    return SimPreset(**cfg)


def sim_preset_from_file(path):
    """Simulator preset from a JSON file with SimPreset fields."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from exc
    if not isinstance(cfg, dict) or "name" not in cfg:
        raise ConfigError("name", "preset file must be an object with a 'name'")
    for key in ("median_params", "scale_params"):
        if key in cfg:
            cfg[key] = tuple(cfg[key])
    try:
        return SimPreset(**cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError("<preset>", str(exc)) from exc


def write_env_preset(name, path):
    """Write a named environment preset as a standalone config file."""
    if name not in ENV_PRESETS:
        raise ConfigError("env", f"unknown preset {name!r}")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(ENV_PRESETS[name], fh, indent=2, sort_keys=True)
        fh.write("\n")
