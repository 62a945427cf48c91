"""Joint long-term model of 10-minute mean wind speed and turbulence.

The model factorizes as a marginal for the mean wind speed U times a
lognormal conditional for the standard deviation of turbulence given U.
Three marginal families are supported: Weibull, Weibull body with a
generalized Pareto tail spliced above a junction threshold, and
lognormal.  The factorization order (U first, then sigma_u given U) is
fixed; it defines the Rosenblatt transform used for contour
construction.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import ConfigError, DomainError

__all__ = [
    "Condition",
    "EnvModel",
    "WeibullMarginal",
    "LognormalMarginal",
    "HybridWeibullGPDMarginal",
    "LognormalConditional",
    "load_env_config",
    "env_model_from_dict",
    "exceedance_probability",
]

HOURS_PER_YEAR = 365.25 * 24.0
# Admissible sea/wind state lengths, in hours.
STATE_DURATIONS = (1.0 / 6.0, 1.0)
# Operational range over which conditional parameter polynomials must be sane.
U_RANGE = (0.0, 50.0)


def exceedance_probability(return_period_years, state_duration_hours):
    """Per-state exceedance probability for a given return period.

    One state lasts ``state_duration_hours``, so a return period of T
    years corresponds to exceeding once in T * 365.25 * 24 / duration
    independent states.
    """
    if return_period_years <= 0:
        raise ValueError("return_period_years must be positive")
    if state_duration_hours <= 0:
        raise ValueError("state_duration_hours must be positive")
    n_states = HOURS_PER_YEAR * return_period_years / state_duration_hours
    return 1.0 / n_states


@dataclass(frozen=True)
class Condition:
    """One environmental state: mean wind speed and turbulence sigma."""

    u: float
    sigma_u: float


class WeibullMarginal:
    """Three-parameter Weibull distribution (location defaults to 0)."""

    kind = "weibull"

    def __init__(self, shape, scale, location=0.0):
        if shape <= 0:
            raise ValueError("shape must be positive")
        if scale <= 0:
            raise ValueError("scale must be positive")
        self.shape = float(shape)
        self.scale = float(scale)
        self.location = float(location)

    @property
    def support(self):
        return (self.location, math.inf)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        t = (x - self.location) / self.scale
        k = self.shape
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            out = np.where(
                t > 0,
                (k / self.scale) * t ** (k - 1.0) * np.exp(-(t**k)),
                0.0,
            )
        return out if out.ndim else float(out)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        t = np.maximum((x - self.location) / self.scale, 0.0)
        out = -np.expm1(-(t**self.shape))
        return out if out.ndim else float(out)

    def ppf(self, q):
        q = np.asarray(q, dtype=float)
        if np.any((q < 0) | (q > 1)):
            raise DomainError("quantile level outside [0, 1]")
        # -log1p(-q) = -ln(1-q), accurate for q near 0 and near 1
        t = (-np.log1p(-q)) ** (1.0 / self.shape)
        out = self.location + self.scale * t
        return out if out.ndim else float(out)

    def mean(self):
        return self.location + self.scale * math.gamma(1.0 + 1.0 / self.shape)

    def median(self):
        return self.location + self.scale * math.log(2.0) ** (1.0 / self.shape)

    def to_dict(self):
        return {
            "kind": self.kind,
            "shape": self.shape,
            "scale": self.scale,
            "location": self.location,
        }


class LognormalMarginal:
    """Lognormal distribution parameterized in log space."""

    kind = "lognormal"

    def __init__(self, mu_ln, sigma_ln):
        if sigma_ln <= 0:
            raise ValueError("sigma_ln must be positive")
        self.mu_ln = float(mu_ln)
        self.sigma_ln = float(sigma_ln)

    @property
    def support(self):
        return (0.0, math.inf)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (np.log(x) - self.mu_ln) / self.sigma_ln
            out = np.where(
                x > 0,
                np.exp(-0.5 * z * z) / (x * self.sigma_ln * math.sqrt(2.0 * math.pi)),
                0.0,
            )
        return out if out.ndim else float(out)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(x > 0, ndtr((np.log(np.maximum(x, 1e-300)) - self.mu_ln) / self.sigma_ln), 0.0)
        return out if out.ndim else float(out)

    def ppf(self, q):
        q = np.asarray(q, dtype=float)
        if np.any((q < 0) | (q > 1)):
            raise DomainError("quantile level outside [0, 1]")
        out = np.exp(self.mu_ln + self.sigma_ln * ndtri(q))
        return out if out.ndim else float(out)

    def mean(self):
        return math.exp(self.mu_ln + 0.5 * self.sigma_ln**2)

    def median(self):
        return math.exp(self.mu_ln)

    def to_dict(self):
        return {"kind": self.kind, "mu_ln": self.mu_ln, "sigma_ln": self.sigma_ln}


class HybridWeibullGPDMarginal:
    """Weibull body with a generalized Pareto tail above a junction point.

    Below the junction u_j the CDF is the Weibull body; above it the
    excess over u_j follows a GPD scaled by the tail fraction
    zeta = 1 - F_weibull(u_j), which keeps the CDF continuous.  An
    explicit ``tail_fraction`` may be supplied (e.g. from an empirical
    fit) but must match the body within 1e-9 or the model is rejected.
    """

    kind = "hybrid_weibull_gpd"

    def __init__(self, shape, scale, junction, gpd_shape, gpd_scale,
                 location=0.0, tail_fraction=None):
        self.body = WeibullMarginal(shape, scale, location)
        if junction <= location:
            raise ValueError("junction must exceed the location parameter")
        if gpd_scale <= 0:
            raise ValueError("gpd_scale must be positive")
        self.junction = float(junction)
        self.gpd_shape = float(gpd_shape)
        self.gpd_scale = float(gpd_scale)
        body_tail = 1.0 - self.body.cdf(self.junction)
        if tail_fraction is None:
            tail_fraction = body_tail
        elif abs(tail_fraction - body_tail) > 1e-9:
            raise ValueError(
                "hybrid CDF discontinuous at junction: tail_fraction "
                f"{tail_fraction:.6g} vs body complement {body_tail:.6g}"
            )
        self.tail_fraction = float(tail_fraction)

    @property
    def support(self):
        if self.gpd_shape < 0:
            return (self.body.location, self.junction - self.gpd_scale / self.gpd_shape)
        return (self.body.location, math.inf)

    def _gpd_cdf(self, t):
        """CDF of the GPD excess at t >= 0."""
        xi, s = self.gpd_shape, self.gpd_scale
        t = np.maximum(t, 0.0)
        if abs(xi) < 1e-12:
            return -np.expm1(-t / s)
        arg = np.maximum(1.0 + xi * t / s, 0.0)
        return 1.0 - arg ** (-1.0 / xi)

    def _gpd_pdf(self, t):
        xi, s = self.gpd_shape, self.gpd_scale
        if abs(xi) < 1e-12:
            return np.exp(-t / s) / s
        arg = 1.0 + xi * t / s
        with np.errstate(invalid="ignore", over="ignore"):
            out = np.where(arg > 0, arg ** (-1.0 / xi - 1.0) / s, 0.0)
        return out

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        below = self.body.cdf(np.minimum(x, self.junction))
        above = 1.0 - self.tail_fraction * (1.0 - self._gpd_cdf(x - self.junction))
        out = np.where(x <= self.junction, below, above)
        return out if out.ndim else float(out)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        below = self.body.pdf(x)
        above = self.tail_fraction * self._gpd_pdf(np.maximum(x - self.junction, 0.0))
        out = np.where(x <= self.junction, below, above)
        return out if out.ndim else float(out)

    def ppf(self, q):
        q = np.asarray(q, dtype=float)
        if np.any((q < 0) | (q > 1)):
            raise DomainError("quantile level outside [0, 1]")
        q_j = 1.0 - self.tail_fraction
        body_part = self.body.ppf(np.minimum(q, q_j))
        # invert 1 - zeta * (1 - G(t)) = q  =>  G(t) = 1 - (1-q)/zeta
        with np.errstate(divide="ignore", invalid="ignore"):
            p_exc = 1.0 - (1.0 - q) / self.tail_fraction
        xi, s = self.gpd_shape, self.gpd_scale
        p_exc = np.clip(p_exc, 0.0, 1.0)
        if abs(xi) < 1e-12:
            t = -s * np.log1p(-p_exc)
        else:
            t = s / xi * ((1.0 - p_exc) ** (-xi) - 1.0)
        out = np.where(q <= q_j, body_part, self.junction + t)
        return out if out.ndim else float(out)

    def to_dict(self):
        return {
            "kind": self.kind,
            "shape": self.body.shape,
            "scale": self.body.scale,
            "location": self.body.location,
            "junction": self.junction,
            "gpd_shape": self.gpd_shape,
            "gpd_scale": self.gpd_scale,
            "tail_fraction": self.tail_fraction,
        }


class LognormalConditional:
    """Lognormal law for sigma_u given u with polynomial parameter maps.

    Both the log-space mean and log-space standard deviation are
    polynomials in u of degree at most 2 (coefficients in ascending
    order).  The sigma polynomial must stay strictly positive over the
    operational range of u.
    """

    kind = "lognormal_given_u"

    def __init__(self, mu_coeffs, sigma_coeffs):
        mu_coeffs = [float(c) for c in mu_coeffs]
        sigma_coeffs = [float(c) for c in sigma_coeffs]
        if not 1 <= len(mu_coeffs) <= 3:
            raise ValueError("mu_coeffs must have 1 to 3 entries (degree <= 2)")
        if not 1 <= len(sigma_coeffs) <= 3:
            raise ValueError("sigma_coeffs must have 1 to 3 entries (degree <= 2)")
        self.mu_coeffs = tuple(mu_coeffs)
        self.sigma_coeffs = tuple(sigma_coeffs)
        grid = np.linspace(U_RANGE[0], U_RANGE[1], 2001)
        if np.any(self._sigma_ln(grid) <= 0):
            raise ValueError(
                "sigma_ln polynomial must be strictly positive on "
                f"[{U_RANGE[0]:g}, {U_RANGE[1]:g}]"
            )

    def _mu_ln(self, u):
        return np.polynomial.polynomial.polyval(u, self.mu_coeffs)

    def _sigma_ln(self, u):
        return np.polynomial.polynomial.polyval(u, self.sigma_coeffs)

    def pdf(self, sigma_u, u):
        sigma_u = np.asarray(sigma_u, dtype=float)
        m, s = self._mu_ln(u), self._sigma_ln(u)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (np.log(np.maximum(sigma_u, 1e-300)) - m) / s
            out = np.where(
                sigma_u > 0,
                np.exp(-0.5 * z * z) / (np.maximum(sigma_u, 1e-300) * s * math.sqrt(2.0 * math.pi)),
                0.0,
            )
        return out if out.ndim else float(out)

    def cdf(self, sigma_u, u):
        sigma_u = np.asarray(sigma_u, dtype=float)
        m, s = self._mu_ln(u), self._sigma_ln(u)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(sigma_u > 0, ndtr((np.log(np.maximum(sigma_u, 1e-300)) - m) / s), 0.0)
        return out if out.ndim else float(out)

    def ppf(self, q, u):
        q = np.asarray(q, dtype=float)
        if np.any((q < 0) | (q > 1)):
            raise DomainError("quantile level outside [0, 1]")
        out = np.exp(self._mu_ln(u) + self._sigma_ln(u) * ndtri(q))
        return out if out.ndim else float(out)

    def median(self, u):
        out = np.exp(self._mu_ln(np.asarray(u, dtype=float)))
        return out if out.ndim else float(out)

    def to_dict(self):
        return {
            "kind": self.kind,
            "mu_coeffs": list(self.mu_coeffs),
            "sigma_coeffs": list(self.sigma_coeffs),
        }


class EnvModel:
    """Joint model (U, sigma_u) with a fixed factorization order."""

    def __init__(self, marginal_u, conditional_sigma, state_duration_hours=1.0 / 6.0):
        if not any(
            math.isclose(state_duration_hours, d, rel_tol=1e-6) for d in STATE_DURATIONS
        ):
            raise ValueError(
                f"state_duration_hours must be one of {STATE_DURATIONS} "
                f"(10-minute or 1-hour states), got {state_duration_hours}"
            )
        self.marginal_u = marginal_u
        self.conditional_sigma = conditional_sigma
        self.state_duration_hours = float(state_duration_hours)

    # -- densities ---------------------------------------------------

    def joint_pdf(self, u, sigma_u):
        """Joint density f_U(u) * f_{sigma|U}(sigma_u | u), vectorized."""
        u = np.asarray(u, dtype=float)
        sigma_u = np.asarray(sigma_u, dtype=float)
        out = self.marginal_u.pdf(u) * self.conditional_sigma.pdf(sigma_u, u)
        return out if np.ndim(out) else float(out)

    def in_support(self, u, sigma_u):
        lo, hi = self.marginal_u.support
        u = np.asarray(u, dtype=float)
        sigma_u = np.asarray(sigma_u, dtype=float)
        out = (u >= lo) & (u <= hi) & (sigma_u > 0)
        return out if out.ndim else bool(out)

    # -- sampling ----------------------------------------------------

    def sample(self, n, rng):
        """Draw n joint samples; returns (u, sigma_u) arrays.

        Consumes exactly 2n uniforms from ``rng`` in a fixed order
        (all u first, then all sigma), which keeps downstream streams
        aligned regardless of the values drawn.
        """
        qu = rng.random(n)
        qs = rng.random(n)
        u = self.marginal_u.ppf(qu)
        sigma = self.conditional_sigma.ppf(qs, u)
        return u, sigma

    def sample_conditions(self, n, rng):
        u, s = self.sample(n, rng)
        return [Condition(float(a), float(b)) for a, b in zip(u, s)]

    # -- Rosenblatt transform -----------------------------------------

    def rosenblatt(self, u, sigma_u):
        """Map physical coordinates to independent standard normals.

        z1 comes from the marginal CDF of u, z2 from the conditional
        CDF of sigma_u given u.  Raises DomainError when either CDF
        saturates to exactly 0 or 1 in floating point, where the
        inverse normal is undefined.
        """
        u = np.asarray(u, dtype=float)
        sigma_u = np.asarray(sigma_u, dtype=float)
        p1 = np.asarray(self.marginal_u.cdf(u), dtype=float)
        p2 = np.asarray(self.conditional_sigma.cdf(sigma_u, u), dtype=float)
        for name, p in (("u", p1), ("sigma_u", p2)):
            if np.any((p <= 0.0) | (p >= 1.0)):
                raise DomainError(
                    f"{name} outside the interior of the model support: "
                    "CDF saturated to 0 or 1"
                )
        z1 = ndtri(p1)
        z2 = ndtri(p2)
        if z1.ndim:
            return z1, z2
        return float(z1), float(z2)

    def inverse_rosenblatt(self, z1, z2):
        """Map standard-normal coordinates back to (u, sigma_u)."""
        z1 = np.asarray(z1, dtype=float)
        z2 = np.asarray(z2, dtype=float)
        u = self.marginal_u.ppf(ndtr(z1))
        sigma = self.conditional_sigma.ppf(ndtr(z2), u)
        if np.ndim(u):
            return u, sigma
        return float(u), float(sigma)

    # -- helpers -------------------------------------------------------

    def sigma_range(self, u_band, coverage=0.999):
        """Conditional sigma_u interval covering ``coverage`` mass over a u band.

        Scans u over the band and returns the envelope of the central
        coverage intervals; used to size sampling grids and designs.
        """
        lo_q = 0.5 * (1.0 - coverage)
        grid = np.linspace(u_band[0], u_band[1], 201)
        lo = float(np.min(self.conditional_sigma.ppf(lo_q, grid)))
        hi = float(np.max(self.conditional_sigma.ppf(1.0 - lo_q, grid)))
        return lo, hi

    def exceedance_probability(self, return_period_years):
        return exceedance_probability(return_period_years, self.state_duration_hours)

    def to_dict(self):
        return {
            "marginal_u": self.marginal_u.to_dict(),
            "conditional_sigma": self.conditional_sigma.to_dict(),
            "state_duration_hours": self.state_duration_hours,
        }


# -- configuration loading ----------------------------------------------

_MARGINAL_KINDS = ("weibull", "hybrid_weibull_gpd", "lognormal")


def _require(cfg, field, path, types=(int, float)):
    if field not in cfg:
        raise ConfigError(f"{path}.{field}", "missing required field")
    value = cfg[field]
    if types is not None and not isinstance(value, types) or isinstance(value, bool):
        raise ConfigError(f"{path}.{field}", f"expected a number, got {value!r}")
    return value


def _positive(cfg, field, path):
    value = _require(cfg, field, path)
    if value <= 0:
        raise ConfigError(f"{path}.{field}", f"must be positive, got {value!r}")
    return float(value)


def _build_marginal(cfg, path="marginal_u"):
    kind = cfg.get("kind")
    if kind not in _MARGINAL_KINDS:
        raise ConfigError(
            f"{path}.kind", f"unknown marginal kind {kind!r}, expected one of {_MARGINAL_KINDS}"
        )
    try:
        if kind == "weibull":
            return WeibullMarginal(
                _positive(cfg, "shape", path),
                _positive(cfg, "scale", path),
                float(cfg.get("location", 0.0)),
            )
        if kind == "lognormal":
            return LognormalMarginal(
                float(_require(cfg, "mu_ln", path)),
                _positive(cfg, "sigma_ln", path),
            )
        return HybridWeibullGPDMarginal(
            _positive(cfg, "shape", path),
            _positive(cfg, "scale", path),
            _positive(cfg, "junction", path),
            float(_require(cfg, "gpd_shape", path)),
            _positive(cfg, "gpd_scale", path),
            location=float(cfg.get("location", 0.0)),
            tail_fraction=(
                float(cfg["tail_fraction"]) if "tail_fraction" in cfg else None
            ),
        )
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from exc


def _build_conditional(cfg, path="conditional_sigma"):
    kind = cfg.get("kind")
    if kind != "lognormal_given_u":
        raise ConfigError(
            f"{path}.kind", f"unknown conditional kind {kind!r}, expected 'lognormal_given_u'"
        )
    for field in ("mu_coeffs", "sigma_coeffs"):
        if field not in cfg:
            raise ConfigError(f"{path}.{field}", "missing required field")
        if not isinstance(cfg[field], (list, tuple)):
            raise ConfigError(f"{path}.{field}", "expected a list of coefficients")
    try:
        return LognormalConditional(cfg["mu_coeffs"], cfg["sigma_coeffs"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(path, str(exc)) from exc


def env_model_from_dict(cfg):
    """Build and validate an EnvModel from a plain dict."""
    if not isinstance(cfg, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    for field in ("marginal_u", "conditional_sigma"):
        if field not in cfg:
            raise ConfigError(field, "missing required field")
        if not isinstance(cfg[field], dict):
            raise ConfigError(field, "expected an object")
    duration = cfg.get("state_duration_hours", 1.0 / 6.0)
    if isinstance(duration, bool) or not isinstance(duration, (int, float)):
        raise ConfigError("state_duration_hours", f"expected a number, got {duration!r}")
    try:
        return EnvModel(
            _build_marginal(cfg["marginal_u"]),
            _build_conditional(cfg["conditional_sigma"]),
            state_duration_hours=float(duration),
        )
    except ValueError as exc:
        raise ConfigError("state_duration_hours", str(exc)) from exc


def load_env_config(path):
    """Load an environment model from a JSON file.

    Raises ConfigError naming the offending field on any invalid or
    missing value.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from exc
    return env_model_from_dict(cfg)
