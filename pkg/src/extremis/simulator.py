"""Synthetic stand-in for an aero-servo-elastic turbine simulator.

Generates stochastic short-term response maxima and full response time
series for a given environmental condition.  The block-maximum law is
closed form (location/scale surfaces over (u, sigma_u) plus a Gumbel or
GEV draw), which makes ground truth cheap enough for brute-force
reference runs.  Time series come from an AR(1) wind fluctuation
driving a damped second-order oscillator through a static map, tuned so
block maxima are approximately Gumbel.

Everything is a pure function of (inputs, seed); there is no global
RNG state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import SimulatorFailure
from .rng import as_generator

__all__ = [
    "SimPreset",
    "ResponseSeries",
    "simulate_max_response",
    "simulate_block_maxima",
    "simulate_state_max",
    "simulate_timeseries",
    "split_block_maxima",
    "max_response_with_retry",
    "median_surface",
    "scale_surface",
    "block_law_params",
    "blocks_per_state",
    "oscillator_coefficients",
]


@dataclass(frozen=True)
class SimPreset:
    """Parameters of the synthetic response model.

    ``median_params`` and ``scale_params`` are (amp, u_peak, width,
    sigma_gain) tuples describing the deterministic median-response
    surface r(u, sigma_u) and the short-term scale surface s(u, sigma_u)
    in MNm:

        amp * exp(-((u - u_peak)/width)^2 / 2) * max(0, 1 + sigma_gain*sigma_u)

    Both are zero outside [cut_in, cut_out].  ``shape`` is the GEV shape
    of the block-maximum law (0 gives Gumbel).  ``fail_prob`` emulates
    the occasional hard failure of a real simulator for a (cond, seed)
    pair, exercising callers' reseeding paths.
    """

    name: str
    median_params: tuple = (7.0, 12.0, 5.5, 0.35)
    scale_params: tuple = (0.42, 12.0, 5.5, 0.35)
    cut_in: float = 3.0
    cut_out: float = 25.0
    block_minutes: float = 10.0
    shape: float = 0.0
    fail_prob: float = 0.0
    # time-series dynamics
    corr_time_s: float = 10.0
    natural_freq_hz: float = 0.15
    damping_ratio: float = 0.30

    def __post_init__(self):
        for label, params in (("median_params", self.median_params),
                              ("scale_params", self.scale_params)):
            if len(params) != 4:
                raise ValueError(f"{label} must be (amp, u_peak, width, sigma_gain)")
            amp, _, width, _ = params
            if amp < 0:
                raise ValueError(f"{label}: amp must be nonnegative")
            if width <= 0:
                raise ValueError(f"{label}: width must be positive")
        if not self.cut_in < self.cut_out:
            raise ValueError("cut_in must be below cut_out")
        if not 0.0 <= self.fail_prob < 1.0:
            raise ValueError("fail_prob must be in [0, 1)")
        if abs(self.shape) > 0.5:
            raise ValueError("shape must be in [-0.5, 0.5]")
        if self.block_minutes <= 0 or self.corr_time_s <= 0:
            raise ValueError("block_minutes and corr_time_s must be positive")
        if self.natural_freq_hz <= 0 or self.damping_ratio <= 0:
            raise ValueError("natural_freq_hz and damping_ratio must be positive")

    def to_dict(self):
        return {
            "name": self.name,
            "median_params": list(self.median_params),
            "scale_params": list(self.scale_params),
            "cut_in": self.cut_in,
            "cut_out": self.cut_out,
            "block_minutes": self.block_minutes,
            "shape": self.shape,
            "fail_prob": self.fail_prob,
            "corr_time_s": self.corr_time_s,
            "natural_freq_hz": self.natural_freq_hz,
            "damping_ratio": self.damping_ratio,
        }


@dataclass(frozen=True)
class ResponseSeries:
    """Uniformly sampled wind and response series."""

    t: np.ndarray
    wind: np.ndarray
    y: np.ndarray
    dt: float

    def __post_init__(self):
        if not (len(self.t) == len(self.wind) == len(self.y)):
            raise ValueError("t, wind and y must have equal lengths")
        if not (np.all(np.isfinite(self.wind)) and np.all(np.isfinite(self.y))):
            raise SimulatorFailure("non-finite values in simulated series")

    @property
    def duration_s(self):
        return len(self.y) * self.dt


def _in_band(preset, u):
    return (u >= preset.cut_in) & (u <= preset.cut_out)


def median_surface(preset, u, sigma_u):
    """Median block-max response r(u, sigma_u), zero outside the band."""
    u = np.asarray(u, dtype=float)
    sigma_u = np.asarray(sigma_u, dtype=float)
    amp, up, w, g = preset.median_params
    t = (u - up) / w
    r = amp * np.exp(-0.5 * t * t) * np.maximum(1.0 + g * sigma_u, 0.0)
    out = np.where(_in_band(preset, u), r, 0.0)
    return out if out.ndim else float(out)


def scale_surface(preset, u, sigma_u):
    """Short-term scale s(u, sigma_u) of the block-max law."""
    u = np.asarray(u, dtype=float)
    sigma_u = np.asarray(sigma_u, dtype=float)
    amp, up, w, g = preset.scale_params
    t = (u - up) / w
    s = amp * np.exp(-0.5 * t * t) * np.maximum(1.0 + g * sigma_u, 0.0)
    out = np.where(_in_band(preset, u), s, 0.0)
    return out if out.ndim else float(out)


def block_law_params(preset, u, sigma_u):
    """(location, scale, shape) of the block-maximum law at a condition."""
    return (
        median_surface(preset, u, sigma_u),
        scale_surface(preset, u, sigma_u),
        preset.shape,
    )


def _std_ev_quantile(p, shape):
    e = -np.log(p)
    if shape == 0.0:
        return -np.log(e)
    return np.expm1(-shape * np.log(e)) / shape


def _maybe_fail(preset, rng, seed):
    if preset.fail_prob > 0.0 and rng.random() < preset.fail_prob:
        raise SimulatorFailure(f"emulated simulator failure for seed {seed}")


def simulate_max_response(cond, seed, preset):
    """One block-maximum response draw in MNm.

    Returns 0 exactly when the condition is outside the operating band.
    Deterministic per (cond, seed, preset); raises SimulatorFailure with
    probability ``preset.fail_prob`` per call (before any response draw).
    """
    if not _in_band(preset, cond.u):
        return 0.0
    rng = as_generator(seed)
    _maybe_fail(preset, rng, seed)
    r = median_surface(preset, cond.u, cond.sigma_u)
    s = scale_surface(preset, cond.u, cond.sigma_u)
    p = max(rng.random(), 1e-300)
    return float(r + s * _std_ev_quantile(p, preset.shape))


def simulate_block_maxima(cond, seed, preset, n_blocks):
    """``n_blocks`` independent block maxima from one seeded run."""
    if n_blocks < 1:
        raise ValueError("n_blocks must be >= 1")
    if not _in_band(preset, cond.u):
        return np.zeros(n_blocks)
    rng = as_generator(seed)
    _maybe_fail(preset, rng, seed)
    r = median_surface(preset, cond.u, cond.sigma_u)
    s = scale_surface(preset, cond.u, cond.sigma_u)
    p = np.maximum(rng.random(n_blocks), 1e-300)
    return r + s * _std_ev_quantile(p, preset.shape)


def blocks_per_state(preset, state_duration_hours):
    """Whole number of simulator blocks in one environmental state."""
    n = state_duration_hours * 60.0 / preset.block_minutes
    n_int = int(round(n))
    if n_int < 1 or abs(n - n_int) > 1e-9:
        raise ValueError(
            f"state duration {state_duration_hours} h is not a whole number "
            f"of {preset.block_minutes}-minute blocks"
        )
    return n_int


def simulate_state_max(cond, seed, preset, state_duration_hours):
    """Max response over one environmental state (max of its block maxima)."""
    n_blocks = blocks_per_state(preset, state_duration_hours)
    return float(np.max(simulate_block_maxima(cond, seed, preset, n_blocks)))


def max_response_with_retry(cond, seed_fn, preset, state_duration_hours=None,
                            max_attempts=10):
    """State-max simulation with the reseed-on-failure policy.

    ``seed_fn(attempt)`` supplies the seed for each attempt; after
    ``max_attempts`` consecutive failures the last error is re-raised.
    """
    last = None
    for attempt in range(max_attempts):
        try:
            if state_duration_hours is None:
                return simulate_max_response(cond, seed_fn(attempt), preset)
            return simulate_state_max(cond, seed_fn(attempt), preset,
                                      state_duration_hours)
        except SimulatorFailure as exc:
            last = exc
    raise SimulatorFailure(
        f"simulator failed {max_attempts} times in a row at "
        f"u={cond.u:g}, sigma_u={cond.sigma_u:g}"
    ) from last


def oscillator_coefficients(preset, dt):
    """Recursion coefficients (c1, c2, d0) of the discretized oscillator.

    Central-difference discretization of y'' + 2*zeta*w0*y' + w0^2*y = w0^2*F,
    normalized so a constant force F settles at y = F.  Raises when dt
    violates the explicit-scheme stability bound 2/w0.
    """
    w0 = 2.0 * math.pi * preset.natural_freq_hz
    bound = 2.0 / w0
    if dt >= bound:
        raise ValueError(
            f"dt={dt:g} s exceeds the oscillator stability bound {bound:.6g} s"
        )
    a = 1.0 / dt**2 + preset.damping_ratio * w0 / dt
    c1 = (2.0 / dt**2 - w0**2) / a
    c2 = (preset.damping_ratio * w0 / dt - 1.0 / dt**2) / a
    d0 = w0**2 / a
    return c1, c2, d0


def simulate_timeseries(cond, seed, duration_s, dt, preset):
    """Wind and response time series for one seeded realization.

    Wind is cond.u plus an AR(1) fluctuation with stationary standard
    deviation cond.sigma_u and correlation time ``preset.corr_time_s``.
    The response is a damped second-order oscillator driven by the
    static map of wind (the median surface at zero turbulence), so with
    sigma_u = 0 the response settles at that map's value.
    """
    if duration_s < 10.0 * dt:
        raise ValueError("duration_s must be at least 10*dt")
    c1, c2, d0 = oscillator_coefficients(preset, dt)
    n = int(round(duration_s / dt))
    rng = as_generator(seed)
    _maybe_fail(preset, rng, seed)
    z = rng.standard_normal(n)
    phi = math.exp(-dt / preset.corr_time_s)
    sigma_e = cond.sigma_u * math.sqrt(max(1.0 - phi * phi, 0.0))
    amp, u_peak, width, _ = preset.median_params
    wind, y = _kernels.ar1_oscillator(
        z, cond.u, cond.sigma_u, phi, sigma_e, c1, c2, d0,
        amp, u_peak, width, preset.cut_in, preset.cut_out,
    )
    t = np.arange(n) * dt
    return ResponseSeries(t=t, wind=wind, y=y, dt=dt)


def split_block_maxima(series, block_minutes):
    """Maximum of y per consecutive whole block; trailing partial dropped."""
    n_per = int(round(block_minutes * 60.0 / series.dt))
    if n_per < 1 or len(series.y) < n_per:
        raise ValueError(
            f"series duration {series.duration_s:g} s is shorter than one "
            f"{block_minutes:g}-minute block"
        )
    k = len(series.y) // n_per
    return series.y[: k * n_per].reshape(k, n_per).max(axis=1)
