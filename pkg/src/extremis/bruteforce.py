"""Truncated brute-force Monte Carlo reference estimates.

Draws every environmental state of every synthetic year, assigns zero
response to states below the truncation cutoffs (and outside the
operating band), and simulates the rest directly.  With zero truncation
this is the project's reference oracle for return values.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._kernels import ev_max_scan
from .envmodel import HOURS_PER_YEAR
from .errors import DomainError
from .rng import as_generator, derive_seed, substream
from .simulator import blocks_per_state, max_response_with_retry

__all__ = [
    "TruncationSpec",
    "BruteForceResult",
    "brute_force_run",
    "brute_force_return_values",
    "states_per_year",
    "return_value_from_annual_maxima",
    "bootstrap_return_value",
]


@dataclass(frozen=True)
class TruncationSpec:
    """Long-term truncation: states below either cutoff are assigned
    zero response.  Zero cutoffs disable truncation (the operating band
    still applies)."""

    cutoff_u: float = 0.0
    cutoff_sigma: float = 0.0

    def __post_init__(self):
        if self.cutoff_u < 0 or self.cutoff_sigma < 0:
            raise ValueError("cutoffs must be >= 0")


def states_per_year(state_duration_hours):
    """Environmental states per synthetic year, rounded down."""
    return int(math.floor(HOURS_PER_YEAR / state_duration_hours))


def return_value_from_annual_maxima(annual_maxima, T_years):
    """Empirical 1 - 1/T fractile via the order statistic ceil((1-1/T)*N_y).

    Returns (value, wide_ci_flag); the flag marks runs shorter than
    2*T years, where the order statistic sits in the extreme tail.
    """
    am = np.sort(np.asarray(annual_maxima, dtype=float))
    n = len(am)
    if n < 1:
        raise ValueError("no annual maxima")
    if T_years <= 1.0:
        raise DomainError("return period must exceed 1 year")
    k = int(math.ceil((1.0 - 1.0 / T_years) * n))
    k = min(max(k, 1), n)
    return float(am[k - 1]), n < 2 * T_years


def bootstrap_return_value(annual_maxima, T_years, n_blocks=10, n_boot=200, rng=0):
    """Year-block bootstrap of a return value.

    Splits the years into ``n_blocks`` contiguous blocks, resamples
    blocks with replacement ``n_boot`` times and recomputes the return
    value.  Returns (se, (lo95, hi95)).
    """
    am = np.asarray(annual_maxima, dtype=float)
    rng = as_generator(rng)
    blocks = np.array_split(am, n_blocks)
    vals = np.empty(n_boot)
    for b in range(n_boot):
        idx = rng.integers(0, n_blocks, size=n_blocks)
        sample = np.concatenate([blocks[i] for i in idx])
        vals[b], _ = return_value_from_annual_maxima(sample, T_years)
    return float(vals.std(ddof=1)), (float(np.quantile(vals, 0.025)),
                                     float(np.quantile(vals, 0.975)))


@dataclass(frozen=True)
class BruteForceResult:
    annual_maxima: np.ndarray
    rv50: float
    rv100: float
    fraction_simulated: float
    rv50_se: float
    rv100_se: float
    rv50_ci: tuple
    rv100_ci: tuple
    years: int
    trunc: TruncationSpec

    def to_dict(self):
        return {
            "years": int(self.years),
            "cutoff_u": self.trunc.cutoff_u,
            "cutoff_sigma": self.trunc.cutoff_sigma,
            "rv50": self.rv50,
            "rv100": self.rv100,
            "fraction_simulated": self.fraction_simulated,
            "bootstrap_se": {"rv50": self.rv50_se, "rv100": self.rv100_se},
            "bootstrap_ci95": {"rv50": list(self.rv50_ci), "rv100": list(self.rv100_ci)},
        }


def _year_max_fast(env, preset, trunc, n_states, n_blocks, seed):
    rng = substream(seed)
    u, sig = env.sample(n_states, rng)
    unif = rng.random((n_blocks, n_states))
    y, n_active = ev_max_scan(
        u, sig, unif,
        preset.median_params, preset.scale_params, preset.shape,
        preset.cut_in, preset.cut_out,
        trunc.cutoff_u, trunc.cutoff_sigma,
    )
    return max(0.0, float(y.max())), n_active


def _year_max_retry(env, preset, trunc, n_states, seed, state_duration_hours):
    # slow path for presets with a nonzero failure rate
    rng = substream(seed)
    u, sig = env.sample(n_states, rng)
    active = (u >= trunc.cutoff_u) & (sig >= trunc.cutoff_sigma)
    best = 0.0
    n_active = 0
    from .envmodel import Condition
    for i in np.flatnonzero(active):
        cond = Condition(float(u[i]), float(sig[i]))
        if not preset.cut_in <= cond.u <= preset.cut_out:
            continue
        n_active += 1
        val = max_response_with_retry(
            cond,
            lambda attempt: derive_seed(seed, "state", int(i), attempt),
            preset,
            state_duration_hours,
        )
        if val > best:
            best = val
    return best, n_active


def brute_force_run(env, preset, years, trunc=None, rng=0, threads=1,
                    n_boot=200):
    """Direct long-term Monte Carlo with optional truncation.

    Each year draws its full sequence of environmental states from an
    independent substream keyed by the year index, so results do not
    depend on thread scheduling.
    """
    if years < 100:
        raise ValueError("need at least 100 years for return-value estimation")
    trunc = trunc or TruncationSpec()
    rng = as_generator(rng)
    master = int(rng.integers(0, 2**63 - 1))
    n_states = states_per_year(env.state_duration_hours)
    n_blocks = blocks_per_state(preset, env.state_duration_hours)

    def one_year(y):
        seed = derive_seed(master, "brute-year", y)
        if preset.fail_prob == 0.0:
            return _year_max_fast(env, preset, trunc, n_states, n_blocks, seed)
        return _year_max_retry(env, preset, trunc, n_states, seed,
                               env.state_duration_hours)

    annual = np.empty(years)
    active_total = 0
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for y, (mx, na) in enumerate(pool.map(one_year, range(years))):
                annual[y] = mx
                active_total += na
    else:
        for y in range(years):
            annual[y], na = one_year(y)
            active_total += na

    rv50, _ = return_value_from_annual_maxima(annual, 50.0)
    rv100, _ = return_value_from_annual_maxima(annual, 100.0)
    boot_seed = derive_seed(master, "bootstrap")
    se50, ci50 = bootstrap_return_value(annual, 50.0, rng=substream(boot_seed, 50))
    se100, ci100 = bootstrap_return_value(annual, 100.0, rng=substream(boot_seed, 100))
    return BruteForceResult(
        annual_maxima=annual,
        rv50=rv50,
        rv100=rv100,
        fraction_simulated=active_total / (years * n_states),
        rv50_se=se50,
        rv100_se=se100,
        rv50_ci=ci50,
        rv100_ci=ci100,
        years=years,
        trunc=trunc,
    )


def brute_force_return_values(env, preset, years, trunc=None, rng=0, threads=1):
    """(rv50, rv100, fraction_simulated) from a truncated brute-force run."""
    res = brute_force_run(env, preset, years, trunc, rng, threads)
    return res.rv50, res.rv100, res.fraction_simulated
