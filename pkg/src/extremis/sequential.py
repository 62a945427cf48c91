"""Sequential GP-surrogate estimation of long-term extreme response.

The loop alternates between (a) a long-term Monte Carlo pass over the
GP surrogate of the short-term extreme-value parameters and (b) picking
the next expensive-simulation condition by an acquisition rule that
weights posterior uncertainty with the density of conditions observed
to drive exceedances.
"""
from __future__ import annotations

import json
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._kernels import gp_grid_scan
from .bruteforce import return_value_from_annual_maxima, states_per_year
from .envmodel import Condition
from .errors import DomainError, ExtremisError, SimulatorFailure
from .evfit import FAMILIES, gaussian_likelihood_approx
from .gp import BETA_FLOOR, GPModel, fit_gp
from .rng import as_generator, derive_seed, substream
from .simulator import blocks_per_state, simulate_block_maxima

__all__ = [
    "LongTermRun",
    "IterationRecord",
    "ExperimentHistory",
    "simulate_longterm",
    "return_value",
    "failure_probability",
    "ExceedanceKDE",
    "exceedance_kde",
    "acquisition_argmax",
    "initial_design",
    "run_sequential",
    "fit_condition",
]

_TOP_CAP = 4096
_TOP_FALLBACK = 50


@dataclass(frozen=True)
class LongTermRun:
    """One long-term Monte Carlo pass over the surrogate."""

    years: int
    annual_maxima: np.ndarray
    exceed_conditions: np.ndarray   # (k, 2) conditions above the threshold
    exceed_responses: np.ndarray    # (k,) their sampled responses
    threshold: float                # exceedance cut used (nan when top-k fallback)
    n_clamped: int                  # scale draws that hit the positivity floor

    def __post_init__(self):
        am = np.asarray(self.annual_maxima, dtype=float)
        object.__setattr__(self, "annual_maxima", am)
        if len(am) != self.years:
            raise ValueError("annual_maxima length must equal years")
        if not np.all(np.isfinite(am)) or np.any(am < 0):
            raise ValueError("annual maxima must be finite and >= 0")


def _grid_tables(gp, env, preset_band, grid, coverage):
    cut_in, cut_out = preset_band
    nu, ns = grid
    s_lo, s_hi = env.sigma_range((cut_in, cut_out), coverage=coverage)
    u_grid = np.linspace(cut_in, cut_out, nu)
    s_grid = np.linspace(max(s_lo, 0.0), s_hi, ns)
    mu_tab, sd_tab = gp.posterior_tables(u_grid, s_grid)
    return u_grid, s_grid, mu_tab, sd_tab


def simulate_longterm(gp, env, years, rng, threshold=None, n_blocks=1,
                      band=(3.0, 25.0), grid=(256, 256), coverage=0.9999,
                      top_k=_TOP_FALLBACK, threads=1):
    """Long-term response Monte Carlo over the GP surrogate.

    Processes year by year (never materializing all draws): each year
    owns a substream keyed by its index, draws its environmental
    states, samples a parameter vector per state from the (gridded)
    GP posterior and one state maximum per state.  Conditions outside
    ``band`` contribute zero.  ``threshold`` selects the exceedance
    conditions recorded for the KDE; when None, the ``top_k`` highest
    responses are recorded instead.
    """
    if years < 1:
        raise ValueError("years must be >= 1")
    rng = as_generator(rng)
    master = int(rng.integers(0, 2**63 - 1))
    n_states = states_per_year(env.state_duration_hours)
    m = gp.m
    shape_from_gp = m == 3
    u_grid, s_grid, mu_tab, sd_tab = _grid_tables(gp, env, band, grid, coverage)
    u0, du = u_grid[0], u_grid[1] - u_grid[0]
    s0, ds = s_grid[0], s_grid[1] - s_grid[0]
    thr = -np.inf if threshold is None else float(threshold)
    keep = top_k if threshold is None else _TOP_CAP

    def one_year(y):
        yrng = substream(derive_seed(master, "lt-year", y))
        u, sig = env.sample(n_states, yrng)
        z = yrng.standard_normal((m, n_states))
        unif = yrng.random((n_blocks, n_states))
        resp, n_clamped = gp_grid_scan(
            u, sig, z, unif, u0, du, s0, ds, mu_tab, sd_tab,
            shape_from_gp, band[0], band[1], BETA_FLOOR,
        )
        amax = max(0.0, float(resp.max()))
        # retain this year's top responses for the exceedance record
        k = min(keep, n_states)
        idx = np.argpartition(resp, n_states - k)[n_states - k:]
        sel = idx[resp[idx] > thr] if threshold is not None else idx
        return amax, n_clamped, np.column_stack([u[sel], sig[sel]]), resp[sel]

    annual = np.empty(years)
    clamped = 0
    conds, resps = [], []
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one_year, range(years)))
    else:
        results = [one_year(y) for y in range(years)]
    for y, (amax, ncl, cs, rs) in enumerate(results):
        annual[y] = amax
        clamped += ncl
        conds.append(cs)
        resps.append(rs)
    all_c = np.concatenate(conds) if conds else np.empty((0, 2))
    all_r = np.concatenate(resps) if resps else np.empty(0)
    # deterministic cap: keep globally best, stable in (year, index) order
    limit = top_k if threshold is None else _TOP_CAP
    if len(all_r) > limit:
        order = np.argsort(-all_r, kind="stable")[:limit]
        order.sort()
        all_c, all_r = all_c[order], all_r[order]
    return LongTermRun(
        years=years,
        annual_maxima=annual,
        exceed_conditions=all_c,
        exceed_responses=all_r,
        threshold=math.nan if threshold is None else float(threshold),
        n_clamped=clamped,
    )


def return_value(run, T_years):
    """Empirical T-year return value from a long-term run."""
    val, wide = return_value_from_annual_maxima(run.annual_maxima, T_years)
    if wide:
        warnings.warn(
            f"{run.years} years gives a wide confidence interval for the "
            f"{T_years:g}-year return value (want >= {2 * T_years:g})",
            stacklevel=2,
        )
    return val


def failure_probability(run, threshold):
    """Annual probability that the maximum response exceeds threshold."""
    if threshold <= 0:
        raise DomainError("threshold must be positive")
    return float(np.mean(run.annual_maxima > threshold))


def _as_xy(points):
    if isinstance(points, np.ndarray):
        xy = np.atleast_2d(np.asarray(points, dtype=float))
    elif len(points) and isinstance(points[0], Condition):
        xy = np.array([[c.u, c.sigma_u] for c in points])
    else:
        xy = np.atleast_2d(np.asarray(points, dtype=float))
    return xy


class ExceedanceKDE:
    """Gaussian-product KDE with per-dimension Silverman bandwidths."""

    def __init__(self, points, bandwidth="auto"):
        self.points = _as_xy(points)
        n, d = self.points.shape
        if n < 1:
            raise ValueError("KDE needs at least one point")
        if isinstance(bandwidth, str):
            if bandwidth != "auto":
                raise ValueError(f"unknown bandwidth rule {bandwidth!r}")
            sd = self.points.std(axis=0, ddof=1) if n > 1 else np.zeros(d)
            h = sd * (4.0 / (d + 2.0)) ** (1.0 / (d + 4.0)) * n ** (-1.0 / (d + 4.0))
            h[h < 1e-12] = 1.0
        else:
            h = np.broadcast_to(np.asarray(bandwidth, dtype=float), (d,)).copy()
            if np.any(h <= 0):
                raise ValueError("bandwidths must be positive")
        self.bandwidth = h

    def __call__(self, x, chunk=2048):
        xy = _as_xy(x)
        out = np.empty(len(xy))
        h = self.bandwidth
        norm = 1.0 / (len(self.points) * np.prod(h) * (2.0 * math.pi) ** (len(h) / 2.0))
        for a in range(0, len(xy), chunk):
            b = min(a + chunk, len(xy))
            t = (xy[a:b, None, :] - self.points[None, :, :]) / h
            out[a:b] = norm * np.exp(-0.5 * np.sum(t * t, axis=2)).sum(axis=1)
        return out if len(out) > 1 else float(out[0])


def exceedance_kde(points, bandwidth="auto"):
    """Density estimate of the exceedance-driving conditions."""
    return ExceedanceKDE(points, bandwidth)


def acquisition_argmax(gp, s, candidates, norm="euclidean"):
    """Candidate maximizing s(x) * |sigma_theta(x)|.

    The posterior-sd norm is taken in normalized output space so no
    single parameter dominates by units; ``norm`` may be "euclidean",
    "product" or "max".  Ties break to the lowest candidate index.
    """
    xy = _as_xy(candidates)
    if len(xy) == 0:
        raise ValueError("candidate set is empty")
    if np.any(xy[:, 0] < 3.0) or np.any(xy[:, 0] > 25.0):
        raise DomainError("candidates must lie inside the operating band [3, 25]")
    _, sd = gp.posterior(xy)
    sdn = sd / gp.out_scale
    if norm == "euclidean":
        width = np.sqrt(np.sum(sdn**2, axis=1))
    elif norm == "product":
        width = np.prod(sdn, axis=1)
    elif norm == "max":
        width = np.max(sdn, axis=1)
    else:
        raise ValueError(f"unknown norm {norm!r}")
    dens = np.asarray(s(xy), dtype=float).reshape(-1)
    score = dens * width
    i = int(np.argmax(score))
    return Condition(float(xy[i, 0]), float(xy[i, 1]))


def initial_design(env, n=8, rng=0, band=(3.0, 25.0), coverage=0.999,
                   n_candidates=100):
    """Maximin Latin hypercube over the operating band and the central
    sigma mass, used to seed the GP before any acquisition."""
    if n < 3:
        raise ValueError("initial design needs at least 3 points")
    rng = as_generator(rng)
    s_lo, s_hi = env.sigma_range(band, coverage=coverage)
    s_lo = max(s_lo, 0.0)
    best, best_score = None, -np.inf
    for _ in range(n_candidates):
        unit = np.empty((n, 2))
        for d in range(2):
            unit[:, d] = (rng.permutation(n) + rng.random(n)) / n
        dists = np.sqrt(((unit[:, None, :] - unit[None, :, :]) ** 2).sum(axis=2))
        np.fill_diagonal(dists, np.inf)
        score = dists.min()
        if score > best_score:
            best, best_score = unit, score
    pts = np.empty_like(best)
    pts[:, 0] = band[0] + best[:, 0] * (band[1] - band[0])
    pts[:, 1] = s_lo + best[:, 1] * (s_hi - s_lo)
    return [Condition(float(a), float(b)) for a, b in pts]


def fit_condition(cond, preset, n_seeds, seed_fn, family="gumbel",
                  state_duration_hours=None, fit_kwargs=None):
    """Short-term EV fit at one condition from n_seeds simulations.

    Each seed simulates one state; states longer than one block are
    split into their 10-minute block maxima so the fit always sees the
    block-level law.  Failed simulations retry with derived seeds (at
    most 10 attempts per seed slot).
    """
    n_blocks = blocks_per_state(preset, state_duration_hours)
    obs = np.empty(n_seeds * n_blocks)
    for j in range(n_seeds):
        for attempt in range(10):
            try:
                obs[j * n_blocks:(j + 1) * n_blocks] = simulate_block_maxima(
                    cond, seed_fn(j, attempt), preset, n_blocks)
                break
            except SimulatorFailure:
                continue
        else:
            raise SimulatorFailure(
                f"condition {cond}: 10 consecutive failures at seed slot {j}")
    fit = gaussian_likelihood_approx(
        obs, family=family,
        rng=substream(seed_fn(n_seeds, 0), "mcmc"),
        **(fit_kwargs or {}),
    )
    return obs, fit


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    x_new: Condition
    n_seeds: int
    rv50: float
    rv100: float
    p_f: float
    wall_s: float

    def __post_init__(self):
        if self.rv100 < self.rv50:
            raise ValueError("rv100 must be >= rv50")


@dataclass
class ExperimentHistory:
    """Per-iteration convergence records plus the final surrogate state."""

    records: list = field(default_factory=list)
    gp: GPModel = None
    training: list = field(default_factory=list)
    final_run: LongTermRun = None
    converged: bool = False

    def append(self, rec):
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ValueError("iteration indices must be strictly increasing")
        self.records.append(rec)

    @property
    def iterations(self):
        return [r.iteration for r in self.records]

    def rv_series(self, which="rv100"):
        return np.array([getattr(r, which) for r in self.records])

    def to_csv(self, path, timing=True):
        import csv as _csv
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["iter", "u_new", "sigma_u_new", "rv50_mnm",
                        "rv100_mnm", "pf", "wall_s"])
            for r in self.records:
                w.writerow([
                    r.iteration,
                    f"{r.x_new.u:.12g}", f"{r.x_new.sigma_u:.12g}",
                    f"{r.rv50:.12g}", f"{r.rv100:.12g}", f"{r.p_f:.12g}",
                    f"{r.wall_s:.3f}" if timing else "0.000",
                ])


def _checkpoint_dump(path, master, training, records, converged):
    state = {
        "master": master,
        "training": [
            [[c.u, c.sigma_u], mean.tolist(), cov.tolist()]
            for c, mean, cov in training
        ],
        "records": [
            [r.iteration, r.x_new.u, r.x_new.sigma_u, r.n_seeds,
             r.rv50, r.rv100, r.p_f, r.wall_s]
            for r in records
        ],
        "converged": converged,
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(state, fh)
    import os
    os.replace(tmp, path)


def _checkpoint_load(path):
    with open(path, encoding="utf-8") as fh:
        state = json.load(fh)
    training = [
        (Condition(x[0], x[1]), np.asarray(mean), np.asarray(cov))
        for x, mean, cov in state["training"]
    ]
    records = [
        IterationRecord(int(it), Condition(u, s), int(ns), rv50, rv100, pf, wall)
        for it, u, s, ns, rv50, rv100, pf, wall in state["records"]
    ]
    return state["master"], training, records, state.get("converged", False)


def run_sequential(env, preset, family="gumbel", n_seeds=18, init_points=8,
                   max_iters=30, years=1000, rng=0, pf_threshold=27.112,
                   resample_longterm=False, grid=(256, 256), threads=1,
                   checkpoint_path=None, resume=False, rel_tol=0.01,
                   patience=5, n_candidates=100_000, acq_norm="euclidean",
                   fit_kwargs=None, callback=None):
    """The sequential-sampling loop.

    Per iteration: long-term MC over the current GP -> return values
    and failure probability -> KDE of exceedance conditions -> pick the
    next condition by acquisition -> n_seeds simulations there -> refit.
    Stops at ``max_iters`` or once rv100 moves less than ``rel_tol``
    over ``patience`` consecutive iterations.
    """
    if init_points < 3:
        raise ValueError("init_points must be >= 3")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    rng = as_generator(rng)
    band = (preset.cut_in, preset.cut_out)
    n_blocks = blocks_per_state(preset, env.state_duration_hours)

    start_iter = 1
    if resume and checkpoint_path:
        master, training, records, converged = _checkpoint_load(checkpoint_path)
        history = ExperimentHistory(records=records, training=training,
                                    converged=converged)
        start_iter = (records[-1].iteration + 1) if records else 1
        if converged or start_iter > max_iters:
            history.gp = fit_gp(training, family=family)
            return history
    else:
        master = int(rng.integers(0, 2**63 - 1))
        history = ExperimentHistory()
        design = initial_design(env, init_points, substream(master, "design"),
                                band=band)
        training = []
        for i, cond in enumerate(design):
            _, fit = fit_condition(
                cond, preset, n_seeds,
                lambda j, a, _i=i: derive_seed(master, "init", _i, j, a),
                family=family,
                state_duration_hours=env.state_duration_hours,
                fit_kwargs=fit_kwargs,
            )
            training.append((cond, fit.mean, fit.cov))
        history.training = training

    gp = fit_gp(training, family=family)
    streak = 0
    prev_rv100 = history.records[-1].rv100 if history.records else None
    rv100_est = prev_rv100
    if len(history.records) >= 2:
        # rebuild the convergence streak after a resume
        rvs = history.rv_series("rv100")
        for a, b in zip(rvs[:-1], rvs[1:]):
            change = abs(b - a) / max(abs(a), 1e-12)
            streak = streak + 1 if change < rel_tol else 0

    for it in range(start_iter, max_iters + 1):
        t0 = time.perf_counter()
        lt_rng = substream(master, "longterm", it) if resample_longterm \
            else substream(master, "longterm")
        run = simulate_longterm(
            gp, env, years, lt_rng,
            threshold=rv100_est, n_blocks=n_blocks, band=band,
            grid=grid, threads=threads,
        )
        rv50 = return_value(run, 50.0)
        rv100 = return_value(run, 100.0)
        p_f = failure_probability(run, pf_threshold)

        if len(run.exceed_conditions) >= 2:
            kde = ExceedanceKDE(run.exceed_conditions)
        else:
            # threshold left too few points: fall back to the top responses
            fallback = simulate_longterm(
                gp, env, years, substream(master, "longterm"),
                threshold=None, n_blocks=n_blocks, band=band,
                grid=grid, threads=threads,
            )
            kde = ExceedanceKDE(fallback.exceed_conditions)

        cand = _candidate_pool(env, n_candidates, substream(master, "cand", it),
                               band)
        try:
            x_new = acquisition_argmax(gp, kde, cand, norm=acq_norm)
            _, fit = fit_condition(
                x_new, preset, n_seeds,
                lambda j, a, _it=it: derive_seed(master, "seq", _it, j, a),
                family=family,
                state_duration_hours=env.state_duration_hours,
                fit_kwargs=fit_kwargs,
            )
        except ExtremisError as exc:
            raise type(exc)(f"iteration {it}: {exc}") from exc
        training.append((x_new, fit.mean, fit.cov))
        gp = fit_gp(training, family=family)

        rec = IterationRecord(
            iteration=it, x_new=x_new, n_seeds=n_seeds,
            rv50=rv50, rv100=rv100,
            p_f=p_f, wall_s=time.perf_counter() - t0,
        )
        history.append(rec)
        history.gp = gp
        history.final_run = run
        if checkpoint_path:
            _checkpoint_dump(checkpoint_path, master, training,
                             history.records, history.converged)
        if callback is not None:
            callback(rec, history)

        if prev_rv100 is not None:
            change = abs(rv100 - prev_rv100) / max(abs(prev_rv100), 1e-12)
            streak = streak + 1 if change < rel_tol else 0
        prev_rv100 = rv100
        rv100_est = rv100
        if streak >= patience:
            history.converged = True
            if checkpoint_path:
                _checkpoint_dump(checkpoint_path, master, training,
                                 history.records, True)
            break
    return history


def _candidate_pool(env, n, rng, band):
    """Fresh long-term draws restricted to the operating band."""
    out = np.empty((0, 2))
    guard = 0
    while len(out) < n and guard < 200:
        u, s = env.sample(max(n, 4096), rng)
        keep = (u >= band[0]) & (u <= band[1])
        out = np.vstack([out, np.column_stack([u[keep], s[keep]])])
        guard += 1
    if len(out) < n:
        raise DomainError("operating band has negligible probability mass")
    return out[:n]
