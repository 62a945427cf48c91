"""Environmental contours (IFORM and direct sampling) and the
contour-based extreme response workflow.

An IFORM contour maps the sphere of radius beta = Phi^-1(1 - pe) from
standard-normal space through the inverse Rosenblatt transform.  A
direct-sampling (DS) contour is the inner envelope of supporting lines:
for each direction the line is placed at the empirical pe-exceedance
quantile of the sample projections, and the contour vertices are the
envelope's corner points.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .envmodel import HOURS_PER_YEAR, Condition, exceedance_probability
from .errors import (
    DegenerateContourError,
    DomainError,
    EmptyContourError,
    InsufficientSamplesError,
)
from .rng import as_generator, derive_seed
from .simulator import blocks_per_state, max_response_with_retry

__all__ = [
    "Contour",
    "ContourResponseTable",
    "iform_contour",
    "ds_contour",
    "ds_contour_from_model",
    "crop_contour",
    "contour_extreme_response",
    "order_statistic",
    "projection_exceedance",
]


@dataclass(frozen=True)
class Contour:
    """Ordered contour points with their construction metadata.

    ``points`` is a (k, 2) array of (u, sigma_u).  For DS contours the
    supporting-line description (angles and offsets) is kept in
    ``support`` for exceedance checking; IFORM contours carry None.
    """

    points: np.ndarray
    angles_deg: np.ndarray
    exceedance_prob: float
    method: str
    return_period_years: float
    state_duration_hours: float
    support: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "points", np.atleast_2d(np.asarray(self.points, dtype=float)))
        object.__setattr__(self, "angles_deg", np.asarray(self.angles_deg, dtype=float))
        if self.method not in ("iform", "direct_sampling"):
            raise ValueError(f"unknown contour method {self.method!r}")
        if not 0.0 < self.exceedance_prob < 1.0:
            raise ValueError("exceedance_prob must be in (0, 1)")
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ValueError("points must be a (k, 2) array")
        if len(self.points) != len(self.angles_deg):
            raise ValueError("points and angles_deg lengths differ")
        expected = exceedance_probability(self.return_period_years, self.state_duration_hours)
        if abs(self.exceedance_prob / expected - 1.0) > 1e-12:
            raise ValueError(
                "exceedance_prob inconsistent with return period: "
                f"{self.exceedance_prob:g} vs {expected:g}"
            )

    @property
    def n_points(self):
        return len(self.points)

    @property
    def u(self):
        return self.points[:, 0]

    @property
    def sigma_u(self):
        return self.points[:, 1]

    @property
    def conditions(self):
        return [Condition(float(a), float(b)) for a, b in self.points]

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["theta_deg", "u", "sigma_u"])
            for ang, (a, b) in zip(self.angles_deg, self.points):
                writer.writerow([f"{ang:.10g}", f"{a:.12g}", f"{b:.12g}"])


def _return_period_for(pe, state_duration_hours):
    return state_duration_hours / (HOURS_PER_YEAR * pe)


def iform_contour(model, pe, n_points=72):
    """IFORM contour at per-state exceedance probability ``pe``."""
    if not 0.0 < pe < 0.5:
        raise DomainError("pe must be in (0, 0.5)")
    if n_points < 8:
        raise ValueError("n_points must be >= 8")
    beta = float(-ndtri(pe))
    theta = np.linspace(0.0, 2.0 * math.pi, n_points, endpoint=False)
    z1 = beta * np.cos(theta)
    z2 = beta * np.sin(theta)
    u, sigma = model.inverse_rosenblatt(z1, z2)
    return Contour(
        points=np.column_stack([u, sigma]),
        angles_deg=np.degrees(theta),
        exceedance_prob=pe,
        method="iform",
        return_period_years=_return_period_for(pe, model.state_duration_hours),
        state_duration_hours=model.state_duration_hours,
    )


def _as_xy(samples):
    if isinstance(samples, np.ndarray):
        return np.asarray(samples, dtype=float)
    if len(samples) and isinstance(samples[0], Condition):
        return np.array([[c.u, c.sigma_u] for c in samples])
    return np.asarray(samples, dtype=float)


def order_statistic(sorted_values, q):
    """Empirical quantile, order-statistic rule: 1-based index ceil(q*n)."""
    n = len(sorted_values)
    k = min(max(int(math.ceil(q * n)), 1), n)
    return float(sorted_values[k - 1]), k


def _supporting_offsets(xy, pe, theta):
    """pe-exceedance projection quantile per direction."""
    n = len(xy)
    k = int(math.ceil((1.0 - pe) * n))
    e = np.column_stack([np.cos(theta), np.sin(theta)])
    offsets = np.empty(len(theta))
    for i in range(len(theta)):
        proj = xy @ e[i]
        # k-th smallest (1-based) via partial selection
        offsets[i] = np.partition(proj, k - 1)[k - 1]
    return offsets


def _envelope_vertices(theta, offsets):
    """Inner envelope of half-planes {x . e_k <= c_k}: vertices of
    consecutive supporting lines, filtered against all constraints."""
    m = len(theta)
    cos, sin = np.cos(theta), np.sin(theta)
    verts = np.empty((m, 2))
    for i in range(m):
        j = (i + 1) % m
        det = cos[i] * sin[j] - sin[i] * cos[j]
        if abs(det) < 1e-14:
            verts[i] = np.nan
            continue
        verts[i, 0] = (offsets[i] * sin[j] - offsets[j] * sin[i]) / det
        verts[i, 1] = (offsets[j] * cos[i] - offsets[i] * cos[j]) / det
    ok = np.all(np.isfinite(verts), axis=1)
    tol = 1e-9 * np.maximum(1.0, np.abs(offsets))
    proj = verts @ np.column_stack([cos, sin]).T
    ok &= np.all(proj <= offsets[None, :] + tol[None, :], axis=1)
    return verts, ok


def ds_contour(samples, pe, n_angles=72, state_duration_hours=1.0 / 6.0):
    """Direct-sampling contour from Monte Carlo samples.

    ``samples`` is a (n, 2) array or a sequence of Condition.  Each of
    ``n_angles`` directions gets a supporting line at the empirical
    projection quantile with exceedance fraction pe; the contour is the
    inner envelope of those half-planes.
    """
    if not 0.0 < pe < 0.5:
        raise DomainError("pe must be in (0, 0.5)")
    if n_angles < 8:
        raise ValueError("n_angles must be >= 8")
    xy = _as_xy(samples)
    n = len(xy)
    if n * pe < 1.0:
        raise InsufficientSamplesError(
            f"{n} samples cannot resolve pe={pe:g} (need at least {int(1 / pe) + 1})"
        )
    theta = np.linspace(0.0, 2.0 * math.pi, n_angles, endpoint=False)
    offsets = _supporting_offsets(xy, pe, theta)
    return _ds_from_lines(theta, offsets, pe, state_duration_hours)


def _ds_from_lines(theta, offsets, pe, state_duration_hours):
    verts, ok = _envelope_vertices(theta, offsets)
    if np.count_nonzero(ok) < 3:
        raise DegenerateContourError(
            "supporting lines do not bound a 2D region (degenerate sample cloud)"
        )
    spread = np.max(verts[ok], axis=0) - np.min(verts[ok], axis=0)
    if np.all(spread < 1e-12):
        raise DegenerateContourError("envelope collapsed to a single point")
    return Contour(
        points=verts[ok],
        angles_deg=np.degrees(theta[ok]),
        exceedance_prob=pe,
        method="direct_sampling",
        return_period_years=_return_period_for(pe, state_duration_hours),
        state_duration_hours=state_duration_hours,
        support=(theta.copy(), offsets.copy()),
    )


def ds_contour_from_model(model, pe, n_samples, n_angles=72, rng=0,
                          chunk_size=1_000_000):
    """DS contour from streamed model samples (memory-bounded).

    Equivalent to ds_contour on the concatenated sample set: per
    direction only the top ~pe*n projections are retained per chunk, so
    arbitrarily deep contours fit in memory.
    """
    if not 0.0 < pe < 0.5:
        raise DomainError("pe must be in (0, 0.5)")
    if n_samples * pe < 1.0:
        raise InsufficientSamplesError(
            f"{n_samples} samples cannot resolve pe={pe:g}"
        )
    rng = as_generator(rng)
    theta = np.linspace(0.0, 2.0 * math.pi, n_angles, endpoint=False)
    e = np.column_stack([np.cos(theta), np.sin(theta)])
    # number of retained top projections per direction: enough to locate
    # the k-th smallest of n = ceil((1-pe)n), i.e. the (n-k+1)-th largest
    keep = int(math.floor(pe * n_samples)) + 2
    tops = [np.full(0, -np.inf) for _ in range(n_angles)]
    remaining = int(n_samples)
    while remaining > 0:
        m = min(chunk_size, remaining)
        remaining -= m
        u, s = model.sample(m, rng)
        xy = np.column_stack([u, s])
        proj = xy @ e.T
        for i in range(n_angles):
            merged = np.concatenate([tops[i], proj[:, i]])
            if len(merged) > keep:
                merged = np.partition(merged, len(merged) - keep)[-keep:]
            tops[i] = merged
    n = int(n_samples)
    k = int(math.ceil((1.0 - pe) * n))
    offsets = np.empty(n_angles)
    for i in range(n_angles):
        # k-th smallest overall = (n - k + 1)-th largest, inside the kept top set
        top_sorted = np.sort(tops[i])
        offsets[i] = top_sorted[len(top_sorted) - (n - k + 1)]
    return _ds_from_lines(theta, offsets, pe, model.state_duration_hours)


def crop_contour(contour, u_min, u_max):
    """Drop contour points with u outside [u_min, u_max]."""
    if not u_min < u_max:
        raise ValueError("u_min must be below u_max")
    mask = (contour.u >= u_min) & (contour.u <= u_max)
    if not np.any(mask):
        raise EmptyContourError(
            f"no contour points inside u in [{u_min:g}, {u_max:g}]"
        )
    return Contour(
        points=contour.points[mask],
        angles_deg=contour.angles_deg[mask],
        exceedance_prob=contour.exceedance_prob,
        method=contour.method,
        return_period_years=contour.return_period_years,
        state_duration_hours=contour.state_duration_hours,
        support=contour.support,
    )


@dataclass(frozen=True)
class ContourResponseTable:
    """Per-point empirical response quantiles along a contour."""

    point_u: np.ndarray
    point_sigma: np.ndarray
    quantiles: tuple
    values: np.ndarray  # (n_points, n_quantiles)
    flagged: np.ndarray  # bool, same shape; high-q estimate ties the sample max
    n_seeds: int

    def __post_init__(self):
        if list(self.quantiles) != sorted(self.quantiles):
            raise ValueError("quantiles must be sorted ascending")
        if np.any(np.diff(self.values, axis=1) < 0):
            raise ValueError("response values must be nondecreasing in quantile")

    def summary(self):
        """Per quantile: table-wide max response and its argmax condition."""
        out = {}
        for j, q in enumerate(self.quantiles):
            i = int(np.argmax(self.values[:, j]))
            out[q] = {
                "response_mnm": float(self.values[i, j]),
                "condition": Condition(float(self.point_u[i]), float(self.point_sigma[i])),
                "flagged": bool(self.flagged[i, j]),
            }
        return out

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["u", "sigma_u", "quantile", "response_mnm"])
            for i in range(len(self.point_u)):
                for j, q in enumerate(self.quantiles):
                    writer.writerow([
                        f"{self.point_u[i]:.12g}",
                        f"{self.point_sigma[i]:.12g}",
                        f"{q:g}",
                        f"{self.values[i, j]:.12g}",
                    ])


def contour_extreme_response(contour, preset, n_seeds, quantiles=(0.5, 0.9, 0.99),
                             rng=0, state_duration_hours=None, threads=1):
    """Empirical response quantiles at every contour point.

    Runs ``n_seeds`` independent state simulations per point with the
    reseed-on-failure policy (up to 10 attempts per seed slot).  The
    quantile rule is the 1-based order statistic ceil(q*n); rows where
    at most one sample lies above the estimate are flagged (the
    estimate effectively ties the sample maximum).
    """
    if n_seeds < 2:
        raise ValueError("n_seeds must be >= 2")
    quantiles = tuple(sorted(float(q) for q in quantiles))
    if any(not 0.0 < q < 1.0 for q in quantiles):
        raise DomainError("quantile levels must be in (0, 1)")
    if state_duration_hours is None:
        state_duration_hours = contour.state_duration_hours
    blocks_per_state(preset, state_duration_hours)  # validate early
    rng = as_generator(rng)
    master = int(rng.integers(0, 2**63 - 1))

    conditions = contour.conditions

    def run_point(i):
        cond = conditions[i]
        maxima = np.empty(n_seeds)
        for j in range(n_seeds):
            maxima[j] = max_response_with_retry(
                cond,
                lambda attempt: derive_seed(master, "contour-response", i, j, attempt),
                preset,
                state_duration_hours,
            )
        maxima.sort()
        vals = np.empty(len(quantiles))
        flags = np.zeros(len(quantiles), dtype=bool)
        for jq, q in enumerate(quantiles):
            vals[jq], k = order_statistic(maxima, q)
            flags[jq] = (n_seeds - k) <= 1
        return vals, flags

    n_pts = contour.n_points
    values = np.empty((n_pts, len(quantiles)))
    flagged = np.zeros((n_pts, len(quantiles)), dtype=bool)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for i, (vals, flags) in enumerate(pool.map(run_point, range(n_pts))):
                values[i] = vals
                flagged[i] = flags
    else:
        for i in range(n_pts):
            values[i], flagged[i] = run_point(i)
    return ContourResponseTable(
        point_u=contour.u.copy(),
        point_sigma=contour.sigma_u.copy(),
        quantiles=quantiles,
        values=values,
        flagged=flagged,
        n_seeds=n_seeds,
    )


def projection_exceedance(contour, samples, model=None, angles_deg=None):
    """Fraction of samples beyond the contour, per test direction.

    For IFORM contours the samples are mapped through the model's
    Rosenblatt transform and compared against the beta-sphere; for DS
    contours the supporting line for each test direction is the
    (interpolated) envelope support function.  ``angles_deg`` defaults
    to the contour's construction directions.  Returns an array of
    per-direction exceedance fractions.
    """
    xy = _as_xy(samples)
    if contour.method == "iform":
        if model is None:
            raise ValueError("IFORM exceedance check needs the EnvModel")
        if angles_deg is None:
            angles_deg = contour.angles_deg
        theta = np.radians(np.asarray(angles_deg, dtype=float))
        beta = float(-ndtri(contour.exceedance_prob))
        z1, z2 = model.rosenblatt(xy[:, 0], xy[:, 1])
        z = np.column_stack([z1, z2])
        e = np.column_stack([np.cos(theta), np.sin(theta)])
        return np.mean(z @ e.T > beta, axis=0)
    if contour.support is None:
        raise ValueError("DS contour lacks supporting-line data")
    theta_c, offsets_c = contour.support
    if angles_deg is None:
        theta, offsets = theta_c, offsets_c
    else:
        theta = np.radians(np.asarray(angles_deg, dtype=float)) % (2.0 * math.pi)
        # support function of the convex envelope: h(t) = max_v v . e_t
        verts = contour.points
        e = np.column_stack([np.cos(theta), np.sin(theta)])
        offsets = np.max(verts @ e.T, axis=0)
    e = np.column_stack([np.cos(theta), np.sin(theta)])
    proj = xy @ e.T
    return np.mean(proj > offsets[None, :], axis=0)
