"""Short-term extreme-value fitting: Gumbel/GEV MLE, MCMC uncertainty,
and the Gaussian likelihood approximation consumed by the GP layer.

Parameter order is (location alpha, scale beta[, shape gamma]).  All
internal optimization and MCMC run in the transformed space
(alpha, log beta[, gamma]) so the scale stays positive; a flat prior on
that space makes the MCMC target proportional to the likelihood.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BudgetExceededError,
    DegenerateSampleError,
    DomainError,
    NonConvergenceError,
    PathologicalChainError,
)
from .rng import as_generator

__all__ = [
    "FAMILIES",
    "ShortTermFit",
    "ev_loglik",
    "ev_loglik_grad",
    "ev_pdf",
    "ev_cdf",
    "ev_quantile",
    "ev_sample",
    "fit_mle",
    "mcmc_posterior_samples",
    "gaussian_likelihood_approx",
]

FAMILIES = {"gumbel": ("alpha", "beta"), "gev": ("alpha", "beta", "gamma")}

EULER_GAMMA = 0.5772156649015329
# |gamma| below this is treated as exactly Gumbel
_GAMMA_TINY = 1e-12
# |gamma| below this uses the series expansion for the shape gradient
_GAMMA_SERIES = 1e-5
_DEFAULT_SHAPE_BOUNDS = (-0.5, 0.5)


def _check_family(family):
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}, expected one of {sorted(FAMILIES)}")
    return len(FAMILIES[family])


def _check_params(family, params):
    m = _check_family(family)
    params = np.asarray(params, dtype=float)
    if params.shape != (m,):
        raise DomainError(f"{family} expects {m} parameters, got {params.shape}")
    if not np.all(np.isfinite(params)):
        raise DomainError("parameters must be finite")
    if params[1] <= 0:
        raise DomainError("scale must be positive")
    return params


# -- distribution functions -----------------------------------------------


def ev_quantile(family, params, p):
    """Quantile of the Gumbel/GEV law; series switch near zero shape."""
    params = _check_params(family, params)
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise DomainError("probability level must be in (0, 1)")
    alpha, beta = params[0], params[1]
    gamma = params[2] if family == "gev" else 0.0
    loge = np.log(-np.log(p))
    if abs(gamma) < 1e-8:
        q = alpha - beta * loge
    else:
        q = alpha + beta * np.expm1(-gamma * loge) / gamma
    return q if np.ndim(q) else float(q)


def ev_cdf(family, params, y):
    params = _check_params(family, params)
    y = np.asarray(y, dtype=float)
    alpha, beta = params[0], params[1]
    z = (y - alpha) / beta
    gamma = params[2] if family == "gev" else 0.0
    if abs(gamma) < _GAMMA_TINY:
        out = np.exp(-np.exp(-z))
    else:
        t = 1.0 + gamma * z
        # outside support: CDF saturates at 0 (gamma>0) or 1 (gamma<0)
        sat = 0.0 if gamma > 0 else 1.0
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            out = np.where(t > 0, np.exp(-np.exp(-np.log1p(gamma * z) / gamma)), sat)
    return out if out.ndim else float(out)


def ev_pdf(family, params, y):
    params = _check_params(family, params)
    y = np.asarray(y, dtype=float)
    alpha, beta = params[0], params[1]
    z = (y - alpha) / beta
    gamma = params[2] if family == "gev" else 0.0
    if abs(gamma) < _GAMMA_TINY:
        out = np.exp(-z - np.exp(-z)) / beta
    else:
        t = 1.0 + gamma * z
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            logw = -np.log1p(gamma * z) / gamma
            out = np.where(
                t > 0, np.exp((1.0 + gamma) * logw - np.exp(logw)) / beta, 0.0
            )
    return out if out.ndim else float(out)


def ev_sample(family, params, rng, size=None):
    """Inverse-CDF sampling; deterministic per stream."""
    params = _check_params(family, params)
    rng = as_generator(rng)
    p = np.maximum(rng.random(size), 1e-300)
    alpha, beta = params[0], params[1]
    gamma = params[2] if family == "gev" else 0.0
    e = -np.log(p)
    if abs(gamma) < _GAMMA_TINY:
        q = -np.log(e)
    else:
        q = np.expm1(-gamma * np.log(e)) / gamma
    out = alpha + beta * q
    return out if np.ndim(out) else float(out)


# -- log-likelihood and gradient ------------------------------------------


def ev_loglik(params, y, family):
    """Log-likelihood; -inf outside the GEV support."""
    params = np.asarray(params, dtype=float)
    y = np.asarray(y, dtype=float)
    alpha, beta = params[0], params[1]
    if beta <= 0:
        return -math.inf
    z = (y - alpha) / beta
    n = y.size
    gamma = params[2] if family == "gev" else 0.0
    if abs(gamma) < _GAMMA_TINY:
        return float(-n * math.log(beta) - np.sum(z) - np.sum(np.exp(-z)))
    t = 1.0 + gamma * z
    if np.any(t <= 0):
        return -math.inf
    logt = np.log1p(gamma * z)
    w = np.exp(-logt / gamma)
    return float(-n * math.log(beta) - (1.0 + 1.0 / gamma) * np.sum(logt) - np.sum(w))


def ev_loglik_grad(params, y, family):
    """Analytic gradient of the log-likelihood in natural parameters.

    Near gamma = 0 the shape derivative switches to a second-order
    series expansion (the exact expression suffers catastrophic
    cancellation there).
    """
    params = np.asarray(params, dtype=float)
    y = np.asarray(y, dtype=float)
    alpha, beta = params[0], params[1]
    z = (y - alpha) / beta
    n = y.size
    gamma = params[2] if family == "gev" else 0.0

    if abs(gamma) < _GAMMA_TINY:
        ez = np.exp(-z)
        ga = (n - np.sum(ez)) / beta
        gb = (-n + np.sum(z * (1.0 - ez))) / beta
        if family == "gumbel":
            return np.array([ga, gb])
        # gamma -> 0 limit of the shape derivative
        gg = float(np.sum(-(z - 0.5 * z * z) - ez * 0.5 * z * z))
        return np.array([ga, gb, gg])

    t = 1.0 + gamma * z
    if np.any(t <= 0):
        return np.full(3, np.nan)
    logt = np.log1p(gamma * z)
    w = np.exp(-logt / gamma)
    inv_t = 1.0 / t
    ga = ((1.0 + gamma) * np.sum(inv_t) - np.sum(w * inv_t)) / beta
    gb = (-n + (1.0 + gamma) * np.sum(z * inv_t) - np.sum(w * z * inv_t)) / beta
    if abs(gamma) < _GAMMA_SERIES:
        ez = np.exp(-z)
        gg = float(
            np.sum(
                -(z - 0.5 * z * z)
                - 2.0 * gamma * (z**3 / 3.0 - 0.5 * z * z)
                - ez * (0.5 * z * z + 2.0 * gamma * (z**4 / 8.0 - z**3 / 3.0))
            )
        )
    else:
        gg = float(
            np.sum(logt) / gamma**2
            - (1.0 + 1.0 / gamma) * np.sum(z * inv_t)
            - np.sum(w * (logt / gamma**2 - z * inv_t / gamma))
        )
    return np.array([ga, gb, gg])


# -- MLE --------------------------------------------------------------------


def _validate_samples(samples, family):
    y = np.asarray(samples, dtype=float).ravel()
    n_min = 3 if family == "gumbel" else 5
    if y.size < n_min:
        raise DegenerateSampleError(f"{family} fit needs at least {n_min} samples")
    if not np.all(np.isfinite(y)):
        raise DegenerateSampleError("samples must be finite")
    spread = np.max(y) - np.min(y)
    if spread <= 1e-12 * max(1.0, abs(float(np.max(y)))):
        raise DegenerateSampleError("samples are all (numerically) equal")
    return y


def _to_natural(x, family):
    if family == "gumbel":
        return np.array([x[0], math.exp(x[1])])
    return np.array([x[0], math.exp(x[1]), x[2]])


def _transformed_objective(y, family):
    """Negative loglik and gradient in (alpha, log beta[, gamma]) space."""

    def fun(x):
        params = _to_natural(x, family)
        ll = ev_loglik(params, y, family)
        if not np.isfinite(ll):
            if family == "gumbel":
                # only reachable through beta overflow; push log-beta down
                return 1e10 * (1.0 + abs(x[1])), np.array([0.0, 1e10 * np.sign(x[1])])
            # quadratic penalty pushing back into the GEV support region
            gamma = x[2]
            beta = math.exp(min(x[1], 700.0))
            z = (y - x[0]) / beta
            t = 1.0 + gamma * z
            viol = np.maximum(-t + 1e-9, 0.0)
            pen = 1e10 * (1.0 + np.sum(viol**2))
            da = np.sum(2.0 * viol * (gamma / beta)) * 1e10
            db = np.sum(2.0 * viol * (gamma * z / beta)) * 1e10 * beta
            dg = np.sum(2.0 * viol * (-z)) * 1e10
            return pen, np.array([da, db, dg])
        grad = ev_loglik_grad(params, y, family)
        grad_t = grad.copy()
        grad_t[1] = grad[1] * params[1]
        return -ll, -grad_t

    return fun


def fit_mle(samples, family="gumbel", shape_bounds=_DEFAULT_SHAPE_BOUNDS,
            grad_tol=1e-6):
    """Maximum likelihood estimate from a method-of-moments start.

    Quasi-Newton in transformed space, then Newton polish until the
    transformed-space gradient infinity norm is below ``grad_tol``.
    Returns natural parameters (alpha, beta[, gamma]).
    """
    from scipy.optimize import minimize

    _check_family(family)
    y = _validate_samples(samples, family)
    sd = float(np.std(y, ddof=1))
    beta0 = sd * math.sqrt(6.0) / math.pi
    alpha0 = float(np.mean(y)) - EULER_GAMMA * beta0
    objective = _transformed_objective(y, family)
    if family == "gumbel":
        x0 = np.array([alpha0, math.log(beta0)])
        bounds = [(None, None), (None, None)]
    else:
        x0 = np.array([alpha0, math.log(beta0), 0.0])
        bounds = [(None, None), (None, None), shape_bounds]

    res = minimize(objective, x0, jac=True, method="L-BFGS-B", bounds=bounds)
    x = res.x.copy()

    # Newton polish on the analytic gradient (finite-difference Hessian)
    def grad_at(xv):
        return objective(xv)[1]

    for _ in range(20):
        g = grad_at(x)
        free = np.ones(x.size, dtype=bool)
        if family == "gev":
            lo, hi = shape_bounds
            if x[2] <= lo + 1e-9 and g[2] > 0:
                free[2] = False
            if x[2] >= hi - 1e-9 and g[2] < 0:
                free[2] = False
        if np.max(np.abs(g[free])) < grad_tol:
            break
        h = 1e-6 * np.maximum(np.abs(x), 1.0)
        H = np.empty((x.size, x.size))
        for j in range(x.size):
            xp = x.copy()
            xm = x.copy()
            xp[j] += h[j]
            xm[j] -= h[j]
            H[:, j] = (grad_at(xp) - grad_at(xm)) / (2.0 * h[j])
        H = 0.5 * (H + H.T)
        # solve in the free subspace; a pinned coordinate must not bend the step
        step = np.zeros_like(x)
        try:
            step[free] = np.linalg.solve(H[np.ix_(free, free)], -g[free])
        except np.linalg.LinAlgError:
            step[free] = -g[free]
        f0 = objective(x)[0]
        alpha_ls = 1.0
        for _ in range(30):
            x_new = x + alpha_ls * step
            if family == "gev":
                x_new[2] = min(max(x_new[2], shape_bounds[0]), shape_bounds[1])
            if objective(x_new)[0] <= f0:
                break
            alpha_ls *= 0.5
        else:
            break
        if np.max(np.abs(x_new - x)) < 1e-15 * np.max(np.abs(x) + 1.0):
            x = x_new
            break
        x = x_new

    g = grad_at(x)
    free = np.ones(x.size, dtype=bool)
    if family == "gev":
        lo, hi = shape_bounds
        if x[2] <= lo + 1e-9 or x[2] >= hi - 1e-9:
            free[2] = False
    if np.max(np.abs(g[free])) >= grad_tol:
        raise NonConvergenceError(
            f"MLE gradient norm {np.max(np.abs(g[free])):.3g} >= {grad_tol:g} "
            f"after polish (params {_to_natural(x, family)})"
        )
    return _to_natural(x, family)


# -- MCMC --------------------------------------------------------------------


class _AdaptiveChain:
    """Random-walk Metropolis in transformed space with Haario-style
    adaptation during warmup, frozen proposal afterwards."""

    def __init__(self, y, family, rng, shape_bounds=_DEFAULT_SHAPE_BOUNDS):
        self.y = y
        self.family = family
        self.rng = as_generator(rng)
        self.shape_bounds = shape_bounds
        mle = fit_mle(y, family, shape_bounds)
        self.dim = mle.size
        x0 = np.array([mle[0], math.log(mle[1])] + ([mle[2]] if self.dim == 3 else []))
        self.x = x0
        self.lp = self._logpost(x0)
        self.cov = self._fisher_cov(x0)
        self.log_scale = math.log(2.38**2 / self.dim)
        self._update_chol()
        self.accepted = 0
        self.steps = 0

    def _logpost(self, x):
        if self.dim == 3:
            lo, hi = self.shape_bounds
            if not lo <= x[2] <= hi:
                return -math.inf
        return ev_loglik(_to_natural(x, self.family), self.y, self.family)

    def _fisher_cov(self, x0):
        """Inverse finite-difference Hessian as the initial proposal shape."""
        d = self.dim
        h = 1e-5 * np.maximum(np.abs(x0), 1.0)
        H = np.empty((d, d))
        for j in range(d):
            xp, xm = x0.copy(), x0.copy()
            xp[j] += h[j]
            xm[j] -= h[j]
            gp = self._fd_grad(xp, h)
            gm = self._fd_grad(xm, h)
            H[:, j] = (gp - gm) / (2.0 * h[j])
        H = 0.5 * (H + H.T)
        try:
            cov = np.linalg.inv(-H)
            np.linalg.cholesky(cov + 1e-12 * np.eye(d))
            return cov
        except np.linalg.LinAlgError:
            return np.diag(h**2 * 1e4)

    def _fd_grad(self, x, h):
        g = np.empty(self.dim)
        for j in range(self.dim):
            xp, xm = x.copy(), x.copy()
            xp[j] += h[j]
            xm[j] -= h[j]
            g[j] = (self._logpost(xp) - self._logpost(xm)) / (2.0 * h[j])
        return g

    def _update_chol(self):
        cov = math.exp(self.log_scale) * self.cov + 1e-12 * np.eye(self.dim)
        self.chol = np.linalg.cholesky(cov)

    def run(self, n_steps, adapt=False):
        """Advance the chain; returns the raw (unthinned) trajectory."""
        d = self.dim
        out = np.empty((n_steps, d))
        window_acc = 0
        for i in range(n_steps):
            prop = self.x + self.chol @ self.rng.standard_normal(d)
            lp = self._logpost(prop)
            if math.log(max(self.rng.random(), 1e-300)) < lp - self.lp:
                self.x = prop
                self.lp = lp
                self.accepted += 1
                window_acc += 1
            out[i] = self.x
            self.steps += 1
            if adapt and (i + 1) % 50 == 0:
                rate = window_acc / 50.0
                self.log_scale += 0.3 * (rate - 0.3)
                window_acc = 0
                if (i + 1) % 200 == 0 and i > 400:
                    emp = np.cov(out[: i + 1].T, ddof=1)
                    if np.all(np.isfinite(emp)):
                        self.cov = emp + 1e-10 * np.eye(d)
                self._update_chol()
        return out

    @property
    def acceptance_rate(self):
        return self.accepted / max(self.steps, 1)


def mcmc_posterior_samples(samples, family, n_draws, rng, thin=5,
                           shape_bounds=_DEFAULT_SHAPE_BOUNDS):
    """Posterior draws (natural parameters) from adaptive random-walk
    Metropolis with a flat prior on (alpha, log beta[, gamma]).

    Burn-in is 20% of the total raw chain and is discarded along with
    the adaptation; the returned draws are thinned by ``thin``.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    y = _validate_samples(samples, family)
    chain = _AdaptiveChain(y, family, rng, shape_bounds)
    raw_needed = n_draws * thin
    warmup = max(500, int(0.25 * raw_needed))
    chain.run(warmup, adapt=True)
    chain.accepted = 0
    chain.steps = 0
    raw = chain.run(raw_needed, adapt=False)
    rate = chain.acceptance_rate
    if rate < 0.01 or rate > 0.99:
        raise PathologicalChainError(
            f"acceptance rate {rate:.3f} outside (0.01, 0.99) after adaptation"
        )
    draws_t = raw[thin - 1 :: thin][:n_draws]
    out = np.empty_like(draws_t)
    out[:, 0] = draws_t[:, 0]
    out[:, 1] = np.exp(draws_t[:, 1])
    if draws_t.shape[1] == 3:
        out[:, 2] = draws_t[:, 2]
    return out


# -- Gaussian likelihood approximation ---------------------------------------


@dataclass
class ShortTermFit:
    """Gaussian approximation of the parameter likelihood at one condition."""

    family: str
    mean: np.ndarray
    cov: np.ndarray
    n_obs: int
    mcmc_draws_used: int
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        m = _check_family(self.family)
        if self.mean.shape != (m,) or self.cov.shape != (m, m):
            raise ValueError("mean/cov shape does not match the family")
        if self.mean[1] <= 0:
            raise ValueError("mean scale component must be positive")
        if not np.allclose(self.cov, self.cov.T, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        # PSD check: must factor with tiny jitter
        np.linalg.cholesky(self.cov + 1e-10 * np.eye(m))

    @property
    def dim(self):
        return self.mean.size

    def to_dict(self):
        return {
            "family": self.family,
            "mean": self.mean.tolist(),
            "cov": self.cov.tolist(),
            "n_obs": int(self.n_obs),
            "mcmc_draws_used": int(self.mcmc_draws_used),
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            family=d["family"],
            mean=np.asarray(d["mean"], dtype=float),
            cov=np.asarray(d["cov"], dtype=float),
            n_obs=d["n_obs"],
            mcmc_draws_used=d["mcmc_draws_used"],
            diagnostics=d.get("diagnostics", {}),
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _estimates_agree(a, b, rel_tol):
    """Elementwise relative agreement with a 1e-8 absolute floor."""
    return bool(np.all(np.abs(a - b) <= rel_tol * np.maximum(np.abs(a), np.abs(b)) + 1e-8))


def gaussian_likelihood_approx(samples, family="gumbel", rel_tol=0.01,
                               batch=1000, rng=None, thin=5,
                               max_draws=400_000,
                               shape_bounds=_DEFAULT_SHAPE_BOUNDS):
    """Mean/covariance of the parameter likelihood via batched MCMC.

    Draws accumulate in batches of ``batch`` (thinned) samples; after
    each batch the running mean and covariance are recomputed, and the
    procedure stops once three consecutive estimates agree elementwise
    within ``rel_tol`` (absolute floor 1e-8).  Raises
    BudgetExceededError at ``max_draws`` thinned draws.
    """
    y = _validate_samples(samples, family)
    chain = _AdaptiveChain(y, family, rng, shape_bounds)
    warmup = max(500, int(0.2 * batch * thin))
    chain.run(warmup, adapt=True)
    chain.accepted = 0
    chain.steps = 0

    draws = []
    history = []
    total = 0
    converged = False
    while total < max_draws:
        raw = chain.run(batch * thin, adapt=False)
        thinned = raw[thin - 1 :: thin]
        nat = np.empty_like(thinned)
        nat[:, 0] = thinned[:, 0]
        nat[:, 1] = np.exp(thinned[:, 1])
        if thinned.shape[1] == 3:
            nat[:, 2] = thinned[:, 2]
        draws.append(nat)
        total += len(thinned)
        all_draws = np.concatenate(draws, axis=0)
        mean = all_draws.mean(axis=0)
        cov = np.cov(all_draws.T, ddof=1)
        history.append(np.concatenate([mean, cov.ravel()]))
        if len(history) >= 3 and all(
            _estimates_agree(history[-3 + i], history[-2 + i], rel_tol)
            for i in range(2)
        ):
            converged = True
            break
    if not converged:
        raise BudgetExceededError(
            f"no 3-batch agreement within {rel_tol:.2%} after {total} draws"
        )
    rate = chain.acceptance_rate
    if rate < 0.01 or rate > 0.99:
        raise PathologicalChainError(
            f"acceptance rate {rate:.3f} outside (0.01, 0.99) after adaptation"
        )
    return ShortTermFit(
        family=family,
        mean=mean,
        cov=cov,
        n_obs=int(y.size),
        mcmc_draws_used=total,
        diagnostics={
            "acceptance_rate": rate,
            "batches": len(history),
            "rel_tol": rel_tol,
        },
    )
