"""Independent-output Gaussian-process regression for extreme-value
parameter surfaces over (u, sigma_u).

Each output dimension (location, scale, and optionally shape of the
short-term fit) gets its own anisotropic Matern-3/2 GP with zero prior
mean in normalized space and heteroscedastic Gaussian noise taken from
the diagonal of the per-point parameter covariance.  Cross-parameter
noise correlations are dropped; this keeps the outputs independent,
matching the diagonal kernel structure.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from .envmodel import Condition
from .errors import DegenerateSampleError, NonConvergenceError
from .rng import as_generator

__all__ = [
    "GPModel",
    "fit_gp",
    "gp_posterior",
    "gp_sample_params",
    "matern32",
    "log_marginal_likelihood",
    "BETA_FLOOR",
]

BETA_FLOOR = 1e-6
_LENGTH_BOUNDS = (0.05, 10.0)
_VAR_BOUNDS = (1e-4, 1e2)
_JITTER = 1e-10

# deterministic multi-start grid in normalized units: (l_u, l_sigma, v)
_STARTS = (
    (1.0, 1.0, 1.0),
    (0.3, 0.3, 1.0),
    (3.0, 3.0, 1.0),
    (0.5, 2.0, 0.3),
    (2.0, 0.5, 3.0),
    (1.0, 1.0, 0.05),
)


def _scaled_sqdists(x1, x2, lengths):
    """Per-dimension squared distances scaled by length scales.

    Returns (n1, n2, d) so kernel gradients can reuse the pieces.
    """
    diff = x1[:, None, :] - x2[None, :, :]
    return (diff / lengths[None, None, :]) ** 2


def matern32(x1, x2, variance, lengths):
    """Anisotropic Matern-3/2: k(r) = v (1 + sqrt3 r) exp(-sqrt3 r)."""
    sq = _scaled_sqdists(x1, x2, np.asarray(lengths, dtype=float))
    rho = math.sqrt(3.0) * np.sqrt(np.sum(sq, axis=2))
    return variance * (1.0 + rho) * np.exp(-rho)


def _kernel_and_grads(x, variance, lengths):
    """Gram matrix and its gradients w.r.t. log-hyperparameters."""
    sq = _scaled_sqdists(x, x, lengths)
    rho = math.sqrt(3.0) * np.sqrt(np.sum(sq, axis=2))
    e = np.exp(-rho)
    k = variance * (1.0 + rho) * e
    grads = [k]  # d/d log v
    for d in range(x.shape[1]):
        grads.append(3.0 * variance * e * sq[:, :, d])  # d/d log l_d
    return k, grads


def log_marginal_likelihood(x, y, noise_var, variance, lengths, with_grad=False):
    """Zero-mean GP log marginal likelihood (and gradient in log-params).

    Gradient order: (log v, log l_1, ..., log l_d).
    """
    n = len(y)
    if with_grad:
        k, grads = _kernel_and_grads(x, variance, lengths)
    else:
        k = matern32(x, x, variance, lengths)
    k = k + np.diag(noise_var + _JITTER)
    c, low = cho_factor(k, lower=True)
    alpha = cho_solve((c, low), y)
    lml = -0.5 * float(y @ alpha) - float(np.sum(np.log(np.diag(c)))) \
        - 0.5 * n * math.log(2.0 * math.pi)
    if not with_grad:
        return lml
    kinv = cho_solve((c, low), np.eye(n))
    w = np.outer(alpha, alpha) - kinv
    grad = np.array([0.5 * float(np.sum(w * g)) for g in grads])
    return lml, grad


def _fit_one_output(x, y, noise_var):
    """Maximize the LML over (log v, log l_u, log l_sigma), multi-start."""
    lb = np.log([_VAR_BOUNDS[0], _LENGTH_BOUNDS[0], _LENGTH_BOUNDS[0]])
    ub = np.log([_VAR_BOUNDS[1], _LENGTH_BOUNDS[1], _LENGTH_BOUNDS[1]])

    def neg(p):
        v = math.exp(p[0])
        ls = np.exp(p[1:])
        try:
            lml, g = log_marginal_likelihood(x, y, noise_var, v, ls, with_grad=True)
        except np.linalg.LinAlgError:
            return 1e12, np.zeros_like(p)
        return -lml, -g

    best = None
    for lu, lsig, v in _STARTS:
        p0 = np.clip(np.log([v, lu, lsig]), lb, ub)
        res = minimize(neg, p0, jac=True, method="L-BFGS-B",
                       bounds=list(zip(lb, ub)))
        if not np.isfinite(res.fun):
            continue
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise NonConvergenceError("GP hyperparameter optimization failed from all starts")
    v = math.exp(best.x[0])
    lengths = np.exp(best.x[1:])
    return v, lengths, -best.fun


@dataclass
class GPModel:
    """Per-output Matern-3/2 GPs over normalized (u, sigma_u) inputs."""

    x_train: np.ndarray          # (n, 2) raw inputs
    y_train: np.ndarray          # (n, m) raw targets
    noise_diag: np.ndarray       # (n, m) per-output noise variances (raw units)
    family: str
    in_mean: np.ndarray
    in_scale: np.ndarray
    out_mean: np.ndarray
    out_scale: np.ndarray
    variances: np.ndarray        # (m,) normalized signal variances
    lengths: np.ndarray          # (m, 2) normalized length scales
    lml: np.ndarray              # (m,)
    # per-output Cholesky factors and weights, recomputed on load
    _chols: list = field(default_factory=list, repr=False)
    _alphas: list = field(default_factory=list, repr=False)
    clamp_count: int = 0

    @property
    def n_train(self):
        return len(self.x_train)

    @property
    def m(self):
        return self.y_train.shape[1]

    def _xn(self, x):
        return (np.atleast_2d(np.asarray(x, dtype=float)) - self.in_mean) / self.in_scale

    def _factorize(self):
        xn = self._xn(self.x_train)
        yn = (self.y_train - self.out_mean) / self.out_scale
        noise_n = self.noise_diag / self.out_scale**2
        self._chols = []
        self._alphas = []
        for j in range(self.m):
            k = matern32(xn, xn, self.variances[j], self.lengths[j])
            k += np.diag(noise_n[:, j] + _JITTER)
            try:
                low = cholesky(k, lower=True)
            except np.linalg.LinAlgError:
                raise DegenerateSampleError(
                    "training kernel matrix is singular (duplicate inputs with "
                    "contradictory noise-free targets?)"
                )
            self._chols.append(low)
            self._alphas.append(
                solve_triangular(low.T, solve_triangular(low, yn[:, j], lower=True))
            )

    def posterior(self, x):
        """Posterior mean and standard deviation, de-normalized.

        ``x`` is one Condition / (u, sigma) pair or an (n, 2) array;
        returns arrays shaped (m,) or (n, m).
        """
        single = isinstance(x, Condition) or np.asarray(x, dtype=float).ndim == 1
        if isinstance(x, Condition):
            x = [[x.u, x.sigma_u]]
        xs = self._xn(x)
        xn = self._xn(self.x_train)
        mean = np.empty((len(xs), self.m))
        sd = np.empty((len(xs), self.m))
        for j in range(self.m):
            ks = matern32(xs, xn, self.variances[j], self.lengths[j])
            mean[:, j] = ks @ self._alphas[j]
            vcol = solve_triangular(self._chols[j], ks.T, lower=True)
            var = self.variances[j] - np.sum(vcol**2, axis=0)
            sd[:, j] = np.sqrt(np.maximum(var, 0.0))
        mean = self.out_mean + self.out_scale * mean
        sd = self.out_scale * sd
        if single:
            return mean[0], sd[0]
        return mean, sd

    def sample_params(self, x, rng):
        """One posterior draw of the parameter vector at ``x``.

        The scale component (index 1) is clamped at BETA_FLOOR; clamps
        are counted on the model.
        """
        rng = as_generator(rng)
        mean, sd = self.posterior(x)
        theta = mean + sd * rng.standard_normal(self.m)
        if theta[1] < BETA_FLOOR:
            theta[1] = BETA_FLOOR
            self.clamp_count += 1
        return theta

    def posterior_tables(self, u_grid, s_grid):
        """Mean/sd tables over a tensor grid, for grid-accelerated scans.

        Returns (mu, sd) with shape (m, nu, ns), the layout the scan
        kernels index.
        """
        uu, ss = np.meshgrid(u_grid, s_grid, indexing="ij")
        pts = np.column_stack([uu.ravel(), ss.ravel()])
        mean, sd = self.posterior(pts)
        nu, ns = len(u_grid), len(s_grid)
        mu = np.ascontiguousarray(np.moveaxis(mean.reshape(nu, ns, self.m), 2, 0))
        sdt = np.ascontiguousarray(np.moveaxis(sd.reshape(nu, ns, self.m), 2, 0))
        return mu, sdt

    def to_dict(self):
        return {
            "family": self.family,
            "x_train": self.x_train.tolist(),
            "y_train": self.y_train.tolist(),
            "noise_diag": self.noise_diag.tolist(),
            "in_mean": self.in_mean.tolist(),
            "in_scale": self.in_scale.tolist(),
            "out_mean": self.out_mean.tolist(),
            "out_scale": self.out_scale.tolist(),
            "variances": self.variances.tolist(),
            "lengths": self.lengths.tolist(),
            "lml": self.lml.tolist(),
        }

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def from_dict(cls, d):
        model = cls(
            x_train=np.asarray(d["x_train"], dtype=float),
            y_train=np.asarray(d["y_train"], dtype=float),
            noise_diag=np.asarray(d["noise_diag"], dtype=float),
            family=d["family"],
            in_mean=np.asarray(d["in_mean"], dtype=float),
            in_scale=np.asarray(d["in_scale"], dtype=float),
            out_mean=np.asarray(d["out_mean"], dtype=float),
            out_scale=np.asarray(d["out_scale"], dtype=float),
            variances=np.asarray(d["variances"], dtype=float),
            lengths=np.asarray(d["lengths"], dtype=float),
            lml=np.asarray(d["lml"], dtype=float),
        )
        model._factorize()
        return model

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _unpack_training(training):
    xs, means, covs = [], [], []
    for cond, mean, cov in training:
        if isinstance(cond, Condition):
            xs.append([cond.u, cond.sigma_u])
        else:
            xs.append([float(cond[0]), float(cond[1])])
        means.append(np.asarray(mean, dtype=float))
        covs.append(np.asarray(cov, dtype=float))
    x = np.asarray(xs, dtype=float)
    y = np.asarray(means, dtype=float)
    m = y.shape[1]
    noise = np.empty_like(y)
    for i, cov in enumerate(covs):
        if cov.shape != (m, m):
            raise ValueError(f"covariance {i} has shape {cov.shape}, expected {(m, m)}")
        d = np.diag(cov)
        if np.any(d < -1e-12):
            raise ValueError(f"covariance {i} has negative diagonal entries")
        noise[i] = np.maximum(d, 0.0)
    return x, y, noise


def fit_gp(training, family=None):
    """Fit independent per-output GPs to (Condition, mean, cov) triples.

    ``family`` tags which EV family the outputs parameterize (metadata
    only; inferred as gumbel/gev from the output dimension if omitted).
    """
    training = list(training)
    if len(training) < 2:
        raise ValueError("need at least 2 training points")
    x, y, noise = _unpack_training(training)
    n, m = y.shape
    if family is None:
        family = {2: "gumbel", 3: "gev"}.get(m)
        if family is None:
            raise ValueError(f"cannot infer family for output dimension {m}")
    in_mean = x.mean(axis=0)
    in_scale = x.std(axis=0)
    in_scale[in_scale < 1e-12] = 1.0
    out_mean = y.mean(axis=0)
    out_scale = y.std(axis=0)
    out_scale[out_scale < 1e-12] = 1.0

    xn = (x - in_mean) / in_scale
    yn = (y - out_mean) / out_scale
    noise_n = noise / out_scale**2

    variances = np.empty(m)
    lengths = np.empty((m, 2))
    lml = np.empty(m)
    for j in range(m):
        variances[j], lengths[j], lml[j] = _fit_one_output(xn, yn[:, j], noise_n[:, j])

    model = GPModel(
        x_train=x, y_train=y, noise_diag=noise, family=family,
        in_mean=in_mean, in_scale=in_scale,
        out_mean=out_mean, out_scale=out_scale,
        variances=variances, lengths=lengths, lml=lml,
    )
    model._factorize()
    return model


def gp_posterior(model, x):
    """Functional alias for GPModel.posterior."""
    return model.posterior(x)


def gp_sample_params(model, x, rng):
    """Functional alias for GPModel.sample_params."""
    return model.sample_params(x, rng)
