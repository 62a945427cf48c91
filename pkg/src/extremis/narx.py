"""Polynomial NARX surrogate with a staged input manifold.

The model is a polynomial in the lag vector (past outputs and current /
past exogenous inputs), fit by one-step-ahead least squares and applied
in free-running recursion.  The manifold builder turns raw channels
into auxiliary channels (analytic maps or frozen NARX submodels) that
the final surrogate consumes as extra exogenous inputs.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np

from ._kernels import narx_free_run
from .errors import (
    MissingDependencyError,
    NarxDivergenceError,
    NarxRankError,
)

__all__ = [
    "LagSpec",
    "NarxModel",
    "ManifoldStage",
    "build_lag_vector",
    "monomial_exponents",
    "fit_narx",
    "predict_narx",
    "build_manifold",
]

_DIVERGENCE_FACTOR = 1e6


@dataclass(frozen=True)
class LagSpec:
    """Lag structure: autoregressive lags on the output (>= 1) and, per
    exogenous channel in declaration order, nonnegative input lags."""

    autoregressive: tuple
    exogenous: dict = field(default_factory=dict)

    def __post_init__(self):
        ar = tuple(int(v) for v in self.autoregressive)
        if ar != tuple(sorted(ar)) or len(set(ar)) != len(ar):
            raise ValueError("autoregressive lags must be sorted and unique")
        if any(v < 1 for v in ar):
            raise ValueError("autoregressive lags must be >= 1 (causality)")
        exo = {}
        for name, lags in self.exogenous.items():
            lt = tuple(int(v) for v in lags)
            if lt != tuple(sorted(lt)) or len(set(lt)) != len(lt):
                raise ValueError(f"channel {name!r}: lags must be sorted and unique")
            if any(v < 0 for v in lt):
                raise ValueError(f"channel {name!r}: lags must be >= 0")
            exo[str(name)] = lt
        object.__setattr__(self, "autoregressive", ar)
        object.__setattr__(self, "exogenous", exo)

    @property
    def channel_names(self):
        return tuple(self.exogenous.keys())

    @property
    def max_lag(self):
        lags = list(self.autoregressive)
        for lt in self.exogenous.values():
            lags.extend(lt)
        return max(lags) if lags else 0

    @property
    def dim(self):
        return len(self.autoregressive) + sum(len(v) for v in self.exogenous.values())

    def to_dict(self):
        return {"autoregressive": list(self.autoregressive),
                "exogenous": {k: list(v) for k, v in self.exogenous.items()}}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["autoregressive"]),
                   {k: tuple(v) for k, v in d["exogenous"].items()})


def build_lag_vector(inputs, output_history, spec, t):
    """Lag vector phi(t): output lags first, then per-channel input lags."""
    if t < spec.max_lag:
        raise IndexError(f"t={t} below max lag {spec.max_lag}")
    phi = np.empty(spec.dim)
    k = 0
    for lag in spec.autoregressive:
        phi[k] = output_history[t - lag]
        k += 1
    for name, lags in spec.exogenous.items():
        x = inputs[name]
        for lag in lags:
            phi[k] = x[t - lag]
            k += 1
    return phi


def monomial_exponents(dim, degree, interaction_order=None):
    """Exponent rows of all monomials with total degree <= degree.

    The constant term (all-zero row) comes first; within a degree the
    order follows combinations_with_replacement of variable indices.
    ``interaction_order`` caps how many distinct variables one monomial
    may mix.
    """
    if degree < 1:
        raise ValueError("degree must be >= 1")
    rows = [np.zeros(dim, dtype=np.int64)]
    for d in range(1, degree + 1):
        for combo in combinations_with_replacement(range(dim), d):
            if interaction_order is not None and len(set(combo)) > interaction_order:
                continue
            e = np.zeros(dim, dtype=np.int64)
            for idx in combo:
                e[idx] += 1
            rows.append(e)
    return np.vstack(rows)


@dataclass(frozen=True)
class NarxModel:
    """Fitted polynomial NARX surrogate."""

    spec: LagSpec
    degree: int
    exponents: np.ndarray    # (n_terms, dim) including the constant row
    coefficients: np.ndarray
    train_rmse: float
    train_range: float       # max |y| over training targets; divergence scale
    interaction_order: int = None

    def __post_init__(self):
        if len(self.coefficients) != len(self.exponents):
            raise ValueError("coefficients length must match multi-index count")

    @property
    def n_terms(self):
        return len(self.coefficients)

    def to_dict(self):
        return {
            "spec": self.spec.to_dict(),
            "degree": int(self.degree),
            "exponents": self.exponents.tolist(),
            "coefficients": self.coefficients.tolist(),
            "train_rmse": self.train_rmse,
            "train_range": self.train_range,
            "interaction_order": self.interaction_order,
        }

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def from_dict(cls, d):
        return cls(
            spec=LagSpec.from_dict(d["spec"]),
            degree=d["degree"],
            exponents=np.asarray(d["exponents"], dtype=np.int64),
            coefficients=np.asarray(d["coefficients"], dtype=float),
            train_rmse=d["train_rmse"],
            train_range=d["train_range"],
            interaction_order=d.get("interaction_order"),
        )

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _design_matrix(series_list, spec, exponents):
    """Teacher-forced monomial rows and targets across all series."""
    rows, targets = [], []
    for inputs, y in series_list:
        y = np.asarray(y, dtype=float)
        n = len(y)
        if n <= spec.max_lag:
            continue
        phis = np.empty((n - spec.max_lag, spec.dim))
        for i, t in enumerate(range(spec.max_lag, n)):
            phis[i] = build_lag_vector(inputs, y, spec, t)
        rows.append(_monomials(phis, exponents))
        targets.append(y[spec.max_lag:])
    if not rows:
        raise ValueError("no usable rows after lag trimming")
    return np.vstack(rows), np.concatenate(targets)


def _monomials(phis, exponents):
    out = np.ones((len(phis), len(exponents)))
    for j, e in enumerate(exponents):
        for d in np.flatnonzero(e):
            out[:, j] *= phis[:, d] ** e[d]
    return out


def fit_narx(design, spec, degree, regularization=0.0, interaction_order=None):
    """One-step-ahead least squares for the polynomial NARX model.

    ``design`` is a sequence of (inputs dict, output series) pairs.
    Columns are centered so the constant term carries the output mean;
    with ``regularization`` > 0 a ridge term (not penalizing the
    constant) keeps collinear lag vectors well-posed.  At zero
    regularization a rank-deficient system raises unless the deficiency
    is harmless (an exact fit exists; the minimal-norm solution is the
    documented tie-break).
    """
    if regularization < 0:
        raise ValueError("regularization must be >= 0")
    design = list(design)
    exponents = monomial_exponents(spec.dim, degree, interaction_order)
    X, y = _design_matrix(design, spec, exponents)
    n, p = X.shape
    if n < p:
        raise ValueError(f"{n} usable rows < {p} monomials; extend the design")
    # center non-constant columns; the constant column becomes the intercept
    x_mean = X[:, 1:].mean(axis=0)
    y_mean = y.mean()
    Xc = X[:, 1:] - x_mean
    yc = y - y_mean
    if regularization > 0.0:
        gram = Xc.T @ Xc + regularization * np.eye(p - 1)
        coef = np.linalg.solve(gram, Xc.T @ yc)
    else:
        coef, residual, rank, _ = np.linalg.lstsq(Xc, yc, rcond=None)
        if rank < p - 1:
            fit_err = np.linalg.norm(Xc @ coef - yc)
            scale = np.linalg.norm(yc)
            if fit_err > 1e-10 * max(scale, 1.0):
                raise NarxRankError(
                    f"normal equations singular (rank {rank} < {p - 1}) with "
                    "no exact solution; add regularization or prune lags"
                )
    intercept = y_mean - x_mean @ coef
    coefficients = np.concatenate([[intercept], coef])
    resid = X @ coefficients - y
    rmse = float(np.sqrt(np.mean(resid**2)))
    return NarxModel(
        spec=spec, degree=degree, exponents=exponents,
        coefficients=coefficients, train_rmse=rmse,
        train_range=float(np.max(np.abs(y))),
        interaction_order=interaction_order,
    )


def _exo_features(inputs, spec, n):
    """Exogenous lag features per time step, columns in phi order."""
    n_exo = spec.dim - len(spec.autoregressive)
    feats = np.zeros((n, n_exo))
    k = 0
    for name, lags in spec.exogenous.items():
        x = np.asarray(inputs[name], dtype=float)
        if len(x) != n:
            raise ValueError(f"channel {name!r}: length {len(x)} != {n}")
        for lag in lags:
            if lag == 0:
                feats[:, k] = x
            else:
                feats[lag:, k] = x[:-lag]
            k += 1
    return feats


def predict_narx(model, inputs, init):
    """Free-running prediction driven only by the exogenous inputs.

    ``init`` supplies the first max-lag output values.  Divergence
    (|prediction| beyond 1e6 x the training output range) raises with
    the first offending index.
    """
    spec = model.spec
    init = np.asarray(init, dtype=float)
    max_ar = max(spec.autoregressive) if spec.autoregressive else 0
    if len(init) < max_ar:
        raise ValueError(f"need >= {max_ar} initial output values, got {len(init)}")
    if spec.exogenous:
        n = len(np.asarray(next(iter(inputs.values()))))
    else:
        raise ValueError("prediction horizon undefined without exogenous inputs")
    t_start = max(len(init), spec.max_lag)
    if n < t_start:
        raise ValueError("series shorter than the lag window")
    yhat = np.zeros(n)
    yhat[:len(init)] = init
    feats = _exo_features(inputs, spec, n)
    narx_free_run(
        model.exponents, model.coefficients,
        np.asarray(spec.autoregressive, dtype=np.int64),
        feats, yhat, t_start,
    )
    limit = _DIVERGENCE_FACTOR * max(model.train_range, 1e-12)
    bad = ~(np.abs(yhat) <= limit)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise NarxDivergenceError(i, f"prediction diverged at step {i} "
                                     f"(|y| > {limit:.3g})")
    return yhat


@dataclass(frozen=True)
class ManifoldStage:
    """One auxiliary-channel builder.

    ``builder`` is "analytic_map" (callable ``func(**channels) ->
    series``) or "narx_submodel" (a frozen NarxModel free-run on its
    input channels, started from ``init`` or zeros).
    """

    name: str
    builder: str
    inputs: tuple
    func: callable = None
    model: NarxModel = None
    init: np.ndarray = None

    def __post_init__(self):
        if self.builder not in ("analytic_map", "narx_submodel"):
            raise ValueError(f"unknown builder {self.builder!r}")
        if self.builder == "analytic_map" and self.func is None:
            raise ValueError(f"stage {self.name!r}: analytic_map needs func")
        if self.builder == "narx_submodel" and self.model is None:
            raise ValueError(f"stage {self.name!r}: narx_submodel needs model")
        object.__setattr__(self, "inputs", tuple(self.inputs))


def _topo_order(stages, raw_names):
    """Deterministic topological order (dependency level, then name)."""
    by_name = {s.name: s for s in stages}
    if len(by_name) != len(stages):
        raise ValueError("duplicate stage names")
    resolved = set(raw_names)
    ordered = []
    pending = sorted(stages, key=lambda s: s.name)
    while pending:
        progress = False
        for s in list(pending):
            missing = [d for d in s.inputs if d not in resolved]
            if not missing:
                ordered.append(s)
                resolved.add(s.name)
                pending.remove(s)
                progress = True
        if not progress:
            s = pending[0]
            missing = [d for d in s.inputs
                       if d not in resolved and d not in by_name]
            if missing:
                raise MissingDependencyError(
                    f"stage {s.name!r} needs unknown channel(s) {missing}")
            raise MissingDependencyError(
                f"dependency cycle involving stage {s.name!r}")
    return ordered


def build_manifold(stages, raw_inputs):
    """Evaluate manifold stages over the raw channels.

    Returns a dict of channels: the raw inputs plus one channel per
    stage.  Stage order follows the dependency graph, so permuting the
    declared order of independent stages cannot change the result.
    """
    channels = {k: np.asarray(v, dtype=float) for k, v in raw_inputs.items()}
    for stage in _topo_order(stages, channels.keys()):
        args = {name: channels[name] for name in stage.inputs}
        if stage.builder == "analytic_map":
            out = np.asarray(stage.func(**args), dtype=float)
        else:
            sub = stage.model
            max_ar = max(sub.spec.autoregressive) if sub.spec.autoregressive else 0
            n = len(next(iter(args.values())))
            init = stage.init if stage.init is not None else np.zeros(max(max_ar, 1))
            out = predict_narx(sub, args, init)
        n_ref = len(next(iter(channels.values())))
        if len(out) != n_ref:
            raise ValueError(f"stage {stage.name!r} returned length {len(out)}, "
                             f"expected {n_ref}")
        channels[stage.name] = out
    return channels
