"""Numpy implementations of the hot kernels.

These are the reference implementations; the compiled extension in
``_core.pyx`` mirrors them loop-for-loop.  Both are kept
expression-identical (same operation order within each term) so the
backends agree to a few ulps; parity is enforced by tests.

Conventions shared by both backends:

* surfaces are ``amp * exp(-((u - u_peak)/width)^2 / 2) * max(0, 1 + gain*sigma)``
  inside the operating band and exactly zero outside it;
* the standard extreme-value quantile is the Gumbel quantile when the
  shape is zero and ``expm1(-shape*log(-log(p)))/shape`` otherwise;
* a state made of several blocks takes the max over per-block draws,
  which for a monotone quantile function equals transforming the max
  of the block uniforms.
"""
import numpy as np
from scipy.signal import lfilter

__all__ = [
    "ev_max_scan",
    "gp_grid_scan",
    "ar1_oscillator",
    "narx_free_run",
]


def _surface(u, sig, params):
    amp, u_peak, width, gain = params
    t = (u - u_peak) / width
    return amp * np.exp(-0.5 * t * t) * np.maximum(1.0 + gain * sig, 0.0)


def _std_ev_quantile(p, shape):
    """Quantile of the standard Gumbel (shape 0) or GEV at probability p."""
    e = -np.log(p)
    if shape == 0.0:
        return -np.log(e)
    return np.expm1(-shape * np.log(e)) / shape


def ev_max_scan(u, sig, unif, med_params, sc_params, shape,
                cut_in, cut_out, cutoff_u, cutoff_sigma):
    """Max response draw per condition from the closed-form surfaces.

    Parameters
    ----------
    u, sig : (n,) arrays of conditions.
    unif : (n_blocks, n) uniforms, one row per 10-minute block.
    med_params, sc_params : length-4 surface parameter tuples.
    shape : GEV shape of the block-max law (0 for Gumbel).
    cutoff_u, cutoff_sigma : truncation thresholds; conditions below
        either threshold contribute exactly zero (pass -inf to disable).

    Returns
    -------
    y : (n,) response maxima (zero where inactive).
    n_active : number of conditions actually evaluated.
    """
    u = np.asarray(u, dtype=float)
    sig = np.asarray(sig, dtype=float)
    active = (u >= cut_in) & (u <= cut_out) & (u >= cutoff_u) & (sig >= cutoff_sigma)
    r = _surface(u, sig, med_params)
    s = _surface(u, sig, sc_params)
    # floor avoids -inf from a (measure-zero) exact 0.0 uniform
    pmax = np.maximum(unif.max(axis=0), 1e-300)
    q = _std_ev_quantile(pmax, shape)
    y = np.where(active, r + s * q, 0.0)
    return y, int(np.count_nonzero(active))


def _bilinear(table, fu, iu, wu, fs, js, ws):
    # table is (nu, ns); index arrays precomputed by gp_grid_scan
    t00 = table[iu, js]
    t10 = table[iu + 1, js]
    t01 = table[iu, js + 1]
    t11 = table[iu + 1, js + 1]
    return ((1.0 - wu) * t00 + wu * t10) * (1.0 - ws) + ((1.0 - wu) * t01 + wu * t11) * ws


def gp_grid_scan(u, sig, z, unif, u0, du, s0, ds, mu_tab, sd_tab,
                 shape_from_gp, cut_in, cut_out, beta_floor):
    """Max response draw per condition from a gridded GP posterior.

    The posterior mean/sd of each extreme-value parameter is tabulated
    on a regular (u, sigma) grid; this kernel interpolates bilinearly,
    samples one parameter vector per condition using the normals ``z``
    and draws the state max through the block uniforms ``unif``.

    Parameters
    ----------
    z : (m, n) standard normals, one row per output (loc, scale[, shape]).
    shape_from_gp : True when the third output is the GEV shape.
    beta_floor : lower clamp for the sampled scale parameter.

    Returns
    -------
    y : (n,) response draws (zero outside the operating band).
    n_clamped : how many sampled scales hit the floor.
    """
    u = np.asarray(u, dtype=float)
    sig = np.asarray(sig, dtype=float)
    m, nu, ns = mu_tab.shape
    active = (u >= cut_in) & (u <= cut_out)

    fu = np.clip((u - u0) / du, 0.0, nu - 1.0)
    fs = np.clip((sig - s0) / ds, 0.0, ns - 1.0)
    iu = np.minimum(fu.astype(np.intp), nu - 2)
    js = np.minimum(fs.astype(np.intp), ns - 2)
    wu = fu - iu
    ws = fs - js

    loc = _bilinear(mu_tab[0], fu, iu, wu, fs, js, ws) + z[0] * _bilinear(
        sd_tab[0], fu, iu, wu, fs, js, ws
    )
    scale = _bilinear(mu_tab[1], fu, iu, wu, fs, js, ws) + z[1] * _bilinear(
        sd_tab[1], fu, iu, wu, fs, js, ws
    )
    clamped = active & (scale < beta_floor)
    scale = np.maximum(scale, beta_floor)

    pmax = np.maximum(unif.max(axis=0), 1e-300)
    e = -np.log(pmax)
    if shape_from_gp:
        shp = _bilinear(mu_tab[2], fu, iu, wu, fs, js, ws) + z[2] * _bilinear(
            sd_tab[2], fu, iu, wu, fs, js, ws
        )
        small = np.abs(shp) < 1e-12
        shp_safe = np.where(small, 1.0, shp)
        q = np.where(
            small,
            -np.log(e),
            np.expm1(-shp_safe * np.log(e)) / shp_safe,
        )
    else:
        q = -np.log(e)

    y = np.where(active, loc + scale * q, 0.0)
    return y, int(np.count_nonzero(clamped))


def ar1_oscillator(z, u_mean, sigma_u, phi, sigma_e, c1, c2, d0,
                   amp, u_peak, width, cut_in, cut_out):
    """Synthetic wind time series and oscillator response.

    The wind is an AR(1) process around ``u_mean`` started from its
    stationary distribution; the response is a damped second-order
    recursion driven by the static map of the wind (the median surface
    at zero turbulence).

    Returns (wind, y), both (n,) arrays.
    """
    z = np.asarray(z, dtype=float)
    n = z.shape[0]
    drive = np.empty(n)
    drive[0] = sigma_u * z[0]
    drive[1:] = sigma_e * z[1:]
    x = lfilter([1.0], [1.0, -phi], drive)
    wind = u_mean + x

    t = (wind - u_peak) / width
    force = amp * np.exp(-0.5 * t * t)
    force[(wind < cut_in) | (wind > cut_out)] = 0.0
    g = d0 * force
    g[:2] = 0.0
    y = lfilter([1.0], [1.0, -c1, -c2], g)
    return wind, y


def narx_free_run(exponents, coeffs, ar_lags, exo_feats, yhat, t_start):
    """Free-running polynomial NARX prediction, in place.

    ``yhat[:t_start]`` must hold the initial values; entries from
    ``t_start`` on are overwritten.  The regressor vector at step t is
    ``[yhat[t - ar_lags], exo_feats[t]]`` and each model term is the
    product of regressors raised to its integer exponents.  Overflow is
    allowed to propagate (callers detect divergence afterwards).
    """
    exponents = np.asarray(exponents)
    coeffs = np.asarray(coeffs, dtype=float)
    ar_lags = np.asarray(ar_lags)
    n = yhat.shape[0]
    na = ar_lags.shape[0]
    p = exponents.shape[1]
    phi = np.empty(p)
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(t_start, n):
            for j in range(na):
                phi[j] = yhat[t - ar_lags[j]]
            if p > na:
                phi[na:] = exo_feats[t]
            yhat[t] = np.prod(phi**exponents, axis=1) @ coeffs
    return yhat
