# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled implementations of the hot kernels.

Mirrors ``_pure.py`` loop-for-loop; every arithmetic expression keeps
the same operation order so the two backends agree to a few ulps.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport exp, expm1, log

cnp.import_array()


cdef inline double _std_ev_quantile(double p, double shape) nogil:
    cdef double e = -log(p)
    if shape == 0.0:
        return -log(e)
    return expm1(-shape * log(e)) / shape


def ev_max_scan(double[::1] u, double[::1] sig, double[:, ::1] unif,
                med_params, sc_params, double shape,
                double cut_in, double cut_out,
                double cutoff_u, double cutoff_sigma):
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t nb = unif.shape[0]
    cdef double m_amp = med_params[0]
    cdef double m_up = med_params[1]
    cdef double m_w = med_params[2]
    cdef double m_g = med_params[3]
    cdef double s_amp = sc_params[0]
    cdef double s_up = sc_params[1]
    cdef double s_w = sc_params[2]
    cdef double s_g = sc_params[3]
    out = np.zeros(n)
    cdef double[::1] y = out
    cdef Py_ssize_t i, b
    cdef double uu, ss, t, mod, r, s, pmax, q
    cdef long n_active = 0
    with nogil:
        for i in range(n):
            uu = u[i]
            ss = sig[i]
            if uu < cut_in or uu > cut_out or uu < cutoff_u or ss < cutoff_sigma:
                continue
            n_active += 1
            t = (uu - m_up) / m_w
            mod = 1.0 + m_g * ss
            if mod < 0.0:
                mod = 0.0
            r = m_amp * exp(-0.5 * t * t) * mod
            t = (uu - s_up) / s_w
            mod = 1.0 + s_g * ss
            if mod < 0.0:
                mod = 0.0
            s = s_amp * exp(-0.5 * t * t) * mod
            pmax = unif[0, i]
            for b in range(1, nb):
                if unif[b, i] > pmax:
                    pmax = unif[b, i]
            if pmax < 1e-300:
                pmax = 1e-300
            q = _std_ev_quantile(pmax, shape)
            y[i] = r + s * q
    return out, int(n_active)


cdef inline double _bilin(double[:, :, ::1] tab, Py_ssize_t m,
                          Py_ssize_t iu, Py_ssize_t js,
                          double wu, double ws) nogil:
    cdef double t00 = tab[m, iu, js]
    cdef double t10 = tab[m, iu + 1, js]
    cdef double t01 = tab[m, iu, js + 1]
    cdef double t11 = tab[m, iu + 1, js + 1]
    return ((1.0 - wu) * t00 + wu * t10) * (1.0 - ws) + \
           ((1.0 - wu) * t01 + wu * t11) * ws


def gp_grid_scan(double[::1] u, double[::1] sig, double[:, ::1] z,
                 double[:, ::1] unif, double u0, double du, double s0,
                 double ds, double[:, :, ::1] mu_tab, double[:, :, ::1] sd_tab,
                 bint shape_from_gp, double cut_in, double cut_out,
                 double beta_floor):
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t nb = unif.shape[0]
    cdef Py_ssize_t nu = mu_tab.shape[1]
    cdef Py_ssize_t ns = mu_tab.shape[2]
    out = np.zeros(n)
    cdef double[::1] y = out
    cdef Py_ssize_t i, b, iu, js
    cdef double uu, ss, fu, fs, wu, ws, loc, scale, shp, pmax, e, q
    cdef long n_clamped = 0
    with nogil:
        for i in range(n):
            uu = u[i]
            ss = sig[i]
            if uu < cut_in or uu > cut_out:
                continue
            fu = (uu - u0) / du
            if fu < 0.0:
                fu = 0.0
            elif fu > nu - 1.0:
                fu = nu - 1.0
            fs = (ss - s0) / ds
            if fs < 0.0:
                fs = 0.0
            elif fs > ns - 1.0:
                fs = ns - 1.0
            iu = <Py_ssize_t>fu
            if iu > nu - 2:
                iu = nu - 2
            js = <Py_ssize_t>fs
            if js > ns - 2:
                js = ns - 2
            wu = fu - iu
            ws = fs - js

            loc = _bilin(mu_tab, 0, iu, js, wu, ws) + \
                z[0, i] * _bilin(sd_tab, 0, iu, js, wu, ws)
            scale = _bilin(mu_tab, 1, iu, js, wu, ws) + \
                z[1, i] * _bilin(sd_tab, 1, iu, js, wu, ws)
            if scale < beta_floor:
                scale = beta_floor
                n_clamped += 1

            pmax = unif[0, i]
            for b in range(1, nb):
                if unif[b, i] > pmax:
                    pmax = unif[b, i]
            if pmax < 1e-300:
                pmax = 1e-300
            e = -log(pmax)
            if shape_from_gp:
                shp = _bilin(mu_tab, 2, iu, js, wu, ws) + \
                    z[2, i] * _bilin(sd_tab, 2, iu, js, wu, ws)
                if shp < 1e-12 and shp > -1e-12:
                    q = -log(e)
                else:
                    q = expm1(-shp * log(e)) / shp
            else:
                q = -log(e)
            y[i] = loc + scale * q
    return out, int(n_clamped)


def ar1_oscillator(double[::1] z, double u_mean, double sigma_u, double phi,
                   double sigma_e, double c1, double c2, double d0,
                   double amp, double u_peak, double width,
                   double cut_in, double cut_out):
    cdef Py_ssize_t n = z.shape[0]
    wind_arr = np.empty(n)
    y_arr = np.zeros(n)
    cdef double[::1] wind = wind_arr
    cdef double[::1] y = y_arr
    cdef Py_ssize_t i
    cdef double x, t, f, g
    with nogil:
        x = sigma_u * z[0]
        wind[0] = u_mean + x
        for i in range(1, n):
            x = sigma_e * z[i] + phi * x
            wind[i] = u_mean + x
        for i in range(2, n):
            t = (wind[i] - u_peak) / width
            f = amp * exp(-0.5 * t * t)
            if wind[i] < cut_in or wind[i] > cut_out:
                f = 0.0
            g = d0 * f
            y[i] = g + (c1 * y[i - 1] + c2 * y[i - 2])
    return wind_arr, y_arr


def narx_free_run(cnp.int64_t[:, ::1] exponents, double[::1] coeffs,
                  cnp.int64_t[::1] ar_lags, double[:, ::1] exo_feats,
                  double[::1] yhat, Py_ssize_t t_start):
    cdef Py_ssize_t n = yhat.shape[0]
    cdef Py_ssize_t k = exponents.shape[0]
    cdef Py_ssize_t p = exponents.shape[1]
    cdef Py_ssize_t na = ar_lags.shape[0]
    phi_arr = np.empty(p)
    cdef double[::1] phi = phi_arr
    cdef Py_ssize_t t, r, c, j
    cdef cnp.int64_t e
    cdef double acc, term, pw, v
    with nogil:
        for t in range(t_start, n):
            for j in range(na):
                phi[j] = yhat[t - ar_lags[j]]
            for j in range(na, p):
                phi[j] = exo_feats[t, j - na]
            acc = 0.0
            for r in range(k):
                term = coeffs[r]
                for c in range(p):
                    e = exponents[r, c]
                    if e != 0:
                        v = phi[c]
                        pw = 1.0
                        while e > 0:
                            pw = pw * v
                            e = e - 1
                        term = term * pw
                acc = acc + term
            yhat[t] = acc
    return np.asarray(yhat)
