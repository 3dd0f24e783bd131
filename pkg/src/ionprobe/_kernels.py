"""Compiled inner loops for the axial equation of motion.

acceleration = -2*gamma*v - omega2*x - alpha*x**3
               + f_amp*cos(w_dip*t + phase) + f_dc

All forces here are already divided by the ion mass.
"""

import math

import numba
import numpy as np
from numba import njit, prange

# workqueue ships with numba everywhere; skips the TBB version probe and its warning
numba.config.THREADING_LAYER = "workqueue"


@njit(cache=True, inline="always")
def _acc(t, x, v, gamma, omega2, alpha, f_amp, w_dip, phase, f_dc):
    return (-2.0 * gamma * v - omega2 * x - alpha * x * x * x
            + f_amp * math.cos(w_dip * t + phase) + f_dc)


@njit(cache=True, inline="always")
def _rk4(t, x, v, h, gamma, omega2, alpha, f_amp, w_dip, phase, f_dc):
    k1x = v
    k1v = _acc(t, x, v, gamma, omega2, alpha, f_amp, w_dip, phase, f_dc)
    k2x = v + 0.5 * h * k1v
    k2v = _acc(t + 0.5 * h, x + 0.5 * h * k1x, k2x,
               gamma, omega2, alpha, f_amp, w_dip, phase, f_dc)
    k3x = v + 0.5 * h * k2v
    k3v = _acc(t + 0.5 * h, x + 0.5 * h * k2x, k3x,
               gamma, omega2, alpha, f_amp, w_dip, phase, f_dc)
    k4x = v + h * k3v
    k4v = _acc(t + h, x + h * k3x, k4x,
               gamma, omega2, alpha, f_amp, w_dip, phase, f_dc)
    xn = x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    vn = v + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return xn, vn


@njit(cache=True, parallel=True)
def advance_batch(x, v, step0, nsteps, dt, gamma, omega2, alpha, f_amp, w_dip,
                  phase, f_dc, kick_sigma, noise, stride, rec_x, rec_v, rec0):
    """Advance every member of a batch by ``nsteps`` steps in place.

    ``noise`` has shape (batch, nsteps) and is ignored when kick_sigma == 0.
    A state is written to ``rec_*[:, rec0 + j]`` whenever the global step
    index (step0 + k + 1) is a multiple of ``stride``.
    """
    nb = x.shape[0]
    for b in prange(nb):
        xb = x[b]
        vb = v[b]
        j = rec0
        for k in range(nsteps):
            n = step0 + k
            t = n * dt
            xb, vb = _rk4(t, xb, vb, dt, gamma, omega2, alpha, f_amp, w_dip,
                          phase, f_dc)
            if kick_sigma != 0.0:
                vb += kick_sigma * noise[b, k]
            if (n + 1) % stride == 0:
                rec_x[b, j] = xb
                rec_v[b, j] = vb
                j += 1
        x[b] = xb
        v[b] = vb


@njit(cache=True)
def _hermite_extremum(x0, v0, x1, v1, h):
    # location from the linear zero of v, value from the cubic Hermite interpolant
    s = v0 / (v0 - v1)
    s2 = s * s
    s3 = s2 * s
    return ((2 * s3 - 3 * s2 + 1) * x0 + (s3 - 2 * s2 + s) * h * v0
            + (-2 * s3 + 3 * s2) * x1 + (s3 - s2) * h * v1)


@njit(cache=True)
def _steady_one(gamma, omega2, alpha, f_amp, w_dip, phase, f_dc, steps_per_period,
                n_transient, n_window):
    period = 2.0 * math.pi / w_dip
    h = period / steps_per_period
    x = 0.0
    v = 0.0
    n = 0
    for _ in range(n_transient * steps_per_period):
        x, v = _rk4(n * h, x, v, h, gamma, omega2, alpha, f_amp, w_dip, phase, f_dc)
        n += 1
    half = n_window // 2
    xmax_a = -np.inf
    xmin_a = np.inf
    xmax_b = -np.inf
    xmin_b = np.inf
    for p in range(n_window):
        for _ in range(steps_per_period):
            xn, vn = _rk4(n * h, x, v, h, gamma, omega2, alpha, f_amp, w_dip, phase, f_dc)
            n += 1
            ext = np.nan
            if v > 0.0 and vn <= 0.0:
                ext = _hermite_extremum(x, v, xn, vn, h)
            elif v < 0.0 and vn >= 0.0:
                ext = _hermite_extremum(x, v, xn, vn, h)
            if not math.isnan(ext):
                if p < half:
                    xmax_a = max(xmax_a, ext)
                    xmin_a = min(xmin_a, ext)
                else:
                    xmax_b = max(xmax_b, ext)
                    xmin_b = min(xmin_b, ext)
            x = xn
            v = vn
    amp_a = 0.5 * (xmax_a - xmin_a) if xmax_a > xmin_a else 0.0
    amp_b = 0.5 * (xmax_b - xmin_b) if xmax_b > xmin_b else 0.0
    hi = max(xmax_a, xmax_b)
    lo = min(xmin_a, xmin_b)
    amp = 0.5 * (hi - lo) if hi > lo else 0.0
    return amp, abs(amp_b - amp_a)


@njit(cache=True, parallel=True)
def steady_amplitudes(gamma, omega2, alpha, f_amp, w_dips, phase, f_dc,
                      min_steps, transient_time, n_window):
    """Half peak-to-peak over the last ``n_window`` drive periods, per frequency.

    Returns (amplitude, drift) where drift is the absolute change of the
    half peak-to-peak between the two halves of the window.
    """
    n = w_dips.shape[0]
    out = np.empty(n)
    drift = np.empty(n)
    for i in prange(n):
        wd = w_dips[i]
        n_tr = int(math.ceil(transient_time * wd / (2.0 * math.pi)))
        # resolve whichever of the drive and the trap oscillation is faster
        spp = max(min_steps, int(math.ceil(min_steps * math.sqrt(omega2) / wd)))
        out[i], drift[i] = _steady_one(gamma, omega2, alpha, f_amp, wd, phase, f_dc,
                                      spp, n_tr, n_window)
    return out, drift
