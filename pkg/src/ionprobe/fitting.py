"""Inference pipeline: profile fits, resonance fits, heating and electrostatic
laws, and the figures of merit derived from them.

Every fitter returns an immutable :class:`FitResult`. Statistical errors come
from the covariance at the optimum, inflated by sqrt(chi2/dof) when the fit is
worse than its error bars; optional systematic terms are added in quadrature.
"""

from __future__ import annotations

import csv
import math
from collections import namedtuple
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import special

from .dynamics import (DriveSignal, OscillatorModel, steady_state_amplitudes_numeric)
from .imaging import (ArcsineLorentzian, AxialProfile, VoigtIntensity,
                      decaying_oscillation_intensity)
from .optimize import levenberg_marquardt
from .physics import CA40, CONSTANTS, NEV_PER_UM, IonSpecies

__all__ = [
    "FitResult",
    "Quantity",
    "ResonanceDataset",
    "FitError",
    "DegenerateDataError",
    "fit_profile_driven",
    "fit_profile_gaussian",
    "fit_resonance",
    "fit_resonance_anharmonic",
    "resonance_model",
    "q_factor",
    "fit_heating",
    "fit_electrostatic",
    "snr_estimate",
    "envelope_decay_rate",
    "fit_ringdown_frames",
    "fit_variance_growth",
    "ensemble_temperature",
    "linear_fit",
]

Quantity = namedtuple("Quantity", "value sigma")


class FitError(RuntimeError):
    """The optimizer did not converge or a fit precondition failed."""


class DegenerateDataError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FitResult:
    names: tuple
    values: np.ndarray
    errors: np.ndarray
    chi2: float
    dof: int
    converged: bool
    iterations: int
    covariance: np.ndarray
    model: str = ""
    derived: Mapping[str, Quantity] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("values", "errors", "covariance"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "derived", dict(self.derived))
        if np.any(self.errors < 0):
            raise ValueError("uncertainties must be non-negative")
        if self.dof < 1:
            raise ValueError("need at least one degree of freedom")

    def __getitem__(self, name: str) -> float:
        if name in self.names:
            return float(self.values[self.names.index(name)])
        return float(self.derived[name].value)

    def sigma(self, name: str) -> float:
        if name in self.names:
            return float(self.errors[self.names.index(name)])
        return float(self.derived[name].sigma)

    def quantity(self, name: str) -> Quantity:
        return Quantity(self[name], self.sigma(name))

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.dof

    def rows(self):
        for n, v, e in zip(self.names, self.values, self.errors):
            yield n, float(v), float(e)
        for n, q in self.derived.items():
            yield n, float(q.value), float(q.sigma)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["parameter", "value", "sigma"])
            for n, v, e in self.rows():
                w.writerow([n, f"{v:.12g}", f"{e:.6g}"])
            w.writerow(["chi2", f"{self.chi2:.12g}", ""])
            w.writerow(["dof", self.dof, ""])
        return path

    def summary(self) -> str:
        lines = [f"fit: {self.model or 'model'}",
                 f"  converged={self.converged} iterations={self.iterations} "
                 f"chi2={self.chi2:.6g} dof={self.dof} chi2/dof={self.reduced_chi2:.4g}"]
        for n, v, e in self.rows():
            lines.append(f"  {n:<24s} {v: .8g} +/- {e:.3g}")
        return "\n".join(lines)


def _finish(names, lm, n_points, model, derived=None, systematics=None,
            fixed_names=()) -> FitResult:
    dof = n_points - len(names)
    if dof < 1:
        raise DegenerateDataError(f"{n_points} points cannot constrain {len(names)} parameters")
    inflate = math.sqrt(max(1.0, lm.chi2 / dof))
    cov = lm.covariance * inflate ** 2
    err = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    if systematics:
        for k, s in systematics.items():
            if k in names:
                i = names.index(k)
                err[i] = math.hypot(err[i], s)
    return FitResult(tuple(names), lm.x, err, lm.chi2, dof, lm.converged, lm.iterations,
                     cov, model, derived or {})


def _run(residual_full, names, p0, scale, fixed, **lm_kw):
    """Run LM over the free subset of ``names``; ``fixed`` pins the others."""
    fixed = dict(fixed or {})
    unknown = set(fixed) - set(names)
    if unknown:
        raise KeyError(f"unknown fixed parameters {sorted(unknown)}")
    free = [i for i, n in enumerate(names) if n not in fixed]
    full0 = np.array([fixed.get(n, v) for n, v in zip(names, p0)], dtype=float)

    def expand(p):
        q = full0.copy()
        q[free] = p
        return q

    lm = levenberg_marquardt(lambda p: residual_full(expand(p)), full0[free],
                             scale=np.asarray(scale, float)[free], **lm_kw)
    if not lm.converged:
        raise FitError(f"fit did not converge after {lm.iterations} iterations: {lm.message}")
    return lm, [names[i] for i in free], expand


# ---- photon profiles ----------------------------------------------------------

def _check_profile(profile: AxialProfile, min_bins=10):
    if profile.total <= 0:
        raise DegenerateDataError("profile has no counts")
    if np.count_nonzero(profile.counts) < min_bins:
        raise DegenerateDataError(f"profile needs >= {min_bins} bins with counts")


def _profile_guesses(profile: AxialProfile):
    c = profile.counts.astype(float)
    k = max(2, len(c) // 10)
    bg = float(np.median(np.concatenate([c[:k], c[-k:]])))
    sig = np.clip(c - bg, 0, None)
    total = max(sig.sum(), 1.0)
    center = float(np.sum(profile.z * sig) / total)
    above = profile.z[sig >= 0.5 * sig.max()]
    half_extent = 0.5 * (above.max() - above.min() + profile.pixel_size)
    return bg, total, center, half_extent


def _fold_signs(lm, free, even_names):
    """Report non-negative values for parameters the model is even in."""
    for n in even_names:
        if n in free:
            i = free.index(n)
            lm.x[i] = abs(lm.x[i])


def _neyman_weights(counts):
    return 1.0 / np.sqrt(np.maximum(counts, 1.0))


def fit_profile_driven(profile: AxialProfile, guess: Optional[Mapping] = None,
                       fixed: Optional[Mapping] = None,
                       systematics: Optional[Mapping] = None) -> FitResult:
    """Fit arcsine(A) convolved with a Lorentzian(w) to an axial profile.

    Parameters: A (oscillation amplitude, m), w (PSF half-width, m),
    amplitude (signal photons), center (m), background (counts per bin).
    """
    _check_profile(profile)
    edges = profile.edges
    y = profile.counts.astype(float)
    wts = _neyman_weights(y)
    names = ("A", "w", "amplitude", "center", "background")
    bg, total, center, half = _profile_guesses(profile)
    p = profile.pixel_size

    def resid(q):
        a, w, amp, c, b = q
        # the model is even in A and w; fold signs instead of walling off w <= 0
        w = max(abs(w), 1e-3 * p)
        model = amp * ArcsineLorentzian(a, w, c).bin_integrals(edges) + b
        return (y - model) * wts

    scale = [max(half, p), p, total, p, max(bg, 1.0)]
    starts = []
    if guess:
        starts.append([guess.get(n, d) for n, d in
                       zip(names, (half, p, total, center, bg))])
    else:
        for frac in (0.9, 0.6, 0.3):
            a0 = frac * half
            starts.append([a0, max(half - a0, 0.5 * p), total, center, bg])
    best = None
    for s in starts:
        try:
            lm, free, expand = _run(resid, names, s, scale, fixed)
        except FitError:
            continue
        if best is None or lm.chi2 < best[0].chi2:
            best = (lm, free, expand)
    if best is None:
        raise FitError("driven-profile fit failed from every starting point")
    lm, free, expand = best
    _fold_signs(lm, free, ("A", "w"))
    full = expand(lm.x)
    res = _finish(free, lm, len(y), "arcsine (x) Lorentzian", systematics=systematics)
    return _with_fixed(res, names, full, fixed)


def _with_fixed(res: FitResult, names, full, fixed) -> FitResult:
    """Re-insert fixed parameters (zero uncertainty) so lookups by name work."""
    if not fixed:
        return res
    vals, errs = [], []
    for n, v in zip(names, full):
        if n in res.names:
            vals.append(res[n])
            errs.append(res.sigma(n))
        else:
            vals.append(float(v))
            errs.append(0.0)
    k = len(names)
    cov = np.zeros((k, k))
    idx = [names.index(n) for n in res.names]
    cov[np.ix_(idx, idx)] = res.covariance
    return FitResult(names, vals, errs, res.chi2, res.dof, res.converged, res.iterations,
                     cov, res.model, res.derived)


def _gauss_bins(edges, sigma, center):
    u = (edges - center) / (math.sqrt(2) * sigma)
    return 0.5 * np.diff(special.erf(u))


def fit_profile_gaussian(profile: AxialProfile, psf_hwhm: Optional[float] = None,
                         guess: Optional[Mapping] = None, fixed: Optional[Mapping] = None,
                         species: Optional[IonSpecies] = None,
                         omega_z: Optional[float] = None,
                         systematics: Optional[Mapping] = None) -> FitResult:
    """Gaussian least squares on an axial profile.

    With ``psf_hwhm`` the Gaussian is convolved with the known Lorentzian PSF
    so that ``sigma`` is the ion's own position spread. With ``species`` and
    ``omega_z`` the matching temperature is added as a derived quantity.
    """
    _check_profile(profile)
    edges = profile.edges
    y = profile.counts.astype(float)
    wts = _neyman_weights(y)
    names = ("sigma", "center", "amplitude", "background")
    bg, total, center, half = _profile_guesses(profile)
    p = profile.pixel_size
    s0 = max(half / 1.1774, 0.3 * p)
    if psf_hwhm:
        s0 = max(math.sqrt(max(half ** 2 - psf_hwhm ** 2, 0.0)) / 1.1774, 0.3 * p)

    def resid(q):
        s, c, amp, b = q
        s = max(abs(s), 1e-6 * p)
        if psf_hwhm:
            shape = VoigtIntensity(s, psf_hwhm, c).bin_integrals(edges)
        else:
            shape = _gauss_bins(edges, s, c)
        return (y - amp * shape - b) * wts

    g = dict(guess or {})
    p0 = [g.get("sigma", s0), g.get("center", center), g.get("amplitude", total),
          g.get("background", bg)]
    lm, free, expand = _run(resid, names, p0, [s0, p, total, max(bg, 1.0)], fixed)
    _fold_signs(lm, free, ("sigma",))
    res = _finish(free, lm, len(y), "gaussian" + (" (x) Lorentzian" if psf_hwhm else ""),
                  systematics=systematics)
    res = _with_fixed(res, names, expand(lm.x), fixed)
    derived = {"variance": Quantity(res["sigma"] ** 2, 2 * res["sigma"] * res.sigma("sigma"))}
    if species is not None and omega_z is not None:
        k = species.mass * omega_z ** 2 / CONSTANTS.boltzmann
        derived["temperature"] = Quantity(k * derived["variance"].value,
                                          k * derived["variance"].sigma)
    return FitResult(res.names, res.values, res.errors, res.chi2, res.dof, res.converged,
                     res.iterations, res.covariance, res.model, derived)


# ---- resonance ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ResonanceDataset:
    """Response versus detuning (omega_dip - omega_ref)/2pi in Hz.

    ``response`` is an amplitude in metres (or a variance in m^2 for
    variance scans; only amplitude data can be fitted with the resonance law).
    """

    detuning_hz: np.ndarray
    response: np.ndarray
    sigma: np.ndarray
    reference_frequency: float
    kind: str = "amplitude"

    def __post_init__(self):
        d = np.asarray(self.detuning_hz, dtype=float)
        r = np.asarray(self.response, dtype=float)
        s = np.broadcast_to(np.asarray(self.sigma, dtype=float), r.shape).copy()
        if d.shape != r.shape or d.ndim != 1:
            raise ValueError("detuning and response must be 1-D and equal length")
        if d.size < 5:
            raise ValueError("a resonance dataset needs at least 5 points")
        if np.any(s <= 0):
            raise ValueError("uncertainties must be positive")
        if not self.reference_frequency > 0:
            raise ValueError("reference_frequency must be positive")
        object.__setattr__(self, "detuning_hz", d)
        object.__setattr__(self, "response", r)
        object.__setattr__(self, "sigma", s)

    @property
    def drive_frequencies(self) -> np.ndarray:
        return self.reference_frequency + 2 * math.pi * self.detuning_hz

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w") as fh:
            fh.write("detuning_hz,response,sigma\n")
            for d, r, s in zip(self.detuning_hz, self.response, self.sigma):
                fh.write(f"{d:.17g},{r:.17g},{s:.17g}\n")
        return path

    @classmethod
    def read_csv(cls, path, reference_frequency: float, kind="amplitude"):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1], data[:, 2], reference_frequency, kind)


def resonance_model(drive_frequencies, force, gamma, omega_z, mass, baseline=0.0):
    """Steady amplitude of the driven damped oscillator plus a constant baseline."""
    wd = np.asarray(drive_frequencies, dtype=float)
    return force / mass / np.hypot(2 * gamma * wd, omega_z ** 2 - wd ** 2) + baseline


def _resonance_guess(data: ResonanceDataset, mass):
    wd = data.drive_frequencies
    r = data.response
    i = int(np.argmax(r))
    if i == 0 or i == r.size - 1:
        raise FitError("response peak lies at the edge of the scan; "
                       "the scan must cover both sides of the resonance")
    w0 = wd[i]
    above = wd[r ** 2 >= 0.5 * r[i] ** 2]
    width = max(above.max() - above.min(), np.min(np.diff(np.sort(wd))))
    gamma = 0.5 * width
    force = r[i] * 2 * mass * gamma * w0
    return force, gamma, w0


def _derived_resonance(force, force_err, gamma, gamma_err, w0, w0_err):
    q = q_factor(w0, gamma, w0_err, gamma_err)
    return {"F_e_neV_um": Quantity(force / NEV_PER_UM, force_err / NEV_PER_UM),
            "f_z_hz": Quantity(w0 / (2 * math.pi), w0_err / (2 * math.pi)),
            "Q": q}


def fit_resonance(data: ResonanceDataset, species: IonSpecies = CA40,
                  guess: Optional[Mapping] = None, baseline: float = 0.0,
                  free_baseline: bool = False) -> FitResult:
    """Fit the driven-damped amplitude law; parameters F_e (N), gamma_z (1/s), omega_z (rad/s).

    The baseline is an additive floor, held at ``baseline`` unless
    ``free_baseline`` is set.
    """
    if data.kind != "amplitude":
        raise ValueError("fit_resonance needs amplitude data")
    m = species.mass
    wd = data.drive_frequencies
    y, s = data.response, data.sigma
    names = ("F_e", "gamma_z", "omega_z", "baseline")
    f0, g0, w00 = _resonance_guess(data, m)
    g = dict(guess or {})
    p0 = [g.get("F_e", f0), g.get("gamma_z", g0), g.get("omega_z", w00),
          g.get("baseline", baseline)]

    def resid(q):
        f, gam, w0, b = q
        return (y - resonance_model(wd, f, gam, w0, m, b)) / s

    scale = [abs(p0[0]), abs(p0[1]), abs(p0[2]), max(abs(baseline), float(np.max(y)))]
    fixed = None if free_baseline else {"baseline": baseline}
    lm, free, expand = _run(resid, names, p0, scale, fixed)
    res = _with_fixed(_finish(free, lm, y.size, "driven damped oscillator"),
                      names, expand(lm.x), fixed)
    lm_derived = _derived_resonance(res["F_e"], res.sigma("F_e"), res["gamma_z"],
                                    res.sigma("gamma_z"), res["omega_z"], res.sigma("omega_z"))
    return FitResult(res.names, res.values, res.errors, res.chi2, res.dof, res.converged,
                     res.iterations, res.covariance, res.model, lm_derived)


def fit_resonance_anharmonic(data: ResonanceDataset, species: IonSpecies = CA40,
                             start: Optional[FitResult] = None, alpha0: float = 0.0,
                             alpha_scale: Optional[float] = None, baseline: float = 0.0,
                             transient_factor: float = 10.0, steps_per_period: int = 100,
                             fixed: Optional[Mapping] = None) -> FitResult:
    """Numeric fit with the cubic term: parameters F_e, gamma_z, omega_z, alpha.

    The model amplitude at each detuning comes from integrating the equation of
    motion to steady state. Starts from the analytic fit's optimum unless
    ``start`` is given, which keeps the choice among Duffing branches stable.
    """
    if data.kind != "amplitude":
        raise ValueError("fit_resonance_anharmonic needs amplitude data")
    m = species.mass
    if start is None:
        start = fit_resonance(data, species, baseline=baseline)
    wd = data.drive_frequencies
    y, s = data.response, data.sigma
    names = ("F_e", "gamma_z", "omega_z", "alpha")
    p0 = [start["F_e"], start["gamma_z"], start["omega_z"], alpha0]
    peak = float(np.max(y))
    if alpha_scale is None:
        # cubic coefficient that shifts the peak by about one linewidth
        alpha_scale = 8 * start["omega_z"] * start["gamma_z"] / (3 * peak ** 2)

    def model(q):
        f, gam, w0, a = q
        if gam <= 0 or w0 <= 0 or f < 0:
            return np.full_like(y, np.inf)
        osc = OscillatorModel(species, w0, gam, a,
                              DriveSignal(force_amplitude=f, angular_frequency=wd[0]),
                              True, 0.0)
        return steady_state_amplitudes_numeric(osc, wd, transient_factor=transient_factor,
                                               steps_per_period=steps_per_period) + baseline

    def resid(q):
        return (y - model(q)) / s

    scale = [abs(p0[0]), abs(p0[1]), abs(p0[2]), alpha_scale]
    lm, free, expand = _run(resid, names, p0, scale, fixed, rel_step=1e-5)
    res = _with_fixed(_finish(free, lm, y.size, "driven damped anharmonic oscillator (numeric)"),
                      names, expand(lm.x), fixed)
    derived = _derived_resonance(res["F_e"], res.sigma("F_e"), res["gamma_z"],
                                 res.sigma("gamma_z"), res["omega_z"], res.sigma("omega_z"))
    return FitResult(res.names, res.values, res.errors, res.chi2, res.dof, res.converged,
                     res.iterations, res.covariance, res.model, derived)


def q_factor(omega_z: float, gamma_z: float, sigma_omega: float = 0.0,
             sigma_gamma: float = 0.0) -> Quantity:
    """Q = omega_z / (2 gamma_z) with first-order error propagation."""
    if not gamma_z > 0:
        raise ValueError("gamma_z must be positive")
    q = omega_z / (2 * gamma_z)
    return Quantity(q, q * math.hypot(sigma_omega / omega_z, sigma_gamma / gamma_z))


# ---- linear laws --------------------------------------------------------------

def linear_fit(x, y, sigma=None):
    """Weighted straight line; returns (coefficients [intercept, slope], covariance, chi2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    s = np.ones_like(y) if sigma is None else np.broadcast_to(np.asarray(sigma, float), y.shape)
    design = np.column_stack([np.ones_like(x), x]) / s[:, None]
    if np.linalg.matrix_rank(design) < 2:
        raise DegenerateDataError("rank-deficient design: need two distinct x values")
    coef, *_ = np.linalg.lstsq(design, y / s, rcond=None)
    cov = np.linalg.inv(design.T @ design)
    r = (y - coef[0] - coef[1] * x) / s
    return coef, cov, float(r @ r)


def _linear_result(names, coef, cov, chi2, n, model, derived, scale_errors=True):
    dof = n - 2
    if dof < 1:
        raise DegenerateDataError("need at least three points for a line with error estimate")
    inflate = max(1.0, chi2 / dof) if scale_errors else 1.0
    cov = cov * inflate
    return FitResult(names, coef, np.sqrt(np.diag(cov)), chi2, dof, True, 1, cov, model, derived)


def fit_heating(v_noise, temperatures, sigma_t, gamma_z: float) -> FitResult:
    """Fit T = (K + zeta V^2) / (gamma k_B) linearly in V^2.

    Returns K (J/s) and zeta (J s^-1 V^-2). Derived: the zero-noise limit
    temperature and the heating rate zeta V_min^2 at the smallest applied
    amplitude (J/s and eV/s), which is the quoted upper limit.
    """
    v = np.asarray(v_noise, dtype=float)
    t = np.asarray(temperatures, dtype=float)
    if np.unique(v).size < 3:
        raise DegenerateDataError("need at least three distinct noise amplitudes")
    if not gamma_z > 0:
        raise ValueError("gamma_z must be positive")
    gk = gamma_z * CONSTANTS.boltzmann
    coef, cov, chi2 = linear_fit(v ** 2, t, sigma_t)
    # T = c0 + c1 V^2  with  K = c0 gamma k_B, zeta = c1 gamma k_B
    k, zeta = coef * gk
    cov_kz = cov * gk ** 2
    dof = v.size - 2
    inflate = max(1.0, chi2 / dof)
    err = np.sqrt(np.diag(cov_kz) * inflate)
    vmin = float(v[v > 0].min()) if np.any(v > 0) else 0.0
    rate = zeta * vmin ** 2
    rate_err = err[1] * vmin ** 2
    derived = {
        "doppler_limit_K": Quantity(coef[0], math.sqrt(cov[0, 0] * inflate)),
        "upper_limit_J_per_s": Quantity(rate, rate_err),
        "upper_limit_eV_per_s": Quantity(rate / CONSTANTS.electronvolt,
                                         rate_err / CONSTANTS.electronvolt),
        "smallest_V_noise": Quantity(vmin, 0.0),
    }
    return FitResult(("K", "zeta"), [k, zeta], err, chi2, dof, True, 1, cov_kz * inflate,
                     "linear heating law", derived)


def fit_electrostatic(displacements, potentials=None, species: IonSpecies = CA40,
                      omega_z: float = 2 * math.pi * 80e3,
                      center_uncertainty: float = 67e-9,
                      sigma_omega: float = 0.0) -> FitResult:
    """Force-displacement law F = m omega^2 z.

    Displacements are converted to forces, each with the force uncertainty
    implied by ``center_uncertainty``, and a weighted line F(z) is fitted.
    The slope error combines the regression error with the propagated trap
    frequency uncertainty. When ``potentials`` are given the applied-potential
    calibration (force per volt) is reported as well.
    """
    z = np.asarray(displacements, dtype=float)
    if z.size < 2:
        raise DegenerateDataError("need at least two displacement points")
    k = species.mass * omega_z ** 2
    force = k * z
    sig_f = max(k * center_uncertainty, 1e-300)
    coef, cov, chi2 = linear_fit(z, force, sig_f)
    n = z.size
    dof = max(n - 2, 1)
    freq_term = 2 * coef[1] * sigma_omega / omega_z
    err = np.sqrt(np.diag(cov))
    err[1] = math.hypot(err[1], freq_term)
    cov = cov.copy()
    cov[1, 1] = err[1] ** 2
    unit = NEV_PER_UM / 1e-9  # (neV/um)/nm in N/m
    derived = {
        "slope_neV_um_per_nm": Quantity(coef[1] / unit, err[1] / unit),
        "force_sigma_neV_um": Quantity(sig_f / NEV_PER_UM, 0.0),
        "min_force_neV_um": Quantity(float(np.min(np.abs(force))) / NEV_PER_UM,
                                     sig_f / NEV_PER_UM),
    }
    if potentials is not None:
        u = np.asarray(potentials, dtype=float)
        if u.shape != z.shape:
            raise ValueError("potentials must match displacements")
        c2, cov2, _ = linear_fit(u, force, sig_f)
        derived["force_per_volt_neV_um"] = Quantity(c2[1] / NEV_PER_UM,
                                                    math.sqrt(cov2[1, 1]) / NEV_PER_UM)
    return FitResult(("intercept", "slope"), coef, err, chi2, dof, True, 1, cov,
                     "electrostatic force law", derived)


def snr_estimate(on_resonance: float, off_resonance: Sequence[float]) -> float:
    """(peak - mean off-resonance) / standard deviation of the off-resonance values."""
    off = np.asarray(off_resonance, dtype=float)
    if off.size < 3:
        raise ValueError("need at least three off-resonance points")
    spread = off.std(ddof=1)
    if spread == 0:
        raise ValueError("off-resonance values have zero spread")
    return float((on_resonance - off.mean()) / spread)


# ---- ring-down, heating and thermometry from simulations -----------------------

def envelope_decay_rate(times, positions, velocities, omega_z: float,
                        floor: float = 0.0, min_ratio: float = 5.0) -> Quantity:
    """Regress log of the instantaneous amplitude against time.

    Only points whose amplitude exceeds ``min_ratio * floor`` are used, so
    the thermal floor does not bend the line. Returns the decay rate of the
    amplitude envelope (1/s).
    """
    t = np.asarray(times, dtype=float)
    amp = np.sqrt(np.asarray(positions) ** 2 + (np.asarray(velocities) / omega_z) ** 2)
    if amp.ndim == 2:
        amp = np.sqrt(np.mean(amp ** 2, axis=0))
    sel = amp > max(min_ratio * floor, 0.0)
    sel &= amp > 0
    if np.count_nonzero(sel) < 3:
        raise DegenerateDataError("too few points above the floor")
    coef, cov, chi2 = linear_fit(t[sel], np.log(amp[sel]))
    dof = max(np.count_nonzero(sel) - 2, 1)
    return Quantity(-coef[1], math.sqrt(cov[1, 1] * chi2 / dof))


def fit_variance_growth(times, positions, t_min: float = 0.0) -> Quantity:
    """Slope of the ensemble position variance against time (m^2/s)."""
    t = np.asarray(times, dtype=float)
    var = np.var(np.asarray(positions), axis=0)
    sel = t >= t_min
    coef, cov, chi2 = linear_fit(t[sel], var[sel])
    dof = max(np.count_nonzero(sel) - 2, 1)
    return Quantity(coef[1], math.sqrt(cov[1, 1] * chi2 / dof))


def ensemble_temperature(ensemble, burn_in: float = 0.0, use: str = "velocity") -> Quantity:
    """Kinetic (m<v^2>/k_B) or potential (m omega^2 <rho^2>/k_B) temperature.

    The error is the spread of per-seed estimates over sqrt(n_seeds).
    """
    sel = ensemble.times >= burn_in
    m = ensemble.model.mass
    if use == "velocity":
        per = m * np.mean(ensemble.velocities[:, sel] ** 2, axis=1)
    elif use == "position":
        per = m * ensemble.model.omega_z ** 2 * np.mean(ensemble.positions[:, sel] ** 2, axis=1)
    else:
        raise ValueError("use must be 'velocity' or 'position'")
    per = per / CONSTANTS.boltzmann
    n = per.size
    err = per.std(ddof=1) / math.sqrt(n) if n > 1 else float("nan")
    return Quantity(float(per.mean()), float(err))


def fit_ringdown_frames(profiles: Sequence[AxialProfile], delays: Sequence[float],
                        exposure: float, guess: Optional[Mapping] = None,
                        fixed: Optional[Mapping] = None) -> FitResult:
    """Global fit of triggered frames to an exponentially decaying oscillation.

    Every frame is modelled as the exposure-averaged image of an oscillation
    with amplitude A0 exp(-gamma t) plus a thermal spread that builds up as
    sigma sqrt(1 - exp(-2 gamma t)), blurred by the Lorentzian PSF.
    Parameters: A0, gamma, sigma, w, amplitude (photons per frame), center,
    background (counts per bin).
    """
    if len(profiles) != len(delays) or len(profiles) < 2:
        raise DegenerateDataError("need at least two frames with matching delays")
    for pr in profiles:
        _check_profile(pr)
    names = ("A0", "gamma", "sigma", "w", "amplitude", "center", "background")
    ys = [pr.counts.astype(float) for pr in profiles]
    wts = [_neyman_weights(y) for y in ys]
    edges = [pr.edges for pr in profiles]
    guesses = [_profile_guesses(pr) for pr in profiles]
    p = profiles[0].pixel_size
    bg = float(np.mean([gs[0] for gs in guesses]))
    total = float(np.mean([gs[1] for gs in guesses]))
    center = float(np.mean([gs[2] for gs in guesses]))
    h0, h1 = guesses[0][3], guesses[1][3]
    dt = delays[1] - delays[0]
    g_rate = math.log(h0 / h1) / dt if h1 < h0 and dt > 0 else 1.0 / exposure
    a0 = h0 * math.exp(g_rate * delays[0])
    g = dict(guess or {})
    p0 = [g.get(n, d) for n, d in zip(names, (a0, g_rate, 0.5 * p, p, total, center, bg))]

    def resid(q):
        a, gam, sig, w, amp, c, b = q
        if gam <= 0:
            return np.full(sum(y.size for y in ys), 1e150)
        sig = abs(sig)
        w = max(abs(w), 1e-3 * p)
        out = []
        for y, wt, e, d in zip(ys, wts, edges, delays):
            shape = decaying_oscillation_intensity(a, gam, sig, w, (d, d + exposure), c)
            out.append((y - amp * shape.bin_integrals(e) - b) * wt)
        return np.concatenate(out)

    scale = [max(abs(p0[0]), p), abs(p0[1]), p, p, total, p, max(bg, 1.0)]
    lm, free, expand = _run(resid, names, p0, scale, fixed)
    _fold_signs(lm, free, ("A0", "sigma", "w"))
    n = sum(y.size for y in ys)
    res = _with_fixed(_finish(free, lm, n, "exponential ring-down"), names, expand(lm.x), fixed)
    return res
