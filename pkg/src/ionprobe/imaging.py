"""Synthetic EMCCD frames and axial photon profiles.

The camera sees the ion's position distribution blurred by a 1-D Lorentzian
point-spread function along the trap axis. Intensities below are unit-area
densities in the object plane (1/m); ``bin_integrals`` returns the fraction
of photons landing in each object-plane pixel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, special

from .dynamics import (OscillatorModel, SimConfig, ring_down_ensemble, thermal_sigma)

__all__ = [
    "OpticsConfig",
    "ImageFrame",
    "AxialProfile",
    "ArcsinePdf",
    "GaussianPdf",
    "SampledPdf",
    "LorentzianIntensity",
    "ArcsineLorentzian",
    "VoigtIntensity",
    "SampledLorentzian",
    "QuadratureIntensity",
    "MixtureIntensity",
    "position_pdf_driven",
    "position_pdf_thermal",
    "convolve_psf",
    "driven_thermal_intensity",
    "decaying_oscillation_intensity",
    "render_frame",
    "expected_profile",
    "project_axial",
    "triggered_sequence",
    "COUNTER_MAX",
]

#: Largest count a pixel accumulator can hold.
COUNTER_MAX = 2 ** 32 - 1


@dataclass(frozen=True)
class OpticsConfig:
    magnification: float = 6.75
    pixel_pitch: float = 16e-6
    sensor_size: tuple = (512, 512)
    psf_hwhm: float = 3.0e-6
    photon_rate: float = 5.0e4
    exposure: float = 20e-3
    background_rate: float = 5.0
    radial_rows_summed: int = 3
    crop: Optional[tuple] = None

    def __post_init__(self):
        if not self.magnification > 0:
            raise ValueError("magnification must be positive")
        if not self.pixel_pitch > 0:
            raise ValueError("pixel_pitch must be positive")
        if not self.exposure > 0:
            raise ValueError("exposure must be positive")
        if not self.psf_hwhm > 0:
            raise ValueError("psf_hwhm must be positive")
        if self.photon_rate < 0 or self.background_rate < 0:
            raise ValueError("photon_rate and background_rate must be >= 0")
        if self.radial_rows_summed < 1:
            raise ValueError("radial_rows_summed must be >= 1")
        rows, cols = self.shape
        if rows < 1 or cols < 1:
            raise ValueError("frame must have at least one pixel")
        if self.crop is not None and (rows > self.sensor_size[0] or cols > self.sensor_size[1]):
            raise ValueError("crop larger than the sensor")

    @property
    def pixel_size(self) -> float:
        """Object-plane size of one pixel."""
        return self.pixel_pitch / self.magnification

    @property
    def shape(self) -> tuple:
        return tuple(int(n) for n in (self.crop or self.sensor_size))

    def axial_edges(self) -> np.ndarray:
        cols = self.shape[1]
        return (np.arange(cols + 1) - cols / 2) * self.pixel_size

    def radial_rows(self) -> slice:
        rows = self.shape[0]
        n = self.radial_rows_summed
        if n > rows:
            raise ValueError(f"radial_rows_summed={n} exceeds the {rows} frame rows")
        r0 = rows // 2 - n // 2
        return slice(r0, r0 + n)


# ---- position densities -------------------------------------------------------

@dataclass(frozen=True)
class ArcsinePdf:
    """Position density of a harmonic oscillation with fixed amplitude."""

    amplitude: float
    center: float = 0.0

    def __call__(self, rho):
        u = np.asarray(rho, dtype=float) - self.center
        a = self.amplitude
        inside = np.abs(u) < a
        out = np.zeros_like(u)
        out[inside] = 1.0 / (math.pi * np.sqrt(a * a - u[inside] ** 2))
        return out

    @property
    def mean(self) -> float:
        return self.center

    @property
    def variance(self) -> float:
        return 0.5 * self.amplitude ** 2


@dataclass(frozen=True)
class GaussianPdf:
    sigma: float
    center: float = 0.0

    def __call__(self, rho):
        u = (np.asarray(rho, dtype=float) - self.center) / self.sigma
        return np.exp(-0.5 * u * u) / (math.sqrt(2 * math.pi) * self.sigma)

    @property
    def mean(self) -> float:
        return self.center

    @property
    def variance(self) -> float:
        return self.sigma ** 2

    @property
    def fwhm(self) -> float:
        return 2 * math.sqrt(2 * math.log(2)) * self.sigma


@dataclass(frozen=True, eq=False)
class SampledPdf:
    """Empirical position distribution, e.g. trajectory samples within an exposure."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float).ravel()
        if s.size == 0:
            raise ValueError("SampledPdf needs at least one sample")
        object.__setattr__(self, "samples", s)

    @property
    def mean(self) -> float:
        return float(self.samples.mean())

    @property
    def variance(self) -> float:
        return float(self.samples.var())


def position_pdf_driven(amplitude: float, center: float = 0.0) -> ArcsinePdf:
    if not amplitude > 0:
        raise ValueError("amplitude must be positive")
    return ArcsinePdf(amplitude, center)


def position_pdf_thermal(sigma: float, center: float = 0.0) -> GaussianPdf:
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return GaussianPdf(sigma, center)


# ---- blurred intensities ------------------------------------------------------

def _lorentz_cdf(u, w):
    return 0.5 + np.arctan(u / w) / math.pi


def _lorentz_cdf_antiderivative(u, w):
    # integral of _lorentz_cdf(u, w) du
    r = u / w
    return 0.5 * u + (u * np.arctan(r) - 0.5 * w * np.log1p(r * r)) / math.pi


def _arcsine_lorentz_sqrt(c, a):
    # branch with s ~ c that stays analytic in the lower half-plane
    return np.sqrt(c - a) * np.sqrt(c + a)


def _arcsine_lorentz_density(z, a, w):
    c = np.asarray(z, dtype=float) - 1j * w
    return np.imag(1.0 / _arcsine_lorentz_sqrt(c, a)) / math.pi


def _arcsine_lorentz_cdf(z, a, w):
    c = np.asarray(z, dtype=float) - 1j * w
    return 1.0 + np.imag(np.log(c + _arcsine_lorentz_sqrt(c, a))) / math.pi


class _Intensity:
    """Base for unit-area intensities along the axis."""

    def __call__(self, z):  # pragma: no cover - interface
        raise NotImplementedError

    def bin_integrals(self, edges) -> np.ndarray:
        """Probability mass in each bin, default 8-point Gauss-Legendre per bin."""
        edges = np.asarray(edges, dtype=float)
        x, wts = np.polynomial.legendre.leggauss(8)
        lo, hi = edges[:-1], edges[1:]
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        pts = mid[:, None] + half[:, None] * x[None, :]
        return (self(pts) * wts[None, :]).sum(axis=1) * half


@dataclass(frozen=True)
class LorentzianIntensity(_Intensity):
    hwhm: float
    center: float = 0.0

    def __call__(self, z):
        u = np.asarray(z, dtype=float) - self.center
        return self.hwhm / (math.pi * (u * u + self.hwhm ** 2))

    def bin_integrals(self, edges):
        return np.diff(_lorentz_cdf(np.asarray(edges, dtype=float) - self.center, self.hwhm))


@dataclass(frozen=True)
class ArcsineLorentzian(_Intensity):
    """Arcsine density convolved with a Lorentzian, in closed form.

    With c = z - i w the convolution is Im[1 / sqrt(c^2 - A^2)] / pi and its
    antiderivative is Im[log(c + sqrt(c^2 - A^2))] / pi.
    """

    amplitude: float
    hwhm: float
    center: float = 0.0

    def __call__(self, z):
        return _arcsine_lorentz_density(np.asarray(z, dtype=float) - self.center,
                                        abs(self.amplitude), self.hwhm)

    def cdf(self, z):
        return _arcsine_lorentz_cdf(np.asarray(z, dtype=float) - self.center,
                                    abs(self.amplitude), self.hwhm)

    def bin_integrals(self, edges):
        return np.diff(self.cdf(edges))


@dataclass(frozen=True)
class VoigtIntensity(_Intensity):
    sigma: float
    hwhm: float
    center: float = 0.0

    def __call__(self, z):
        return special.voigt_profile(np.asarray(z, dtype=float) - self.center,
                                     self.sigma, self.hwhm)


class SampledLorentzian(_Intensity):
    """Empirical samples histogrammed finely, each bin spread uniformly, then blurred.

    Bin integrals are exact for the uniform-within-bin histogram.
    """

    def __init__(self, samples, hwhm: float, resolution: Optional[float] = None):
        samples = np.asarray(samples, dtype=float).ravel()
        self.hwhm = float(hwhm)
        self.delta = float(resolution or hwhm / 8.0)
        lo = samples.min() - self.delta
        n = max(1, int(math.ceil((samples.max() + self.delta - lo) / self.delta)))
        counts, edges = np.histogram(samples, bins=n, range=(lo, lo + n * self.delta))
        keep = counts > 0
        self.left = edges[:-1][keep]
        self.weights = counts[keep] / samples.size

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        u = z[..., None] - self.left
        # density of a uniform slab convolved with the Lorentzian
        dens = (_lorentz_cdf(u, self.hwhm) - _lorentz_cdf(u - self.delta, self.hwhm)) / self.delta
        return dens @ self.weights

    def bin_integrals(self, edges):
        e = np.asarray(edges, dtype=float)[:, None]
        h = _lorentz_cdf_antiderivative
        mass_left = (h(e - self.left, self.hwhm) - h(e - self.left - self.delta, self.hwhm)) / self.delta
        return np.diff(mass_left @ self.weights)


class QuadratureIntensity(_Intensity):
    """Generic convolution by adaptive quadrature, for arbitrary density callables."""

    def __init__(self, pdf: Callable, hwhm: float, support: Optional[tuple] = None,
                 epsrel: float = 1e-9):
        self.pdf = pdf
        self.hwhm = float(hwhm)
        self.support = support or (-np.inf, np.inf)
        self.epsrel = epsrel

    def _quad(self, f, a, b):
        val, _ = integrate.quad(f, a, b, epsrel=self.epsrel, epsabs=0.0, limit=400)
        return val

    def _integrate(self, f, z0):
        """Integral of f(r) over the support; infinite supports use r = z0 - w tan(t)."""
        a, b = self.support
        if np.isfinite(a) and np.isfinite(b):
            return self._quad(f, a, b)
        w = self.hwhm
        t_lo = -0.5 * math.pi if np.isneginf(a) else math.atan((a - z0) / -w)
        t_hi = 0.5 * math.pi if np.isposinf(b) else math.atan((b - z0) / -w)
        lo, hi = sorted((t_lo, t_hi))

        def g(t):
            c = math.cos(t)
            return f(z0 - w * math.tan(t)) * w / (c * c)

        return self._quad(g, lo, hi)

    def __call__(self, z):
        w = self.hwhm
        z = np.atleast_1d(np.asarray(z, dtype=float))
        out = np.array([self._integrate(lambda r, zz=zz: float(self.pdf(r)) * w
                                        / (math.pi * ((zz - r) ** 2 + w * w)), zz)
                        for zz in z.ravel()])
        return out.reshape(z.shape)

    def bin_integrals(self, edges):
        w = self.hwhm
        edges = np.asarray(edges, dtype=float)
        return np.array([self._integrate(lambda r, a=a, b=b: float(self.pdf(r))
                                         * (_lorentz_cdf(b - r, w) - _lorentz_cdf(a - r, w)),
                                         0.5 * (a + b))
                         for a, b in zip(edges[:-1], edges[1:])])


class MixtureIntensity(_Intensity):
    def __init__(self, components: Sequence[_Intensity], weights=None):
        self.components = list(components)
        w = np.ones(len(self.components)) if weights is None else np.asarray(weights, float)
        self.weights = w / w.sum()

    def __call__(self, z):
        return sum(wt * c(z) for wt, c in zip(self.weights, self.components))

    def bin_integrals(self, edges):
        return sum(wt * c.bin_integrals(edges) for wt, c in zip(self.weights, self.components))


class _ArcsineLorentzianBatch(_Intensity):
    """Weighted sum of many arcsine-Lorentzian components, vectorized."""

    def __init__(self, amplitudes, centers, weights, hwhm):
        self.a = np.abs(np.asarray(amplitudes, float).ravel())
        self.c = np.asarray(centers, float).ravel()
        self.wt = np.asarray(weights, float).ravel()
        self.wt = self.wt / self.wt.sum()
        self.hwhm = float(hwhm)

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        d = _arcsine_lorentz_density(z[..., None] - self.c, self.a, self.hwhm)
        return d @ self.wt

    def bin_integrals(self, edges):
        e = np.asarray(edges, dtype=float)[:, None]
        cdf = _arcsine_lorentz_cdf(e - self.c, self.a, self.hwhm) @ self.wt
        return np.diff(cdf)


def convolve_psf(pdf, hwhm: float) -> _Intensity:
    """Blur a position density with a unit-area Lorentzian of half-width ``hwhm``."""
    if not hwhm > 0:
        raise ValueError("hwhm must be positive")
    if isinstance(pdf, ArcsinePdf):
        return ArcsineLorentzian(pdf.amplitude, hwhm, pdf.center)
    if isinstance(pdf, GaussianPdf):
        return VoigtIntensity(pdf.sigma, hwhm, pdf.center)
    if isinstance(pdf, SampledPdf):
        return SampledLorentzian(pdf.samples, hwhm)
    if callable(pdf):
        return QuadratureIntensity(pdf, hwhm)
    raise TypeError(f"cannot convolve {type(pdf).__name__}")


_GH_X, _GH_W = np.polynomial.hermite.hermgauss(12)


def driven_thermal_intensity(amplitude: float, sigma: float, hwhm: float,
                             center: float = 0.0) -> _Intensity:
    """Arcsine(amplitude) blurred by thermal Gaussian(sigma) and the Lorentzian PSF.

    The thermal blur is carried by 12-node Gauss-Hermite quadrature.
    """
    if sigma <= 0:
        return ArcsineLorentzian(amplitude, hwhm, center)
    return _ArcsineLorentzianBatch(np.full(_GH_X.size, amplitude),
                                   center + math.sqrt(2.0) * sigma * _GH_X, _GH_W, hwhm)


def decaying_oscillation_intensity(initial_amplitude: float, gamma: float, sigma: float,
                                   hwhm: float, window: tuple, center: float = 0.0,
                                   thermalize: bool = True, n_time: int = 16) -> _Intensity:
    """Exposure-averaged image of a ring-down starting at t=0 with amplitude A0.

    Within ``window`` = (t0, t1) the amplitude is A0 exp(-gamma t); the thermal
    width grows as sigma sqrt(1 - exp(-2 gamma t)) when ``thermalize`` is set.
    """
    t0, t1 = window
    xt, wt = np.polynomial.legendre.leggauss(n_time)
    t = 0.5 * (t1 - t0) * xt + 0.5 * (t1 + t0)
    amps = initial_amplitude * np.exp(-gamma * t)
    sig = sigma * (np.sqrt(-np.expm1(-2 * gamma * t)) if thermalize else np.ones_like(t))
    a = np.repeat(amps, _GH_X.size)
    c = center + math.sqrt(2.0) * np.outer(sig, _GH_X).ravel()
    w = np.outer(wt, _GH_W).ravel()
    return _ArcsineLorentzianBatch(a, c, w, hwhm)


# ---- frames and profiles ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ImageFrame:
    counts: np.ndarray
    optics: OpticsConfig
    delay: Optional[float] = None
    cycles_summed: int = 1
    label: str = ""

    def __post_init__(self):
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_pgm(self, path) -> Path:
        """Plain-text P2 graymap; values must fit the 16-bit P2 range."""
        path = Path(path)
        top = int(self.counts.max()) if self.counts.size else 0
        if top > 65535:
            raise OverflowError(f"max count {top} exceeds the P2 maxval 65535; "
                                "lower photon_rate or export CSV instead")
        rows, cols = self.counts.shape
        lines = ["P2", f"# exposure_s={self.optics.exposure!r} cycles={self.cycles_summed}"
                 f" delay_s={self.delay!r} label={self.label}",
                 f"{cols} {rows}", str(max(top, 1))]
        lines += [" ".join(str(int(c)) for c in row) for row in self.counts]
        path.write_text("\n".join(lines) + "\n")
        return path

    def to_csv(self, path) -> Path:
        path = Path(path)
        np.savetxt(path, self.counts, fmt="%d", delimiter=",")
        return path

    @staticmethod
    def read_pgm(path) -> np.ndarray:
        tokens = []
        for line in Path(path).read_text().splitlines():
            line = line.split("#", 1)[0]
            tokens.extend(line.split())
        if tokens[0] != "P2":
            raise ValueError("not a plain P2 graymap")
        cols, rows = int(tokens[1]), int(tokens[2])
        data = np.array(tokens[4:4 + rows * cols], dtype=np.int64)
        return data.reshape(rows, cols)


@dataclass(frozen=True, eq=False)
class AxialProfile:
    z: np.ndarray
    counts: np.ndarray
    exposure: float = 0.0
    cycles_summed: int = 1
    pixel_size: float = 0.0

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        c = np.asarray(self.counts)
        if z.shape != c.shape or z.ndim != 1:
            raise ValueError("z and counts must be 1-D arrays of equal length")
        if np.any(c < 0):
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "counts", c)
        if not self.pixel_size and z.size > 1:
            object.__setattr__(self, "pixel_size", float(z[1] - z[0]))

    def __len__(self):
        return self.z.size

    @property
    def edges(self) -> np.ndarray:
        p = self.pixel_size
        return np.append(self.z - 0.5 * p, self.z[-1] + 0.5 * p)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def normalized(self) -> np.ndarray:
        return self.counts / max(self.counts.max(), 1)

    def centroid(self) -> float:
        return float(np.sum(self.z * self.counts) / self.total)

    def sample_variance(self) -> float:
        mu = self.centroid()
        return float(np.sum((self.z - mu) ** 2 * self.counts) / self.total)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w") as fh:
            fh.write("z_m,counts\n")
            for z, c in zip(self.z, self.counts):
                fh.write(f"{z:.17g},{int(c)}\n")
        return path

    @classmethod
    def read_csv(cls, path) -> "AxialProfile":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1].astype(np.int64))


def _expected_columns(intensity, optics: OpticsConfig, cycles: int) -> np.ndarray:
    probs = intensity.bin_integrals(optics.axial_edges())
    return np.clip(probs, 0.0, None) * optics.photon_rate * optics.exposure * cycles


def expected_profile(intensity, optics: OpticsConfig, cycles: int = 1) -> np.ndarray:
    """Noise-free axial profile: signal plus background over the summed rows."""
    bg = optics.background_rate * optics.exposure * cycles * optics.radial_rows_summed
    return _expected_columns(intensity, optics, cycles) + bg


def render_frame(intensity, optics: OpticsConfig, seed, cycles: int = 1,
                 delay: Optional[float] = None, label: str = "") -> ImageFrame:
    """Draw one Poisson frame. ``cycles`` sums that many identical exposures."""
    if cycles < 1:
        raise ValueError("cycles must be >= 1")
    rows, cols = optics.shape
    lam = np.full((rows, cols), optics.background_rate * optics.exposure * cycles)
    if optics.photon_rate > 0:
        col = _expected_columns(intensity, optics, cycles)
        lam[optics.radial_rows(), :] += col[None, :] / optics.radial_rows_summed
    if lam.max() > COUNTER_MAX:
        raise OverflowError(f"expected counts {lam.max():.3g} exceed the pixel "
                            f"counter range {COUNTER_MAX}")
    rng = np.random.default_rng(seed)
    counts = rng.poisson(lam).astype(np.int64)
    return ImageFrame(counts, optics, delay, cycles, label)


def project_axial(frame: ImageFrame) -> AxialProfile:
    """Sum the configured radial rows around the ion for every axial pixel."""
    if frame.counts.size == 0:
        raise ValueError("empty frame")
    optics = frame.optics
    rows = optics.radial_rows()
    if rows.stop > frame.counts.shape[0]:
        raise ValueError("radial rows fall outside the frame")
    edges = optics.axial_edges()
    z = 0.5 * (edges[:-1] + edges[1:])
    counts = frame.counts[rows, :].sum(axis=0)
    return AxialProfile(z, counts, optics.exposure, frame.cycles_summed, optics.pixel_size)


def triggered_sequence(model: OscillatorModel, delays: Sequence[float], optics: OpticsConfig,
                       sim: SimConfig, initial_amplitude: float, seed: int = 0,
                       cycles: int = 200, realizations: Optional[int] = None,
                       include_endpoints: bool = False) -> list[ImageFrame]:
    """Frames taken at programmed delays after the drive is switched off.

    Each frame sums ``cycles`` exposures of length ``optics.exposure``. The
    position density of a frame is built from ``realizations`` independent
    ring-down trajectories (default: one per cycle) sampled inside its
    exposure window. With ``include_endpoints`` a continuously driven frame
    ("C") is prepended and an undriven thermal frame ("N") appended.
    """
    delays = [float(d) for d in delays]
    if any(d < 0 for d in delays):
        raise ValueError("delays must be >= 0")
    if any(b < a for a, b in zip(delays, delays[1:])):
        raise ValueError("delays must be sorted")
    n_real = int(realizations or cycles)
    ss = np.random.SeedSequence(seed)
    traj_seeds = [int(s.generate_state(1, np.uint64)[0]) for s in ss.spawn(n_real)]
    frame_seeds = ss.spawn(len(delays) + 2)
    duration = (delays[-1] if delays else 0.0) + optics.exposure
    run_sim = replace(sim, duration=max(duration, sim.dt))
    ens = ring_down_ensemble(model, initial_amplitude, run_sim, traj_seeds)
    w = optics.psf_hwhm
    frames = []
    sigma = thermal_sigma(model)
    if include_endpoints:
        frames.append(render_frame(driven_thermal_intensity(initial_amplitude, sigma, w),
                                   optics, frame_seeds[-2], cycles, None, "C"))
    for i, d in enumerate(delays):
        sel = (ens.times >= d) & (ens.times < d + optics.exposure)
        pdf = SampledPdf(ens.positions[:, sel])
        frames.append(render_frame(convolve_psf(pdf, w), optics, frame_seeds[i], cycles,
                                   d, f"{d * 1e3:g}ms"))
    if include_endpoints:
        thermal = (VoigtIntensity(sigma, w) if sigma > 0 else LorentzianIntensity(w))
        frames.append(render_frame(thermal, optics, frame_seeds[-1], cycles, None, "N"))
    return frames
