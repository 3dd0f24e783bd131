"""Scenario runner: simulate, image and fit, then write every data product.

Each scenario writes plot-ready CSV files, PGM frames, ``results.csv`` (one
row per reported quantity), ``summary.txt`` and ``manifest.json``. Results
rows either name an entry of the shipped reference table or carry their own
acceptance band (checks against the configured value, such as recovering
the damping rate that generated the data).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import ScenarioConfig, dumps, loads
from .dynamics import (DriveSignal, OscillatorModel, driven_steady_state, integrate_ensemble,
                       heat_without_cooling_ensemble, set_jobs, steady_state_amplitude,
                       steady_state_amplitudes_numeric, thermal_sigma, variance_growth_slope)
from .fitting import (ResonanceDataset, ensemble_temperature, fit_electrostatic, fit_heating,
                      fit_profile_driven, fit_profile_gaussian, fit_resonance,
                      fit_resonance_anharmonic, fit_ringdown_frames, fit_variance_growth,
                      q_factor, snr_estimate)
from .imaging import (ArcsinePdf, SampledPdf, VoigtIntensity, convolve_psf, project_axial,
                      render_frame, triggered_sequence)
from .physics import (CONSTANTS, NEV_PER_UM, TrapConfig, mean_phonon_number, phonon_energy,
                      secular_frequency, temperature_from_amplitude, two_ion_separation)

__all__ = [
    "ResultRow",
    "RunManifest",
    "ScenarioError",
    "ReferenceEntry",
    "CheckRow",
    "CheckReport",
    "load_reference",
    "run_scenario",
    "compare_against_reference",
    "variance_scan",
    "rerun",
    "derive_seeds",
]

log = logging.getLogger(__name__)

RESULT_FIELDS = ("quantity", "value", "sigma", "unit", "reference", "expected", "lower", "upper")


class ScenarioError(RuntimeError):
    """A scenario failed; the message names the scenario and the failing step."""


@dataclass(frozen=True)
class ResultRow:
    quantity: str
    value: float
    sigma: float = float("nan")
    unit: str = ""
    reference: str = ""
    expected: float = float("nan")
    lower: float = float("nan")
    upper: float = float("nan")

    @classmethod
    def relative(cls, quantity, value, sigma, unit, expected, tol):
        """Self-check: ``value`` must lie within ``tol`` (relative) of ``expected``."""
        span = abs(expected) * tol
        return cls(quantity, value, sigma, unit, "", expected, expected - span, expected + span)


# ---- reference table --------------------------------------------------------------

@dataclass(frozen=True)
class ReferenceEntry:
    key: str
    description: str
    value: float
    lower: float
    upper: float
    unit: str
    kind: str

    @property
    def informational(self) -> bool:
        return self.kind == "info" or math.isnan(self.lower) or math.isnan(self.upper)


def _num(text: str) -> float:
    text = text.strip()
    return float(text) if text else float("nan")


def load_reference(path=None) -> dict[str, ReferenceEntry]:
    """Read the reference table; the packaged one unless ``path`` is given."""
    if path is None:
        text = resources.files("ionprobe").joinpath("data/reference.csv").read_text()
    else:
        text = Path(path).read_text()
    table = {}
    for row in csv.DictReader(io.StringIO(text)):
        e = ReferenceEntry(row["key"], row["description"], _num(row["value"]),
                           _num(row["lower"]), _num(row["upper"]), row["unit"], row["kind"])
        table[e.key] = e
    return table


# ---- manifest ---------------------------------------------------------------------

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    scenario: str
    tool_version: str
    config: str
    seeds: dict
    files: list
    wall_time_s: float
    root: Optional[Path] = field(default=None, compare=False)

    @property
    def results_path(self) -> Optional[Path]:
        if self.root is None or not any(f["path"] == "results.csv" for f in self.files):
            return None
        return self.root / "results.csv"

    def to_json(self) -> str:
        data = {"scenario": self.scenario, "tool_version": self.tool_version,
                "config": self.config, "seeds": self.seeds, "files": self.files,
                "wall_time_s": self.wall_time_s}
        return json.dumps(data, indent=2) + "\n"

    @classmethod
    def load(cls, path) -> "RunManifest":
        path = Path(path)
        data = json.loads(path.read_text())
        missing = {"scenario", "tool_version", "config", "seeds", "files", "wall_time_s"} - set(data)
        if missing:
            raise ValueError(f"manifest {path} lacks {sorted(missing)}")
        return cls(root=path.parent, **data)

    def config_object(self) -> ScenarioConfig:
        return loads(self.config)

    def verify(self) -> list[str]:
        """Files whose checksum no longer matches (or that are missing)."""
        bad = []
        for f in self.files:
            p = self.root / f["path"]
            if not p.exists() or _sha256(p) != f["sha256"]:
                bad.append(f["path"])
        return bad


class _Output:
    """Single owner of the output directory; remembers what it wrote."""

    def __init__(self, root: Path):
        self.root = root
        self.written: list[str] = []

    def path(self, name: str) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        self.written.append(name)
        return self.root / name

    def csv(self, name: str, header: Sequence[str], rows) -> Path:
        p = self.path(name)
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_cell(v) for v in r])
        return p

    def text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text)
        return p


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else f"{float(v):.10g}"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def derive_seeds(root: int, n: int) -> list[int]:
    """Independent 64-bit seeds derived from the scenario seed."""
    return [int(s.generate_state(1, np.uint64)[0])
            for s in np.random.SeedSequence(root).spawn(n)]


# ---- scenarios --------------------------------------------------------------------

def _write_frame(out: _Output, frame, stem: str):
    frame.to_pgm(out.path(f"{stem}.pgm"))
    prof = project_axial(frame)
    prof.to_csv(out.path(f"{stem}_profile.csv"))
    return prof


def _thermal_start(model: OscillatorModel, rng: np.random.Generator, n: int = 1):
    """Initial states: the driven steady state plus an equilibrium thermal draw."""
    x0, v0 = driven_steady_state(model) if model.drive.force_amplitude else (0.0, 0.0)
    s = thermal_sigma(model)
    return (x0 + s * rng.standard_normal(n), v0 + s * model.omega_z * rng.standard_normal(n))


def _run_fig2(cfg: ScenarioConfig, out: _Output, seeds: dict) -> list[ResultRow]:
    model = cfg.model()
    optics = cfg.optics_config()
    s_drv, s_img, *s_th = derive_seeds(cfg.seed, 2 + 2 * len(cfg.scan.thermal_frequencies_hz))
    seeds.update(driven_trajectory=s_drv, driven_frame=s_img)
    rows = []
    trap = TrapConfig(2 * math.pi * cfg.trap.rf_frequency_hz, {"z": cfg.trap.mathieu_a},
                      {"z": cfg.trap.mathieu_q})
    rows.append(ResultRow("secular_frequency", secular_frequency(trap) / (2 * math.pi),
                          unit="Hz", reference="secular_frequency_108"))

    # the photon budget of one exposure, collected over the long simulated window
    budget = optics.photon_rate * optics.exposure
    long = replace(optics, exposure=cfg.sim.duration, photon_rate=budget / cfg.sim.duration)

    # continuously driven ion; the long window averages out the thermal phasor
    x0, v0 = _thermal_start(model, np.random.default_rng(s_drv))
    sim = cfg.sim_config(model, cfg.sim.duration)
    ens = integrate_ensemble(model, sim, [s_drv], x0, v0)
    frame = render_frame(convolve_psf(SampledPdf(ens.positions), long.psf_hwhm), long,
                         s_img, label="driven")
    prof = _write_frame(out, frame, "driven")
    fit = fit_profile_driven(prof)
    fit.to_csv(out.path("driven_fit.csv"))
    amp = steady_state_amplitude(model)
    z = np.linspace(-1.2 * amp, 1.2 * amp, 481)
    out.csv("driven_pdf.csv", ["z_m", "pdf_per_m"], zip(z, ArcsinePdf(amp)(z)))
    rows.append(ResultRow.relative("driven_amplitude", fit["A"], fit.sigma("A"), "m", amp, 0.05))
    rows.append(ResultRow("driven_psf_hwhm", fit["w"], fit.sigma("w"), "m"))

    # undriven ion at each trap frequency
    for i, f in enumerate(cfg.scan.thermal_frequencies_hz):
        s_traj, s_frame = s_th[2 * i], s_th[2 * i + 1]
        seeds[f"thermal_{f:g}Hz"] = [s_traj, s_frame]
        m = model.replace(omega_z=2 * math.pi * f, drive=DriveSignal())
        x0, v0 = _thermal_start(m, np.random.default_rng(s_traj))
        ens = integrate_ensemble(m, cfg.sim_config(m, cfg.sim.duration), [s_traj], x0, v0)
        frame = render_frame(convolve_psf(SampledPdf(ens.positions), long.psf_hwhm), long,
                             s_frame, label=f"{f:g}Hz")
        prof = _write_frame(out, frame, f"thermal_{f / 1e3:g}kHz")
        res = fit_profile_gaussian(prof, psf_hwhm=long.psf_hwhm, species=m.species,
                                   omega_z=m.omega_z)
        res.to_csv(out.path(f"thermal_{f / 1e3:g}kHz_fit.csv"))
        t = res.derived["temperature"]
        rows.append(ResultRow(f"thermal_temperature_{f / 1e3:g}kHz", t.value, t.sigma, "K"))
        rows.append(ResultRow(f"thermal_sigma_{f / 1e3:g}kHz", res["sigma"], res.sigma("sigma"),
                              "m"))
    return rows


def _resonance_scan(model: OscillatorModel, detunings, rel_noise, rng):
    wd = model.omega_z + 2 * math.pi * np.asarray(detunings, dtype=float)
    clean = steady_state_amplitudes_numeric(model, wd)
    noisy = clean * (1 + rel_noise * rng.standard_normal(clean.size))
    sigma = np.maximum(rel_noise * np.abs(noisy), 1e-3 * clean.max())
    return ResonanceDataset(np.asarray(detunings, dtype=float), noisy, sigma, model.omega_z)


def variance_scan(model: OscillatorModel, detunings_hz, optics, seed: int,
                  steps_per_period: int = 50, record_stride: int = 7) -> np.ndarray:
    """Fitted position variance versus drive detuning, one exposure per point.

    Every point starts in the driven steady state plus a thermal draw, is
    simulated for one exposure, imaged and fitted with a Gaussian convolved
    with the known PSF.
    """
    from .dynamics import SimConfig

    out = np.empty(len(detunings_hz))
    point_seeds = derive_seeds(seed, 3 * len(detunings_hz))
    for i, dh in enumerate(detunings_hz):
        m = model.with_drive(angular_frequency=model.omega_z + 2 * math.pi * dh)
        s_init, s_traj, s_img = point_seeds[3 * i: 3 * i + 3]
        x0, v0 = _thermal_start(m, np.random.default_rng(s_init))
        sim = SimConfig.for_model(m, optics.exposure, steps_per_period,
                                  record_stride=record_stride)
        ens = integrate_ensemble(m, sim, [s_traj], x0, v0)
        frame = render_frame(convolve_psf(SampledPdf(ens.positions), optics.psf_hwhm), optics,
                             s_img)
        out[i] = fit_profile_gaussian(project_axial(frame), psf_hwhm=optics.psf_hwhm)["variance"]
    return out


def _run_fig3(cfg: ScenarioConfig, out: _Output, seeds: dict) -> list[ResultRow]:
    sc = cfg.scan
    model = cfg.model()
    s2, s3, s4 = derive_seeds(cfg.seed, 3)
    seeds.update(scan_v2=s2, scan_v3=s3, scan_v4=s4)
    rows = []

    data2 = _resonance_scan(model, sc.detunings_hz, sc.relative_noise, np.random.default_rng(s2))
    data2.to_csv(out.path("resonance_v2.csv"))
    fit2 = fit_resonance(data2, model.species)
    fit2.to_csv(out.path("resonance_v2_fit.csv"))
    f2 = fit2.derived["F_e_neV_um"]
    rows.append(ResultRow("force_v2", f2.value, f2.sigma, "neV/um", "force_v2"))
    rows.append(ResultRow("damping_v2", fit2["gamma_z"], fit2.sigma("gamma_z"), "1/s",
                          "damping_v2"))
    rows.append(ResultRow("resonance_frequency_v2", fit2.derived["f_z_hz"].value,
                          fit2.derived["f_z_hz"].sigma, "Hz"))
    rows.append(ResultRow("quality_factor_v2", fit2.derived["Q"].value, fit2.derived["Q"].sigma))
    q = q_factor(2 * math.pi * 108.5e3, 88.0)
    rows.append(ResultRow("quality_factor", q.value, q.sigma, "", "quality_factor"))
    if sc.anharmonic_fit:
        fa = fit_resonance_anharmonic(data2, model.species, start=fit2)
        fa.to_csv(out.path("resonance_v2_anharmonic_fit.csv"))
        rows.append(ResultRow("force_v2_anharmonic", fa["F_e"] / NEV_PER_UM,
                              fa.sigma("F_e") / NEV_PER_UM, "neV/um"))
        rows.append(ResultRow("damping_v2_anharmonic", fa["gamma_z"], fa.sigma("gamma_z"), "1/s"))

    m3 = model.replace(gamma_z=sc.ratio_damping_rate).with_drive(
        force_amplitude=sc.ratio_force_neV_um * NEV_PER_UM)
    data3 = _resonance_scan(m3, sc.detunings_hz, sc.relative_noise, np.random.default_rng(s3))
    data3.to_csv(out.path("resonance_v3.csv"))
    fit3 = fit_resonance(data3, model.species)
    fit3.to_csv(out.path("resonance_v3_fit.csv"))
    f3 = fit3.derived["F_e_neV_um"]
    ratio = f3.value / f2.value
    ratio_sig = ratio * math.hypot(f3.sigma / f3.value, f2.sigma / f2.value)
    rows.append(ResultRow("force_v3", f3.value, f3.sigma, "neV/um"))
    rows.append(ResultRow("damping_v3", fit3["gamma_z"], fit3.sigma("gamma_z"), "1/s"))
    rows.append(ResultRow("force_ratio_v3_v2", ratio, ratio_sig, "", "force_ratio_v3_v2"))

    # weak drive: variance scan and its signal-to-noise
    optics = cfg.optics_config()
    m4 = OscillatorModel(species=model.species, omega_z=2 * math.pi * sc.snr_frequency_hz,
                         gamma_z=sc.snr_damping_rate,
                         doppler_temperature=cfg.cooling.doppler_temperature,
                         drive=DriveSignal(force_amplitude=sc.snr_force_neV_um * NEV_PER_UM))
    det = np.linspace(-5, 5, sc.snr_points) * sc.snr_damping_rate / (2 * math.pi)
    on = int(np.argmin(np.abs(det)))
    off = np.abs(det) >= 3 * sc.snr_damping_rate / (2 * math.pi)
    scan_seeds = derive_seeds(s4, sc.snr_scans)
    snrs = []
    for k, s in enumerate(scan_seeds):
        var = variance_scan(m4, det, optics, s, cfg.sim.steps_per_period, cfg.sim.record_stride)
        if k == 0:
            out.csv("variance_scan_v4.csv", ["detuning_hz", "variance_m2"], zip(det, var))
        snrs.append(snr_estimate(var[on], var[off]))
    snrs = np.array(snrs)
    out.csv("snr_v4.csv", ["scan", "snr"], enumerate(snrs))
    med = float(np.median(snrs))
    # spread of the median from the interquartile range
    iqr = float(np.subtract(*np.percentile(snrs, [75, 25])))
    rows.append(ResultRow("snr_v4", med, 1.2533 * iqr / 1.349 / math.sqrt(len(snrs)), "",
                          "snr_v4"))
    return rows


def _run_fig4(cfg: ScenarioConfig, out: _Output, seeds: dict) -> list[ResultRow]:
    sc = cfg.scan
    model = cfg.model().replace(drive=DriveSignal())
    optics = cfg.optics_config()
    (s,) = derive_seeds(cfg.seed, 1)
    seeds["sequence"] = s
    delays = list(sc.delays_s)
    sim = cfg.sim_config(model, delays[-1] + optics.exposure)
    frames = triggered_sequence(model, delays, optics, sim, sc.initial_amplitude_m, seed=s,
                                cycles=sc.cycles, realizations=sc.realizations or None,
                                include_endpoints=True)
    profiles = []
    for fr in frames:
        prof = _write_frame(out, fr, f"frame_{fr.label}")
        if fr.delay is not None:
            profiles.append(prof)
    fit = fit_ringdown_frames(profiles, delays, optics.exposure)
    fit.to_csv(out.path("ringdown_fit.csv"))
    t = np.linspace(0, delays[-1] + optics.exposure, 200)
    out.csv("ringdown_envelope.csv", ["t_s", "amplitude_m"],
            zip(t, fit["A0"] * np.exp(-fit["gamma"] * t)))
    return [
        ResultRow.relative("ringdown_gamma", fit["gamma"], fit.sigma("gamma"), "1/s",
                           model.gamma_z, 0.05),
        ResultRow("ringdown_initial_amplitude", fit["A0"], fit.sigma("A0"), "m"),
    ]


def _run_fig5(cfg: ScenarioConfig, out: _Output, seeds: dict) -> list[ResultRow]:
    sc = cfg.scan
    model = cfg.model()
    optics = cfg.optics_config()
    pots = [0.0] + list(sc.potentials_v)
    frame_seeds = derive_seeds(cfg.seed, len(pots))
    seeds["frames"] = frame_seeds
    sig = thermal_sigma(model)
    k = model.mass * model.omega_z ** 2
    centers, errs = [], []
    # a long exposure samples the equilibrium distribution, so frames use it directly
    for u, s in zip(pots, frame_seeds):
        z = sc.force_per_volt_neV_um * u * NEV_PER_UM / k
        frame = render_frame(VoigtIntensity(sig, optics.psf_hwhm, z), optics, s, label=f"{u:g}V")
        prof = _write_frame(out, frame, f"electrostatic_{u:g}V")
        res = fit_profile_gaussian(prof, psf_hwhm=optics.psf_hwhm)
        centers.append(res["center"])
        errs.append(res.sigma("center"))
    disp = np.array(centers[1:]) - centers[0]
    fit = fit_electrostatic(disp, sc.potentials_v, model.species, model.omega_z)
    fit.to_csv(out.path("electrostatic_fit.csv"))
    out.csv("electrostatic_points.csv",
            ["potential_v", "displacement_m", "center_sigma_m", "force_neV_um"],
            [(u, d, e, k * d / NEV_PER_UM) for u, d, e in zip(sc.potentials_v, disp, errs[1:])])
    trap = TrapConfig(2 * math.pi * cfg.trap.rf_frequency_hz, {"z": cfg.trap.mathieu_a},
                      {"z": cfg.trap.mathieu_q})
    d = fit.derived
    return [
        ResultRow("secular_frequency", secular_frequency(trap) / (2 * math.pi), unit="Hz",
                  reference="secular_frequency_80"),
        ResultRow("electrostatic_slope", d["slope_neV_um_per_nm"].value,
                  d["slope_neV_um_per_nm"].sigma, "neV/um/nm", "electrostatic_slope"),
        ResultRow("min_electrostatic_force", d["min_force_neV_um"].value,
                  d["min_force_neV_um"].sigma, "neV/um", "min_electrostatic_force"),
        ResultRow("electrostatic_force_sigma", d["force_sigma_neV_um"].value, unit="neV/um",
                  reference="electrostatic_force_sigma"),
        ResultRow("force_per_volt", d["force_per_volt_neV_um"].value,
                  d["force_per_volt_neV_um"].sigma, "neV/um/V"),
        ResultRow("max_center_sigma", float(np.max(errs)), unit="m"),
    ]


def _run_doppler(cfg: ScenarioConfig, out: _Output, seeds: dict) -> list[ResultRow]:
    model = cfg.model()
    ens_seeds = derive_seeds(cfg.seed, cfg.sim.n_seeds)
    seeds["ensemble"] = ens_seeds
    ens = integrate_ensemble(model, cfg.sim_config(model, cfg.sim.duration), ens_seeds)
    burn = cfg.sim.burn_in
    tk = ensemble_temperature(ens, burn, "velocity")
    tp = ensemble_temperature(ens, burn, "position")
    sel = ens.times >= burn
    sigma_z = float(np.sqrt(np.mean(ens.positions[:, sel] ** 2)))
    kb = CONSTANTS.boltzmann
    m = model.mass
    per_k = m * np.mean(ens.velocities[:, sel] ** 2, axis=1) / kb
    per_p = m * model.omega_z ** 2 * np.mean(ens.positions[:, sel] ** 2, axis=1) / kb
    out.csv("temperatures.csv", ["seed", "T_kinetic_K", "T_potential_K"],
            zip(ens_seeds, per_k, per_p))
    step = max(1, ens.times.size // 1000)
    out.csv("ensemble_moments.csv", ["t_s", "mean_rho2_m2", "mean_v2_m2ps2"],
            zip(ens.times[::step], np.mean(ens.positions[:, ::step] ** 2, axis=0),
                np.mean(ens.velocities[:, ::step] ** 2, axis=0)))
    n = mean_phonon_number(model.species, model.omega_z, tk.value)
    e_ph = phonon_energy(model.omega_z) / CONSTANTS.electronvolt * 1e9
    return [
        ResultRow("doppler_temperature", tk.value, tk.sigma, "K", "doppler_temperature"),
        ResultRow("potential_temperature", tp.value, tp.sigma, "K"),
        ResultRow("thermal_sigma", sigma_z, unit="m", reference="thermal_sigma_108"),
        ResultRow("mean_phonon_number", n, n * tk.sigma / tk.value, "", "mean_phonon_number"),
        ResultRow("phonon_energy", e_ph, unit="neV", reference="phonon_energy"),
        ResultRow("two_ion_separation", two_ion_separation(model.species, model.omega_z),
                  unit="m", reference="two_ion_separation_108"),
    ]


def _run_heating(cfg: ScenarioConfig, out: _Output, seeds: dict) -> list[ResultRow]:
    sc = cfg.scan
    model = cfg.model()
    volts = list(sc.noise_amplitudes_v)
    groups = derive_seeds(cfg.seed, len(volts) + 1)
    seeds["temperature_groups"] = groups[:-1]
    seeds["free_heating"] = groups[-1]
    temps, errs = [], []
    for v, g in zip(volts, groups):
        m = model.with_drive(noise_amplitude=v)
        ens = integrate_ensemble(m, cfg.sim_config(m, cfg.sim.duration),
                                 derive_seeds(g, cfg.sim.n_seeds))
        t = ensemble_temperature(ens, cfg.sim.burn_in)
        temps.append(t.value)
        errs.append(t.sigma)
    out.csv("temperatures.csv", ["noise_amplitude_v", "temperature_K", "sigma_K"],
            zip(volts, temps, errs))
    fit = fit_heating(volts, temps, errs, model.gamma_z)
    fit.to_csv(out.path("heating_fit.csv"))
    zeta = cfg.drive.noise_coupling
    ul = fit.derived["upper_limit_eV_per_s"]

    # lasers off, strongest noise: variance grows linearly
    hot = model.with_drive(noise_amplitude=max(volts))
    free = heat_without_cooling_ensemble(
        hot, cfg.sim_config(hot, sc.free_heating_duration, record_stride=50),
        derive_seeds(groups[-1], sc.free_heating_seeds))
    slope = fit_variance_growth(free.times, free.positions)
    out.csv("variance_growth.csv", ["t_s", "variance_m2"],
            zip(free.times, np.var(free.positions, axis=0)))
    t_exc = temperature_from_amplitude(model.species, model.omega_z, sc.excited_amplitude_m)
    return [
        ResultRow.relative("noise_coupling", fit["zeta"], fit.sigma("zeta"), "J/s/V^2", zeta, 0.10),
        ResultRow("heating_upper_limit", ul.value * 1e6, ul.sigma * 1e6, "ueV/s",
                  "heating_upper_limit"),
        ResultRow("zero_noise_temperature", fit.derived["doppler_limit_K"].value,
                  fit.derived["doppler_limit_K"].sigma, "K"),
        ResultRow.relative("variance_growth_slope", slope.value, slope.sigma, "m^2/s",
                           variance_growth_slope(hot), 0.10),
        ResultRow("excited_temperature", t_exc, unit="K", reference="excited_temperature"),
    ]


def _run_custom(cfg: ScenarioConfig, out: _Output, seeds: dict) -> list[ResultRow]:
    if cfg.sim.duration <= 0:
        return []
    model = cfg.model()
    ens_seeds = derive_seeds(cfg.seed, cfg.sim.n_seeds)
    seeds["ensemble"] = ens_seeds
    x0, v0 = _thermal_start(model, np.random.default_rng(cfg.seed), cfg.sim.n_seeds)
    ens = integrate_ensemble(model, cfg.sim_config(model, cfg.sim.duration), ens_seeds, x0, v0)
    for i in range(len(ens_seeds)):
        ens.trajectory(i).to_csv(out.path(f"trajectory_{i:03d}.csv"))
    rows = []
    if cfg.sim.burn_in < cfg.sim.duration and model.cooling_on:
        t = ensemble_temperature(ens, cfg.sim.burn_in)
        rows.append(ResultRow("temperature", t.value, t.sigma, "K"))
    if cfg.optics.exposure > 0:
        optics = cfg.optics_config()
        sel = ens.times >= ens.times[-1] - optics.exposure
        frame = render_frame(convolve_psf(SampledPdf(ens.positions[:, sel]), optics.psf_hwhm),
                             optics, derive_seeds(cfg.seed + 1, 1)[0], label="custom")
        prof = _write_frame(out, frame, "frame")
        res = fit_profile_gaussian(prof, psf_hwhm=optics.psf_hwhm, species=model.species,
                                   omega_z=model.omega_z)
        res.to_csv(out.path("frame_fit.csv"))
        rows.append(ResultRow("profile_sigma", res["sigma"], res.sigma("sigma"), "m"))
        rows.append(ResultRow("profile_center", res["center"], res.sigma("center"), "m"))
    return rows


_RUNNERS = {
    "fig2-profiles": _run_fig2,
    "fig3-resonance": _run_fig3,
    "fig4-ringdown": _run_fig4,
    "fig5-electrostatic": _run_fig5,
    "doppler-floor": _run_doppler,
    "heating-scan": _run_heating,
    "custom": _run_custom,
}


def _summary(cfg: ScenarioConfig, rows: list[ResultRow]) -> str:
    lines = [f"scenario {cfg.scenario}  seed {cfg.seed}  ionprobe {__version__}", ""]
    w = max([len(r.quantity) for r in rows] + [8])
    for r in rows:
        val = f"{r.value:.6g}"
        if not math.isnan(r.sigma):
            val += f" +/- {r.sigma:.2g}"
        target = ""
        if r.reference:
            target = f"reference {r.reference}"
        elif not math.isnan(r.expected):
            target = f"expected {r.expected:.6g} in [{r.lower:.6g}, {r.upper:.6g}]"
        lines.append(f"{r.quantity:<{w}}  {val:<28} {r.unit:<10} {target}".rstrip())
    return "\n".join(lines) + "\n"


def run_scenario(config: ScenarioConfig, out=None, jobs: Optional[int] = None) -> RunManifest:
    """Run one scenario and write its outputs under ``out`` (default ``config.out``)."""
    config.validate()
    root = Path(out or config.out or f"out/{config.scenario}")
    if jobs:
        set_jobs(jobs)
    t0 = time.perf_counter()
    writer = _Output(root)
    seeds = {"root": config.seed}
    log.info("running %s (seed %d) into %s", config.scenario, config.seed, root)
    try:
        rows = _RUNNERS[config.scenario](config, writer, seeds)
    except Exception as exc:
        raise ScenarioError(f"scenario {config.scenario}: {type(exc).__name__}: {exc}") from exc
    if rows or writer.written:
        writer.csv("results.csv", RESULT_FIELDS,
                   [[getattr(r, f) for f in RESULT_FIELDS] for r in rows])
        writer.text("summary.txt", _summary(config, rows))
    files = [{"path": name, "sha256": _sha256(root / name), "bytes": (root / name).stat().st_size}
             for name in sorted(set(writer.written))]
    manifest = RunManifest(config.scenario, __version__, dumps(config), seeds, files,
                           round(time.perf_counter() - t0, 3), root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "manifest.json").write_text(manifest.to_json())
    return manifest


# ---- checking -----------------------------------------------------------------------

@dataclass(frozen=True)
class CheckRow:
    quantity: str
    value: float
    target: float
    lower: float
    upper: float
    unit: str
    source: str
    margin: float
    passed: Optional[bool]  # None for informational rows

    @property
    def status(self) -> str:
        return {True: "PASS", False: "FAIL", None: "INFO"}[self.passed]


@dataclass
class CheckReport:
    scenario: str
    rows: list

    @property
    def passed(self) -> bool:
        return all(r.passed is not False for r in self.rows)

    def to_dict(self) -> dict:
        def clean(x):
            return None if isinstance(x, float) and math.isnan(x) else x
        return {"scenario": self.scenario, "passed": self.passed,
                "checks": [{"quantity": r.quantity, "value": clean(r.value),
                            "target": clean(r.target), "lower": clean(r.lower),
                            "upper": clean(r.upper), "unit": r.unit, "source": r.source,
                            "margin": clean(r.margin), "status": r.status}
                           for r in self.rows]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def text(self) -> str:
        lines = []
        for r in self.rows:
            band = "" if r.passed is None else f"in [{r.lower:.6g}, {r.upper:.6g}]"
            margin = "" if r.passed is None else f"margin {r.margin:.2f}"
            lines.append(f"{r.status}  {r.quantity}: {r.value:.6g} {r.unit} {band} {margin}"
                         f"  ({r.source})".replace("  (", " (").rstrip())
        verdict = "all checks passed" if self.passed else "some checks FAILED"
        return "\n".join(lines + [f"{self.scenario}: {verdict}"]) + "\n"


def _margin(value, target, lower, upper) -> float:
    """|value - target| in units of the band half-width on that side (<= 1 passes)."""
    if value >= target:
        span = upper - target
        d = value - target
    else:
        span = target - lower
        d = target - value
    if span <= 0:
        return 0.0 if d == 0 else math.inf
    return d / span


def compare_against_reference(manifest: RunManifest, reference=None) -> CheckReport:
    """Grade every results row against its reference entry or its own band.

    Raises KeyError when a row names a reference key the table lacks.
    """
    table = load_reference() if reference is None else (
        reference if isinstance(reference, dict) else load_reference(reference))
    rows = []
    path = manifest.results_path
    if path is not None:
        with path.open() as fh:
            records = list(csv.DictReader(fh))
    else:
        records = []
    for rec in records:
        q = rec["quantity"]
        value = _num(rec["value"])
        ref = rec["reference"].strip()
        if ref:
            if ref not in table:
                raise KeyError(f"results row {q!r} names reference {ref!r}, "
                               "which the reference table does not contain")
            e = table[ref]
            if e.informational:
                rows.append(CheckRow(q, value, e.value, e.lower, e.upper, e.unit,
                                     f"reference {ref}", math.nan, None))
                continue
            target, lo, hi, unit, src = e.value, e.lower, e.upper, e.unit, f"reference {ref}"
        elif rec["expected"].strip():
            target, lo, hi = _num(rec["expected"]), _num(rec["lower"]), _num(rec["upper"])
            unit, src = rec["unit"], "configured value"
        else:
            rows.append(CheckRow(q, value, math.nan, math.nan, math.nan, rec["unit"], "reported",
                                 math.nan, None))
            continue
        m = _margin(value, target, lo, hi) if math.isfinite(value) else math.inf
        rows.append(CheckRow(q, value, target, lo, hi, unit, src, m, m <= 1.0))
    return CheckReport(manifest.scenario, rows)


def rerun(manifest: RunManifest, out, jobs: Optional[int] = None) -> RunManifest:
    """Repeat a run from the configuration snapshot stored in its manifest."""
    return run_scenario(manifest.config_object(), out=out, jobs=jobs)
