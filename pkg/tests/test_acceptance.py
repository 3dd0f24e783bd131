"""Acceptance criteria, each at its stated tolerance and runtime budget.

Every test records one ``ACCEPTANCE n PASS|FAIL`` line; the lines are
repeated in the terminal summary.
"""

import csv
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from ionprobe.config import default_config
from ionprobe.fitting import fit_electrostatic, fit_profile_driven, q_factor
from ionprobe.imaging import ArcsineLorentzian, OpticsConfig, project_axial, render_frame
from ionprobe.physics import (CA40, CONSTANTS, TrapConfig, phonon_energy, secular_frequency,
                              temperature_from_amplitude)
from ionprobe.scenarios import compare_against_reference, derive_seeds, run_scenario

W108 = 2 * math.pi * 108e3


def results(manifest) -> dict:
    with manifest.results_path.open() as fh:
        return {r["quantity"]: r for r in csv.DictReader(fh)}


def value(rows, name) -> float:
    return float(rows[name]["value"])


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


def test_1_secular_frequencies(acceptance):
    f1 = secular_frequency(TrapConfig(2 * math.pi * 1.47e6, {"z": -0.0088}, {"z": 0.25})) / (2 * math.pi)
    f2 = secular_frequency(TrapConfig(2 * math.pi * 1.47e6, {"z": -0.0184}, {"z": 0.25})) / (2 * math.pi)
    ok = (abs(f1 - 110.1e3) < 50 and abs(f1 / 108e3 - 1) <= 0.03
          and abs(f2 - 83.3e3) < 50 and abs(f2 / 80e3 - 1) <= 0.05)
    acceptance(1, ok, f"secular frequencies {f1 / 1e3:.2f} kHz (vs 108, {f1 / 108e3 - 1:+.1%}) "
                      f"and {f2 / 1e3:.2f} kHz (vs 80, {f2 / 80e3 - 1:+.1%})")


def test_2_electrostatic_slope(acceptance, tmp_path):
    w = 2 * math.pi * 80e3
    direct = fit_electrostatic(np.array([1e-7, 2e-7, 4e-7]), None, CA40, w)["slope_neV_um_per_nm"]
    man, dt = timed(run_scenario, default_config("fig5-electrostatic"), out=tmp_path / "fig5")
    rows = results(man)
    scen = value(rows, "electrostatic_slope")
    ok = (abs(direct / 0.10455 - 1) <= 0.01 and abs(scen / 0.10455 - 1) <= 0.01 and dt < 1.0
          and compare_against_reference(man).passed)
    acceptance(2, ok, f"electrostatic slope {direct:.5f} (scenario {scen:.5f}) neV/um/nm vs "
                      f"0.10455, {direct / 0.10455 - 1:+.2%}; min force "
                      f"{value(rows, 'min_electrostatic_force'):.1f} neV/um; {dt:.2f} s")


def test_3_quality_factor(acceptance):
    q = q_factor(2 * math.pi * 108.5e3, 88.0).value
    acceptance(3, abs(q - 3875) <= 45, f"Q = {q:.1f} vs 3875 +/- 45")


def test_4_resonance_round_trip(acceptance, tmp_path):
    cfg = default_config("fig3-resonance")
    # the weak-drive variance scan belongs to criterion 9; keep it minimal here
    cfg = replace(cfg, scan=replace(cfg.scan, snr_scans=1, snr_points=7))
    man, dt = timed(run_scenario, cfg, out=tmp_path / "fig3")
    rows = results(man)
    f, g, ratio = (value(rows, k) for k in ("force_v2", "damping_v2", "force_ratio_v3_v2"))
    ok = (abs(f / 5.3 - 1) <= 0.05 and abs(g / 87.6 - 1) <= 0.05 and 0.63 <= ratio <= 0.73
          and dt < 10)
    acceptance(4, ok, f"F_e = {f:.3f} neV/um ({f / 5.3 - 1:+.1%}), gamma = {g:.2f} 1/s "
                      f"({g / 87.6 - 1:+.1%}), ratio {ratio:.3f} in [0.63, 0.73]; {dt:.1f} s")


def test_5_fluctuation_dissipation(acceptance, tmp_path):
    man, dt = timed(run_scenario, default_config("doppler-floor"), out=tmp_path / "doppler")
    rows = results(man)
    t, s, n = (value(rows, k) for k in ("doppler_temperature", "thermal_sigma",
                                        "mean_phonon_number"))
    ok = (abs(t / 0.01 - 1) <= 0.10 and abs(s / 2.1e-6 - 1) <= 0.10 and 1500 <= n <= 2100
          and dt < 120)
    acceptance(5, ok, f"T = {t * 1e3:.2f} mK ({t / 0.01 - 1:+.1%}), sigma_z = {s * 1e6:.2f} um, "
                      f"n = {n:.0f}; 100 seeds x 1 s in {dt:.0f} s")


def test_6_driven_profile_round_trip(acceptance):
    t0 = time.perf_counter()
    a, w = 21e-6, 3e-6
    optics = OpticsConfig(crop=(16, 64), photon_rate=2e6)
    photons = optics.photon_rate * optics.exposure
    shape = ArcsineLorentzian(a, w)
    pulls = []
    for s in derive_seeds(2026, 100):
        res = fit_profile_driven(project_axial(render_frame(shape, optics, s)))
        pulls.append((res["A"] - a) / res.sigma("A"))
    pulls = np.array(pulls)
    first = pulls[0]
    mean, width = pulls.mean(), pulls.std(ddof=1)
    dt = time.perf_counter() - t0
    ok = (photons >= 1e4 and abs(first) <= 1 and abs(mean) <= 0.2 and abs(width - 1) <= 0.3
          and dt < 60)
    acceptance(6, ok, f"{photons:.0f} photons, first fit {first:+.2f} sigma from 21 um; pulls "
                      f"mean {mean:+.3f} width {width:.3f} over 100 seeds; {dt:.0f} s")


def test_7_ring_down(acceptance, tmp_path):
    man, dt = timed(run_scenario, default_config("fig4-ringdown"), out=tmp_path / "fig4")
    g = value(results(man), "ringdown_gamma")
    ok = abs(g / 87.6 - 1) <= 0.05 and dt < 60
    acceptance(7, ok, f"ring-down gamma {g:.2f} 1/s vs 87.6 ({g / 87.6 - 1:+.1%}); "
                      f"delays 0-25 ms; {dt:.1f} s")


def test_8_heating_law(acceptance, tmp_path):
    cfg = default_config("heating-scan")
    man, dt = timed(run_scenario, cfg, out=tmp_path / "heat")
    rows = results(man)
    slope = value(rows, "variance_growth_slope")
    slope_ref = float(rows["variance_growth_slope"]["expected"])
    zeta = value(rows, "noise_coupling")
    ul = value(rows, "heating_upper_limit")
    ok = (abs(slope / slope_ref - 1) <= 0.10 and abs(zeta / cfg.drive.noise_coupling - 1) <= 0.10
          and 0.27 <= ul <= 0.33 and dt < 120)
    acceptance(8, ok, f"variance slope {slope / slope_ref - 1:+.1%} of 2 zeta V^2/(m w^2), "
                      f"zeta {zeta / cfg.drive.noise_coupling - 1:+.1%}, upper limit "
                      f"{ul:.3f} ueV/s; {dt:.0f} s")


def test_9_snr(acceptance, tmp_path):
    man, dt = timed(run_scenario, default_config("fig3-resonance"), out=tmp_path / "fig3")
    snr = value(results(man), "snr_v4")
    ok = 2.0 / 1.5 <= snr <= 2.0 * 1.5 and dt < 120
    acceptance(9, ok, f"median variance-scan SNR {snr:.2f} for 0.53 neV/um "
                      f"(within x1.5 of 2: [1.33, 3.00]); {dt:.0f} s")


def test_10_consistency_properties(acceptance):
    t = temperature_from_amplitude(CA40, W108, 15.6e-6)
    e = phonon_energy(W108) / CONSTANTS.electronvolt * 1e9
    # the 4.5 neV figure is an order of magnitude off the computed quantum
    ok = abs(0.230 / t - 1) <= 0.20 and abs(e - 0.447) <= 5e-4 and abs(4.5 / e - 10) < 0.2
    acceptance(10, ok, f"15.6 um -> {t * 1e3:.0f} mK vs 230 mK ({0.230 / t - 1:+.1%}); "
                       f"hbar*omega = {e:.4f} neV (4.5 neV is {4.5 / e:.1f}x too large)")
