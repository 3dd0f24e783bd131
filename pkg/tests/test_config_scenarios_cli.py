import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ionprobe import __version__
from ionprobe.cli import main
from ionprobe.config import (SCENARIOS, ConfigError, CoolingBlock, OpticsBlock, SimBlock,
                             default_config, dump, dumps, load, loads)
from ionprobe.fitting import ResonanceDataset, resonance_model
from ionprobe.physics import CA40, NEV_PER_UM
from ionprobe.scenarios import (RunManifest, ScenarioError, compare_against_reference,
                                derive_seeds, load_reference, rerun, run_scenario)

W0 = 2 * math.pi * 108e3


# ---- configuration --------------------------------------------------------------

@pytest.mark.parametrize("sid", SCENARIOS)
def test_defaults_validate_and_round_trip(sid):
    cfg = default_config(sid).validate()
    assert loads(dumps(cfg)) == cfg
    assert dumps(loads(dumps(cfg))) == dumps(cfg)


finite = st.floats(1e-3, 1e3, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(sid=st.sampled_from(SCENARIOS), seed=st.integers(0, 2 ** 64 - 1),
       damping=finite, temp=st.floats(0.0, 1.0), force=st.floats(0.0, 100.0),
       det=st.floats(-500.0, 500.0), noise=st.floats(0.0, 5.0),
       stride=st.integers(1, 50), n=st.integers(1, 500),
       dets=st.lists(st.floats(-1e3, 1e3), min_size=0, max_size=12),
       note=st.text(st.characters(whitelist_categories=("L", "N")), max_size=12))
def test_config_round_trip_property(sid, seed, damping, temp, force, det, noise, stride, n,
                                    dets, note):
    base = default_config(sid)
    cfg = replace(base, seed=seed,
                  cooling=CoolingBlock(True, damping, temp),
                  drive=replace(base.drive, force_neV_um=force, detuning_hz=det,
                                noise_amplitude_v=noise, voltage_note=note),
                  sim=replace(base.sim, record_stride=stride, n_seeds=n),
                  scan=replace(base.scan, detunings_hz=tuple(dets)))
    assert loads(dumps(cfg), validate=False) == cfg


def test_file_round_trip(tmp_path):
    cfg = default_config("fig3-resonance")
    assert load(dump(cfg, tmp_path / "c.ini")) == cfg


def test_partial_file_falls_back_to_scenario_defaults():
    cfg = loads("[scenario]\nid = fig5-electrostatic\nseed = 7\n[optics]\nphoton_rate = 2e4\n")
    assert cfg.seed == 7 and cfg.optics.photon_rate == 2e4
    assert cfg.scan.potentials_v == default_config("fig5-electrostatic").scan.potentials_v
    assert cfg.omega_z == pytest.approx(2 * math.pi * 80e3)


def test_field_level_errors_are_collected():
    text = ("[scenario]\nid = fig3-resonance\n[sim]\nsteps_per_period = 20\n"
            "[cooling]\ndoppler_temperature = -1\n[optics]\nradial_rows_summed = 99\n"
            "crop_rows = 16\n")
    with pytest.raises(ConfigError) as exc:
        loads(text)
    msg = str(exc.value)
    assert "[sim] steps_per_period" in msg
    assert "[cooling] doppler_temperature" in msg
    assert "[optics] radial_rows_summed" in msg


@pytest.mark.parametrize("text,fragment", [
    ("[scenario]\nid = fig9\n", "unknown scenario"),
    ("[scenario]\nseed = 1\n", "[scenario] id: missing"),
    ("[scenario]\nid = custom\n[sim]\nduraton = 1\n", "[sim] duraton: unknown key"),
    ("[scenario]\nid = custom\n[lasers]\nx = 1\n", "[lasers]: unknown section"),
    ("[scenario]\nid = custom\n[sim]\nduration = fast\n", "[sim] duration: expected a finite"),
    ("[scenario]\nid = custom\n[cooling]\nenabled = maybe\n", "expected a boolean"),
    ("[scenario]\nid = custom\nseed = -1\n", "seed"),
    ("[scenario]\nid = custom\n[trap]\nmathieu_a = -0.05\n", "[trap] mathieu_a/mathieu_q"),
    ("[scenario]\nid = heating-scan\n[scan]\nnoise_amplitudes_v = 1, 1, 2\n",
     "noise_amplitudes_v"),
    ("[scenario]\nid = custom\n[ion]\ncharge = 0\n", "[ion] charge"),
    ("not an ini", "syntax"),
])
def test_config_errors(text, fragment):
    with pytest.raises(ConfigError) as exc:
        loads(text)
    assert fragment in str(exc.value)


def test_model_and_optics_from_config():
    cfg = default_config("fig2-profiles")
    m = cfg.model()
    assert m.omega_z == pytest.approx(W0)
    assert m.gamma_z == 87.6 and m.doppler_temperature == 0.01
    amp = m.drive.force_amplitude / (2 * m.mass * m.gamma_z * m.omega_z)
    assert amp == pytest.approx(21e-6, rel=1e-12)
    assert cfg.optics_config().shape == (16, 64)
    free = replace(cfg, oscillator=replace(cfg.oscillator, frequency_hz=0.0))
    assert free.omega_z == pytest.approx(2 * math.pi * 110.1e3, rel=1e-3)


# ---- scenarios ------------------------------------------------------------------

def test_derive_seeds_are_stable_and_distinct():
    a = derive_seeds(5, 10)
    assert a == derive_seeds(5, 10) and len(set(a)) == 10
    assert a[:3] == derive_seeds(5, 3)
    assert all(0 <= s < 2 ** 64 for s in a)


def test_reference_table_rows():
    ref = load_reference()
    assert ref["remote_ion_force"].value == 0.01 and ref["remote_ion_force"].informational
    assert ref["fifty_ion_force"].informational
    assert not ref["quality_factor"].informational
    for e in ref.values():
        if not e.informational:
            assert e.lower <= e.value <= e.upper, e.key


def test_empty_custom_scenario_gives_manifest_without_files(tmp_path):
    man = run_scenario(default_config("custom"), out=tmp_path / "empty")
    assert man.files == []
    assert sorted(p.name for p in (tmp_path / "empty").iterdir()) == ["manifest.json"]
    loaded = RunManifest.load(tmp_path / "empty" / "manifest.json")
    assert loaded.tool_version == __version__ and loaded.files == []
    report = compare_against_reference(loaded)
    assert report.passed and report.rows == []


def test_custom_scenario_with_trajectory_and_frame(tmp_path):
    cfg = default_config("custom")
    cfg = replace(cfg, sim=SimBlock(duration=0.02, record_stride=10, n_seeds=2, burn_in=0.001),
                  optics=OpticsBlock(crop_rows=16, crop_cols=48, exposure=0.01,
                                     photon_rate=1e6))
    man = run_scenario(cfg, out=tmp_path / "c")
    names = {f["path"] for f in man.files}
    assert {"trajectory_000.csv", "trajectory_001.csv", "frame.pgm", "frame_profile.csv",
            "results.csv", "summary.txt"} <= names
    assert "manifest.json" not in names
    assert man.verify() == []


def test_fig5_reruns_are_byte_identical(tmp_path):
    cfg = replace(default_config("fig5-electrostatic"), seed=11)
    a = run_scenario(cfg, out=tmp_path / "a")
    b = rerun(RunManifest.load(tmp_path / "a" / "manifest.json"), tmp_path / "b")
    assert a.files == b.files
    for f in a.files:
        assert (tmp_path / "a" / f["path"]).read_bytes() == (tmp_path / "b" / f["path"]).read_bytes()
    assert compare_against_reference(a).passed
    c = run_scenario(replace(cfg, seed=12), out=tmp_path / "c")
    assert c.files != a.files


def test_stochastic_run_is_identical_across_job_counts(tmp_path):
    cfg = replace(default_config("custom"), seed=4,
                  sim=SimBlock(duration=0.01, record_stride=10, n_seeds=3, burn_in=0.001))
    a = run_scenario(cfg, out=tmp_path / "a", jobs=1)
    b = run_scenario(cfg, out=tmp_path / "b", jobs=2)
    assert a.files == b.files and len(a.files) == 5


def test_manifest_verify_detects_tampering(tmp_path):
    man = run_scenario(default_config("fig5-electrostatic"), out=tmp_path / "r")
    (tmp_path / "r" / "electrostatic_fit.csv").write_text("tampered\n")
    (tmp_path / "r" / "summary.txt").unlink()
    assert sorted(man.verify()) == ["electrostatic_fit.csv", "summary.txt"]


def fast_fig3(**cooling):
    cfg = default_config("fig3-resonance")
    return replace(cfg, cooling=replace(cfg.cooling, **cooling),
                   scan=replace(cfg.scan, snr_scans=1, snr_points=7))


def test_fig3_doubled_damping_fails_with_margin(tmp_path):
    man = run_scenario(fast_fig3(damping_rate=2 * 87.6), out=tmp_path / "f")
    report = compare_against_reference(man)
    assert not report.passed
    row = next(r for r in report.rows if r.quantity == "damping_v2")
    assert row.status == "FAIL"
    # 175 1/s against 87.6 +/- 4.38: about 20 half-widths away
    assert 15 < row.margin < 25
    assert "FAIL  damping_v2" in report.text()
    data = json.loads(report.to_json())
    assert data["passed"] is False
    assert any(c["quantity"] == "damping_v2" and c["status"] == "FAIL" for c in data["checks"])


def test_missing_reference_entry_raises(tmp_path):
    man = run_scenario(default_config("fig5-electrostatic"), out=tmp_path / "r")
    ref = load_reference()
    del ref["electrostatic_slope"]
    with pytest.raises(KeyError, match="electrostatic_slope"):
        compare_against_reference(man, ref)


def test_downstream_errors_carry_scenario_context(tmp_path):
    cfg = default_config("fig5-electrostatic")
    cfg = replace(cfg, optics=replace(cfg.optics, photon_rate=0.0, background_rate=0.0))
    with pytest.raises(ScenarioError, match="fig5-electrostatic"):
        run_scenario(cfg, out=tmp_path / "x")


def test_invalid_config_stops_before_running(tmp_path):
    cfg = replace(default_config("fig5-electrostatic"), sim=SimBlock(steps_per_period=10))
    with pytest.raises(ConfigError, match="steps_per_period"):
        run_scenario(cfg, out=tmp_path / "x")
    assert not (tmp_path / "x").exists()


# ---- command line ---------------------------------------------------------------

def test_cli_version_and_usage(capsys):
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out
    assert main([]) == 2
    assert main(["scenario", "run", "fig9"]) == 2
    assert main(["simulate", "--seed", "-3"]) == 2


def test_cli_scenario_run_and_check(tmp_path, capsys):
    out = tmp_path / "fig5"
    assert main(["scenario", "run", "fig5-electrostatic", "--out", str(out), "--seed", "3"]) == 0
    text = capsys.readouterr().out
    assert "PASS  electrostatic_slope" in text and "all checks passed" in text
    manifest = out / "manifest.json"
    assert main(["scenario", "check", str(manifest), "--verify", "--json",
                 str(tmp_path / "r.json")]) == 0
    assert json.loads((tmp_path / "r.json").read_text())["passed"] is True

    # a stricter table turns the same run into a check failure
    lines = (tmp_path / "ref.csv")
    rows = load_reference()
    with lines.open("w") as fh:
        fh.write("key,description,value,lower,upper,unit,kind\n")
        for e in rows.values():
            lo, hi = e.lower, e.upper
            if e.key == "electrostatic_slope":
                lo, hi = 0.2, 0.3
                val = 0.25
            else:
                val = e.value
            fh.write(f"{e.key},x,{val},{'' if math.isnan(lo) else lo},"
                     f"{'' if math.isnan(hi) else hi},{e.unit},{e.kind}\n")
    assert main(["scenario", "check", str(manifest), "--reference", str(lines)]) == 1
    assert "FAIL  electrostatic_slope" in capsys.readouterr().out

    # a table lacking a referenced entry is an error
    kept = [ln for ln in lines.read_text().splitlines() if not ln.startswith("electrostatic_slope")]
    lines.write_text("\n".join(kept) + "\n")
    assert main(["scenario", "check", str(manifest), "--reference", str(lines)]) == 2
    assert "electrostatic_slope" in capsys.readouterr().err

    (out / "electrostatic_fit.csv").write_text("x\n")
    assert main(["scenario", "check", str(manifest), "--verify"]) == 1


def test_cli_run_from_manifest_config(tmp_path):
    out = tmp_path / "a"
    assert main(["scenario", "run", "fig5-electrostatic", "--out", str(out)]) == 0
    assert main(["scenario", "run", "fig5-electrostatic", "--config", str(out / "manifest.json"),
                 "--out", str(tmp_path / "b")]) == 0
    assert (out / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()
    assert main(["scenario", "run", "doppler-floor", "--config",
                 str(out / "manifest.json")]) == 2


def test_cli_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[scenario]\nid = custom\n[sim]\nn_seeds = 0\n")
    assert main(["simulate", "--config", str(bad)]) == 2
    assert "[sim] n_seeds" in capsys.readouterr().err


def test_cli_simulate_and_image(tmp_path, capsys):
    ini = tmp_path / "run.ini"
    ini.write_text("[scenario]\nid = custom\n[sim]\nduration = 0.005\nn_seeds = 2\n"
                   "record_stride = 5\n[optics]\nexposure = 0.005\ncrop_rows = 16\n"
                   "crop_cols = 48\nphoton_rate = 1e6\n")
    assert main(["simulate", "--config", str(ini), "--out", str(tmp_path / "sim")]) == 0
    traj = tmp_path / "sim" / "trajectory_000.csv"
    assert traj.read_text().startswith("t_s,rho_m,v_mps\n")
    assert (tmp_path / "sim" / "trajectory_001.csv").exists()
    assert main(["image", "--config", str(ini), "--trajectory", str(traj),
                 "--out", str(tmp_path / "img")]) == 0
    assert (tmp_path / "img" / "frame.pgm").read_text().startswith("P2")
    assert main(["image", "--config", str(ini), "--out", str(tmp_path / "img2")]) == 0
    empty = tmp_path / "empty.ini"
    empty.write_text("[scenario]\nid = custom\n")
    assert main(["simulate", "--config", str(empty)]) == 2
    assert main(["image", "--config", str(empty)]) == 2


def test_cli_fit_commands(tmp_path, capsys):
    wd = W0 + 2 * math.pi * np.linspace(-150, 150, 15)
    amp = resonance_model(wd, 5.3 * NEV_PER_UM, 87.6, W0, CA40.mass)
    scan = ResonanceDataset(np.linspace(-150, 150, 15), amp, 0.03 * amp.max(), W0)
    scan.to_csv(tmp_path / "scan.csv")
    assert main(["fit", "resonance", str(tmp_path / "scan.csv"), "--reference-frequency-hz",
                 "108000", "--out", str(tmp_path / "fit.csv")]) == 0
    out = capsys.readouterr().out
    assert "F_e_neV_um" in out
    fitted = dict(ln.split(",")[:2] for ln in (tmp_path / "fit.csv").read_text().splitlines()[1:])
    assert float(fitted["F_e_neV_um"]) == pytest.approx(5.3, rel=1e-6)
    assert main(["fit", "resonance", str(tmp_path / "scan.csv")]) == 2

    v = np.array([0.1, 0.5, 1.0, 1.5, 2.0])
    t = 0.01 + 1e-3 * v ** 2
    np.savetxt(tmp_path / "heat.csv", np.column_stack([v, t, np.full(5, 1e-4)]), delimiter=",",
               header="v,t,s", comments="")
    assert main(["fit", "heating", str(tmp_path / "heat.csv"), "--gamma", "87.6"]) == 0
    assert main(["fit", "heating", str(tmp_path / "heat.csv")]) == 2

    pots = np.arange(0.5, 4.01, 0.5)
    np.savetxt(tmp_path / "es.csv", np.column_stack([pots, pots * 804e-9]), delimiter=",",
               header="u,z", comments="")
    assert main(["fit", "electrostatic", str(tmp_path / "es.csv"), "--frequency-hz", "80000"]) == 0
    assert "slope_neV_um_per_nm" in capsys.readouterr().out
    assert main(["fit", "electrostatic", str(tmp_path / "es.csv")]) == 2
    assert main(["fit", "driven", str(tmp_path / "missing.csv")]) == 2
