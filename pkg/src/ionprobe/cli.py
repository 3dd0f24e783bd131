"""Command-line front end.

    ionprobe simulate --config run.ini --out traj/
    ionprobe image --config run.ini --out frames/
    ionprobe fit resonance scan.csv --reference-frequency-hz 108500
    ionprobe scenario run fig3-resonance --seed 7 --out out/fig3
    ionprobe scenario check out/fig3/manifest.json

Exit status: 0 when everything ran and every check passed, 1 when a check
failed, 2 on any error (bad arguments, invalid configuration, failed fit).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import SCENARIOS, ConfigError, ScenarioConfig, default_config, dump, load, loads
from .dynamics import integrate_ensemble, set_jobs
from .fitting import (FitError, ResonanceDataset, fit_electrostatic, fit_heating,
                      fit_profile_driven, fit_profile_gaussian, fit_resonance,
                      fit_resonance_anharmonic)
from .imaging import AxialProfile, SampledPdf, convolve_psf, project_axial, render_frame
from .physics import CA40, IonSpecies
from .scenarios import (RunManifest, ScenarioError, compare_against_reference,
                        derive_seeds, run_scenario)

EXIT_OK, EXIT_CHECK_FAILED, EXIT_ERROR = 0, 1, 2

FIT_KINDS = ("driven", "gaussian", "resonance", "heating", "electrostatic")


class UsageError(ValueError):
    pass


def _read_config(path, scenario=None) -> ScenarioConfig:
    """An INI file, or the configuration snapshot inside a run manifest."""
    p = Path(path)
    if p.suffix == ".json":
        cfg = loads(json.loads(p.read_text())["config"])
    else:
        cfg = load(p)
    if scenario is not None and cfg.scenario != scenario:
        raise UsageError(f"config {p} is for scenario {cfg.scenario!r}, not {scenario!r}")
    return cfg


def _base_config(args, scenario=None) -> ScenarioConfig:
    if args.config:
        cfg = _read_config(args.config, scenario)
    else:
        cfg = default_config(scenario or "custom")
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out:
        cfg = replace(cfg, out=args.out)
    return cfg.validate()


def _out_dir(args, default: str) -> Path:
    root = Path(args.out or default)
    root.mkdir(parents=True, exist_ok=True)
    return root


# ---- subcommands ------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _base_config(args)
    if cfg.sim.duration <= 0:
        raise UsageError("[sim] duration must be positive to simulate")
    model = cfg.model()
    root = _out_dir(args, "out/simulate")
    seeds = derive_seeds(cfg.seed, cfg.sim.n_seeds)
    ens = integrate_ensemble(model, cfg.sim_config(model, cfg.sim.duration), seeds)
    for i in range(len(seeds)):
        path = ens.trajectory(i).to_csv(root / f"trajectory_{i:03d}.csv")
        print(path)
    dump(cfg, root / "config.ini")
    return EXIT_OK


def cmd_image(args) -> int:
    cfg = _base_config(args)
    if cfg.optics.exposure <= 0:
        raise UsageError("[optics] exposure must be positive to render a frame")
    optics = cfg.optics_config()
    if args.trajectory:
        data = np.loadtxt(args.trajectory, delimiter=",", skiprows=1, ndmin=2)
        t, x = data[:, 0], data[:, 1]
        samples = x[t >= t[-1] - optics.exposure]
    else:
        model = cfg.model()
        ens = integrate_ensemble(model, cfg.sim_config(model, optics.exposure),
                                 derive_seeds(cfg.seed, cfg.sim.n_seeds))
        samples = ens.positions
    frame = render_frame(convolve_psf(SampledPdf(samples), optics.psf_hwhm), optics,
                         derive_seeds(cfg.seed + 1, 1)[0], label="image")
    root = _out_dir(args, "out/image")
    print(frame.to_pgm(root / "frame.pgm"))
    print(frame.to_csv(root / "frame.csv"))
    print(project_axial(frame).to_csv(root / "profile.csv"))
    return EXIT_OK


def _species(args) -> IonSpecies:
    if args.mass_u is None:
        return CA40
    return IonSpecies.from_amu(args.mass_u, 1)


def cmd_fit(args) -> int:
    kind, path = args.kind, Path(args.csv)
    species = _species(args)
    omega = 2 * math.pi * args.frequency_hz if args.frequency_hz else None
    if kind == "driven":
        res = fit_profile_driven(AxialProfile.read_csv(path))
    elif kind == "gaussian":
        res = fit_profile_gaussian(AxialProfile.read_csv(path), psf_hwhm=args.psf_hwhm,
                                   species=species, omega_z=omega)
    elif kind == "resonance":
        if not args.reference_frequency_hz:
            raise UsageError("fit resonance needs --reference-frequency-hz")
        data = ResonanceDataset.read_csv(path, 2 * math.pi * args.reference_frequency_hz)
        res = fit_resonance(data, species)
        if args.anharmonic:
            res = fit_resonance_anharmonic(data, species, start=res)
    elif kind == "heating":
        if not args.gamma:
            raise UsageError("fit heating needs --gamma")
        d = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        res = fit_heating(d[:, 0], d[:, 1], d[:, 2], args.gamma)
    else:
        if omega is None:
            raise UsageError("fit electrostatic needs --frequency-hz")
        d = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        # columns: potential_v, displacement_m (or a single displacement column)
        pots, disp = (d[:, 0], d[:, 1]) if d.shape[1] > 1 else (None, d[:, 0])
        res = fit_electrostatic(disp, pots, species, omega)
    print(res.summary())
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        res.to_csv(out)
        print(out)
    return EXIT_OK


def _print_report(report, json_path=None):
    print(report.text(), end="")
    if json_path:
        Path(json_path).write_text(report.to_json())


def cmd_scenario_run(args) -> int:
    cfg = _base_config(args, args.id)
    manifest = run_scenario(cfg, out=args.out, jobs=args.jobs)
    summary = manifest.root / "summary.txt"
    if summary.exists():
        print(summary.read_text(), end="")
    print(f"manifest: {manifest.root / 'manifest.json'}  ({manifest.wall_time_s:.1f} s)")
    report = compare_against_reference(manifest, args.reference)
    _print_report(report, args.json)
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_scenario_check(args) -> int:
    manifest = RunManifest.load(args.manifest)
    status = EXIT_OK
    if args.verify:
        bad = manifest.verify()
        for name in bad:
            print(f"FAIL  checksum mismatch: {name}")
        if bad:
            status = EXIT_CHECK_FAILED
    report = compare_against_reference(manifest, args.reference)
    _print_report(report, args.json)
    if not report.passed:
        status = EXIT_CHECK_FAILED
    return status


# ---- parser -------------------------------------------------------------------------

def _u64(text: str) -> int:
    val = int(text, 0)
    if not 0 <= val < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return val


def _positive_int(text: str) -> int:
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return val


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file (or a run manifest)")
    common.add_argument("--seed", type=_u64, help="override the configured seed")
    common.add_argument("--out", help="output directory (output file for 'fit')")
    common.add_argument("--jobs", type=_positive_int, help="worker threads for ensembles")

    p = argparse.ArgumentParser(prog="ionprobe", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common],
                       help="integrate trajectories described by [oscillator]/[drive]/[sim]")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("image", parents=[common], help="render a synthetic camera frame")
    s.add_argument("--trajectory", help="trajectory CSV to image instead of simulating")
    s.set_defaults(func=cmd_image)

    s = sub.add_parser("fit", parents=[common], help="fit a CSV data set")
    s.add_argument("kind", choices=FIT_KINDS)
    s.add_argument("csv")
    s.add_argument("--psf-hwhm", type=float, help="known PSF half-width (m) for 'gaussian'")
    s.add_argument("--frequency-hz", type=float, help="axial trap frequency (Hz)")
    s.add_argument("--reference-frequency-hz", type=float,
                   help="frequency the detunings refer to (Hz)")
    s.add_argument("--gamma", type=float, help="damping rate (1/s) for 'heating'")
    s.add_argument("--mass-u", type=float, help="ion mass in u (default 40Ca+)")
    s.add_argument("--anharmonic", action="store_true",
                   help="refine a resonance fit with the cubic term")
    s.set_defaults(func=cmd_fit)

    sc = sub.add_parser("scenario", help="run or check a scenario")
    scs = sc.add_subparsers(dest="action", required=True)
    r = scs.add_parser("run", parents=[common], help="run a scenario")
    r.add_argument("id", choices=SCENARIOS)
    r.add_argument("--reference", help="alternative reference table CSV")
    r.add_argument("--json", help="write the check report as JSON")
    r.set_defaults(func=cmd_scenario_run)
    c = scs.add_parser("check", help="grade a finished run against the reference table")
    c.add_argument("manifest")
    c.add_argument("--reference", help="alternative reference table CSV")
    c.add_argument("--json", help="write the check report as JSON")
    c.add_argument("--verify", action="store_true", help="also verify file checksums")
    c.set_defaults(func=cmd_scenario_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", None):
        set_jobs(args.jobs)
    try:
        return args.func(args)
    except (ConfigError, ScenarioError, UsageError, FitError, ValueError, KeyError,
            OSError, OverflowError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
