"""Scenario configuration files.

A configuration is a flat INI file, one section per parameter block, SI
units except forces, which are given in neV/um. Every key has a default that
depends on the scenario id, so a file only needs the values it changes::

    [scenario]
    id = fig3-resonance
    seed = 7

    [drive]
    force_neV_um = 5.3

``dumps`` writes every key, and ``loads(dumps(cfg)) == cfg`` holds exactly.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import get_type_hints

import numpy as np

from .dynamics import DriveSignal, OscillatorModel, SimConfig
from .imaging import OpticsConfig
from .physics import (CA40, NEV_PER_UM, IonSpecies, TrapConfig, UnstableTrapError,
                      secular_frequency)

__all__ = [
    "SCENARIOS",
    "ConfigError",
    "IonBlock",
    "TrapBlock",
    "OscillatorBlock",
    "CoolingBlock",
    "DriveBlock",
    "OpticsBlock",
    "SimBlock",
    "ScanBlock",
    "ScenarioConfig",
    "default_config",
    "loads",
    "dumps",
    "load",
    "dump",
]

SCENARIOS = ("fig2-profiles", "fig3-resonance", "fig4-ringdown", "fig5-electrostatic",
             "doppler-floor", "heating-scan", "custom")


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists one message per offending field."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


@dataclass(frozen=True)
class IonBlock:
    mass_u: float = 39.9626
    charge: int = 1


@dataclass(frozen=True)
class TrapBlock:
    rf_frequency_hz: float = 1.47e6
    mathieu_a: float = -0.0088
    mathieu_q: float = 0.25


@dataclass(frozen=True)
class OscillatorBlock:
    # 0 means: derive the axial frequency from the [trap] block
    frequency_hz: float = 108e3
    alpha: float = 0.0


@dataclass(frozen=True)
class CoolingBlock:
    enabled: bool = True
    damping_rate: float = 87.6
    doppler_temperature: float = 0.01


@dataclass(frozen=True)
class DriveBlock:
    force_neV_um: float = 0.0
    detuning_hz: float = 0.0
    phase: float = 0.0
    dc_force_neV_um: float = 0.0
    noise_amplitude_v: float = 0.0
    noise_coupling: float = 0.0
    voltage_note: str = ""


@dataclass(frozen=True)
class OpticsBlock:
    magnification: float = 6.75
    pixel_pitch: float = 16e-6
    sensor_rows: int = 512
    sensor_cols: int = 512
    # 0 keeps the full sensor
    crop_rows: int = 0
    crop_cols: int = 0
    psf_hwhm: float = 3e-6
    photon_rate: float = 5e4
    # 0 disables imaging
    exposure: float = 20e-3
    background_rate: float = 5.0
    radial_rows_summed: int = 3


@dataclass(frozen=True)
class SimBlock:
    # 0 disables the trajectory run of a custom scenario
    duration: float = 0.0
    steps_per_period: int = 50
    record_stride: int = 1
    n_seeds: int = 1
    burn_in: float = 0.0


@dataclass(frozen=True)
class ScanBlock:
    """Scenario-specific sweeps. Keys a scenario does not use are ignored."""

    detunings_hz: tuple = ()
    relative_noise: float = 0.03
    anharmonic_fit: bool = False
    ratio_force_neV_um: float = 3.71
    ratio_damping_rate: float = 298.0
    snr_force_neV_um: float = 0.53
    snr_frequency_hz: float = 202e3
    snr_damping_rate: float = 250.0
    snr_scans: int = 40
    snr_points: int = 21
    thermal_frequencies_hz: tuple = ()
    delays_s: tuple = ()
    cycles: int = 200
    realizations: int = 0
    initial_amplitude_m: float = 0.0
    potentials_v: tuple = ()
    force_per_volt_neV_um: float = 84.0
    noise_amplitudes_v: tuple = ()
    free_heating_seeds: int = 1000
    free_heating_duration: float = 0.05
    excited_amplitude_m: float = 15.6e-6


_SECTIONS = {
    "ion": IonBlock,
    "trap": TrapBlock,
    "oscillator": OscillatorBlock,
    "cooling": CoolingBlock,
    "drive": DriveBlock,
    "optics": OpticsBlock,
    "sim": SimBlock,
    "scan": ScanBlock,
}


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "custom"
    seed: int = 0
    out: str = ""
    ion: IonBlock = field(default_factory=IonBlock)
    trap: TrapBlock = field(default_factory=TrapBlock)
    oscillator: OscillatorBlock = field(default_factory=OscillatorBlock)
    cooling: CoolingBlock = field(default_factory=CoolingBlock)
    drive: DriveBlock = field(default_factory=DriveBlock)
    optics: OpticsBlock = field(default_factory=OpticsBlock)
    sim: SimBlock = field(default_factory=SimBlock)
    scan: ScanBlock = field(default_factory=ScanBlock)

    # ---- conversion into the physics objects ------------------------------

    @property
    def species(self) -> IonSpecies:
        if self.ion.mass_u == 39.9626 and self.ion.charge == 1:
            return CA40
        return IonSpecies.from_amu(self.ion.mass_u, self.ion.charge)

    @property
    def trap_config(self) -> TrapConfig:
        t = self.trap
        return TrapConfig(2 * math.pi * t.rf_frequency_hz, mathieu_a={"z": t.mathieu_a},
                          mathieu_q={"z": t.mathieu_q})

    @property
    def omega_z(self) -> float:
        if self.oscillator.frequency_hz > 0:
            return 2 * math.pi * self.oscillator.frequency_hz
        return secular_frequency(self.trap_config, "z")

    def model(self) -> OscillatorModel:
        d = self.drive
        w = self.omega_z
        drive = DriveSignal(force_amplitude=d.force_neV_um * NEV_PER_UM,
                            angular_frequency=w + 2 * math.pi * d.detuning_hz,
                            phase=d.phase, dc_force=d.dc_force_neV_um * NEV_PER_UM,
                            noise_amplitude=d.noise_amplitude_v,
                            noise_coupling=d.noise_coupling)
        c = self.cooling
        return OscillatorModel(species=self.species, omega_z=w,
                               gamma_z=c.damping_rate if c.enabled else 0.0,
                               alpha=self.oscillator.alpha, drive=drive,
                               cooling_on=c.enabled,
                               doppler_temperature=c.doppler_temperature)

    def optics_config(self) -> OpticsConfig:
        o = self.optics
        crop = (o.crop_rows, o.crop_cols) if o.crop_rows and o.crop_cols else None
        return OpticsConfig(magnification=o.magnification, pixel_pitch=o.pixel_pitch,
                            sensor_size=(o.sensor_rows, o.sensor_cols), psf_hwhm=o.psf_hwhm,
                            photon_rate=o.photon_rate, exposure=o.exposure,
                            background_rate=o.background_rate,
                            radial_rows_summed=o.radial_rows_summed, crop=crop)

    def sim_config(self, model: OscillatorModel, duration: float, **kw) -> SimConfig:
        kw.setdefault("record_stride", self.sim.record_stride)
        return SimConfig.for_model(model, duration, self.sim.steps_per_period, **kw)

    # ---- validation -----------------------------------------------------

    def validate(self) -> "ScenarioConfig":
        """Raise ConfigError listing every invalid field; return self otherwise."""
        errs = []

        def need(cond, where, msg):
            if not cond:
                errs.append(f"[{where}] {msg}")

        need(self.scenario in SCENARIOS, "scenario",
             f"id: unknown scenario {self.scenario!r}, expected one of {', '.join(SCENARIOS)}")
        need(0 <= self.seed < 2 ** 64, "scenario", "seed: must be an unsigned 64-bit integer")
        need(self.ion.mass_u > 0, "ion", "mass_u: must be positive")
        need(self.ion.charge >= 1, "ion", "charge: must be a positive integer")
        need(self.trap.rf_frequency_hz > 0, "trap", "rf_frequency_hz: must be positive")
        need(self.oscillator.frequency_hz >= 0, "oscillator", "frequency_hz: must be >= 0")
        if self.trap.rf_frequency_hz > 0:
            try:
                secular_frequency(self.trap_config, "z")
            except UnstableTrapError as exc:
                errs.append(f"[trap] mathieu_a/mathieu_q: {exc}")
        need(self.cooling.damping_rate >= 0, "cooling", "damping_rate: must be >= 0")
        need(not (self.cooling.enabled and self.cooling.damping_rate == 0), "cooling",
             "damping_rate: must be positive while cooling is enabled")
        need(self.cooling.doppler_temperature >= 0, "cooling",
             "doppler_temperature: must be >= 0")
        d = self.drive
        need(d.force_neV_um >= 0, "drive", "force_neV_um: must be >= 0")
        need(d.noise_amplitude_v >= 0, "drive", "noise_amplitude_v: must be >= 0")
        need(d.noise_coupling >= 0, "drive", "noise_coupling: must be >= 0")
        if not errs:
            need(self.omega_z + 2 * math.pi * d.detuning_hz >= 0, "drive",
                 "detuning_hz: drive frequency would be negative")
        o = self.optics
        for name in ("magnification", "pixel_pitch", "psf_hwhm"):
            need(getattr(o, name) > 0, "optics", f"{name}: must be positive")
        need(o.exposure >= 0, "optics", "exposure: must be >= 0")
        need(o.photon_rate >= 0, "optics", "photon_rate: must be >= 0")
        need(o.background_rate >= 0, "optics", "background_rate: must be >= 0")
        need(o.sensor_rows > 0 and o.sensor_cols > 0, "optics", "sensor_rows/sensor_cols: must be positive")
        need(o.crop_rows >= 0 and o.crop_cols >= 0, "optics", "crop_rows/crop_cols: must be >= 0")
        need(o.crop_rows <= o.sensor_rows and o.crop_cols <= o.sensor_cols, "optics",
             "crop_rows/crop_cols: crop larger than the sensor")
        rows = o.crop_rows or o.sensor_rows
        need(1 <= o.radial_rows_summed <= rows, "optics",
             f"radial_rows_summed: must lie in [1, {rows}]")
        s = self.sim
        need(s.duration >= 0, "sim", "duration: must be >= 0")
        need(s.steps_per_period >= 50, "sim",
             "steps_per_period: must be >= 50 to resolve the trap period")
        need(s.record_stride >= 1, "sim", "record_stride: must be >= 1")
        need(s.n_seeds >= 1, "sim", "n_seeds: must be >= 1")
        need(s.burn_in >= 0, "sim", "burn_in: must be >= 0")
        if s.duration > 0:
            need(s.burn_in < s.duration, "sim", "burn_in: must be shorter than duration")
        c = self.scan
        need(c.relative_noise >= 0, "scan", "relative_noise: must be >= 0")
        need(c.snr_scans >= 1, "scan", "snr_scans: must be >= 1")
        need(c.snr_points >= 7, "scan", "snr_points: must be >= 7")
        need(c.cycles >= 1, "scan", "cycles: must be >= 1")
        need(c.realizations >= 0, "scan", "realizations: must be >= 0")
        need(all(x >= 0 for x in c.delays_s), "scan", "delays_s: must be >= 0")
        need(list(c.delays_s) == sorted(c.delays_s), "scan", "delays_s: must be increasing")
        need(all(v >= 0 for v in c.noise_amplitudes_v), "scan", "noise_amplitudes_v: must be >= 0")
        need(c.free_heating_seeds >= 2, "scan", "free_heating_seeds: must be >= 2")
        need(c.free_heating_duration > 0, "scan", "free_heating_duration: must be positive")
        self._validate_scenario(need)
        if errs:
            raise ConfigError(errs)
        # the module invariants proper
        try:
            self.model()
        except ValueError as exc:
            errs.append(f"[oscillator/cooling/drive] {exc}")
        if o.exposure > 0:
            try:
                self.optics_config()
            except ValueError as exc:
                errs.append(f"[optics] {exc}")
        if errs:
            raise ConfigError(errs)
        return self

    def _validate_scenario(self, need):
        c, sid = self.scan, self.scenario
        imaging = sid in ("fig2-profiles", "fig4-ringdown", "fig5-electrostatic")
        if imaging or (sid == "fig3-resonance"):
            need(self.optics.exposure > 0, "optics", f"exposure: {sid} needs imaging")
        if sid == "fig2-profiles":
            need(self.sim.duration > 0, "sim", "duration: fig2-profiles needs the thermal exposure time")
            need(len(c.thermal_frequencies_hz) >= 1 and all(f > 0 for f in c.thermal_frequencies_hz),
                 "scan", "thermal_frequencies_hz: need at least one positive frequency")
            need(self.drive.force_neV_um > 0, "drive", "force_neV_um: fig2-profiles needs a drive")
        elif sid == "fig3-resonance":
            need(len(c.detunings_hz) >= 5, "scan", "detunings_hz: need at least five points")
            need(self.drive.force_neV_um > 0, "drive", "force_neV_um: fig3-resonance needs a drive")
            need(self.cooling.enabled, "cooling", "enabled: resonance scans need cooling")
        elif sid == "fig4-ringdown":
            need(len(c.delays_s) >= 2, "scan", "delays_s: need at least two delays")
            need(c.initial_amplitude_m > 0, "scan", "initial_amplitude_m: must be positive")
            need(self.cooling.enabled, "cooling", "enabled: ring-down needs cooling")
        elif sid == "fig5-electrostatic":
            need(len(c.potentials_v) >= 2, "scan", "potentials_v: need at least two potentials")
            need(c.force_per_volt_neV_um > 0, "scan", "force_per_volt_neV_um: must be positive")
        elif sid == "doppler-floor":
            need(self.sim.duration > 0, "sim", "duration: must be positive")
            need(self.cooling.enabled, "cooling", "enabled: the Doppler floor needs cooling")
        elif sid == "heating-scan":
            need(len(set(c.noise_amplitudes_v)) >= 3, "scan",
                 "noise_amplitudes_v: need at least three distinct amplitudes")
            need(self.drive.noise_coupling > 0, "drive", "noise_coupling: must be positive")
            need(self.sim.duration > 0, "sim", "duration: must be positive")
            need(self.cooling.enabled, "cooling", "enabled: the temperature scan needs cooling")


# ---- defaults per scenario ------------------------------------------------------

def default_config(scenario: str = "custom") -> ScenarioConfig:
    """Defaults reproducing one figure or check; ``custom`` does nothing."""
    if scenario not in SCENARIOS:
        raise ConfigError([f"[scenario] id: unknown scenario {scenario!r}, "
                           f"expected one of {', '.join(SCENARIOS)}"])
    base = ScenarioConfig(scenario=scenario, out=f"out/{scenario}")
    if scenario == "custom":
        return replace(base, optics=OpticsBlock(exposure=0.0))
    if scenario == "fig2-profiles":
        # force giving a 21 um steady amplitude on resonance
        m, w, g = CA40.mass, 2 * math.pi * 108e3, 87.6
        force = 2 * m * g * w * 21e-6 / NEV_PER_UM
        return replace(base,
                       drive=DriveBlock(force_neV_um=force),
                       optics=OpticsBlock(crop_rows=16, crop_cols=64, photon_rate=2e6),
                       sim=SimBlock(duration=1.0, record_stride=7),
                       scan=ScanBlock(thermal_frequencies_hz=(108e3, 202e3)))
    if scenario == "fig3-resonance":
        return replace(base,
                       oscillator=OscillatorBlock(frequency_hz=108.5e3),
                       drive=DriveBlock(force_neV_um=5.3, voltage_note="V2 ~ 125 uVpp"),
                       optics=OpticsBlock(crop_rows=16, crop_cols=48),
                       sim=SimBlock(record_stride=7),
                       scan=ScanBlock(detunings_hz=tuple(float(x) for x in
                                                         np.linspace(-150.0, 150.0, 15))))
    if scenario == "fig4-ringdown":
        return replace(base,
                       optics=OpticsBlock(crop_rows=16, crop_cols=96),
                       sim=SimBlock(record_stride=7),
                       scan=ScanBlock(delays_s=(0.0, 5e-3, 10e-3, 15e-3, 20e-3, 25e-3),
                                      cycles=200, initial_amplitude_m=50e-6))
    if scenario == "fig5-electrostatic":
        return replace(base,
                       trap=TrapBlock(mathieu_a=-0.0184),
                       oscillator=OscillatorBlock(frequency_hz=80e3),
                       optics=OpticsBlock(crop_rows=16, crop_cols=48, exposure=35.0,
                                          photon_rate=1e4),
                       scan=ScanBlock(potentials_v=(0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0)))
    if scenario == "doppler-floor":
        return replace(base, optics=OpticsBlock(exposure=0.0),
                       sim=SimBlock(duration=1.0, record_stride=10, n_seeds=100, burn_in=0.05))
    # heating-scan: coupling chosen so the smallest amplitude heats at 0.3 ueV/s
    v = (0.1, 0.5, 1.0, 1.5, 2.0)
    zeta = 0.3e-6 * 1.602176634e-19 / v[0] ** 2
    return replace(base, drive=DriveBlock(noise_coupling=zeta), optics=OpticsBlock(exposure=0.0),
                   sim=SimBlock(duration=0.5, record_stride=10, n_seeds=60, burn_in=0.05),
                   scan=ScanBlock(noise_amplitudes_v=v))


# ---- text form ------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_fmt(float(v)) for v in value)
    return str(value)


_BOOLS = {"true": True, "yes": True, "on": True, "1": True,
          "false": False, "no": False, "off": False, "0": False}


def _parse(text: str, typ, where: str):
    text = text.strip()
    try:
        if typ is bool:
            if text.lower() not in _BOOLS:
                raise ValueError
            return _BOOLS[text.lower()]
        if typ is int:
            return int(text, 0)
        if typ is float:
            val = float(text)
            if not math.isfinite(val):
                raise ValueError
            return val
        if typ is tuple:
            items = [t for t in (s.strip() for s in text.split(",")) if t]
            vals = tuple(float(t) for t in items)
            if not all(math.isfinite(v) for v in vals):
                raise ValueError
            return vals
        return text
    except ValueError:
        name = {bool: "a boolean", int: "an integer", float: "a finite number",
                tuple: "a comma-separated list of numbers"}.get(typ, "text")
        raise ConfigError([f"{where}: expected {name}, got {text!r}"]) from None


def dumps(cfg: ScenarioConfig) -> str:
    lines = ["[scenario]", f"id = {cfg.scenario}", f"seed = {cfg.seed}", f"out = {cfg.out}"]
    for section, cls in _SECTIONS.items():
        block = getattr(cfg, section)
        lines.append("")
        lines.append(f"[{section}]")
        for f in fields(cls):
            lines.append(f"{f.name} = {_fmt(getattr(block, f.name))}")
    return "\n".join(lines) + "\n"


def loads(text: str, validate: bool = True) -> ScenarioConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"]) from None
    errs = []
    if not parser.has_section("scenario") or not parser.has_option("scenario", "id"):
        raise ConfigError(["[scenario] id: missing"])
    sid = parser.get("scenario", "id").strip()
    cfg = default_config(sid)
    top = {}
    for key, raw in parser.items("scenario"):
        if key == "id":
            continue
        if key == "seed":
            try:
                top["seed"] = _parse(raw, int, "[scenario] seed")
            except ConfigError as exc:
                errs += exc.errors
        elif key == "out":
            top["out"] = raw.strip()
        else:
            errs.append(f"[scenario] {key}: unknown key")
    blocks = {}
    for section in parser.sections():
        if section == "scenario":
            continue
        cls = _SECTIONS.get(section)
        if cls is None:
            errs.append(f"[{section}]: unknown section")
            continue
        hints = get_type_hints(cls)
        known = {f.name for f in fields(cls)}
        changes = {}
        for key, raw in parser.items(section):
            if key not in known:
                errs.append(f"[{section}] {key}: unknown key")
                continue
            try:
                changes[key] = _parse(raw, hints[key], f"[{section}] {key}")
            except ConfigError as exc:
                errs += exc.errors
        blocks[section] = replace(getattr(cfg, section), **changes)
    if errs:
        raise ConfigError(errs)
    cfg = replace(cfg, **top, **blocks)
    return cfg.validate() if validate else cfg


def load(path, validate: bool = True) -> ScenarioConfig:
    return loads(Path(path).read_text(), validate=validate)


def dump(cfg: ScenarioConfig, path) -> Path:
    path = Path(path)
    path.write_text(dumps(cfg))
    return path
