"""Axial motion of a laser-cooled ion: damped, driven, optionally anharmonic,
optionally heated by white noise.

The equation of motion integrated here is

    rho'' = -2 gamma rho' - omega^2 rho - alpha rho^3
            + (F_e/m) cos(omega_dip t + phase) + F_dc/m + kicks

with a fixed-step RK4 core and an additive Gaussian velocity kick at the end
of every step. The kick variance per step is

    (4 gamma k_B T_D / m + 4 zeta V_noise^2 / m) * dt

so the cooled, undriven ion settles at k_B T_D = m <v^2>, and without cooling
the mean energy grows at 2 zeta V_noise^2 J/s, which is what makes the steady
temperature equal T_D + zeta V^2 / (gamma k_B) and the position variance grow
as 2 zeta V^2 t / (m omega^2).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import _kernels
from .physics import CA40, CONSTANTS, IonSpecies

__all__ = [
    "DriveSignal",
    "OscillatorModel",
    "SimConfig",
    "Trajectory",
    "Ensemble",
    "IntegrationError",
    "SteadyStateError",
    "integrate",
    "integrate_ensemble",
    "steady_state_amplitude",
    "steady_state_amplitude_numeric",
    "steady_state_amplitudes_numeric",
    "ring_down",
    "ring_down_ensemble",
    "heat_without_cooling",
    "heat_without_cooling_ensemble",
    "static_displacement",
    "driven_steady_state",
    "thermal_sigma",
    "variance_growth_slope",
    "steady_temperature",
    "instantaneous_amplitude",
    "mechanical_energy",
    "set_jobs",
]

# Noise draws per chunk, bounds memory for large ensembles.
_CHUNK_DRAWS = 1 << 21


class IntegrationError(RuntimeError):
    pass


class SteadyStateError(RuntimeError):
    pass


@dataclass(frozen=True)
class DriveSignal:
    """External forcing. Forces in newtons, noise amplitude in volts."""

    force_amplitude: float = 0.0
    angular_frequency: float = 0.0
    phase: float = 0.0
    dc_force: float = 0.0
    noise_amplitude: float = 0.0
    noise_coupling: float = 0.0

    def __post_init__(self):
        for name in ("force_amplitude", "noise_amplitude", "noise_coupling"):
            val = getattr(self, name)
            if not val >= 0:
                raise ValueError(f"{name} must be >= 0, got {val!r}")
        if self.angular_frequency < 0:
            raise ValueError("angular_frequency must be >= 0")

    @property
    def heating_rate(self) -> float:
        """zeta * V_noise^2 in J/s."""
        return self.noise_coupling * self.noise_amplitude ** 2

    @property
    def injected_power(self) -> float:
        """Mean energy input of the noise drive, 2 zeta V^2 (J/s)."""
        return 2.0 * self.heating_rate


@dataclass(frozen=True)
class OscillatorModel:
    species: IonSpecies = CA40
    omega_z: float = 2 * math.pi * 108e3
    gamma_z: float = 87.6
    alpha: float = 0.0
    drive: DriveSignal = field(default_factory=DriveSignal)
    cooling_on: bool = True
    doppler_temperature: float = 0.0

    def __post_init__(self):
        if not self.omega_z > 0:
            raise ValueError("omega_z must be positive")
        if self.gamma_z < 0:
            raise ValueError("gamma_z must be >= 0")
        if self.gamma_z == 0 and self.cooling_on:
            raise ValueError("gamma_z = 0 requires cooling_on=False")
        if self.doppler_temperature < 0:
            raise ValueError("doppler_temperature must be >= 0")
        if self.gamma_z > self.omega_z / 10:
            warnings.warn(f"gamma_z={self.gamma_z:g} is not << omega_z; "
                          "the underdamped treatment is questionable",
                          RuntimeWarning, stacklevel=3)

    @property
    def mass(self) -> float:
        return self.species.mass

    @property
    def damping(self) -> float:
        """Damping actually applied: zero while the lasers are off."""
        return self.gamma_z if self.cooling_on else 0.0

    def kick_variance_rate(self) -> float:
        """Velocity diffusion, variance of the kick per unit time (m^2/s^3)."""
        rate = 4.0 * self.drive.heating_rate / self.mass
        if self.cooling_on:
            rate += (4.0 * self.gamma_z * CONSTANTS.boltzmann
                     * self.doppler_temperature / self.mass)
        return rate

    def with_drive(self, **changes) -> "OscillatorModel":
        return replace(self, drive=replace(self.drive, **changes))

    def replace(self, **changes) -> "OscillatorModel":
        return replace(self, **changes)


@dataclass(frozen=True)
class SimConfig:
    dt: float
    duration: float
    rng_seed: int = 0
    initial_position: float = 0.0
    initial_velocity: float = 0.0
    record_stride: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ValueError("record_stride must be an integer >= 1")
        if not 0 <= int(self.rng_seed) < 2 ** 64:
            raise ValueError("rng_seed must fit in an unsigned 64-bit integer")

    @classmethod
    def for_model(cls, model: OscillatorModel, duration: float,
                  steps_per_period: int = 50, **kw) -> "SimConfig":
        """Largest step that still resolves the trap period with ``steps_per_period`` steps."""
        return cls(dt=2 * math.pi / (steps_per_period * model.omega_z),
                   duration=duration, **kw)

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def n_records(self) -> int:
        return self.n_steps // self.record_stride + 1

    def check_step(self, model: OscillatorModel) -> None:
        limit = 2 * math.pi / (50 * model.omega_z)
        if self.dt > limit * (1 + 1e-9):
            raise ValueError(f"dt={self.dt:.4g} s exceeds the accuracy limit "
                             f"2*pi/(50*omega_z)={limit:.4g} s")


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    seed: int
    model: OscillatorModel
    sim: SimConfig

    def __len__(self):
        return len(self.times)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_s", "rho_m", "v_mps"])
            for t, x, v in zip(self.times, self.positions, self.velocities):
                w.writerow([f"{t:.17g}", f"{x:.17g}", f"{v:.17g}"])
        return path

    @staticmethod
    def read_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return data[:, 0], data[:, 1], data[:, 2]


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Trajectories of many seeds sharing one model and step size.

    ``positions`` and ``velocities`` have shape (n_seeds, n_records).
    """

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    seeds: tuple
    model: OscillatorModel
    sim: SimConfig

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(self.times, self.positions[i], self.velocities[i],
                          self.seeds[i], self.model, replace(self.sim, rng_seed=self.seeds[i]))


def set_jobs(n: Optional[int]) -> int:
    """Number of worker threads used by ensemble kernels; returns the value in effect."""
    import numba

    if n is not None:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
    return numba.get_num_threads()


def integrate_ensemble(model: OscillatorModel, sim: SimConfig,
                       seeds: Optional[Iterable[int]] = None,
                       initial_positions=None, initial_velocities=None) -> Ensemble:
    """Integrate one trajectory per seed.

    Each seed owns an independent generator, so a member is bit-identical to
    ``integrate`` with the same seed regardless of ensemble size or chunking.
    """
    sim.check_step(model)
    seeds = (sim.rng_seed,) if seeds is None else tuple(int(s) for s in seeds)
    nb = len(seeds)
    if nb == 0:
        raise ValueError("at least one seed is required")
    x = np.full(nb, float(sim.initial_position))
    v = np.full(nb, float(sim.initial_velocity))
    if initial_positions is not None:
        x[:] = initial_positions
    if initial_velocities is not None:
        v[:] = initial_velocities

    m = model.mass
    drive = model.drive
    kick_sigma = math.sqrt(model.kick_variance_rate() * sim.dt)
    stride = int(sim.record_stride)
    n_steps = sim.n_steps
    n_rec = sim.n_records
    rec_x = np.empty((nb, n_rec))
    rec_v = np.empty((nb, n_rec))
    rec_x[:, 0] = x
    rec_v[:, 0] = v
    rngs = [np.random.default_rng(s) for s in seeds]

    # chunks are whole multiples of the stride so record slots line up
    chunk = max(stride, (_CHUNK_DRAWS // nb) // stride * stride)
    args = (sim.dt, model.damping, model.omega_z ** 2, model.alpha,
            drive.force_amplitude / m, drive.angular_frequency, drive.phase,
            drive.dc_force / m, kick_sigma)
    empty = np.empty((nb, 0))
    step = 0
    rec = 1
    while step < n_steps:
        k = min(chunk, n_steps - step)
        if kick_sigma != 0.0:
            noise = np.empty((nb, k))
            for i, rng in enumerate(rngs):
                noise[i] = rng.standard_normal(k)
        else:
            noise = empty
        _kernels.advance_batch(x, v, step, k, *args, noise, stride, rec_x, rec_v, rec)
        rec += (step + k) // stride - step // stride
        step += k
        bad = ~(np.isfinite(x) & np.isfinite(v))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise IntegrationError(
                f"non-finite state at t={step * sim.dt:.6g} s for seed {seeds[i]} "
                f"(x={x[i]!r}, v={v[i]!r}); check alpha, forces and dt")
    times = np.arange(n_rec) * (sim.dt * stride)
    return Ensemble(times, rec_x, rec_v, seeds, model, sim)


def integrate(model: OscillatorModel, sim: SimConfig) -> Trajectory:
    """Integrate a single trajectory seeded by ``sim.rng_seed``."""
    return integrate_ensemble(model, sim).trajectory(0)


def steady_state_amplitude(model: OscillatorModel) -> float:
    """Closed-form steady amplitude of the harmonic driven oscillator."""
    if model.alpha != 0:
        raise ValueError("closed form requires alpha = 0; "
                         "use steady_state_amplitude_numeric")
    g = model.damping
    wd = model.drive.angular_frequency
    w0 = model.omega_z
    denom = math.hypot(2 * g * wd, w0 * w0 - wd * wd)
    if denom == 0:
        raise ZeroDivisionError("undamped oscillator driven exactly on resonance")
    return model.drive.force_amplitude / model.mass / denom


def steady_state_amplitudes_numeric(model: OscillatorModel, drive_frequencies,
                                    transient_factor: float = 10.0,
                                    window_periods: int = 20,
                                    steps_per_period: int = 100,
                                    drift_tolerance: float = 0.01) -> np.ndarray:
    """Numeric steady amplitudes for several drive frequencies at once.

    Integrates from rest for ``transient_factor / gamma`` and returns half the
    peak-to-peak of the following ``window_periods`` drive periods.
    """
    if not model.damping > 0:
        raise ValueError("numeric steady state needs gamma_z > 0 with cooling on")
    wd = np.atleast_1d(np.asarray(drive_frequencies, dtype=float))
    if np.any(wd <= 0):
        raise ValueError("drive frequencies must be positive")
    if model.drive.force_amplitude == 0 and model.drive.dc_force == 0:
        return np.zeros_like(wd)
    m = model.mass
    amp, drift = _kernels.steady_amplitudes(
        model.damping, model.omega_z ** 2, model.alpha, model.drive.force_amplitude / m,
        wd, model.drive.phase, model.drive.dc_force / m, int(steps_per_period),
        transient_factor / model.damping, int(window_periods))
    bad = drift > drift_tolerance * np.maximum(amp, 1e-300)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise SteadyStateError(
            f"amplitude drifted by {drift[i] / amp[i]:.2%} at omega_dip={wd[i]:.6g} rad/s; "
            "increase transient_factor")
    return amp


def steady_state_amplitude_numeric(model: OscillatorModel, **kw) -> float:
    """Numeric steady amplitude at the model's own drive frequency."""
    return float(steady_state_amplitudes_numeric(
        model, [model.drive.angular_frequency], **kw)[0])


def ring_down(model: OscillatorModel, initial_amplitude: float, sim: SimConfig) -> Trajectory:
    """Free decay from (initial_amplitude, 0) with the drive switched off and lasers on."""
    return ring_down_ensemble(model, initial_amplitude, sim, [sim.rng_seed]).trajectory(0)


def ring_down_ensemble(model: OscillatorModel, initial_amplitude: float, sim: SimConfig,
                       seeds: Sequence[int]) -> Ensemble:
    if not model.cooling_on:
        raise ValueError("ring-down requires cooling_on=True")
    free = model.with_drive(force_amplitude=0.0)
    return integrate_ensemble(free, replace(sim, initial_position=initial_amplitude,
                                            initial_velocity=0.0), seeds)


def heat_without_cooling(model: OscillatorModel, sim: SimConfig) -> Trajectory:
    return heat_without_cooling_ensemble(model, sim, [sim.rng_seed]).trajectory(0)


def heat_without_cooling_ensemble(model: OscillatorModel, sim: SimConfig,
                                  seeds: Sequence[int]) -> Ensemble:
    """Lasers off: no damping, no Doppler kicks, only the applied noise heats."""
    return integrate_ensemble(model.replace(cooling_on=False), sim, seeds)


def driven_steady_state(model: OscillatorModel, t: float = 0.0) -> tuple[float, float]:
    """Position and velocity of the harmonic steady-state response at time t."""
    d = model.drive
    wd = d.angular_frequency
    amp = steady_state_amplitude(model)
    lag = math.atan2(2 * model.damping * wd, model.omega_z ** 2 - wd ** 2)
    arg = wd * t + d.phase - lag
    x = amp * math.cos(arg) + static_displacement(model)
    return x, -amp * wd * math.sin(arg)


def static_displacement(model: OscillatorModel) -> float:
    """Equilibrium shift under the DC force, F_dc / (m omega^2)."""
    return model.drive.dc_force / (model.mass * model.omega_z ** 2)


def thermal_sigma(model: OscillatorModel, temperature: Optional[float] = None) -> float:
    t = model.doppler_temperature if temperature is None else temperature
    return math.sqrt(CONSTANTS.boltzmann * t / (model.mass * model.omega_z ** 2))


def variance_growth_slope(model: OscillatorModel) -> float:
    """d<rho^2>/dt without cooling: 2 zeta V^2 / (m omega^2)."""
    return model.drive.injected_power / (model.mass * model.omega_z ** 2)


def steady_temperature(model: OscillatorModel) -> float:
    """T_D + zeta V^2 / (gamma k_B), the cooled equilibrium with noise heating."""
    if not model.cooling_on or model.gamma_z <= 0:
        raise ValueError("steady temperature needs active cooling")
    return (model.doppler_temperature
            + model.drive.heating_rate / (model.gamma_z * CONSTANTS.boltzmann))


def instantaneous_amplitude(positions, velocities, omega_z: float) -> np.ndarray:
    """sqrt(rho^2 + (v/omega)^2), the envelope of a harmonic oscillation."""
    positions = np.asarray(positions)
    velocities = np.asarray(velocities)
    return np.sqrt(positions ** 2 + (velocities / omega_z) ** 2)


def mechanical_energy(traj, omega_z: Optional[float] = None) -> np.ndarray:
    """0.5 m v^2 + 0.5 m omega^2 rho^2 along a trajectory or ensemble."""
    w = traj.model.omega_z if omega_z is None else omega_z
    m = traj.model.mass
    return 0.5 * m * (traj.velocities ** 2 + (w * traj.positions) ** 2)
