"""Constants, unit conversions and secular-motion formulas for a single trapped ion.

Everything here is a pure function of its arguments. Frequencies are angular
(rad/s) unless a name ends in ``_hz``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

from scipy import constants as _sc

__all__ = [
    "PhysicalConstants",
    "CONSTANTS",
    "IonSpecies",
    "CA40",
    "TrapConfig",
    "CoolingParams",
    "UnstableTrapError",
    "secular_frequency",
    "two_ion_separation",
    "effective_pixel_size",
    "temperature_from_variance",
    "variance_from_temperature",
    "temperature_from_amplitude",
    "mean_phonon_number",
    "phonon_energy",
    "force_unit_convert",
    "NEV_PER_UM",
    "FORCE_UNITS",
]


@dataclass(frozen=True)
class PhysicalConstants:
    """CODATA values in SI units."""

    boltzmann: float = _sc.k
    reduced_planck: float = _sc.hbar
    vacuum_permittivity: float = _sc.epsilon_0
    elementary_charge: float = _sc.e
    electronvolt: float = _sc.eV
    atomic_mass: float = _sc.atomic_mass


CONSTANTS = PhysicalConstants()

#: 1 neV/um expressed in newtons.
NEV_PER_UM = 1e-9 * CONSTANTS.electronvolt / 1e-6


@dataclass(frozen=True)
class IonSpecies:
    mass: float
    charge: int = 1
    name: str = ""

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"mass must be positive, got {self.mass!r}")
        if int(self.charge) != self.charge or self.charge < 1:
            raise ValueError(f"charge must be an integer >= 1, got {self.charge!r}")

    @classmethod
    def from_amu(cls, mass_u: float, charge: int = 1, name: str = "") -> "IonSpecies":
        return cls(mass_u * CONSTANTS.atomic_mass, charge, name)

    @property
    def charge_coulomb(self) -> float:
        return self.charge * CONSTANTS.elementary_charge


# isotopic mass of 40Ca, not the nominal 40 u
CA40 = IonSpecies.from_amu(39.9626, 1, "40Ca+")


class UnstableTrapError(ValueError):
    """Raised when a + q^2/2 <= 0, i.e. no real secular frequency exists."""


@dataclass(frozen=True)
class TrapConfig:
    """RF trap drive and per-axis Mathieu parameters.

    ``mathieu_a`` and ``mathieu_q`` map axis name ("z", "r") to the
    dimensionless parameters. When ``geometry`` is given it is called as
    ``geometry(axis, rf_amplitude, dc_voltage, rf_angular_frequency)`` and
    must return ``(a, q)``; it overrides the stored values.
    """

    rf_angular_frequency: float
    mathieu_a: dict = field(default_factory=lambda: {"z": 0.0})
    mathieu_q: dict = field(default_factory=lambda: {"z": 0.0})
    rf_amplitude: float = 0.0
    dc_voltage: float = 0.0
    geometry: Optional[Callable[[str, float, float, float], tuple]] = None

    def __post_init__(self):
        if not self.rf_angular_frequency > 0:
            raise ValueError("rf_angular_frequency must be positive")

    def parameters(self, axis: str = "z") -> tuple[float, float]:
        if self.geometry is not None:
            a, q = self.geometry(axis, self.rf_amplitude, self.dc_voltage,
                                 self.rf_angular_frequency)
            return float(a), float(q)
        try:
            return float(self.mathieu_a.get(axis, 0.0)), float(self.mathieu_q[axis])
        except KeyError:
            raise KeyError(f"no Mathieu q configured for axis {axis!r}") from None

    def is_nominally_stable(self, axis: str = "z") -> bool:
        _, q = self.parameters(axis)
        return 0.0 < abs(q) < 0.908

    def adiabatic_warning(self, axis: str = "z") -> bool:
        """True when q exceeds 0.5 and the secular approximation gets rough."""
        _, q = self.parameters(axis)
        return abs(q) > 0.5


@dataclass(frozen=True)
class CoolingParams:
    """Doppler-cooling inputs. Linewidths are descriptive only."""

    damping_rate: float
    doppler_temperature: float
    linewidth_cooling: float = 2 * math.pi * 21.58e6
    linewidth_repump: float = 2 * math.pi * 1.35e6

    def __post_init__(self):
        if not self.damping_rate > 0:
            raise ValueError("damping_rate must be positive")
        if not self.doppler_temperature > 0:
            raise ValueError("doppler_temperature must be positive")


def secular_frequency(trap: TrapConfig, axis: str = "z") -> float:
    """Secular angular frequency (omega_RF/2) * sqrt(a + q^2/2)."""
    a, q = trap.parameters(axis)
    arg = a + 0.5 * q * q
    if arg <= 0:
        raise UnstableTrapError(
            f"axis {axis!r}: a + q^2/2 = {arg:.4g} <= 0, no confinement")
    return 0.5 * trap.rf_angular_frequency * math.sqrt(arg)


def two_ion_separation(species: IonSpecies, omega_z: float,
                       constants: PhysicalConstants = CONSTANTS) -> float:
    """Equilibrium distance of two identical ions in a harmonic well."""
    if not omega_z > 0:
        raise ValueError("omega_z must be positive")
    q = species.charge * constants.elementary_charge
    return (q * q / (2 * math.pi * constants.vacuum_permittivity
                     * species.mass * omega_z ** 2)) ** (1.0 / 3.0)


def effective_pixel_size(separation: float, pixel_distance: float) -> float:
    """Object-plane size of one pixel from a known separation seen on the sensor."""
    if not pixel_distance > 0:
        raise ValueError("pixel_distance must be positive")
    return separation / pixel_distance


def temperature_from_variance(species: IonSpecies, omega_z: float, variance: float,
                              constants: PhysicalConstants = CONSTANTS) -> float:
    if variance < 0:
        raise ValueError("variance must be non-negative")
    return species.mass * omega_z ** 2 * variance / constants.boltzmann


def variance_from_temperature(species: IonSpecies, omega_z: float, temperature: float,
                              constants: PhysicalConstants = CONSTANTS) -> float:
    if temperature < 0:
        raise ValueError("temperature must be non-negative")
    return constants.boltzmann * temperature / (species.mass * omega_z ** 2)


def temperature_from_amplitude(species: IonSpecies, omega_z: float, amplitude: float,
                               constants: PhysicalConstants = CONSTANTS) -> float:
    """Temperature assigned to a coherent oscillation, using <rho^2> = A^2/2."""
    return temperature_from_variance(species, omega_z, 0.5 * amplitude ** 2, constants)


def phonon_energy(omega_z: float, constants: PhysicalConstants = CONSTANTS) -> float:
    """hbar * omega in joules."""
    return constants.reduced_planck * omega_z


def mean_phonon_number(species: IonSpecies, omega_z: float, temperature: float,
                       constants: PhysicalConstants = CONSTANTS) -> float:
    """Classical occupation k_B T / (hbar omega), no zero-point term.

    ``species`` is accepted for signature symmetry with the other helpers;
    the occupation does not depend on mass.
    """
    if temperature < 0:
        raise ValueError("temperature must be non-negative")
    if not omega_z > 0:
        raise ValueError("omega_z must be positive")
    return constants.boltzmann * temperature / phonon_energy(omega_z, constants)


FORCE_UNITS = {
    "N": 1.0,
    "neV/um": NEV_PER_UM,
    "neV/µm": NEV_PER_UM,
    "eV/m": CONSTANTS.electronvolt,
}


def force_unit_convert(value, from_unit: str, to_unit: str):
    """Convert a force between N, neV/um and eV/m. Works on arrays too."""
    try:
        f = FORCE_UNITS[from_unit]
        t = FORCE_UNITS[to_unit]
    except KeyError as exc:
        raise ValueError(f"unknown force unit {exc.args[0]!r}; "
                         f"expected one of {sorted(set(FORCE_UNITS))}") from None
    if f == t:
        return value
    return value * f / t
