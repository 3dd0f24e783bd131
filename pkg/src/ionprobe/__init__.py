"""Simulation and analysis toolkit for a laser-cooled trapped ion used as a force sensor.

Modules:

- ``physics``: constants, ion species, trap frequencies, temperature conversions
- ``dynamics``: Langevin integration of the axial motion
- ``imaging``: position densities, PSF convolution, synthetic camera frames
- ``fitting``: least-squares fits of profiles, resonances, heating and static forces
- ``config`` / ``scenarios`` / ``cli``: configuration files and the scenario runner
"""

from importlib import metadata as _metadata

try:
    __version__ = _metadata.version("artifact")
except _metadata.PackageNotFoundError:  # pragma: no cover - source checkout without install
    __version__ = "0.0.0"

from .physics import (CA40, CONSTANTS, NEV_PER_UM, IonSpecies, TrapConfig, CoolingParams,
                      UnstableTrapError, force_unit_convert, mean_phonon_number, phonon_energy,
                      secular_frequency, temperature_from_amplitude, temperature_from_variance,
                      two_ion_separation, variance_from_temperature)
from .dynamics import (DriveSignal, Ensemble, OscillatorModel, SimConfig, Trajectory,
                       heat_without_cooling, integrate, integrate_ensemble, ring_down,
                       steady_state_amplitude, steady_state_amplitude_numeric)
from .imaging import (AxialProfile, ImageFrame, OpticsConfig, convolve_psf,
                      position_pdf_driven, position_pdf_thermal, project_axial, render_frame,
                      triggered_sequence)
from .fitting import (FitError, FitResult, ResonanceDataset, fit_electrostatic, fit_heating,
                      fit_profile_driven, fit_profile_gaussian, fit_resonance,
                      fit_resonance_anharmonic, q_factor, snr_estimate)
from .config import ConfigError, ScenarioConfig, default_config
from .scenarios import RunManifest, compare_against_reference, run_scenario

__all__ = [name for name in dir() if not name.startswith("_")]
