import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ionprobe import dynamics
from ionprobe.dynamics import (DriveSignal, IntegrationError, OscillatorModel, SimConfig,
                               SteadyStateError, Trajectory, driven_steady_state,
                               heat_without_cooling_ensemble, integrate, integrate_ensemble,
                               mechanical_energy, ring_down, static_displacement,
                               steady_state_amplitude, steady_state_amplitude_numeric,
                               steady_state_amplitudes_numeric, steady_temperature,
                               thermal_sigma, variance_growth_slope)
from ionprobe.fitting import envelope_decay_rate, ensemble_temperature, fit_variance_growth
from ionprobe.physics import CA40, NEV_PER_UM

W0 = 2 * math.pi * 108e3


def model(**kw):
    kw.setdefault("omega_z", W0)
    return OscillatorModel(**kw)


def oracle_amplitude(force, mass, gamma, w0, wd):
    # modulus of the complex response of x'' + 2g x' + w0^2 x = (F/m) e^{i wd t}
    return abs(force / mass / (w0 ** 2 - wd ** 2 + 2j * gamma * wd))


def test_undamped_oscillation_keeps_phase_and_amplitude():
    m = model(gamma_z=0.0, cooling_on=False)
    sim = SimConfig.for_model(m, 200 * 2 * math.pi / W0, initial_position=1e-6, record_stride=50)
    tr = integrate(m, sim)
    # RK4 at 50 steps per period loses ~1.4e-6 of the amplitude per period
    np.testing.assert_allclose(tr.positions, 1e-6 * np.cos(W0 * tr.times), atol=4e-10)


def _free_decay_error(steps_per_period):
    g = 500.0
    m = model(gamma_z=g)
    sim = SimConfig.for_model(m, 5e-3, steps_per_period, initial_position=1e-5,
                              record_stride=steps_per_period // 5)
    tr = integrate(m, sim)
    wd = math.sqrt(W0 ** 2 - g ** 2)
    t = tr.times
    exact = 1e-5 * np.exp(-g * t) * (np.cos(wd * t) + g / wd * np.sin(wd * t))
    return np.max(np.abs(tr.positions - exact))


def test_free_damped_decay_matches_closed_form():
    coarse, fine = _free_decay_error(50), _free_decay_error(100)
    assert coarse < 2e-3 * 1e-5
    # fourth-order convergence
    assert 12 < coarse / fine < 20


@settings(max_examples=40, deadline=None)
@given(st.floats(-2000.0, 2000.0), st.floats(10.0, 500.0), st.floats(0.1, 10.0))
def test_closed_form_amplitude_matches_transfer_function(det_hz, gamma, f_nev):
    wd = W0 + 2 * math.pi * det_hz
    m = model(gamma_z=gamma, drive=DriveSignal(f_nev * NEV_PER_UM, wd))
    assert steady_state_amplitude(m) == pytest.approx(
        oracle_amplitude(f_nev * NEV_PER_UM, CA40.mass, gamma, W0, wd), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(-3000.0, 3000.0))
def test_amplitude_peaks_at_damped_resonance(det_hz):
    g = 87.6
    m = model(gamma_z=g, drive=DriveSignal(5.3 * NEV_PER_UM, W0))
    w_peak = math.sqrt(W0 ** 2 - 2 * g ** 2)
    peak = steady_state_amplitude(m.with_drive(angular_frequency=w_peak))
    other = steady_state_amplitude(m.with_drive(angular_frequency=W0 + 2 * math.pi * det_hz))
    assert other <= peak * (1 + 1e-12)


def test_resonant_amplitude_value():
    m = model(drive=DriveSignal(5.3 * NEV_PER_UM, W0))
    assert steady_state_amplitude(m) == pytest.approx(
        5.3 * 1.602176634e-22 / (2 * CA40.mass * 87.6 * W0), rel=1e-9)


def test_closed_form_needs_harmonic_model():
    with pytest.raises(ValueError):
        steady_state_amplitude(model(alpha=1e12, drive=DriveSignal(1e-22, W0)))
    with pytest.raises(ZeroDivisionError):
        steady_state_amplitude(model(gamma_z=0.0, cooling_on=False, drive=DriveSignal(1e-22, W0)))


def test_numeric_steady_state_agrees_with_closed_form():
    m = model(drive=DriveSignal(5.3 * NEV_PER_UM, W0))
    wd = W0 + 2 * math.pi * np.array([-100.0, -20.0, 0.0, 15.0, 80.0])
    num = steady_state_amplitudes_numeric(m, wd)
    exact = [oracle_amplitude(5.3 * NEV_PER_UM, CA40.mass, 87.6, W0, w) for w in wd]
    np.testing.assert_allclose(num, exact, rtol=1e-3)
    assert steady_state_amplitude_numeric(m) == pytest.approx(exact[2], rel=1e-3)


def test_hardening_cubic_term_tilts_resonance_upward():
    f = 20 * NEV_PER_UM
    base = model(drive=DriveSignal(f, W0))
    amp = steady_state_amplitude(base)
    # frequency pull 3 alpha A^2 / (8 omega) of a few linewidths
    alpha = 4 * 87.6 * 8 * W0 / (3 * amp ** 2)
    hard = base.replace(alpha=alpha)
    det = 2 * math.pi * np.array([-150.0, 150.0])
    lo, hi = steady_state_amplitudes_numeric(hard, W0 + det)
    lo0, hi0 = steady_state_amplitudes_numeric(base, W0 + det)
    assert hi > hi0 and lo < lo0


def test_steady_state_error_when_transient_not_settled():
    m = model(drive=DriveSignal(5.3 * NEV_PER_UM, W0 + 2 * math.pi * 30))
    with pytest.raises(SteadyStateError):
        steady_state_amplitudes_numeric(m, [m.drive.angular_frequency], transient_factor=0.05)


def test_driven_steady_state_is_stationary():
    m = model(drive=DriveSignal(5.3 * NEV_PER_UM, W0 + 2 * math.pi * 40, phase=0.3))
    x0, v0 = driven_steady_state(m)
    sim = SimConfig.for_model(m, 2e-3, 200, initial_position=x0, initial_velocity=v0)
    tr = integrate(m, sim)
    t_end = tr.times[-1]
    x1, v1 = driven_steady_state(m, t_end)
    a = steady_state_amplitude(m)
    # RK4 phase drift over ~200 periods at 200 steps per period is ~1e-5 rad
    assert tr.positions[-1] == pytest.approx(x1, abs=3e-5 * a)
    assert tr.velocities[-1] == pytest.approx(v1, abs=3e-5 * a * W0)


def test_dc_force_shifts_the_mean():
    f = 42 * NEV_PER_UM
    m = model(drive=DriveSignal(dc_force=f))
    tr = integrate(m, SimConfig.for_model(m, 0.16))
    assert static_displacement(m) == pytest.approx(f / (CA40.mass * W0 ** 2), rel=1e-12)
    assert tr.positions[-1] == pytest.approx(static_displacement(m), rel=1e-4)


def test_same_seed_same_bits_and_chunking_invariance(monkeypatch):
    m = model(doppler_temperature=0.01)
    sim = SimConfig.for_model(m, 2e-3, rng_seed=11, record_stride=3)
    a = integrate(m, sim)
    b = integrate(m, sim)
    assert np.array_equal(a.positions, b.positions)
    ens = integrate_ensemble(m, sim, [5, 11, 17])
    assert np.array_equal(ens.positions[1], a.positions)
    monkeypatch.setattr(dynamics, "_CHUNK_DRAWS", 90)
    small = integrate_ensemble(m, sim, [5, 11, 17])
    assert np.array_equal(small.positions, ens.positions)
    assert np.array_equal(small.velocities, ens.velocities)
    assert not np.array_equal(ens.positions[0], ens.positions[2])


def test_record_stride_subsamples():
    m = model(doppler_temperature=0.01)
    full = integrate(m, SimConfig.for_model(m, 1e-3, rng_seed=3))
    sub = integrate(m, SimConfig.for_model(m, 1e-3, rng_seed=3, record_stride=4))
    assert np.array_equal(sub.positions, full.positions[::4][:len(sub)])
    assert sub.times[1] == pytest.approx(4 * full.times[1])


def test_equipartition_short_ensemble():
    m = model(doppler_temperature=0.01)
    sim = SimConfig.for_model(m, 0.3, record_stride=20)
    ens = integrate_ensemble(m, sim, range(16), initial_positions=0.0)
    tk = ensemble_temperature(ens, burn_in=0.05)
    tp = ensemble_temperature(ens, burn_in=0.05, use="position")
    assert tk.value == pytest.approx(0.01, rel=0.15)
    assert tp.value == pytest.approx(tk.value, rel=0.1)
    assert thermal_sigma(m) == pytest.approx(2.1e-6, rel=0.02)


def test_noise_raises_the_cooled_temperature():
    m = model(doppler_temperature=0.01, drive=DriveSignal(noise_amplitude=1.0,
                                                          noise_coupling=1.21e-23))
    assert steady_temperature(m) == pytest.approx(0.01 + 1.21e-23 / (87.6 * 1.380649e-23))
    ens = integrate_ensemble(m, SimConfig.for_model(m, 0.3, record_stride=20), range(16))
    assert ensemble_temperature(ens, burn_in=0.05).value == pytest.approx(
        steady_temperature(m), rel=0.15)


def test_variance_grows_linearly_without_cooling():
    m = model(drive=DriveSignal(noise_amplitude=2.0, noise_coupling=4.8e-24))
    ens = heat_without_cooling_ensemble(m, SimConfig.for_model(m, 0.02, record_stride=100),
                                        range(400))
    slope = fit_variance_growth(ens.times, ens.positions)
    assert slope.value == pytest.approx(variance_growth_slope(m), rel=0.2)
    # energy input rate 2 zeta V^2
    e = mechanical_energy(ens).mean(axis=0)
    rate = np.polyfit(ens.times, e, 1)[0]
    assert rate == pytest.approx(m.drive.injected_power, rel=0.2)


def test_ring_down_envelope():
    m = model(drive=DriveSignal(5.3 * NEV_PER_UM, W0))
    tr = ring_down(m, 50e-6, SimConfig.for_model(m, 0.03, 200, record_stride=20))
    assert tr.positions[0] == 50e-6
    rate = envelope_decay_rate(tr.times, tr.positions, tr.velocities, W0)
    assert rate.value == pytest.approx(87.6, rel=1e-4)
    # at the default 50 steps per period RK4 adds ~0.15 1/s of numerical damping
    tr = ring_down(m, 50e-6, SimConfig.for_model(m, 0.03, record_stride=5))
    rate = envelope_decay_rate(tr.times, tr.positions, tr.velocities, W0)
    assert rate.value == pytest.approx(87.6, rel=3e-3)
    with pytest.raises(ValueError):
        ring_down(m.replace(cooling_on=False, gamma_z=0.0), 1e-6, SimConfig.for_model(m, 1e-3))


def test_blow_up_is_reported():
    m = model(alpha=-1e30)
    sim = SimConfig.for_model(m, 1e-3, initial_position=1e-3)
    with pytest.raises(IntegrationError, match="non-finite"):
        integrate(m, sim)


def test_step_size_limit():
    m = model()
    with pytest.raises(ValueError, match="accuracy limit"):
        integrate(m, SimConfig(dt=2 * math.pi / (10 * W0), duration=1e-4))


def test_model_validation():
    with pytest.raises(ValueError):
        OscillatorModel(omega_z=-1.0)
    with pytest.raises(ValueError):
        OscillatorModel(gamma_z=0.0)
    with pytest.raises(ValueError):
        DriveSignal(force_amplitude=-1.0)
    with pytest.raises(ValueError):
        SimConfig(dt=0.0, duration=1.0)
    with pytest.raises(ValueError):
        SimConfig(dt=1e-7, duration=1.0, record_stride=0)
    with pytest.warns(RuntimeWarning, match="underdamped"):
        OscillatorModel(omega_z=1000.0, gamma_z=500.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        OscillatorModel()


def test_trajectory_csv_round_trip(tmp_path):
    m = model(doppler_temperature=0.01)
    tr = integrate(m, SimConfig.for_model(m, 2e-4, rng_seed=9))
    p = tr.to_csv(tmp_path / "t.csv")
    assert p.read_text().splitlines()[0] == "t_s,rho_m,v_mps"
    t, x, v = Trajectory.read_csv(p)
    assert np.array_equal(x, tr.positions) and np.array_equal(v, tr.velocities)
    assert np.array_equal(t, tr.times)
