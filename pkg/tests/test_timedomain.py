"""Integration, settling, and demodulation tests against closed forms."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from hypercomb import (
    CircuitParams,
    DivergenceError,
    DriveSpec,
    StateVector,
    SteadySegment,
    Tone,
    demodulate,
    energy,
    integrate,
    linear_transfer,
    settle,
    transmission,
)
from hypercomb.timedomain import _base_angular_frequency, _detect_quasiperiodic

LINEAR = CircuitParams(gamma_x=0.01, omega_x=1.0, gamma_c=0.0, gamma_p=0.5,
                       eta=0.0)


def damped_cosine(t, gamma, omega0):
    """Free decay from (q, v) = (1, -gamma): exactly exp(-g t) cos(w_d t)."""
    w_d = math.sqrt(omega0 ** 2 - gamma ** 2)
    return np.exp(-gamma * t) * np.cos(w_d * t)


def test_free_decay_matches_closed_form():
    traj = integrate(LINEAR, DriveSpec.none(),
                     StateVector(q_x=1.0, v_x=-LINEAR.gamma_x),
                     t_end=100.0)
    ref = damped_cosine(traj.times, LINEAR.gamma_x, LINEAR.omega_x)
    assert np.max(np.abs(traj.signal("q_x") - ref)) < 1e-6


def test_free_decay_from_rest_has_sine_correction():
    # releasing from (1, 0) also excites the quadrature term (g/w_d) sin
    g, w0 = LINEAR.gamma_x, LINEAR.omega_x
    w_d = math.sqrt(w0 ** 2 - g ** 2)
    traj = integrate(LINEAR, DriveSpec.none(), StateVector(q_x=1.0),
                     t_end=100.0)
    t = traj.times
    ref = np.exp(-g * t) * (np.cos(w_d * t) + (g / w_d) * np.sin(w_d * t))
    assert np.max(np.abs(traj.signal("q_x") - ref)) < 1e-6


def test_zero_everything_stays_zero():
    traj = integrate(LINEAR, DriveSpec.none(), StateVector(), t_end=50.0)
    assert np.all(traj.states == 0.0)


def test_driven_resonance_matches_linear_transfer():
    drive = DriveSpec.single(0.05, 1.0)
    seg = settle(LINEAR, drive, criterion_tol=1e-9)
    assert seg.converged
    q_x, _ = linear_transfer(LINEAR, 1.0)
    ratio = transmission(seg, drive)
    assert abs(ratio - q_x) / abs(q_x) < 1e-5


def test_tolerance_validation():
    with pytest.raises(ValueError):
        integrate(LINEAR, DriveSpec.none(), t_end=1.0, rel_tol=0.5)
    with pytest.raises(ValueError):
        integrate(LINEAR, DriveSpec.none(), t_end=-1.0)


def test_divergence_raises_with_time():
    # gamma_c**2 > gamma_x * gamma_p makes the linear system anti-damped
    p = CircuitParams(gamma_x=0.001, omega_x=1.0, gamma_c=0.1, gamma_p=0.05,
                      eta=0.0)
    with pytest.raises(DivergenceError) as err:
        integrate(p, DriveSpec.none(), StateVector(q_x=1e-3), t_end=2000.0)
    assert err.value.time > 0.0
    assert err.value.trajectory is not None
    # the partial trajectory stays below the guard
    assert np.all(np.isfinite(err.value.trajectory.states))


def test_energy_never_increases_when_damped():
    # quadratic dissipation form is negative semidefinite precisely when
    # gamma_x * gamma_p >= gamma_c**2, so energy decays monotonically
    p = CircuitParams(gamma_x=0.05, omega_x=1.0, gamma_c=0.1, gamma_p=0.5,
                      eta=0.3)
    traj = integrate(p, DriveSpec.none(), StateVector(1.0, 0.5, 0.8),
                     t_end=200.0, rel_tol=1e-10, abs_tol=1e-12)
    h = np.array([energy(StateVector.from_array(s), p).total
                  for s in traj.states])
    assert np.all(np.diff(h) <= 1e-10 * h[0])


def test_energy_conserved_in_conservative_limit():
    p = CircuitParams(gamma_x=0.0, omega_x=1.3, gamma_c=0.0, gamma_p=0.5,
                      eta=0.0)
    traj = integrate(p, DriveSpec.none(), StateVector(1.0, 0.2, 0.0),
                     t_end=500.0, rel_tol=1e-10, abs_tol=1e-12)
    h = np.array([energy(StateVector.from_array(s), p).total
                  for s in traj.states])
    assert np.max(np.abs(h - h[0])) < 1e-7 * h[0]


def test_refining_tolerance_reduces_error():
    drive = DriveSpec.single(0.1, 0.97)
    ref = integrate(LINEAR, drive, t_end=200.0, rel_tol=1e-10, abs_tol=1e-13,
                    t_eval=np.array([200.0]))
    errors = []
    rel = 1e-4
    while rel > 2e-9:
        run = integrate(LINEAR, drive, t_end=200.0, rel_tol=rel,
                        abs_tol=1e-13, t_eval=np.array([200.0]))
        errors.append(np.linalg.norm(run.states[-1] - ref.states[-1]))
        rel /= 2.0
    errors = np.array(errors)
    # halving the tolerance never increases the error (small float slack)
    assert np.all(errors[1:] <= errors[:-1] * 1.0 + 1e-14)


def test_time_reversal_of_conservative_flow():
    p = CircuitParams(gamma_x=0.0, omega_x=1.0, gamma_c=0.0, gamma_p=0.5,
                      eta=0.0)
    s0 = StateVector(0.7, -0.4, 0.0)
    fwd = integrate(p, DriveSpec.none(), s0, t_end=50.0, rel_tol=1e-10,
                    abs_tol=1e-12, t_eval=np.array([50.0]))
    q, v, qp = fwd.states[-1]
    # reversing velocity replays the conservative flow backwards
    back = integrate(p, DriveSpec.none(), StateVector(q, -v, qp),
                     t_end=50.0, rel_tol=1e-10, abs_tol=1e-12,
                     t_eval=np.array([50.0]))
    qb, vb, qpb = back.states[-1]
    assert_allclose([qb, -vb, qpb], [s0.q_x, s0.v_x, s0.q_p], atol=1e-9)


# --- settle ---------------------------------------------------------------

def test_settle_requires_a_tone():
    with pytest.raises(ValueError, match="tone"):
        settle(LINEAR, DriveSpec.none())


def test_settle_zero_amplitude_tone_decays_to_zero():
    drive = DriveSpec.single(0.0, 1.0)
    seg = settle(LINEAR, drive, StateVector(q_x=0.5), criterion_tol=1e-6,
                 max_periods=2000)
    assert seg.converged
    assert np.max(np.abs(seg.states)) < 1e-4


def test_settle_timescale_tracks_relaxation_rate():
    seg = settle(LINEAR, DriveSpec.single(0.05, 1.0), criterion_tol=1e-4)
    # linear relaxation rate gamma_x: settling should take a few 1/gamma_x,
    # not saturate max_periods
    elapsed_time = seg.periods_elapsed * seg.base_period
    assert seg.converged
    assert elapsed_time < 10.0 / LINEAR.gamma_x


def test_settle_uniform_sampling_and_rate():
    drive = DriveSpec.single(0.05, 1.0)
    seg = settle(LINEAR, drive, criterion_tol=1e-8)
    steps = np.diff(seg.times)
    assert np.max(np.abs(steps - steps[0])) < 1e-9 * steps[0]
    assert seg.sample_rate > 10.0 * drive.tones[0].omega / (2 * math.pi)


def test_settle_commensurate_two_tone_base_period():
    drive = DriveSpec(tones=(Tone(0.02, 1.0), Tone(0.001, 1.02)))
    omega_base, ok = _base_angular_frequency(drive)
    assert ok
    assert_allclose(omega_base, 0.02, rtol=1e-9)


def test_settle_incommensurate_probe_flagged():
    drive = DriveSpec(tones=(Tone(0.02, 1.0), Tone(0.001, 2 ** 0.5)))
    omega_base, ok = _base_angular_frequency(drive)
    assert not ok
    assert omega_base == 1.0
    seg = settle(LINEAR, drive, max_periods=32, segment_periods=8)
    assert not seg.converged
    assert_allclose(seg.base_period, 2 * math.pi, rtol=1e-12)


# --- demodulate -----------------------------------------------------------

def synthetic_segment(x, dt):
    times = np.arange(x.size) * dt
    states = np.zeros((x.size, 3))
    states[:, 0] = x
    return SteadySegment(
        times=times, states=states, sample_rate=1.0 / dt,
        base_period=times[-1] + dt, n_periods=1, periods_elapsed=1,
        converged=True, residual=0.0, params=LINEAR,
        drive=DriveSpec.single(1.0, 1.0))


def test_demodulate_identity_tone():
    dt = 2 * math.pi / 64
    n = 64 * 32
    t = np.arange(n) * dt
    seg = synthetic_segment(np.cos(t), dt)
    env = demodulate(seg, 1.0)
    assert_allclose(env.u, np.ones_like(env.u), atol=1e-4)
    assert_allclose(env.v, np.zeros_like(env.v), atol=1e-4)


def test_demodulate_detuned_tone_rotates():
    dt = 2 * math.pi / 64
    n = 64 * 256
    t = np.arange(n) * dt
    delta = 1.0 / 128.0  # inside the default low-pass band
    # make the detuned tone whole-period so the circular filter sees no seam
    assert abs(delta * n * dt / (2 * math.pi) - round(delta * n * dt / (2 * math.pi))) < 1e-9
    seg = synthetic_segment(np.cos((1.0 + delta) * t), dt)
    env = demodulate(seg, 1.0)
    # cos((1+d)t) = cos(dt)cos(t) - sin(dt)sin(t): U + iV = exp(i d t) ... up
    # to the convention U cos + V sin, so U = cos(dt), V = -sin(dt)
    assert_allclose(env.magnitude, np.ones_like(env.u), atol=1e-3)
    assert_allclose(env.u, np.cos(delta * t), atol=1e-3)
    assert_allclose(env.v, -np.sin(delta * t), atol=1e-3)


def test_demodulate_reconstruction_residual():
    dt = 2 * math.pi / 64
    n = 64 * 64
    t = np.arange(n) * dt
    x = 0.8 * np.cos(1.015625 * t + 0.3)  # in-band, whole-period
    seg = synthetic_segment(x, dt)
    env = demodulate(seg, 1.0)
    rebuilt = env.u * np.cos(t) + env.v * np.sin(t)
    assert float(np.mean((rebuilt - x) ** 2)) < 1e-4 * float(np.mean(x ** 2))


def test_demodulate_validates_frequencies():
    dt = 2 * math.pi / 64
    seg = synthetic_segment(np.zeros(4096), dt)
    with pytest.raises(ValueError):
        demodulate(seg, -1.0)
    with pytest.raises(ValueError):
        demodulate(seg, 1.0, lp_cutoff=0.9)
    with pytest.raises(ValueError):
        demodulate(seg, 100.0)  # beyond Nyquist


def test_quasiperiodic_detector_on_beating_envelope():
    dt = 2 * math.pi / 64
    n = 64 * 400
    t = np.arange(n) * dt
    x = (1.0 + 0.4 * np.cos(0.02 * t)) * np.cos(t)
    flag, period = _detect_quasiperiodic(x, dt, 1.0)
    assert flag
    assert_allclose(period, 2 * math.pi / 0.02, rtol=0.05)


def test_quasiperiodic_detector_constant_envelope():
    dt = 2 * math.pi / 64
    n = 64 * 100
    t = np.arange(n) * dt
    flag, _ = _detect_quasiperiodic(np.cos(t), dt, 1.0)
    assert not flag


def test_integer_initial_state_matches_float_initial_state():
    # regression: an integer-built StateVector once reached the compiled
    # stepper as an int array, freezing the state at its starting value
    p = CircuitParams(gamma_x=0.125, omega_x=1.0, gamma_c=0.12,
                      gamma_p=0.12, eta=0.8)
    drive = DriveSpec.single(0.6, 2.04)
    t_eval = np.linspace(40.0, 50.0, 200)
    r_int = integrate(p, drive, StateVector(0, 0, 0), t_end=50.0,
                      t_eval=t_eval)
    r_flt = integrate(p, drive, StateVector(0.0, 0.0, 0.0), t_end=50.0,
                      t_eval=t_eval)
    assert np.array_equal(r_int.states, r_flt.states)
    # the driven branch charge must actually move
    assert np.max(np.abs(r_int.states[:, 2])) > 0.5
