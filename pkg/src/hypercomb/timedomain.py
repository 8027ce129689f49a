"""Time-domain integration, steady-state settling, and envelope demodulation.

``integrate`` produces a densely sampled transient.  ``settle`` integrates
period by period until the waveform repeats to a requested tolerance and
returns a uniformly sampled steady segment suitable for spectral analysis.
``demodulate`` mixes a steady signal down against a reference frequency and
low-pass filters to recover the slow quadrature envelopes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.signal import butter, filtfilt, freqz

from . import _kernels
from .circuit import CircuitParams, DriveSpec, StateVector

__all__ = [
    "DivergenceError",
    "Trajectory",
    "SteadySegment",
    "EnvelopeSeries",
    "integrate",
    "settle",
    "demodulate",
]


class DivergenceError(RuntimeError):
    """The state norm crossed the overflow guard during integration.

    Attributes
    ----------
    time:
        Integration time at which the guard tripped.
    trajectory:
        Partial output up to the failure, or None when nothing was sampled.
    """

    def __init__(self, message, time, trajectory=None):
        super().__init__(message)
        self.time = time
        self.trajectory = trajectory


@dataclass(frozen=True)
class Trajectory:
    """Sampled solution of the equations of motion."""

    times: np.ndarray
    states: np.ndarray
    params: CircuitParams
    drive: DriveSpec

    def __post_init__(self):
        if self.states.shape != (self.times.size, 3):
            raise ValueError("states must have shape (len(times), 3)")

    def signal(self, name: str) -> np.ndarray:
        """Return one state column by name ('q_x', 'v_x' or 'q_p')."""
        try:
            col = ("q_x", "v_x", "q_p").index(name)
        except ValueError:
            raise ValueError(f"unknown signal {name!r}; "
                             "expected 'q_x', 'v_x' or 'q_p'") from None
        return self.states[:, col]

    @property
    def final_state(self) -> StateVector:
        return StateVector.from_array(self.states[-1])


@dataclass(frozen=True)
class SteadySegment:
    """Uniformly sampled steady-state window of a driven response.

    The segment spans an integer number of base periods so that tone
    frequencies fall on exact Fourier bins.  ``residual`` is the final
    period-to-period RMS change relative to the segment RMS.
    """

    times: np.ndarray
    states: np.ndarray
    sample_rate: float
    base_period: float
    n_periods: int
    periods_elapsed: int
    converged: bool
    residual: float
    params: CircuitParams
    drive: DriveSpec
    quasi_periodic: bool = False
    envelope_period: float | None = None

    def signal(self, name: str) -> np.ndarray:
        try:
            col = ("q_x", "v_x", "q_p").index(name)
        except ValueError:
            raise ValueError(f"unknown signal {name!r}; "
                             "expected 'q_x', 'v_x' or 'q_p'") from None
        return self.states[:, col]

    @property
    def duration(self) -> float:
        return self.n_periods * self.base_period


@dataclass(frozen=True)
class EnvelopeSeries:
    """Slow quadrature envelopes of a signal against a reference frequency.

    The underlying signal is reconstructed (within the filter bandwidth) as
    ``u * cos(omega_ref * t) + v * sin(omega_ref * t)``.
    """

    times: np.ndarray
    u: np.ndarray
    v: np.ndarray
    omega_ref: float

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)

    @property
    def complex_envelope(self) -> np.ndarray:
        """Return ``w = u + i v``, defined so the carrier-band signal is
        ``Re[w exp(-i omega_ref t)]``."""
        return self.u + 1j * self.v


def _check_tolerances(rel_tol: float, abs_tol: float) -> None:
    if not (0.0 < rel_tol <= 1e-2):
        raise ValueError(f"rel_tol must lie in (0, 1e-2], got {rel_tol}")
    if not (0.0 < abs_tol <= 1e-2):
        raise ValueError(f"abs_tol must lie in (0, 1e-2], got {abs_tol}")


def _max_step(params: CircuitParams, drive: DriveSpec) -> float:
    omega = params.omega_x
    for tone in drive.tones:
        omega = max(omega, tone.omega)
    return (2.0 * math.pi / omega) / 6.0


def integrate(
    params: CircuitParams,
    drive: DriveSpec,
    state0: StateVector | None = None,
    *,
    t_end: float,
    t_eval: np.ndarray | None = None,
    rel_tol: float = 1e-8,
    abs_tol: float = 1e-10,
) -> Trajectory:
    """Integrate the equations of motion from t=0 to t_end.

    Samples are produced by dense-output interpolation at ``t_eval`` (default:
    2000 uniform instants).  Raises :class:`DivergenceError` when the state
    exceeds the overflow guard; the exception carries the blow-up time and
    the truncated trajectory sampled so far.
    """
    if state0 is None:
        state0 = StateVector()
    if not t_end > 0.0:
        raise ValueError(f"t_end must be positive, got {t_end}")
    _check_tolerances(rel_tol, abs_tol)
    if t_eval is None:
        t_eval = np.linspace(0.0, t_end, 2000)
    else:
        t_eval = np.asarray(t_eval, dtype=float)
        if t_eval.ndim != 1 or t_eval.size == 0:
            raise ValueError("t_eval must be a non-empty 1-d array")
        if np.any(np.diff(t_eval) < 0):
            raise ValueError("t_eval must be sorted ascending")
        if t_eval[0] < 0.0 or t_eval[-1] > t_end * (1 + 1e-12):
            raise ValueError("t_eval must lie within [0, t_end]")
    out, y_final, status, t_stop, _ = _kernels.integrate_adaptive(
        0, params.as_array(), drive.as_array(), state0.as_array(),
        0.0, float(t_end), rel_tol, abs_tol, t_eval,
        _max_step(params, drive),
    )
    if status != 0:
        filled = int(np.sum(np.all(np.isfinite(out), axis=1)))
        partial = Trajectory(t_eval[:filled], out[:filled], params, drive)
        reason = ("state norm exceeded overflow guard"
                  if status == 1 else "step size collapsed")
        raise DivergenceError(
            f"integration failed at t={t_stop:.6g}: {reason}",
            time=t_stop, trajectory=partial,
        )
    return Trajectory(t_eval, out, params, drive)


def _base_angular_frequency(drive: DriveSpec) -> tuple[float, bool]:
    """Greatest common angular frequency of the drive tones.

    Returns ``(omega_base, commensurate)``.  Tone ratios are approximated by
    small fractions; if no common period below 1000 first-tone periods exists
    the tones are treated as incommensurate and the first tone's frequency is
    returned.
    """
    if not drive.tones:
        raise ValueError("settle requires at least one drive tone to define "
                         "a base period")
    omegas = [tone.omega for tone in drive.tones]
    w0 = omegas[0]
    # express every tone as w0 * n_i / denom over one common denominator
    numers = [1]
    denom = 1
    for w in omegas[1:]:
        frac = Fraction(w / w0).limit_denominator(1000)
        if frac.numerator == 0:
            return w0, False
        if abs(float(frac) - w / w0) > 1e-9 * max(1.0, w / w0):
            return w0, False
        lcm = denom * frac.denominator // math.gcd(denom, frac.denominator)
        numers = [n * (lcm // denom) for n in numers]
        numers.append(frac.numerator * (lcm // frac.denominator))
        denom = lcm
    g = denom
    for n in numers:
        g = math.gcd(g, n)
    if denom // g > 1000:
        # common period longer than 1000 first-tone periods: treat the
        # tones as effectively incommensurate
        return w0, False
    return w0 * g / denom, True


def settle(
    params: CircuitParams,
    drive: DriveSpec,
    state0: StateVector | None = None,
    *,
    max_periods: int = 4000,
    criterion_tol: float = 1e-8,
    criterion_abs: float = 1e-12,
    rel_tol: float = 1e-9,
    abs_tol: float = 1e-12,
    samples_per_period: int = 64,
    segment_periods: int = 8,
) -> SteadySegment:
    """Integrate until the response repeats period to period, then sample it.

    The waveform is compared over consecutive base periods; convergence
    requires the RMS change of every consecutive pair in the returned
    window to fall below ``criterion_tol`` times the segment RMS, so the
    whole window is verified repeating, not just its tail.  (With a long
    base period the transient can die out inside a single window; a
    last-pair check would then hand back a window whose early periods
    still carry the transient.)  A response decaying toward zero never
    satisfies a relative criterion (its period-to-period ratio is
    constant), so a window whose RMS drops below ``criterion_abs`` also
    counts as converged.  If ``max_periods`` elapse without convergence
    the most recent window is returned with ``converged=False`` and a
    quasi-periodic flag estimated from the envelope autocorrelation of
    the last window.
    """
    if state0 is None:
        state0 = StateVector()
    if max_periods < 2 * segment_periods:
        raise ValueError("max_periods must be at least 2 * segment_periods")
    _check_tolerances(rel_tol, abs_tol)
    omega_base, commensurate = _base_angular_frequency(drive)
    base_period = 2.0 * math.pi / omega_base
    # keep the sample rate comfortably above every tone frequency
    omega_max = max(tone.omega for tone in drive.tones)
    harmonics_in_base = max(1, round(omega_max / omega_base))
    samples_per_period = max(samples_per_period, 10 * harmonics_in_base)

    p_arr = params.as_array()
    tone_arr = drive.as_array()
    max_step = _max_step(params, drive)
    n_keep = max(segment_periods, 2)
    blocks: list[np.ndarray] = []
    pair_residuals: list[float] = []
    y = state0.as_array()
    residual = math.inf
    converged = False
    t_local = np.linspace(0.0, base_period, samples_per_period + 1)[:-1]
    n_done = 0
    for k in range(max_periods):
        t0 = k * base_period
        out, y, status, t_stop, _ = _kernels.integrate_adaptive(
            0, p_arr, tone_arr, y, t0, t0 + base_period,
            rel_tol, abs_tol, t0 + t_local, max_step)
        if status != 0:
            reason = ("state norm exceeded overflow guard"
                      if status == 1 else "step size collapsed")
            raise DivergenceError(
                f"settle failed at t={t_stop:.6g} (period {k}): {reason}",
                time=t_stop)
        blocks.append(out)
        if len(blocks) > n_keep:
            blocks.pop(0)
        n_done = k + 1
        if len(blocks) >= 2:
            prev, last = blocks[-2], blocks[-1]
            seg_rms = math.sqrt(float(np.mean(last * last)))
            diff_rms = math.sqrt(float(np.mean((last - prev) ** 2)))
            pair_residuals.append(diff_rms / (seg_rms + 1e-300))
            if len(pair_residuals) > n_keep - 1:
                pair_residuals.pop(0)
            # every pair inside the returned window must repeat
            residual = max(pair_residuals)
            steady = ((residual < criterion_tol
                       and len(pair_residuals) >= n_keep - 1)
                      or seg_rms < criterion_abs)
            if steady and k + 1 >= segment_periods:
                converged = True
                # top up the window if fewer than segment_periods collected
                while len(blocks) < segment_periods:
                    t0 = n_done * base_period
                    out, y, status, t_stop, _ = _kernels.integrate_adaptive(
                        0, p_arr, tone_arr, y, t0, t0 + base_period,
                        rel_tol, abs_tol, t0 + t_local, max_step)
                    if status != 0:
                        raise DivergenceError(
                            f"settle failed at t={t_stop:.6g}", time=t_stop)
                    blocks.append(out)
                    n_done += 1
                break
    window = blocks[-segment_periods:]
    states = np.concatenate(window, axis=0)
    t_end = n_done * base_period
    t_start = t_end - len(window) * base_period
    times = t_start + np.arange(states.shape[0]) * (base_period
                                                    / samples_per_period)
    quasi, env_period = False, None
    if not converged:
        quasi, env_period = _detect_quasiperiodic(
            states[:, 0], base_period / samples_per_period,
            drive.tones[0].omega)
    if not commensurate:
        # drift between incommensurate tones keeps the strict criterion from
        # ever firing; report the best residual honestly
        converged = False
    return SteadySegment(
        times=times, states=states,
        sample_rate=samples_per_period / base_period,
        base_period=base_period, n_periods=len(window),
        periods_elapsed=n_done,
        converged=converged, residual=residual,
        params=params, drive=drive,
        quasi_periodic=quasi, envelope_period=env_period,
    )


def _detect_quasiperiodic(signal: np.ndarray, dt: float,
                          omega_carrier: float) -> tuple[bool, float | None]:
    """Detect a periodic envelope on top of the carrier.

    Demodulates at the carrier, autocorrelates the envelope magnitude and
    looks for a strong off-zero peak.  Returns ``(flag, envelope_period)``.
    """
    n = signal.size
    if n < 64:
        return False, None
    t = np.arange(n) * dt
    mix = signal * np.exp(-1j * omega_carrier * t)
    # crude low-pass: moving average over one carrier period
    width = max(1, int(round(2.0 * math.pi / omega_carrier / dt)))
    kernel = np.ones(width) / width
    env = np.abs(np.convolve(mix, kernel, mode="same"))
    env = env - env.mean()
    power = float(np.dot(env, env))
    if power < 1e-24 * n:
        return False, None
    corr = np.correlate(env, env, mode="full")[n - 1:]
    corr /= corr[0]
    # first minimum, then the tallest peak beyond it
    i = 1
    while i < corr.size - 1 and corr[i] <= corr[i - 1]:
        i += 1
    if i >= corr.size - 1:
        return False, None
    j = i + int(np.argmax(corr[i:]))
    if corr[j] > 0.5 and j > 0:
        return True, j * dt
    return False, None


def demodulate(
    segment: SteadySegment | Trajectory,
    omega_ref: float,
    *,
    signal: str = "q_x",
    lp_cutoff: float | None = None,
    filter_order: int = 2,
) -> EnvelopeSeries:
    """Extract slow quadrature envelopes of a signal around omega_ref.

    Mixes against cos/sin at the reference frequency and applies a zero-phase
    Butterworth low-pass (its forward-backward squared-magnitude response),
    so the envelopes carry no filter phase lag.  ``lp_cutoff`` defaults to
    ``omega_ref / 8`` and must stay below ``omega_ref / 2`` to reject the
    doubled-frequency image.

    A converged :class:`SteadySegment` is periodic, so the filter is applied
    circularly (no edge transients).  Any other input is filtered with
    edge padding sized to several filter settling times.
    """
    if omega_ref <= 0.0:
        raise ValueError(f"omega_ref must be positive, got {omega_ref}")
    if lp_cutoff is None:
        lp_cutoff = omega_ref / 8.0
    if not 0.0 < lp_cutoff < omega_ref / 2.0:
        raise ValueError(
            f"lp_cutoff must lie in (0, omega_ref/2), got {lp_cutoff}")
    times = segment.times
    if times.size < 24:
        raise ValueError("need at least 24 samples to demodulate")
    steps = np.diff(times)
    dt = float(steps[0])
    if np.any(np.abs(steps - dt) > 1e-9 * dt):
        raise ValueError("demodulate requires uniform sampling")
    nyquist = math.pi / dt
    if omega_ref >= nyquist:
        raise ValueError(
            f"omega_ref {omega_ref:.6g} is at or above the sampling Nyquist "
            f"frequency {nyquist:.6g}")
    x = segment.signal(signal)
    mix_c = 2.0 * x * np.cos(omega_ref * times)
    mix_s = 2.0 * x * np.sin(omega_ref * times)
    b, a = butter(filter_order, lp_cutoff / nyquist)
    circular = isinstance(segment, SteadySegment) and segment.converged
    if circular:
        freqs = np.fft.rfftfreq(times.size, d=1.0) * 2.0 * math.pi
        _, h = freqz(b, a, worN=freqs)
        gain2 = np.abs(h) ** 2
        u = np.fft.irfft(np.fft.rfft(mix_c) * gain2, n=times.size)
        v = np.fft.irfft(np.fft.rfft(mix_s) * gain2, n=times.size)
    else:
        settle_samples = int(math.ceil(8.0 / (lp_cutoff * dt)))
        padlen = min(times.size - 1, 3 * settle_samples)
        u = filtfilt(b, a, mix_c, padlen=padlen)
        v = filtfilt(b, a, mix_s, padlen=padlen)
    return EnvelopeSeries(times=times, u=u, v=v, omega_ref=omega_ref)
