"""Rotating-frame quadrature reduction and comb-onset stability analysis.

The fast signal is written as ``U cos(w_ref t) + V sin(w_ref t)`` and the
slow quadratures (U, V) obey a forced two-dimensional flow:

    dU/dt = -d*[1 - chi*(U^2+V^2)]*U + [W_a - mu*(3U^2-V^2)]*V
            - (k_v/(2 w_ref)) * V0 * cos(Dp t)
            - (k_p w_sig/(2 w_ref)) * a_sig * cos(Ds t + phi)
    dV/dt = -[W_a - mu*(3V^2-U^2)]*U - d*[1 - chi*(U^2+V^2)]*V
            + (k_v/(2 w_ref)) * V0 * sin(Dp t)
            + (k_p w_sig/(2 w_ref)) * a_sig * sin(Ds t + phi)

where ``W_a`` is the frame-relative antiresonance rate, ``d`` the
antiresonance damping, ``chi`` a damping-saturation coefficient, ``mu`` a
triple-angle reactive coefficient, and the two tones force at the pump and
signal relative frequencies ``Dp = order * Ds``.  ``w_sig = w_ref + Ds`` is
the absolute signal frequency.  Written for ``w = U + i V`` the cubic terms
read ``+d*chi*|w|^2 w - i mu conj(w)^3``: saturating damping plus a
phase-sensitive triple-angle coupling; the latter is what transfers energy
between envelope tones and seeds combs.

Frames are indexed by an integer order ``n``: the pump's relative frequency
is ``n`` times the signal's, which for ``n >= 2`` pins the signal spacing to
``(w_pump - w_mode)/(n - 1)``.  Comb onset is analyzed as a feedback loop:
the quadrature system linearized about its pumped equilibrium (the forward
block) closed against a single-pole resonator response (the feedback block),
judged by the Nyquist criterion.
"""

from __future__ import annotations

import cmath
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .circuit import CircuitParams, DriveSpec, StateVector
from .timedomain import EnvelopeSeries, integrate

__all__ = [
    "FrameSpec",
    "SlowFlowParams",
    "DerivedCoefficients",
    "RegimeReport",
    "Quadratures",
    "StabilityReport",
    "LoopResult",
    "ResonatorSpec",
    "CoexistenceMap",
    "ResolutionError",
    "build_frame",
    "derive_coefficients",
    "check_regime",
    "slowflow_rhs",
    "slowflow_jacobian",
    "simulate_envelope",
    "fixed_points",
    "loop_analysis",
    "coexistence_scan",
    "envelope_coefficients",
    "slowflow_from_circuit",
    "SubharmonicReduction",
    "subharmonic_reduction",
]

FRAME_RATIO_MIN = 100.0
FRAME_RATIO_WARN = 1000.0


class ResolutionError(ValueError):
    """A frequency grid is too coarse to resolve the resonance it probes."""


@dataclass(frozen=True)
class FrameSpec:
    """Rotating reference frame: pump and signal as relative frequencies.

    ``delta_pump = order * delta_sig`` holds exactly; the physical pump and
    signal frequencies are ``omega_ref + delta_pump`` and
    ``omega_ref + delta_sig``.
    """

    omega_ref: float
    order: int
    delta_sig: float
    delta_pump: float

    def __post_init__(self):
        if self.omega_ref <= 0:
            raise ValueError(f"omega_ref must be positive, got {self.omega_ref}")
        if self.delta_pump != self.order * self.delta_sig:
            raise ValueError(
                f"delta_pump ({self.delta_pump}) must equal "
                f"order * delta_sig ({self.order} * {self.delta_sig})")
        worst = max(abs(self.delta_sig), abs(self.delta_pump))
        if worst > 0:
            ratio = self.omega_ref / worst
            if ratio < FRAME_RATIO_MIN:
                raise ValueError(
                    f"frame is not slow: omega_ref / max relative frequency "
                    f"= {ratio:.3g} < {FRAME_RATIO_MIN}")
            if ratio < FRAME_RATIO_WARN:
                warnings.warn(
                    f"marginally slow frame (omega_ref / relative frequency "
                    f"= {ratio:.3g})", stacklevel=3)

    @property
    def omega_pump(self) -> float:
        return self.omega_ref + self.delta_pump

    @property
    def omega_signal(self) -> float:
        return self.omega_ref + self.delta_sig


def build_frame(omega_pump: float, omega_mode: float, order: int,
                delta_sig: float | None = None) -> FrameSpec:
    """Construct the rotating frame of a given order.

    For ``order >= 2`` the signal spacing is pinned:
    ``delta_sig = (omega_pump - omega_mode)/(order - 1)`` and
    ``omega_ref = omega_mode - delta_sig``, which places the pump at
    relative frequency ``order * delta_sig`` exactly.  ``order = 1`` leaves
    the spacing undefined (division by zero) and is rejected.  ``order = 0``
    is the degenerate phase-sensitive regime: the frame rides on the pump
    (``delta_pump = 0``) and ``delta_sig`` is a free parameter, defaulting
    to ``omega_mode - omega_pump``.
    """
    if omega_pump <= 0 or omega_mode <= 0:
        raise ValueError("omega_pump and omega_mode must be positive")
    if not isinstance(order, (int, np.integer)):
        raise TypeError(f"order must be an integer, got {order!r}")
    if order < 0:
        raise ValueError(f"order must be >= 0, got {order}")
    if order == 1:
        raise ValueError("order 1 makes the frame degenerate (pump and "
                         "signal coincide); no spacing is defined")
    if order == 0:
        ds = omega_mode - omega_pump if delta_sig is None else float(delta_sig)
        return FrameSpec(omega_ref=omega_pump, order=0, delta_sig=ds,
                         delta_pump=0.0)
    if delta_sig is not None:
        raise ValueError("delta_sig is only free in the order-0 frame")
    ds = (omega_pump - omega_mode) / (order - 1)
    omega_ref = omega_mode - ds
    return FrameSpec(omega_ref=omega_ref, order=int(order), delta_sig=ds,
                     delta_pump=order * ds)


@dataclass(frozen=True)
class SlowFlowParams:
    """Coefficients and forcing of the quadrature flow.

    ``detuning_rate`` is the frame-relative antiresonance rate,
    ``damping`` its decay rate, ``sat_coeff``/``pull_coeff`` the cubic
    damping-saturation and triple-angle coefficients, and
    ``pump_gain``/``signal_gain`` the forcing gains.  ``from_derivation``
    records whether the cubic pair satisfies the derived ratio
    ``pull_coeff = sat_coeff * omega_a**2 / omega`` by construction.
    """

    detuning_rate: float
    damping: float
    sat_coeff: float
    pull_coeff: float
    pump_gain: float
    signal_gain: float
    frame: FrameSpec
    pump_amplitude: float = 0.0
    signal_amplitude: float = 0.0
    signal_phase: float = 0.0
    from_derivation: bool = False

    def __post_init__(self):
        for name in ("detuning_rate", "damping", "sat_coeff", "pull_coeff",
                     "pump_gain", "signal_gain", "pump_amplitude",
                     "signal_amplitude", "signal_phase"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
        if self.damping <= 0:
            raise ValueError(f"damping must be positive, got {self.damping}")
        if self.sat_coeff < 0:
            raise ValueError(f"sat_coeff must be >= 0, got {self.sat_coeff}")
        if self.pull_coeff < 0:
            raise ValueError(f"pull_coeff must be >= 0, got {self.pull_coeff}")
        if self.pump_amplitude < 0 or self.signal_amplitude < 0:
            raise ValueError("forcing amplitudes must be >= 0")

    @property
    def pump_drive(self) -> float:
        """Pump forcing magnitude in quadrature units."""
        return (self.pump_gain / (2.0 * self.frame.omega_ref)
                * self.pump_amplitude)

    @property
    def signal_drive(self) -> float:
        """Signal forcing magnitude in quadrature units."""
        return (self.signal_gain * self.frame.omega_signal
                / (2.0 * self.frame.omega_ref) * self.signal_amplitude)


@dataclass(frozen=True)
class DerivedCoefficients:
    """Coefficient set computed from circuit-element scales."""

    damping: float
    omega_a_sq: float
    pump_gain: float
    signal_gain: float
    sat_coeff: float
    pull_coeff: float
    omega: float

    def to_params(self, frame: FrameSpec, pump_amplitude: float = 0.0,
                  signal_amplitude: float = 0.0,
                  signal_phase: float = 0.0) -> SlowFlowParams:
        """Attach a frame and forcing, yielding full flow parameters."""
        omega_r = frame.omega_ref
        detuning_rate = (self.omega_a_sq - omega_r ** 2) / (2.0 * omega_r)
        return SlowFlowParams(
            detuning_rate=detuning_rate, damping=self.damping,
            sat_coeff=self.sat_coeff, pull_coeff=self.pull_coeff,
            pump_gain=self.pump_gain, signal_gain=self.signal_gain,
            frame=frame, pump_amplitude=pump_amplitude,
            signal_amplitude=signal_amplitude, signal_phase=signal_phase,
            from_derivation=True)


def derive_coefficients(inductance_scale: float, resistance_scale: float,
                        impedance_scale: float, eta: float, flux_scale: float,
                        omega: float) -> DerivedCoefficients:
    """Coefficients from circuit-element scales at a linearization point.

    With cube-root nonlinearity scaling ``s = eta**(1/3) * flux_scale**(-2/3)``:
    damping ``(3/2)*impedance_scale*s``, squared antiresonance frequency
    ``(3/inductance_scale)*s``, pump gain ``3*s``, signal gain
    ``3*(resistance_scale/inductance_scale)*s``; the cubic pair is
    ``sat = (15/72)*omega**2/flux_scale**2`` and ``pull = sat*omega_a**2/omega``.
    """
    for name, value in (("inductance_scale", inductance_scale),
                        ("resistance_scale", resistance_scale),
                        ("impedance_scale", impedance_scale),
                        ("eta", eta), ("flux_scale", flux_scale),
                        ("omega", omega)):
        if value <= 0:
            raise ValueError(f"{name} must be positive, got {value}")
    s = eta ** (1.0 / 3.0) * flux_scale ** (-2.0 / 3.0)
    omega_a_sq = (3.0 / inductance_scale) * s
    sat = (15.0 / 72.0) * omega ** 2 / flux_scale ** 2
    return DerivedCoefficients(
        damping=1.5 * impedance_scale * s,
        omega_a_sq=omega_a_sq,
        pump_gain=3.0 * s,
        signal_gain=3.0 * (resistance_scale / inductance_scale) * s,
        sat_coeff=sat,
        pull_coeff=sat * omega_a_sq / omega,
        omega=omega)


@dataclass(frozen=True)
class RegimeReport:
    """Validity of the slow-flow reduction at a given amplitude scale."""

    valid: bool
    damping_ratio: float
    frame_ratio: float
    reason: str = ""


def check_regime(sf: SlowFlowParams, amplitude_scale: float) -> RegimeReport:
    """Check the reduction's working assumptions at an amplitude scale.

    The cubic scale ``sat_coeff * amplitude**2`` should be comparable to the
    damping (ratio accepted within [0.01, 100]) and far below the carrier
    frequency (ratio above 100 required).
    """
    if amplitude_scale < 0:
        raise ValueError("amplitude_scale must be >= 0")
    cubic = sf.sat_coeff * amplitude_scale ** 2
    if cubic == 0.0:
        return RegimeReport(valid=False, damping_ratio=math.inf,
                            frame_ratio=math.inf,
                            reason="no nonlinearity (sat_coeff or amplitude "
                                   "scale is zero)")
    damping_ratio = sf.damping / cubic
    frame_ratio = sf.frame.omega_ref / cubic
    if not 0.01 <= damping_ratio <= 100.0:
        return RegimeReport(valid=False, damping_ratio=damping_ratio,
                            frame_ratio=frame_ratio,
                            reason="damping and cubic scale are not "
                                   "comparable")
    if frame_ratio <= 100.0:
        return RegimeReport(valid=False, damping_ratio=damping_ratio,
                            frame_ratio=frame_ratio,
                            reason="cubic scale not small against the "
                                   "carrier frequency")
    return RegimeReport(valid=True, damping_ratio=damping_ratio,
                        frame_ratio=frame_ratio)


@dataclass(frozen=True)
class Quadratures:
    """A point in the (U, V) quadrature plane."""

    u: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.u) and math.isfinite(self.v)):
            raise ValueError("quadratures must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v])

    @property
    def magnitude(self) -> float:
        return math.hypot(self.u, self.v)


def _forcing(t: float, sf: SlowFlowParams) -> tuple[float, float]:
    """Forcing components (into dU/dt, into dV/dt) at time t."""
    f_u = 0.0
    f_v = 0.0
    if sf.pump_amplitude != 0.0:
        g = sf.pump_drive
        phase = sf.frame.delta_pump * t
        f_u -= g * math.cos(phase)
        f_v += g * math.sin(phase)
    if sf.signal_amplitude != 0.0:
        g = sf.signal_drive
        phase = sf.frame.delta_sig * t + sf.signal_phase
        f_u -= g * math.cos(phase)
        f_v += g * math.sin(phase)
    return f_u, f_v


def slowflow_rhs(q, t: float, sf: SlowFlowParams) -> np.ndarray:
    """Time derivative (dU/dt, dV/dt) of the quadrature flow."""
    if isinstance(q, Quadratures):
        u, v = q.u, q.v
    else:
        u, v = float(q[0]), float(q[1])
    rho2 = u * u + v * v
    damp = sf.damping * (1.0 - sf.sat_coeff * rho2)
    f_u, f_v = _forcing(t, sf)
    du = (-damp * u
          + (sf.detuning_rate - sf.pull_coeff * (3.0 * u * u - v * v)) * v
          + f_u)
    dv = (-(sf.detuning_rate - sf.pull_coeff * (3.0 * v * v - u * u)) * u
          - damp * v
          + f_v)
    return np.array([du, dv])


def slowflow_jacobian(q, sf: SlowFlowParams) -> np.ndarray:
    """Analytic state Jacobian of the flow (forcing terms carry no state)."""
    if isinstance(q, Quadratures):
        u, v = q.u, q.v
    else:
        u, v = float(q[0]), float(q[1])
    d, chi, mu = sf.damping, sf.sat_coeff, sf.pull_coeff
    damp = d * (1.0 - chi * (u * u + v * v))
    p_u = sf.detuning_rate - mu * (3.0 * u * u - v * v)
    p_v = sf.detuning_rate - mu * (3.0 * v * v - u * u)
    return np.array([
        [-damp + 2.0 * d * chi * u * u - 6.0 * mu * u * v,
         p_u + 2.0 * mu * v * v + 2.0 * d * chi * u * v],
        [-p_v - 2.0 * mu * u * u + 2.0 * d * chi * u * v,
         -damp + 6.0 * mu * u * v + 2.0 * d * chi * v * v],
    ])


def simulate_envelope(sf: SlowFlowParams, q0: Quadratures | None = None,
                      *, t_end: float, t_eval: np.ndarray | None = None,
                      rel_tol: float = 1e-9,
                      abs_tol: float = 1e-12) -> EnvelopeSeries:
    """Integrate the quadrature flow from t=0 and sample (U, V)."""
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    if q0 is None:
        q0 = Quadratures(0.0, 0.0)
    if t_eval is None:
        t_eval = np.linspace(0.0, t_end, 1000)
    sol = solve_ivp(
        lambda t, y: slowflow_rhs(y, t, sf), (0.0, float(t_end)),
        q0.as_array(), t_eval=np.asarray(t_eval, dtype=float),
        rtol=rel_tol, atol=abs_tol, method="RK45", dense_output=False)
    if not sol.success:
        raise RuntimeError(f"envelope integration failed: {sol.message}")
    return EnvelopeSeries(times=sol.t, u=sol.y[0], v=sol.y[1],
                          omega_ref=sf.frame.omega_ref)


# --- fixed points and stability -------------------------------------------

@dataclass(frozen=True)
class LoopResult:
    """Nyquist verdict for one frame order."""

    order: int
    encirclements: int
    oscillating: bool
    gain_margin_db: float
    phase_margin_deg: float
    pole_delta: float


@dataclass(frozen=True)
class StabilityReport:
    """Equilibrium, its eigenvalues and class, optional loop verdict."""

    fixed_point: Quadratures
    eigenvalues: tuple[complex, complex]
    classification: str
    loop: LoopResult | None = None


def _classify(eigs: np.ndarray) -> str:
    re = np.real(eigs)
    im = np.imag(eigs)
    if np.any(np.abs(re) < 1e-12 * max(1.0, float(np.max(np.abs(eigs))))):
        return "marginal"
    if re[0] * re[1] < 0:
        return "saddle"
    kind = "focus" if np.any(np.abs(im) > 0) else "node"
    side = "stable" if np.all(re < 0) else "unstable"
    return f"{side} {kind}"


def _autonomous_forcing(sf: SlowFlowParams) -> tuple[float, float]:
    """Constant forcing vector, or an error if the forcing depends on time."""
    if sf.pump_amplitude != 0.0 and sf.frame.delta_pump != 0.0:
        raise ValueError(
            "pump forcing is time-dependent in this frame (delta_pump != 0); "
            "fixed points exist only for the order-0 frame or zero pump")
    if sf.signal_amplitude != 0.0 and sf.frame.delta_sig != 0.0:
        raise ValueError(
            "signal forcing is time-dependent in this frame (delta_sig != 0)")
    return _forcing(0.0, sf)


def fixed_points(sf: SlowFlowParams, seeds: np.ndarray | None = None,
                 ) -> list[tuple[Quadratures, StabilityReport]]:
    """Equilibria of the autonomous flow with their linear stability.

    Newton refinement from a seed grid (default: rings spanning the
    saturation radius), deduplicated at pairwise distance 1e-6.  The
    Jacobian is analytic; eigenvalue classification follows its spectrum.
    """
    f_u, f_v = _autonomous_forcing(sf)
    f_mag = math.hypot(f_u, f_v)
    if seeds is None:
        if sf.sat_coeff > 0:
            r_scale = 1.0 / math.sqrt(sf.sat_coeff)
        elif sf.pull_coeff > 0:
            r_scale = math.sqrt(
                max(sf.damping, abs(sf.detuning_rate)) / sf.pull_coeff)
        else:
            r_scale = max(1.0, f_mag / sf.damping)
        pts = [(0.0, 0.0)]
        for radius in (0.25, 0.5, 0.8, 1.1, 1.5):
            for j in range(8):
                ang = 2.0 * math.pi * j / 8
                pts.append((radius * r_scale * math.cos(ang),
                            radius * r_scale * math.sin(ang)))
        if f_mag > 0:
            # linear-response point and scalings of it, so strong forcing
            # outside the saturation rings is still caught
            lin = np.linalg.solve(slowflow_jacobian((0.0, 0.0), sf),
                                  [-f_u, -f_v])
            for s in (0.5, 1.0, 2.0):
                pts.append((s * lin[0], s * lin[1]))
        seeds = np.array(pts)
    else:
        seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    scale = max(1.0, float(np.max(np.abs(seeds))))
    roots: list[np.ndarray] = []
    for seed in seeds:
        y = seed.astype(float).copy()
        ok = False
        for _ in range(60):
            r = slowflow_rhs(y, 0.0, sf)
            rho = float(math.hypot(y[0], y[1]))
            r_char = (sf.damping * (1.0 + sf.sat_coeff * rho * rho) * rho
                      + abs(sf.detuning_rate) * rho
                      + sf.pull_coeff * rho ** 3 + f_mag + sf.damping)
            if np.max(np.abs(r)) < 1e-9 * r_char:
                ok = True
                break
            jac = slowflow_jacobian(y, sf)
            try:
                step = np.linalg.solve(jac, -r)
            except np.linalg.LinAlgError:
                break
            if not np.all(np.isfinite(step)):
                break
            limit = 2.0 * scale
            norm = float(np.max(np.abs(step)))
            if norm > limit:
                step *= limit / norm
            y = y + step
        if not ok or not np.all(np.isfinite(y)):
            continue
        if all(np.linalg.norm(y - r0) > 1e-6 * scale for r0 in roots):
            roots.append(y)
    roots.sort(key=lambda r: (round(float(np.linalg.norm(r)), 9),
                              math.atan2(r[1], r[0])))
    out = []
    for root in roots:
        eigs = np.linalg.eigvals(slowflow_jacobian(root, sf))
        eigs = eigs[np.argsort(eigs.imag)]
        point = Quadratures(float(root[0]), float(root[1]))
        out.append((point, StabilityReport(
            fixed_point=point,
            eigenvalues=(complex(eigs[0]), complex(eigs[1])),
            classification=_classify(eigs))))
    return out


# --- loop / Nyquist analysis ----------------------------------------------

@dataclass(frozen=True)
class ResonatorSpec:
    """Single-pole feedback branch: damping, mode frequency, coupling."""

    gamma: float
    omega_mode: float
    coupling: float

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.omega_mode <= 0:
            raise ValueError("omega_mode must be positive")
        if self.coupling < 0:
            raise ValueError("coupling must be >= 0")


def _signal_pole_delta(sf: SlowFlowParams, resonator: ResonatorSpec,
                       order: int) -> float:
    """Signal relative frequency for a candidate order (resonator pole)."""
    omega_pump = sf.frame.omega_pump
    if order == 1:
        raise ValueError("order 1 has no defined spacing")
    if order == 0:
        return resonator.omega_mode - omega_pump
    return (omega_pump - resonator.omega_mode) / (order - 1)


def _alpha_beta(jac: np.ndarray) -> tuple[complex, complex]:
    """Complex-envelope form of a real 2x2 Jacobian (state order (U, V)):

    d(w)/dt = alpha*w + beta*conj(w) for w = U + iV.
    """
    a = 0.5 * (jac[0, 0] + jac[1, 1]) + 0.5j * (jac[1, 0] - jac[0, 1])
    b = 0.5 * (jac[0, 0] - jac[1, 1]) + 0.5j * (jac[1, 0] + jac[0, 1])
    return a, b


def _open_loop(delta: np.ndarray, sf: SlowFlowParams,
               resonator: ResonatorSpec, pole_delta: float,
               alpha: complex, beta: complex) -> np.ndarray:
    """Scalar Nyquist curve of the two-block loop, referenced to -1.

    The forward block is the 2x2 small-signal quadrature gain of the flow
    about its pumped point; the feedback block applies the single-pole
    resonator response kappa/(gamma + i(delta - pole)) to the signal
    quadrature channel and the mirrored response (pole at -pole_delta) to
    the conjugate channel, scaled by the signal-port gain.  For a matrix
    loop the encirclement count lives in det(I - loop); the returned curve
    is det(I - loop) - 1, so the critical point is -1 and the curve decays
    to zero away from the resonances.
    """
    d = np.asarray(delta, dtype=float)
    s = 1j * d
    sig_coeff = (sf.signal_gain * sf.frame.omega_signal
                 / (2.0 * sf.frame.omega_ref))
    dress_sig = sig_coeff * resonator.coupling / (
        resonator.gamma + 1j * (d - pole_delta))
    dress_conj = sig_coeff * resonator.coupling / (
        resonator.gamma + 1j * (d + pole_delta))
    bare = (s - np.conj(alpha)) * (s - alpha) - abs(beta) ** 2
    dressed = ((s - np.conj(alpha) + dress_sig) * (s - alpha + dress_conj)
               - abs(beta) ** 2)
    return dressed / bare - 1.0


def _winding(values: np.ndarray, about: complex) -> float:
    """Winding number about a point, closing the curve through the origin.

    The open-loop gain decays to zero at both ends of a sufficiently wide
    grid, so appending the exact limit point closes the contour; the caller
    verifies the edge values are already small enough for the closure to be
    homotopy-safe.
    """
    closed = np.concatenate([[0.0 + 0.0j], values, [0.0 + 0.0j]])
    angles = np.unwrap(np.angle(closed - about))
    return (angles[-1] - angles[0]) / (2.0 * math.pi)


def _margins(loop: np.ndarray) -> tuple[float, float]:
    """Gain margin (dB) and phase margin (degrees) about the point -1.

    Gain margin measures how much extra loop gain would push the worst
    negative real-axis crossing out to -1; phase margin how much extra phase
    lag would rotate a unit-magnitude point onto -1.
    """
    re = loop.real
    im = loop.imag
    mags = np.abs(loop)
    worst_crossing = 0.0
    for i in range(loop.size - 1):
        if im[i] * im[i + 1] <= 0 and im[i] != im[i + 1]:
            frac = im[i] / (im[i] - im[i + 1])
            re_c = re[i] + frac * (re[i + 1] - re[i])
            if re_c < 0:
                worst_crossing = max(worst_crossing, -re_c)
    gain_margin = (math.inf if worst_crossing == 0.0
                   else 20.0 * math.log10(1.0 / worst_crossing))
    phase_margin = math.inf
    for i in range(loop.size - 1):
        if (mags[i] - 1.0) * (mags[i + 1] - 1.0) <= 0 and mags[i] != mags[i + 1]:
            frac = (1.0 - mags[i]) / (mags[i + 1] - mags[i])
            z = loop[i] + frac * (loop[i + 1] - loop[i])
            lag = 180.0 - abs(math.degrees(math.atan2(z.imag, z.real)))
            phase_margin = min(phase_margin, lag)
    return gain_margin, phase_margin


def loop_analysis(sf: SlowFlowParams, resonator: ResonatorSpec, order: int,
                  delta_grid: np.ndarray) -> StabilityReport:
    """Comb-onset verdict for one candidate order via the Nyquist criterion.

    The forward block is the quadrature flow linearized about its pumped
    equilibrium (computed in the order-0 averaged frame); the feedback block
    is the single-pole resonator response centered on the candidate order's
    signal frequency.  Oscillation is predicted when the closed loop has
    right-half-plane content: open-loop unstable poles plus net Nyquist
    encirclements of -1.
    """
    delta_grid = np.asarray(delta_grid, dtype=float)
    if delta_grid.ndim != 1 or delta_grid.size < 8:
        raise ValueError("delta_grid must be a 1-d array of at least 8 points")
    if np.any(np.diff(delta_grid) <= 0):
        raise ValueError("delta_grid must be strictly increasing")
    pole_delta = _signal_pole_delta(sf, resonator, order)
    in_window = np.abs(delta_grid - pole_delta) < resonator.gamma
    if int(np.sum(in_window)) < 10:
        raise ResolutionError(
            f"delta grid has {int(np.sum(in_window))} points within one "
            f"linewidth of the resonator pole at {pole_delta:.6g}; "
            "at least 10 are required")
    pumped = _pumped_equilibrium(sf)
    jac = slowflow_jacobian(pumped, sf)
    eigs = np.linalg.eigvals(jac)
    alpha, beta = _alpha_beta(jac)
    n_unstable_open = int(np.sum(eigs.real > 0))

    grid = delta_grid
    loop = _open_loop(grid, sf, resonator, pole_delta, alpha, beta)
    for _ in range(3):
        # refine where the loop magnitude is near unity (Nyquist-critical)
        near = np.abs(np.abs(loop) - 1.0) < 0.2
        hot = np.nonzero(near[:-1] | near[1:])[0]
        if hot.size == 0:
            break
        mids = 0.5 * (grid[hot] + grid[hot + 1])
        grid = np.unique(np.concatenate([grid, mids]))
        loop = _open_loop(grid, sf, resonator, pole_delta, alpha, beta)

    edge = max(abs(loop[0]), abs(loop[-1]))
    if edge > 0.5:
        raise ResolutionError(
            f"delta grid too narrow: open-loop gain is still {edge:.3g} at "
            "the grid edge, so the encirclement count would depend on the "
            "unsampled tails; widen the grid")
    # ascending sweep of the real axis bounds the lower half plane (where
    # the unstable poles live) traversed positively; the argument principle
    # then counts closed-loop unstable modes as open ones minus the winding
    # of the loop about -1
    winding_raw = _winding(loop, about=-1.0 + 0.0j)
    winding = int(round(winding_raw))
    if abs(winding_raw - winding) > 0.25:
        raise ResolutionError(
            f"encirclement count did not converge (raw winding "
            f"{winding_raw:.3f}); refine the delta grid")
    closed_unstable = max(0, n_unstable_open - winding)
    gain_margin, phase_margin = _margins(loop)
    oscillating = closed_unstable > 0
    point = Quadratures(float(pumped[0]), float(pumped[1]))
    eigs = eigs[np.argsort(eigs.imag)]
    return StabilityReport(
        fixed_point=point,
        eigenvalues=(complex(eigs[0]), complex(eigs[1])),
        classification=_classify(eigs),
        loop=LoopResult(order=order, encirclements=winding,
                        oscillating=oscillating,
                        gain_margin_db=gain_margin,
                        phase_margin_deg=phase_margin,
                        pole_delta=pole_delta))


def _pumped_equilibrium(sf: SlowFlowParams) -> np.ndarray:
    """Stable equilibrium under pump forcing, signal port opened.

    Natural input is an order-0 (pump-riding) frame, where the pump forcing
    is constant and the equilibrium exact.  Frames of higher order are
    mapped to their pump-riding twin first: the forcing rotation is folded
    into the antiresonance rate (a frame change), and the residual
    counter-rotating cubic coupling is dropped as non-resonant.
    """
    if sf.frame.delta_pump == 0.0:
        sf0 = replace(sf, signal_amplitude=0.0)
    else:
        frame0 = FrameSpec(omega_ref=sf.frame.omega_ref, order=0,
                           delta_sig=sf.frame.delta_sig, delta_pump=0.0)
        sf0 = replace(sf, frame=frame0, signal_amplitude=0.0,
                      detuning_rate=sf.detuning_rate - sf.frame.delta_pump)
    points = fixed_points(sf0)
    if not points:
        raise ValueError("no pumped equilibrium found")
    stable = [(q, rep) for q, rep in points
              if rep.classification.startswith("stable")]
    pool = stable if stable else points
    # strongest response: the equilibrium of largest amplitude
    q, _ = max(pool, key=lambda item: item[0].magnitude)
    return q.as_array()


@dataclass(frozen=True)
class CoexistenceMap:
    """Which orders oscillate at each pump amplitude, with margins."""

    pump_amplitudes: np.ndarray
    orders: tuple[int, ...]
    oscillating: np.ndarray
    gain_margin_db: np.ndarray

    def oscillating_orders(self, index: int) -> set[int]:
        return {order for j, order in enumerate(self.orders)
                if self.oscillating[index, j]}


def coexistence_scan(sf: SlowFlowParams, resonator: ResonatorSpec,
                     orders, pump_amplitudes,
                     delta_grid: np.ndarray | None = None) -> CoexistenceMap:
    """Loop verdicts on an orders x pump-amplitude grid.

    Orders must avoid 1 (undefined spacing).  Cells analyzed independently;
    results aggregate in grid order regardless of execution order.
    """
    orders = tuple(int(n) for n in orders)
    if any(n == 1 or n < 0 for n in orders):
        raise ValueError("orders must be taken from {0, 2, 3, ...}")
    pump_amplitudes = np.asarray(pump_amplitudes, dtype=float)
    if delta_grid is None:
        # cover every candidate pole, wide enough that the loop tails decay:
        # the gain falls off as sig_gain * coupling / delta^2 far out
        poles = [_signal_pole_delta(sf, resonator, n) for n in orders]
        sig_coeff = (sf.signal_gain * sf.frame.omega_signal
                     / (2.0 * sf.frame.omega_ref))
        width = max(30.0 * resonator.gamma,
                    5.0 * math.sqrt(sig_coeff * resonator.coupling))
        lo = min(min(poles), 0.0) - width
        hi = max(max(poles), 0.0) + width
        step = resonator.gamma / 20.0
        delta_grid = np.arange(lo, hi + step, step)
    osc = np.zeros((pump_amplitudes.size, len(orders)), dtype=bool)
    margin = np.full((pump_amplitudes.size, len(orders)), math.inf)
    for i, amp in enumerate(pump_amplitudes):
        sf_i = replace(sf, pump_amplitude=float(amp))
        for j, order in enumerate(orders):
            report = loop_analysis(sf_i, resonator, order, delta_grid)
            osc[i, j] = report.loop.oscillating
            margin[i, j] = report.loop.gain_margin_db
    return CoexistenceMap(pump_amplitudes=pump_amplitudes, orders=orders,
                          oscillating=osc, gain_margin_db=margin)


# --- calibration bridge from the full circuit -----------------------------

@dataclass(frozen=True)
class EnvelopeCoefficients:
    """First-order averaged envelope coefficients of the full circuit.

    For the envelope w (signal = Re[w e^{-i omega_ref t}]) the averaged flow
    is  dw/dt = -(damping + i detuning_rate) w - pump_gain*A/(2 omega_ref)
    e^{-i delta_pump t} - i cubic_pull |w|^2 w + (pump-envelope mixing terms),
    obtained by adiabatically eliminating the dissipative branch.
    """

    damping: float
    detuning_rate: float
    pump_gain: float
    cubic_pull: float
    branch_ratio: float


def envelope_coefficients(params: CircuitParams,
                          frame: FrameSpec) -> EnvelopeCoefficients:
    """Averaged envelope coefficients of the circuit in a given frame.

    The effective damping is ``gamma_x - gamma_c**2/gamma_p`` (branch
    feedback cancels part of the photonic loss), the detuning rate is the
    exact frame offset ``(omega_x**2 - omega_ref**2)/(2 omega_ref)``, the
    drive reaches the envelope with gain ``1 - gamma_c/gamma_p``, and the
    branch cubic feeds back a hardening pull
    ``(3 eta / (8 omega_ref)) * (gamma_c/gamma_p)**4 |w|^2 w``.
    """
    omega_r = frame.omega_ref
    ratio = params.gamma_c / params.gamma_p
    return EnvelopeCoefficients(
        damping=params.gamma_eff,
        detuning_rate=(params.omega_x ** 2 - omega_r ** 2) / (2.0 * omega_r),
        pump_gain=1.0 - ratio,
        cubic_pull=(3.0 * params.eta / (8.0 * omega_r)) * ratio ** 4,
        branch_ratio=ratio)


def slowflow_from_circuit(params: CircuitParams, frame: FrameSpec,
                          pump_amplitude: float = 0.0,
                          signal_amplitude: float = 0.0,
                          signal_phase: float = 0.0,
                          sat_coeff: float | None = None,
                          pull_coeff: float | None = None) -> SlowFlowParams:
    """Quadrature-flow parameters calibrated from the full circuit.

    Linear terms map exactly (see :func:`envelope_coefficients`); the cubic
    pair has no exact counterpart in the quadrature form, so defaults set
    both coefficients from the averaged cubic-pull scale.  Pass explicit
    ``sat_coeff``/``pull_coeff`` when a recipe carries calibrated values.
    """
    env = envelope_coefficients(params, frame)
    if env.damping <= 0:
        raise ValueError(
            "effective damping is not positive (gamma_c**2 >= "
            "gamma_x*gamma_p): the linear envelope is unstable and has no "
            "slow-flow reduction around the origin")
    if pull_coeff is None:
        pull_coeff = env.cubic_pull
    if sat_coeff is None:
        sat_coeff = env.cubic_pull / env.damping if env.damping > 0 else 0.0
    return SlowFlowParams(
        detuning_rate=env.detuning_rate,
        damping=env.damping,
        sat_coeff=sat_coeff,
        pull_coeff=pull_coeff,
        pump_gain=env.pump_gain,
        signal_gain=env.pump_gain,
        frame=frame,
        pump_amplitude=pump_amplitude,
        signal_amplitude=signal_amplitude,
        signal_phase=signal_phase)


# --- half-harmonic reduction of a driven orbit -----------------------------

@dataclass(frozen=True)
class SubharmonicReduction:
    """Envelope reduction of a driven circuit at half its orbit frequency.

    The photonic quadrature envelope W at half the orbit's base frequency
    obeys the averaged flow ``dW/dt = mode_gain*W + conjugate_gain*conj(W)``:
    the branch variation is eliminated harmonic-by-harmonic, so both gains
    carry the full time-periodic coupling of the orbit.  The same physics is
    repackaged as a (``slowflow``, ``resonator``) pair whose
    :func:`loop_analysis` verdict at ``loop_order`` over :meth:`delta_grid`
    reproduces the envelope's stability: the forward block matches the bare
    envelope at the pumped point and the single-pole feedback restores the
    branch dressing, exact at zero slow frequency.
    """

    slowflow: SlowFlowParams
    resonator: ResonatorSpec
    loop_order: int
    pole_delta: float
    mode_gain: complex
    conjugate_gain: complex
    branch_rate: float
    orbit_residual: float

    @property
    def growth_rate(self) -> float:
        """Largest growth rate of the half-harmonic envelope pair."""
        a, b = self.mode_gain, self.conjugate_gain
        disc = abs(b) ** 2 - a.imag ** 2
        if disc >= 0:
            return a.real + math.sqrt(disc)
        return a.real

    @property
    def oscillating(self) -> bool:
        """Whether the half-harmonic envelope grows (comb onset)."""
        return self.growth_rate > 0

    def delta_grid(self) -> np.ndarray:
        """Frequency grid resolving both the envelope line and the pole.

        Dense near zero (the envelope resonance is ``damping``-narrow), a
        window around each dressing pole, and coarse wings wide enough that
        the open-loop gain has decayed at the edges.
        """
        gam = self.resonator.gamma
        pole = self.pole_delta
        span = abs(pole) + 8.0 * gam + 1.0
        inner_w = (6.0 * abs(self.slowflow.detuning_rate)
                   + 60.0 * self.slowflow.damping + 0.01)
        parts = [
            np.linspace(-span, span, 241),
            np.linspace(-inner_w, inner_w, 1201),
            np.linspace(pole - 2.0 * gam, pole + 2.0 * gam, 61),
            np.linspace(-pole - 2.0 * gam, -pole + 2.0 * gam, 61),
        ]
        return np.unique(np.concatenate(parts))


def _orbit_harmonics(params: CircuitParams, drive: DriveSpec,
                     omega_base: float, n_harm: int, t_settle: float,
                     rel_tol: float, abs_tol: float) -> tuple[dict, float]:
    """Two-sided Fourier coefficients of q_p on the settled orbit."""
    period = 2.0 * math.pi / omega_base
    n_settle = max(1, int(round(t_settle / period)))
    settled = integrate(params, drive, StateVector(0.0, 0.0, 0.0),
                        t_end=n_settle * period,
                        rel_tol=rel_tol, abs_tol=abs_tol)
    state = StateVector.from_array(settled.states[-1])
    # the settle ends on a whole period, so restarting the clock preserves
    # the drive phase and the coefficients come out referred to t = 0
    n_periods, per_period = 8, 256
    t_eval = np.arange(n_periods * per_period) * (period / per_period)
    sampled = integrate(params, drive, state, t_end=t_eval[-1] + period,
                        t_eval=t_eval, rel_tol=rel_tol, abs_tol=abs_tol)
    qp = sampled.states[:, 2]
    defect = float(np.max(np.abs(qp[:per_period] - qp[-per_period:])))
    scale = float(np.max(np.abs(qp)))
    spectrum = np.fft.fft(qp) / qp.size
    coeffs = {k: spectrum[(k * n_periods) % qp.size]
              for k in range(-n_harm, n_harm + 1)}
    return coeffs, defect / max(scale, 1e-300)


def _coupling_harmonics(coeffs: dict, eta: float, n_harm: int) -> dict:
    """Harmonics of the orbit's stiffness modulation 3*eta*q_p(t)**2."""
    out = {}
    for m in range(-n_harm, n_harm + 1):
        total = 0.0 + 0.0j
        for k, ck in coeffs.items():
            other = coeffs.get(m - k)
            if other is not None:
                total += ck * other
        out[m] = 3.0 * eta * total
    return out


def _half_harmonic_gains(params: CircuitParams, gmod: dict, omega_base: float,
                         n_side: int) -> tuple[complex, complex, float]:
    """(mode gain, conjugate gain, branch rate) of the envelope flow.

    The branch variation is expanded on odd harmonics of half the base
    frequency and solved exactly against the two independent sources (W and
    conj W); feeding it back through the time-periodic coupling yields the
    averaged gains of the photonic envelope.
    """
    w_half = omega_base / 2.0
    gc, gp = params.gamma_c, params.gamma_p
    relax = {m: gm / (2.0 * gp) for m, gm in gmod.items()}
    orders = [k for k in range(-n_side, n_side + 1) if k % 2 == 1]
    index = {k: i for i, k in enumerate(orders)}
    system = np.zeros((len(orders), len(orders)), dtype=complex)
    for k in orders:
        system[index[k], index[k]] += 1j * k * w_half
        for m, bm in relax.items():
            partner = k - 2 * m
            if partner in index:
                system[index[k], index[partner]] += bm
    source_w = np.zeros(len(orders), dtype=complex)
    source_wc = np.zeros(len(orders), dtype=complex)
    source_w[index[1]] = -(gc / gp) * (1j * w_half)
    source_wc[index[-1]] = -(gc / gp) * (-1j * w_half)
    branch_w = np.linalg.solve(system, source_w)
    branch_wc = np.linalg.solve(system, source_wc)
    feed_w = 0.0 + 0.0j
    feed_wc = 0.0 + 0.0j
    for m, gm in gmod.items():
        partner = 1 - 2 * m
        if partner in index:
            feed_w += (gc / gp) * gm * branch_w[index[partner]]
            feed_wc += (gc / gp) * gm * branch_wc[index[partner]]
    detune = (w_half ** 2 - params.omega_x ** 2) / (2.0 * w_half)
    mode_gain = (-params.gamma_eff - 1j * detune
                 + feed_w / (2j * w_half))
    conj_gain = feed_wc / (2j * w_half)
    return mode_gain, conj_gain, gmod[0].real / (2.0 * gp)


def _dressing_pole(z: complex, gamma_br: float) -> tuple[float, float]:
    """Pole offset and strength of sig/(gamma_br + i(d - pole)) matching z.

    Matched exactly at d = 0; when the requested response is almost purely
    reactive the offset is capped and only the imaginary part is matched
    (the residual real mismatch is below the cap's reciprocal).
    """
    cap = 50.0 * gamma_br
    if z.real != 0.0:
        pole = -gamma_br * z.imag / z.real
        if abs(pole) <= cap:
            strength = z.real * (gamma_br ** 2 + pole ** 2) / gamma_br
            return pole, strength
        pole = math.copysign(cap, pole)
    else:
        pole = math.copysign(cap, -z.imag)
    strength = -z.imag * (gamma_br ** 2 + pole ** 2) / pole
    return pole, strength


def _forward_block(gamma_eff: float, detune: float, conj_mag: float,
                   frame: FrameSpec, signal_gain: float) -> SlowFlowParams:
    """Quadrature flow whose pumped point linearizes to the bare envelope.

    With zero saturation and a pure triple-angle cubic the linearization at
    any point on the unit circle is ``alpha = -(damping + i*detuning)``,
    ``|beta| = 3*pull_coeff``; the constant pump forcing is chosen so the
    unit-circle point is the flow's (unique stable) equilibrium.
    """
    pull = conj_mag / 3.0

    def imbalance(theta: float) -> float:
        return (gamma_eff * math.sin(theta) + detune * math.cos(theta)
                + pull * math.cos(3.0 * theta))

    thetas = np.linspace(0.0, math.pi, 257)
    values = [imbalance(t) for t in thetas]
    theta0 = None
    for lo, hi, vlo, vhi in zip(thetas[:-1], thetas[1:], values[:-1],
                                values[1:]):
        if vlo == 0.0:
            theta0 = float(lo)
            break
        if vlo * vhi < 0:
            theta0 = brentq(imbalance, lo, hi, xtol=1e-14)
            break
    if theta0 is None:
        # the imbalance is pi-antiperiodic, so a sign change always exists;
        # the endpoint is the only remaining possibility
        theta0 = math.pi
    point = cmath.exp(1j * theta0)
    forcing = ((gamma_eff + 1j * detune) * point
               + 1j * pull * point.conjugate() ** 3)
    return SlowFlowParams(
        detuning_rate=detune, damping=gamma_eff, sat_coeff=0.0,
        pull_coeff=pull, pump_gain=-2.0 * frame.omega_ref * forcing.real,
        signal_gain=signal_gain, frame=frame, pump_amplitude=1.0)


def subharmonic_reduction(params: CircuitParams, drive: DriveSpec, *,
                          n_harm: int = 24, n_side: int = 21,
                          t_settle: float = 4000.0, rel_tol: float = 1e-10,
                          abs_tol: float = 1e-12) -> SubharmonicReduction:
    """Reduce a driven circuit to its half-harmonic envelope flow.

    Settles the circuit onto its driven orbit, extracts the orbit's
    stiffness-modulation harmonics, and solves the branch variation exactly
    in Fourier space to obtain the averaged envelope gains at half the
    drive's base frequency.  All drive tones must sit on a common harmonic
    grid (integer multiples of the lowest tone); the orbit is assumed to
    share that period, which :attr:`SubharmonicReduction.orbit_residual`
    reports as a relative periodicity defect.

    Requires positive effective damping: the reduction expands about a
    decaying envelope, and the comb instability then re-emerges from the
    branch dressing rather than the bare mode.
    """
    if params.gamma_eff <= 0:
        raise ValueError(
            "effective damping is not positive (gamma_c**2 >= "
            "gamma_x*gamma_p); the half-harmonic envelope has no decaying "
            "reference state")
    omega_base = min(tone.omega for tone in drive.tones)
    for tone in drive.tones:
        ratio = tone.omega / omega_base
        if abs(ratio - round(ratio)) > 1e-6 * max(1.0, ratio):
            raise ValueError(
                f"drive tone at omega={tone.omega} is not a harmonic of the "
                f"lowest tone ({omega_base}); the orbit would not be "
                "periodic at the base frequency")
    omega_half = omega_base / 2.0
    coeffs, residual = _orbit_harmonics(params, drive, omega_base, n_harm,
                                        t_settle, rel_tol, abs_tol)
    gmod = _coupling_harmonics(coeffs, params.eta, min(n_harm, 16))
    mode_gain, conj_gain, branch_rate = _half_harmonic_gains(
        params, gmod, omega_base, n_side)
    detune = (omega_half ** 2 - params.omega_x ** 2) / (2.0 * omega_half)
    dressing = -(mode_gain + params.gamma_eff + 1j * detune)
    gamma_br = branch_rate if branch_rate > 0 else omega_half * 1e-3
    if abs(dressing) < 1e-14:
        pole, strength = 0.0, 0.0
    else:
        pole, strength = _dressing_pole(dressing, gamma_br)
    if pole >= 0:
        loop_order = 0
        omega_mode = omega_half + pole
    else:
        # the order-2 pole formula flips sign, which keeps the represented
        # mode frequency positive for dressings centered below the frame
        loop_order = 2
        omega_mode = omega_half - pole
    resonator = ResonatorSpec(gamma=gamma_br, omega_mode=omega_mode,
                              coupling=abs(strength))
    signal_gain = 2.0 if strength >= 0 else -2.0
    frame = FrameSpec(omega_ref=omega_half, order=0, delta_sig=0.0,
                      delta_pump=0.0)
    forward = _forward_block(params.gamma_eff, detune, abs(conj_gain),
                             frame, signal_gain)
    return SubharmonicReduction(
        slowflow=forward, resonator=resonator, loop_order=loop_order,
        pole_delta=pole, mode_gain=complex(mode_gain),
        conjugate_gain=complex(conj_gain), branch_rate=branch_rate,
        orbit_residual=residual)
