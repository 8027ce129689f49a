"""Lumped-element model of a driven photonic resonance coupled to a
dissipative nonlinear branch.

The photonic branch is a series resonance (charge ``q_x``, rate ``v_x``);
the material branch is a single nonlinear reactance with dissipation
(charge ``q_p``, no inertia).  In normalized units the equations of motion
are

    dq_x/dt = v_x
    dv_x/dt = V(t) - 2*gamma_x*v_x - omega_x**2*q_x - 2*gamma_c*w_p
    dq_p/dt = w_p = (V(t) - eta*q_p**3 - 2*gamma_c*v_x) / (2*gamma_p)

with drive voltage ``V(t)`` applied to both branches.  Because the material
branch carries no inertia, its charge rate follows algebraically from the
voltage balance; ``gamma_p = 0`` would make that balance purely algebraic
and is rejected.

Energy bookkeeping uses

    H = v_x**2 / 2 + omega_x**2 * q_x**2 / 2 + eta * q_p**4 / 4

which is conserved by the flow when ``gamma_x = gamma_c = eta = 0`` and the
drive is off.

In the linear limit (``eta = 0``) the steady response to a unit drive at
angular frequency ``w`` has the closed form implemented by
:func:`linear_transfer`.  A notable identity: for ``gamma_p == gamma_c``
the photonic response ``Q_x`` vanishes at every frequency and
``Q_x + Q_p = 1/(2j*gamma_c*w)``, flat in detuning - the mode is invisible
at linear order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CircuitParams",
    "Tone",
    "DriveSpec",
    "StateVector",
    "EnergyBreakdown",
    "eval_rhs",
    "energy",
    "linear_transfer",
]


@dataclass(frozen=True)
class CircuitParams:
    """The five model constants, all in normalized (angular-frequency) units.

    gamma_x : photonic damping rate
    omega_x : photonic mode angular frequency
    gamma_c : coupling rate between the branches
    gamma_p : material-branch damping rate
    eta     : cubic nonlinearity coefficient (voltage per charge cubed)
    """

    gamma_x: float
    omega_x: float
    gamma_c: float
    gamma_p: float
    eta: float = 0.0

    def __post_init__(self):
        for name in ("gamma_x", "omega_x", "gamma_c", "gamma_p", "eta"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
        if self.gamma_x < 0:
            raise ValueError(f"gamma_x must be >= 0, got {self.gamma_x}")
        if self.omega_x <= 0:
            raise ValueError(f"omega_x must be > 0, got {self.omega_x}")
        if self.gamma_c < 0:
            raise ValueError(f"gamma_c must be >= 0, got {self.gamma_c}")
        if self.gamma_p <= 0:
            raise ValueError(
                "gamma_p must be > 0 (at gamma_p = 0 the material branch "
                f"becomes algebraic and the ODE form is singular), got {self.gamma_p}"
            )
        if self.eta < 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")

    @property
    def gamma_eff(self) -> float:
        """Effective photonic damping gamma_x - gamma_c**2/gamma_p.

        This is the linewidth of the linearized coupled system; it must be
        positive for the undriven circuit to be stable.
        """
        return self.gamma_x - self.gamma_c**2 / self.gamma_p

    def as_array(self) -> np.ndarray:
        """Pack as (gamma_x, omega_x**2, gamma_c, gamma_p, eta) for kernels."""
        return np.array(
            [self.gamma_x, self.omega_x**2, self.gamma_c, self.gamma_p, self.eta],
            dtype=float,
        )


@dataclass(frozen=True)
class Tone:
    """One drive tone ``amplitude * sin(omega*t + phase)``."""

    amplitude: float
    omega: float
    phase: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.amplitude) and math.isfinite(self.omega)
                and math.isfinite(self.phase)):
            raise ValueError("tone parameters must be finite")
        if self.amplitude < 0:
            raise ValueError(f"tone amplitude must be >= 0, got {self.amplitude}")
        if self.omega <= 0:
            raise ValueError(f"tone frequency must be > 0, got {self.omega}")


@dataclass(frozen=True)
class DriveSpec:
    """Multi-tone drive; an empty tone list means zero drive."""

    tones: tuple[Tone, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tones", tuple(
            t if isinstance(t, Tone) else Tone(*t) for t in self.tones
        ))

    @classmethod
    def single(cls, amplitude: float, omega: float, phase: float = 0.0) -> "DriveSpec":
        return cls((Tone(amplitude, omega, phase),))

    @classmethod
    def none(cls) -> "DriveSpec":
        return cls(())

    @property
    def is_zero(self) -> bool:
        return not self.tones or all(t.amplitude == 0.0 for t in self.tones)

    def voltage(self, t):
        """Drive voltage at time(s) t: sum of amplitude*sin(omega*t + phase)."""
        t = np.asarray(t, dtype=float)
        v = np.zeros_like(t)
        for tone in self.tones:
            v = v + tone.amplitude * np.sin(tone.omega * t + tone.phase)
        return v if v.shape else float(v)

    def as_array(self) -> np.ndarray:
        """Pack tones as an (n, 3) array of (amplitude, omega, phase)."""
        if not self.tones:
            return np.zeros((0, 3))
        return np.array(
            [[t.amplitude, t.omega, t.phase] for t in self.tones], dtype=float
        )


@dataclass(frozen=True)
class StateVector:
    """Instantaneous state: photonic charge, its rate, material charge."""

    q_x: float = 0.0
    v_x: float = 0.0
    q_p: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.q_x) and math.isfinite(self.v_x)
                and math.isfinite(self.q_p)):
            raise ValueError("state components must be finite")

    def as_array(self) -> np.ndarray:
        # dtype forced: integer-valued fields would otherwise produce an int
        # array, and the compiled stepper would silently truncate every state
        # update to integers.
        return np.array([self.q_x, self.v_x, self.q_p], dtype=float)

    @classmethod
    def from_array(cls, y) -> "StateVector":
        return cls(float(y[0]), float(y[1]), float(y[2]))


@dataclass(frozen=True)
class EnergyBreakdown:
    """Energy terms of the state; ``total`` is their exact sum."""

    kinetic: float
    potential: float
    quartic: float
    total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "total", self.kinetic + self.potential + self.quartic)


def eval_rhs(state: StateVector, t: float, params: CircuitParams,
             drive: DriveSpec) -> np.ndarray:
    """Time derivative (dq_x/dt, dv_x/dt, dq_p/dt) of the equations of motion.

    Pure reference implementation; the compiled integration kernel in
    :mod:`hypercomb.timedomain` reproduces it exactly and is tested against it.
    """
    if not math.isfinite(t):
        raise ValueError(f"t must be finite, got {t!r}")
    if isinstance(state, StateVector):
        q_x, v_x, q_p = state.q_x, state.v_x, state.q_p
    else:
        q_x, v_x, q_p = (float(c) for c in state)
        if not all(math.isfinite(c) for c in (q_x, v_x, q_p)):
            raise ValueError("state components must be finite")
    v_in = drive.voltage(t)
    w_p = (v_in - params.eta * q_p**3 - 2.0 * params.gamma_c * v_x) / (2.0 * params.gamma_p)
    a_x = v_in - 2.0 * params.gamma_x * v_x - params.omega_x**2 * q_x \
        - 2.0 * params.gamma_c * w_p
    return np.array([v_x, a_x, w_p])


def energy(state: StateVector, params: CircuitParams) -> EnergyBreakdown:
    """Energy split: kinetic v_x**2/2, potential omega_x**2 q_x**2/2, quartic eta q_p**4/4."""
    if isinstance(state, StateVector):
        q_x, v_x, q_p = state.q_x, state.v_x, state.q_p
    else:
        q_x, v_x, q_p = (float(c) for c in state)
    return EnergyBreakdown(
        kinetic=0.5 * v_x**2,
        potential=0.5 * params.omega_x**2 * q_x**2,
        quartic=0.25 * params.eta * q_p**4,
    )


def linear_transfer(params: CircuitParams, omega) -> tuple[complex, complex]:
    """Frequency-domain response (Q_x, Q_p) per unit drive in the linear limit.

    The nonlinearity is ignored (eta treated as 0).  With phasor convention
    signal = Re[Q * exp(1j*omega*t)] and unit drive V = 1:

        Q_x * (-omega**2 + 2j*gamma_x*omega + omega_x**2
               - 2j*(gamma_c**2/gamma_p)*omega) = 1 - gamma_c/gamma_p
        Q_p = (1 - 2j*gamma_c*omega*Q_x) / (2j*gamma_p*omega)

    Accepts a scalar or an array of frequencies.  omega = 0 is rejected.
    """
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0):
        raise ValueError("omega must be > 0")
    g_x, g_c, g_p = params.gamma_x, params.gamma_c, params.gamma_p
    numer = 1.0 - g_c / g_p
    if numer == 0.0:
        # extinct mode: Q_x vanishes identically, including at the (then
        # marginal) bare resonance where the denominator also hits zero
        q_x = np.zeros(omega.shape, dtype=complex)
    else:
        denom = (-omega**2 + 2j * g_x * omega + params.omega_x**2
                 - 2j * (g_c**2 / g_p) * omega)
        if np.any(denom == 0):
            raise ValueError(
                "undamped resonance (effective damping zero at the drive "
                "frequency): no bounded steady response")
        q_x = numer / denom
    q_p = (1.0 - 2j * g_c * omega * q_x) / (2j * g_p * omega)
    if q_p.shape:
        return q_x, q_p
    return complex(q_x), complex(q_p)
