"""Frequency-domain steady states of the driven circuit.

The periodic response to a single drive tone is computed by harmonic
balance: a truncated Fourier ansatz for both charges, collocated at
equispaced phase points, projected back onto the retained harmonics, and
solved by damped Newton iteration.  On top of the basic solver the module
offers amplitude continuation that steps through fold points by
pseudo-arclength, linearized probe transmission through a pumped orbit
(the probe response lives on the sideband lattice ``omega_probe +
k * omega_pump``), and the small-signal quadrature gain of the envelope
flow about its pumped operating point.

Harmonic coefficients are exposed in complex form ``c_k`` with the
convention ``signal(t) = Re[sum_k c_k exp(i k omega t)]``, matching the
phasor convention of :func:`hypercomb.circuit.linear_transfer`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .circuit import CircuitParams, DriveSpec, Tone, linear_transfer
from .slowflow import SlowFlowParams, fixed_points, slowflow_jacobian

__all__ = [
    "FourierSolution",
    "GainCurve",
    "ProbeResponse",
    "ContinuationPath",
    "NoConvergenceError",
    "BifurcationError",
    "hb_solve",
    "galerkin_residual",
    "continuation",
    "probe_transmission",
    "small_signal_gain",
]

MAX_NEWTON_ITER = 50
FD_STEP = 1e-7
COND_SINGULAR = 1e14
COND_FOLD = 1e8
COND_NEAR_OSCILLATION = 1e10


class NoConvergenceError(RuntimeError):
    """Newton iteration exhausted its budget above tolerance.

    Attributes
    ----------
    residual:
        Norm of the last projected residual.
    """

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class BifurcationError(RuntimeError):
    """The solver Jacobian is numerically singular.

    This happens within rounding distance of a fold or threshold point,
    where the periodic branch loses transversality; use
    :func:`continuation` to step through such points.
    """


@dataclass(frozen=True)
class FourierSolution:
    """Truncated Fourier description of one periodic steady state.

    ``qx[k]`` and ``qp[k]`` are the complex harmonic coefficients of the
    two charges at ``k * omega`` for ``k = 0..order``, with
    ``signal(t) = Re[sum_k c_k exp(i k omega t)]`` (the DC term is real).
    ``residual`` is the norm of the projected collocation residual.
    """

    omega: float
    order: int
    qx: np.ndarray
    qp: np.ndarray
    residual: float
    converged: bool

    def __post_init__(self):
        if self.qx.shape != (self.order + 1,) or self.qp.shape != (self.order + 1,):
            raise ValueError("coefficient arrays must have length order + 1")

    def evaluate(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Reconstruct (q_x, q_p) waveforms at times ``t``."""
        t = np.asarray(t, dtype=float)
        k = np.arange(self.order + 1)
        phases = np.exp(1j * np.outer(t, k) * self.omega)
        return (phases @ self.qx).real, (phases @ self.qp).real

    def to_csv(self, path) -> None:
        """Write rows of (harmonic index, re_qx, im_qx, re_qp, im_qp)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["harmonic", "re_qx", "im_qx", "re_qp", "im_qp"])
            for k in range(self.order + 1):
                writer.writerow([k, repr(float(self.qx[k].real)),
                                 repr(float(self.qx[k].imag)),
                                 repr(float(self.qp[k].real)),
                                 repr(float(self.qp[k].imag))])


# --- collocation machinery -------------------------------------------------

def _basis(order: int, oversample: int = 1):
    """Collocation basis: values, phase-derivative factors, projectors.

    The collocation grid has ``4 * (order + 1) * oversample`` equispaced
    phase points.  Products up to cubic reach harmonic ``3 * order``, which
    stays below the aliasing threshold of this grid for every retained
    harmonic, so the projection is alias-free by construction.
    """
    n_pts = 4 * (order + 1) * oversample
    theta = 2.0 * math.pi * np.arange(n_pts) / n_pts
    k = np.arange(order + 1)
    cos_t = np.cos(np.outer(theta, k))
    sin_t = np.sin(np.outer(theta, k[1:]))
    weights = np.where(k == 0, 1.0, 2.0)
    w_cos = (cos_t * weights).T / n_pts
    w_sin = sin_t.T * 2.0 / n_pts
    return theta, cos_t, sin_t, w_cos, w_sin


def _split(z: np.ndarray, order: int):
    n = order
    ax = z[: n + 1]
    bx = z[n + 1 : 2 * n + 1]
    ap = z[2 * n + 1 : 3 * n + 2]
    bp = z[3 * n + 2 :]
    return ax, bx, ap, bp


def _projected_residual(z, order, params, amplitude, phase, omega, basis):
    """Collocation residual of the equations of motion, projected.

    Row order matches the unknown vector: cosine then sine projections of
    the photonic-branch equation, then the same for the material branch.
    """
    theta, cos_t, sin_t, w_cos, w_sin = basis
    ax, bx, ap, bp = _split(z, order)
    k1 = np.arange(1, order + 1)

    qx = cos_t @ ax + sin_t @ bx
    dqx = omega * (cos_t[:, 1:] @ (k1 * bx) - sin_t @ (k1 * ax[1:]))
    d2qx = -(omega ** 2) * (cos_t[:, 1:] @ (k1 ** 2 * ax[1:])
                            + sin_t @ (k1 ** 2 * bx))
    qp = cos_t @ ap + sin_t @ bp
    dqp = omega * (cos_t[:, 1:] @ (k1 * bp) - sin_t @ (k1 * ap[1:]))

    v_in = amplitude * np.sin(theta + phase)
    r_x = (d2qx + 2.0 * params.gamma_x * dqx + params.omega_x ** 2 * qx
           + 2.0 * params.gamma_c * dqp - v_in)
    r_p = (2.0 * params.gamma_p * dqp + params.eta * qp ** 3
           + 2.0 * params.gamma_c * dqx - v_in)
    return np.concatenate([w_cos @ r_x, w_sin @ r_x, w_cos @ r_p, w_sin @ r_p])


def _fd_jacobian(fun, z, f0):
    jac = np.empty((f0.size, z.size))
    for i in range(z.size):
        h = FD_STEP * max(1.0, abs(z[i]))
        z_step = z.copy()
        z_step[i] += h
        jac[:, i] = (fun(z_step) - f0) / h
    return jac


def _newton(fun, z0, tol):
    """Damped Newton iteration; returns (z, residual norm, converged)."""
    z = np.asarray(z0, dtype=float).copy()
    f = fun(z)
    norm = float(np.linalg.norm(f))
    for _ in range(MAX_NEWTON_ITER):
        if norm <= tol:
            return z, norm, True
        jac = _fd_jacobian(fun, z, f)
        cond = float(np.linalg.cond(jac))
        if not np.isfinite(cond) or cond > COND_SINGULAR:
            raise BifurcationError(
                f"solver Jacobian is numerically singular (condition "
                f"{cond:.3g}); the solution lies within rounding distance "
                "of a fold or threshold point")
        try:
            step = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            raise BifurcationError(
                "solver Jacobian is numerically singular; the solution lies "
                "within rounding distance of a fold or threshold point"
            ) from None
        damping = 1.0
        z_new, f_new, norm_new = z, f, norm
        while damping >= 1.0 / 64.0:
            z_try = z + damping * step
            f_try = fun(z_try)
            norm_try = float(np.linalg.norm(f_try))
            if norm_try < norm:
                z_new, f_new, norm_new = z_try, f_try, norm_try
                break
            damping *= 0.5
        else:
            # no damping level reduced the residual: accept the full step
            # and let the iteration budget decide
            z_new = z + step
            f_new = fun(z_new)
            norm_new = float(np.linalg.norm(f_new))
        z, f, norm = z_new, f_new, norm_new
    if norm <= tol:
        return z, norm, True
    return z, norm, False


def _single_tone(drive: DriveSpec) -> Tone:
    if len(drive.tones) != 1:
        raise ValueError(
            f"hb_solve handles exactly one drive tone, got {len(drive.tones)}; "
            "two-tone pump/probe setups go through probe_transmission")
    return drive.tones[0]


def _pack_guess(order: int, qx: np.ndarray, qp: np.ndarray) -> np.ndarray:
    z = np.zeros(2 * (2 * order + 1))
    ax, bx, ap, bp = _split(z, order)
    m = min(order, qx.size - 1)
    ax[: m + 1] = qx[: m + 1].real
    bx[:m] = -qx[1 : m + 1].imag
    ap[: m + 1] = qp[: m + 1].real
    bp[:m] = -qp[1 : m + 1].imag
    return z


def _linear_guess(params: CircuitParams, tone: Tone, order: int) -> np.ndarray:
    if tone.amplitude == 0.0:
        return np.zeros(2 * (2 * order + 1))
    drive_phasor = tone.amplitude * np.exp(1j * (tone.phase - 0.5 * math.pi))
    try:
        q_x, q_p = linear_transfer(params, tone.omega)
    except ValueError:
        return np.zeros(2 * (2 * order + 1))
    qx = np.zeros(order + 1, dtype=complex)
    qp = np.zeros(order + 1, dtype=complex)
    qx[1] = q_x * drive_phasor
    qp[1] = q_p * drive_phasor
    return _pack_guess(order, qx, qp)


def _solution_from_vector(z, order, omega, residual, converged):
    ax, bx, ap, bp = _split(z, order)
    qx = ax.astype(complex)
    qx[1:] -= 1j * bx
    qp = ap.astype(complex)
    qp[1:] -= 1j * bp
    return FourierSolution(omega=float(omega), order=order, qx=qx, qp=qp,
                           residual=float(residual), converged=converged)


def hb_solve(params: CircuitParams, drive: DriveSpec, order: int = 5,
             tol: float = 1e-9,
             initial_guess: FourierSolution | None = None) -> FourierSolution:
    """Periodic steady state under a single drive tone.

    Newton iteration on the projected collocation residual, warm-started
    from ``initial_guess`` when given and from the linear closed form
    otherwise.  Raises :class:`NoConvergenceError` (carrying the last
    residual norm) after 50 iterations above ``tol`` and
    :class:`BifurcationError` on a singular iteration matrix.
    """
    if not isinstance(order, (int, np.integer)) or order < 1:
        raise ValueError(f"order must be an integer >= 1, got {order!r}")
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    tone = _single_tone(drive)
    order = int(order)
    basis = _basis(order)

    def fun(z):
        return _projected_residual(z, order, params, tone.amplitude,
                                   tone.phase, tone.omega, basis)

    if initial_guess is not None:
        z0 = _pack_guess(order, initial_guess.qx, initial_guess.qp)
    else:
        z0 = _linear_guess(params, tone, order)
    z, res, ok = _newton(fun, z0, tol)
    if not ok:
        raise NoConvergenceError(
            f"harmonic balance did not converge in {MAX_NEWTON_ITER} Newton "
            f"iterations (residual {res:.3e} > tol {tol:.3e})", residual=res)
    return _solution_from_vector(z, order, tone.omega, res, True)


def galerkin_residual(params: CircuitParams, drive: DriveSpec,
                      solution: FourierSolution, oversample: int = 1) -> float:
    """Projected residual norm of a solution, optionally on a finer grid.

    With ``oversample > 1`` the collocation grid is refined by that factor
    while the projection still targets harmonics ``0..order``; for an
    alias-free solution the result matches the reported residual up to
    rounding, so a large discrepancy flags collocation aliasing.
    """
    if oversample < 1:
        raise ValueError("oversample must be >= 1")
    tone = _single_tone(drive)
    basis = _basis(solution.order, oversample=oversample)
    z = _pack_guess(solution.order, solution.qx, solution.qp)
    res = _projected_residual(z, solution.order, params, tone.amplitude,
                              tone.phase, tone.omega, basis)
    return float(np.linalg.norm(res))


# --- amplitude continuation ------------------------------------------------

@dataclass(frozen=True)
class ContinuationPath:
    """Solutions along an amplitude schedule, with any folds encountered.

    ``amplitudes[i]`` is the drive amplitude of ``solutions[i]`` (the
    scheduled values, in order).  ``fold_amplitudes`` lists the drive
    amplitudes where the branch folded back, in traversal order.
    """

    amplitudes: np.ndarray
    solutions: tuple[FourierSolution, ...]
    fold_amplitudes: tuple[float, ...]


def _condition_at(fun, z):
    f = fun(z)
    return float(np.linalg.cond(_fd_jacobian(fun, z, f)))


def _arc_step(fun_za, y0, tangent, ds, tol):
    """One pseudo-arclength predictor-corrector step.

    ``y = [z, amplitude]``; the corrector solves the collocation residual
    together with the hyperplane constraint ``tangent . (y - prediction)``.
    Returns (y, converged, iterations).
    """
    pred = y0 + ds * tangent
    y = pred.copy()
    for iteration in range(12):
        f = fun_za(y[:-1], y[-1])
        g = np.concatenate([f, [float(tangent @ (y - pred))]])
        if np.linalg.norm(g) <= tol:
            return y, True, iteration
        jac = np.zeros((y.size, y.size))
        jac[:-1, :-1] = _fd_jacobian(lambda z: fun_za(z, y[-1]), y[:-1], f)
        h = FD_STEP * max(1.0, abs(y[-1]))
        jac[:-1, -1] = (fun_za(y[:-1], y[-1] + h) - f) / h
        jac[-1, :] = tangent
        try:
            step = np.linalg.solve(jac, -g)
        except np.linalg.LinAlgError:
            return y, False, iteration
        y = y + step
    return y, False, 12


def _fold_amplitude(arc_points: list[tuple[float, float]]) -> float:
    """Amplitude extremum from the last three (arclength, amplitude) points."""
    s = np.array([p[0] for p in arc_points[-3:]])
    a = np.array([p[1] for p in arc_points[-3:]])
    if s.size < 3:
        return float(a[-1])
    coeffs = np.polyfit(s, a, 2)
    if coeffs[0] == 0.0:
        return float(a[-1])
    s_star = -coeffs[1] / (2.0 * coeffs[0])
    if not min(s) <= s_star <= max(s):
        return float(a[-1])
    return float(np.polyval(coeffs, s_star))


def continuation(params: CircuitParams, omega: float, amplitudes,
                 order: int = 5, tol: float = 1e-9,
                 phase: float = 0.0) -> ContinuationPath:
    """Warm-started solves along a monotone drive-amplitude schedule.

    Each scheduled amplitude is solved starting from the previous solution.
    When the branch approaches a fold (iteration matrix condition above
    ``COND_FOLD``, or a failed step), stepping switches to pseudo-arclength
    in the joint (coefficients, amplitude) space, records the fold
    amplitude, follows the branch around the fold, and resumes the
    schedule on the far branch.  Solver failures propagate with the
    schedule index attached.
    """
    amps = np.asarray(amplitudes, dtype=float)
    if amps.ndim != 1 or amps.size < 2:
        raise ValueError("amplitudes must be a 1-d schedule of >= 2 values")
    direction = np.sign(amps[-1] - amps[0])
    diffs = np.diff(amps)
    if direction == 0 or np.any(direction * diffs <= 0):
        raise ValueError("amplitudes must be strictly monotone")
    if np.any(amps < 0):
        raise ValueError("amplitudes must be >= 0")
    basis = _basis(order)

    def fun_za(z, amplitude):
        return _projected_residual(z, order, params, amplitude, phase,
                                   omega, basis)

    solutions: list[FourierSolution] = []
    folds: list[float] = []
    vectors: list[np.ndarray] = []
    i = 0
    secant_valid = False
    while i < amps.size:
        amp = amps[i]
        fun = lambda z: fun_za(z, amp)
        if vectors:
            z0 = vectors[-1]
        else:
            z0 = _linear_guess(params, Tone(amp, omega, phase), order)
        near_fold = False
        try:
            z, res, ok = _newton(fun, z0, tol)
            if not ok:
                raise NoConvergenceError(
                    f"harmonic balance did not converge (residual {res:.3e} "
                    f"> tol {tol:.3e})", residual=res)
            if _condition_at(fun, z) > COND_FOLD:
                near_fold = True
        except NoConvergenceError as err:
            if i == 0:
                raise NoConvergenceError(
                    f"continuation failed at schedule step 0 (amplitude "
                    f"{amp:.6g}): {err}", residual=err.residual) from err
            near_fold = True
        except BifurcationError as err:
            if i == 0:
                raise BifurcationError(
                    f"continuation failed at schedule step 0 (amplitude "
                    f"{amp:.6g}): {err}") from err
            near_fold = True
        if not near_fold and secant_valid and len(vectors) >= 2:
            # A solve can hop to a coexisting branch without ever failing.
            # Flag the step as fold-adjacent when the solution lands far
            # from the secant prediction; a false alarm just means one
            # arclength detour that rejoins without recording a fold.
            step_ratio = (amp - amps[i - 1]) / (amps[i - 1] - amps[i - 2])
            secant = (vectors[-1] - vectors[-2]) * step_ratio
            drift = np.linalg.norm(z - vectors[-1] - secant)
            allowance = (4.0 * np.linalg.norm(secant)
                         + 0.05 * max(1.0, np.linalg.norm(vectors[-1])))
            if drift > allowance:
                near_fold = True
        if not near_fold:
            solutions.append(_solution_from_vector(z, order, omega, res, True))
            vectors.append(z)
            i += 1
            secant_valid = True
            continue

        # --- pseudo-arclength traversal around the fold ---
        if not vectors:
            raise BifurcationError(
                f"continuation starts inside a fold region at schedule "
                f"step 0 (amplitude {amp:.6g})")
        y = np.concatenate([vectors[-1], [amps[i - 1] if i > 0 else amp]])
        if len(vectors) >= 2:
            prev = np.concatenate([vectors[-2], [amps[i - 2]]])
            tangent = y - prev
        else:
            tangent = np.zeros(y.size)
            tangent[-1] = direction
        norm = np.linalg.norm(tangent)
        tangent = tangent / norm if norm > 0 else tangent
        ds = abs(amps[min(i, amps.size - 1)] - amps[i - 1])
        ds_max = 4.0 * ds
        arc_points = [(0.0, float(y[-1]))]
        s_total = 0.0
        resumed = False
        for _ in range(2000):
            y_new, ok, n_iter = _arc_step(fun_za, y, tangent, ds, tol)
            if not ok:
                ds *= 0.5
                if ds < 1e-12 * max(1.0, abs(amps[-1])):
                    raise NoConvergenceError(
                        f"continuation stalled near a fold while targeting "
                        f"schedule step {i} (amplitude {amp:.6g})",
                        residual=math.nan)
                continue
            new_tangent = y_new - y
            new_tangent /= np.linalg.norm(new_tangent)
            s_total += ds
            arc_points.append((s_total, float(y_new[-1])))
            if tangent[-1] * new_tangent[-1] < 0 and abs(tangent[-1]) > 1e-12:
                folds.append(_fold_amplitude(arc_points))
            y, tangent = y_new, new_tangent
            if n_iter <= 3 and ds < ds_max:
                ds = min(ds * 1.3, ds_max)
            elif n_iter >= 8:
                ds *= 0.5
            # resume the schedule once the branch moves through the pending
            # amplitude in the schedule direction
            if (tangent[-1] * direction > 0
                    and (y[-1] - amp) * direction >= 0):
                z_try, res, ok = _newton(lambda z: fun_za(z, amp), y[:-1], tol)
                if ok and _condition_at(lambda z: fun_za(z, amp),
                                        z_try) <= COND_FOLD:
                    solutions.append(
                        _solution_from_vector(z_try, order, omega, res, True))
                    vectors.append(z_try)
                    i += 1
                    # the secant now straddles the fold; skip one jump check
                    secant_valid = False
                    resumed = True
                    break
        if not resumed:
            raise NoConvergenceError(
                f"continuation could not rejoin the schedule at step {i} "
                f"(amplitude {amp:.6g}) after traversing "
                f"{len(folds)} fold(s)", residual=math.nan)
    return ContinuationPath(amplitudes=amps.copy(),
                            solutions=tuple(solutions),
                            fold_amplitudes=tuple(folds))


# --- probe transmission through a pumped orbit -----------------------------

@dataclass(frozen=True)
class ProbeResponse:
    """Complex probe output/input ratio with a conditioning diagnostic.

    ``near_oscillation`` is set when the sideband transfer matrix is so
    ill-conditioned that the pumped system is close to self-oscillation,
    making the linearized ratio unreliable.
    """

    ratio: complex
    near_oscillation: bool
    condition: float

    def __complex__(self):
        return self.ratio

    @property
    def magnitude_db(self) -> float:
        return 20.0 * math.log10(abs(self.ratio))


def _two_sided(coeffs: np.ndarray) -> np.ndarray:
    """Two-sided exponential coefficients from one-sided complex ones.

    Input follows ``Re[sum_k c_k e^{i k w t}]``; output ``p`` satisfies
    ``signal = sum_m p[m] e^{i m w t}`` over ``m = -order..order`` (index
    shifted by ``order``).
    """
    order = coeffs.size - 1
    p = np.zeros(2 * order + 1, dtype=complex)
    p[order] = coeffs[0].real
    for k in range(1, order + 1):
        p[order + k] = 0.5 * coeffs[k]
        p[order - k] = 0.5 * np.conj(coeffs[k])
    return p


def probe_transmission(params: CircuitParams, pump: Tone, probe: Tone,
                       order: int = 5, n_mix: int = 5,
                       tol: float = 1e-9) -> ProbeResponse:
    """Linearized transmission of a weak probe through the pumped circuit.

    The pump-only orbit comes from :func:`hb_solve`; the equations of
    motion are then linearized about it, giving a linear system with
    coefficients periodic at the pump frequency.  The probe response is
    expanded over the sideband lattice ``probe.omega + k * pump.omega``
    for ``|k| <= n_mix`` and solved in one shot; the returned ratio is the
    photonic-charge phasor at the probe frequency divided by the probe
    drive phasor.  The ratio is exactly independent of the probe
    amplitude; keep the physical probe well below the pump (amplitude
    ratio under 1e-3) for the linearization to describe the experiment.
    """
    if probe.amplitude <= 0.0:
        raise ValueError("probe amplitude must be positive")
    if n_mix < 1:
        raise ValueError(f"n_mix must be >= 1, got {n_mix}")
    pump_solution = hb_solve(params, DriveSpec((pump,)), order=order, tol=tol)

    lattice = probe.omega + np.arange(-n_mix, n_mix + 1) * pump.omega
    if np.min(np.abs(lattice)) < 1e-9 * pump.omega:
        raise ValueError(
            "probe frequency is a multiple of the pump frequency: the "
            "sideband lattice touches zero frequency and the expansion "
            "degenerates")

    # modulation of the material branch stiffness by the pump orbit
    p_two = _two_sided(pump_solution.qp)
    g = 3.0 * params.eta * np.convolve(p_two, p_two)
    g_offset = g.size // 2

    n = lattice.size
    d_x = -lattice ** 2 + 2j * params.gamma_x * lattice + params.omega_x ** 2
    cross = 2j * params.gamma_c * lattice
    d_p = 2j * params.gamma_p * lattice

    matrix = np.zeros((2 * n, 2 * n), dtype=complex)
    matrix[:n, :n] = np.diag(d_x)
    matrix[:n, n:] = np.diag(cross)
    matrix[n:, :n] = np.diag(cross)
    matrix[n:, n:] = np.diag(d_p)
    for row in range(n):
        for col in range(n):
            m = row - col
            if abs(m) <= g_offset:
                matrix[n + row, n + col] += g[g_offset + m]

    drive_phasor = probe.amplitude * np.exp(1j * (probe.phase - 0.5 * math.pi))
    rhs = np.zeros(2 * n, dtype=complex)
    rhs[n_mix] = drive_phasor
    rhs[n + n_mix] = drive_phasor

    condition = float(np.linalg.cond(matrix))
    response = np.linalg.solve(matrix, rhs)
    ratio = complex(response[n_mix] / drive_phasor)
    return ProbeResponse(ratio=ratio,
                         near_oscillation=condition > COND_NEAR_OSCILLATION,
                         condition=condition)


# --- small-signal quadrature gain ------------------------------------------

@dataclass(frozen=True)
class GainCurve:
    """Small-signal magnitude response of the pumped envelope flow.

    ``gain[i]`` is the quadrature response magnitude per unit input
    amplitude at relative frequency ``delta[i]``; ``pump_amplitude`` is
    the pump drive of the operating point and ``pump_power`` its square
    (normalized units).
    """

    delta: np.ndarray
    gain: np.ndarray
    pump_amplitude: float

    def __post_init__(self):
        if self.delta.shape != self.gain.shape:
            raise ValueError("delta and gain must have matching shapes")
        if np.any(self.gain < 0):
            raise ValueError("gain values must be >= 0")

    @property
    def pump_power(self) -> float:
        return self.pump_amplitude ** 2

    @property
    def gain_db(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 20.0 * np.log10(self.gain)

    def to_csv(self, path) -> None:
        """Write rows of (delta, gain_db, pump_power)."""
        gain_db = self.gain_db
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["delta", "gain_db", "pump_power"])
            for i in range(self.delta.size):
                writer.writerow([repr(float(self.delta[i])),
                                 repr(float(gain_db[i])),
                                 repr(self.pump_power)])


def small_signal_gain(sf: SlowFlowParams, pump_amplitudes,
                      delta_grid) -> list[GainCurve]:
    """Quadrature gain curves of the pumped envelope flow, one per pump.

    For each pump amplitude the flow's stable operating point is found,
    the flow is linearized there, and the steady response to unit-amplitude
    signal forcing at each relative frequency in ``delta_grid`` is solved
    from the 2x2 linear system.  The gain is the root-sum-square of the
    two quadrature response amplitudes per unit input amplitude.

    Raises ``ValueError`` naming the pump amplitude when no stable
    operating point exists (at or beyond the oscillation threshold).
    """
    deltas = np.asarray(delta_grid, dtype=float)
    if deltas.ndim != 1 or deltas.size == 0:
        raise ValueError("delta_grid must be a non-empty 1-d array")
    amps = np.atleast_1d(np.asarray(pump_amplitudes, dtype=float))
    curves = []
    identity = np.eye(2)
    for amp in amps:
        sf_amp = replace(sf, pump_amplitude=float(amp), signal_amplitude=0.0)
        candidates = fixed_points(sf_amp)
        stable = [q for q, report in candidates
                  if report.classification.startswith("stable")]
        if not stable:
            raise ValueError(
                f"no stable pumped operating point at pump amplitude "
                f"{amp:.6g} (pump power {amp ** 2:.6g}); the flow is at or "
                "beyond its oscillation threshold")
        point = max(stable, key=lambda q: q.magnitude)
        jac = slowflow_jacobian(point.as_array(), sf_amp)
        omega_ref = sf.frame.omega_ref
        gain = np.empty(deltas.size)
        for j, delta in enumerate(deltas):
            drive_coeff = (sf.signal_gain * (omega_ref + delta)
                           / (2.0 * omega_ref))
            forcing = drive_coeff * np.array([-1.0, 1j])
            response = np.linalg.solve(-1j * delta * identity - jac, forcing)
            gain[j] = float(np.linalg.norm(response))
        curves.append(GainCurve(delta=deltas.copy(), gain=gain,
                                pump_amplitude=float(amp)))
    return curves
