"""Compiled Dormand-Prince 5(4) integration kernels.

Two right-hand sides share one adaptive driver: the circuit equations of
motion (3 states) and the same equations augmented with their variational
flow (3 + 9 states, used for monodromy matrices).  Parameters arrive packed
as ``p = (gamma_x, omega_x**2, gamma_c, gamma_p, eta)`` and drive tones as
an ``(n, 3)`` array of ``(amplitude, omega, phase)``.

The driver uses the standard Dormand-Prince embedded pair with FSAL and the
quartic dense-output interpolant, filling caller-requested sample times as
the integration passes them.  Status codes: 0 success, 1 state overflow
(norm above 1e12), 2 step-size collapse.
"""

import numpy as np
from numba import njit

OVERFLOW_GUARD = 1.0e12

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0

_A = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [1 / 5, 0.0, 0.0, 0.0, 0.0],
    [3 / 40, 9 / 40, 0.0, 0.0, 0.0],
    [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
])
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200,
               22 / 525, -1 / 40])
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608,
     -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933,
     87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304,
     -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408,
     701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883,
     -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


@njit(cache=True)
def drive_voltage(t, tones):
    v = 0.0
    for i in range(tones.shape[0]):
        v += tones[i, 0] * np.sin(tones[i, 1] * t + tones[i, 2])
    return v


@njit(cache=True)
def _rhs(kind, t, y, p, tones, out):
    v_in = drive_voltage(t, tones)
    w_p = (v_in - p[4] * y[2] ** 3 - 2.0 * p[2] * y[1]) / (2.0 * p[3])
    out[0] = y[1]
    out[1] = v_in - 2.0 * p[0] * y[1] - p[1] * y[0] - 2.0 * p[2] * w_p
    out[2] = w_p
    if kind == 1:
        # variational flow: columns of Y stored row-major in y[3:12]
        j11 = -2.0 * p[0] + 2.0 * p[2] ** 2 / p[3]
        j12 = 3.0 * p[4] * p[2] * y[2] ** 2 / p[3]
        j21 = -p[2] / p[3]
        j22 = -3.0 * p[4] * y[2] ** 2 / (2.0 * p[3])
        for c in range(3):
            y0c = y[3 + c]
            y1c = y[6 + c]
            y2c = y[9 + c]
            out[3 + c] = y1c
            out[6 + c] = -p[1] * y0c + j11 * y1c + j12 * y2c
            out[9 + c] = j21 * y1c + j22 * y2c


@njit(cache=True)
def _error_norm(err, y_old, y_new, rtol, atol):
    acc = 0.0
    for i in range(err.size):
        scale = atol + rtol * max(abs(y_old[i]), abs(y_new[i]))
        acc += (err[i] / scale) ** 2
    return np.sqrt(acc / err.size)


@njit(cache=True)
def _initial_step(kind, t0, y0, f0, p, tones, rtol, atol, max_step):
    n = y0.size
    d0 = 0.0
    d1 = 0.0
    for i in range(n):
        scale = atol + rtol * abs(y0[i])
        d0 += (y0[i] / scale) ** 2
        d1 += (f0[i] / scale) ** 2
    d0 = np.sqrt(d0 / n)
    d1 = np.sqrt(d1 / n)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    y1 = y0 + h0 * f0
    f1 = np.empty(n)
    _rhs(kind, t0 + h0, y1, p, tones, f1)
    d2 = 0.0
    for i in range(n):
        scale = atol + rtol * abs(y0[i])
        d2 += ((f1[i] - f0[i]) / scale) ** 2
    d2 = np.sqrt(d2 / n) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100.0 * h0, h1, max_step)


@njit(cache=True)
def integrate_adaptive(kind, p, tones, y0, t0, t_end, rtol, atol, t_eval,
                       max_step):
    """Integrate from t0 to t_end, sampling dense output at t_eval.

    Returns ``(samples, y_final, status, t_stop, n_steps)`` where samples has
    shape (len(t_eval), len(y0)) and t_stop is the failure time when status
    is nonzero (NaN rows mark unfilled samples after a failure).
    """
    n = y0.size
    y = y0.copy()
    t = t0
    K = np.empty((7, n))
    f0 = np.empty(n)
    _rhs(kind, t, y, p, tones, f0)
    for i in range(n):
        K[0, i] = f0[i]
    h = _initial_step(kind, t0, y, f0, p, tones, rtol, atol, max_step)
    out = np.full((t_eval.size, n), np.nan)
    i_eval = 0
    n_steps = 0
    y_stage = np.empty(n)
    f_stage = np.empty(n)
    y_new = np.empty(n)
    err = np.empty(n)
    while t < t_end:
        if h > max_step:
            h = max_step
        if t + h > t_end:
            h = t_end - t
        min_h = 1e-14 * max(1.0, abs(t))
        if h < min_h:
            return out, y, 2, t, n_steps
        # six derivative stages (K[0] holds f(t, y) via FSAL)
        for s in range(1, 6):
            for i in range(n):
                acc = 0.0
                for j in range(s):
                    acc += _A[s, j] * K[j, i]
                y_stage[i] = y[i] + h * acc
            _rhs(kind, t + _C[s] * h, y_stage, p, tones, f_stage)
            for i in range(n):
                K[s, i] = f_stage[i]
        for i in range(n):
            acc = 0.0
            for j in range(6):
                acc += _B[j] * K[j, i]
            y_new[i] = y[i] + h * acc
        _rhs(kind, t + h, y_new, p, tones, f_stage)
        for i in range(n):
            K[6, i] = f_stage[i]
        for i in range(n):
            acc = 0.0
            for j in range(7):
                acc += _E[j] * K[j, i]
            err[i] = h * acc
        enorm = _error_norm(err, y, y_new, rtol, atol)
        if enorm > 1.0:
            h *= max(_MIN_FACTOR, _SAFETY * enorm ** -0.2)
            continue
        # accepted: fill dense output inside (t, t+h]
        t_new = t + h
        while i_eval < t_eval.size and t_eval[i_eval] <= t_new + 1e-14 * max(1.0, abs(t_new)):
            theta = (t_eval[i_eval] - t) / h
            th2 = theta * theta
            for i in range(n):
                acc = 0.0
                for j in range(7):
                    qj = (_P[j, 0] * theta + _P[j, 1] * th2
                          + _P[j, 2] * th2 * theta + _P[j, 3] * th2 * th2)
                    acc += K[j, i] * qj
                out[i_eval, i] = y[i] + h * acc
            i_eval += 1
        t = t_new
        for i in range(n):
            y[i] = y_new[i]
            K[0, i] = K[6, i]
        n_steps += 1
        bad = False
        for i in range(n):
            if not np.isfinite(y[i]) or abs(y[i]) > OVERFLOW_GUARD:
                bad = True
        if bad:
            return out, y, 1, t, n_steps
        if enorm == 0.0:
            factor = _MAX_FACTOR
        else:
            factor = min(_MAX_FACTOR, _SAFETY * enorm ** -0.2)
        h *= factor
    return out, y, 0, t, n_steps
