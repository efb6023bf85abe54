"""Compiled numerical core: switching-control dynamics, an embedded
Dormand-Prince 5(4) integrator with PI step control and 4th-order dense
output, guard rootfinding, and the hybrid gait-cycle executor.

The integration vector has 11 components: the flattened 10-component system
state ``[x_c, y_c, x_f, y_f, theta, vx_c, vy_c, vx_f, vy_f, omega]`` plus an
accumulated hip-actuator work integral used by the energy-bookkeeping tests.
The work component is excluded from the step-size error norm.

All kernels are ``nogil`` so parameter sweeps can run on a thread pool.
"""

import numpy as np
from numba import njit

# --- parameter vector layout -------------------------------------------------
P_MC, P_MF, P_J, P_D, P_K, P_L0, P_G = 0, 1, 2, 3, 4, 5, 6
P_C, P_B, P_PHI0, P_KGAIN, P_DVPP, P_DELTA, P_VXDES, P_L0SW = 7, 8, 9, 10, 11, 12, 13, 14
P_YMIN, P_TSTANCE, P_TFLIGHT, P_PHILO, P_PHIHI = 15, 16, 17, 18, 19
PV_SIZE = 20

# --- phase / event / status codes ---------------------------------------------
PH_FLIGHT, PH_STANCE = 0, 1

EV_TOUCHDOWN, EV_LIFTOFF, EV_APEX, EV_FALL = 1, 2, 3, 4

ST_OK = 0
ST_FALL = -1
ST_TIMEOUT = -2
ST_SINGULAR = -3
ST_UNDERFLOW = -4
ST_BUFFER = -5
ST_CTRL_SINGULAR = -6
ST_TD_BEFORE_APEX = -7
ST_FOOT_DIG = -8
ST_TIMEOUT_FLIGHT = -21
ST_TIMEOUT_STANCE = -22

MAX_STEP = 0.025
DT_SAMPLE = 1e-3
GUARD_TOL = 1e-12
LEN_SINGULAR = 1e-9

# --- Dormand-Prince 5(4) tableau ----------------------------------------------
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1 / 5, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3 / 40, 9 / 40, 0.0, 0.0, 0.0, 0.0],
    [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0, 0.0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0, 0.0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0.0],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
])
_DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920,
                  -17253 / 339200, 22 / 525, -1 / 40])
# 4th-order dense-output interpolant: y(t0 + u*h) = y0 + h * (K^T P) @ [u, u^2, u^3, u^4]
_DP_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_CHECK_THETAS = np.array([0.2, 0.4, 0.6, 0.8, 1.0])


@njit(cache=True, nogil=True)
def _eval(y, phase, phi_d, pv, dy, aux):
    """Derivative of the 11-vector under switching control.

    Fills ``dy`` and ``aux = (tau, xi)``; returns 0 or an ST_* error code.
    """
    d = pv[P_D]
    st = np.sin(y[4])
    ct = np.cos(y[4])
    hipx = y[0] - d * st
    hipy = y[1] - d * ct
    rlx = hipx - y[2]
    rly = hipy - y[3]
    l2 = rlx * rlx + rly * rly
    l = np.sqrt(l2)
    if l < LEN_SINGULAR:
        return ST_SINGULAR

    vhx = y[5] + y[9] * (-d * ct)
    vhy = y[6] + y[9] * (d * st)

    if phase == PH_FLIGHT:
        xi = pv[P_L0SW] - pv[P_L0]
        phi = np.arctan2(rly, -rlx)
        phi_dot = (-rlx * (vhy - y[8]) + rly * (vhx - y[7])) / l2
        tau = pv[P_C] * (phi_d - phi) - pv[P_B] * phi_dot
    else:
        xi = 0.0
        a = y[4] + pv[P_DELTA]
        rvx = y[0] + pv[P_DVPP] * np.sin(a) - y[2]
        rvy = y[1] + pv[P_DVPP] * np.cos(a) - y[3]
        dot = rvx * rlx + rvy * rly
        if dot <= 1e-12:
            return ST_CTRL_SINGULAR
        f_ax_st = pv[P_K] * (pv[P_L0] - l)
        tau = f_ax_st * l * (rvx * rly - rvy * rlx) / dot

    f_ax = pv[P_K] * (pv[P_L0] + xi - l)
    fx = f_ax * rlx / l
    fy = f_ax * rly / l
    ftx = -tau * rly / l2
    fty = tau * rlx / l2
    gx = fx - ftx
    gy = fy - fty

    dy[0] = y[5]
    dy[1] = y[6]
    dy[4] = y[9]
    dy[5] = gx / pv[P_MC]
    dy[6] = gy / pv[P_MC] - pv[P_G]
    if phase == PH_FLIGHT:
        dy[2] = y[7]
        dy[3] = y[8]
        dy[7] = (-gx) / pv[P_MF]
        dy[8] = (-gy) / pv[P_MF] - pv[P_G]
    else:
        dy[2] = 0.0
        dy[3] = 0.0
        dy[7] = 0.0
        dy[8] = 0.0
    # moment of the hip force about the CoM: d*(G_x*cos - G_y*sin) with the
    # hip above the CoM, r_d = (d*sin, d*cos); clockwise-positive trunk angle
    moment = d * (gx * ct - gy * st)
    dy[9] = -(tau + moment) / pv[P_J]
    # hip actuator power
    dy[10] = -tau * y[9] + ftx * (y[7] - vhx) + fty * (y[8] - vhy)

    aux[0] = tau
    aux[1] = xi
    return ST_OK


@njit(cache=True, nogil=True)
def _leg_length(y, pv):
    d = pv[P_D]
    rlx = y[0] - d * np.sin(y[4]) - y[2]
    rly = y[1] - d * np.cos(y[4]) - y[3]
    return np.sqrt(rlx * rlx + rly * rly)


@njit(cache=True, nogil=True)
def _guard_fall(y, pv):
    return min(y[1] - pv[P_YMIN], np.cos(y[4]))


@njit(cache=True, nogil=True)
def _dense_eval(y0, q, h, u, out):
    u2 = u * u
    u3 = u2 * u
    u4 = u3 * u
    for i in range(11):
        out[i] = y0[i] + h * (q[i, 0] * u + q[i, 1] * u2 + q[i, 2] * u3 + q[i, 3] * u4)


@njit(cache=True, nogil=True)
def _push_sample(rec, nrec, t, y, phase, phi_d, pv):
    idx = nrec[0]
    if idx >= rec.shape[0]:
        return ST_BUFFER
    dy = np.empty(11)
    aux = np.empty(2)
    status = _eval(y, phase, phi_d, pv, dy, aux)
    if status != ST_OK:
        aux[0] = np.nan
        aux[1] = np.nan
    rec[idx, 0] = t
    for i in range(10):
        rec[idx, 1 + i] = y[i]
    rec[idx, 11] = aux[0]
    rec[idx, 12] = aux[1]
    rec[idx, 13] = phase
    nrec[0] = idx + 1
    return ST_OK


@njit(cache=True, nogil=True)
def _push_event(ev, nev, t, kind, y):
    idx = nev[0]
    if idx >= ev.shape[0]:
        return ST_BUFFER
    ev[idx, 0] = t
    ev[idx, 1] = kind
    for i in range(10):
        ev[idx, 2 + i] = y[i]
    nev[0] = idx + 1
    return ST_OK


@njit(cache=True, nogil=True)
def _initial_step(y, phase, phi_d, pv, atol, rtol, t_remaining):
    dy = np.empty(11)
    aux = np.empty(2)
    if _eval(y, phase, phi_d, pv, dy, aux) != ST_OK:
        return 1e-8
    d0 = 0.0
    d1 = 0.0
    for i in range(10):
        sc = atol + rtol * abs(y[i])
        d0 += (y[i] / sc) ** 2
        d1 += (dy[i] / sc) ** 2
    d0 = np.sqrt(d0 / 10.0)
    d1 = np.sqrt(d1 / 10.0)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    y1 = np.empty(11)
    for i in range(11):
        y1[i] = y[i] + h0 * dy[i]
    dy1 = np.empty(11)
    if _eval(y1, phase, phi_d, pv, dy1, aux) != ST_OK:
        return min(h0, MAX_STEP, t_remaining)
    d2 = 0.0
    for i in range(10):
        sc = atol + rtol * abs(y[i])
        d2 += ((dy1[i] - dy[i]) / sc) ** 2
    d2 = np.sqrt(d2 / 10.0) / h0
    dm = max(d1, d2)
    if dm <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / dm) ** 0.2
    return min(100.0 * h0, h1, MAX_STEP, t_remaining)


# guard indices for _integrate_leg internals
_G_FALL, _G_TD, _G_LO, _G_APEX = 0, 1, 2, 3


@njit(cache=True, nogil=True)
def _guard_val(gi, y, pv):
    if gi == _G_FALL:
        return _guard_fall(y, pv)
    if gi == _G_TD:
        return y[3]
    if gi == _G_LO:
        return _leg_length(y, pv) - pv[P_L0]
    return y[6]


@njit(cache=True, nogil=True)
def _integrate_leg(y, t0, phase, phi_d, pv, atol, rtol, t_limit,
                   watch_td, watch_lo, watch_apex,
                   rec_on, rec, nrec, next_s):
    """Integrate one phase until the first guard event, fall, or timeout.

    ``y`` is advanced in place to the final state.  Returns
    ``(status, t_end)`` where status is an EV_* code for a located guard
    event and an ST_* code otherwise.  The fall guard is always active.
    Touchdown fires on descending zero crossings of the foot height and is
    armed only once the foot has been measurably airborne; lift-off fires on
    ascending crossings of ``l - l_0``; apex on descending crossings of the
    trunk vertical velocity.  Crossings are bracketed on checkpoints of the
    dense interpolant and polished by bisection to ``|guard| < 1e-13``; when
    several guards cross inside one bracket the earliest root wins.
    """
    t_end = t0 + t_limit

    # immediate checks at the segment start
    if _guard_fall(y, pv) <= 0.0:
        return ST_FALL, t0
    if watch_td == 1 and y[3] <= GUARD_TOL and y[8] < 0.0:
        return EV_TOUCHDOWN, t0
    if watch_lo == 1 and _leg_length(y, pv) - pv[P_L0] >= -GUARD_TOL:
        return EV_LIFTOFF, t0
    if watch_apex == 1 and abs(y[6]) <= GUARD_TOL:
        return EV_APEX, t0

    watch = np.zeros(4, dtype=np.int64)
    watch[_G_FALL] = 1
    watch[_G_TD] = watch_td
    watch[_G_LO] = watch_lo
    watch[_G_APEX] = watch_apex
    descending = np.array([True, True, False, True])
    g_prev = np.empty(4)
    for gi in range(4):
        g_prev[gi] = _guard_val(gi, y, pv)
    td_armed = y[3] > LEN_SINGULAR

    k = np.empty((7, 11))
    q = np.empty((11, 4))
    y_new = np.empty(11)
    y_stage = np.empty(11)
    y_chk = np.empty(11)
    y_a = np.empty(11)
    dy = np.empty(11)
    aux = np.empty(2)

    status = _eval(y, phase, phi_d, pv, dy, aux)
    if status != ST_OK:
        return status, t0
    for i in range(11):
        k[0, i] = dy[i]

    t = t0
    h = _initial_step(y, phase, phi_d, pv, atol, rtol, t_end - t)
    if not (h > 0.0) or np.isnan(h):
        h = 1e-8
    err_old = 1e-4

    while True:
        if t >= t_end - 1e-14:
            return ST_TIMEOUT, t
        if h < 1e-14 * max(1.0, abs(t)):
            return ST_UNDERFLOW, t
        if t + h > t_end:
            h = t_end - t

        # stages; k1 comes from FSAL across accepted steps
        stage_failed = False
        for s in range(1, 7):
            for i in range(11):
                acc = 0.0
                for j in range(s):
                    acc += _DP_A[s, j] * k[j, i]
                y_stage[i] = y[i] + h * acc
            status = _eval(y_stage, phase, phi_d, pv, dy, aux)
            if status != ST_OK:
                stage_failed = True
                break
            for i in range(11):
                k[s, i] = dy[i]
        if stage_failed:
            h *= 0.2
            continue

        # candidate step and embedded error (work component excluded)
        err = 0.0
        for i in range(11):
            acc = 0.0
            for j in range(7):
                acc += _DP_B[j] * k[j, i]
            y_new[i] = y[i] + h * acc
        for i in range(10):
            eacc = 0.0
            for j in range(7):
                eacc += _DP_E[j] * k[j, i]
            sc = atol + rtol * max(abs(y[i]), abs(y_new[i]))
            err += (h * eacc / sc) ** 2
        err = np.sqrt(err / 10.0)

        if np.isnan(err) or np.isinf(err):
            h *= 0.2
            continue
        if err > 1.0:
            h *= max(0.2, 0.9 * err ** -0.2)
            continue

        # accepted: dense coefficients for guard checks / sampling
        for i in range(11):
            for m in range(4):
                acc = 0.0
                for j in range(7):
                    acc += k[j, i] * _DP_P[j, m]
                q[i, m] = acc

        # scan checkpoints for guard crossings; earliest root wins
        ev_kind = 0
        ev_u = 2.0
        u_prev = 0.0
        for ci in range(_CHECK_THETAS.shape[0]):
            u = _CHECK_THETAS[ci]
            if u >= 1.0:
                for i in range(11):
                    y_chk[i] = y_new[i]
            else:
                _dense_eval(y, q, h, u, y_chk)

            hit = False
            for gi in range(4):
                if watch[gi] == 0:
                    continue
                g = _guard_val(gi, y_chk, pv)
                if gi == _G_TD and not td_armed:
                    if g > LEN_SINGULAR:
                        td_armed = True
                    elif g < -1e-3:
                        return ST_FOOT_DIG, t + u * h
                    g_prev[gi] = g
                    continue
                if descending[gi]:
                    crossed = g_prev[gi] > 0.0 and g <= 0.0
                else:
                    crossed = g_prev[gi] < 0.0 and g >= 0.0
                if crossed:
                    # bisect this guard in [u_prev, u]
                    ua = u_prev
                    ub = u
                    um = ub
                    for _ in range(90):
                        um = 0.5 * (ua + ub)
                        _dense_eval(y, q, h, um, y_a)
                        gm = _guard_val(gi, y_a, pv)
                        if abs(gm) < 1e-13:
                            break
                        past = (gm <= 0.0) if descending[gi] else (gm >= 0.0)
                        if past:
                            ub = um
                        else:
                            ua = um
                    if um < ev_u:
                        ev_u = um
                        if gi == _G_FALL:
                            ev_kind = EV_FALL
                        elif gi == _G_TD:
                            ev_kind = EV_TOUCHDOWN
                        elif gi == _G_LO:
                            ev_kind = EV_LIFTOFF
                        else:
                            ev_kind = EV_APEX
                    hit = True
                g_prev[gi] = g
            if hit:
                break
            u_prev = u

        if ev_kind != 0:
            t_ev = t + ev_u * h
            if rec_on == 1:
                while next_s[0] < t_ev - 1e-12:
                    _dense_eval(y, q, h, (next_s[0] - t) / h, y_a)
                    if _push_sample(rec, nrec, next_s[0], y_a, phase, phi_d, pv) != ST_OK:
                        return ST_BUFFER, t_ev
                    next_s[0] += DT_SAMPLE
            _dense_eval(y, q, h, ev_u, y_chk)
            for i in range(11):
                y[i] = y_chk[i]
            if ev_kind == EV_FALL:
                return ST_FALL, t_ev
            return ev_kind, t_ev

        # no event: dense samples inside (t, t+h]
        if rec_on == 1:
            while next_s[0] <= t + h:
                u = (next_s[0] - t) / h
                if u >= 1.0:
                    for i in range(11):
                        y_a[i] = y_new[i]
                else:
                    _dense_eval(y, q, h, u, y_a)
                if _push_sample(rec, nrec, next_s[0], y_a, phase, phi_d, pv) != ST_OK:
                    return ST_BUFFER, t + h
                next_s[0] += DT_SAMPLE

        for i in range(11):
            y[i] = y_new[i]
            k[0, i] = k[6, i]
        t += h

        # step controller with Hairer-style error-history smoothing
        ee = max(err, 1e-10)
        fac = ee ** -0.17 * err_old ** 0.04
        fac = max(0.2, min(10.0, 0.9 * fac))
        h = min(h * fac, MAX_STEP)
        err_old = ee


@njit(cache=True, nogil=True)
def _clamp_phi(phi, pv):
    if phi < pv[P_PHILO]:
        return pv[P_PHILO], 1.0
    if phi > pv[P_PHIHI]:
        return pv[P_PHIHI], 1.0
    return phi, 0.0


# out layout for _gait_cycle
O_TEND, O_TDT, O_LOT, O_APEXT, O_STDUR, O_FLDUR = 0, 1, 2, 3, 4, 5
O_EINJ, O_ELOSS, O_PHIUSED, O_PHINEXT, O_CLAMPED = 6, 7, 8, 9, 10
OUT_SIZE = 12


@njit(cache=True, nogil=True)
def _gait_cycle(y, t0, phi_d, pv, atol, rtol,
                rec_on, rec, nrec, next_s, ev, nev,
                out, td_state, lo_state):
    """One gait cycle: apex -> touchdown -> stance -> lift-off -> next apex.

    ``y`` must be an apex flight state; on success it holds the next apex.
    ``phi_d`` is the set point of the swing phase the apex sits in.  Eq-style
    per-cycle bookkeeping lands in ``out``; the post-impact touchdown state
    and lift-off state are stored in ``td_state``/``lo_state``.
    """
    out[O_PHIUSED] = phi_d

    status, t = _integrate_leg(y, t0, PH_FLIGHT, phi_d, pv, atol, rtol,
                               pv[P_TFLIGHT], 1, 0, 0,
                               rec_on, rec, nrec, next_s)
    if status != EV_TOUCHDOWN:
        if status == ST_FALL:
            _push_event(ev, nev, t, EV_FALL, y)
            if rec_on == 1:
                _push_sample(rec, nrec, t, y, PH_FLIGHT, phi_d, pv)
        if status == ST_TIMEOUT:
            status = ST_TIMEOUT_FLIGHT
        out[O_TEND] = t
        return status
    flight_a = t - t0
    out[O_TDT] = t
    _push_event(ev, nev, t, EV_TOUCHDOWN, y)
    if rec_on == 1:
        if _push_sample(rec, nrec, t, y, PH_FLIGHT, phi_d, pv) != ST_OK:
            return ST_BUFFER

    # plastic impact on the foot, then control switch xi -> 0
    impact_loss = 0.5 * pv[P_MF] * (y[7] * y[7] + y[8] * y[8])
    y[3] = 0.0
    y[7] = 0.0
    y[8] = 0.0
    l_td = _leg_length(y, pv)
    e_inj = 0.5 * pv[P_K] * ((l_td - pv[P_L0]) ** 2 - (l_td - pv[P_L0SW]) ** 2)
    phi_next, clamped = _clamp_phi(
        pv[P_PHI0] + pv[P_KGAIN] * (pv[P_VXDES] - y[5]), pv)
    for i in range(11):
        td_state[i] = y[i]

    status, t = _integrate_leg(y, t, PH_STANCE, phi_next, pv, atol, rtol,
                               pv[P_TSTANCE], 0, 1, 0,
                               rec_on, rec, nrec, next_s)
    if status != EV_LIFTOFF:
        if status == ST_FALL:
            _push_event(ev, nev, t, EV_FALL, y)
            if rec_on == 1:
                _push_sample(rec, nrec, t, y, PH_STANCE, phi_next, pv)
        if status == ST_TIMEOUT:
            status = ST_TIMEOUT_STANCE
        out[O_TEND] = t
        return status
    out[O_LOT] = t
    out[O_STDUR] = t - out[O_TDT]
    _push_event(ev, nev, t, EV_LIFTOFF, y)
    if rec_on == 1:
        if _push_sample(rec, nrec, t, y, PH_STANCE, phi_next, pv) != ST_OK:
            return ST_BUFFER

    # control switch xi -> l0_swing - l_0 at lift-off
    l_lo = _leg_length(y, pv)
    e_inj += 0.5 * pv[P_K] * ((l_lo - pv[P_L0SW]) ** 2 - (l_lo - pv[P_L0]) ** 2)
    for i in range(11):
        lo_state[i] = y[i]

    status, t = _integrate_leg(y, t, PH_FLIGHT, phi_next, pv, atol, rtol,
                               pv[P_TFLIGHT], 1, 0, 1,
                               rec_on, rec, nrec, next_s)
    if status != EV_APEX:
        if status == ST_FALL:
            _push_event(ev, nev, t, EV_FALL, y)
            if rec_on == 1:
                _push_sample(rec, nrec, t, y, PH_FLIGHT, phi_next, pv)
        elif status == EV_TOUCHDOWN:
            status = ST_TD_BEFORE_APEX
        if status == ST_TIMEOUT:
            status = ST_TIMEOUT_FLIGHT
        out[O_TEND] = t
        return status
    _push_event(ev, nev, t, EV_APEX, y)
    if rec_on == 1:
        if _push_sample(rec, nrec, t, y, PH_FLIGHT, phi_next, pv) != ST_OK:
            return ST_BUFFER

    out[O_TEND] = t
    out[O_APEXT] = t
    out[O_FLDUR] = flight_a + (t - out[O_LOT])
    out[O_EINJ] = e_inj
    out[O_ELOSS] = impact_loss
    out[O_PHINEXT] = phi_next
    out[O_CLAMPED] = clamped
    return EV_APEX


@njit(cache=True, nogil=True)
def _settle_to_apex(y, t0, phi_d, pv, atol, rtol,
                    rec_on, rec, nrec, next_s, ev, nev):
    """Advance an arbitrary flight state to the next apex (partial cycle).

    Touchdowns on the way are executed in full (impact, set-point update,
    stance, lift-off).  Returns ``(status, t, phi_d)``.
    """
    if abs(y[6]) <= GUARD_TOL:
        return EV_APEX, t0, phi_d
    t = t0
    for _ in range(10):
        status, t = _integrate_leg(y, t, PH_FLIGHT, phi_d, pv, atol, rtol,
                                   pv[P_TFLIGHT], 1, 0, 1,
                                   rec_on, rec, nrec, next_s)
        if status == EV_APEX:
            _push_event(ev, nev, t, EV_APEX, y)
            if rec_on == 1:
                _push_sample(rec, nrec, t, y, PH_FLIGHT, phi_d, pv)
            return EV_APEX, t, phi_d
        if status == EV_TOUCHDOWN:
            _push_event(ev, nev, t, EV_TOUCHDOWN, y)
            if rec_on == 1:
                _push_sample(rec, nrec, t, y, PH_FLIGHT, phi_d, pv)
            y[3] = 0.0
            y[7] = 0.0
            y[8] = 0.0
            phi_d, _ = _clamp_phi(
                pv[P_PHI0] + pv[P_KGAIN] * (pv[P_VXDES] - y[5]), pv)
            status, t = _integrate_leg(y, t, PH_STANCE, phi_d, pv, atol, rtol,
                                       pv[P_TSTANCE], 0, 1, 0,
                                       rec_on, rec, nrec, next_s)
            if status != EV_LIFTOFF:
                if status == ST_FALL:
                    _push_event(ev, nev, t, EV_FALL, y)
                if status == ST_TIMEOUT:
                    status = ST_TIMEOUT_STANCE
                return status, t, phi_d
            _push_event(ev, nev, t, EV_LIFTOFF, y)
            if rec_on == 1:
                _push_sample(rec, nrec, t, y, PH_STANCE, phi_d, pv)
            continue
        if status == ST_FALL:
            _push_event(ev, nev, t, EV_FALL, y)
        if status == ST_TIMEOUT:
            status = ST_TIMEOUT_FLIGHT
        return status, t, phi_d
    return ST_TIMEOUT_FLIGHT, t, phi_d


# phi_d handling modes for _run_cycles
PHI_RESEED, PHI_PERSISTENT, PHI_FROZEN = 0, 1, 2


@njit(cache=True, nogil=True)
def _run_cycles(y, t0, phi_mode, phi_d_init, n_cycles, renorm_x,
                pv, atol, rtol,
                rec_on, rec, nrec, next_s, ev, nev,
                cyc, td_states, lo_states, apex_states):
    """Chain gait cycles from an apex state.

    phi_mode selects how the swing set point evolves: PHI_RESEED recomputes
    it from each apex velocity (self-contained return-map semantics),
    PHI_PERSISTENT carries the touchdown updates across cycles (simulation
    semantics), PHI_FROZEN pins it at phi_0.  Returns
    ``(status, completed, t_end, phi_d)`` with status 0 when all cycles ran.
    """
    t = t0
    phi_d = phi_d_init
    out = np.empty(OUT_SIZE)
    for i in range(11):
        apex_states[0, i] = y[i]
    for n in range(n_cycles):
        if phi_mode == PHI_RESEED:
            phi_d, _ = _clamp_phi(
                pv[P_PHI0] + pv[P_KGAIN] * (pv[P_VXDES] - y[5]), pv)
        elif phi_mode == PHI_FROZEN:
            phi_d = pv[P_PHI0]
        for i in range(OUT_SIZE):
            out[i] = 0.0
        status = _gait_cycle(y, t, phi_d, pv, atol, rtol,
                             rec_on, rec, nrec, next_s, ev, nev,
                             out, td_states[n], lo_states[n])
        for i in range(OUT_SIZE):
            cyc[n, i] = out[i]
        if status != EV_APEX:
            return status, n, out[O_TEND], phi_d
        t = out[O_TEND]
        if phi_mode == PHI_PERSISTENT:
            phi_d = out[O_PHINEXT]
        if renorm_x == 1:
            shift = y[0]
            y[0] = 0.0
            y[2] -= shift
        for i in range(11):
            apex_states[n + 1, i] = y[i]
    return ST_OK, n_cycles, t, phi_d


@njit(cache=True, nogil=True)
def _steps_to_fall(y, pv, atol, rtol, max_steps):
    """Count completed return-map iterations before failure (capped)."""
    rec = np.empty((1, 14))
    nrec = np.zeros(1, dtype=np.int64)
    next_s = np.zeros(1)
    ev = np.empty((0, 12))
    nev = np.zeros(1, dtype=np.int64)
    cyc = np.empty((max_steps, OUT_SIZE))
    td = np.empty((max_steps, 11))
    lo = np.empty((max_steps, 11))
    ap = np.empty((max_steps + 1, 11))
    status, n, _, _ = _run_cycles(y, 0.0, PHI_RESEED, pv[P_PHI0], max_steps, 1,
                                  pv, atol, rtol,
                                  0, rec, nrec, next_s, ev, nev,
                                  cyc, td, lo, ap)
    return n
