"""Event-located hybrid integration: flight -> touchdown -> stance -> lift-off.

Wraps the compiled kernels with the state/record containers used by the rest
of the package.  Integration uses an embedded Runge-Kutta 5(4) pair with
dense output; guard zero crossings are bracketed and polished on the dense
interpolant.  Dense trajectories are sampled on a fixed 1 ms grid plus the
exact event states; event rows carry the pre-transition state and the phase
that was active approaching the event.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K
from .control import ControllerState, update_angle_of_attack
from .model import ControlParams, ModelParams, Phase, SystemState

__all__ = [
    "ABS_TOL",
    "REL_TOL",
    "CycleRecord",
    "EventKind",
    "FallOutcome",
    "GaitEvent",
    "IntegrationError",
    "SimulationOutcome",
    "Trajectory",
    "integrate_until_event",
    "nominal_apex_state",
    "param_vector",
    "simulate",
    "step_gait_cycle",
]

# default solver tolerances
ABS_TOL = 1e-10
REL_TOL = 1e-9

# fall envelope: conservative bounds far outside the nominal cycle
FALL_MIN_HEIGHT = 0.4
MAX_STANCE_TIME = 2.0
MAX_FLIGHT_TIME = 3.0

_REASONS = {
    K.ST_FALL: "fall_guard",
    K.ST_TIMEOUT: "timeout",
    K.ST_TIMEOUT_FLIGHT: "flight_timeout",
    K.ST_TIMEOUT_STANCE: "stance_timeout",
    K.ST_SINGULAR: "singular_configuration",
    K.ST_UNDERFLOW: "step_underflow",
    K.ST_BUFFER: "record_buffer_full",
    K.ST_CTRL_SINGULAR: "controller_singularity",
    K.ST_TD_BEFORE_APEX: "touchdown_before_apex",
    K.ST_FOOT_DIG: "foot_below_ground",
}


class IntegrationError(RuntimeError):
    """Integrator failure that is not representable as a gait outcome."""


class EventKind(Enum):
    TOUCHDOWN = K.EV_TOUCHDOWN
    LIFTOFF = K.EV_LIFTOFF
    APEX = K.EV_APEX
    FALL = K.EV_FALL


@dataclass(frozen=True)
class GaitEvent:
    kind: EventKind
    time: float
    state: SystemState


@dataclass(frozen=True)
class CycleRecord:
    """Per-cycle summary.

    ``apex_state`` is the apex closing the cycle; ``touchdown_state`` is the
    post-impact state stance starts from.  ``energy_injected`` is the total
    elastic-energy jump of the two rest-length switches (touchdown and
    lift-off) performed by the leg actuator.
    """

    apex_state: SystemState
    touchdown_state: SystemState
    phi_d_used: float
    stance_duration: float
    flight_duration: float
    energy_injected: float


@dataclass(frozen=True)
class FallOutcome:
    """Failed gait cycle: why, when, and in which state."""

    reason: str
    time: float
    state: SystemState
    cycle_index: int | None = None


@dataclass(frozen=True)
class SimulationOutcome:
    completed: bool
    cycles_completed: int
    fall: FallOutcome | None = None


@dataclass
class Trajectory:
    """Dense 1 ms samples plus exact event states.

    ``states`` rows follow the canonical 10-vector ordering; ``phases`` holds
    0 for flight and 1 for stance.
    """

    times: np.ndarray
    states: np.ndarray
    taus: np.ndarray
    xis: np.ndarray
    phases: np.ndarray
    events: list[GaitEvent]

    def __post_init__(self):
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise RuntimeError("trajectory sample times are not strictly increasing")

    def __len__(self) -> int:
        return int(self.times.size)

    def state(self, i: int) -> SystemState:
        return SystemState.from_vector(self.states[i])

    def leg_length(self, mp: ModelParams) -> np.ndarray:
        """Hip-to-foot distance at every sample."""
        th = self.states[:, 4]
        hx = self.states[:, 0] + mp.d * np.sin(th)
        hy = self.states[:, 1] + mp.d * np.cos(th)
        return np.hypot(hx - self.states[:, 2], hy - self.states[:, 3])

    def write_csv(self, path) -> None:
        header = "t,x_c,y_c,x_f,y_f,theta,vx_c,vy_c,vx_f,vy_f,omega,tau,xi,phase"
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for i in range(len(self)):
                cols = [_fmt(self.times[i])]
                cols += [_fmt(v) for v in self.states[i]]
                cols += [_fmt(self.taus[i]), _fmt(self.xis[i])]
                cols.append("stance" if self.phases[i] else "flight")
                fh.write(",".join(cols) + "\n")

    def write_events_csv(self, path) -> None:
        header = "t,kind,x_c,y_c,x_f,y_f,theta,vx_c,vy_c,vx_f,vy_f,omega"
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for e in self.events:
                cols = [_fmt(e.time), e.kind.name.lower()]
                cols += [_fmt(v) for v in e.state.as_vector()]
                fh.write(",".join(cols) + "\n")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def param_vector(mp: ModelParams, cp: ControlParams) -> np.ndarray:
    """Flatten the parameter sets into the kernel layout."""
    pv = np.empty(K.PV_SIZE)
    pv[K.P_MC] = mp.m_c
    pv[K.P_MF] = mp.m_f
    pv[K.P_J] = mp.J
    pv[K.P_D] = mp.d
    pv[K.P_K] = mp.k
    pv[K.P_L0] = mp.l_0
    pv[K.P_G] = mp.g
    pv[K.P_C] = cp.c
    pv[K.P_B] = cp.b
    pv[K.P_PHI0] = cp.phi_0
    pv[K.P_KGAIN] = cp.K
    pv[K.P_DVPP] = cp.d_vpp
    pv[K.P_DELTA] = cp.delta
    pv[K.P_VXDES] = cp.vx_des
    pv[K.P_L0SW] = cp.l0_swing
    pv[K.P_YMIN] = FALL_MIN_HEIGHT
    pv[K.P_TSTANCE] = MAX_STANCE_TIME
    pv[K.P_TFLIGHT] = MAX_FLIGHT_TIME
    pv[K.P_PHILO] = 0.1
    pv[K.P_PHIHI] = math.pi - 0.1
    return pv


def _y11(state: SystemState) -> np.ndarray:
    y = np.zeros(11)
    y[:10] = state.as_vector()
    return y


class _Buffers:
    """Preallocated record/event arrays shared by the kernel calls."""

    def __init__(self, record: bool, t_budget: float, n_events: int):
        if record:
            cap = int(t_budget / K.DT_SAMPLE) + n_events + 64
            self.rec_on = 1
            self.rec = np.empty((cap, 14))
        else:
            self.rec_on = 0
            self.rec = np.empty((1, 14))
        self.nrec = np.zeros(1, dtype=np.int64)
        self.next_s = np.zeros(1)
        self.ev = np.empty((n_events, 12))
        self.nev = np.zeros(1, dtype=np.int64)

    def start(self, t0: float, y: np.ndarray, phase: int, phi_d: float,
              pv: np.ndarray) -> None:
        if self.rec_on:
            K._push_sample(self.rec, self.nrec, t0, y, phase, phi_d, pv)
            self.next_s[0] = t0 + K.DT_SAMPLE

    def trajectory(self) -> Trajectory:
        n = int(self.nrec[0])
        rows = self.rec[:n]
        events = []
        for i in range(int(self.nev[0])):
            events.append(GaitEvent(
                kind=EventKind(int(self.ev[i, 1])),
                time=float(self.ev[i, 0]),
                state=SystemState.from_vector(self.ev[i, 2:12]),
            ))
        return Trajectory(
            times=rows[:, 0].copy(),
            states=rows[:, 1:11].copy(),
            taus=rows[:, 11].copy(),
            xis=rows[:, 12].copy(),
            phases=rows[:, 13].astype(int),
            events=events,
        )


def nominal_apex_state(mp: ModelParams, cp: ControlParams,
                       apex_height: float = 1.05,
                       vx: float | None = None) -> SystemState:
    """Canonical apex start: upright trunk, swing leg at rest at phi_0.

    The CoM sits at ``apex_height`` with forward velocity ``vx`` (the desired
    velocity when omitted); the foot hangs on the leg axis at the swing rest
    length under the angle of attack ``phi_0``, moving with the trunk so the
    spring starts relaxed and quiet.
    """
    vx = cp.vx_des if vx is None else float(vx)
    hip = np.array([0.0, apex_height + mp.d])
    foot = hip + cp.l0_swing * np.array([math.cos(cp.phi_0), -math.sin(cp.phi_0)])
    if foot[1] <= 0.0:
        raise ValueError(f"apex height {apex_height} puts the foot underground")
    v = np.array([vx, 0.0])
    return SystemState(r_c=np.array([0.0, apex_height]), r_f=foot, theta=0.0,
                       v_c=v, v_f=v.copy(), omega=0.0)


def integrate_until_event(state: SystemState, phase: Phase,
                          controller: ControllerState,
                          mp: ModelParams, cp: ControlParams,
                          guards: Iterable[EventKind] = (EventKind.TOUCHDOWN,),
                          abs_tol: float = ABS_TOL, rel_tol: float = REL_TOL,
                          t_max: float = MAX_FLIGHT_TIME,
                          record: bool = True) -> tuple[SystemState, GaitEvent, Trajectory]:
    """Integrate one phase until the first watched guard crossing.

    The fall guard is always active in addition to ``guards``.  A guard that
    is already satisfied at the start yields an immediate event at t = 0.

    Raises
    ------
    IntegrationError
        On timeout, step-size underflow, or singular configurations.
    """
    guards = set(guards)
    pv = param_vector(mp, cp)
    y = _y11(state)
    buf = _Buffers(record, t_max + 0.1, 8)
    ph = K.PH_STANCE if phase is Phase.STANCE else K.PH_FLIGHT
    buf.start(0.0, y, ph, controller.phi_des, pv)
    status, t = K._integrate_leg(
        y, 0.0, ph, controller.phi_des, pv, abs_tol, rel_tol, t_max,
        int(EventKind.TOUCHDOWN in guards), int(EventKind.LIFTOFF in guards),
        int(EventKind.APEX in guards),
        buf.rec_on, buf.rec, buf.nrec, buf.next_s)
    if status == K.ST_FALL:
        status = K.EV_FALL
    if status <= 0:
        raise IntegrationError(_REASONS.get(status, f"status {status}"))
    end = SystemState.from_vector(y[:10])
    event = GaitEvent(kind=EventKind(status), time=t, state=end)
    K._push_event(buf.ev, buf.nev, t, status, y)
    if buf.rec_on:
        K._push_sample(buf.rec, buf.nrec, t, y, ph, controller.phi_des, pv)
    return end, event, buf.trajectory()


def _fall(status: int, t: float, y: np.ndarray, cycle_index: int | None) -> FallOutcome:
    return FallOutcome(
        reason=_REASONS.get(status, f"status {status}"),
        time=float(t),
        state=SystemState.from_vector(y[:10]),
        cycle_index=cycle_index,
    )


def _cycle_record(out: np.ndarray, td_state: np.ndarray,
                  apex_state: np.ndarray) -> CycleRecord:
    return CycleRecord(
        apex_state=SystemState.from_vector(apex_state[:10]),
        touchdown_state=SystemState.from_vector(td_state[:10]),
        phi_d_used=float(out[K.O_PHIUSED]),
        stance_duration=float(out[K.O_STDUR]),
        flight_duration=float(out[K.O_FLDUR]),
        energy_injected=float(out[K.O_EINJ]),
    )


def step_gait_cycle(apex_state: SystemState, controller_state: ControllerState,
                    mp: ModelParams, cp: ControlParams,
                    abs_tol: float = ABS_TOL, rel_tol: float = REL_TOL,
                    ) -> tuple[SystemState, CycleRecord] | FallOutcome:
    """Execute one full gait cycle from an apex state.

    Flight to touchdown (plastic impact, angle-of-attack update), stance to
    lift-off, then flight to the next apex.  Returns the next apex state and
    the cycle record, or a FallOutcome when any guard or limit trips first.
    """
    vy = apex_state.v_c[1]
    if abs(vy) > 1e-8:
        raise ValueError(f"apex state must have vy_c = 0 (got {vy:.3e})")
    pv = param_vector(mp, cp)
    y = _y11(apex_state)
    buf = _Buffers(False, 0.0, 8)
    out = np.zeros(K.OUT_SIZE)
    td = np.zeros(11)
    lo = np.zeros(11)
    status = K._gait_cycle(y, 0.0, controller_state.phi_des, pv,
                           abs_tol, rel_tol,
                           0, buf.rec, buf.nrec, buf.next_s, buf.ev, buf.nev,
                           out, td, lo)
    if status != K.EV_APEX:
        return _fall(status, out[K.O_TEND], y, 0)
    return SystemState.from_vector(y[:10]), _cycle_record(out, td, y)


def simulate(initial_state: SystemState, n_cycles: int,
             mp: ModelParams, cp: ControlParams,
             record_dense: bool = True,
             adapt_phi: bool = True,
             abs_tol: float = ABS_TOL, rel_tol: float = REL_TOL,
             ) -> tuple[Trajectory, list[CycleRecord], SimulationOutcome]:
    """Chain gait cycles from an initial flight state.

    A non-apex initial state is first integrated (with full hybrid execution)
    to the next apex; cycles are counted from there.  With ``adapt_phi`` the
    angle-of-attack set point follows the once-per-cycle touchdown update,
    seeded from the initial forward velocity; otherwise it is frozen at
    ``phi_0``.
    """
    if n_cycles < 1:
        raise ValueError("n_cycles must be >= 1")
    pv = param_vector(mp, cp)
    y = _y11(initial_state)
    if adapt_phi:
        phi_d = update_angle_of_attack(float(initial_state.v_c[0]), cp)
        phi_mode = K.PHI_PERSISTENT
    else:
        phi_d = cp.phi_0
        phi_mode = K.PHI_FROZEN

    t_budget = n_cycles * (MAX_FLIGHT_TIME + MAX_STANCE_TIME) + 2 * MAX_FLIGHT_TIME
    buf = _Buffers(record_dense, t_budget, 6 * n_cycles + 32)
    buf.start(0.0, y, K.PH_FLIGHT, phi_d, pv)

    status, t, phi_d = K._settle_to_apex(y, 0.0, phi_d, pv, abs_tol, rel_tol,
                                         buf.rec_on, buf.rec, buf.nrec,
                                         buf.next_s, buf.ev, buf.nev)
    if status != K.EV_APEX:
        outcome = SimulationOutcome(False, 0, _fall(status, t, y, None))
        return buf.trajectory(), [], outcome
    if phi_mode == K.PHI_FROZEN:
        phi_d = cp.phi_0

    cyc = np.zeros((n_cycles, K.OUT_SIZE))
    td_states = np.zeros((n_cycles, 11))
    lo_states = np.zeros((n_cycles, 11))
    apex_states = np.zeros((n_cycles + 1, 11))
    status, ncomp, t_end, _ = K._run_cycles(
        y, t, phi_mode, phi_d, n_cycles, 0, pv, abs_tol, rel_tol,
        buf.rec_on, buf.rec, buf.nrec, buf.next_s, buf.ev, buf.nev,
        cyc, td_states, lo_states, apex_states)

    records = [_cycle_record(cyc[i], td_states[i], apex_states[i + 1])
               for i in range(ncomp)]
    if status == K.ST_OK:
        outcome = SimulationOutcome(True, ncomp, None)
    else:
        outcome = SimulationOutcome(False, ncomp, _fall(status, t_end, y, ncomp))
    return buf.trajectory(), records, outcome
