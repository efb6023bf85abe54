"""Planar trunk-hopper mechanics.

State containers, leg geometry, spring and hip-torque forces, the flight and
stance vector fields, the plastic touchdown impact, and conserved-quantity
probes used by the invariant tests.

Coordinate conventions
----------------------
World frame: x forward, y up, flat ground at y = 0.  The trunk inclination
``theta`` is measured clockwise from the vertical (compass style), so
``theta > 0`` leans the body axis toward +x.  The hip sits a distance ``d``
above the trunk CoM along the body axis (the trunk hangs below the hip
joint)::

    hip = r_c + (d*sin(theta), d*cos(theta))

The leg vector points from the foot to the hip, ``r_l = hip - r_f``.  A hip
torque ``tau`` acts between trunk and leg: through the massless leg it
produces the foot force
``F_tau = (tau/l^2) * (-r_ly, r_lx)`` (positive torque drives the foot
backward, raising the Raibert leg angle) together with the reaction
``-F_tau`` on the trunk at the hip, and the trunk rotational equation
reads::

    J * theta_dd = -tau + d*(G_x*cos(theta) - G_y*sin(theta)),  G = F - F_tau

This hip placement is the unique one under which that rotational equation is
energy-consistent: with it, total energy is conserved in passive flight and
total angular momentum about the system CoM is conserved for any hip torque
profile (spring and hip actuator are internal forces), while the set-point
swing servo remains stable.  Because ``theta`` is clockwise-positive, the
trunk spin enters the planar (counter-clockwise) angular momentum with a
minus sign.

When flattened to a 10-vector the state ordering is
``[x_c, y_c, x_f, y_f, theta, vx_c, vy_c, vx_f, vy_f, omega]``; this ordering
is the contract for all file outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

__all__ = [
    "LENGTH_SINGULARITY",
    "ControlInput",
    "ControlParams",
    "ModelParams",
    "Phase",
    "SingularConfigurationError",
    "SystemState",
    "diagnostics",
    "flight_derivative",
    "hip_position",
    "hip_power",
    "hip_velocity",
    "leg_vector",
    "hip_force_on_foot",
    "spring_force",
    "stance_derivative",
    "touchdown_impact",
]

# Leg lengths below this are treated as a degenerate configuration.
LENGTH_SINGULARITY = 1e-9


class SingularConfigurationError(RuntimeError):
    """Raised when the leg length collapses below the singularity threshold."""


class Phase(Enum):
    FLIGHT = 0
    STANCE = 1


def _vec2(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(2).copy()
    return a


@dataclass(frozen=True)
class ModelParams:
    """Mechanical constants of the hopper.

    Masses in kg, inertia in kg m^2, lengths in m, stiffness in N/m,
    gravity in m/s^2.
    """

    m_c: float = 80.0
    m_f: float = 3.4
    J: float = 5.0
    d: float = 0.1
    k: float = 21000.0
    l_0: float = 1.0
    g: float = 9.81

    def __post_init__(self):
        for name in ("m_c", "m_f", "J", "k", "l_0", "g"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"ModelParams.{name} must be strictly positive")
        if self.d < 0.0:
            raise ValueError("ModelParams.d must be non-negative")
        if not self.d < self.l_0:
            raise ValueError("ModelParams.d must be smaller than l_0")


@dataclass(frozen=True)
class ControlParams:
    """Controller constants.

    ``phi_0`` and ``delta`` are radians; ``l0_swing`` is the spring rest
    length applied during the swing phase, realizing the rest-length offset
    ``xi = l0_swing - l_0``.
    """

    c: float = 1900.0
    b: float = 80.37
    phi_0: float = math.radians(70.0)
    K: float = 0.15
    d_vpp: float = 0.25
    delta: float = 0.0
    vx_des: float = 5.0
    l0_swing: float = 1.0 - 0.087

    def __post_init__(self):
        if not self.c > 0.0:
            raise ValueError("ControlParams.c must be strictly positive")
        if not self.b > 0.0:
            raise ValueError("ControlParams.b must be strictly positive")
        if not 0.0 < self.phi_0 < math.pi:
            raise ValueError("ControlParams.phi_0 must lie in (0, pi)")
        if not self.l0_swing > 0.0:
            raise ValueError("ControlParams.l0_swing must be strictly positive")


@dataclass(frozen=True)
class ControlInput:
    """Hip torque (N m) and spring rest-length offset (m)."""

    tau: float
    xi: float

    def __post_init__(self):
        if not (math.isfinite(self.tau) and math.isfinite(self.xi)):
            raise ValueError("control input must be finite")


@dataclass(frozen=True)
class SystemState:
    """Full hybrid state: trunk pose/velocity, foot pose/velocity, trunk angle/rate."""

    r_c: np.ndarray
    r_f: np.ndarray
    theta: float
    v_c: np.ndarray = field(default_factory=lambda: np.zeros(2))
    v_f: np.ndarray = field(default_factory=lambda: np.zeros(2))
    omega: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "r_c", _vec2(self.r_c))
        object.__setattr__(self, "r_f", _vec2(self.r_f))
        object.__setattr__(self, "v_c", _vec2(self.v_c))
        object.__setattr__(self, "v_f", _vec2(self.v_f))
        object.__setattr__(self, "theta", float(self.theta))
        object.__setattr__(self, "omega", float(self.omega))
        if not np.all(np.isfinite(self.as_vector())):
            raise ValueError("system state must be finite")

    def as_vector(self) -> np.ndarray:
        """Flatten to the canonical 10-vector ordering."""
        return np.array(
            [
                self.r_c[0], self.r_c[1],
                self.r_f[0], self.r_f[1],
                self.theta,
                self.v_c[0], self.v_c[1],
                self.v_f[0], self.v_f[1],
                self.omega,
            ]
        )

    @classmethod
    def from_vector(cls, y) -> "SystemState":
        y = np.asarray(y, dtype=float).reshape(10)
        return cls(
            r_c=y[0:2], r_f=y[2:4], theta=y[4],
            v_c=y[5:7], v_f=y[7:9], omega=y[9],
        )

    def replace(self, **kwargs) -> "SystemState":
        return replace(self, **kwargs)


def _cross2(a, b) -> float:
    return a[0] * b[1] - a[1] * b[0]


def hip_position(state: SystemState, params: ModelParams) -> np.ndarray:
    """World position of the hip joint (above the CoM along the body axis)."""
    th = state.theta
    return state.r_c + params.d * np.array([math.sin(th), math.cos(th)])


def hip_velocity(state: SystemState, params: ModelParams) -> np.ndarray:
    """World velocity of the hip joint."""
    th = state.theta
    return state.v_c + state.omega * params.d * np.array([math.cos(th), -math.sin(th)])


def leg_vector(state: SystemState, params: ModelParams) -> tuple[np.ndarray, float]:
    """Vector from foot to hip and its length.

    Raises
    ------
    SingularConfigurationError
        If the leg length falls below the singularity threshold.
    """
    r_l = hip_position(state, params) - state.r_f
    l = float(np.hypot(r_l[0], r_l[1]))
    if l < LENGTH_SINGULARITY:
        raise SingularConfigurationError(f"leg length {l:.3e} m below singularity threshold")
    return r_l, l


def spring_force(state: SystemState, xi: float, params: ModelParams) -> np.ndarray:
    """Force exerted by the spring leg on the trunk (applied at the hip).

    ``F = k * ((l_0 + xi)/l - 1) * r_l``: repulsive (along foot-to-hip) while
    the leg is shorter than its active rest length.  The foot receives ``-F``.
    """
    r_l, l = leg_vector(state, params)
    return params.k * ((params.l_0 + xi) / l - 1.0) * r_l


def hip_force_on_foot(state: SystemState, tau: float, params: ModelParams) -> np.ndarray:
    """Force on the foot produced by the hip torque, perpendicular to the leg.

    ``F_tau = (tau / l^2) * (-r_ly, r_lx)``: a positive torque drives the foot
    backward, raising the Raibert leg angle; the trunk receives the reaction
    ``-F_tau`` at the hip.  The orientation is fixed by flight-phase
    angular-momentum conservation together with the requirement that the
    set-point swing law be a stable servo.
    """
    r_l, l = leg_vector(state, params)
    return (tau / (l * l)) * np.array([-r_l[1], r_l[0]])


def _derivative(state: SystemState, u: ControlInput, params: ModelParams,
                foot_pinned: bool) -> np.ndarray:
    f_spring = spring_force(state, u.xi, params)
    f_tau = hip_force_on_foot(state, u.tau, params)
    hip_force = f_spring - f_tau
    g_vec = np.array([0.0, -params.g])

    a_c = hip_force / params.m_c + g_vec
    if foot_pinned:
        v_f = np.zeros(2)
        a_f = np.zeros(2)
    else:
        v_f = state.v_f
        a_f = (-f_spring + f_tau) / params.m_f + g_vec

    th = state.theta
    moment = params.d * (hip_force[0] * math.cos(th) - hip_force[1] * math.sin(th))
    theta_dd = (-u.tau + moment) / params.J

    return np.array(
        [
            state.v_c[0], state.v_c[1],
            v_f[0], v_f[1],
            state.omega,
            a_c[0], a_c[1],
            a_f[0], a_f[1],
            theta_dd,
        ]
    )


def flight_derivative(state: SystemState, u: ControlInput, params: ModelParams) -> np.ndarray:
    """Time derivative of the flattened state during flight (no ground force)."""
    return _derivative(state, u, params, foot_pinned=False)


def stance_derivative(state: SystemState, u: ControlInput, params: ModelParams) -> np.ndarray:
    """Time derivative during stance: trunk equations as in flight, foot pinned.

    The foot derivative is identically zero; the ground reaction force is
    never computed explicitly.
    """
    return _derivative(state, u, params, foot_pinned=True)


def touchdown_impact(state: SystemState, phase: Phase = Phase.FLIGHT) -> SystemState:
    """Perfectly plastic impact on the foot.

    Zeroes the foot velocity and clamps the foot exactly onto the ground;
    every trunk quantity is left untouched (the spring force is finite, so
    trunk velocities are continuous across the impact).
    """
    if phase is Phase.STANCE:
        raise RuntimeError("touchdown_impact applied while already in stance")
    if state.r_f[1] > 1e-6:
        raise ValueError(f"foot is not at the ground (y_f = {state.r_f[1]:.3e} m)")
    return state.replace(r_f=np.array([state.r_f[0], 0.0]), v_f=np.zeros(2))


def hip_power(state: SystemState, u: ControlInput, params: ModelParams) -> float:
    """Mechanical power injected by the hip actuator: torque work on the trunk
    plus the work of the perpendicular force pair on foot and hip."""
    f_tau = hip_force_on_foot(state, u.tau, params)
    v_rel = state.v_f - hip_velocity(state, params)
    return -u.tau * state.omega + float(f_tau @ v_rel)


def diagnostics(state: SystemState, xi: float, params: ModelParams) -> tuple[float, float, np.ndarray]:
    """Conserved-quantity probes: total energy, angular momentum, momentum.

    Returns
    -------
    E_total : float
        Kinetic (both masses and trunk rotation) + gravitational (both
        masses, datum at y = 0) + elastic ``0.5*k*(l - l_0 - xi)**2``.
    L_com : float
        Total angular momentum about the instantaneous system CoM,
        counter-clockwise positive.  The trunk term is ``-J*omega`` because
        theta is clockwise-positive.
    p : ndarray
        Total linear momentum.
    """
    _, l = leg_vector(state, params)
    m_c, m_f = params.m_c, params.m_f
    e_kin = 0.5 * m_c * float(state.v_c @ state.v_c) \
        + 0.5 * m_f * float(state.v_f @ state.v_f) \
        + 0.5 * params.J * state.omega ** 2
    e_grav = params.g * (m_c * state.r_c[1] + m_f * state.r_f[1])
    e_el = 0.5 * params.k * (l - params.l_0 - xi) ** 2

    m_tot = m_c + m_f
    r_com = (m_c * state.r_c + m_f * state.r_f) / m_tot
    v_com = (m_c * state.v_c + m_f * state.v_f) / m_tot
    l_com = m_c * _cross2(state.r_c - r_com, state.v_c - v_com) \
        + m_f * _cross2(state.r_f - r_com, state.v_f - v_com) \
        - params.J * state.omega

    p = m_c * state.v_c + m_f * state.v_f
    return e_kin + e_grav + e_el, l_com, p
