"""Phase-switching hip control.

Stance: the hip torque redirects the total hip-transmitted force through a
virtual pivot point above the CoM.  Swing: a set-point PD law on the leg
angle of attack plus spring rest-length retraction.  The angle-of-attack
set point is refreshed once per gait cycle from the forward-velocity error.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .model import (
    ControlInput,
    ControlParams,
    ModelParams,
    Phase,
    SystemState,
    hip_velocity,
    leg_vector,
    spring_force,
)

__all__ = [
    "PHI_CLAMP",
    "ControllerSingularityError",
    "ControllerState",
    "control_action",
    "leg_angle",
    "stance_torque",
    "swing_torque",
    "update_angle_of_attack",
    "vpp_point",
]

# Angle-of-attack set points are clamped to this open interval (rad).
PHI_CLAMP = (0.1, math.pi - 0.1)


class ControllerSingularityError(RuntimeError):
    """VPP direction more than 90 degrees off the leg axis."""


@dataclass(frozen=True)
class ControllerState:
    """Per-run controller memory: current desired angle of attack and phase."""

    phi_des: float
    phase: Phase

    def __post_init__(self):
        if not 0.0 < self.phi_des < math.pi:
            raise ValueError("phi_des must lie in (0, pi)")


def vpp_point(state: SystemState, cp: ControlParams) -> np.ndarray:
    """Virtual pivot point: ``d_vpp`` above the CoM along the body axis rotated by ``delta``."""
    a = state.theta + cp.delta
    return state.r_c + cp.d_vpp * np.array([math.sin(a), math.cos(a)])


def stance_torque(state: SystemState, mp: ModelParams, cp: ControlParams) -> float:
    """Hip torque redirecting the hip-transmitted force through the VPP.

    ``tau = f_ax * l * tan(gamma)`` with ``tan(gamma) = cross(r_vpp, r_l) /
    dot(r_vpp, r_l)``, both vectors rooted at the foot and ``f_ax`` the signed
    axial spring force (stance rest length, ``xi = 0``).  With this torque the
    total force transmitted at the hip (spring force plus the hip-torque
    reaction) is parallel to the foot-to-VPP direction.
    """
    r_l, l = leg_vector(state, mp)
    r_vpp = vpp_point(state, cp) - state.r_f
    dot = float(r_vpp @ r_l)
    if dot <= 0.0:
        raise ControllerSingularityError(
            "foot-to-VPP direction is more than 90 degrees off the leg axis"
        )
    f_ax = mp.k * (mp.l_0 - l)
    cross = r_vpp[0] * r_l[1] - r_vpp[1] * r_l[0]
    return f_ax * l * cross / dot


def leg_angle(state: SystemState, mp: ModelParams) -> tuple[float, float]:
    """Leg angle of attack and its exact time derivative.

    ``phi = atan2(hip_y - foot_y, foot_x - hip_x)``: 90 degrees for a vertical
    leg, smaller when the foot is ahead of the hip (Raibert convention).  A
    positive hip torque raises ``phi``, so the set-point law is a stable
    servo.
    """
    r_l, l = leg_vector(state, mp)
    phi = math.atan2(r_l[1], -r_l[0])
    v_rel = hip_velocity(state, mp) - state.v_f   # d/dt of r_l
    phi_dot = (-r_l[0] * v_rel[1] + r_l[1] * v_rel[0]) / (l * l)
    return phi, phi_dot


def swing_torque(state: SystemState, cs: ControllerState, cp: ControlParams,
                 mp: ModelParams) -> float:
    """Set-point PD torque ``c*(phi_d - phi) - b*phi_dot`` driving the swing leg."""
    phi, phi_dot = leg_angle(state, mp)
    return cp.c * (cs.phi_des - phi) - cp.b * phi_dot


def update_angle_of_attack(vx_touchdown: float, cp: ControlParams) -> float:
    """Angle of attack for the next swing: ``phi_0 + K*(vx_des - vx)``.

    The result is clamped to (0.1, pi - 0.1) rad with a warning; the feedback
    law itself is unbounded.
    """
    phi_d = cp.phi_0 + cp.K * (cp.vx_des - vx_touchdown)
    lo, hi = PHI_CLAMP
    if phi_d < lo or phi_d > hi:
        warnings.warn(
            f"angle-of-attack set point {phi_d:.3f} rad clamped to ({lo:.3f}, {hi:.3f})",
            stacklevel=2,
        )
        phi_d = min(max(phi_d, lo), hi)
    return phi_d


def control_action(state: SystemState, cs: ControllerState, mp: ModelParams,
                   cp: ControlParams) -> ControlInput:
    """Switching control: VPP torque in stance, PD torque plus retraction in swing."""
    if cs.phase is Phase.STANCE:
        return ControlInput(tau=stance_torque(state, mp, cp), xi=0.0)
    return ControlInput(tau=swing_torque(state, cs, cp, mp), xi=cp.l0_swing - mp.l_0)
