"""Simulation and orbital-stability analysis of a planar upright-trunk hopper.

A rigid trunk and a point foot coupled by an actuated spring leg hop forward
under a phase-switching controller: virtual-pivot-point hip torque in stance,
a set-point leg-angle servo plus spring retraction in swing.  The package
provides event-located hybrid integration, apex-return-map tooling (fixed
points, Floquet multipliers, parameter sweeps, perturbation experiments), and
a batch CLI.
"""

from .config import ConfigError, ExperimentConfig, load_config, resolve_l0_swing
from .control import (
    ControllerSingularityError,
    ControllerState,
    control_action,
    leg_angle,
    stance_torque,
    swing_torque,
    update_angle_of_attack,
    vpp_point,
)
from .integrator import (
    CycleRecord,
    EventKind,
    FallOutcome,
    GaitEvent,
    IntegrationError,
    SimulationOutcome,
    Trajectory,
    integrate_until_event,
    nominal_apex_state,
    simulate,
    step_gait_cycle,
)
from .model import (
    ControlInput,
    ControlParams,
    ModelParams,
    Phase,
    SingularConfigurationError,
    SystemState,
    diagnostics,
    flight_derivative,
    hip_force_on_foot,
    leg_vector,
    spring_force,
    stance_derivative,
    touchdown_impact,
)
from .stability import (
    FixedPointError,
    LinearizationError,
    PerturbationRecord,
    StabilityReport,
    SweepResult,
    central_difference_jacobian,
    embed_state,
    find_fixed_point,
    floquet_multipliers,
    linearize,
    perturb_and_track,
    poincare_map,
    reduce_state,
    stability_report,
    steps_to_fall,
    sweep,
    velocity_return_map,
)

__version__ = "0.1.0"
