"""Orbital stability tooling built on the apex-return map.

The Poincare section is the flight apex (vy_c = 0); translation symmetry in x
is quotiented out, leaving the 8-dimensional reduced section state

    [y_c, x_f - x_c, y_f, theta, vx_c, vx_f, vy_f, omega].

Fixed points of the return map are limit cycles; their Floquet multipliers
(eigenvalues of the central-difference linearization) certify orbital
stability when they all lie inside the unit circle.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels as K
from .integrator import ABS_TOL, REL_TOL, FallOutcome, nominal_apex_state, param_vector
from .model import ControlParams, ModelParams, SystemState

__all__ = [
    "REDUCED_DIM",
    "FixedPointError",
    "LinearizationError",
    "PerturbationRecord",
    "StabilityReport",
    "SweepResult",
    "central_difference_jacobian",
    "embed_state",
    "find_fixed_point",
    "floquet_multipliers",
    "linearize",
    "poincare_map",
    "perturb_and_track",
    "reduce_state",
    "stability_report",
    "steps_to_fall",
    "sweep",
    "velocity_return_map",
]

REDUCED_DIM = 8
# full-vector indices of the reduced coordinates (x_f is stored relative to x_c)
_RED_NAMES = ("y_c", "x_f-x_c", "y_f", "theta", "vx_c", "vx_f", "vy_f", "omega")


class FixedPointError(RuntimeError):
    """Fixed-point search failed (no convergence or fall during probing)."""


class LinearizationError(RuntimeError):
    """A linearization probe fell; names the offending coordinate and sign."""


def reduce_state(state: SystemState | np.ndarray) -> np.ndarray:
    """Project a full apex state onto the reduced section coordinates."""
    y = state.as_vector() if isinstance(state, SystemState) else np.asarray(state, dtype=float)
    return np.array([y[1], y[2] - y[0], y[3], y[4], y[5], y[7], y[8], y[9]])

def embed_state(x: Sequence[float]) -> SystemState:
    """Lift a reduced section state back to a full state (x_c = 0, vy_c = 0)."""
    x = np.asarray(x, dtype=float).reshape(REDUCED_DIM)
    y = np.array([0.0, x[0], x[1], x[2], x[3], x[4], 0.0, x[5], x[6], x[7]])
    return SystemState.from_vector(y)


def _apex_phi(x_vx: float, pv: np.ndarray) -> float:
    phi = pv[K.P_PHI0] + pv[K.P_KGAIN] * (pv[K.P_VXDES] - x_vx)
    return min(max(phi, pv[K.P_PHILO]), pv[K.P_PHIHI])


def poincare_map(x: np.ndarray, mp: ModelParams, cp: ControlParams,
                 abs_tol: float = ABS_TOL, rel_tol: float = REL_TOL,
                 ) -> np.ndarray | FallOutcome:
    """Apex-return map on the reduced section state.

    Runs one gait cycle from the embedded apex.  The swing set point for the
    leading flight segment is seeded from the apex forward velocity by the
    same feedback law used at touchdowns, which makes the map self-contained
    on the section.
    """
    x = np.asarray(x, dtype=float).reshape(REDUCED_DIM)
    pv = param_vector(mp, cp)
    y = np.zeros(11)
    y[:10] = embed_state(x).as_vector()
    rec = np.empty((1, 14))
    nrec = np.zeros(1, dtype=np.int64)
    next_s = np.zeros(1)
    ev = np.empty((8, 12))
    nev = np.zeros(1, dtype=np.int64)
    out = np.zeros(K.OUT_SIZE)
    td = np.zeros(11)
    lo = np.zeros(11)
    status = K._gait_cycle(y, 0.0, _apex_phi(x[4], pv), pv, abs_tol, rel_tol,
                           0, rec, nrec, next_s, ev, nev, out, td, lo)
    if status != K.EV_APEX:
        reason = {
            K.ST_FALL: "fall_guard",
            K.ST_TIMEOUT_FLIGHT: "flight_timeout",
            K.ST_TIMEOUT_STANCE: "stance_timeout",
            K.ST_SINGULAR: "singular_configuration",
            K.ST_UNDERFLOW: "step_underflow",
            K.ST_CTRL_SINGULAR: "controller_singularity",
            K.ST_TD_BEFORE_APEX: "touchdown_before_apex",
            K.ST_FOOT_DIG: "foot_below_ground",
        }.get(status, f"status {status}")
        return FallOutcome(reason=reason, time=float(out[K.O_TEND]),
                           state=SystemState.from_vector(y[:10]), cycle_index=0)
    return reduce_state(y[:10])


def central_difference_jacobian(f: Callable[[np.ndarray], np.ndarray],
                                x: np.ndarray, eps: float | np.ndarray) -> np.ndarray:
    """Jacobian of ``f`` by central differences, column by column."""
    x = np.asarray(x, dtype=float)
    n = x.size
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (n,))
    cols = []
    for j in range(n):
        xp = x.copy()
        xm = x.copy()
        xp[j] += eps[j]
        xm[j] -= eps[j]
        cols.append((np.asarray(f(xp)) - np.asarray(f(xm))) / (2.0 * eps[j]))
    return np.column_stack(cols)


def linearize(x_star: np.ndarray, mp: ModelParams, cp: ControlParams,
              eps: float = 1e-6,
              abs_tol: float = ABS_TOL, rel_tol: float = REL_TOL) -> np.ndarray:
    """Central-difference linearization of the return map about a fixed point.

    Column j is ``(P(x + e_j*eps_j) - P(x - e_j*eps_j)) / (2*eps_j)`` with the
    per-coordinate step ``eps_j = eps * max(1, |x_j|)``.  Probe pairs run on a
    small thread pool (the map kernel releases the GIL).

    Raises
    ------
    LinearizationError
        If any probe falls, naming the offending coordinate and sign.
    """
    x_star = np.asarray(x_star, dtype=float).reshape(REDUCED_DIM)
    steps = eps * np.maximum(1.0, np.abs(x_star))

    probes = []
    for j in range(REDUCED_DIM):
        for sign in (+1.0, -1.0):
            xp = x_star.copy()
            xp[j] += sign * steps[j]
            probes.append((j, sign, xp))

    def run(args):
        return poincare_map(args[2], mp, cp, abs_tol, rel_tol)

    with ThreadPoolExecutor(max_workers=4) as pool:
        results = list(pool.map(run, probes))

    jac = np.empty((REDUCED_DIM, REDUCED_DIM))
    for (j, sign, _), res in zip(probes, results):
        if isinstance(res, FallOutcome):
            raise LinearizationError(
                f"probe {'+' if sign > 0 else '-'}{_RED_NAMES[j]} fell ({res.reason})")
    for j in range(REDUCED_DIM):
        plus = results[2 * j]
        minus = results[2 * j + 1]
        jac[:, j] = (plus - minus) / (2.0 * steps[j])
    return jac


def floquet_multipliers(jacobian: np.ndarray) -> tuple[np.ndarray, float]:
    """Eigenvalues of the linearized return map, sorted by descending magnitude."""
    w = np.linalg.eigvals(np.asarray(jacobian, dtype=float))
    order = np.lexsort((-w.imag, -w.real, -np.abs(w)))
    w = w[order]
    rho = float(np.abs(w[0])) if w.size else 0.0
    return w, rho


def find_fixed_point(guess: np.ndarray, mp: ModelParams, cp: ControlParams,
                     max_iter: int = 20, tol: float = 1e-8,
                     eps: float = 1e-6,
                     abs_tol: float = ABS_TOL, rel_tol: float = REL_TOL,
                     ) -> tuple[np.ndarray, float]:
    """Damped Newton search for a return-map fixed point.

    Newton steps use the central-difference Jacobian of the residual
    ``R(x) = P(x) - x``; steps that fall or increase the residual are damped,
    falling back to plain map iteration when damping bottoms out.

    Returns ``(x_star, residual_inf_norm)`` with residual below ``tol``.
    """
    x = np.asarray(guess, dtype=float).reshape(REDUCED_DIM).copy()
    px = poincare_map(x, mp, cp, abs_tol, rel_tol)
    if isinstance(px, FallOutcome):
        raise FixedPointError(f"initial guess fell ({px.reason})")
    r = px - x
    rn = float(np.max(np.abs(r)))
    for _ in range(max_iter):
        if rn < tol:
            return x, rn
        try:
            dp = linearize(x, mp, cp, eps, abs_tol, rel_tol)
        except LinearizationError as exc:
            raise FixedPointError(str(exc)) from exc
        try:
            step = np.linalg.solve(dp - np.eye(REDUCED_DIM), -r)
        except np.linalg.LinAlgError:
            step = -r
        alpha = 1.0
        improved = False
        while alpha >= 1.0 / 32.0:
            x_new = x + alpha * step
            px = poincare_map(x_new, mp, cp, abs_tol, rel_tol)
            if not isinstance(px, FallOutcome):
                rn_new = float(np.max(np.abs(px - x_new)))
                if rn_new < rn:
                    x, r, rn = x_new, px - x_new, rn_new
                    improved = True
                    break
            alpha *= 0.5
        if not improved:
            # fall back to plain map iteration
            px = poincare_map(x, mp, cp, abs_tol, rel_tol)
            if isinstance(px, FallOutcome):
                raise FixedPointError(f"map iteration fell ({px.reason})")
            r_new = poincare_map(px, mp, cp, abs_tol, rel_tol)
            if isinstance(r_new, FallOutcome):
                raise FixedPointError(f"map iteration fell ({r_new.reason})")
            x = px
            r = r_new - px
            rn = float(np.max(np.abs(r)))
    if rn < tol:
        return x, rn
    raise FixedPointError(f"no convergence in {max_iter} iterations "
                          f"(residual {rn:.3e} > {tol:.1e})")


def steps_to_fall(mp: ModelParams, cp: ControlParams,
                  initial: np.ndarray | None = None, max_steps: int = 100,
                  apex_height: float = 1.05,
                  abs_tol: float = ABS_TOL, rel_tol: float = REL_TOL) -> int:
    """Completed return-map iterations before failure, capped at ``max_steps``."""
    if initial is None:
        start = nominal_apex_state(mp, cp, apex_height)
    else:
        start = embed_state(initial)
    y = np.zeros(11)
    y[:10] = start.as_vector()
    pv = param_vector(mp, cp)
    return int(K._steps_to_fall(y, pv, abs_tol, rel_tol, max_steps))


@dataclass
class SweepResult:
    """Steps-to-fall counts over a (vx_des, l0_swing) grid."""

    vx_values: np.ndarray
    l0_swing_values: np.ndarray
    counts: np.ndarray          # shape (len(vx), len(l0)), completed steps
    max_steps: int

    @property
    def stable_mask(self) -> np.ndarray:
        return self.counts >= self.max_steps

    @property
    def n_stable(self) -> int:
        return int(np.count_nonzero(self.stable_mask))

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("vx_des,l0_swing,steps_survived\n")
            for i, vx in enumerate(self.vx_values):
                for j, l0s in enumerate(self.l0_swing_values):
                    fh.write(f"{_g(vx)},{_g(l0s)},{int(self.counts[i, j])}\n")


def _g(x: float) -> str:
    return format(float(x), ".17g")


def sweep(vx_values: Iterable[float], l0_swing_values: Iterable[float],
          mp: ModelParams, cp_template: ControlParams,
          max_steps: int = 100, apex_height: float = 1.05,
          jobs: int | None = None,
          abs_tol: float = ABS_TOL, rel_tol: float = REL_TOL) -> SweepResult:
    """Steps-to-fall over a parameter grid, thread-parallel across cells.

    Every cell starts from the nominal apex state built with its own desired
    velocity and swing rest length; falls are data, not errors.
    """
    import dataclasses
    import os

    vx_values = np.asarray(list(vx_values), dtype=float)
    l0_values = np.asarray(list(l0_swing_values), dtype=float)
    if vx_values.size == 0 or l0_values.size == 0:
        raise ValueError("sweep grid must be nonempty")

    cells = [(i, j) for i in range(vx_values.size) for j in range(l0_values.size)]

    def run(cell):
        i, j = cell
        cp = dataclasses.replace(cp_template, vx_des=float(vx_values[i]),
                                 l0_swing=float(l0_values[j]))
        return steps_to_fall(mp, cp, None, max_steps, apex_height, abs_tol, rel_tol)

    workers = jobs if jobs else min(8, os.cpu_count() or 1)
    counts = np.zeros((vx_values.size, l0_values.size), dtype=int)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for (i, j), n in zip(cells, pool.map(run, cells)):
            counts[i, j] = n
    return SweepResult(vx_values, l0_values, counts, max_steps)


@dataclass
class PerturbationRecord:
    """Distance-to-fixed-point trace after an apex-height perturbation."""

    fraction: float
    initial_distance: float
    distances: list[float]
    verdict: str                # "converged" | "diverged" | "fell"
    fell_at_cycle: int | None = None

    @property
    def converged(self) -> bool:
        return self.verdict == "converged"


def perturb_and_track(x_star: np.ndarray, fraction_on_height: float,
                      n_cycles: int, mp: ModelParams, cp: ControlParams,
                      abs_tol: float = ABS_TOL, rel_tol: float = REL_TOL,
                      ) -> PerturbationRecord:
    """Scale the apex height of a fixed point and track the return distance.

    Converged means the final infinity-norm distance drops below 1 percent of
    the initial distance or below 1e-3 absolute.
    """
    x_star = np.asarray(x_star, dtype=float).reshape(REDUCED_DIM)
    x = x_star.copy()
    x[0] *= (1.0 + fraction_on_height)
    d0 = float(np.max(np.abs(x - x_star)))
    distances = []
    for n in range(n_cycles):
        res = poincare_map(x, mp, cp, abs_tol, rel_tol)
        if isinstance(res, FallOutcome):
            return PerturbationRecord(fraction_on_height, d0, distances,
                                      "fell", fell_at_cycle=n)
        x = res
        distances.append(float(np.max(np.abs(x - x_star))))
    final = distances[-1] if distances else 0.0
    ok = final < max(0.01 * d0, 1e-3)
    return PerturbationRecord(fraction_on_height, d0, distances,
                              "converged" if ok else "diverged")


def velocity_return_map(mp: ModelParams, cp: ControlParams,
                        vx_range: float | Iterable[float],
                        adapt_phi: bool = True,
                        n_cycles: int = 100, apex_height: float = 1.05,
                        abs_tol: float = ABS_TOL, rel_tol: float = REL_TOL,
                        ) -> list[tuple[float, float]]:
    """Successive apex forward velocities ``(vx_k, vx_{k+1})``.

    With ``adapt_phi`` the angle-of-attack law stays active; otherwise the set
    point is frozen at ``phi_0``.  ``vx_range`` may be one seed velocity or an
    iterable of seeds; runs stop early when the hopper falls.
    """
    try:
        seeds = [float(v) for v in vx_range]   # type: ignore[union-attr]
    except TypeError:
        seeds = [float(vx_range)]              # type: ignore[arg-type]

    pv = param_vector(mp, cp)
    pairs: list[tuple[float, float]] = []
    for v0 in seeds:
        start = nominal_apex_state(mp, cp, apex_height, vx=v0)
        y = np.zeros(11)
        y[:10] = start.as_vector()
        if adapt_phi:
            phi_mode = K.PHI_PERSISTENT
            phi_d = min(max(cp.phi_0 + cp.K * (cp.vx_des - v0), 0.1), math.pi - 0.1)
        else:
            phi_mode = K.PHI_FROZEN
            phi_d = cp.phi_0
        rec = np.empty((1, 14))
        nrec = np.zeros(1, dtype=np.int64)
        next_s = np.zeros(1)
        ev = np.empty((6 * n_cycles + 16, 12))
        nev = np.zeros(1, dtype=np.int64)
        cyc = np.zeros((n_cycles, K.OUT_SIZE))
        td = np.zeros((n_cycles, 11))
        lo = np.zeros((n_cycles, 11))
        apexes = np.zeros((n_cycles + 1, 11))
        _, ncomp, _, _ = K._run_cycles(y, 0.0, phi_mode, phi_d, n_cycles, 1,
                                       pv, abs_tol, rel_tol,
                                       0, rec, nrec, next_s, ev, nev,
                                       cyc, td, lo, apexes)
        vx_seq = apexes[:ncomp + 1, 5]
        pairs.extend(zip(vx_seq[:-1].tolist(), vx_seq[1:].tolist()))
    return pairs


@dataclass
class StabilityReport:
    """Certified fixed point with its linearization and Floquet spectrum."""

    fixed_point: np.ndarray
    residual: float
    jacobian: np.ndarray
    multipliers: np.ndarray
    spectral_radius: float
    stable: bool
    perturbation: PerturbationRecord | None = None

    def to_json_dict(self) -> dict:
        d = {
            "fixed_point_reduced": [float(v) for v in self.fixed_point],
            "fixed_point_full": [float(v) for v in embed_state(self.fixed_point).as_vector()],
            "residual": float(self.residual),
            "jacobian_row_major": [float(v) for v in self.jacobian.ravel()],
            "multipliers": [[float(w.real), float(w.imag)] for w in self.multipliers],
            "spectral_radius": float(self.spectral_radius),
            "stable": bool(self.stable),
        }
        if self.perturbation is not None:
            d["perturbation"] = {
                "fraction_on_height": self.perturbation.fraction,
                "initial_distance": self.perturbation.initial_distance,
                "distances": self.perturbation.distances,
                "verdict": self.perturbation.verdict,
                "fell_at_cycle": self.perturbation.fell_at_cycle,
            }
        return d


def stability_report(mp: ModelParams, cp: ControlParams,
                     guess: np.ndarray | None = None,
                     settle_cycles: int = 30,
                     perturb_fraction: float = -0.075,
                     perturb_cycles: int = 20,
                     apex_height: float = 1.05,
                     abs_tol: float = ABS_TOL, rel_tol: float = REL_TOL,
                     ) -> StabilityReport:
    """Full certification pipeline: settle, polish, linearize, perturb.

    Without a guess the map is iterated ``settle_cycles`` times from the
    nominal apex state to land in the basin before the Newton polish.
    """
    if guess is None:
        x = reduce_state(nominal_apex_state(mp, cp, apex_height))
        for _ in range(settle_cycles):
            res = poincare_map(x, mp, cp, abs_tol, rel_tol)
            if isinstance(res, FallOutcome):
                raise FixedPointError(
                    f"settling fell after {res.cycle_index} cycles ({res.reason})")
            x = res
        guess = x
    x_star, residual = find_fixed_point(guess, mp, cp,
                                        abs_tol=abs_tol, rel_tol=rel_tol)
    jac = linearize(x_star, mp, cp, abs_tol=abs_tol, rel_tol=rel_tol)
    mult, rho = floquet_multipliers(jac)
    pert = perturb_and_track(x_star, perturb_fraction, perturb_cycles, mp, cp,
                             abs_tol, rel_tol)
    return StabilityReport(
        fixed_point=x_star, residual=residual, jacobian=jac,
        multipliers=mult, spectral_radius=rho, stable=bool(rho < 1.0),
        perturbation=pert,
    )
