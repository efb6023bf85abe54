"""Batch experiment front-end.

Subcommands: ``simulate`` (dense gait traces), ``sweep`` (steps-to-fall over
the retraction/velocity grid), ``stability`` (fixed point, Floquet spectrum,
perturbation), ``velocity-map`` (successive apex velocities).  Every
subcommand writes its artifacts plus the effective configuration into the
output directory; identical configs produce byte-identical outputs.

Exit codes: 0 success, 1 runtime failure (fall / no convergence), 2 config
error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config, resolve_l0_swing
from .integrator import nominal_apex_state, simulate
from .model import SystemState
from .stability import (
    FixedPointError,
    stability_report,
    sweep,
    velocity_return_map,
)

__all__ = ["main"]

DEFAULT_GRID = "vx:3.0:6.0:0.1,l0:0.05:0.15:0.002"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="YAML config file")
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--abs-tol", type=float, default=None)
    p.add_argument("--rel-tol", type=float, default=None)
    p.add_argument("--retraction-mode", choices=("relative", "absolute"), default=None)


def _load(args) -> ExperimentConfig:
    cfg = load_config(
        args.config,
        output_dir=args.out,
        abs_tol=args.abs_tol,
        rel_tol=args.rel_tol,
        retraction_mode=args.retraction_mode,
        adapt_phi=(False if getattr(args, "no_adapt_phi", False) else None),
    )
    return cfg


def _prepare_out(cfg: ExperimentConfig) -> Path:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump_yaml(out / "effective_config.yaml")
    return out


def _initial_state(cfg: ExperimentConfig) -> SystemState:
    if cfg.initial is not None:
        return SystemState.from_vector(cfg.initial)
    return nominal_apex_state(cfg.model, cfg.control, cfg.apex_height)


def cmd_simulate(args) -> int:
    cfg = _load(args)
    if args.cycles < 1:
        raise ConfigError("--cycles must be >= 1")
    out = _prepare_out(cfg)
    traj, records, outcome = simulate(
        _initial_state(cfg), args.cycles, cfg.model, cfg.control,
        record_dense=True, adapt_phi=cfg.adapt_phi,
        abs_tol=cfg.abs_tol, rel_tol=cfg.rel_tol)

    traj.write_csv(out / "trajectory.csv")
    traj.write_events_csv(out / "events.csv")
    cyc = [
        {
            "apex_state": [float(v) for v in r.apex_state.as_vector()],
            "touchdown_state": [float(v) for v in r.touchdown_state.as_vector()],
            "phi_d_used": r.phi_d_used,
            "stance_duration": r.stance_duration,
            "flight_duration": r.flight_duration,
            "energy_injected": r.energy_injected,
        }
        for r in records
    ]
    (out / "cycles.json").write_text(json.dumps(cyc, indent=1, sort_keys=True))

    print(f"cycles completed: {outcome.cycles_completed}/{args.cycles}")
    for i, r in enumerate(records):
        a = r.apex_state
        print(f"  cycle {i + 1:3d}: apex y_c={a.r_c[1]:.4f} vx_c={a.v_c[0]:.4f} "
              f"theta={a.theta:.4f} phi_d={r.phi_d_used:.4f}")
    if outcome.completed:
        print("outcome: completed")
        return 0
    f = outcome.fall
    print(f"outcome: fell during cycle {outcome.cycles_completed + 1} "
          f"({f.reason} at t={f.time:.4f} s)")
    return 1


def _parse_grid(spec: str) -> tuple[np.ndarray, np.ndarray]:
    axes = {}
    for part in spec.split(","):
        fields = part.split(":")
        if len(fields) != 4 or fields[0] not in ("vx", "l0"):
            raise ConfigError(f"bad grid axis {part!r} (want vx:lo:hi:step,l0:lo:hi:step)")
        name = fields[0]
        try:
            lo, hi, step = (float(v) for v in fields[1:])
        except ValueError as exc:
            raise ConfigError(f"bad grid numbers in {part!r}") from exc
        if step <= 0 or hi < lo:
            raise ConfigError(f"bad grid range in {part!r}")
        n = int(round((hi - lo) / step)) + 1
        axes[name] = lo + step * np.arange(n)
    if "vx" not in axes or "l0" not in axes:
        raise ConfigError("grid must define both vx and l0 axes")
    return axes["vx"], axes["l0"]


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out = _prepare_out(cfg)
    vx_values, l0_retract_values = _parse_grid(args.grid)
    l0_swing_values = np.array([
        resolve_l0_swing(v, cfg.retraction_mode, cfg.model.l_0)
        for v in l0_retract_values
    ])
    result = sweep(vx_values, l0_swing_values, cfg.model, cfg.control,
                   max_steps=args.max_steps, apex_height=cfg.apex_height,
                   jobs=args.jobs, abs_tol=cfg.abs_tol, rel_tol=cfg.rel_tol)
    result.write_csv(out / "sweep.csv")
    print(f"grid: {vx_values.size} x {l0_swing_values.size} cells "
          f"(retraction_mode={cfg.retraction_mode})")
    print(f"stable candidates (survived {args.max_steps} steps): {result.n_stable}")
    return 0


def cmd_stability(args) -> int:
    cfg = _load(args)
    out = _prepare_out(cfg)
    try:
        report = stability_report(cfg.model, cfg.control,
                                  apex_height=cfg.apex_height,
                                  abs_tol=cfg.abs_tol, rel_tol=cfg.rel_tol)
    except FixedPointError as exc:
        print(f"no fixed point found: {exc}", file=sys.stderr)
        return 1
    (out / "stability_report.json").write_text(
        json.dumps(report.to_json_dict(), indent=1, sort_keys=True))
    print("fixed point (reduced):", " ".join(_fmt(v) for v in report.fixed_point))
    print(f"residual: {report.residual:.3e}")
    print("floquet multipliers:")
    for w in report.multipliers:
        print(f"  {w.real:+.6f} {w.imag:+.6f}i  |.|={abs(w):.6f}")
    print(f"spectral radius: {report.spectral_radius:.6f}")
    print(f"stable: {report.stable}")
    if report.perturbation is not None:
        print(f"perturbation {report.perturbation.fraction:+.1%} on apex height: "
              f"{report.perturbation.verdict}")
    return 0


def cmd_velocity_map(args) -> int:
    cfg = _load(args)
    out = _prepare_out(cfg)
    v0 = args.v0 if args.v0 is not None else cfg.control.vx_des * 0.8
    pairs = velocity_return_map(cfg.model, cfg.control, v0,
                                adapt_phi=cfg.adapt_phi, n_cycles=args.cycles,
                                apex_height=cfg.apex_height,
                                abs_tol=cfg.abs_tol, rel_tol=cfg.rel_tol)
    with open(out / "velocity_map.csv", "w") as fh:
        fh.write("vx_apex_k,vx_apex_k1\n")
        for a, b in pairs:
            fh.write(f"{_fmt(a)},{_fmt(b)}\n")
    print(f"initial '+': vx = {_fmt(v0)}")
    if not pairs:
        print("no completed cycles")
        return 1
    last_gap = abs(pairs[-1][1] - pairs[-1][0])
    if len(pairs) == args.cycles and last_gap < 1e-4:
        print(f"fixed point 'x': vx = {_fmt(pairs[-1][1])}")
        return 0
    print(f"no fixed point: {len(pairs)}/{args.cycles} cycles completed, "
          f"last apex vx = {_fmt(pairs[-1][1])}")
    return 0 if len(pairs) == args.cycles else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="trunkhopper",
        description="Hybrid simulation and orbital-stability analysis "
                    "of a planar upright-trunk hopper.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run gait cycles, write dense traces")
    _add_common(p)
    p.add_argument("--cycles", type=int, default=100)
    p.add_argument("--no-adapt-phi", action="store_true",
                   help="freeze the angle-of-attack set point at phi_0")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="steps-to-fall over the parameter grid")
    _add_common(p)
    p.add_argument("--grid", default=DEFAULT_GRID,
                   help="vx:lo:hi:step,l0:lo:hi:step (l0 is the retraction parameter)")
    p.add_argument("--max-steps", type=int, default=100)
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("stability", help="fixed point, Floquet multipliers, robustness")
    _add_common(p)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("velocity-map", help="successive apex forward velocities")
    _add_common(p)
    p.add_argument("--cycles", type=int, default=100)
    p.add_argument("--v0", type=float, default=None, help="seed apex velocity")
    p.add_argument("--no-adapt-phi", action="store_true")
    p.set_defaults(func=cmd_velocity_map)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
