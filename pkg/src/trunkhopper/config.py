"""Experiment configuration: YAML key/value tree with shipped defaults.

All mechanical and controller constants default to the nominal hopper, so a
minimal (or empty) config runs the standard experiments.  Angles are given in
degrees in the file and converted to radians once at load time.  The leg
retraction parameter ``l0_retract`` is interpreted per ``retraction_mode``:

* ``relative`` (default): retraction amount, swing rest length
  ``l_0 - l0_retract``.
* ``absolute``: the swing rest length itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .model import ControlParams, ModelParams

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "resolve_l0_swing",
]

DEFAULT_L0_RETRACT = 0.087


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


def resolve_l0_swing(l0_retract: float, mode: str, l_0: float) -> float:
    if mode == "relative":
        value = l_0 - l0_retract
    elif mode == "absolute":
        value = l0_retract
    else:
        raise ConfigError(f"unknown retraction_mode {mode!r} (use relative|absolute)")
    if value <= 0.0:
        raise ConfigError(f"resolved swing rest length {value} is not positive")
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelParams = field(default_factory=ModelParams)
    control: ControlParams = field(default_factory=ControlParams)
    retraction_mode: str = "relative"
    l0_retract: float = DEFAULT_L0_RETRACT
    initial: np.ndarray | None = None
    abs_tol: float = 1e-10
    rel_tol: float = 1e-9
    adapt_phi: bool = True
    apex_height: float = 1.05
    output_dir: Path = Path("out")

    def to_dict(self) -> dict:
        """Effective configuration, round-trippable through the loader."""
        d = {
            "model": {
                "m_c": self.model.m_c, "m_f": self.model.m_f, "J": self.model.J,
                "d": self.model.d, "k": self.model.k, "l_0": self.model.l_0,
                "g": self.model.g,
            },
            "control": {
                "c": self.control.c, "b": self.control.b,
                "phi_0_deg": math.degrees(self.control.phi_0),
                "K": self.control.K, "d_vpp": self.control.d_vpp,
                "delta_deg": math.degrees(self.control.delta),
                "vx_des": self.control.vx_des,
                "l0_retract": self.l0_retract,
            },
            "retraction_mode": self.retraction_mode,
            "l0_swing_resolved": self.control.l0_swing,
            "tolerances": {"abs": self.abs_tol, "rel": self.rel_tol},
            "adapt_phi": self.adapt_phi,
            "apex_height": self.apex_height,
            "output_dir": str(self.output_dir),
        }
        if self.initial is not None:
            d["initial"] = [float(v) for v in self.initial]
        return d

    def dump_yaml(self, path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=True)


def _expect_mapping(value, where: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{where} must be a mapping")
    return value


def _num(raw: dict, key: str, default: float) -> float:
    v = raw.get(key, default)
    try:
        return float(v)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key} must be a number, got {v!r}") from exc


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Build a config from an optional YAML file plus keyword overrides.

    Recognized overrides: ``retraction_mode``, ``l0_retract``, ``vx_des``,
    ``abs_tol``, ``rel_tol``, ``adapt_phi``, ``output_dir``.

    Raises
    ------
    ConfigError
        On unreadable files, non-numeric values, or violated parameter
        invariants.
    """
    raw: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")

    m = _expect_mapping(raw.get("model"), "model")
    try:
        model = ModelParams(
            m_c=_num(m, "m_c", 80.0), m_f=_num(m, "m_f", 3.4),
            J=_num(m, "J", 5.0), d=_num(m, "d", 0.1),
            k=_num(m, "k", 21000.0), l_0=_num(m, "l_0", 1.0),
            g=_num(m, "g", 9.81),
        )
    except ValueError as exc:
        raise ConfigError(f"model parameters: {exc}") from exc

    c = _expect_mapping(raw.get("control"), "control")
    mode = str(overrides.get("retraction_mode")
               or raw.get("retraction_mode", "relative"))
    l0_retract = float(overrides.get("l0_retract")
                       if overrides.get("l0_retract") is not None
                       else _num(c, "l0_retract", DEFAULT_L0_RETRACT))
    vx_des = float(overrides.get("vx_des")
                   if overrides.get("vx_des") is not None
                   else _num(c, "vx_des", 5.0))
    try:
        control = ControlParams(
            c=_num(c, "c", 1900.0), b=_num(c, "b", 80.37),
            phi_0=math.radians(_num(c, "phi_0_deg", 70.0)),
            K=_num(c, "K", 0.15), d_vpp=_num(c, "d_vpp", 0.25),
            delta=math.radians(_num(c, "delta_deg", 0.0)),
            vx_des=vx_des,
            l0_swing=resolve_l0_swing(l0_retract, mode, _num(m, "l_0", 1.0)),
        )
    except ValueError as exc:
        raise ConfigError(f"control parameters: {exc}") from exc

    initial = raw.get("initial")
    if initial is not None:
        initial = np.asarray(initial, dtype=float)
        if initial.shape != (10,):
            raise ConfigError("initial must be a 10-component state vector")

    tols = _expect_mapping(raw.get("tolerances"), "tolerances")
    abs_tol = float(overrides.get("abs_tol")
                    if overrides.get("abs_tol") is not None
                    else _num(tols, "abs", 1e-10))
    rel_tol = float(overrides.get("rel_tol")
                    if overrides.get("rel_tol") is not None
                    else _num(tols, "rel", 1e-9))
    if abs_tol <= 0 or rel_tol <= 0:
        raise ConfigError("tolerances must be positive")

    adapt = overrides.get("adapt_phi")
    if adapt is None:
        adapt = bool(raw.get("adapt_phi", True))
    out_dir = overrides.get("output_dir") or raw.get("output_dir", "out")

    return ExperimentConfig(
        model=model, control=control,
        retraction_mode=mode, l0_retract=l0_retract,
        initial=initial, abs_tol=abs_tol, rel_tol=rel_tol,
        adapt_phi=bool(adapt),
        apex_height=_num(raw, "apex_height", 1.05),
        output_dir=Path(out_dir),
    )
