"""Run configuration: flat ``section.key = value`` files with CLI overrides.

Unknown keys are rejected up front so typos cannot silently change a study.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields
from typing import List, Optional, Tuple


class ConfigError(ValueError):
    pass


BENCHMARKS = ("out_fe_space", "fichera2d", "disk_inclusion")
GEOMETRY_KINDS = ("circle", "flower", "pacman", "halfplane")

_DEF_CONTRASTS = tuple(10.0 ** e for e in range(-6, 7))
_DEF_SCALINGS = tuple(-1.0 + 0.25 * k for k in range(9))


@dataclass
class RunConfig:
    benchmark: str = "out_fe_space"
    order: int = 1
    mode: str = "aggregated"
    eta0: float = 0.25
    beta: Optional[float] = None          # default 10 q^2
    contrast: float = 1.0                 # k_plus/k_minus or mu_plus/mu_minus
    nu: float = 0.3
    seed: int = 0

    geometry_kind: str = "circle"
    geometry_center: Tuple[float, float] = (0.0, 0.0)
    geometry_radius: float = 0.7
    geometry_flower_amplitude: float = 0.3
    geometry_flower_lobes: int = 5
    geometry_sector_start: Optional[float] = None
    geometry_normal: Tuple[float, float] = (1.0, 0.0)
    geometry_offset: float = 0.3

    mesh_domain: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    mesh_initial_level: int = 3
    mesh_max_level: int = 14
    mesh_levels: Tuple[int, ...] = (3, 4, 5, 6, 7)

    cutgeom_depth: Optional[int] = None

    amr_enable: bool = False
    amr_iterations: int = 10
    amr_target_rel_energy: float = 1e-4

    sweep_contrasts: Tuple[float, ...] = _DEF_CONTRASTS
    sweep_scalings: Tuple[float, ...] = _DEF_SCALINGS

    solver_tol: float = 1e-9
    solver_maxit: int = 20000

    cond_enable: bool = False
    cond_modes: Tuple[str, ...] = ("aggregated", "standard")
    cond_scalings: Tuple[str, ...] = ("none", "symmetric-diagonal")

    output_measure_time: bool = False
    debug_dump_matrix: bool = False
    debug_dump_constraints: bool = False

    def beta_value(self) -> float:
        return 10.0 * self.order ** 2 if self.beta is None else self.beta

    def run_id(self) -> str:
        blob = repr(sorted(self.__dict__.items())).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def validate(self) -> None:
        if self.benchmark not in BENCHMARKS:
            raise ConfigError(f"unknown benchmark {self.benchmark!r}")
        if self.geometry_kind not in GEOMETRY_KINDS:
            raise ConfigError(f"unknown geometry.kind {self.geometry_kind!r}")
        if self.order not in (1, 2):
            raise ConfigError(f"order must be 1 or 2, got {self.order}")
        if self.mode not in ("aggregated", "standard"):
            raise ConfigError(f"mode must be aggregated or standard")
        if not (0.0 < self.eta0 <= 1.0):
            raise ConfigError("eta0 must lie in (0, 1]")
        if not (0.0 <= self.nu < 0.5):
            raise ConfigError("nu must lie in [0, 0.5)")
        if self.contrast <= 0:
            raise ConfigError("contrast must be positive")
        if any(a < -1.0 or a > 1.0 for a in self.sweep_scalings):
            raise ConfigError("sweep scalings must lie in [-1, 1]")
        if self.benchmark == "fichera2d" and self.geometry_kind != "pacman":
            raise ConfigError("fichera2d requires geometry.kind = pacman")
        if self.benchmark == "disk_inclusion" and self.geometry_kind != "circle":
            raise ConfigError("disk_inclusion requires geometry.kind = circle")
        if self.mesh_initial_level > self.mesh_max_level:
            raise ConfigError("mesh.initial_level exceeds mesh.max_level")
        for m in self.cond_modes:
            if m not in ("aggregated", "standard"):
                raise ConfigError(f"unknown cond mode {m!r}")
        for s in self.cond_scalings:
            if s not in ("none", "symmetric-diagonal"):
                raise ConfigError(f"unknown cond scaling {s!r}")


_KEY_MAP = {
    "benchmark": ("benchmark", str),
    "order": ("order", int),
    "mode": ("mode", str),
    "eta0": ("eta0", float),
    "beta": ("beta", float),
    "contrast": ("contrast", float),
    "nu": ("nu", float),
    "seed": ("seed", int),
    "geometry.kind": ("geometry_kind", str),
    "geometry.center": ("geometry_center", "pair"),
    "geometry.radius": ("geometry_radius", float),
    "geometry.flower_amplitude": ("geometry_flower_amplitude", float),
    "geometry.flower_lobes": ("geometry_flower_lobes", int),
    "geometry.sector_start": ("geometry_sector_start", float),
    "geometry.normal": ("geometry_normal", "pair"),
    "geometry.offset": ("geometry_offset", float),
    "mesh.domain": ("mesh_domain", "triple"),
    "mesh.initial_level": ("mesh_initial_level", int),
    "mesh.max_level": ("mesh_max_level", int),
    "mesh.levels": ("mesh_levels", "ints"),
    "cutgeom.depth": ("cutgeom_depth", int),
    "amr.enable": ("amr_enable", "bool"),
    "amr.iterations": ("amr_iterations", int),
    "amr.target_rel_energy": ("amr_target_rel_energy", float),
    "sweep.contrasts": ("sweep_contrasts", "floats"),
    "sweep.scalings": ("sweep_scalings", "floats"),
    "solver.tol": ("solver_tol", float),
    "solver.maxit": ("solver_maxit", int),
    "cond.enable": ("cond_enable", "bool"),
    "cond.modes": ("cond_modes", "strs"),
    "cond.scalings": ("cond_scalings", "strs"),
    "output.measure_time": ("output_measure_time", "bool"),
    "debug.dump_matrix": ("debug_dump_matrix", "bool"),
    "debug.dump_constraints": ("debug_dump_constraints", "bool"),
}


def _parse_value(kind, text: str):
    text = text.strip()
    if kind is str:
        return text
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    if kind == "bool":
        if text.lower() in ("true", "1", "yes", "on"):
            return True
        if text.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean from {text!r}")
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if kind == "pair":
        if len(parts) != 2:
            raise ConfigError(f"expected two comma-separated values, got {text!r}")
        return (float(parts[0]), float(parts[1]))
    if kind == "triple":
        if len(parts) != 3:
            raise ConfigError(f"expected three comma-separated values, got {text!r}")
        return (float(parts[0]), float(parts[1]), float(parts[2]))
    if kind == "ints":
        return tuple(int(p) for p in parts)
    if kind == "floats":
        return tuple(float(p) for p in parts)
    if kind == "strs":
        return tuple(parts)
    raise ConfigError(f"unhandled kind {kind}")


def apply_setting(cfg: RunConfig, key: str, value: str) -> None:
    if key not in _KEY_MAP:
        raise ConfigError(f"unknown config key {key!r}")
    attr, kind = _KEY_MAP[key]
    setattr(cfg, attr, _parse_value(kind, value))


def load_config(path, overrides=()) -> RunConfig:
    """Parse a config file, apply ``key=value`` overrides, and validate."""
    cfg = RunConfig()
    try:
        text = open(path).read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}")
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        try:
            apply_setting(cfg, key.strip(), value)
        except ConfigError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, _, value = item.partition("=")
        apply_setting(cfg, key.strip(), value)
    cfg.validate()
    return cfg
