"""Simulation parameter catalog, shared/individual modes and sigmoid bounding."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit, logit

logger = logging.getLogger(__name__)

SHARED = "shared"
INDIVIDUAL = "individual"


class ParamError(ValueError):
    pass


@dataclass(frozen=True)
class ParamSpec:
    name: str
    default: float
    lb: float
    ub: float
    spring_level: bool = False
    unit: str = ""
    description: str = ""

    def __post_init__(self):
        if not self.lb < self.ub:
            raise ParamError(f"{self.name}: lower bound {self.lb} must be below upper bound {self.ub}")
        if not self.lb <= self.default <= self.ub:
            raise ParamError(f"{self.name}: default {self.default} outside [{self.lb}, {self.ub}]")


def _decade(name, default, spring_level=False, unit="", description=""):
    lo, hi = sorted((default / 10.0, default * 10.0))
    return ParamSpec(name, default, lo, hi, spring_level, unit, description)


MATERIALS = {
    "apple": {"young": 3.0e6, "poisson": 0.17, "density": 787.0},
    "potato": {"young": 2.0e6, "poisson": 0.45, "density": 630.0},
    "cucumber": {"young": 2.5e6, "poisson": 0.37, "density": 950.0},
}

CATALOG: dict[str, ParamSpec] = {
    p.name: p
    for p in (
        _decade("velocity_y", -0.05, unit="m/s", description="vertical knife velocity"),
        _decade("initial_y", 0.08, unit="m", description="initial knife height"),
        ParamSpec("cut_spring_ke", 500.0, 100.0, 1500.0, True, "N/m", "initial cutting spring stiffness"),
        _decade("cut_spring_kd", 0.1, True, "N s/m", "cutting spring damping"),
        _decade("cut_spring_softness", 500.0, True, "1/m", "damage rate of a cutting spring"),
        _decade("sdf_radius", 0.5e-3, True, "m", "contact shell around the knife"),
        ParamSpec("sdf_ke", 1000.0, 500.0, 8000.0, True, "N/m^2", "knife contact stiffness"),
        _decade("sdf_kd", 1.0, True, "N s/m^2", "knife contact damping"),
        _decade("sdf_kf", 0.01, True, "s/m", "knife friction slope"),
        _decade("sdf_mu", 0.5, True, "", "knife friction coefficient"),
        _decade("ground_ke", 100.0, unit="N/m^2", description="ground contact stiffness"),
        _decade("ground_kd", 0.1, unit="N s/m^2", description="ground contact damping"),
        _decade("ground_kf", 0.2, unit="s/m", description="ground friction slope"),
        _decade("ground_mu", 0.6, description="ground friction coefficient"),
        _decade("ground_radius", 1.0e-3, unit="m", description="vertex sphere radius for ground contact"),
        _decade("young", MATERIALS["apple"]["young"], unit="Pa", description="Young's modulus"),
        ParamSpec("poisson", MATERIALS["apple"]["poisson"], 0.01, 0.49, False, "", "Poisson's ratio"),
    )
}

SPRING_PARAMS = tuple(n for n, s in CATALOG.items() if s.spring_level)


def project(x, lb: float, ub: float):
    """Map an unconstrained real to the open interval (lb, ub)."""
    return expit(x) * (ub - lb) + lb


def project_grad(x, lb: float, ub: float):
    s = expit(x)
    return s * (1.0 - s) * (ub - lb)


def unproject(v, lb: float, ub: float):
    v = np.asarray(v, dtype=float)
    if np.any(v <= lb) or np.any(v >= ub):
        raise ParamError(f"value {v} not strictly inside ({lb}, {ub})")
    return logit((v - lb) / (ub - lb))


def expand(v, n: int, mode: str = SHARED) -> np.ndarray:
    """Per-spring vector from a shared scalar or an individual vector."""
    if n <= 0:
        raise ParamError("spring count must be positive")
    if mode == SHARED:
        return np.full(n, float(np.asarray(v).reshape(())))
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise ParamError(f"individual parameter has length {v.size}, expected {n}")
    return v.copy()


@dataclass(frozen=True)
class SimParams:
    """Concrete values for every catalog parameter.

    Spring-level parameters in individual mode hold one value per spring;
    everything else is a scalar float.
    """

    values: dict
    modes: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)

    @classmethod
    def defaults(cls, material: str = "apple", **overrides) -> "SimParams":
        values = {n: s.default for n, s in CATALOG.items()}
        bounds = {n: (s.lb, s.ub) for n, s in CATALOG.items()}
        mat = MATERIALS[material]
        values["young"] = mat["young"]
        values["poisson"] = mat["poisson"]
        bounds["young"] = (mat["young"] / 10, mat["young"] * 10)
        p = cls(values, {n: SHARED for n in SPRING_PARAMS}, bounds)
        return p.with_values(**overrides) if overrides else p

    def __getitem__(self, name: str):
        return self.values[name]

    def mode(self, name: str) -> str:
        return self.modes.get(name, SHARED)

    def with_values(self, **kw) -> "SimParams":
        values = dict(self.values)
        modes = dict(self.modes)
        for name, v in kw.items():
            if name not in CATALOG:
                raise ParamError(f"unknown parameter {name!r}")
            arr = np.asarray(v, dtype=float)
            if arr.ndim == 0:
                values[name] = float(arr)
                if CATALOG[name].spring_level:
                    modes[name] = SHARED
            else:
                if not CATALOG[name].spring_level:
                    raise ParamError(f"{name} cannot be set per spring")
                values[name] = arr.copy()
                modes[name] = INDIVIDUAL
        return replace(self, values=values, modes=modes)

    def with_bounds(self, name: str, lb: float, ub: float) -> "SimParams":
        bounds = dict(self.bounds)
        bounds[name] = (float(lb), float(ub))
        return replace(self, bounds=bounds)

    def individual(self, name: str, n_springs: int) -> "SimParams":
        """Switch a spring-level parameter to individual mode by broadcasting."""
        v = expand(self.values[name], n_springs, self.mode(name))
        return self.with_values(**{name: v})

    def expanded(self, n_springs: int) -> "SimParams":
        p = self
        for name in SPRING_PARAMS:
            p = p.individual(name, n_springs)
        return p

    def validate(self, n_springs: int | None = None) -> None:
        for name, v in self.values.items():
            lb, ub = self.bounds[name]
            arr = np.asarray(v)
            if np.any(arr < lb) or np.any(arr > ub):
                raise ParamError(f"{name} = {v} outside bounds [{lb}, {ub}]")
            if arr.ndim and n_springs is not None and arr.shape != (n_springs,):
                raise ParamError(f"{name} has {arr.size} values for {n_springs} springs")

    def as_config_lines(self) -> list[str]:
        lines = []
        for name in CATALOG:
            v = self.values[name]
            if np.ndim(v):
                lines.append(f"{name} = " + ", ".join(f"{x:.17g}" for x in v))
                lines.append(f"{name}.mode = {INDIVIDUAL}")
            else:
                lines.append(f"{name} = {v:.17g}")
            lb, ub = self.bounds[name]
            if (lb, ub) != (CATALOG[name].lb, CATALOG[name].ub):
                lines.append(f"{name}.lb = {lb:.17g}")
                lines.append(f"{name}.ub = {ub:.17g}")
        return lines


def parse_config(text: str, source: str = "<config>") -> dict[str, str]:
    """Read ``name = value`` lines into an ordered dict of raw strings."""
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParamError(f"{source}:{lineno}: expected 'name = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParamError(f"{source}:{lineno}: missing name")
        entries[key] = val
    return entries


def load_config(path) -> dict[str, str]:
    return parse_config(Path(path).read_text(), str(path))


def _numbers(text: str) -> np.ndarray:
    return np.array([float(t) for t in text.replace(",", " ").split()])


def params_from_entries(entries: dict[str, str], base: SimParams | None = None) -> tuple[SimParams, dict[str, str]]:
    """Apply the parameter entries of a config; returns the params and the leftover entries."""
    p = base or SimParams.defaults(entries.get("material", "apple"))
    rest = {}
    for key, val in entries.items():
        name, _, attr = key.partition(".")
        if name not in CATALOG:
            rest[key] = val
            continue
        try:
            if attr == "":
                nums = _numbers(val)
                # a single value in individual mode is broadcast by finalize_modes
                p = p.with_values(**{name: nums[0] if len(nums) == 1 else nums})
            elif attr == "mode":
                if val not in (SHARED, INDIVIDUAL):
                    raise ParamError(f"{key}: mode must be {SHARED!r} or {INDIVIDUAL!r}")
            elif attr in ("lb", "ub"):
                lb, ub = p.bounds[name]
                p = p.with_bounds(name, float(val) if attr == "lb" else lb, float(val) if attr == "ub" else ub)
            else:
                raise ParamError(f"unknown attribute {key!r}")
        except ValueError as exc:
            raise ParamError(f"{key}: {exc}") from None
    return p, rest


def finalize_modes(p: SimParams, entries: dict[str, str], n_springs: int) -> SimParams:
    """Broadcast parameters whose config asked for individual mode with a single value."""
    for key, val in entries.items():
        name, _, attr = key.partition(".")
        if attr == "mode" and val == INDIVIDUAL and np.ndim(p.values[name]) == 0:
            p = p.individual(name, n_springs)
    return p


@dataclass(frozen=True)
class ParamVector:
    """Flat unconstrained view of a subset of parameters.

    Each free parameter contributes one coordinate (shared) or one per spring
    (individual). ``values(x)`` returns the constrained values.
    """

    base: SimParams
    free: tuple

    def __post_init__(self):
        for name in self.free:
            if name not in CATALOG:
                raise ParamError(f"unknown parameter {name!r}")

    @property
    def sizes(self) -> list[int]:
        return [int(np.size(self.base.values[n])) for n in self.free]

    @property
    def size(self) -> int:
        return sum(self.sizes)

    def _split(self, flat):
        out, k = {}, 0
        for name, n in zip(self.free, self.sizes):
            seg = np.asarray(flat[k : k + n], dtype=float)
            out[name] = seg[0] if np.ndim(self.base.values[name]) == 0 else seg
            k += n
        return out

    def lower(self) -> np.ndarray:
        return np.concatenate([np.full(n, self.base.bounds[name][0]) for name, n in zip(self.free, self.sizes)])

    def upper(self) -> np.ndarray:
        return np.concatenate([np.full(n, self.base.bounds[name][1]) for name, n in zip(self.free, self.sizes)])

    def x0(self) -> np.ndarray:
        v = np.concatenate([np.atleast_1d(np.asarray(self.base.values[n], dtype=float)) for n in self.free])
        return unproject(v, self.lower(), self.upper())

    def flat_values(self, x) -> np.ndarray:
        return project(np.asarray(x, dtype=float), self.lower(), self.upper())

    def values(self, x) -> dict:
        return self._split(self.flat_values(x))

    def to_params(self, x) -> SimParams:
        return self.base.with_values(**self.values(x))

    def value_grad_to_x(self, x, grad_values) -> np.ndarray:
        """Chain a gradient w.r.t. constrained values through the sigmoid."""
        return np.asarray(grad_values, dtype=float) * project_grad(np.asarray(x, dtype=float), self.lower(), self.upper())

    def flatten(self, d: dict) -> np.ndarray:
        return np.concatenate([np.atleast_1d(np.asarray(d[n], dtype=float)).ravel() for n in self.free])

    def labels(self) -> list[str]:
        out = []
        for name, n in zip(self.free, self.sizes):
            out += [name] if np.ndim(self.base.values[name]) == 0 else [f"{name}[{i}]" for i in range(n)]
        return out
