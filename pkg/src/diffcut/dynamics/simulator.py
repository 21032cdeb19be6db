"""Semi-implicit Euler cutting simulation and trajectory recording."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from diffcut.autodiff import ops
from diffcut.autodiff.tape import tape_of, value
from diffcut.dynamics.contact import (
    CuttingSprings,
    KnifeContact,
    boundary_mask,
    damage,
    gravity_forces,
    ground_forces,
)
from diffcut.dynamics.material import elastic_energy, elastic_forces, lame
from diffcut.knife import KnifeGeometry
from diffcut.mesh import CutMesh
from diffcut.params import CATALOG, SimParams

logger = logging.getLogger(__name__)

TRAJECTORY_HEADER = ("t", "fx", "fy", "fz", "fnorm", "knife_y", "knife_z")


class SimulationError(FloatingPointError):
    def __init__(self, step: int, message: str) -> None:
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-5
    duration: float = 0.0
    record_stride: int = 1
    gravity: float = 9.81
    knife: KnifeGeometry = field(default_factory=KnifeGeometry)
    knife_z: float = 0.0
    fw_iters: int = 20
    contact_damping: bool = True
    knife_friction: bool = True
    ground: bool = True
    ground_friction: bool = True
    damage: bool = True
    # strain-rate damping coefficient as a multiple of mu (seconds)
    damping_ratio: float = 1e-4
    bc_distance: float = 0.01
    boundary_conditions: bool = True
    snapshot_steps: tuple = ()
    record_springs: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.duration < 0:
            raise ValueError("duration must be non-negative")
        if self.record_stride < 1:
            raise ValueError("record_stride must be at least 1")
        self.n_steps  # validates divisibility

    @property
    def n_steps(self) -> int:
        n = round(self.duration / self.dt)
        if abs(n * self.dt - self.duration) > 1e-9 * max(1.0, self.duration):
            raise ValueError(f"duration {self.duration} is not a multiple of dt {self.dt}")
        return int(n)


@dataclass
class SimState:
    x: object
    v: object
    k_spring: object
    knife_pos: object
    t: float = 0.0
    step: int = 0


class ConstantVelocity:
    """Straight vertical knife motion at ``velocity_y``."""

    names: tuple = ()

    def velocity(self, theta: dict, t: float):
        return ops.stack([0.0, theta["velocity_y"], 0.0])


@dataclass
class Trajectory:
    t: np.ndarray
    force: np.ndarray
    knife_pos: np.ndarray
    knife_vel: np.ndarray
    snapshots: dict = field(default_factory=dict)
    spring_k: np.ndarray | None = None
    spring_contact: np.ndarray | None = None

    @property
    def fnorm(self) -> np.ndarray:
        return np.linalg.norm(self.force, axis=1)

    def __len__(self) -> int:
        return len(self.t)

    def features(self) -> dict:
        feats = {"force": self.force, "knife_pos": self.knife_pos, "knife_vel": self.knife_vel}
        if self.snapshots:
            feats["snapshots"] = np.stack([self.snapshots[k] for k in sorted(self.snapshots)])
        return feats

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRAJECTORY_HEADER)
            for t, f, fn, kp in zip(self.t, self.force, self.fnorm, self.knife_pos):
                w.writerow([_fmt(t), _fmt(f[0]), _fmt(f[1]), _fmt(f[2]), _fmt(fn), _fmt(kp[1]), _fmt(kp[2])])

    def write_snapshots(self, directory) -> list[Path]:
        out = []
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for step in sorted(self.snapshots):
            path = directory / f"snapshot_{step:08d}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(("vid", "x", "y", "z"))
                for vid, p in enumerate(self.snapshots[step]):
                    w.writerow([vid, _fmt(p[0]), _fmt(p[1]), _fmt(p[2])])
            out.append(path)
        return out


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def read_trajectory_csv(path) -> Trajectory:
    """Read a trajectory CSV; a two-column ``t,fnorm`` file is accepted as force magnitude only."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty trajectory file")
    header = [h.strip() for h in rows[0]]
    data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float).reshape(-1, len(header))
    col = {h: i for i, h in enumerate(header)}
    if "t" not in col or "fnorm" not in col:
        raise ValueError(f"{path}: trajectory needs at least t and fnorm columns, got {header}")
    n = len(data)
    force = np.zeros((n, 3))
    if all(k in col for k in ("fx", "fy", "fz")):
        force = data[:, [col["fx"], col["fy"], col["fz"]]]
    else:
        # magnitude-only data: store it along -y so that fnorm round-trips
        force[:, 1] = -data[:, col["fnorm"]]
    knife = np.zeros((n, 3))
    if "knife_y" in col:
        knife[:, 1] = data[:, col["knife_y"]]
    if "knife_z" in col:
        knife[:, 2] = data[:, col["knife_z"]]
    return Trajectory(data[:, col["t"]], force, knife, np.zeros((n, 3)))


def param_theta(params: SimParams | dict) -> dict:
    """Plain parameter dict from SimParams (or a dict passed through)."""
    if isinstance(params, SimParams):
        return dict(params.values)
    return dict(params)


class Simulator:
    """Cutting simulation over a preprocessed cut mesh.

    Parameters enter as a ``theta`` dict holding every catalog entry (plus
    knife-motion entries when a custom motion is used); any entry may be a Var.
    """

    def __init__(self, cut: CutMesh, config: SimConfig, motion=None, ground_radius_bc: float | None = None):
        self.cut = cut
        self.mesh = cut.base
        self.config = config
        self.motion = motion or ConstantVelocity()
        self.contact = KnifeContact(cut, config.knife, config.fw_iters, config.contact_damping, config.knife_friction)
        self.springs = CuttingSprings(cut)
        self.cut_x = cut.surface.plane_x if cut.surface.plane_x is not None else float(np.mean(cut.surface.triangles[..., 0]))
        self.gravity = gravity_forces(self.mesh.vertex_mass, config.gravity)
        self._bc_radius = ground_radius_bc
        self._fixed_cache: dict = {}

    @property
    def n_springs(self) -> int:
        return self.cut.n_springs

    def fixed_mask(self, ground_radius: float) -> np.ndarray:
        """Boundary-condition mask from the rest state; frozen for the whole rollout."""
        if not self.config.boundary_conditions:
            return np.zeros(self.mesh.n_vertices, dtype=bool)
        r = float(ground_radius if self._bc_radius is None else self._bc_radius)
        if r not in self._fixed_cache:
            self._fixed_cache[r] = boundary_mask(self.mesh.vertices, self.cut_x, r, self.config.bc_distance)
        return self._fixed_cache[r]

    def resolve(self, theta: dict) -> dict:
        """Derived quantities shared by every step."""
        res = dict(theta)
        lam, mu = lame(theta["young"], theta["poisson"])
        res["lam"], res["mu"] = lam, mu
        res["kdamp"] = self.config.damping_ratio * mu
        fixed = self.fixed_mask(value(theta["ground_radius"]))
        free = (~fixed).astype(float)
        res["fixed"] = fixed
        res["inv_mass"] = (free / self.mesh.vertex_mass)[:, None]
        return res

    def initial_state(self, res: dict) -> SimState:
        x = self.mesh.vertices.copy()
        v = np.zeros_like(x)
        ke = res["cut_spring_ke"]
        k = ops.broadcast_to(ke, (self.n_springs,)) if np.ndim(value(ke)) == 0 else ops.mul(ke, 1.0)
        knife = ops.stack([self.cut_x, res["initial_y"], self.config.knife_z])
        return SimState(x, v, k, knife, 0.0, 0)

    def step(self, state: SimState, res: dict, sections: dict | None = None):
        """One step in the prescribed force order; returns ``(new_state, reaction, knife_vel, spring_force)``.

        ``sections`` is an optional step-indexed cache of knife contact
        sections; missing entries are computed and stored.
        """
        cfg = self.config
        i = state.step
        tape = tape_of(state.x, state.v, state.k_spring, state.knife_pos)
        if tape is not None:
            tape.step = i
        x, v = state.x, state.v

        f = self.gravity if cfg.gravity else np.zeros_like(self.gravity)
        if cfg.ground:
            f = f + ground_forces(x, v, res, cfg.contact_damping, cfg.ground_friction, skip=res["fixed"])
        f = f + elastic_forces(x, v, res["lam"], res["mu"], res["kdamp"], self.mesh, step=i)

        kvel = self.motion.velocity(res, state.t)
        sec = None
        if sections is not None:
            sec = sections.get(i)
            if sec is None:
                sec = self.contact.active_sections(value(x), value(state.knife_pos), value(res["sdf_radius"]))
                sections[i] = sec
        fk, spring_force, reaction = self.contact.forces(x, v, state.knife_pos, kvel, res, sec)
        f = f + fk

        k = damage(state.k_spring, spring_force, res["cut_spring_softness"]) if cfg.damage else state.k_spring
        f = f + self.springs.forces(x, v, k, res["cut_spring_kd"])

        v_new = v + cfg.dt * (f * res["inv_mass"])
        x_new = x + cfg.dt * v_new
        knife_new = state.knife_pos + cfg.dt * kvel
        xv = value(x_new)
        if not np.all(np.isfinite(xv)):
            raise SimulationError(i, "non-finite vertex positions")
        new = SimState(x_new, v_new, k, knife_new, (i + 1) * cfg.dt, i + 1)
        return new, reaction, kvel, spring_force

    def is_recorded(self, i: int) -> bool:
        return (i + 1) % self.config.record_stride == 0

    def rollout(self, params, state: SimState | None = None) -> Trajectory:
        """Plain (untaped) rollout over ``config.duration``."""
        return self.run(param_theta(params), state)[0]

    def run(self, theta: dict, state: SimState | None = None, checkpoint_every: int | None = None, sections: dict | None = None):
        """Rollout returning the trajectory and, optionally, plain state checkpoints.

        Checkpoints are keyed by step index and hold the state *before* that step.
        """
        res = self.resolve(theta)
        st = state or self.initial_state(res)
        cfg = self.config
        ts, forces, poses, vels, springs = [], [], [], [], []
        snaps = {}
        checkpoints = {}
        contact = np.zeros(self.n_springs, dtype=bool)
        snap_steps = set(cfg.snapshot_steps)
        for i in range(st.step, st.step + cfg.n_steps):
            if checkpoint_every and i % checkpoint_every == 0:
                checkpoints[i] = plain_state(st)
            st, reaction, kvel, sf = self.step(st, res, sections)
            contact |= np.asarray(sf) > 0
            if self.is_recorded(i):
                ts.append(st.t)
                forces.append(np.asarray(reaction, dtype=float))
                poses.append(np.asarray(st.knife_pos, dtype=float))
                vels.append(np.asarray(kvel, dtype=float))
                if cfg.record_springs:
                    springs.append(np.array(st.k_spring, dtype=float))
            if st.step in snap_steps:
                snaps[st.step] = np.array(st.x, dtype=float)
        n = len(ts)
        traj = Trajectory(
            np.array(ts),
            np.array(forces).reshape(n, 3),
            np.array(poses).reshape(n, 3),
            np.array(vels).reshape(n, 3),
            snaps,
            np.array(springs).reshape(n, self.n_springs) if cfg.record_springs else None,
            contact,
        )
        return traj, checkpoints, st

    def energy(self, state: SimState, params) -> dict:
        """Kinetic, elastic and spring energy of a plain state."""
        theta = param_theta(params)
        lam, mu = lame(theta["young"], theta["poisson"])
        x, v = np.asarray(state.x), np.asarray(state.v)
        kinetic = 0.5 * float(np.sum(self.mesh.vertex_mass * np.einsum("nc,nc->n", v, v)))
        elastic = elastic_energy(x, self.mesh, lam, mu)
        spring = self.springs.energy(x, np.asarray(state.k_spring))
        return {"kinetic": kinetic, "elastic": elastic, "spring": spring, "total": kinetic + elastic + spring}


def plain_state(st: SimState) -> SimState:
    return SimState(
        np.array(value(st.x), dtype=float),
        np.array(value(st.v), dtype=float),
        np.array(value(st.k_spring), dtype=float),
        np.array(value(st.knife_pos), dtype=float),
        st.t,
        st.step,
    )


def default_theta(**overrides) -> dict:
    theta = {n: s.default for n, s in CATALOG.items()}
    theta.update(overrides)
    return theta
