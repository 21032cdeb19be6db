"""Keyframe knife motion and constrained motion optimization.

The knife velocity is parameterized by ``k`` keyframes, each with a lateral
amplitude ``a``, a lateral frequency ``b`` and a vertical velocity ``c``,
blended over time by unnormalized RBF weights. The objective is the time
average of the knife force norm plus the vertical velocity. The lateral
excursion bound ``|z| <= l/2`` is enforced as an equality constraint with a
slack variable and solved with the modified differential method of
multipliers (MDMM).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from diffcut.autodiff import ops
from diffcut.autodiff.rollout import RolloutTape
from diffcut.autodiff.tape import value
from diffcut.dynamics.simulator import Simulator, Trajectory, param_theta
from diffcut.inference import adam

logger = logging.getLogger(__name__)

MOTION_KEYS = ("motion.a", "motion.b", "motion.c")
DEFAULT_BLADE_LENGTH = 0.15
SMOOTH_MAX_SHARPNESS = 1e3


class MotionDivergence(RuntimeError):
    """The objective grew beyond the divergence limit."""

    def __init__(self, iteration: int, value: float, initial: float) -> None:
        super().__init__(f"iteration {iteration}: objective {value:.6g} exceeds 10x the initial {initial:.6g}")
        self.iteration = iteration


def rbf_weights(t: float, times: np.ndarray, sigma: float) -> np.ndarray:
    """``w_i = exp(-(t - t_i)^2 / (2 sigma^2))``, unnormalized."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    d = t - np.asarray(times, dtype=float)
    return np.exp(-(d * d) / (2.0 * sigma * sigma))


def keyframe_times(k: int, horizon: float) -> np.ndarray:
    if k < 1:
        raise ValueError("at least one keyframe is required")
    return np.linspace(0.0, horizon, k) if k > 1 else np.zeros(1)


@dataclass(frozen=True)
class MotionParams:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    times: np.ndarray
    sigma: float
    slack: float = 0.0

    def __post_init__(self):
        k = len(self.times)
        for name in ("a", "b", "c"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if len(arr) != k:
                raise ValueError(f"{name} has {len(arr)} entries, expected {k} keyframes")
            object.__setattr__(self, name, arr)
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    @property
    def k(self) -> int:
        return len(self.times)

    @classmethod
    def vertical(cls, velocity_y: float, k: int, horizon: float, sigma: float, dt: float | None = None) -> "MotionParams":
        """Vertical-only motion whose ``c . w(t)`` best fits a constant ``velocity_y`` (least squares)."""
        times = keyframe_times(k, horizon)
        grid = np.linspace(0.0, horizon, 201) if dt is None else np.arange(0.0, horizon, dt)
        w = np.stack([rbf_weights(t, times, sigma) for t in grid])
        c = np.linalg.lstsq(w, np.full(len(grid), velocity_y), rcond=None)[0]
        return cls(np.zeros(k), np.zeros(k), c, times, sigma)

    def theta(self) -> dict:
        return {"motion.a": self.a, "motion.b": self.b, "motion.c": self.c}

    def with_vector(self, u: np.ndarray) -> "MotionParams":
        k = self.k
        return replace(self, a=u[:k], b=u[k : 2 * k], c=u[2 * k : 3 * k], slack=float(u[3 * k]))

    def vector(self) -> np.ndarray:
        return np.concatenate([self.a, self.b, self.c, [self.slack]])

    def as_config_lines(self) -> list[str]:
        fmt = lambda v: " ".join(f"{x:.17g}" for x in v)  # noqa: E731
        return [
            f"motion.times = {fmt(self.times)}",
            f"motion.sigma = {self.sigma:.17g}",
            f"motion.a = {fmt(self.a)}",
            f"motion.b = {fmt(self.b)}",
            f"motion.c = {fmt(self.c)}",
        ]


def knife_velocity(t: float, mp: MotionParams) -> tuple[float, float]:
    """``(z_dot, y_dot)`` at time ``t``."""
    w = rbf_weights(t, mp.times, mp.sigma)
    return float(np.dot(mp.a, w) * np.cos(np.dot(mp.b, w) * t)), float(np.dot(mp.c, w))


class KeyframeMotion:
    """Knife velocity ``(0, c.w, (a.w) cos((b.w) t))`` read from ``theta['motion.*']``."""

    def __init__(self, times: np.ndarray, sigma: float):
        self.times = np.asarray(times, dtype=float)
        self.sigma = float(sigma)

    def velocity(self, theta: dict, t: float):
        w = rbf_weights(t, self.times, self.sigma)
        za = ops.sum(ops.mul(theta["motion.a"], w))
        zb = ops.sum(ops.mul(theta["motion.b"], w))
        yd = ops.sum(ops.mul(theta["motion.c"], w))
        zd = za * ops.cos(zb * t)
        return ops.stack([0.0, yd, zd])


def objective_terms(feats: dict):
    """Time-mean of ``|f_knife| + y_dot`` and the mean knife force alone."""
    fn = ops.norm_rows(feats["force"])
    yd = ops.getitem(feats["knife_vel"], (slice(None), 1))
    return ops.mean(fn + yd), ops.mean(fn)


def excursion(feats: dict, sharpness: float = SMOOTH_MAX_SHARPNESS):
    """Smooth maximum of ``|z_knife(t)|`` over the recorded steps (an upper bound of the true maximum)."""
    z = ops.getitem(feats["knife_pos"], (slice(None), 2))
    return ops.logsumexp(ops.absolute(z), beta=sharpness)


def objective(traj: Trajectory) -> float:
    """Discretized motion objective of a recorded rollout."""
    return float(objective_terms(traj.features())[0])


@dataclass
class MdmmState:
    lam: float = 0.0
    damping: float = 1.0
    lr: float = 1e-3
    lr_multiplier: float = 1.0

    def __post_init__(self):
        if self.damping <= 0:
            raise ValueError("MDMM damping must be positive")


def mdmm_step(u: np.ndarray, state: MdmmState, grad_l: np.ndarray, g: float, grad_g: np.ndarray):
    """``u' = u - lr (dL + lam dg + c g dg)``, ``lam' = lam + lr_multiplier g``."""
    u_new = np.asarray(u, dtype=float) - state.lr * (grad_l + (state.lam + state.damping * g) * grad_g)
    return u_new, replace(state, lam=state.lam + state.lr_multiplier * g)


@dataclass
class MotionResult:
    motion: MotionParams
    history: list = field(default_factory=list)  # dicts per iteration
    trajectory: Trajectory | None = None
    state: MdmmState | None = None


class MotionProblem:
    """Rollout objective and lateral constraint for a knife motion."""

    def __init__(
        self,
        sim: Simulator,
        params,
        blade_length: float = DEFAULT_BLADE_LENGTH,
        sharpness: float = SMOOTH_MAX_SHARPNESS,
        checkpoint: int | None = 100,
    ):
        if not isinstance(sim.motion, KeyframeMotion):
            raise TypeError("the simulator must use a KeyframeMotion")
        self.sim = sim
        self.base_theta = param_theta(params)
        self.half_length = 0.5 * blade_length
        self.sharpness = sharpness
        self.checkpoint = checkpoint

    def _theta(self, mp: MotionParams) -> dict:
        th = dict(self.base_theta)
        th.update(mp.theta())
        return th

    def rollout(self, mp: MotionParams) -> Trajectory:
        return self.sim.run(self._theta(mp))[0]

    def constraint(self, mp: MotionParams, zmax) -> float:
        return self.half_length - zmax - mp.slack**2

    def evaluate(self, mp: MotionParams, kappa_fn=None):
        """Objective and constraint values with the gradient of ``L + kappa g``.

        ``kappa_fn(g)`` maps the constraint value to its weight; ``None``
        differentiates the objective alone. Returns ``(info, grad_u)`` where
        ``grad_u`` is over ``[a, b, c, slack]``.
        """
        info = {}

        def loss_fn(feats):
            total, mean_force = objective_terms(feats)
            zmax = excursion(feats, self.sharpness)
            g = self.half_length - zmax - mp.slack**2
            info.update(L=float(value(total)), mean_force=float(value(mean_force)), zmax=float(value(zmax)), g=float(value(g)))
            if kappa_fn is None:
                return total
            info["kappa"] = kappa = float(kappa_fn(info["g"]))
            return total + kappa * g

        rt = RolloutTape(self.sim, self._theta(mp), MOTION_KEYS, loss_fn, self.checkpoint)
        grads = rt.backward()
        k = mp.k
        gu = np.concatenate([grads["motion.a"], grads["motion.b"], grads["motion.c"], [0.0]])
        if kappa_fn is not None:
            gu[3 * k] = info["kappa"] * (-2.0 * mp.slack)
        info["true_zmax"] = float(np.max(np.abs(rt.trajectory.knife_pos[:, 2]))) if len(rt.trajectory) else 0.0
        return info, gu, rt.trajectory


def _check_divergence(i: int, val: float, initial: float) -> None:
    if not np.isfinite(val) or (initial > 0 and val > 10.0 * initial) or (initial <= 0 and val > initial + 10.0 * abs(initial)):
        raise MotionDivergence(i, val, initial)


def optimize_motion(
    problem: MotionProblem,
    init: MotionParams,
    iters: int = 50,
    constrained: bool = True,
    lr: float = 1e-3,
    damping: float = 1.0,
    lr_multiplier: float = 1.0,
) -> MotionResult:
    """MDMM (constrained) or Adam (unconstrained) descent on the motion objective.

    The slack starts so that the constraint holds with equality. The returned
    motion is the last iterate; ``history`` records the objective, mean force,
    excursion and multiplier of every evaluated iterate.
    """
    mp = init
    history: list = []
    if constrained:
        info, _, _ = problem.evaluate(mp, kappa_fn=None)
        margin = problem.half_length - info["zmax"]
        mp = replace(mp, slack=float(np.sqrt(max(margin, 0.0))))
        state = MdmmState(0.0, damping, lr, lr_multiplier)
        initial = None
        traj = None
        for i in range(iters):
            info, gu, traj = problem.evaluate(mp, kappa_fn=lambda g: state.lam + state.damping * g)
            if initial is None:
                initial = info["L"]
            _check_divergence(i, info["L"], initial)
            history.append(dict(iteration=i, lam=state.lam, **info))
            logger.info("mdmm %d L %.6g force %.6g zmax %.4g g %.3g lam %.4g", i, info["L"], info["mean_force"], info["zmax"], info["g"], state.lam)
            # dL + (lam + c g) dg is exactly the gradient taken at weight kappa
            u = mp.vector()
            u_new = u - state.lr * gu
            state = replace(state, lam=state.lam + state.lr_multiplier * info["g"])
            mp = mp.with_vector(u_new)
        final = problem.rollout(mp)
        return MotionResult(mp, history, final, state)

    initial = []
    k = init.k

    def fn(x):
        cur = mp.with_vector(np.concatenate([x, [0.0]]))
        info, gu, _ = problem.evaluate(cur)
        if not initial:
            initial.append(info["L"])
        _check_divergence(len(history), info["L"], initial[0])
        history.append(dict(iteration=len(history), **info))
        logger.info("adam %d L %.6g force %.6g zmax %.4g", len(history) - 1, info["L"], info["mean_force"], info["zmax"])
        return info["L"], gu[: 3 * k]

    res = adam(fn, init.vector()[: 3 * k], iters, lr)
    mp = init.with_vector(np.concatenate([res.x, [0.0]]))
    return MotionResult(mp, history, problem.rollout(mp), None)


def write_knife_path(path, traj: Trajectory) -> None:
    """Knife path as CSV ``t,y,z``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "y", "z"])
        for t, p in zip(traj.t, traj.knife_pos):
            w.writerow([f"{t:.17g}", f"{p[1]:.17g}", f"{p[2]:.17g}"])
