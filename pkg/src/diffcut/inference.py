"""Trajectory losses, Adam calibration, preconditioned SGLD and HMC.

Every optimizer works on the unconstrained coordinates of a
:class:`~diffcut.params.ParamVector`, so reported estimates and samples are
inside the parameter bounds by construction. The likelihood of a reference
trajectory is ``exp(-loss / temperature)`` under a uniform prior.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from diffcut.autodiff import ops
from diffcut.autodiff.rollout import value_and_grad
from diffcut.autodiff.tape import value
from diffcut.dynamics.simulator import Simulator, Trajectory, param_theta
from diffcut.params import ParamVector, SimParams

logger = logging.getLogger(__name__)

LOSS_KINDS = ("L1", "L2", "inverse-cosine", "logsumexp")
CHANNELS = ("fnorm", "force")


class LossError(ValueError):
    pass


class InferenceError(RuntimeError):
    """An optimizer produced a non-finite loss or gradient."""

    def __init__(self, iteration: int, message: str) -> None:
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass(frozen=True)
class LossConfig:
    """Trajectory loss. ``channel`` selects the knife force norm or the force vector."""

    kind: str = "L1"
    channel: str = "fnorm"
    vertex_weight: float = 0.0
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise LossError(f"unknown loss kind {self.kind!r}; expected one of {', '.join(LOSS_KINDS)}")
        if self.channel not in CHANNELS:
            raise LossError(f"unknown loss channel {self.channel!r}")
        if self.vertex_weight < 0:
            raise LossError("vertex_weight must be >= 0")


def _series(feats: dict, channel: str):
    f = feats["force"]
    return ops.norm_rows(f) if channel == "fnorm" else f


def _check_grid(t_sim: np.ndarray, ref: Trajectory) -> None:
    if len(t_sim) != len(ref.t):
        raise LossError(f"trajectory length mismatch: simulated {len(t_sim)} vs reference {len(ref.t)}")
    if not np.allclose(t_sim, ref.t, rtol=1e-9, atol=1e-12):
        raise LossError("simulated and reference time grids differ")


def series_loss(phi_s, phi_r: np.ndarray, kind: str, eps: float = 1e-8):
    """Loss between two per-timestep series of shape (T,) or (T, C)."""
    phi_r = np.asarray(phi_r, dtype=float)
    if np.shape(value(phi_s)) != phi_r.shape:
        raise LossError(f"series shape mismatch: {np.shape(value(phi_s))} vs {phi_r.shape}")
    diff = ops.sub(phi_s, phi_r)
    vector = phi_r.ndim > 1
    if kind == "L1":
        per_t = ops.sum(ops.absolute(diff), axis=-1) if vector else ops.absolute(diff)
        return ops.mean(per_t)
    if kind == "L2":
        per_t = ops.sum(ops.square(diff), axis=-1) if vector else ops.square(diff)
        return ops.mean(per_t)
    if kind == "inverse-cosine":
        dot = ops.sum(ops.mul(phi_s, phi_r))
        ns = ops.sqrt(ops.sum(ops.square(phi_s)))
        denom = ops.maximum(ns * float(np.linalg.norm(phi_r)), eps)
        return 1.0 - dot / denom
    if kind == "logsumexp":
        per_t = ops.sum(diff, axis=-1) if vector else diff
        return ops.logsumexp(per_t)
    raise LossError(f"unknown loss kind {kind!r}")


def feature_loss(feats: dict, ref: Trajectory, config: LossConfig = LossConfig(), t=None):
    """Loss of trajectory features (plain arrays or Vars) against a reference."""
    if t is not None:
        _check_grid(np.asarray(t), ref)
    elif len(value(feats["force"])) != len(ref.t):
        raise LossError(f"trajectory length mismatch: simulated {len(value(feats['force']))} vs reference {len(ref.t)}")
    total = series_loss(_series(feats, config.channel), _series(ref.features(), config.channel), config.kind, config.eps)
    if config.vertex_weight > 0:
        total = total + config.vertex_weight * _vertex_term(feats, ref)
    return total


def _vertex_term(feats: dict, ref: Trajectory):
    if "snapshots" not in feats or not ref.snapshots:
        raise LossError("vertex-position loss needs snapshots in both trajectories")
    ref_snaps = np.stack([ref.snapshots[k] for k in sorted(ref.snapshots)])
    sim_snaps = feats["snapshots"]
    if np.shape(value(sim_snaps)) != ref_snaps.shape:
        raise LossError("snapshot steps or vertex counts differ from the reference")
    d = ops.sub(sim_snaps, ref_snaps)
    return ops.mean(ops.sum(ops.square(d), axis=-1))


def loss(sim: Trajectory, ref: Trajectory, config: LossConfig = LossConfig()) -> float:
    """Loss between a simulated and a reference trajectory."""
    return float(feature_loss(sim.features(), ref, config, t=sim.t))


class TrajectoryLoss:
    """Feature loss averaged over one or more reference trajectories (picklable)."""

    def __init__(self, refs: Sequence[Trajectory], config: LossConfig = LossConfig()):
        self.refs = list(refs)
        if not self.refs:
            raise LossError("at least one reference trajectory is required")
        self.config = config

    def __call__(self, feats):
        total = feature_loss(feats, self.refs[0], self.config)
        for r in self.refs[1:]:
            total = total + feature_loss(feats, r, self.config)
        return total * (1.0 / len(self.refs)) if len(self.refs) > 1 else total


def make_loss_fn(refs: Sequence[Trajectory], config: LossConfig = LossConfig()) -> Callable[[dict], object]:
    """Feature loss averaged over one or more reference trajectories."""
    return TrajectoryLoss(refs, config)


class CalibrationObjective:
    """Loss, energy and their gradients as functions of unconstrained coordinates.

    ``energy(x)`` is ``loss / temperature`` minus the log-Jacobian of the
    sigmoid map, i.e. the negative log posterior under a uniform prior on the
    bounded parameters, expressed in unconstrained space.
    """

    def __init__(
        self,
        sim: Simulator,
        refs: Trajectory | Sequence[Trajectory],
        vector: ParamVector,
        config: LossConfig = LossConfig(),
        temperature: float = 1.0,
        checkpoint: int | None = 100,
        prior_jacobian: bool = True,
        extra_theta: dict | None = None,
    ):
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        self.sim = sim
        self.refs = [refs] if isinstance(refs, Trajectory) else list(refs)
        for r in self.refs:
            if len(r.t) != self._expected_length():
                raise LossError(f"reference has {len(r.t)} samples, simulation records {self._expected_length()}")
        self.vector = vector
        self.config = config
        self.temperature = float(temperature)
        self.checkpoint = checkpoint
        self.prior_jacobian = prior_jacobian
        self.extra_theta = dict(extra_theta or {})
        self.loss_fn = make_loss_fn(self.refs, config)
        self.evaluations = 0

    def _expected_length(self) -> int:
        return self.sim.config.n_steps // self.sim.config.record_stride

    def theta(self, x) -> dict:
        th = param_theta(self.vector.to_params(x))
        th.update(self.extra_theta)
        return th

    def loss(self, x) -> float:
        traj = self.sim.run(self.theta(x))[0]
        return float(self.loss_fn(traj.features()))

    def loss_and_grad(self, x) -> tuple[float, np.ndarray]:
        x = np.asarray(x, dtype=float)
        self.evaluations += 1
        val, grads, _ = value_and_grad(self.sim, self.theta(x), self.vector.free, self.loss_fn, self.checkpoint)
        g = self.vector.value_grad_to_x(x, self.vector.flatten(grads))
        return float(val), g

    def _log_jacobian(self, x):
        s = expit(x)
        lj = float(np.sum(np.log(s) + np.log1p(-s)))
        return lj, 1.0 - 2.0 * s

    def energy(self, x) -> tuple[float, np.ndarray, float]:
        """``(U, dU/dx, loglik)``."""
        x = np.asarray(x, dtype=float)
        val, g = self.loss_and_grad(x)
        u, gu = val / self.temperature, g / self.temperature
        if self.prior_jacobian:
            lj, glj = self._log_jacobian(x)
            u, gu = u - lj, gu - glj
        return u, gu, -val / self.temperature

    def values(self, x) -> np.ndarray:
        return self.vector.flat_values(x)


# -- optimizers ---------------------------------------------------------------


@dataclass
class AdamResult:
    x: np.ndarray
    best_x: np.ndarray
    best_loss: float
    history: list = field(default_factory=list)  # (iteration, loss, x)
    iterations: int = 0


def adam(
    fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0,
    iters: int,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    patience: int | None = None,
    callback=None,
) -> AdamResult:
    """Adam descent on ``fn(x) -> (loss, grad)``.

    ``history[i]`` holds the loss at the iterate *before* update ``i + 1``.
    With ``patience`` set, the run stops once the best loss has not improved
    for that many iterations.
    """
    x = np.array(x0, dtype=float)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    res = AdamResult(x.copy(), x.copy(), np.inf)
    since_best = 0
    for i in range(1, iters + 1):
        val, g = fn(x)
        g = np.asarray(g, dtype=float)
        if not np.isfinite(val) or not np.all(np.isfinite(g)):
            raise InferenceError(i, f"non-finite loss or gradient (loss={val})")
        res.history.append((i - 1, float(val), x.copy()))
        if callback is not None:
            callback(i - 1, val, x)
        if val < res.best_loss:
            res.best_loss, res.best_x, since_best = float(val), x.copy(), 0
        else:
            since_best += 1
        res.iterations = i
        if patience is not None and since_best >= patience:
            break
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**i)
        v_hat = v / (1.0 - beta2**i)
        x = x - lr * m_hat / (np.sqrt(v_hat) + eps)
    res.x = x
    return res


@dataclass
class Calibration:
    params: SimParams
    values: dict
    best_loss: float
    result: AdamResult


def adam_calibrate(
    objective: CalibrationObjective,
    iters: int = 300,
    lr: float = 0.1,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    x0=None,
    patience: int | None = None,
) -> Calibration:
    """Point estimate minimising the trajectory loss; returns the best iterate seen."""
    vec = objective.vector
    start = vec.x0() if x0 is None else np.asarray(x0, dtype=float)

    def log(i, val, x):
        shown = ", ".join(f"{k}={v:.6g}" for k, v in zip(vec.labels(), vec.flat_values(x)))
        logger.info("adam %d loss %.6g %s", i, val, shown)

    res = adam(objective.loss_and_grad, start, iters, lr, beta1, beta2, eps, patience, callback=log)
    return Calibration(vec.to_params(res.best_x), vec.values(res.best_x), res.best_loss, res)


# -- samplers -----------------------------------------------------------------


@dataclass(frozen=True)
class PosteriorSample:
    values: np.ndarray
    loglik: float
    iteration: int
    chain: int = 0


@dataclass
class SamplerResult:
    samples: list
    chain: list  # every visited unconstrained point, in order
    acceptance_rate: float = 1.0


def _identity(x):
    return np.array(x, dtype=float)


def sgld_sample(
    energy: Callable[[np.ndarray], tuple],
    x0,
    iters: int,
    burn_in: int = 90,
    lr: float = 0.01,
    beta1: float = 0.9,
    beta2: float = 0.95,
    eps: float = 1e-8,
    rule: str = "adam",
    noise: bool = True,
    precondition: bool = True,
    rng: np.random.Generator | None = None,
    to_values: Callable | None = None,
) -> SamplerResult:
    """Preconditioned stochastic gradient Langevin dynamics.

    ``energy(x)`` returns ``(U, grad U, loglik)``. ``rule="adam"`` uses the
    bias-corrected momentum and second moment with ``A = 1 / (sqrt(v_hat) + eps)``,
    drift ``lr * m_hat * A`` and noise ``N(0, lr * A)``. ``rule="rmsprop"``
    uses ``V = beta2 V + (1 - beta2) g^2``, ``A = 1 / (eps + sqrt(V))`` and drift
    ``lr / 2 * A * g``. With ``precondition=False`` the preconditioner is the
    identity and the drift uses the raw gradient (``lr * g`` or ``lr / 2 * g``).
    The sample at iteration ``i`` is the point at which the energy was
    evaluated; those with ``i >= burn_in`` are returned.
    """
    if rule not in ("adam", "rmsprop"):
        raise ValueError(f"unknown SGLD rule {rule!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    to_values = to_values or _identity
    x = np.array(x0, dtype=float)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    samples, chain = [], []
    for i in range(1, iters + 1):
        u, g, loglik = energy(x)
        g = np.asarray(g, dtype=float)
        if not np.isfinite(u) or not np.all(np.isfinite(g)):
            raise InferenceError(i, f"non-finite energy or gradient (U={u})")
        chain.append(x.copy())
        if i - 1 >= burn_in:
            samples.append(PosteriorSample(to_values(x), float(loglik), i - 1))
        if rule == "adam":
            m = beta1 * m + (1.0 - beta1) * g
            v = beta2 * v + (1.0 - beta2) * g * g
            if precondition:
                a = 1.0 / (np.sqrt(v / (1.0 - beta2**i)) + eps)
                drift = lr * (m / (1.0 - beta1**i)) * a
            else:
                a = np.ones_like(x)
                drift = lr * g
        else:
            v = beta2 * v + (1.0 - beta2) * g * g
            a = 1.0 / (eps + np.sqrt(v)) if precondition else np.ones_like(x)
            drift = 0.5 * lr * a * g
        x = x - drift
        if noise and lr > 0:
            x = x + np.sqrt(lr * a) * rng.standard_normal(x.shape)
    return SamplerResult(samples, chain)


def leapfrog(grad: Callable[[np.ndarray], np.ndarray], x, p, step: float, n_steps: int, mass=1.0):
    """Velocity-Verlet integration of ``H = U(x) + |p|^2 / 2m``; returns ``(x, p)``."""
    x = np.array(x, dtype=float)
    p = np.array(p, dtype=float) - 0.5 * step * grad(x)
    for k in range(n_steps):
        x = x + step * p / mass
        if k < n_steps - 1:
            p = p - step * grad(x)
    p = p - 0.5 * step * grad(x)
    return x, p


def hmc_sample(
    energy: Callable[[np.ndarray], tuple],
    x0,
    iters: int,
    n_leapfrog: int = 10,
    step_size: float = 0.1,
    burn_in: int = 50,
    mass: float = 1.0,
    rng: np.random.Generator | None = None,
    to_values: Callable | None = None,
) -> SamplerResult:
    """Hamiltonian Monte Carlo with leapfrog proposals and a Metropolis test.

    ``energy(x)`` returns ``(U, grad U, loglik)``; each iteration records the
    current state (after the accept/reject decision).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    to_values = to_values or _identity
    x = np.array(x0, dtype=float)
    u, g, ll = energy(x)
    cache = {}

    def grad(q):
        val = energy(q)
        cache["last"] = (q.copy(), val)
        return np.asarray(val[1], dtype=float)

    samples, chain = [], []
    accepted = 0
    for i in range(iters):
        p0 = rng.standard_normal(x.shape) * np.sqrt(mass)
        h0 = u + 0.5 * float(np.sum(p0 * p0)) / mass
        xn, pn = leapfrog(grad, x, p0, step_size, n_leapfrog, mass)
        if "last" in cache and np.array_equal(cache["last"][0], xn):
            un, gn, lln = cache["last"][1]
        else:
            un, gn, lln = energy(xn)
        h1 = un + 0.5 * float(np.sum(pn * pn)) / mass
        log_accept = h0 - h1
        if np.isfinite(h1) and np.log(rng.uniform()) < min(0.0, log_accept):
            x, u, ll = xn, un, lln
            accepted += 1
        chain.append(x.copy())
        if i >= burn_in:
            samples.append(PosteriorSample(to_values(x), float(ll), i))
    rate = accepted / iters if iters else 0.0
    logger.info("hmc acceptance rate %.3f", rate)
    return SamplerResult(samples, chain, rate)


def write_samples_csv(path, samples: Sequence[PosteriorSample], labels: Sequence[str]) -> None:
    """One row per sample: chain, iteration, parameter columns, log-likelihood."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chain", "iteration", *labels, "loglik"])
        for s in samples:
            w.writerow([s.chain, s.iteration, *(f"{float(v):.17g}" for v in np.atleast_1d(s.values)), f"{s.loglik:.17g}"])


def read_samples_csv(path) -> tuple[list[str], list[PosteriorSample]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["chain", "iteration"] or rows[0][-1] != "loglik":
        raise ValueError(f"{path}: not a samples CSV")
    labels = rows[0][2:-1]
    out = [PosteriorSample(np.array([float(v) for v in r[2:-1]]), float(r[-1]), int(r[1]), int(r[0])) for r in rows[1:]]
    return labels, out
