"""Reverse-mode gradients of a scalar loss over a simulation rollout.

The forward pass runs untaped and stores a plain state every ``checkpoint``
steps. The loss is a function of the recorded trajectory features only, so it
is differentiated on its own small tape first; that yields a cotangent for
every recorded feature. The backward pass then walks the checkpoint segments
in reverse, re-running each segment on a fresh tape whose leaves are the
segment's start state and the parameters, and pulls the end-state adjoint and
feature cotangents back to the start of the segment.
"""

from __future__ import annotations

import logging
from typing import Callable

import numpy as np

from diffcut.autodiff.tape import DEFAULT_MEMORY_BUDGET, Tape, Var, value
from diffcut.dynamics.simulator import SimState, Simulator, Trajectory

logger = logging.getLogger(__name__)

FEATURES = ("force", "knife_pos", "knife_vel")


def _loss_seeds(loss_fn, traj: Trajectory):
    """Primal loss and its cotangent w.r.t. every trajectory feature."""
    feats = traj.features()
    tape = Tape()
    leaves = {k: tape.leaf(v, name=k) for k, v in feats.items()}
    loss = loss_fn(leaves)
    if not isinstance(loss, Var):
        return float(loss), {k: np.zeros_like(v) for k, v in feats.items()}
    grads = tape.backward(loss)
    return float(loss.value), {k: grads[leaf] for k, leaf in leaves.items()}


class RolloutTape:
    """Recorded rollout whose :meth:`backward` returns parameter gradients.

    ``wrt`` names the theta entries to differentiate; gradients come back with
    the same shapes as those entries.
    """

    def __init__(
        self,
        sim: Simulator,
        theta: dict,
        wrt,
        loss_fn: Callable[[dict], object],
        checkpoint: int | None = 100,
        memory_budget: int = DEFAULT_MEMORY_BUDGET,
    ):
        self.sim = sim
        self.theta = dict(theta)
        self.wrt = tuple(wrt)
        for name in self.wrt:
            if name not in self.theta:
                raise KeyError(f"cannot differentiate unknown parameter {name!r}")
        self.loss_fn = loss_fn
        n = sim.config.n_steps
        self.checkpoint = n if not checkpoint or checkpoint >= n else int(checkpoint)
        self.memory_budget = memory_budget
        self.sections: dict = {}
        self.trajectory, self.checkpoints, _ = sim.run(
            self.theta, checkpoint_every=max(self.checkpoint, 1), sections=self.sections
        )
        self.loss, self.seeds = _loss_seeds(loss_fn, self.trajectory)
        self.max_tape_nodes = 0

    def _record_index(self) -> dict:
        sim = self.sim
        out, r = {}, 0
        for i in range(sim.config.n_steps):
            if sim.is_recorded(i):
                out[i] = r
                r += 1
        return out

    def backward(self) -> dict:
        sim = self.sim
        n = sim.config.n_steps
        grads = {name: np.zeros(np.shape(self.theta[name])) for name in self.wrt}
        if n == 0:
            return grads
        rec = self._record_index()
        snap_index = {s: j for j, s in enumerate(sorted(self.trajectory.snapshots))}
        starts = list(range(0, n, self.checkpoint))
        adj = None
        for a in reversed(starts):
            b = min(a + self.checkpoint, n)
            tape = Tape(self.memory_budget)
            theta = dict(self.theta)
            leaves = {name: tape.leaf(self.theta[name], name=name) for name in self.wrt}
            theta.update(leaves)
            res = sim.resolve(theta)
            if a == 0:
                st = sim.initial_state(res)
                start_leaves = None
            else:
                cp = self.checkpoints[a]
                start_leaves = SimState(
                    tape.leaf(cp.x), tape.leaf(cp.v), tape.leaf(cp.k_spring), tape.leaf(cp.knife_pos), cp.t, cp.step
                )
                st = start_leaves
            seeds = []
            for i in range(a, b):
                st, reaction, kvel, _ = sim.step(st, res, self.sections)
                r = rec.get(i)
                if r is not None:
                    for feat, var in (("force", reaction), ("knife_pos", st.knife_pos), ("knife_vel", kvel)):
                        g = self.seeds[feat][r]
                        if isinstance(var, Var) and np.any(g):
                            seeds.append((var, g))
                j = snap_index.get(i + 1)
                if j is not None and isinstance(st.x, Var):
                    seeds.append((st.x, self.seeds["snapshots"][j]))
            if adj is not None:
                for var, g in zip((st.x, st.v, st.k_spring, st.knife_pos), adj):
                    if isinstance(var, Var):
                        seeds.append((var, g))
            self.max_tape_nodes = max(self.max_tape_nodes, len(tape))
            if not seeds:
                adj = None if start_leaves is None else tuple(
                    np.zeros(np.shape(value(v))) for v in (start_leaves.x, start_leaves.v, start_leaves.k_spring, start_leaves.knife_pos)
                )
                continue
            g = tape.backward(seeds)
            for name, leaf in leaves.items():
                grads[name] = grads[name] + g[leaf]
            if start_leaves is not None:
                adj = tuple(g[v] for v in (start_leaves.x, start_leaves.v, start_leaves.k_spring, start_leaves.knife_pos))
        return {name: (float(v) if np.ndim(self.theta[name]) == 0 else v) for name, v in grads.items()}


def record_rollout_loss(sim: Simulator, theta: dict, wrt, loss_fn, checkpoint: int | None = 100, memory_budget: int = DEFAULT_MEMORY_BUDGET):
    """Run the forward pass; returns ``(loss, tape)`` where ``tape.backward()`` gives gradients."""
    rt = RolloutTape(sim, theta, wrt, loss_fn, checkpoint, memory_budget)
    return rt.loss, rt


def value_and_grad(sim: Simulator, theta: dict, wrt, loss_fn, checkpoint: int | None = 100, memory_budget: int = DEFAULT_MEMORY_BUDGET):
    loss, rt = record_rollout_loss(sim, theta, wrt, loss_fn, checkpoint, memory_budget)
    return loss, rt.backward(), rt.trajectory
