"""Command-line entry point.

Every command prints an effective-config block: the run settings, all
simulation parameters and the command options, with defaults filled in. The
block is itself a valid config file; option values are read back from its
``cli.*`` lines, so ``diffcut <command> --config block.cfg`` repeats a run.

Exit codes: 0 success, 1 numerical failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from diffcut.autodiff.rollout import value_and_grad
from diffcut.autodiff.tape import TapeMemoryError
from diffcut.control import (
    DEFAULT_BLADE_LENGTH,
    KeyframeMotion,
    MotionDivergence,
    MotionParams,
    MotionProblem,
    optimize_motion,
    write_knife_path,
)
from diffcut.dynamics.material import InversionError
from diffcut.dynamics.simulator import SimConfig, SimulationError, Simulator, param_theta, read_trajectory_csv
from diffcut.inference import (
    CalibrationObjective,
    InferenceError,
    LossConfig,
    LossError,
    TrajectoryLoss,
    adam_calibrate,
    hmc_sample,
    sgld_sample,
    write_samples_csv,
)
from diffcut.knife import KnifeGeometry
from diffcut.mesh import CutError, CutMesh, CutSurface, MeshError, box_mesh, load_cut_mesh, load_mesh, preprocess_cut, save_cut_mesh, save_mesh
from diffcut.params import CATALOG, INDIVIDUAL, SPRING_PARAMS, ParamError, ParamVector, finalize_modes, load_config, params_from_entries
from diffcut.scenarios import toy_block
from diffcut.transport import TransportError, average_transfer, transfer_between

logger = logging.getLogger("diffcut")

ENV_CONFIG_DIR = "DIFFCUT_CONFIG_DIR"
DEFAULT_CONFIG_NAME = "default.cfg"
EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2

NUMERICAL_ERRORS = (SimulationError, InversionError, InferenceError, MotionDivergence, TapeMemoryError, FloatingPointError)
INPUT_ERRORS = (MeshError, CutError, ParamError, LossError, TransportError, OSError, ValueError)


class UsageError(ValueError):
    pass


# -- run configuration ----------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """Settings shared by every simulation command."""

    mesh: str = "toy"
    cut_x: float | None = None
    density: float = 1000.0
    material: str = "apple"
    dt: float = 1e-5
    duration: float = 0.01
    record_stride: int = 1
    seed: int = 0
    gravity: float = 9.81
    damping_ratio: float = 1e-4
    fw_iters: int = 20
    knife_z: float = 0.0
    bc_distance: float = 0.01
    contact_damping: bool = True
    knife_friction: bool = True
    ground: bool = True
    ground_friction: bool = True
    damage: bool = True
    boundary_conditions: bool = True
    knife_edge_dim: float = KnifeGeometry.edge_dim
    knife_spine_dim: float = KnifeGeometry.spine_dim
    knife_spine_height: float = KnifeGeometry.spine_height
    knife_tip_height: float = KnifeGeometry.tip_height
    knife_depth: float = KnifeGeometry.depth

    def sim_config(self, **kw) -> SimConfig:
        knife = KnifeGeometry(self.knife_edge_dim, self.knife_spine_dim, self.knife_spine_height, self.knife_tip_height, self.knife_depth)
        base = dict(
            dt=self.dt,
            duration=self.duration,
            record_stride=self.record_stride,
            gravity=self.gravity,
            knife=knife,
            knife_z=self.knife_z,
            fw_iters=self.fw_iters,
            contact_damping=self.contact_damping,
            knife_friction=self.knife_friction,
            ground=self.ground,
            ground_friction=self.ground_friction,
            damage=self.damage,
            damping_ratio=self.damping_ratio,
            bc_distance=self.bc_distance,
            boundary_conditions=self.boundary_conditions,
        )
        base.update(kw)
        return SimConfig(**base)

    def config_lines(self) -> list[str]:
        return [f"{f.name} = {_fmt(getattr(self, f.name))}" for f in fields(self)]


RUN_KEYS = {f.name: f for f in fields(RunConfig)}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.17g}"
    if v is None:
        return "none"
    if isinstance(v, (list, tuple)):
        return " ".join(_fmt(x) for x in v)
    return str(v)


def _coerce(default, text: str, key: str):
    """Parse a config string into the type of ``default``."""
    t = text.strip()
    try:
        if isinstance(default, bool):
            if t.lower() in ("1", "true", "yes", "on"):
                return True
            if t.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"expected a boolean, got {t!r}")
        if isinstance(default, int):
            return int(t)
        if isinstance(default, float):
            return float(t)
        if isinstance(default, (list, tuple)):
            items = t.replace(",", " ").split()
            if default and isinstance(default[0], (int, float)) and not isinstance(default[0], bool):
                conv = type(default[0])
                return [conv(x) for x in items]
            return items
        if default is None:
            return None if t.lower() == "none" else float(t)
        return t
    except ValueError as exc:
        raise UsageError(f"{key}: {exc}") from None


def _resolve_config_path(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    base = os.environ.get(ENV_CONFIG_DIR)
    if base and (Path(base) / name).exists():
        return Path(base) / name
    raise UsageError(f"config file {name!r} not found (also searched ${ENV_CONFIG_DIR})")


def gather_entries(args) -> dict[str, str]:
    """Config entries from the default directory, ``--config`` files and ``--set`` overrides."""
    entries: dict[str, str] = {}
    base = os.environ.get(ENV_CONFIG_DIR)
    if base and (Path(base) / DEFAULT_CONFIG_NAME).is_file():
        entries.update(load_config(Path(base) / DEFAULT_CONFIG_NAME))
    for name in getattr(args, "config", None) or []:
        entries.update(load_config(_resolve_config_path(name)))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects name=value, got {item!r}")
        k, v = item.split("=", 1)
        entries[k.strip()] = v.strip()
    return entries


def build_run(args, entries: dict[str, str], allow_prefixes=()):
    """Run config and parameters from config entries plus command-line overrides."""
    entries = dict(entries)
    if getattr(args, "material", None):
        entries["material"] = args.material
    params, rest = params_from_entries(entries)
    values = {}
    for key, text in rest.items():
        if key.startswith("cli.") or any(key.startswith(p) for p in allow_prefixes):
            continue
        if key not in RUN_KEYS:
            raise UsageError(f"unknown config key {key!r}")
        values[key] = _coerce(RUN_KEYS[key].default, text, key)
    for key in ("mesh", "cut_x", "dt", "duration", "record_stride", "seed"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return RunConfig(**values), params


def load_cut(run: RunConfig) -> CutMesh:
    """Toy block, a tet mesh file cut at ``cut_x``, or a preprocessed cache."""
    if run.mesh == "toy":
        return toy_block(cut_x=run.cut_x, density=run.density)
    path = Path(run.mesh)
    if not path.exists():
        raise UsageError(f"mesh file {run.mesh!r} not found")
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
    if first.startswith("# diffcut cut-mesh cache"):
        return load_cut_mesh(path)
    if run.cut_x is None:
        raise UsageError("cut_x is required to cut a tet mesh file")
    return preprocess_cut(load_mesh(path, run.density), CutSurface.plane(run.cut_x))


def resolve_options(args, entries: dict[str, str], defaults: dict) -> dict:
    """Command options: command line, then ``cli.*`` config lines, then built-in defaults."""
    out = {}
    for name, default in defaults.items():
        v = getattr(args, name, None)
        if v is None and f"cli.{name}" in entries:
            v = _coerce(default, entries[f"cli.{name}"], f"cli.{name}")
        out[name] = default if v is None else v
    return out


def print_effective(command: str, run: RunConfig | None, params, options: dict, out=None) -> None:
    out = out or sys.stdout
    print(f"# effective config: diffcut {command}", file=out)
    if run is not None:
        for line in run.config_lines():
            print(line, file=out)
    if params is not None:
        for line in params.as_config_lines():
            print(line, file=out)
    for k, v in options.items():
        print(f"cli.{k} = {_fmt(v)}", file=out)
    print("# end effective config", file=out)


def _map(fn, items, jobs: int):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])


# -- commands -------------------------------------------------------------------


def cmd_make_mesh(args) -> int:
    opts = resolve_options(args, {}, {"cells": [3, 2, 2], "size": [0.03, 0.01, 0.01], "origin": [0.0, 0.0, -0.005], "out": "mesh.tet"})
    print_effective("make-mesh", None, None, opts)
    if len(opts["cells"]) != 3 or len(opts["size"]) != 3 or len(opts["origin"]) != 3:
        raise UsageError("cells, size and origin take three values each")
    mesh = box_mesh(tuple(opts["cells"]), tuple(opts["size"]), tuple(opts["origin"]))
    save_mesh(opts["out"], mesh)
    print(f"wrote {opts['out']}: {mesh.n_vertices} vertices, {mesh.n_tets} tets")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    entries = gather_entries(args)
    run, _ = build_run(args, entries)
    opts = resolve_options(args, entries, {"out": "cut.cache"})
    print_effective("preprocess", run, None, opts)
    cut = load_cut(run)
    save_cut_mesh(opts["out"], cut)
    print(f"wrote {opts['out']}: {cut.base.n_tets} tets, {cut.n_duplicated} duplicated, {cut.n_springs} springs")
    return EXIT_OK


def _simulator(run: RunConfig, cut: CutMesh, **kw) -> Simulator:
    return Simulator(cut, run.sim_config(**kw))


def cmd_simulate(args) -> int:
    entries = gather_entries(args)
    run, params = build_run(args, entries)
    opts = resolve_options(args, entries, {"out": "trajectory.csv", "snapshot_steps": [], "snapshot_dir": "", "plot": False})
    cut = load_cut(run)
    params = finalize_modes(params, entries, cut.n_springs)
    params.validate(cut.n_springs)
    print_effective("simulate", run, params, opts)
    snaps = tuple(int(s) for s in opts["snapshot_steps"])
    sim = _simulator(run, cut, snapshot_steps=snaps)
    traj = sim.rollout(params)
    traj.write_csv(opts["out"])
    if snaps and opts["snapshot_dir"]:
        Path(opts["snapshot_dir"]).mkdir(parents=True, exist_ok=True)
        traj.write_snapshots(opts["snapshot_dir"])
    peak = float(traj.fnorm.max()) if len(traj) else 0.0
    print(f"wrote {opts['out']}: {len(traj)} rows, {sim.config.n_steps} steps, peak knife force {peak:.6g} N")
    if opts["plot"]:
        from diffcut import plotting

        print(f"wrote {plotting.trajectory(traj, plotting.png_path(opts['out']))}")
    return EXIT_OK


def _fd_column(job):
    sim, theta, name, h, loss_fn = job
    up, down = dict(theta), dict(theta)
    up[name] = theta[name] + h
    down[name] = theta[name] - h
    lu = float(loss_fn(sim.run(up)[0].features()))
    ld = float(loss_fn(sim.run(down)[0].features()))
    return (lu - ld) / (2.0 * h)


def cmd_gradcheck(args) -> int:
    entries = gather_entries(args)
    run, params = build_run(args, entries)
    defaults = {
        "wrt": ["sdf_ke", "cut_spring_ke", "cut_spring_softness", "velocity_y"],
        "ref": "",
        "ref_scale": 1.1,
        "eps": 1e-5,
        "tol": 1e-3,
        "loss": "L1",
        "checkpoint": 100,
        "out": "gradcheck.csv",
        "jobs": 1,
    }
    opts = resolve_options(args, entries, defaults)
    cut = load_cut(run)
    params = finalize_modes(params, entries, cut.n_springs)
    print_effective("gradcheck", run, params, opts)
    sim = _simulator(run, cut)
    for name in opts["wrt"]:
        if name not in CATALOG or np.ndim(params[name]):
            raise UsageError(f"gradcheck needs shared catalog parameters, got {name!r}")
    if opts["ref"]:
        ref = read_trajectory_csv(opts["ref"])
    else:
        # reference from scaled parameters so the loss is not at its minimum
        ref = sim.rollout(params.with_values(**{n: params[n] * opts["ref_scale"] for n in opts["wrt"]}))
    loss_fn = TrajectoryLoss([ref], LossConfig(kind=_loss_kind(opts["loss"])))
    theta = param_theta(params)
    val, grads, _ = value_and_grad(sim, theta, opts["wrt"], loss_fn, opts["checkpoint"])
    jobs = [(sim, theta, n, opts["eps"] * max(abs(theta[n]), 1e-12), loss_fn) for n in opts["wrt"]]
    fds = _map(_fd_column, jobs, opts["jobs"])
    rows, worst = [], 0.0
    for name, fd in zip(opts["wrt"], fds):
        g = grads[name]
        rel = abs(g - fd) / max(abs(g), abs(fd), 1e-300)
        worst = max(worst, rel)
        rows.append((name, float(theta[name]), g, fd, rel))
        print(f"{name:22s} tape {g: .10e}  fd {fd: .10e}  rel {rel:.3e}")
    _write_rows(opts["out"], ["name", "value", "tape", "fd", "rel_err"], rows)
    print(f"loss {val:.10g}; worst relative error {worst:.3e} (tol {opts['tol']:g})")
    return EXIT_OK if worst < opts["tol"] else EXIT_NUMERIC


def _loss_kind(name: str) -> str:
    table = {"l1": "L1", "l2": "L2", "inverse-cosine": "inverse-cosine", "cosine": "inverse-cosine", "logsumexp": "logsumexp"}
    key = name.lower()
    if key not in table:
        raise UsageError(f"unknown loss {name!r}")
    return table[key]


def _objective(run, params, entries, opts, cut):
    refs = [read_trajectory_csv(p) for p in opts["ref"]]
    if not refs:
        raise UsageError("at least one --ref trajectory is required")
    free = tuple(opts["free"])
    for name in free:
        if name not in CATALOG:
            raise UsageError(f"unknown parameter {name!r}")
    sim = _simulator(run, cut)
    vec = ParamVector(params, free)
    config = LossConfig(kind=_loss_kind(opts["loss"]), vertex_weight=opts.get("vertex_weight", 0.0))
    return CalibrationObjective(sim, refs, vec, config, opts.get("temperature", 1.0), opts["checkpoint"]), refs


def cmd_calibrate(args) -> int:
    entries = gather_entries(args)
    run, params = build_run(args, entries)
    defaults = {
        "ref": [],
        "free": ["sdf_ke", "cut_spring_ke"],
        "loss": "l1",
        "iters": 300,
        "lr": 0.1,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "patience": 0,
        "checkpoint": 100,
        "out": "calibrated.cfg",
        "history": "calibration.csv",
        "plot": False,
    }
    opts = resolve_options(args, entries, defaults)
    cut = load_cut(run)
    params = finalize_modes(params, entries, cut.n_springs)
    print_effective("calibrate", run, params, opts)
    obj, refs = _objective(run, params, entries, opts, cut)
    cal = adam_calibrate(obj, opts["iters"], opts["lr"], opts["beta1"], opts["beta2"], opts["eps"], patience=opts["patience"] or None)
    labels = obj.vector.labels()
    rows = [(i, val, *obj.vector.flat_values(x)) for i, val, x in cal.result.history]
    _write_rows(opts["history"], ["iteration", "loss", *labels], rows)
    Path(opts["out"]).write_text("\n".join(run.config_lines() + cal.params.as_config_lines()) + "\n")
    shown = ", ".join(f"{k}={v:.6g}" for k, v in zip(labels, obj.vector.flatten(cal.values)))
    print(f"best loss {cal.best_loss:.6g} after {cal.result.iterations} iterations: {shown}")
    print(f"wrote {opts['out']} and {opts['history']}")
    if opts["plot"]:
        from diffcut import plotting

        hist = [{"iteration": r[0], "loss": r[1], **dict(zip(labels, r[2:]))} for r in rows]
        print(f"wrote {plotting.history(hist, plotting.png_path(opts['history']), keys=('loss', *labels))}")
        traj = obj.sim.rollout(cal.params)
        print(f"wrote {plotting.trajectory(traj, Path(opts['history']).with_name(Path(opts['history']).stem + '_fit.png'), refs[0])}")
    return EXIT_OK


def _run_chain(job):
    obj, method, opts, seed, chain = job
    rng = np.random.default_rng(seed)
    x0 = obj.vector.x0()
    if method == "sgld":
        res = sgld_sample(
            obj.energy, x0, opts["iters"], opts["burn_in"], opts["lr"], opts["beta1"], opts["beta2"], opts["eps"],
            rule=opts["rule"], rng=rng, to_values=obj.values,
        )
    else:
        res = hmc_sample(obj.energy, x0, opts["iters"], opts["leapfrog"], opts["step_size"], opts["burn_in"], rng=rng, to_values=obj.values)
    return [replace(s, chain=chain) for s in res.samples], res.acceptance_rate


def cmd_posterior(args) -> int:
    entries = gather_entries(args)
    run, params = build_run(args, entries)
    defaults = {
        "ref": [],
        "free": ["sdf_ke", "cut_spring_ke"],
        "method": "sgld",
        "loss": "l1",
        "iters": 300,
        "burn_in": -1,
        "lr": 0.01,
        "beta1": 0.9,
        "beta2": 0.95,
        "eps": 1e-8,
        "rule": "adam",
        "leapfrog": 10,
        "step_size": 0.05,
        "temperature": 1.0,
        "chains": 1,
        "jobs": 1,
        "checkpoint": 100,
        "out": "samples.csv",
        "plot": False,
    }
    opts = resolve_options(args, entries, defaults)
    if opts["method"] not in ("sgld", "hmc"):
        raise UsageError(f"unknown method {opts['method']!r}")
    if opts["burn_in"] < 0:
        opts["burn_in"] = 90 if opts["method"] == "sgld" else 50
    cut = load_cut(run)
    params = finalize_modes(params, entries, cut.n_springs)
    print_effective("posterior", run, params, opts)
    obj, _ = _objective(run, params, entries, opts, cut)
    seeds = np.random.SeedSequence(run.seed).spawn(opts["chains"])
    jobs = [(obj, opts["method"], opts, s, c) for c, s in enumerate(seeds)]
    results = _map(_run_chain, jobs, opts["jobs"])
    samples = [s for chain, _ in results for s in chain]
    labels = obj.vector.labels()
    write_samples_csv(opts["out"], samples, labels)
    for c, (_, rate) in enumerate(results):
        print(f"chain {c}: acceptance rate {rate:.3f}")
    values = np.array([s.values for s in samples]).reshape(len(samples), len(labels))
    if len(samples):
        print("posterior mean: " + ", ".join(f"{k}={v:.6g}" for k, v in zip(labels, values.mean(axis=0))))
    print(f"wrote {opts['out']}: {len(samples)} samples")
    if opts["plot"] and len(samples):
        from diffcut import plotting

        print(f"wrote {plotting.samples(values, labels, plotting.png_path(opts['out']))}")
    return EXIT_OK


def cmd_transfer(args) -> int:
    entries = gather_entries(args)
    defaults = {
        "source": "",
        "source_cut_x": None,
        "source_params": "",
        "target": "",
        "target_cut_x": None,
        "method": "emd",
        "density": 1000.0,
        "out": "transferred.cfg",
    }
    opts = resolve_options(args, entries, defaults)
    print_effective("transfer", None, None, opts)
    if not opts["source"] or not opts["target"] or not opts["source_params"]:
        raise UsageError("transfer needs --source, --source-params and --target")
    if opts["method"] not in ("emd", "average"):
        raise UsageError(f"unknown transfer method {opts['method']!r}")
    src = load_cut(RunConfig(mesh=opts["source"], cut_x=opts["source_cut_x"], density=opts["density"]))
    tgt = load_cut(RunConfig(mesh=opts["target"], cut_x=opts["target_cut_x"], density=opts["density"]))
    sp_entries = load_config(_resolve_config_path(opts["source_params"]))
    sparams, _ = params_from_entries(sp_entries)
    sparams = finalize_modes(sparams, sp_entries, src.n_springs)
    lines = []
    for name in SPRING_PARAMS:
        v = sparams[name]
        if np.ndim(v) == 0:
            continue
        if len(v) != src.n_springs:
            raise UsageError(f"{name} has {len(v)} values for {src.n_springs} source springs")
        out = transfer_between(src, v, tgt) if opts["method"] == "emd" else average_transfer(v, tgt.n_springs)
        lines.append(f"{name} = " + ", ".join(f"{x:.17g}" for x in out))
        lines.append(f"{name}.mode = {INDIVIDUAL}")
        print(f"{name}: {src.n_springs} -> {tgt.n_springs} springs, mean {np.mean(v):.6g} -> {np.mean(out):.6g}")
    if not lines:
        raise UsageError("source parameters contain no per-spring values to transfer")
    Path(opts["out"]).write_text("\n".join(lines) + "\n")
    print(f"wrote {opts['out']}")
    return EXIT_OK


def cmd_optimize_motion(args) -> int:
    entries = gather_entries(args)
    run, params = build_run(args, entries, allow_prefixes=("motion.",))
    defaults = {
        "iters": 50,
        "keyframes": 5,
        "sigma": 0.0,
        "lr": 1e-3,
        "damping": 1.0,
        "unconstrained": False,
        "blade_length": DEFAULT_BLADE_LENGTH,
        "checkpoint": 100,
        "out": "motion.cfg",
        "path": "knife_path.csv",
        "history": "motion_history.csv",
        "plot": False,
    }
    opts = resolve_options(args, entries, defaults)
    if opts["sigma"] <= 0:
        # kernel width relative to the horizon, as sqrt(0.03) s is to 0.9 s
        opts["sigma"] = float(np.sqrt(0.03) * run.duration / 0.9)
    cut = load_cut(run)
    params = finalize_modes(params, entries, cut.n_springs)
    print_effective("optimize-motion", run, params, opts)
    if run.duration <= 0:
        raise UsageError("optimize-motion needs a positive duration")
    init = MotionParams.vertical(params["velocity_y"], opts["keyframes"], run.duration, opts["sigma"], run.dt)
    sim = Simulator(cut, run.sim_config(), motion=KeyframeMotion(init.times, init.sigma))
    problem = MotionProblem(sim, params, opts["blade_length"], checkpoint=opts["checkpoint"])
    res = optimize_motion(problem, init, opts["iters"], not opts["unconstrained"], opts["lr"], opts["damping"])
    Path(opts["out"]).write_text("\n".join(res.motion.as_config_lines()) + "\n")
    write_knife_path(opts["path"], res.trajectory)
    keys = ["iteration", "L", "mean_force", "zmax", "true_zmax", "g"] + (["lam"] if not opts["unconstrained"] else [])
    _write_rows(opts["history"], keys, [[h[k] for k in keys] for h in res.history])
    base_force = res.history[0]["mean_force"] if res.history else float("nan")
    final_force = float(np.mean(res.trajectory.fnorm)) if len(res.trajectory) else 0.0
    zmax = float(np.max(np.abs(res.trajectory.knife_pos[:, 2]))) if len(res.trajectory) else 0.0
    print(f"mean knife force {base_force:.6g} -> {final_force:.6g} N; max |z| {zmax:.4g} m")
    print(f"wrote {opts['out']}, {opts['path']} and {opts['history']}")
    if opts["plot"]:
        from diffcut import plotting

        print(f"wrote {plotting.knife_path(res.trajectory, plotting.png_path(opts['path']), 0.5 * opts['blade_length'])}")
        print(f"wrote {plotting.history(res.history, plotting.png_path(opts['history']), keys=('L', 'mean_force', 'zmax'))}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def _run_options(p: argparse.ArgumentParser, mesh=True) -> None:
    p.add_argument("--config", action="append", help="config file (repeatable; later files win)")
    p.add_argument("--set", action="append", metavar="NAME=VALUE", help="override one config entry")
    if mesh:
        p.add_argument("--mesh", help="'toy', a tet mesh file or a cut-mesh cache")
        p.add_argument("--cut-x", dest="cut_x", type=float, help="x of the vertical cutting plane")
        p.add_argument("--material", choices=("apple", "potato", "cucumber"))
        p.add_argument("--dt", type=float)
        p.add_argument("--duration", type=float)
        p.add_argument("--stride", dest="record_stride", type=int)
        p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffcut", description="Differentiable cutting simulation toolkit.")
    parser.add_argument("--log-level", default="WARNING", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-mesh", help="write a box tet mesh")
    p.add_argument("--cells", type=int, nargs=3)
    p.add_argument("--size", type=float, nargs=3)
    p.add_argument("--origin", type=float, nargs=3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_make_mesh)

    p = sub.add_parser("preprocess", help="cut a mesh and write the cut-mesh cache")
    _run_options(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("simulate", help="roll out a cut and write the trajectory CSV")
    _run_options(p)
    p.add_argument("--out")
    p.add_argument("--snapshot-steps", dest="snapshot_steps", type=int, nargs="+")
    p.add_argument("--snapshot-dir", dest="snapshot_dir")
    p.add_argument("--plot", action="store_true", default=None, help="also write a PNG next to the CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gradcheck", help="compare tape gradients with central differences")
    _run_options(p)
    p.add_argument("--wrt", nargs="+")
    p.add_argument("--ref")
    p.add_argument("--ref-scale", dest="ref_scale", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--loss")
    p.add_argument("--checkpoint", type=int)
    p.add_argument("--out")
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_gradcheck)

    for name, func, help_ in (
        ("calibrate", cmd_calibrate, "Adam point estimate of parameters from reference trajectories"),
        ("posterior", cmd_posterior, "SGLD or HMC posterior samples"),
    ):
        p = sub.add_parser(name, help=help_)
        _run_options(p)
        p.add_argument("--ref", nargs="+")
        p.add_argument("--free", nargs="+")
        p.add_argument("--loss", choices=("l1", "l2", "inverse-cosine", "logsumexp"))
        p.add_argument("--iters", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--beta1", type=float)
        p.add_argument("--beta2", type=float)
        p.add_argument("--eps", type=float)
        p.add_argument("--checkpoint", type=int)
        p.add_argument("--out")
        p.add_argument("--plot", action="store_true", default=None)
        if name == "calibrate":
            p.add_argument("--patience", type=int)
            p.add_argument("--history")
        else:
            p.add_argument("--method", choices=("sgld", "hmc"))
            p.add_argument("--burn-in", dest="burn_in", type=int)
            p.add_argument("--rule", choices=("adam", "rmsprop"))
            p.add_argument("--leapfrog", type=int)
            p.add_argument("--step-size", dest="step_size", type=float)
            p.add_argument("--temperature", type=float)
            p.add_argument("--chains", type=int)
            p.add_argument("--jobs", type=int)
        p.set_defaults(func=func)

    p = sub.add_parser("transfer", help="transfer per-spring parameters to another cut mesh")
    _run_options(p, mesh=False)
    p.add_argument("--source")
    p.add_argument("--source-cut-x", dest="source_cut_x", type=float)
    p.add_argument("--source-params", dest="source_params")
    p.add_argument("--target")
    p.add_argument("--target-cut-x", dest="target_cut_x", type=float)
    p.add_argument("--method", choices=("emd", "average"))
    p.add_argument("--density", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("optimize-motion", help="optimize keyframed knife motion")
    _run_options(p)
    p.add_argument("--iters", type=int)
    p.add_argument("--keyframes", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--damping", type=float)
    p.add_argument("--unconstrained", action="store_true", default=None)
    p.add_argument("--blade-length", dest="blade_length", type=float)
    p.add_argument("--checkpoint", type=int)
    p.add_argument("--out")
    p.add_argument("--path")
    p.add_argument("--history")
    p.add_argument("--plot", action="store_true", default=None)
    p.set_defaults(func=cmd_optimize_motion)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NUMERICAL_ERRORS as exc:
        print(f"diffcut: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except INPUT_ERRORS as exc:
        print(f"diffcut: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
