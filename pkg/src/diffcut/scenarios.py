"""Small reproducible cutting setups used by the CLI, tests and examples."""

from __future__ import annotations

from dataclasses import dataclass

from diffcut.dynamics.simulator import SimConfig, Simulator
from diffcut.mesh import CutMesh, CutSurface, box_mesh, preprocess_cut
from diffcut.params import SimParams

# Generating values for the two-parameter identification setup.
TRUE_SDF_KE = 5100.0
TRUE_CUT_SPRING_KE = 200.0


# The soft material and strong contact damping of the small setups lie outside
# the default catalog bounds, so those two bounds are widened.
SOFT_BOUNDS = {"young": (1e4, 1e6), "sdf_kd": (0.1, 1000.0)}


def soft_params(**values) -> SimParams:
    """Default parameters with the soft-setup bounds, validated."""
    p = SimParams.defaults()
    for name, (lb, ub) in SOFT_BOUNDS.items():
        p = p.with_bounds(name, lb, ub)
    p = p.with_values(**values)
    p.validate()
    return p


@dataclass(frozen=True)
class Scenario:
    cut: CutMesh
    config: SimConfig
    params: SimParams

    def simulator(self, **kw) -> Simulator:
        return Simulator(self.cut, self.config, **kw)


def toy_block(
    cells=(3, 2, 2),
    size=(0.03, 0.01, 0.01),
    cut_x: float | None = None,
    density: float = 1000.0,
) -> CutMesh:
    """Box of Kuhn-split cubes, centred on z = 0, cut by a vertical plane.

    The default plane lies midway between two vertex columns so no mesh edge
    lies in it.
    """
    mesh = box_mesh(cells, size, origin=(0.0, 0.0, -0.5 * size[2]), density=density)
    x = 0.5 * size[0] if cut_x is None else cut_x
    return preprocess_cut(mesh, CutSurface.plane(x))


def identification(duration: float = 0.2, dt: float = 1e-4, **overrides) -> Scenario:
    """Two-parameter (sdf_ke, cut_spring_ke) identification setup.

    Parameters are at their generating values; 96 tets, 25 cutting springs.
    """
    cut = toy_block()
    config = SimConfig(dt=dt, duration=duration, record_stride=1)
    values = dict(
        young=1e5,
        poisson=0.3,
        initial_y=0.0105,
        cut_spring_softness=50.0,
        sdf_kd=100.0,
        sdf_ke=TRUE_SDF_KE,
        cut_spring_ke=TRUE_CUT_SPRING_KE,
    )
    values.update(overrides)
    return Scenario(cut, config, soft_params(**values))


def full_cut(duration: float = 0.25, dt: float = 1e-5, **overrides) -> Scenario:
    """Full-depth vertical cut through the toy block at default parameters.

    The knife starts just above the block and ends 2 mm below its base.
    """
    cut = toy_block()
    config = SimConfig(dt=dt, duration=duration, record_stride=100, record_springs=True)
    values = dict(initial_y=0.0105)
    values.update(overrides)
    return Scenario(cut, config, SimParams.defaults().with_values(**values))


def motion_toy(duration: float = 0.1, dt: float = 1e-4, **overrides) -> Scenario:
    """Knife-motion setup on the toy block with the soft identification material.

    The knife starts 0.5 mm above the block and sinks about 5 mm at the
    default velocity.
    """
    cut = toy_block()
    config = SimConfig(dt=dt, duration=duration, record_stride=1)
    values = dict(young=1e5, poisson=0.3, initial_y=0.0105, cut_spring_softness=50.0, sdf_kd=100.0)
    values.update(overrides)
    return Scenario(cut, config, soft_params(**values))
