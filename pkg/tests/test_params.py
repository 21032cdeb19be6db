import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diffcut.dynamics.simulator import SimConfig, Simulator
from diffcut.params import (
    CATALOG,
    INDIVIDUAL,
    SPRING_PARAMS,
    ParamError,
    ParamVector,
    SimParams,
    expand,
    finalize_modes,
    params_from_entries,
    parse_config,
    project,
    project_grad,
    unproject,
)


def test_catalog_defaults_inside_bounds():
    for spec in CATALOG.values():
        assert spec.lb < spec.ub
        assert spec.lb <= spec.default <= spec.ub


def test_identification_ranges():
    assert (CATALOG["sdf_ke"].lb, CATALOG["sdf_ke"].ub) == (500.0, 8000.0)
    assert (CATALOG["cut_spring_ke"].lb, CATALOG["cut_spring_ke"].ub) == (100.0, 1500.0)


def test_knife_motion_defaults():
    assert CATALOG["velocity_y"].default == -0.05
    assert CATALOG["initial_y"].default == 0.08


def test_apple_preset():
    p = SimParams.defaults()
    assert p["young"] == 3.0e6
    assert p["poisson"] == 0.17


@given(x=st.floats(-10, 10), lb=st.floats(-100, 100), width=st.floats(1e-2, 1e4))
def test_project_roundtrip_and_bounds(x, lb, width):
    ub = lb + width
    v = project(x, lb, ub)
    assert lb < v < ub
    assert float(unproject(v, lb, ub)) == pytest.approx(x, abs=1e-9 * max(1.0, width))


@given(x=st.floats(-8, 8))
def test_project_gradient_matches_fd(x):
    lb, ub = 100.0, 1500.0
    h = 1e-6
    fd = (project(x + h, lb, ub) - project(x - h, lb, ub)) / (2 * h)
    assert project_grad(x, lb, ub) == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_unproject_rejects_boundary():
    with pytest.raises(ParamError):
        unproject(100.0, 100.0, 1500.0)


def test_expand_modes():
    np.testing.assert_array_equal(expand(3.0, 4), [3.0] * 4)
    np.testing.assert_array_equal(expand([1, 2, 3], 3, INDIVIDUAL), [1, 2, 3])
    with pytest.raises(ParamError):
        expand([1, 2], 3, INDIVIDUAL)


def test_per_spring_only_for_spring_parameters():
    with pytest.raises(ParamError):
        SimParams.defaults().with_values(young=np.ones(3))
    with pytest.raises(ParamError):
        SimParams.defaults().with_values(bogus=1.0)


def test_config_parsing_modes_and_bounds():
    text = """
    # comment
    sdf_ke = 5100
    cut_spring_ke = 250
    cut_spring_ke.mode = individual
    sdf_kf.lb = 0.002
    sdf_kf.ub = 0.5
    dt = 1e-4
    """
    entries = parse_config(text)
    p, rest = params_from_entries(entries)
    assert rest == {"dt": "1e-4"}
    assert p["sdf_ke"] == 5100.0
    assert p.bounds["sdf_kf"] == (0.002, 0.5)
    p = finalize_modes(p, entries, 6)
    np.testing.assert_array_equal(p["cut_spring_ke"], np.full(6, 250.0))
    again, _ = params_from_entries(parse_config("\n".join(p.as_config_lines())))
    for name in CATALOG:
        np.testing.assert_array_equal(again[name], p[name])


def test_config_errors():
    with pytest.raises(ParamError):
        parse_config("no equals sign")
    with pytest.raises(ParamError):
        params_from_entries({"sdf_ke.mode": "sometimes"})
    with pytest.raises(ParamError):
        params_from_entries({"sdf_ke.colour": "red"})
    with pytest.raises(ParamError):
        SimParams.defaults(sdf_ke=9000.0).validate()


def test_param_vector_roundtrip_and_chain():
    p = SimParams.defaults().individual("cut_spring_ke", 3).with_values(cut_spring_ke=[200.0, 300.0, 400.0])
    vec = ParamVector(p, ("sdf_ke", "cut_spring_ke"))
    assert vec.size == 4
    assert vec.labels() == ["sdf_ke", "cut_spring_ke[0]", "cut_spring_ke[1]", "cut_spring_ke[2]"]
    x = vec.x0()
    np.testing.assert_allclose(vec.flat_values(x), [1000.0, 200.0, 300.0, 400.0], rtol=1e-12)
    g = vec.value_grad_to_x(x, np.ones(4))
    h = 1e-6
    for k in range(4):
        e = np.zeros(4)
        e[k] = h
        fd = (vec.flat_values(x + e)[k] - vec.flat_values(x - e)[k]) / (2 * h)
        assert g[k] == pytest.approx(fd, rel=1e-6)


def test_shared_equals_expanded_rollout(toy_cut):
    sim = Simulator(toy_cut, SimConfig(dt=1e-4, duration=0.003))
    p = SimParams.defaults(young=1e5, poisson=0.3, initial_y=0.0101)
    a = sim.rollout(p)
    b = sim.rollout(p.expanded(toy_cut.n_springs))
    assert all(np.ndim(p.expanded(4)[n]) == 1 for n in SPRING_PARAMS)
    np.testing.assert_array_equal(a.force, b.force)
    assert np.any(a.fnorm > 0)
