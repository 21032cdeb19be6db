import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from diffcut.dynamics.contact import CuttingSprings, damage, friction, ground_forces
from diffcut.dynamics.material import (
    InversionError,
    Material,
    deformation_gradient,
    elastic_energy,
    elastic_forces,
    energy_density,
    first_piola,
    lame,
    rest_alpha,
)
from diffcut.dynamics.simulator import SimConfig, Simulator, default_theta, read_trajectory_csv
from diffcut.params import SimParams
from diffcut.scenarios import toy_block

SOFT = dict(young=1e5, poisson=0.3)


def test_lame_conversion():
    lam, mu = lame(3.0e6, 0.17)
    assert lam == pytest.approx(3.0e6 * 0.17 / (1.17 * 0.66))
    assert mu == pytest.approx(3.0e6 / 2.34)
    with pytest.raises(ValueError):
        Material(1e6, 0.5, 1000.0)


def test_deformation_gradient_of_affine_map(toy_cut, rng):
    mesh = toy_cut.base
    a = np.eye(3) + 0.2 * rng.normal(size=(3, 3))
    x = mesh.vertices @ a.T + rng.normal(size=3)
    f = deformation_gradient(x, mesh)
    assert np.max(np.abs(f - a)) < 1e-12


def test_energy_density_matches_extended_precision():
    m = Material.preset("apple")
    assert (m.young, m.poisson) == (3.0e6, 0.17)
    f = np.diag([1.1, 1.0, 1.0])
    mpmath.mp.dps = 40
    E, nu = mpmath.mpf("3.0e6"), mpmath.mpf("0.17")
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    alpha = 1 + 3 * mu / (4 * lam)
    ic = mpmath.mpf("1.1") ** 2 + 2
    j = mpmath.mpf("1.1")
    psi = mu / 2 * (ic - 3) + lam / 2 * (j - alpha) ** 2 - mu / 2 * mpmath.log(ic + 1)
    psi_rest = mu / 2 * 0 + lam / 2 * (1 - alpha) ** 2 - mu / 2 * mpmath.log(4)
    got = float(energy_density(f, m.lam, m.mu))
    assert got == pytest.approx(float(psi), rel=1e-12)
    assert float(energy_density(np.eye(3), m.lam, m.mu)) == pytest.approx(float(psi_rest), rel=1e-12)


@given(seed=st.integers(0, 10_000))
def test_energy_rotation_invariant(seed):
    rng = np.random.default_rng(seed)
    f = np.eye(3) + 0.3 * rng.normal(size=(3, 3))
    r = Rotation.random(random_state=seed).as_matrix()
    lam, mu = lame(3e6, 0.17)
    assert energy_density(r @ f, lam, mu) == pytest.approx(energy_density(f, lam, mu), rel=1e-9)


@given(young=st.floats(1e4, 1e8), poisson=st.floats(0.01, 0.49))
def test_rest_stress_vanishes(young, poisson):
    lam, mu = lame(young, poisson)
    assert rest_alpha(lam, mu) == pytest.approx(1 + 0.75 * mu / lam)
    p = first_piola(np.eye(3), lam, mu)
    assert np.max(np.abs(p)) <= 1e-9 * mu


def _perturbed(cut, seed, scale=5e-4):
    rng = np.random.default_rng(seed)
    return cut.base.vertices + scale * rng.normal(size=cut.base.vertices.shape)


def test_elastic_forces_are_internal_and_match_energy_fd(toy_cut):
    mesh = toy_cut.base
    lam, mu = lame(1e5, 0.3)
    x = _perturbed(toy_cut, 3)
    v = np.random.default_rng(4).normal(size=x.shape)
    f = elastic_forces(x, v, lam, mu, 1e-4 * mu, mesh)
    assert np.max(np.abs(f.sum(axis=0))) < 1e-8
    f0 = elastic_forces(x, np.zeros_like(x), lam, mu, 0.0, mesh)
    h = 1e-7
    fd = np.zeros_like(x)
    for i in range(len(x)):
        for c in range(3):
            up, down = x.copy(), x.copy()
            up[i, c] += h
            down[i, c] -= h
            fd[i, c] = -(elastic_energy(up, mesh, lam, mu) - elastic_energy(down, mesh, lam, mu)) / (2 * h)
    assert np.linalg.norm(f0 - fd) / np.linalg.norm(fd) < 1e-5


def test_inversion_is_reported(toy_cut):
    x = toy_cut.base.vertices.copy()
    x[:, 1] *= -1.0
    lam, mu = lame(1e5, 0.3)
    with pytest.raises(InversionError) as exc:
        elastic_forces(x, np.zeros_like(x), lam, mu, 0.0, toy_cut.base, step=12)
    assert exc.value.step == 12
    assert exc.value.element >= 0


def test_friction_opposes_sliding(rng):
    fn = rng.uniform(-2, 2, size=1000)
    vt = rng.normal(size=(1000, 3)) * rng.uniform(0, 1e-3, size=(1000, 1))
    f = friction(fn, vt, rng.uniform(0, 1, size=1000), rng.uniform(1e-3, 10, size=1000))
    assert np.all(np.einsum("mc,mc->m", f, vt) <= 0.0)
    # Coulomb bound
    assert np.all(np.linalg.norm(f, axis=1) <= np.abs(fn) + 1e-15)


def test_spring_forces_cancel_per_spring(toy_cut):
    springs = CuttingSprings(toy_cut)
    rng = np.random.default_rng(6)
    x = _perturbed(toy_cut, 7, 1e-3)
    v = rng.normal(size=x.shape)
    k = rng.uniform(0, 500, size=toy_cut.n_springs)
    for s in range(toy_cut.n_springs):
        mask = np.zeros(toy_cut.n_springs)
        mask[s] = 1.0
        f = springs.forces(x, v, k * mask, 0.1 * mask)
        assert np.max(np.abs(f.sum(axis=0))) < 1e-10


@given(k=st.lists(st.floats(0, 1500), min_size=5, max_size=5), sf=st.lists(st.floats(0, 10), min_size=5, max_size=5))
def test_damage_is_monotone_and_clamped(k, sf):
    k, sf = np.array(k), np.array(sf)
    out = damage(k, sf, 500.0)
    assert np.all(out <= k)
    assert np.all(out >= 0.0)


def free_sim(cut, dt, duration, **kw):
    cfg = SimConfig(dt=dt, duration=duration, boundary_conditions=False, **kw)
    return Simulator(cut, cfg)


def test_ballistic_error_is_first_order():
    cut = toy_block()
    theta = default_theta(initial_y=1.0, **SOFT)
    errs = []
    for dt in (1e-4, 5e-5):
        sim = free_sim(cut, dt, 0.05, ground=False)
        _, _, st = sim.run(theta)
        exact = cut.base.vertices[:, 1] - 0.5 * 9.81 * 0.05**2
        errs.append(np.max(np.abs(np.asarray(st.x)[:, 1] - exact)))
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.02)


def test_ground_impulse_equals_momentum_change():
    cut = toy_block()
    sim = free_sim(cut, 1e-4, 0.05)
    # lift the block so it falls onto the ground
    theta = default_theta(initial_y=1.0, **SOFT)
    res = sim.resolve(theta)
    st = sim.initial_state(res)
    st.x = st.x + np.array([0.0, 2e-3, 0.0])
    mass = cut.base.vertex_mass[:, None]
    p0 = np.sum(mass * st.v, axis=0)
    impulse = np.zeros(3)
    for _ in range(sim.config.n_steps):
        impulse += sim.config.dt * ground_forces(st.x, st.v, res).sum(axis=0)
        st = sim.step(st, res)[0]
    p1 = np.sum(mass * np.asarray(st.v), axis=0)
    gravity = sim.config.dt * sim.config.n_steps * sim.gravity.sum(axis=0)
    assert np.linalg.norm(impulse) > 0
    np.testing.assert_allclose(impulse, p1 - p0 - gravity, rtol=1e-2, atol=1e-2 * np.linalg.norm(impulse))


def test_first_contact_time():
    cut = toy_block()
    stride, dt = 10, 1e-4
    sim = Simulator(cut, SimConfig(dt=dt, duration=0.04, record_stride=stride, gravity=0.0))
    params = SimParams.defaults(initial_y=0.0115, **SOFT)
    traj = sim.rollout(params)
    top = cut.base.vertices[:, 1].max()
    expected = (params["initial_y"] - top - params["sdf_radius"]) / -params["velocity_y"]
    first = traj.t[np.argmax(traj.fnorm > 0)]
    assert np.all(traj.fnorm[traj.t < expected - 1e-12] == 0.0)
    assert expected - 1e-9 <= first <= expected + stride * dt + 1e-9


def test_rollout_is_deterministic_and_csv_roundtrips(tmp_path):
    cut = toy_block()
    sim = Simulator(cut, SimConfig(dt=1e-4, duration=0.01, record_stride=2))
    params = SimParams.defaults(initial_y=0.0101, **SOFT)
    a, b = sim.rollout(params), sim.rollout(params)
    assert len(a) == 50
    a.write_csv(tmp_path / "a.csv")
    b.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    back = read_trajectory_csv(tmp_path / "a.csv")
    np.testing.assert_array_equal(back.force, a.force)
    np.testing.assert_array_equal(back.t, a.t)


def test_fnorm_only_csv_accepted(tmp_path):
    (tmp_path / "r.csv").write_text("t,fnorm\n0.1,2.5\n0.2,3\n")
    traj = read_trajectory_csv(tmp_path / "r.csv")
    np.testing.assert_array_equal(traj.fnorm, [2.5, 3.0])


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=0.0)
    with pytest.raises(ValueError):
        SimConfig(dt=1e-4, duration=1.5e-4)


def test_reaction_opposes_applied_contact(toy_cut):
    sim = Simulator(toy_cut, SimConfig(dt=1e-4, duration=0.02, gravity=0.0))
    traj = sim.rollout(SimParams.defaults(initial_y=0.0102, **SOFT))
    assert np.any(traj.fnorm > 0)
    # the material pushes the knife up while it presses down
    assert np.all(traj.force[traj.fnorm > 0, 1] >= 0)
