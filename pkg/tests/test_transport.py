import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment, linprog

from diffcut.transport import (
    SpringCloud,
    TransportError,
    average_transfer,
    solve_emd,
    squared_distances,
    transfer_between,
    transfer_params,
)

sizes = st.integers(1, 12)


def cloud(seed, n, d=2):
    return SpringCloud(np.random.default_rng(seed).uniform(size=(n, d)))


def lp_cost(p, q):
    """Transportation LP with uniform marginals, solved by HiGHS."""
    m, n = len(p), len(q)
    c = squared_distances(p, q).ravel()
    rows = np.kron(np.eye(m), np.ones(n))
    cols = np.kron(np.ones(m), np.eye(n))
    res = linprog(c, A_eq=np.vstack([rows, cols]), b_eq=np.r_[np.full(m, 1 / m), np.full(n, 1 / n)], bounds=(0, None), method="highs")
    assert res.status == 0
    return res.fun


@given(seed=st.integers(0, 10_000), m=sizes, n=sizes)
def test_cost_matches_linear_program_and_marginals_exact(seed, m, n):
    a, b = cloud(seed, m), cloud(seed + 1, n)
    res = solve_emd(a, b)
    assert res.cost == pytest.approx(lp_cost(a.points, b.points), rel=1e-9, abs=1e-12)
    np.testing.assert_array_equal(res.units.sum(axis=1), np.full(m, n))
    np.testing.assert_array_equal(res.units.sum(axis=0), np.full(n, m))
    assert np.all(res.units >= 0)
    assert res.flow.sum() == pytest.approx(1.0, abs=1e-15)


@given(seed=st.integers(0, 10_000), n=sizes)
def test_equal_sizes_match_hungarian(seed, n):
    a, b = cloud(seed, n), cloud(seed + 7, n)
    cost = squared_distances(a.points, b.points)
    r, c = linear_sum_assignment(cost)
    assert solve_emd(a, b).cost == pytest.approx(cost[r, c].sum() / n, rel=1e-9, abs=1e-12)


@given(seed=st.integers(0, 10_000), n=sizes)
def test_permuted_cloud_has_zero_cost_and_permutation_flow(seed, n):
    a = cloud(seed, n)
    perm = np.random.default_rng(seed).permutation(n)
    res = solve_emd(a, SpringCloud(a.points[perm]))
    assert res.cost == 0.0
    expected = np.zeros((n, n))
    expected[perm, np.arange(n)] = 1.0 / n
    np.testing.assert_array_equal(res.flow, expected)


@given(seed=st.integers(0, 10_000), m=sizes, n=sizes)
def test_cost_is_symmetric(seed, m, n):
    a, b = cloud(seed, m), cloud(seed + 3, n)
    assert solve_emd(a, b).cost == pytest.approx(solve_emd(b, a).cost, rel=1e-9, abs=1e-12)


@given(seed=st.integers(0, 10_000), m=sizes, n=sizes)
def test_transfer_is_convex_combination(seed, m, n):
    a, b = cloud(seed, m), cloud(seed + 5, n)
    vals = np.random.default_rng(seed).uniform(100, 1500, size=m)
    out = transfer_params(solve_emd(a, b).flow, vals)
    assert out.shape == (n,)
    assert np.all(out >= vals.min() - 1e-9) and np.all(out <= vals.max() + 1e-9)
    np.testing.assert_array_equal(transfer_params(solve_emd(a, b).flow, np.full(m, 250.0)), np.full(n, 250.0))


def test_identity_transfer_copies_values():
    a = cloud(0, 9)
    vals = np.arange(9.0) * 10
    np.testing.assert_allclose(transfer_params(solve_emd(a, a).flow, vals), vals, rtol=1e-14)


def test_average_transfer():
    np.testing.assert_array_equal(average_transfer([1.0, 2.0, 6.0], 4), [3.0] * 4)
    with pytest.raises(TransportError):
        average_transfer([], 3)


def test_errors():
    with pytest.raises(TransportError):
        SpringCloud(np.zeros((0, 2)))
    with pytest.raises(TransportError):
        solve_emd(cloud(0, 3, 2), cloud(1, 3, 3))
    with pytest.raises(TransportError):
        transfer_params(np.full((3, 2), 1 / 6), np.ones(4))


def test_transfer_between_cut_meshes(toy_cut):
    from diffcut.mesh import CutSurface, box_mesh, preprocess_cut

    other = preprocess_cut(box_mesh((4, 3, 2), (0.03, 0.01, 0.01)), CutSurface.plane(0.0163))
    vals = np.linspace(100, 900, toy_cut.n_springs)
    out = transfer_between(toy_cut, vals, other)
    assert out.shape == (other.n_springs,)
    assert np.all((out >= 100 - 1e-9) & (out <= 900 + 1e-9))
