import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsecp.auht import (ContrastSpec, build_auht, detail_variances, forward, inverse,
                           pilot_intensity, select_changepoints)
from sparsecp.criteria import DofTable


def dense_transform(tree):
    """Rows of the orthogonal matrix, built directly from the intervals."""
    n = tree.n
    W = np.zeros((n, n))
    W[0] = 1 / np.sqrt(n)
    for k in range(n - 1):
        l, t, r = tree.left[k], tree.split[k], tree.right[k]
        nl, nr = t - l, r - t
        s = np.sqrt(1 / nr + 1 / nl)
        W[k + 1, t:r] = 1 / (nr * s)
        W[k + 1, l:t] = -1 / (nl * s)
    return W


def test_two_point_closed_form():
    tree = build_auht(np.array([0.0, 2.0]), ContrastSpec(q=1))
    assert tree.s00 == pytest.approx(np.sqrt(2))
    assert tree.details[0] == pytest.approx(np.sqrt(2))
    assert tree.s00 ** 2 + tree.details[0] ** 2 == pytest.approx(4.0)


@pytest.mark.parametrize("q", [1.0, 2.0, 3.0])
def test_step_top_split(q):
    tree = build_auht(np.array([0, 0, 0, 0, 1, 1, 1, 1.0]), ContrastSpec(q))
    assert tree.split[0] == 4
    assert tree.details[0] == pytest.approx(np.sqrt(2))


def test_top_split_brute_force(rng):
    y = rng.poisson(4, 50).astype(float)
    for q in (1.0, 2.0):
        tree = build_auht(y, ContrastSpec(q))
        best = max(range(1, 50), key=lambda t: (abs(y[t:].mean() - y[:t].mean())
                                                  / (1 / (50 - t) + 1 / t) ** (q / 2), -t))
        assert tree.split[0] == best


def test_constant_signal():
    tree = build_auht(np.full(17, 3.0))
    assert not np.any(tree.details)
    assert tree.s00 == pytest.approx(np.sqrt(17) * 3)


def test_structure():
    tree = build_auht(np.random.default_rng(0).standard_normal(100))
    assert tree.details.size == 99
    assert tree.forest.m == 100 and tree.forest.roots.tolist() == [0]
    # children partition the parent interval
    for k in range(99):
        for ch, lo, hi in ((tree.child_left[k], tree.left[k], tree.split[k]),
                           (tree.child_right[k], tree.split[k], tree.right[k])):
            if ch >= 0:
                assert (tree.left[ch], tree.right[ch]) == (lo, hi)
            else:
                assert hi - lo == 1


def test_errors():
    with pytest.raises(ValueError):
        build_auht(np.array([1.0]))
    with pytest.raises(ValueError):
        build_auht(np.array([1.0, np.nan, 2.0]))
    tree = build_auht(np.arange(5.0))
    with pytest.raises(ValueError):
        forward(tree, np.arange(6.0))


@pytest.mark.parametrize("n", [64, 512])
def test_orthogonality_and_roundtrip(n, rng):
    for _ in range(20):
        y = rng.standard_normal(n) * rng.uniform(0.1, 10)
        tree = build_auht(y)
        s00, d = forward(tree, y)
        assert abs(y @ y - s00 ** 2 - d @ d) <= 1e-9 * (y @ y)
        back = inverse(tree, s00, d)
        assert np.linalg.norm(back - y) <= 1e-10 * np.linalg.norm(y)


def test_dense_matrix_oracle(rng):
    y = rng.poisson(3, 40).astype(float)
    tree = build_auht(y)
    W = dense_transform(tree)
    assert np.allclose(W @ W.T, np.eye(40), atol=1e-12)
    assert np.allclose(W @ y, tree.coefficients, atol=1e-10)
    v = rng.uniform(0.5, 3, 40)
    dv = detail_variances(tree, v)
    assert np.allclose(np.einsum("ij,j,ij->i", W, v, W), dv.all, rtol=1e-10)


def test_forward_linear_on_fixed_tree(rng):
    tree = build_auht(rng.standard_normal(33))
    a, b = rng.standard_normal(33), rng.standard_normal(33)
    sa, da = forward(tree, a)
    sb, db = forward(tree, b)
    s, d = forward(tree, 2 * a - 3 * b)
    assert s == pytest.approx(2 * sa - 3 * sb)
    assert np.allclose(d, 2 * da - 3 * db)


def test_forward_of_ones():
    tree = build_auht(np.random.default_rng(1).standard_normal(31))
    s, d = forward(tree, np.ones(31))
    assert s == pytest.approx(np.sqrt(31)) and np.allclose(d, 0, atol=1e-12)


def test_detail_variances_examples(rng):
    tree = build_auht(rng.standard_normal(50))
    assert np.allclose(detail_variances(tree, np.ones(50)).sigma2, 1.0)
    assert np.allclose(detail_variances(tree, np.full(50, 2.5)).sigma2, 2.5)
    t2 = build_auht(np.array([1.0, 4.0]))
    assert detail_variances(t2, np.array([1.0, 3.0])).sigma2[0] == pytest.approx(2.0)


def test_detail_variances_floor():
    tree = build_auht(np.array([0.0, 0.0, 5.0, 6.0]))
    dv = detail_variances(tree, np.array([0.0, 0.0, 1.0, 2.0]))
    assert np.all(dv.all > 0)


@given(st.integers(2, 60), st.integers(0, 2 ** 31 - 1))
@settings(max_examples=60, deadline=None)
def test_sign_flip_q2(n, seed):
    y = np.random.default_rng(seed).standard_normal(n)
    a, b = build_auht(y), build_auht(-y)
    assert np.array_equal(a.split, b.split)
    assert np.allclose(b.details, -a.details)


def test_pilot_constant_poisson_retains_few():
    fracs = []
    for s in range(10):
        y = np.random.default_rng(s).poisson(5.0, 1024)
        res = pilot_intensity(y, full=True)
        fracs.append(res.survivors / 1023)
    assert np.median(fracs) <= 0.05


def test_pilot_single_jump():
    # soft thresholding moves each level by lam * sd(top detail) / (n_side * s)
    nseg = 200
    s = np.sqrt(2.0 / nseg)
    sd_top = np.sqrt((12.0 / nseg + 3.0 / nseg) / s ** 2)
    hits = 0
    for seed in range(10):
        mu = np.r_[np.full(nseg, 3.0), np.full(nseg, 12.0)]
        y = np.random.default_rng(seed).poisson(mu)
        res = pilot_intensity(y, full=True)
        shrink = res.threshold * sd_top / (nseg * s)
        est = res.intensity
        ok_l = abs(np.median(est[20:180]) - 3.0) <= 3 * np.sqrt(3.0 / nseg) + shrink
        ok_r = abs(np.median(est[220:380]) - 12.0) <= 3 * np.sqrt(12.0 / nseg) + shrink
        hits += ok_l and ok_r
    assert hits >= 9


def test_pilot_positive_and_errors():
    y = np.r_[np.zeros(50), np.full(50, 4)].astype(int)
    assert np.all(pilot_intensity(y) > 0)
    with pytest.raises(ValueError):
        pilot_intensity(np.zeros(10))
    with pytest.raises(ValueError):
        pilot_intensity(np.array([1, -1, 2]))


def test_noise_free_steps_recovered():
    mu = np.r_[np.full(60, 2.0), np.full(40, 7.0), np.full(100, 4.0), np.full(56, 9.0)]
    dof = DofTable.naive(40, mu.size)
    res = select_changepoints(mu, dof=dof, kappa_max=40, variances=np.ones(mu.size))
    assert res.changepoints.tolist() == [60, 100, 200]
    assert res.kappa_star == 4
    sse = np.sum(res.std_coefficients ** 2) - res.masses
    assert sse[4] == pytest.approx(0.0, abs=1e-9)
    assert np.allclose(res.mu_hat, mu)


def test_select_changepoints_small_poisson():
    mu = np.r_[np.full(150, 2.0), np.full(150, 8.0), np.full(212, 3.0)]
    y = np.random.default_rng(3).poisson(mu)
    res = select_changepoints(y, kappa_max=40, reps=30)
    assert res.kappa_naive >= res.kappa_star
    assert any(abs(c - 150) <= 10 for c in res.changepoints)
    assert any(abs(c - 300) <= 10 for c in res.changepoints)
    assert len(res.curve_table()) == 41


def test_fixed_tree_mode_runs():
    y = np.random.default_rng(0).poisson(5, 256)
    res = select_changepoints(y, kappa_max=20, reps=10, mc_mode="fixed")
    assert 1 <= res.kappa_star <= 20
