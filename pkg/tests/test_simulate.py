import numpy as np
import pytest

from sparsecp.simulate import (BlocksSpec, GeoGraphSpec, blocks_intensity, blocks_poisson,
                               edges_of, evaluate_changepoints, evaluate_edges, geo_graph,
                               oracle_pe_curve, true_pe_curve)
from sparsecp.treeselect import Forest


def test_blocks_intensity():
    mu, cps = blocks_intensity()
    assert mu.min() == pytest.approx(1.5) and mu.max() == pytest.approx(8.7)
    assert len(cps) == 11
    assert len(np.unique(np.split(mu, cps)[0])) == 1
    assert len(np.split(mu, cps)) == 12
    assert cps.tolist() == [400, 520, 600, 920, 1000, 1600, 1760, 2600, 3040, 3120, 3240]


def test_blocks_min_n():
    with pytest.raises(ValueError):
        blocks_intensity(BlocksSpec(n=50))


def test_blocks_poisson_mean_and_reproducible():
    means = []
    for s in range(20):
        mu, y, _ = blocks_poisson(seed=s)
        means.append(y.mean())
    assert abs(np.mean(means) - mu.mean()) <= 3 * np.sqrt(mu.mean() / (4000 * 20))
    a, b = blocks_poisson(seed=5)[1], blocks_poisson(seed=5)[1]
    assert np.array_equal(a, b)


def test_geo_graph_properties():
    K, S, X, pos = geo_graph(GeoGraphSpec(m=60, n=80, seed=2))
    assert np.abs(np.diag(S) - 1).max() <= 1e-12
    assert np.abs(K @ S - np.eye(60)).max() <= 1e-10
    deg = (np.abs(K) > 0).sum(1) - 1
    assert deg.max() <= 4
    assert np.linalg.eigvalsh(K)[0] > 0
    L = np.linalg.cholesky(S)
    assert np.abs(L @ L.T - S).max() <= 1e-10
    assert X.shape == (80, 60)
    K2, _, X2, _ = geo_graph(GeoGraphSpec(m=60, n=80, seed=2))
    assert np.array_equal(X, X2) and np.array_equal(K, K2)
    with pytest.raises(ValueError):
        geo_graph(GeoGraphSpec(m=5))


def test_evaluate_changepoints():
    truth = [100, 200, 300]
    assert evaluate_changepoints(truth, truth).tp == 3
    s = evaluate_changepoints(truth + [250], truth)
    assert (s.tp, s.fp, s.fn) == (3, 1, 0)
    s = evaluate_changepoints([t + 11 for t in truth], truth, tol=10)
    assert s.fn == 3
    # one estimate cannot serve two truths
    s = evaluate_changepoints([150], [145, 155], tol=10)
    assert (s.tp, s.fp, s.fn) == (1, 0, 1)
    with pytest.raises(ValueError):
        evaluate_changepoints([], [], tol=-1)


def test_evaluate_edges():
    t = {(0, 1), (1, 2)}
    assert evaluate_edges(t, t).f1 == 1.0
    assert evaluate_edges(set(), t).recall == 0.0
    s = evaluate_edges({(2, 3)}, t)
    assert s.precision == 0.0 and s.recall == 0.0
    assert evaluate_edges({(1, 0)}, {(0, 1)}).tp == 1


def test_edges_of():
    K = np.eye(3)
    K[0, 2] = K[2, 0] = 0.1
    assert edges_of(K) == {(0, 2)}


def test_oracle_pe_curve(rng):
    f = Forest.binary(31)
    v = rng.standard_normal(31)
    pe, bias, var = oracle_pe_curve(v, f, 31, sigma2=2.0, n=31)
    assert pe[0] == pytest.approx(v @ v / 31)
    assert pe[31] == pytest.approx(31 * 2.0 / 31)
    assert np.all(np.diff(bias) <= 1e-12)
    assert np.allclose(np.diff(var), 2.0 / 31)


def test_true_pe_curve():
    v = np.array([1.0, 0.0, 2.0])
    u = np.array([1.5, 0.5, 2.0])
    pe = true_pe_curve(v, u, [np.array([], int), np.array([0]), np.array([0, 2])])
    assert pe.tolist() == pytest.approx([5 / 3, 4.25 / 3, 0.25 / 3])
