import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsecp.criteria import (DofTable, FitSummary, ReplicateError, Selection, fixed_selector,
                               gcv, gcv_curve, mallows_cp, mc_dof, naive_cp_curve,
                               refined_cp_curve, soft_threshold, threshold_selector)
from sparsecp.treeselect import Forest, tree_selector


@pytest.mark.parametrize("n,sse,nu,expected", [(4, 4.0, 0, 0.0), (10, 0.0, 10, 1.0), (100, 90.0, 5, 0.0)])
def test_mallows_cp_values(n, sse, nu, expected):
    assert mallows_cp(FitSummary(n, min(nu, n), sse, 1.0), nu) == pytest.approx(expected, abs=1e-14)


def test_mallows_cp_requires_sigma2():
    with pytest.raises(ValueError, match="gcv"):
        mallows_cp(FitSummary(10, 2, 3.0), 2)


@pytest.mark.parametrize("n,sse,nu,expected", [(10, 10.0, 0, 1.0), (10, 5.0, 5, 2.0)])
def test_gcv_values(n, sse, nu, expected):
    assert gcv(FitSummary(n, nu, sse), nu) == pytest.approx(expected)


def test_gcv_degenerate_denominator():
    with pytest.raises(ValueError):
        gcv(FitSummary(4, 4, 4.0), 4)


def test_fit_summary_validation():
    with pytest.raises(ValueError):
        FitSummary(10, 2, -1.0)
    with pytest.raises(ValueError):
        FitSummary(10, 11, 1.0)
    with pytest.raises(ValueError):
        FitSummary(10, 2, 1.0, sigma2=0.0)


def test_soft_threshold_values():
    assert soft_threshold([3.0, -0.5, -3.0], 1.0).tolist() == [2.0, 0.0, -2.0]


def test_refined_curve_two_point_table():
    curve = refined_cp_curve({1: 50.0, 2: 10.0}, {1: 1.5, 2: 3.0}, n=100, sigma2=1.0)
    assert curve[1] == pytest.approx(-0.47)
    assert curve[2] == pytest.approx(-0.84)
    assert curve.kappa_star == 2


def test_refined_curve_constant_sse_picks_smallest():
    n = 50
    curve = refined_cp_curve(np.full(8, n * 2.0), np.arange(8.0), n, 2.0)
    assert curve.kappa_star == 0


def test_refined_curve_empty_overlap():
    with pytest.raises(ValueError):
        refined_cp_curve({5: 1.0}, np.arange(3.0), 10, 1.0)


@given(st.lists(st.floats(0, 100), min_size=2, max_size=30), st.floats(0.1, 5), st.integers(30, 500))
@settings(max_examples=60, deadline=None)
def test_reflection_identity(sse, sigma2, n, ):
    rng = np.random.default_rng(len(sse))
    k = np.arange(len(sse))
    nu = k + rng.uniform(0, 3, len(sse))
    nu[0] = 0
    dof = DofTable(nu=nu, se=np.zeros_like(nu), replicates=1, seed=0, n=n, sigma2=sigma2)
    ref = refined_cp_curve(sse, dof, n, sigma2).values
    nai = naive_cp_curve(sse, n, sigma2).values
    assert np.allclose(ref - nai, 2 * dof.mirror, atol=1e-12)


def test_dof_table_invariants(tmp_path):
    dof = mc_dof(threshold_selector(20), 100, 20, reps=30, seed=4)
    assert dof.nu[0] == 0 and dof.mirror[0] == 0
    assert np.all(np.isfinite(dof.nu))
    assert np.array_equal(dof.mirror, (dof.nu - dof.kappa) * 1.0 / 100)
    p = tmp_path / "dof.csv"
    dof.to_csv(p)
    assert p.read_text().splitlines()[0] == "kappa,nu,se,mirror"
    back = DofTable.from_csv(p, n=100)
    assert np.array_equal(back.nu, dof.nu) and np.array_equal(back.mirror, dof.mirror)


def test_mc_dof_reproducible_and_parallel_invariant():
    a = mc_dof(threshold_selector(10), 200, 10, reps=25, seed=9)
    b = mc_dof(threshold_selector(10), 200, 10, reps=25, seed=9)
    c = mc_dof(threshold_selector(10), 200, 10, reps=25, seed=9, n_jobs=3)
    assert np.array_equal(a.nu, b.nu) and np.array_equal(a.nu, c.nu)
    assert np.array_equal(a.se, c.se)


def test_mc_dof_rejects_zero_reps():
    with pytest.raises(ValueError):
        mc_dof(threshold_selector(5), 10, 5, reps=0)


def test_mc_dof_wraps_replicate_failure():
    calls = []

    def bad(z):
        calls.append(1)
        if len(calls) == 3:
            raise RuntimeError("boom")
        return Selection(energy=np.zeros(3))

    with pytest.raises(ReplicateError) as info:
        mc_dof(bad, 10, 2, reps=5)
    assert info.value.replicate == 2


def _top_k_oracle(m, kappa):
    # E sum of the k largest z^2 among m: integrate the order statistics numerically
    from scipy import integrate, stats
    total = 0.0
    for r in range(1, kappa + 1):
        # r-th largest |z| has the distribution of the (m - r + 1)-th order statistic of chi2_1
        j = m - r + 1
        dens = lambda x: (stats.beta.pdf(stats.chi2.cdf(x, 1), j, m - j + 1) * stats.chi2.pdf(x, 1))
        total += integrate.quad(lambda x: x * dens(x), 0, 60, limit=200)[0]
    return total


def test_threshold_selector_exceeds_kappa():
    dof = mc_dof(threshold_selector(400), 2000, 400, reps=200, seed=1)
    for k in (50, 100, 200, 400):
        assert dof.nu[k] > k
    # independent order-statistic oracle at a small size
    m = 200
    small = mc_dof(threshold_selector(3), m, 3, reps=2000, seed=2)
    assert abs(small.nu[3] - _top_k_oracle(m, 3)) <= 4 * small.se[3]


def test_fixed_selector_gives_kappa():
    sets = [np.arange(k) for k in range(31)]
    dof = mc_dof(fixed_selector(sets), 100, 30, reps=300, seed=3)
    assert np.all(np.abs(dof.nu - np.arange(31)) <= 3 * dof.se + 1e-12)


def test_tree_selector_nu_at_least_kappa():
    f = Forest.binary(255)
    dof = mc_dof(tree_selector(f, kappa_max=60), 255, 60, reps=100, seed=5)
    assert np.all(dof.nu >= dof.kappa - 3 * dof.se)


def test_naive_table_is_kappa():
    t = DofTable.naive(5, 10)
    assert t.nu.tolist() == [0, 1, 2, 3, 4, 5] and not np.any(t.mirror)


def test_gcv_curve_matches_scalar():
    sse = np.array([10.0, 6.0, 5.0])
    nu = np.array([0.0, 1.5, 3.0])
    curve = gcv_curve(sse, nu, 10)
    for k in range(3):
        assert curve[k] == pytest.approx(gcv(FitSummary(10, k, sse[k]), nu[k]))


def test_selection_energies_fallback():
    z = np.array([1.0, -2.0, 3.0])
    s = Selection(sets=[[], [2], [1, 2]])
    assert s.energies(z).tolist() == [0.0, 9.0, 13.0]
    assert math.isclose(s.energies(z)[2], 13.0)
