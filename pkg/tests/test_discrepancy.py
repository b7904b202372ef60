import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qpdyn.arithmetic import DiophantineCondition, build_test_frequency, golden_mean
from qpdyn.discrepancy import (
    EnumerationBudgetError,
    IntervalUnionSet,
    PointSet,
    choose_M,
    corollary_bound,
    discrepancy_report,
    dks_bound,
    etk_bound,
    exact_discrepancy,
    fixed_points_check,
    hitting_count,
    kronecker_orbit,
)

GOLDEN = (math.sqrt(5) - 1) / 2


def brute_discrepancy(x):
    """Enumerate closed arcs with endpoints at data points, plus open arcs between them."""
    x = np.sort(np.asarray(x, dtype=float))
    N = len(x)
    best = 0.0
    for i in range(N):
        for j in range(N):
            length = (x[j] - x[i]) % 1.0
            if i == j:
                # degenerate closed arc; the open arc going all the way round
                # has length 1 and misses the same points, giving the same value
                closed_count = np.count_nonzero(x == x[i])
                best = max(best, closed_count / N)
                continue
            if x[j] >= x[i]:
                inside_closed = (x >= x[i]) & (x <= x[j])
                inside_open = (x > x[i]) & (x < x[j])
            else:
                inside_closed = (x >= x[i]) | (x <= x[j])
                inside_open = (x > x[i]) | (x < x[j])
            best = max(best, inside_closed.sum() / N - length, length - inside_open.sum() / N)
    return best


# orbits ----------------------------------------------------------------------

def test_orbit_rational_alpha_allowed():
    assert np.allclose(kronecker_orbit(0.0, 0.5, 4).points[:, 0], [0.5, 0.0, 0.5, 0.0])


def test_orbit_zero_alpha():
    assert np.allclose(kronecker_orbit(0.25, 0.0, 3).points[:, 0], [0.25] * 3)


def test_orbit_golden_first_points():
    pts = kronecker_orbit(0.0, GOLDEN, 5).points[:, 0]
    assert np.allclose(pts, [0.618034, 0.236068, 0.854102, 0.472136, 0.090170], atol=1e-6)


def test_orbit_profile_matches_float():
    a = kronecker_orbit(0.1, golden_mean(40), 1000).points[:, 0]
    b = kronecker_orbit(0.1, GOLDEN, 1000).points[:, 0]
    assert np.allclose(a, b, atol=1e-10)


def test_symmetric_range_size():
    assert len(kronecker_orbit(0.0, GOLDEN, 10, "-N..N")) == 21


def test_pointset_rejects_bad_coordinates():
    with pytest.raises(ValueError):
        PointSet(np.array([1.0]))
    with pytest.raises(ValueError):
        PointSet(np.array([]))


# exact discrepancy ---------------------------------------------------------

def test_single_point():
    assert exact_discrepancy(PointSet(np.array([0.5]))) == 1.0


def test_equispaced():
    assert exact_discrepancy(PointSet(np.arange(8) / 8)) == pytest.approx(1 / 8, abs=1e-15)


def test_golden_100():
    d = exact_discrepancy(kronecker_orbit(0.0, GOLDEN, 100))
    assert d <= 3 * math.log(100) / 100
    assert d == pytest.approx(brute_discrepancy(kronecker_orbit(0.0, GOLDEN, 100).points[:, 0]), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1, exclude_max=True), min_size=1, max_size=25))
def test_exact_matches_brute_force(xs):
    ps = PointSet(np.array(xs))
    assert exact_discrepancy(ps) == pytest.approx(brute_discrepancy(xs), abs=1e-12)


@settings(max_examples=60)
@given(st.lists(st.floats(0, 1, exclude_max=True), min_size=1, max_size=200))
def test_lower_bound_one_over_N(xs):
    d = exact_discrepancy(PointSet(np.array(xs)))
    assert 1 / len(xs) - 1e-15 <= d <= 1


def test_refuses_three_dimensions():
    with pytest.raises(ValueError):
        exact_discrepancy(PointSet(np.zeros((4, 3))))


def test_two_dimensional_grid_approximation():
    ps = kronecker_orbit([0.0, 0.0], [GOLDEN, math.sqrt(2) - 1], 200)
    d = exact_discrepancy(ps, grid=32)
    assert 1 / 200 <= d < 0.2


# ETK -------------------------------------------------------------------------

def test_etk_M1_literal():
    # the sum over 0 < |m| < 1 is empty
    assert etk_bound(GOLDEN, 100, 1) == pytest.approx(1.5)


def test_etk_M2_single_pair():
    N = 50
    x = GOLDEN
    s = abs(math.sin(math.pi * N * x) / math.sin(math.pi * x))
    expected = 1.5 * (2 / 3 + 2 * s / N)
    assert etk_bound(GOLDEN, N, 2) == pytest.approx(expected, rel=1e-12)


def test_etk_monotone_sanity_with_min_cutoff():
    # |m alpha| >= b for 0 < |m| < M gives the b-majorant
    N, M = 1000, 50
    m = np.arange(1, M)
    b = float(np.min(np.abs(m * GOLDEN - np.round(m * GOLDEN))))
    majorant = 1.5 * (2 / (M + 1) + 2 * np.sum(1 / (m * b)) / N * 0.5)
    assert etk_bound(GOLDEN, N, M, cutoff="min") <= majorant + 1e-12
    assert etk_bound(GOLDEN, N, M) <= etk_bound(GOLDEN, N, M, cutoff="min") + 1e-12


@pytest.mark.parametrize("N", [100, 1000])
@pytest.mark.parametrize("M", [1, 3, 10, 100])
def test_etk_dominates_exact(N, M):
    assert exact_discrepancy(kronecker_orbit(0.0, GOLDEN, N)) <= etk_bound(GOLDEN, N, M)


def test_etk_two_dimensional():
    ps = kronecker_orbit([0.0, 0.0], [GOLDEN, math.sqrt(2) - 1], 200)
    assert etk_bound([GOLDEN, math.sqrt(2) - 1], 200, 6) >= exact_discrepancy(ps, grid=32)


# Phi-bound -------------------------------------------------------------------

def test_choose_M_power_law():
    c = DiophantineCondition.power_law(0.4, 1.0)
    assert choose_M(c, 1e4) == pytest.approx(0.4 * 1e4, rel=1e-12)


def test_choose_M_log_power():
    c = DiophantineCondition.log_power(0.5, 1.0, 2.0)
    N = 1e6
    assert choose_M(c, N) == pytest.approx(math.exp(math.log(0.5 * N) ** 0.5), rel=1e-10)


def test_choose_M_stretched():
    c = DiophantineCondition.stretched_exp(0.5, 5.0, 0.5)
    N = 1e8
    assert choose_M(c, N) == pytest.approx((math.log(0.5 * math.sqrt(N)) / 5.0) ** 2, rel=1e-10)


def test_dks_rejects_small_M():
    c = DiophantineCondition.stretched_exp(0.5, 5.0, 0.1)
    with pytest.raises(ValueError):
        dks_bound(c, 10**6)
    with pytest.raises(ValueError):
        dks_bound(DiophantineCondition.power_law(0.4, 1.0), 1)


def test_dks_power_law_tracks_corollary():
    c = DiophantineCondition.power_law(0.38, 1.0)
    ratios = [dks_bound(c, N) / corollary_bound(c, N) for N in (10**3, 10**4, 10**5, 10**6)]
    assert all(0.1 <= r <= 10 for r in ratios)


def test_dks_three_terms_by_hand():
    c = DiophantineCondition.power_law(0.5, 2.0)
    M, N = 10.0, 1000
    phi = M**2 / 0.5
    expected = 1 / M + 1 / N + phi * math.log(phi) * math.log(M) / (M * N)
    assert dks_bound(c, N, M) == pytest.approx(expected, rel=1e-12)
    assert dks_bound(c, N, M, constant=3.0) == pytest.approx(3 * expected, rel=1e-12)


def test_report_row_layout():
    p = golden_mean(40).with_condition(DiophantineCondition.power_law(0.38, 1.0))
    r = discrepancy_report(p, 1000)
    assert r.M_used == 380
    assert r.exact <= r.etk_bound
    assert r.row()[0] == 1000 and len(r.row()) == 6


# interval unions and hitting counts ---------------------------------------

def test_interval_union_wrap_and_merge():
    S = IntervalUnionSet([[0.9, 0.1], [0.05, 0.2], [0.5, 0.6]])
    assert S.measure == pytest.approx(0.4)
    assert S.n_components == 2
    assert S.contains(np.array([0.95, 0.0, 0.15, 0.55, 0.3])).tolist() == [True, True, True, True, False]


def test_interval_union_degree_enforced():
    with pytest.raises(ValueError):
        IntervalUnionSet([[0.1, 0.2], [0.3, 0.4]], degree=3)
    assert IntervalUnionSet([[0.1, 0.2]], degree=7).degree == 7


def test_interval_union_json_round_trip():
    S = IntervalUnionSet([[0.9, 0.1], [0.3, 0.4]], degree=6)
    T = IntervalUnionSet.from_json(S.to_json())
    assert T.measure == pytest.approx(S.measure) and T.degree == 6


def test_hitting_example():
    rep = hitting_count(0.0, GOLDEN, 10, IntervalUnionSet([[0.0, 0.0999999]]), Y_N=0.5)
    assert rep.count == 1
    assert rep.applicable and rep.bound == pytest.approx(2 * 2 * 10 * 0.5)


def test_hitting_precondition_violation():
    rep = hitting_count(0.0, GOLDEN, 10, IntervalUnionSet([[0.0, 1.0]]), Y_N=0.2)
    assert rep.count == 10 and not rep.applicable and rep.bound is None


def test_hitting_empty_set():
    rep = hitting_count(0.3, GOLDEN, 50, IntervalUnionSet([]))
    assert rep.count == 0 and rep.bound >= 0


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1, exclude_max=True), st.floats(0.0005, 0.01))
def test_hitting_below_covering_bound(a, width):
    N = 2000
    S = IntervalUnionSet([[a, a + width]])
    Y = exact_discrepancy(kronecker_orbit(0.2, GOLDEN, N))
    rep = hitting_count(0.2, GOLDEN, N, S, Y_N=max(Y, S.measure))
    assert rep.applicable
    assert rep.count <= rep.bound


# fixed points ----------------------------------------------------------------

def test_fixed_points_golden_r6():
    c = DiophantineCondition.power_law(0.38, 1.0)
    for l in range(0, 30):
        assert fixed_points_check(golden_mean(40), c, 6, l) <= 4


def test_fixed_points_band_beyond_half():
    c = DiophantineCondition.power_law(0.38, 1.0)
    delta = float(c.phi(2.0**6))
    assert fixed_points_check(golden_mean(40), c, 6, int(delta) + 1) == 0


def test_fixed_points_budget():
    with pytest.raises(EnumerationBudgetError):
        fixed_points_check(GOLDEN, DiophantineCondition.power_law(0.38, 1.0), 24, budget=1000)


def test_fixed_points_two_dimensional():
    c = DiophantineCondition.power_law(0.05, 2.0)
    assert fixed_points_check([GOLDEN, math.sqrt(2) - 1], c, [4, 4]) <= 8


def test_liouville_discrepancy_decays_slowly():
    p = build_test_frequency("stretched_liouville", kappa=5.0, gamma=0.1, eta=0.5, depth=7)
    d3 = exact_discrepancy(kronecker_orbit(0.0, p, 10**3))
    g3 = exact_discrepancy(kronecker_orbit(0.0, golden_mean(40), 10**3))
    assert d3 > 10 * g3
