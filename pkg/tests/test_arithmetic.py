import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qpdyn.arithmetic import (
    DiophantineCondition,
    FrequencyProfile,
    PrecisionExhaustedError,
    RationalFrequencyError,
    beta_exponent_estimate,
    build_test_frequency,
    continued_fraction,
    convergents,
    from_cf,
    golden_mean,
    torus_norm,
    verify_condition,
)

GOLDEN = (math.sqrt(5) - 1) / 2


# torus norm -----------------------------------------------------------------

@pytest.mark.parametrize("x, expected", [(0.75, 0.25), (3.0, 0.0), (-0.3, 0.3), (0.5, 0.5)])
def test_torus_norm_values(x, expected):
    assert torus_norm(x) == pytest.approx(expected, abs=1e-15)


def test_torus_norm_golden_multiple():
    # 8 * 0.6180339887... = 4.944271909..., nearest integer 5
    assert torus_norm(8 * GOLDEN) == pytest.approx(5 - 8 * GOLDEN, abs=1e-14)
    assert torus_norm(8 * GOLDEN) == pytest.approx(0.055728090000841, abs=1e-12)


@pytest.mark.parametrize("bad", [math.inf, -math.inf, math.nan])
def test_torus_norm_rejects_non_finite(bad):
    with pytest.raises(ValueError):
        torus_norm(bad)


@given(st.floats(-1e6, 1e6, allow_nan=False))
def test_torus_norm_symmetries(x):
    v = torus_norm(x)
    assert 0 <= v <= 0.5
    assert torus_norm(-x) == v
    # x + 1 is exact only while no bits are lost in the addition
    if abs(x) < 2**20 and (x + 1) - 1 == x:
        assert torus_norm(x + 1) == pytest.approx(v, abs=1e-9)


# continued fractions -------------------------------------------------------

def test_golden_float_expansion():
    p = continued_fraction(GOLDEN, 10)
    assert p.cf == (1,) * 10 or list(p.cf) == [1] * 10
    assert p.denominators == [1, 2, 3, 5, 8, 13, 21, 34, 55, 89]


def test_pi_minus_three_exact_coefficients():
    p = continued_fraction(coeffs=[7, 15, 1, 292, 1, 1, 1, 2], depth=8)
    assert p.denominators[:4] == [7, 106, 113, 33102]
    assert p.convergents[2] == (16, 113)
    assert p.alpha == pytest.approx(math.pi - 3, abs=1e-10)


def test_silver_denominators():
    assert from_cf([2] * 5).denominators == [2, 5, 12, 29, 70]


def test_rational_input_is_an_error():
    with pytest.raises(RationalFrequencyError):
        continued_fraction(0.5, 5)
    with pytest.raises(RationalFrequencyError):
        continued_fraction(0.375, 10)


def test_float_expansion_stops_before_noise():
    with pytest.raises(PrecisionExhaustedError):
        continued_fraction(GOLDEN, 30)


def test_bad_alpha_rejected():
    for a in (0.0, 1.0, 1.5):
        with pytest.raises(ValueError):
            continued_fraction(a, 3)


@given(st.lists(st.integers(1, 50), min_size=2, max_size=25))
def test_convergent_invariants(cf):
    p = from_cf(cf)
    conv = p.convergents
    # [0; a1, ...]: (p_{-1}, q_{-1}) = (1, 0), (p_0, q_0) = (0, 1)
    pm2, qm2, pm1, qm1 = 1, 0, 0, 1
    for a, (pk, qk) in zip(cf, conv):
        assert pk == a * pm1 + pm2 and qk == a * qm1 + qm2
        pm2, qm2, pm1, qm1 = pm1, qm1, pk, qk
    qs = [q for _, q in conv]
    assert all(b > a for a, b in zip(qs, qs[1:])) or qs[0] == qs[1] == 1
    exact = p.fraction
    for k in range(len(conv) - 1):
        (pk, qk), (_, qn) = conv[k], conv[k + 1]
        err = abs(exact - Fraction(pk, qk))
        # equality only when alpha is the next convergent itself
        assert err <= Fraction(1, qk * qn)
        if k < len(conv) - 2:
            assert err < Fraction(1, qk * qn)
        # alternation around alpha
        sign = (Fraction(pk, qk) - exact) * (-1) ** k
        assert sign >= 0 or k == len(conv) - 1


@settings(max_examples=30)
@given(st.lists(st.integers(1, 1000), min_size=3, max_size=6))
def test_best_approximation_norm(cf):
    p = from_cf(cf)
    qs = np.array(p.denominators[:-1], dtype=np.int64)
    ps = np.array([c[0] for c in p.convergents[:-1]], dtype=np.int64)
    direct = [abs(float(Fraction(int(q)) * p.fraction - int(pp))) for q, pp in zip(qs, ps)]
    assert np.allclose(p.norm_multiples(qs), direct, atol=1e-12)


def test_convergents_helper_matches_profile():
    cf = [3, 1, 4, 1, 5]
    assert convergents(cf) == list(from_cf(cf).convergents)


def test_frac_multiples_large_n_use_exact_path():
    p = golden_mean(60)
    n = np.array([2**40, 2**41 + 3], dtype=np.int64)
    exact = [float((int(k) * p.fraction) % 1) for k in n]
    assert np.allclose(p.frac_multiples(n), exact, atol=1e-12)


# beta estimate -------------------------------------------------------------

def test_beta_golden_small():
    assert beta_exponent_estimate(golden_mean(20)) <= 0.10
    assert golden_mean(40).beta_estimate < 0.01


def test_beta_super_exponential_grows():
    cf = [1, 10, 10**2, 10**4, 10**8, 10**16, 10**32]
    vals = [beta_exponent_estimate(from_cf(cf[:k])) for k in range(3, len(cf) + 1)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert vals[2] > 1  # depth 5


def test_beta_silver_small():
    assert beta_exponent_estimate(from_cf([2] * 15)) < 0.5


def test_beta_needs_three_convergents():
    with pytest.raises(ValueError):
        beta_exponent_estimate(from_cf([1, 2]))


# Diophantine conditions ----------------------------------------------------

def test_condition_parameter_domains():
    with pytest.raises(ValueError):
        DiophantineCondition.power_law(1.0, 0.5)
    with pytest.raises(ValueError):
        DiophantineCondition.log_power(1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        DiophantineCondition.stretched_exp(1.0, 0.0, 0.5)
    with pytest.raises(ValueError):
        DiophantineCondition.power_law(0.0, 1.0)


@pytest.mark.parametrize("cond", [
    DiophantineCondition.power_law(0.5, 1.0),
    DiophantineCondition.power_law(0.1, 3.0),
    DiophantineCondition.log_power(0.5, 1.0, 2.0),
    DiophantineCondition.log_power(0.3, 0.2, 3.0),
    DiophantineCondition.stretched_exp(0.5, 5.0, 0.1),
    DiophantineCondition.stretched_exp(1.0, 1.0, 0.5),
])
def test_phi_over_t_monotone_past_rho(cond):
    assert cond.rho >= 2
    t = cond.rho * np.geomspace(1, 1e6, 400)
    r = cond.log_phi(t) - np.log(t)
    assert np.all(np.diff(r) >= -1e-12)
    assert cond.mu == pytest.approx(float(cond.phi(cond.rho)))


def test_inverse_phi_round_trip():
    for cond in (DiophantineCondition.power_law(0.4, 2.0),
                 DiophantineCondition.log_power(0.5, 1.0, 2.0),
                 DiophantineCondition.stretched_exp(0.5, 5.0, 0.1)):
        for y in (1e3, 1e6, 1e9):
            M = cond.inverse_phi(y)
            assert float(cond.phi(M)) == pytest.approx(y, rel=1e-9)


def test_condition_json_round_trip():
    c = DiophantineCondition.log_power(0.25, 1.5, 2.0)
    assert DiophantineCondition.from_dict(c.to_dict()) == c


def test_verify_condition_golden_power_law():
    m = verify_condition(golden_mean(40), 10**4, DiophantineCondition.power_law(0.38, 1.0))
    assert m.holds
    assert m.margin == pytest.approx((1 - GOLDEN) / 0.38, rel=1e-9)  # attained at n = 1


def test_verify_condition_golden_stretched():
    # eta = 1 is violated at n = 3: ||3 alpha|| = 0.1459 < exp(-sqrt 3) = 0.1769
    m = verify_condition(golden_mean(40), 10**3, DiophantineCondition.stretched_exp(1.0, 1.0, 0.5))
    assert m.n_min == 3
    assert m.margin == pytest.approx(torus_norm(3 * GOLDEN) * math.exp(math.sqrt(3)), rel=1e-9)
    assert not m.holds
    assert verify_condition(golden_mean(40), 10**3,
                            DiophantineCondition.stretched_exp(0.5, 1.0, 0.5)).holds


def test_verify_condition_single_term_flag():
    m = verify_condition(golden_mean(40), 1, DiophantineCondition.power_law(1.0, 1.0))
    assert m.margin == pytest.approx(1 - GOLDEN, rel=1e-12)
    assert not m.holds


def test_margin_monotone_in_N():
    p = golden_mean(40)
    c = DiophantineCondition.power_law(0.38, 1.0)
    ms = [verify_condition(p, N, c).margin for N in (1, 5, 50, 500, 5000)]
    assert all(b <= a for a, b in zip(ms, ms[1:]))


# test frequencies ----------------------------------------------------------

def test_build_diophantine_is_golden():
    p = build_test_frequency("diophantine", depth=25)
    assert set(p.cf) == {1}
    assert p.beta_estimate < 0.01


@pytest.mark.parametrize("kind, kw", [
    ("log_liouville", dict(kappa=1.0, gamma=2.0)),
    ("stretched_liouville", dict(kappa=1.0, gamma=0.1)),
    ("stretched_liouville", dict(kappa=5.0, gamma=0.1, eta=0.5, depth=7)),
])
def test_liouville_builders(kind, kw):
    p = build_test_frequency(kind, **kw)
    assert p.exact
    N = min(p.advertised_scale, 10**6)
    assert verify_condition(p, N).holds
    assert not verify_condition(p, N, DiophantineCondition.power_law(0.38, 1.0)).holds


def test_log_liouville_schedule_shape():
    p = build_test_frequency("log_liouville", kappa=1.0, gamma=2.0)
    q = p.denominators
    # q_{k+1} tracks exp((log q_k)^2) / eta once q_k > 1
    k = 4
    lhs = math.log(q[k + 1])
    rhs = math.log(q[k]) ** 2 - math.log(p.condition.eta)
    assert abs(lhs - rhs) < 1.0


def test_stretched_fixture_coefficients_frozen():
    p = build_test_frequency("stretched_liouville", kappa=5.0, gamma=0.1, eta=0.5, depth=7)
    assert list(p.cf[:5]) == [294, 44, 59, 678, 54526378]


def test_infeasible_schedule():
    with pytest.raises(ValueError):
        build_test_frequency("stretched_liouville", kappa=0.01, gamma=0.1, eta=1.0)


def test_unknown_kind():
    with pytest.raises(ValueError):
        build_test_frequency("nope")


def test_profile_json_round_trip():
    p = build_test_frequency("log_liouville", kappa=1.0, gamma=2.0)
    q = FrequencyProfile.from_json(p.to_json())
    assert q.cf == p.cf and q.condition == p.condition
    assert q.alpha == p.alpha
