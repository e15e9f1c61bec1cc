import math
import warnings

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tohm.errors import CapabilityError, DomainError, FieldParseError, SolveError, ValidationError
from tohm.rft import (
    CHIBAR01,
    GAUSSIAN,
    ConditioningWarning,
    DensityFamily,
    LKCSolution,
    chisquare,
    density_matrix,
    ec_density,
    expected_ec,
    global_pvalue,
    read_lkc_record,
    sigma_significance,
    solve_lkc,
    write_lkc_record,
)

mp.mp.dps = 40


def mp_normal_sf(c):
    return mp.erfc(mp.mpf(c) / mp.sqrt(2)) / 2


def mp_gaussian_density(d, c):
    c = mp.mpf(c)
    if d == 0:
        return mp_normal_sf(c)
    # probabilists' Hermite from the physicists' one
    he = mp.hermite(d - 1, c / mp.sqrt(2)) * mp.mpf(2) ** (-mp.mpf(d - 1) / 2)
    return he * mp.exp(-c * c / 2) / (2 * mp.pi) ** (mp.mpf(d + 1) / 2)


def mp_chisq_density(s, d, c):
    """General double-sum form of the chi-square EC density."""
    c = mp.mpf(c)
    if d == 0:
        return mp.gammainc(mp.mpf(s) / 2, c / 2, mp.inf, regularized=True)
    base = c ** (mp.mpf(s - d) / 2) * mp.exp(-c / 2) / (
        (2 * mp.pi) ** (mp.mpf(d) / 2) * mp.gamma(mp.mpf(s) / 2) * mp.mpf(2) ** (mp.mpf(s - 2) / 2)
    )
    total = mp.mpf(0)
    for j in range((d - 1) // 2 + 1):
        for k in range(d - 1 - 2 * j + 1):
            # binomial(s - 1, m) vanishes for m > s - 1, which encodes 1{s >= d - 2j - k}
            if d - 1 - 2 * j - k <= s - 1:
                total += (
                    mp.binomial(s - 1, d - 1 - 2 * j - k)
                    * (-1) ** (d - 1 + j + k)
                    * mp.factorial(d - 1)
                    / (mp.factorial(j) * mp.factorial(k) * 2**j)
                    * c ** (j + k)
                )
    return base * total


def close(a, b, rel=1e-12, abs_=1e-300):
    return abs(a - float(b)) <= max(rel * abs(float(b)), abs_)


def test_density_examples():
    assert ec_density(GAUSSIAN, 1, 0.0) == pytest.approx(1 / (2 * math.pi), rel=1e-15)
    assert ec_density(GAUSSIAN, 0, 1.645) == pytest.approx(0.049985, abs=5e-7)
    assert ec_density(CHIBAR01, 0, 4.0) == pytest.approx(0.022750, abs=5e-7)


@pytest.mark.parametrize("d", range(6))
@pytest.mark.parametrize("c", [-3.0, -0.4, 0.0, 1.0, 2.5, 6.0, 20.0])
def test_gaussian_against_mpmath(d, c):
    assert close(ec_density(GAUSSIAN, d, c), mp_gaussian_density(d, c), abs_=1e-16)


@pytest.mark.parametrize("s", [1, 2, 3, 4, 7])
@pytest.mark.parametrize("d", range(4))
@pytest.mark.parametrize("c", [0.05, 0.7, 1.0, 3.0, 8.0, 24.0, 60.0])
def test_chisquare_against_general_formula(s, d, c):
    ref = mp_chisq_density(s, d, c)
    got = ec_density(chisquare(s), d, c)
    assert close(got, ref, rel=1e-11, abs_=1e-16)


@pytest.mark.parametrize("d", range(4))
@pytest.mark.parametrize("c", [0.3, 2.0, 9.0, 30.0])
def test_chisquare_one_is_folded_gaussian(d, c):
    assert ec_density(chisquare(1), d, c) == pytest.approx(2 * ec_density(GAUSSIAN, d, math.sqrt(c)), rel=1e-12)


@pytest.mark.parametrize("d", range(4))
def test_chibar_is_half_chisquare_one(d):
    for c in (0.1, 1.0, 8.0, 24.0):
        assert ec_density(CHIBAR01, d, c) == 0.5 * ec_density(chisquare(1), d, c)


def test_marginal_tails_against_mpmath():
    for c in np.linspace(0.01, 60, 25):
        assert close(ec_density(chisquare(3), 0, c), mp_chisq_density(3, 0, c))
        assert close(ec_density(CHIBAR01, 0, c), mp_chisq_density(1, 0, c) / 2)
    for c in np.linspace(-8, 30, 25):
        assert close(ec_density(GAUSSIAN, 0, c), mp_normal_sf(c))


def test_capability_and_domain_errors():
    with pytest.raises(CapabilityError, match="0..3"):
        ec_density(CHIBAR01, 4, 1.0)
    with pytest.raises(CapabilityError):
        ec_density(GAUSSIAN, 6, 1.0)
    with pytest.raises(DomainError):
        ec_density(CHIBAR01, 1, -1.0)
    with pytest.raises(DomainError):
        ec_density(chisquare(2), 0, 0.0)


@pytest.mark.parametrize(
    "text, fam", [("gaussian", GAUSSIAN), ("chibar01", CHIBAR01), ("chisquare:4", chisquare(4))]
)
def test_family_parse(text, fam):
    assert DensityFamily.parse(text) == fam
    assert DensityFamily.parse(fam.name) == fam


@pytest.mark.parametrize("bad", ["chisquare", "chisquare:0", "poisson"])
def test_family_parse_errors(bad):
    with pytest.raises(ValidationError):
        DensityFamily.parse(bad)


def test_expected_ec_examples():
    assert expected_ec(GAUSSIAN, 2.0, [0, 0], 1.0) == pytest.approx(2 * float(mp_normal_sf(1)), rel=1e-14)
    ref = mp_normal_sf(2) + 10 * mp.exp(-2) / (2 * mp.pi)
    assert close(expected_ec(GAUSSIAN, 1, [10], 2), ref)
    L1, L2, c = 3.5, 12.0, 5.0
    mc = mp.mpf(c)
    ref = (
        mp.sqrt(mc) * mp.exp(-mc / 2) / (2 * mp.pi) ** 1.5 * L2
        + mp.exp(-mc / 2) / (2 * mp.pi) * L1
        + mp_chisq_density(1, 0, c) / 2
    )
    assert close(expected_ec(CHIBAR01, 1, [L1, L2], c), ref)


def test_chibar_l0_term_is_half_chisquare():
    for c in (0.5, 3.0, 12.0):
        assert expected_ec(CHIBAR01, 1, [0, 0], c) == 0.5 * expected_ec(chisquare(1), 1, [0, 0], c)


@settings(max_examples=50, deadline=None)
@given(
    st.floats(-3, 6),
    st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3),
    st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3),
    st.floats(-5, 5),
)
def test_pvalue_is_linear_in_lkcs(c, a, b, t):
    def ev(L):
        return expected_ec(GAUSSIAN, L[0], L[1:], c)

    lhs = ev(np.array(a) + t * np.array(b))
    rhs = ev(a) + t * ev(b)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9 * (1 + np.abs(a).sum() + abs(t) * np.abs(b).sum()))


def test_solve_round_trip_example():
    th = (2.0, 5.0)
    b = [expected_ec(CHIBAR01, 1, [7, 3], c) for c in th]
    sol = solve_lkc(CHIBAR01, 1, th, b)
    np.testing.assert_allclose(sol.lkcs, [7, 3], rtol=1e-12)


def test_duplicate_thresholds_rejected():
    with pytest.raises(ValidationError):
        solve_lkc(CHIBAR01, 1, [2.0, 2.0], [1.0, 1.0])


def test_solve_is_exactly_linear_in_estimates():
    th = [1.0, 8.0]
    b = np.array([3.0, 0.4])
    se = np.array([0.3, 0.05])
    base = solve_lkc(CHIBAR01, 1, th, b, se)
    Minv = np.linalg.inv(density_matrix(CHIBAR01, th))
    for k in range(2):
        delta = 1e-3
        bump = b.copy()
        bump[k] += delta
        moved = solve_lkc(CHIBAR01, 1, th, bump, se)
        np.testing.assert_allclose(moved.lkcs - base.lkcs, Minv[:, k] * delta, rtol=1e-7, atol=1e-12)
    np.testing.assert_allclose(base.covariance, Minv @ np.diag(se**2) @ Minv.T, rtol=1e-10)


def test_conditioning_warning_and_failure():
    # nearly coincident thresholds make the system ill-conditioned
    with pytest.warns(ConditioningWarning):
        solve_lkc(GAUSSIAN, 1, [1.0, 1.0 + 1e-9], [0.1, 0.1], cond_warn=1e3)
    with pytest.raises(SolveError) as err:
        solve_lkc(GAUSSIAN, 1, [1.0, 1.0 + 1e-15], [0.1, 0.1])
    assert err.value.condition > 1e13


def test_no_warning_for_well_posed_system():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        solve_lkc(CHIBAR01, 1, [1.0, 8.0], [3.0, 0.5])


@settings(max_examples=100, deadline=None)
@given(
    st.sampled_from([GAUSSIAN, CHIBAR01, chisquare(1), chisquare(2), chisquare(5)]),
    st.integers(1, 3),
    st.data(),
)
def test_solve_inverts_expected_ec(family, D, data):
    lo = -2.0 if family == GAUSSIAN else 0.2
    th = sorted(data.draw(st.lists(st.floats(lo, 12.0), min_size=D, max_size=D, unique=True)))
    L = data.draw(st.lists(st.floats(-500, 500), min_size=D, max_size=D))
    M = density_matrix(family, th)
    scaled = M / np.abs(M).max(axis=1, keepdims=True)
    if np.linalg.cond(scaled) > 1e6:
        return
    b = [expected_ec(family, 1.0, L, c) for c in th]
    sol = solve_lkc(family, 1.0, th, b)
    np.testing.assert_allclose(sol.lkcs, L, rtol=1e-6, atol=1e-6 * (1 + max(abs(x) for x in L)))


def test_sigma_examples():
    assert sigma_significance(1.092e-26) == pytest.approx(10.629, abs=5e-4)
    assert sigma_significance(0.5) == 0.0
    assert sigma_significance(1.3499e-3) == pytest.approx(3.000, abs=1e-3)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 2.0, float("nan")])
def test_sigma_domain(p):
    with pytest.raises(DomainError):
        sigma_significance(p)


def test_sigma_round_trip_against_mpmath():
    for z in np.linspace(0, 11, 45):
        p = float(mp_normal_sf(z))
        assert sigma_significance(p) == pytest.approx(z, abs=1e-6)


def test_sigma_tail_accuracy():
    # |error| <= 1e-3 down to p = 1e-30, mpmath inverse as reference
    for p in [1e-30, 1e-20, 1e-12, 1e-5, 0.02]:
        ref = -mp.sqrt(2) * mp.erfinv(2 * mp.mpf(p) - 1)
        assert abs(sigma_significance(p) - float(ref)) < 1e-9


def _solution(family, L0, lkcs, cov=None):
    D = len(lkcs)
    cov = np.zeros((D, D)) if cov is None else np.asarray(cov)
    return LKCSolution(family, L0, np.arange(1.0, D + 1), np.asarray(lkcs, float), cov)


def test_global_pvalue_null_lkcs():
    rep = global_pvalue(3.0, _solution(GAUSSIAN, 1.0, [0.0, 0.0]))
    assert rep.pvalue == pytest.approx(1.3499e-3, rel=1e-4)
    assert "3.000σ" in rep.format()


def test_global_pvalue_example_one_lkcs():
    sol = _solution(CHIBAR01, 1.0, [-244.053, 644.244])
    mc = mp.mpf(24)
    ref = (
        mp.sqrt(mc) * mp.exp(-mc / 2) / (2 * mp.pi) ** 1.5 * mp.mpf("644.244")
        - mp.exp(-mc / 2) / (2 * mp.pi) * mp.mpf("244.053")
        + mp.erfc(mp.sqrt(mc / 2)) / 2
    )
    rep = global_pvalue(24.0, sol)
    assert close(rep.raw_pvalue, ref, rel=1e-12)
    assert global_pvalue(30.0, sol).raw_pvalue < rep.raw_pvalue


def test_global_pvalue_error_propagation():
    cov = np.array([[4.0, 1.0], [1.0, 9.0]])
    sol = _solution(CHIBAR01, 1.0, [5.0, 20.0], cov)
    rep = global_pvalue(10.0, sol)
    g = np.array([ec_density(CHIBAR01, 1, 10.0), ec_density(CHIBAR01, 2, 10.0)])
    assert rep.se == pytest.approx(math.sqrt(g @ cov @ g), rel=1e-12)
    lo, hi = rep.mc_interval
    assert lo == pytest.approx(rep.raw_pvalue - rep.se) and hi == pytest.approx(rep.raw_pvalue + rep.se)
    assert rep.sigma_interval[0] <= rep.sigma <= rep.sigma_interval[1]


def test_pvalue_clamped_but_raw_kept():
    rep = global_pvalue(0.5, _solution(CHIBAR01, 1.0, [80.0, 300.0]))
    assert rep.raw_pvalue > 1 and rep.pvalue == 1.0
    assert "raw" in rep.format()


def test_family_mismatch():
    with pytest.raises(ValidationError):
        global_pvalue(3.0, _solution(CHIBAR01, 1.0, [1.0]), family=GAUSSIAN)


def test_lkc_record_round_trip(tmp_path):
    sol = solve_lkc(CHIBAR01, 1.0, [1.0, 8.0], [3.1, 0.45], [0.2, 0.03])
    p = tmp_path / "lkc.tsv"
    write_lkc_record(sol, p)
    back = read_lkc_record(p)
    assert back.family == sol.family and back.L0 == sol.L0
    np.testing.assert_array_equal(back.lkcs, sol.lkcs)
    np.testing.assert_array_equal(back.covariance, sol.covariance)
    np.testing.assert_array_equal(back.thresholds, sol.thresholds)


def test_malformed_lkc_record():
    with pytest.raises(FieldParseError):
        LKCSolution.from_tsv("# tohm-lkc v1\nfamily\tpoisson\n")
    with pytest.raises(FieldParseError):
        LKCSolution.from_tsv("garbage")
