"""Paired t-test machinery checked against scipy and mpmath."""

import mpmath
import numpy as np
import pytest
import scipy.stats
from hypothesis import given
from hypothesis import strategies as st

from maskedvae.stats import (
    paired_t_test,
    paired_t_test_one_sided,
    regularized_incomplete_beta,
    significance_stars,
    student_t_two_sided_p,
)

mpmath.mp.dps = 50


@pytest.mark.parametrize("a,b", [(0.5, 0.5), (2.0, 0.5), (5.0, 3.0), (0.5, 9.5), (12.0, 0.5)])
@pytest.mark.parametrize("x", [0.001, 0.1, 0.37, 0.5, 0.82, 0.999])
def test_incomplete_beta_matches_mpmath(a, b, x):
    ours = regularized_incomplete_beta(a, b, x)
    ref = float(mpmath.betainc(a, b, 0, x, regularized=True))
    assert ours == pytest.approx(ref, abs=1e-12, rel=1e-12)


def test_incomplete_beta_edges_and_domain():
    assert regularized_incomplete_beta(2.0, 3.0, 0.0) == 0.0
    assert regularized_incomplete_beta(2.0, 3.0, 1.0) == 1.0
    with pytest.raises(ValueError):
        regularized_incomplete_beta(2.0, 3.0, -0.1)
    with pytest.raises(ValueError):
        regularized_incomplete_beta(2.0, 3.0, 1.1)
    with pytest.raises(ValueError):
        regularized_incomplete_beta(0.0, 3.0, 0.5)


@pytest.mark.parametrize("t", [-6.5, -2.0, -0.3, 0.0, 0.7, 1.96, 4.4, 11.0])
@pytest.mark.parametrize("dof", [1, 2, 5, 30, 199])
def test_student_t_p_matches_scipy(t, dof):
    ours = student_t_two_sided_p(t, dof)
    ref = 2.0 * scipy.stats.t.sf(abs(t), dof)
    assert ours == pytest.approx(ref, abs=1e-9)


def test_paired_t_matches_scipy():
    gen = np.random.default_rng(3)
    for n in (3, 8, 40):
        a = gen.normal(0.0, 1.0, size=n)
        b = a + gen.normal(0.1, 0.5, size=n)
        t, p, dof = paired_t_test(a, b)
        ref = scipy.stats.ttest_rel(a, b)
        assert dof == n - 1
        assert t == pytest.approx(ref.statistic, abs=1e-9)
        assert p == pytest.approx(ref.pvalue, abs=1e-9)


def test_paired_t_one_sided_matches_scipy():
    gen = np.random.default_rng(4)
    a = gen.normal(0.4, 1.0, size=12)
    b = gen.normal(0.0, 1.0, size=12)
    _, p, dof = paired_t_test_one_sided(a, b)
    ref = scipy.stats.ttest_rel(a, b, alternative="greater")
    assert dof == 11
    assert p == pytest.approx(ref.pvalue, abs=1e-9)
    # and with the means flipped, the one-sided p lands above one half
    _, p_flip, _ = paired_t_test_one_sided(b, a)
    ref_flip = scipy.stats.ttest_rel(b, a, alternative="greater")
    assert p_flip == pytest.approx(ref_flip.pvalue, abs=1e-9)
    assert p_flip > 0.5


def test_paired_t_antisymmetry():
    gen = np.random.default_rng(5)
    a = gen.normal(size=9)
    b = gen.normal(size=9)
    t_ab, p_ab, _ = paired_t_test(a, b)
    t_ba, p_ba, _ = paired_t_test(b, a)
    assert t_ab == pytest.approx(-t_ba, rel=1e-12)
    assert p_ab == pytest.approx(p_ba, rel=1e-12)


@given(
    st.integers(min_value=0, max_value=2**31),
    st.floats(min_value=-5.0, max_value=5.0, allow_nan=False),
    st.floats(min_value=0.1, max_value=10.0, allow_nan=False),
)
def test_paired_t_shift_scale_invariance(seed, shift, scale):
    # adding the same constant to both sides, or rescaling both, keeps
    # the statistic (differences shift/scale together)
    gen = np.random.default_rng(seed)
    a = gen.normal(size=6)
    b = a + gen.normal(0.3, 1.0, size=6)
    t0, p0, _ = paired_t_test(a, b)
    t1, p1, _ = paired_t_test(a + shift, b + shift)
    assert t1 == pytest.approx(t0, rel=1e-9, abs=1e-9)
    t2, p2, _ = paired_t_test(a * scale, b * scale)
    assert t2 == pytest.approx(t0, rel=1e-9, abs=1e-9)
    assert p1 == pytest.approx(p0, rel=1e-9, abs=1e-12)
    assert p2 == pytest.approx(p0, rel=1e-9, abs=1e-12)


def test_paired_t_validation():
    with pytest.raises(ValueError, match="two pairs"):
        paired_t_test([1.0], [2.0])
    with pytest.raises(ValueError, match="length"):
        paired_t_test([1.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError, match="degenerate"):
        paired_t_test([1.0, 2.0, 3.0], [2.0, 3.0, 4.0])


def test_null_calibration():
    # under exchangeable pairs the p-value is uniform: the fraction below
    # 0.1 over many null draws should sit near 0.1
    gen = np.random.default_rng(12)
    hits = 0
    trials = 2000
    for _ in range(trials):
        a = gen.normal(size=8)
        b = gen.normal(size=8)
        _, p, _ = paired_t_test(a, b)
        hits += p < 0.1
    assert abs(hits / trials - 0.1) < 0.025


def test_significance_stars():
    assert significance_stars(0.5) == ""
    assert significance_stars(0.001) == ""
    assert significance_stars(0.0009) == "*"
    assert significance_stars(0.0) == "*"
    with pytest.raises(ValueError):
        significance_stars(1.5)
    with pytest.raises(ValueError):
        significance_stars(-0.1)
