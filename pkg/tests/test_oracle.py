"""Discrete Laplace, exact output distributions and divergences."""

import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from dpcheck.errors import OracleError
from dpcheck.oracle import (
    TAIL, confirm_counterexample, denote_output_dist, dlap_cdf, dlap_pmf,
    eps_divergence, max_ratio, window,
)

from helpers import CORPUS_INPUTS, load

SAMPLINGS = {"alg1_buggy": 1, "alg1_safe": 1, "alg2_buggy": 6, "alg2_safe_top": 6,
             "alg2_safe_noised": 7, "alg3_buggy": 1}

inv_scales = st.sampled_from([Fraction(1, 4), Fraction(1, 2), Fraction(1), Fraction(2)])


@given(st.integers(-5, 5), inv_scales)
def test_pmf_normalized_within_window(mean, b):
    w = window(b)
    total = math.fsum(dlap_pmf(mean, b, z) for z in range(mean - w, mean + w + 1))
    assert 1 - TAIL <= total <= 1 + 1e-15


@given(st.integers(-5, 5), inv_scales, st.integers(-20, 20))
def test_cdf_matches_pmf(mean, b, z):
    lo = mean - window(b, 1e-17)
    direct = math.fsum(dlap_pmf(mean, b, y) for y in range(lo, z + 1))
    assert dlap_cdf(mean, b, z) == pytest.approx(direct, abs=1e-12)


@settings(max_examples=50, derandomize=True)
@given(st.integers(-4, 4), st.integers(-4, 4), st.integers(-4, 4), inv_scales)
def test_shifted_coupling_ratio(mu1, mu2, k, b):
    # X2 = X1 + k costs |k + mu1 - mu2| * b pointwise.
    bound = math.exp(abs(k + mu1 - mu2) * float(b)) + 1e-9
    for z in range(mu1 - 30, mu1 + 31):
        p1, p2 = dlap_pmf(mu1, b, z), dlap_pmf(mu2, b, z + k)
        assert p1 / p2 <= bound and p2 / p1 <= bound


@pytest.mark.parametrize("name", sorted(CORPUS_INPUTS))
def test_output_mass_normalized(name):
    d = denote_output_dist(load(name), CORPUS_INPUTS[name], Fraction(1))
    k = SAMPLINGS[name]
    assert d.tail_bound == pytest.approx(k * TAIL)
    assert 1 - k * TAIL <= d.weight <= 1


@given(st.floats(0, 3), st.floats(0, 3))
def test_divergence_monotone_in_eps(e1, e2):
    prog = load("alg1_buggy")
    mu1 = denote_output_dist(prog, {"q": 0}, Fraction(1))
    mu2 = denote_output_dist(prog, {"q": 2}, Fraction(1))
    lo, hi = sorted((e1, e2))
    assert eps_divergence(mu1, mu2, hi) <= eps_divergence(mu1, mu2, lo)


def test_single_sampling_fundamental_property():
    # Safe Laplace at eps: the coupling k = q2 - q1 costs exactly the budget.
    prog = load("alg1_safe")
    for q1, q2 in [(0, 2), (1, -1), (0, 1)]:
        mu1 = denote_output_dist(prog, {"q": q1}, Fraction(1))
        mu2 = denote_output_dist(prog, {"q": q2}, Fraction(1))
        assert eps_divergence(mu1, mu2, abs(q1 - q2) / 2) <= 1e-9


def test_buggy_laplace_ratio_is_e_squared():
    conf = confirm_counterexample(load("alg1_buggy"), {"q": 0}, {"q": 2}, Fraction(1))
    assert conf.confirmed
    assert conf.ratio == pytest.approx(math.exp(2), rel=1e-6)


def test_max_ratio_is_lower_bound():
    prog = load("alg1_buggy")
    mu1 = denote_output_dist(prog, {"q": 0}, Fraction(1))
    mu2 = denote_output_dist(prog, {"q": 2}, Fraction(1))
    r, _ = max_ratio(mu1, mu2)
    assert r <= math.exp(2) * (1 + 1e-9)


def test_oracle_rejects_non_adjacent_inputs():
    with pytest.raises(OracleError):
        confirm_counterexample(load("alg1_buggy"), {"q": 0}, {"q": 3}, Fraction(1))


def test_oracle_needs_concrete_eps():
    with pytest.raises(OracleError):
        denote_output_dist(load("alg1_safe"), {"q": 0}, None)


@settings(max_examples=100, derandomize=True)
@given(st.integers(-5, 5), st.integers(-5, 5), st.integers(-5, 5),
       st.fractions(Fraction(1, 4), 8))
def test_shifted_coupling_ratio_wide_range_relative(mu1, mu2, k, b):
    # Large bounds exceed double resolution, so compare relative to the bound.
    bound = math.exp(abs(k + mu1 - mu2) * float(b))
    for z in range(mu1 - 40, mu1 + 41):
        p1, p2 = dlap_pmf(mu1, b, z), dlap_pmf(mu2, b, z + k)
        if p1 > 0 and p2 > 0:
            assert p1 / p2 <= bound * (1 + 1e-12) and p2 / p1 <= bound * (1 + 1e-12)
