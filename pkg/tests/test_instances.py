"""Generators: hard families, liar mutations, public-project profiles."""

import math

import numpy as np
import pytest
from scipy import stats as sps

from verimech.allocations import Power, Uniform, approximation_ratio, evaluate_rule
from verimech.core import RngStream, weight_vector
from verimech.instances import (Constant, CpppSpec, Scale, Swap, apply_liars,
                                coverage_valuation, cppp_profile,
                                default_lower_bound_params,
                                lower_bound_instance, random_coverage_cppp,
                                random_line_instance, random_profile,
                                single_minded_instance, validate_cppp_spec)


# ---------------------------------------------------------------------------
# geometric-interest family
# ---------------------------------------------------------------------------

def _group_one_counts(profile, m, nu):
    counts = []
    for g in range(m):
        block = profile.reported[g * nu:(g + 1) * nu, g]
        counts.append(int((block == 1.0).sum()))
    return counts


def test_lower_bound_block_structure():
    m, nu, delta = 4, 6, 1e-6
    prof = lower_bound_instance(m, nu, delta, RngStream(1))
    assert prof.n == m * nu and prof.m == m
    for g in range(m):
        block = prof.reported[g * nu:(g + 1) * nu]
        off = np.delete(block, g, axis=1)
        assert np.all(off == 0.0)
        assert np.all(np.isin(block[:, g], [1.0, delta]))
        ones = block[:, g] == 1.0
        # the interested agents come first within the group
        assert np.all(np.diff(ones.astype(int)) <= 0)


def test_lower_bound_interest_count_is_truncated_geometric():
    m, nu = 4, 12
    rng = RngStream(2)
    counts = []
    for case in range(2500):
        counts.extend(_group_one_counts(
            lower_bound_instance(m, nu, 1e-6, rng), m, nu))
    counts = np.array(counts)
    # Pr[K = 0] = 1/2; Pr[K >= 3] = 1/8
    assert (counts == 0).mean() == pytest.approx(0.5, abs=0.02)
    assert (counts >= 3).mean() == pytest.approx(1 / 8, abs=0.02)
    pmf = np.array([2.0 ** -(k + 1) for k in range(6)])
    observed = np.array([(counts == k).sum() for k in range(6)])
    observed = np.append(observed, (counts >= 6).sum())
    expected = np.append(pmf, 2.0 ** -6) * counts.shape[0]
    assert sps.chisquare(observed, expected).pvalue > 1e-4


def test_lower_bound_parameter_defaults_and_validation():
    nu, delta = default_lower_bound_params(8)
    assert nu == 30 and delta == 1e-6
    with pytest.raises(ValueError):
        lower_bound_instance(1, 5, 1e-6, RngStream(0))
    with pytest.raises(ValueError):
        lower_bound_instance(4, 5, 1.5, RngStream(0))


def test_lower_bound_deterministic():
    a = lower_bound_instance(4, 6, 1e-6, RngStream(9, 3))
    b = lower_bound_instance(4, 6, 1e-6, RngStream(9, 3))
    np.testing.assert_array_equal(a.reported, b.reported)


# ---------------------------------------------------------------------------
# single-minded family
# ---------------------------------------------------------------------------

def test_single_minded_identity():
    prof = single_minded_instance(3)
    np.testing.assert_array_equal(prof.reported, np.eye(3))


def test_single_minded_welfare_numbers():
    prof = single_minded_instance(2, big_value=10.0)
    w = weight_vector(prof)
    assert w.max() == 10.0
    uniform = evaluate_rule(Uniform(), w)
    assert float(w @ uniform.probs) == pytest.approx(5.5)


def test_single_minded_uniform_ratio_tends_to_reciprocal_m():
    for m in (3, 6):
        prof = single_minded_instance(m, big_value=1e9)
        w = weight_vector(prof)
        ratio = approximation_ratio(w, evaluate_rule(Uniform(), w))
        assert ratio == pytest.approx(1 / m, abs=1e-8)


# ---------------------------------------------------------------------------
# random profiles and liar mutations
# ---------------------------------------------------------------------------

def test_random_profile_flavors():
    rng = RngStream(3)
    uni = random_profile(6, 5, rng)
    assert np.all((uni.reported >= 0) & (uni.reported < 1))
    sparse = random_profile(40, 5, rng, kind="sparse", density=0.25)
    frac = (sparse.reported > 0).mean()
    assert frac == pytest.approx(0.25, abs=0.08)
    spiked = random_profile(6, 5, rng, kind="spiked")
    w = weight_vector(spiked)
    assert w.max() / np.delete(w, w.argmax()).max() > 1.5
    with pytest.raises(ValueError):
        random_profile(2, 2, rng, kind="bogus")


def test_apply_liars_scale_and_swap():
    base = random_profile(4, 3, RngStream(4))
    lied = apply_liars(base, [1, 3], Scale(2.0))
    np.testing.assert_array_equal(lied.truth, base.truth)
    np.testing.assert_array_equal(lied.truthful_mask, [True, False, True, False])
    swapped = apply_liars(base, [0], Swap(0, 2))
    assert swapped.reported[0, 0] == base.truth[0, 2]
    assert swapped.reported[0, 2] == base.truth[0, 0]
    flat = apply_liars(base, [2], Constant(5.0))
    assert np.all(flat.reported[2] == 5.0)


def test_apply_liars_rejects_noop_mutations():
    base = random_profile(3, 3, RngStream(5))
    with pytest.raises(ValueError):
        apply_liars(base, [0], Scale(1.0))
    symmetric = random_profile(1, 2, RngStream(6))
    row = symmetric.reported.copy()
    row[0, 1] = row[0, 0]
    from verimech.core import ValuationProfile
    sym = ValuationProfile.truthful(row)
    with pytest.raises(ValueError):
        apply_liars(sym, [0], Swap(0, 1))


# ---------------------------------------------------------------------------
# public-project profiles
# ---------------------------------------------------------------------------

def test_cppp_profile_enumerates_subsets_lexicographically():
    spec = CpppSpec(4, 2, (coverage_valuation([0]),))
    profile, labels = cppp_profile(spec)
    assert labels == [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    assert profile.m == 6
    np.testing.assert_array_equal(profile.reported[0], [1, 1, 1, 0, 0, 0])


def test_cppp_columns_match_value_oracles():
    rng = RngStream(7)
    spec = random_coverage_cppp(5, 2, 4, rng)
    profile, labels = cppp_profile(spec)
    for j, subset in enumerate(labels):
        recomputed = sum(oracle(subset) for oracle in spec.value_oracles)
        assert weight_vector(profile)[j] == pytest.approx(recomputed)


def test_coverage_valuations_are_normalized_and_monotone():
    spec = random_coverage_cppp(6, 3, 5, RngStream(8))
    validate_cppp_spec(spec, RngStream(9))


def test_validate_cppp_rejects_broken_oracles():
    def shrinking(subset):
        return -float(len(subset))

    with pytest.raises(ValueError):
        validate_cppp_spec(CpppSpec(3, 1, (shrinking,)), RngStream(10))


def test_cppp_outcome_cap():
    many = CpppSpec(30, 15, (coverage_valuation([0]),))
    with pytest.raises(ValueError):
        cppp_profile(many)


def test_power_hits_target_ratio_on_cppp_profiles():
    # exponent ceil(k ln r / eps) pushes the welfare ratio above 1 - eps
    # while verifying at most that many agents
    eps = 0.3
    rng = RngStream(11)
    spec = random_coverage_cppp(4, 2, 6, rng)
    profile, _ = cppp_profile(spec)
    w = weight_vector(profile)
    l = math.ceil(spec.k * math.log(spec.r) / eps)
    ratio = approximation_ratio(w, evaluate_rule(Power(l), w))
    assert ratio >= 1 - eps
    assert profile.m ** (-1 / (l + 1)) >= 1 - eps


# ---------------------------------------------------------------------------
# metric instance generators
# ---------------------------------------------------------------------------

def test_generators_deterministic():
    a = random_profile(5, 4, RngStream(12, 1))
    b = random_profile(5, 4, RngStream(12, 1))
    np.testing.assert_array_equal(a.reported, b.reported)
    ia = random_line_instance(4, 2, RngStream(13))
    ib = random_line_instance(4, 2, RngStream(13))
    np.testing.assert_array_equal(ia.dist, ib.dist)
    np.testing.assert_array_equal(ia.agents_true, ib.agents_true)


def test_line_instance_agents_distinct():
    inst = random_line_instance(5, 2, RngStream(14), n_points=5)
    assert len(set(inst.agents_true.tolist())) == 5
