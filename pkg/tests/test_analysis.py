"""Auditors: empirical distributions, robustness/truthfulness audits, sweeps."""

import math

import numpy as np
import pytest

from verimech.allocations import (Exponential, PartialPower, Power, Uniform,
                                  evaluate_rule, participation_margin)
from verimech.analysis import (empirical_distribution, robustness_audit,
                               run_trials, tradeoff_sweep, truthful_weights,
                               truthfulness_audit)
from verimech.core import RngStream, ValuationProfile, tv_distance, weight_vector
from verimech.instances import Scale, apply_liars, random_profile


# ---------------------------------------------------------------------------
# empirical_distribution
# ---------------------------------------------------------------------------

def test_empirical_distribution_reproducible_and_exact_tiny_case():
    prof = ValuationProfile.truthful([[1.0, 1.0]])
    a1, _ = empirical_distribution(Uniform(), prof, 4, seed=123)
    a2, _ = empirical_distribution(Uniform(), prof, 4, seed=123)
    np.testing.assert_array_equal(a1.probs, a2.probs)
    assert a1.probs.sum() + a1.null_mass == pytest.approx(1.0)
    assert np.all(a1.probs * 4 == np.round(a1.probs * 4))  # counts of 4 trials


def test_empirical_tv_shrinks_with_trials():
    prof = random_profile(4, 5, RngStream(1))
    target = evaluate_rule(Power(2), weight_vector(prof))
    small = [tv_distance(empirical_distribution(Power(2), prof, 2000,
                                                seed=s)[0], target)
             for s in range(5)]
    large = [tv_distance(empirical_distribution(Power(2), prof, 32_000,
                                                seed=100 + s)[0], target)
             for s in range(5)]
    # 16x the trials should shrink the deviation by about 4x; allow slack
    assert np.median(large) < np.median(small) / 2


def test_mean_verified_bounded_by_tuple_length():
    prof = random_profile(6, 4, RngStream(2))
    for l in (1, 2, 5):
        _, stats = empirical_distribution(Power(l), prof, 20_000, seed=l)
        assert stats.max_verified <= l
        assert stats.mean_verified <= l


def test_trials_must_be_positive():
    prof = random_profile(2, 2, RngStream(3))
    with pytest.raises(ValueError):
        empirical_distribution(Power(1), prof, 0, seed=0)


# ---------------------------------------------------------------------------
# robustness audits
# ---------------------------------------------------------------------------

def test_robustness_zero_liars_is_extension_check():
    prof = random_profile(5, 4, RngStream(4))
    report = robustness_audit(Power(3), prof, trials=50_000, seed=1)
    assert report.passed and report.details["liars"] == 0
    np.testing.assert_array_equal(truthful_weights(prof), weight_vector(prof))


def test_robustness_with_scaling_liar():
    prof = apply_liars(random_profile(5, 4, RngStream(5)), [0], Scale(20.0))
    for spec in [Power(3), Exponential(0.5), PartialPower(2, 4)]:
        report = robustness_audit(spec, prof, trials=50_000, seed=2)
        assert report.passed, (spec, report.statistic)


def test_robustness_all_liars_degenerate_targets():
    prof = apply_liars(random_profile(3, 4, RngStream(6)), [0, 1, 2], Scale(4.0))
    assert robustness_audit(Power(2), prof, trials=30_000, seed=3).passed
    assert robustness_audit(PartialPower(1, 3), prof, trials=30_000, seed=4).passed


def test_broken_mechanism_fails_the_audit():
    # auditor power: a mechanism that never verifies leaks the liar's report
    base = random_profile(4, 4, RngStream(7))
    planted = apply_liars(base, [0], Scale(60.0))
    for spec in [Power(3), Exponential(0.4), PartialPower(2, 4)]:
        honest = robustness_audit(spec, planted, trials=50_000, seed=5)
        broken = robustness_audit(spec, planted, trials=50_000, seed=5,
                                  leak_reports=True)
        assert honest.passed
        assert not broken.passed, spec
        assert broken.witness is not None


def test_audit_reports_are_bit_deterministic():
    prof = apply_liars(random_profile(4, 3, RngStream(8)), [1], Scale(5.0))
    a = robustness_audit(Exponential(0.8), prof, trials=20_000, seed=6)
    b = robustness_audit(Exponential(0.8), prof, trials=20_000, seed=6)
    assert a.to_json() == b.to_json()


def test_parallel_equals_serial():
    prof = apply_liars(random_profile(5, 4, RngStream(9)), [2], Scale(8.0))
    serial = run_trials(PartialPower(1, 2), prof, 4000, seed=7, n_jobs=1)
    fanned = run_trials(PartialPower(1, 2), prof, 4000, seed=7, n_jobs=3)
    for a, b in zip(serial, fanned):
        np.testing.assert_array_equal(a, b)


# ---------------------------------------------------------------------------
# truthfulness audits
# ---------------------------------------------------------------------------

def test_truthfulness_exponential_full():
    prof = random_profile(4, 4, RngStream(10))
    report = truthfulness_audit(Exponential(0.6), prof, agent=1,
                                lie=Scale(10.0), trials=50_000, seed=8)
    assert report.passed
    assert report.statistic >= 1 - 3 * report.details["se_ratio"]


def test_truthfulness_power_worked_profile():
    # joining costs the agent a sliver of utility, but never more than the
    # guaranteed floor 2^(-1/2)
    prof = ValuationProfile.truthful([[1.0, 0.0], [0.75, 0.25]])
    report = truthfulness_audit(Power(1), prof, agent=1, lie=Scale(1e-9),
                                trials=100_000, seed=9)
    assert report.passed
    margin = participation_margin(Power(1), prof, 1)
    assert report.statistic == pytest.approx(margin, abs=0.02)  # ~0.9167
    assert report.statistic >= 2 ** -0.5


def test_truthfulness_rejects_noop_lie():
    prof = random_profile(3, 3, RngStream(11))
    with pytest.raises(ValueError):
        truthfulness_audit(Power(1), prof, agent=0,
                           lie=prof.truth[0].copy(), trials=100, seed=0)


def test_truthfulness_degenerate_zero_utilities():
    from verimech.instances import Constant

    prof = ValuationProfile.truthful([[0.0, 0.0], [0.0, 1.0]])
    report = truthfulness_audit(PartialPower(1, 2), prof, agent=0,
                                lie=Constant(3.0), trials=2000, seed=1)
    assert report.passed and report.statistic == math.inf


# ---------------------------------------------------------------------------
# tradeoff sweeps
# ---------------------------------------------------------------------------

def test_power_sweep_monotone_and_verification_column():
    prof = random_profile(6, 8, RngStream(12))
    rows = tradeoff_sweep("power", prof, [0, 2, 5, 9], trials=20_000, seed=10)
    analytic = [row["analytic_ratio"] for row in rows]
    assert analytic == sorted(analytic)
    for row, l in zip(rows, [0, 2, 5, 9]):
        assert row["max_verified"] <= l
        assert abs(row["measured_ratio"] - row["analytic_ratio"]) < 0.05


def test_exponential_sweep_additive_error():
    prof = random_profile(5, 6, RngStream(13))
    w = weight_vector(prof)
    rows = tradeoff_sweep("exponential", prof, [0.25, 0.5, 1.0],
                          trials=20_000, seed=11)
    for row, alpha in zip(rows, [0.25, 0.5, 1.0]):
        welfare = row["analytic_ratio"] * w.max()
        assert w.max() - welfare <= alpha * math.log(prof.m) + 1e-9


def test_partial_power_sweep_null_mass_at_least_reciprocal_r():
    prof = random_profile(5, 6, RngStream(14))
    rows = tradeoff_sweep("partial-power", prof, [(1, 2), (2, 4), (3, 6)],
                          trials=20_000, seed=12)
    for row, (l, r) in zip(rows, [(1, 2), (2, 4), (3, 6)]):
        assert row["null_mass"] >= 1 / r - 1e-12
        assert row["analytic_ratio"] >= row["analytic_bound"] - 1e-12


def test_sweep_rejects_unknown_family():
    prof = random_profile(2, 2, RngStream(15))
    with pytest.raises(ValueError):
        tradeoff_sweep("bogus", prof, [1], trials=10, seed=0)
