"""Randomized mechanisms with selective verification: simulators, closed-form
rules, and property auditors for utilitarian voting and facility location."""

from .allocations import (Exponential, ExtremalityReport, PartialPower, Power,
                          RuleSpec, Uniform, approximation_ratio, evaluate_rule,
                          expected_welfare, exponential_allocation,
                          midr_extremality_check, participation_bound,
                          participation_margin, partial_power_allocation,
                          power_allocation)
from .analysis import (AuditReport, VerificationStats, empirical_distribution,
                       robustness_audit, tradeoff_sweep, truthful_weights,
                       truthfulness_audit)
from .core import (Allocation, RngStream, ValuationProfile, VerificationOracle,
                   WeightVector, exclude, kernel_backend, load_profile,
                   profile_from_json, profile_to_json, save_profile,
                   tv_distance, weight_vector)
from .facility import (FacilityResult, MetricInstance, brute_force_kcenter,
                       brute_force_kmedian, greedy_centers, instance_from_json,
                       instance_to_json, load_instance, max_cost,
                       proportional_empirical, proportional_expected_cost,
                       proportional_mechanism_distribution,
                       proportional_obliviousness_gap,
                       proportional_set_distribution, run_greedy,
                       run_proportional, save_instance, social_cost)
from .instances import (Constant, CpppSpec, Mutation, Scale, Swap, apply_liars,
                        coverage_valuation, cppp_profile, lower_bound_instance,
                        random_coverage_cppp, random_line_instance,
                        random_metric_instance, random_profile,
                        single_minded_instance)
from .mechanisms import (MechanismResult, bot_probabilities, run_exponential,
                         run_partial_power, run_power, run_rule_mechanism,
                         run_uniform, sample_exponential_term,
                         sample_power_term)

__version__ = "0.1.0"
