"""Statistical and analytic auditors for the mechanisms' claimed properties.

Robustness audits compare Monte Carlo output frequencies against the
closed-form rule evaluated on the truthful agents' weights; truthfulness
audits compare an agent's measured utility when truthful versus lying.  Both
routes are independent implementations (batch sampling kernels vs vectorized
closed forms), so agreement is evidence rather than tautology.  Every audit
is a deterministic function of its inputs and seed.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .allocations import (Exponential, PartialPower, Power, RuleSpec, Uniform,
                          approximation_ratio, evaluate_rule, expected_welfare,
                          participation_bound)
from .core import Allocation, ValuationProfile, tv_distance

_MASK64 = (1 << 64) - 1

DEFAULT_TV_THRESHOLD = 0.02  # ~3x the expected sampling TV at 2e5 trials, m <= 8
DEFAULT_TRIALS = 200_000


def _u64(x: int) -> np.uint64:
    return np.uint64(int(x) & _MASK64)


def truthful_weights(profile: ValuationProfile) -> np.ndarray:
    """Per-outcome totals over the truthful agents' true rows."""
    mask = profile.truthful_mask
    if not mask.any():
        return np.zeros(profile.m)
    return profile.truth[mask].sum(axis=0)


# ---------------------------------------------------------------------------
# Batch simulation
# ---------------------------------------------------------------------------

def _batch_trials(spec: RuleSpec, reported: np.ndarray, truthful: np.ndarray,
                  trials: int, seed: int, stream_base: int):
    """Per-trial records (outcomes, bots, depths, nvs, ncs); trial t draws
    from stream stream_base + t regardless of chunking."""
    seed_u = _u64(seed)
    base_u = _u64(stream_base)
    if isinstance(spec, Uniform):
        outcomes = _kernels.uniform_batch(reported.shape[1], seed_u, base_u, trials)
        zeros = np.zeros(trials, dtype=np.int64)
        return outcomes, zeros, zeros, zeros, zeros
    if isinstance(spec, Power):
        outcomes, depths, nvs, ncs = _kernels.power_batch(
            reported, truthful, spec.l, seed_u, base_u, trials)
        return outcomes, np.zeros(trials, dtype=np.int64), depths, nvs, ncs
    if isinstance(spec, Exponential):
        outcomes, depths, nvs, ncs = _kernels.exponential_batch(
            reported, truthful, spec.alpha, seed_u, base_u, trials)
        return outcomes, np.zeros(trials, dtype=np.int64), depths, nvs, ncs
    if isinstance(spec, PartialPower):
        outcomes, bots, nvs, ncs = _kernels.partial_power_batch(
            reported, truthful, spec.l, spec.r, seed_u, base_u, trials)
        return outcomes, bots, np.zeros(trials, dtype=np.int64), nvs, ncs
    raise TypeError(f"unknown rule spec: {spec!r}")


def _batch_chunk(args):
    spec, reported, truthful, trials, seed, stream_base = args
    return _batch_trials(spec, reported, truthful, trials, seed, stream_base)


def run_trials(spec: RuleSpec, profile: ValuationProfile, trials: int,
               seed: int, stream_base: int = 0, n_jobs: int = 1,
               truthful_override: np.ndarray | None = None):
    """Batch mechanism runs; optionally fanned over processes (results are
    identical to the serial run because streams are keyed by trial index)."""
    truthful = (profile.truthful_mask if truthful_override is None
                else np.asarray(truthful_override, dtype=bool))
    if n_jobs <= 1 or trials < 2 * n_jobs:
        return _batch_trials(spec, profile.reported, truthful, trials,
                             seed, stream_base)
    chunk = (trials + n_jobs - 1) // n_jobs
    jobs = []
    done = 0
    while done < trials:
        count = min(chunk, trials - done)
        jobs.append((spec, profile.reported, truthful, count, seed,
                     stream_base + done))
        done += count
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        parts = list(pool.map(_batch_chunk, jobs))
    return tuple(np.concatenate([part[i] for part in parts]) for i in range(5))


@dataclass(frozen=True)
class VerificationStats:
    """Distinct-verified counts split by path (the liar-detected branch
    verifies everyone, so it is reported separately)."""

    trials: int
    mean_verified: float
    max_verified: int
    mean_caught: float
    mean_depth: float
    max_depth: int
    bot_trials: int
    mean_verified_clean: float
    max_verified_clean: int
    mean_verified_bot: float
    max_verified_bot: int

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _stats(bots, depths, nvs, ncs) -> VerificationStats:
    trials = nvs.shape[0]
    clean = bots == 0
    bot = ~clean

    def mean_max(mask):
        if not mask.any():
            return 0.0, 0
        vals = nvs[mask]
        return float(vals.mean()), int(vals.max())

    mean_clean, max_clean = mean_max(clean)
    mean_bot, max_bot = mean_max(bot)
    return VerificationStats(
        trials=int(trials),
        mean_verified=float(nvs.mean()),
        max_verified=int(nvs.max()),
        mean_caught=float(ncs.mean()),
        mean_depth=float(depths.mean()),
        max_depth=int(depths.max()),
        bot_trials=int(bot.sum()),
        mean_verified_clean=mean_clean,
        max_verified_clean=max_clean,
        mean_verified_bot=mean_bot,
        max_verified_bot=max_bot,
    )


def empirical_distribution(spec: RuleSpec, profile: ValuationProfile,
                           trials: int, seed: int, stream_base: int = 0,
                           n_jobs: int = 1,
                           truthful_override: np.ndarray | None = None,
                           ) -> tuple[Allocation, VerificationStats]:
    """Outcome frequency vector (branch-resolved outcomes counted at their
    resolved index, null mass explicit) plus verification statistics."""
    if trials < 1:
        raise ValueError("need at least one trial")
    outcomes, bots, depths, nvs, ncs = run_trials(
        spec, profile, trials, seed, stream_base, n_jobs, truthful_override)
    m = profile.m
    counts = np.bincount(outcomes[outcomes >= 0], minlength=m)
    null = int((outcomes < 0).sum())
    alloc = Allocation(counts / trials, null / trials)
    return alloc, _stats(bots, depths, nvs, ncs)


# ---------------------------------------------------------------------------
# Audits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AuditReport:
    kind: str
    statistic: float
    threshold: float
    trials: int
    passed: bool
    witness: dict | None = None
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "statistic": self.statistic,
            "threshold": self.threshold,
            "trials": self.trials,
            "pass": self.passed,
            "witness": self.witness,
            "details": self.details,
        }


def robustness_audit(spec: RuleSpec, profile: ValuationProfile,
                     trials: int = DEFAULT_TRIALS, seed: int = 0,
                     threshold: float = DEFAULT_TV_THRESHOLD,
                     stream_base: int = 0, n_jobs: int = 1,
                     leak_reports: bool = False) -> AuditReport:
    """Total variation between the simulated output law and the closed-form
    rule on the truthful agents' weights.

    With zero liars this reduces to the extension check (mechanism equals
    rule).  ``leak_reports=True`` is the auditor's power control: it runs a
    deliberately broken variant that never catches anyone, so misreports
    leak into the outcome law and a planted liar must make the audit fail.
    """
    override = np.ones(profile.n, dtype=bool) if leak_reports else None
    empirical, stats = empirical_distribution(
        spec, profile, trials, seed, stream_base, n_jobs,
        truthful_override=override)
    target = evaluate_rule(spec, truthful_weights(profile))
    statistic = tv_distance(empirical, target)
    passed = statistic <= threshold
    witness = None
    if not passed:
        witness = {"empirical": empirical.to_json(), "target": target.to_json()}
    return AuditReport(
        kind="robustness", statistic=statistic, threshold=threshold,
        trials=trials, passed=passed, witness=witness,
        details={"liars": int((~profile.truthful_mask).sum()),
                 "leak_reports": leak_reports,
                 "verification": stats.to_json()})


def _utility_trace(spec: RuleSpec, profile: ValuationProfile, x_true: np.ndarray,
                   trials: int, seed: int, stream_base: int, n_jobs: int):
    outcomes, _, _, _, _ = run_trials(spec, profile, trials, seed,
                                      stream_base, n_jobs)
    padded = np.append(x_true, 0.0)  # null outcome is worth 0
    utilities = padded[np.where(outcomes >= 0, outcomes, profile.m)]
    return float(utilities.mean()), float(utilities.std(ddof=1) / math.sqrt(trials))


def truthfulness_audit(spec: RuleSpec, profile: ValuationProfile, agent: int,
                       lie, trials: int = DEFAULT_TRIALS, seed: int = 0,
                       sigmas: float = 3.0, stream_base: int = 0,
                       n_jobs: int = 1) -> AuditReport:
    """Measured utility ratio truthful/lying for one agent and one fixed lie,
    both evaluated with the agent's true row.

    Passes when the ratio is at least the rule's participation floor minus
    ``sigmas`` standard errors.  Degenerate zero utilities on both sides pass
    with an infinite sentinel statistic.
    """
    from .instances import _mutate_row  # local import avoids a module cycle

    pos = profile.agent_ids.index(agent)
    x_true = profile.truth[pos]
    lie_row = (np.asarray(lie, dtype=np.float64) if isinstance(lie, np.ndarray)
               else _mutate_row(x_true, lie))
    if np.array_equal(lie_row, x_true):
        raise ValueError("lie must differ from the agent's true row")

    truthful_profile = profile.with_reported_row(agent, x_true)
    lying_profile = profile.with_reported_row(agent, lie_row)
    mean_t, se_t = _utility_trace(spec, truthful_profile, x_true, trials,
                                  seed, stream_base, n_jobs)
    mean_l, se_l = _utility_trace(spec, lying_profile, x_true, trials,
                                  seed, stream_base + trials, n_jobs)
    eps = participation_bound(spec, profile.m)
    if mean_l <= 0.0:
        return AuditReport(
            kind="truthfulness", statistic=math.inf, threshold=eps,
            trials=trials, passed=True,
            details={"mean_truthful": mean_t, "mean_lying": mean_l,
                     "note": "degenerate zero lying utility"})
    ratio = mean_t / mean_l
    se_ratio = ratio * math.sqrt((se_t / mean_t) ** 2 + (se_l / mean_l) ** 2) \
        if mean_t > 0 else se_t / mean_l
    passed = ratio >= eps - sigmas * se_ratio
    return AuditReport(
        kind="truthfulness", statistic=ratio, threshold=eps,
        trials=trials, passed=passed,
        details={"mean_truthful": mean_t, "mean_lying": mean_l,
                 "se_ratio": se_ratio, "sigmas": sigmas})


# ---------------------------------------------------------------------------
# Parameter sweeps
# ---------------------------------------------------------------------------

SWEEP_COLUMNS = ["family", "parameter", "analytic_bound", "analytic_ratio",
                 "measured_ratio", "mean_verified", "max_verified", "null_mass"]


def _sweep_spec(family: str, value) -> tuple[RuleSpec, str]:
    if family == "power":
        return Power(int(value)), f"l={int(value)}"
    if family == "partial-power":
        l, r = value
        return PartialPower(int(l), int(r)), f"l={int(l)},r={int(r)}"
    if family == "exponential":
        return Exponential(float(value)), f"alpha={float(value)}"
    raise ValueError(f"unknown sweep family {family!r}")


def _analytic_bound(spec: RuleSpec, m: int, w: np.ndarray) -> float:
    if isinstance(spec, Power):
        return m ** (-1.0 / (spec.l + 1.0))
    if isinstance(spec, PartialPower):
        return (1.0 - 1.0 / spec.r) * m ** (-1.0 / (spec.l + 1.0))
    if isinstance(spec, Exponential):
        top = w.max()
        return max(0.0, 1.0 - spec.alpha * math.log(m) / top) if top > 0 else 0.0
    return 1.0 / m


def tradeoff_sweep(family: str, profile: ValuationProfile, values,
                   trials: int, seed: int, stream_base: int = 0,
                   n_jobs: int = 1) -> list[dict]:
    """One row per parameter value: the analytic welfare-ratio bound, the
    rule's exact ratio, the simulated ratio, and the verification load."""
    from .core import weight_vector

    w = weight_vector(profile)
    rows = []
    for offset, value in enumerate(values):
        spec, label = _sweep_spec(family, value)
        alloc = evaluate_rule(spec, w)
        empirical, stats = empirical_distribution(
            spec, profile, trials, seed,
            stream_base + offset * trials, n_jobs)
        rows.append({
            "family": family,
            "parameter": label,
            "analytic_bound": _analytic_bound(spec, profile.m, w),
            "analytic_ratio": approximation_ratio(w, alloc),
            "measured_ratio": approximation_ratio(w, empirical),
            "mean_verified": stats.mean_verified,
            "max_verified": stats.max_verified,
            "null_mass": alloc.null_mass,
        })
    return rows
