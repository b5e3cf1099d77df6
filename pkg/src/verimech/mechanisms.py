"""Randomized voting mechanisms with selective verification.

Each run samples an outcome together with a small tuple of witness agents,
verifies the distinct agents in the tuple against the oracle, and reacts to
caught liars: the power and exponential mechanisms exclude them and redraw on
the reduced profile; the curved power mechanism diverts to a correction
branch that verifies everyone and redraws so its unconditional law still
equals the rule evaluated on the truthful agents alone.

The sampling itself lives in ``_kernels``; these wrappers translate between
domain types and arrays and replay the verification calls into the oracle's
log.  A run consumes draws from the given stream's current position, so a
fresh ``RngStream(seed, t)`` reproduces exactly trial ``t`` of a batch
simulation with the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .allocations import Exponential, PartialPower, Power, RuleSpec, Uniform
from .core import RngStream, ValuationProfile, VerificationOracle, WeightVector


@dataclass(frozen=True)
class MechanismResult:
    """Outcome of one mechanism run plus its verification bookkeeping.

    ``outcome`` is an outcome index or None for the null result;
    ``bot_resolved`` marks outcomes drawn in the liar-detected branch.
    ``verified`` lists distinct agents in first-verification order and
    ``oracle_calls`` equals its length (the oracle is asked once per agent).
    """

    outcome: int | None
    verified: tuple[int, ...]
    liars_caught: frozenset[int]
    recursion_depth: int
    bot_resolved: bool = False

    def __post_init__(self):
        if not self.liars_caught <= set(self.verified):
            raise ValueError("liars_caught must be a subset of verified")

    @property
    def oracle_calls(self) -> int:
        return len(self.verified)

    @property
    def verified_set(self) -> frozenset[int]:
        return frozenset(self.verified)

    def to_json(self) -> dict:
        return {
            "outcome": self.outcome,
            "null": self.outcome is None,
            "bot_resolved": self.bot_resolved,
            "verified": sorted(self.verified),
            "liars_caught": sorted(self.liars_caught),
            "depth": self.recursion_depth,
        }


def _kernel_inputs(profile: ValuationProfile, oracle: VerificationOracle):
    bits = oracle.truth_bits
    try:
        truthful = np.array([bits[aid] for aid in profile.agent_ids], dtype=bool)
    except KeyError as exc:
        raise ValueError(f"oracle has no bit for agent {exc}") from exc
    return profile.reported, truthful


def _replay(profile: ValuationProfile, oracle: VerificationOracle,
            order: np.ndarray, nv: int) -> tuple[tuple[int, ...], frozenset[int]]:
    verified = []
    caught = []
    for pos in order[:nv]:
        aid = profile.agent_ids[int(pos)]
        verified.append(aid)
        if not oracle.verify(aid):
            caught.append(aid)
    return tuple(verified), frozenset(caught)


# ---------------------------------------------------------------------------
# Term samplers
# ---------------------------------------------------------------------------

def sample_power_term(profile: ValuationProfile, l: int,
                      rng: RngStream) -> tuple[int, tuple[int, ...]]:
    """Outcome j and witness tuple t of length l, drawn with probability
    proportional to the product of the tuple agents' reported values for j
    (outcome first, then each position independently).  l = 0 yields the
    empty tuple and a uniform outcome."""
    spec = Power(l)
    if spec.l > 0 and profile.reported.sum() <= 0.0:
        raise ValueError("degenerate profile: all reported valuations are zero")
    active = np.ones(profile.n, dtype=bool)
    buf = np.empty(max(spec.l, 1), dtype=np.int64)
    state, j = _kernels.power_term(profile.reported, active, spec.l,
                                   rng.kernel_state(), buf)
    rng.set_kernel_state(state)
    if j < 0:
        raise ValueError("degenerate profile: all reported valuations are zero")
    return int(j), tuple(profile.agent_ids[int(i)] for i in buf[:spec.l])


def sample_exponential_term(profile: ValuationProfile, alpha: float,
                            rng: RngStream) -> tuple[int, int, tuple[int, ...]]:
    """Outcome j, tuple length ell (Poisson with mean w_j / alpha), and the
    witness tuple; zero-weight outcomes always get the empty tuple."""
    spec = Exponential(alpha)
    active = np.ones(profile.n, dtype=bool)
    state, j, ell, wj = _kernels.exponential_head(
        profile.reported, active, spec.alpha, rng.kernel_state())
    buf = np.empty(max(int(ell), 1), dtype=np.int64)
    # re-box the state: kernel returns unbox to python ints, which numba
    # would otherwise re-type as signed
    state = _kernels.fill_positions(
        profile.reported, active, int(j), float(wj), int(ell),
        np.uint64(int(state) & (2**64 - 1)), buf)
    rng.set_kernel_state(state)
    return int(j), int(ell), tuple(profile.agent_ids[int(i)] for i in buf[:ell])


# ---------------------------------------------------------------------------
# Mechanism runs
# ---------------------------------------------------------------------------

def run_power(profile: ValuationProfile, oracle: VerificationOracle, l: int,
              rng: RngStream) -> MechanismResult:
    """Power mechanism: at most l distinct agents verified per level; caught
    liars are excluded and the draw restarts on the remaining agents.
    Degenerate all-zero profiles fall back to a uniform outcome with no
    verification."""
    spec = Power(l)
    reported, truthful = _kernel_inputs(profile, oracle)
    order = np.empty(max(profile.n, 1), dtype=np.int64)
    state, j, depth, nv, _ = _kernels.power_trial(
        reported, truthful, spec.l, rng.kernel_state(), order)
    rng.set_kernel_state(state)
    verified, caught = _replay(profile, oracle, order, nv)
    return MechanismResult(int(j), verified, caught, int(depth))


def run_exponential(profile: ValuationProfile, oracle: VerificationOracle,
                    alpha: float, rng: RngStream) -> MechanismResult:
    """Exponential mechanism: witness tuple length is Poisson with mean
    w_j / alpha, so expected verification is bounded by max_j w_j / alpha."""
    spec = Exponential(alpha)
    reported, truthful = _kernel_inputs(profile, oracle)
    order = np.empty(max(profile.n, 1), dtype=np.int64)
    state, j, depth, nv, _ = _kernels.exponential_trial(
        reported, truthful, spec.alpha, rng.kernel_state(), order)
    rng.set_kernel_state(state)
    verified, caught = _replay(profile, oracle, order, nv)
    return MechanismResult(int(j), verified, caught, int(depth))


def run_partial_power(profile: ValuationProfile, oracle: VerificationOracle,
                      l: int, r: int, rng: RngStream) -> MechanismResult:
    """Curved power mechanism: r screening tuples of length l+1, then the
    outcome tuple of length l.  Any caught liar triggers the correction
    branch (verify all agents, redraw from the correction probabilities).
    All-zero profiles return the null outcome directly."""
    spec = PartialPower(l, r)
    reported, truthful = _kernel_inputs(profile, oracle)
    order = np.empty(max(profile.n, 1), dtype=np.int64)
    state, j, bot, nv, _ = _kernels.partial_power_trial(
        reported, truthful, spec.l, spec.r, rng.kernel_state(), order)
    rng.set_kernel_state(state)
    verified, caught = _replay(profile, oracle, order, nv)
    outcome = None if j < 0 else int(j)
    return MechanismResult(outcome, verified, caught, 0, bot_resolved=bool(bot))


def run_uniform(profile: ValuationProfile, oracle: VerificationOracle,
                rng: RngStream) -> MechanismResult:
    """Constant rule: uniform outcome, nobody verified."""
    outcome = rng.integers(profile.m)
    return MechanismResult(outcome, (), frozenset(), 0)


def run_rule_mechanism(spec: RuleSpec, profile: ValuationProfile,
                       oracle: VerificationOracle, rng: RngStream) -> MechanismResult:
    if isinstance(spec, Uniform):
        return run_uniform(profile, oracle, rng)
    if isinstance(spec, Power):
        return run_power(profile, oracle, spec.l, rng)
    if isinstance(spec, PartialPower):
        return run_partial_power(profile, oracle, spec.l, spec.r, rng)
    if isinstance(spec, Exponential):
        return run_exponential(profile, oracle, spec.alpha, rng)
    raise TypeError(f"unknown rule spec: {spec!r}")


# ---------------------------------------------------------------------------
# Correction probabilities for the liar-detected branch
# ---------------------------------------------------------------------------

def bot_probabilities(w_full: WeightVector, w_t: WeightVector, l: int,
                      r: int) -> tuple[np.ndarray, float]:
    """Outcome probabilities for the liar-detected branch.

    Chosen so that the branch exactly cancels the misreports: for every
    outcome j, Pr[j, branch not taken] + p_j * Pr[branch] equals the curved
    power rule evaluated on the truthful weights w_t.  Requires w_t <= w_full
    componentwise with w_t != w_full (otherwise the branch is unreachable).
    Guarantees p_j >= 0 and sum p_j <= 1.
    """
    spec = PartialPower(l, r)
    w_full = np.asarray(w_full, dtype=np.float64)
    w_t = np.asarray(w_t, dtype=np.float64)
    if w_full.shape != w_t.shape or w_full.ndim != 1:
        raise ValueError("weight vectors must be 1-D and of equal length")
    if np.any(w_t > w_full + 1e-12 * np.maximum(w_full, 1.0)):
        raise ValueError("truthful weights cannot exceed full weights")
    if w_full.max() <= 0.0:
        raise ValueError("no liars: the correction branch is unreachable")
    p, p_null, pr_bot = _kernels.bot_probabilities_kernel(
        w_full, w_t, spec.l, spec.r)
    if pr_bot <= 0.0:
        raise ValueError("no liars: the correction branch is unreachable")
    return np.asarray(p), float(p_null)
