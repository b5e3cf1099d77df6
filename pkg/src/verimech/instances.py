"""Instance generators: hard voting families, random property-test fodder,
liar mutations, public-project profiles, and random metric instances.

All generators are deterministic functions of their RngStream.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import RngStream, ValuationProfile
from .facility import MetricInstance, line_metric

CPPP_MAX_OUTCOMES = 10_000


# ---------------------------------------------------------------------------
# Hard voting families
# ---------------------------------------------------------------------------

def lower_bound_instance(m: int, nu: int, delta: float,
                         rng: RngStream) -> ValuationProfile:
    """Block-diagonal family with geometric interest counts.

    m groups of nu agents; group-j agents value only outcome j.  Per group,
    K agents get value 1 (the rest delta) where Pr[K = k] = 2^-(k+1) for
    k < nu with the residual mass 2^-nu on K = nu (truncation keeps the
    generator total).
    """
    if m < 2 or nu < 1 or not (0 < delta < 1):
        raise ValueError("need m >= 2, nu >= 1, 0 < delta < 1")
    reported = np.zeros((m * nu, m))
    for group in range(m):
        ones = 0
        while ones < nu and rng.coin():
            ones += 1
        for pos in range(nu):
            reported[group * nu + pos, group] = 1.0 if pos < ones else delta
    return ValuationProfile.truthful(reported)


def default_lower_bound_params(m: int, eps: float = 0.1) -> tuple[int, float]:
    """Group size and small value that make the family's truncated tail
    negligible: nu = ceil(log2(m) / eps), delta = 1e-6."""
    return math.ceil(math.log2(m) / eps), 1e-6


def single_minded_instance(m: int, big_value: float = 1.0) -> ValuationProfile:
    """m agents, agent i values only outcome i; agent 0's value is
    big_value, everyone else's is 1."""
    if m < 1 or big_value <= 0:
        raise ValueError("need m >= 1 and big_value > 0")
    reported = np.eye(m)
    reported[0, 0] = big_value
    return ValuationProfile.truthful(reported)


# ---------------------------------------------------------------------------
# Random profiles and liar mutations
# ---------------------------------------------------------------------------

def random_profile(n: int, m: int, rng: RngStream, kind: str = "uniform01",
                   density: float = 0.3, spike_factor: float = 10.0) -> ValuationProfile:
    """Random truthful profile: 'uniform01' entries, 'sparse' entries that
    are nonzero with probability ``density``, or 'spiked' with one column
    scaled by ``spike_factor``."""
    reported = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            reported[i, j] = rng.random()
    if kind == "uniform01":
        pass
    elif kind == "sparse":
        for i in range(n):
            for j in range(m):
                if not rng.random() < density:
                    reported[i, j] = 0.0
    elif kind == "spiked":
        reported[:, rng.integers(m)] *= spike_factor
    else:
        raise ValueError(f"unknown profile kind {kind!r}")
    return ValuationProfile.truthful(reported)


@dataclass(frozen=True)
class Scale:
    factor: float


@dataclass(frozen=True)
class Swap:
    j1: int
    j2: int


@dataclass(frozen=True)
class Constant:
    value: float


Mutation = Scale | Swap | Constant


def _mutate_row(row: np.ndarray, mutation: Mutation) -> np.ndarray:
    out = row.copy()
    if isinstance(mutation, Scale):
        out *= mutation.factor
    elif isinstance(mutation, Swap):
        out[mutation.j1], out[mutation.j2] = out[mutation.j2], out[mutation.j1]
    elif isinstance(mutation, Constant):
        out[:] = mutation.value
    else:
        raise TypeError(f"unknown mutation {mutation!r}")
    return out


def apply_liars(profile: ValuationProfile, agents: Sequence[int],
                mutation: Mutation) -> ValuationProfile:
    """Profile where the given agents misreport via the mutation; their true
    rows are untouched.  A mutation that leaves some row identical to the
    truth is rejected (the agent would still count as truthful)."""
    reported = profile.reported.copy()
    for agent in agents:
        pos = profile.agent_ids.index(agent)
        mutated = _mutate_row(profile.truth[pos], mutation)
        if np.any(mutated < 0) or not np.all(np.isfinite(mutated)):
            raise ValueError("mutation produced an invalid row")
        if np.array_equal(mutated, profile.truth[pos]):
            raise ValueError(f"mutation leaves agent {agent} truthful")
        reported[pos] = mutated
    return ValuationProfile(reported, profile.truth.copy(), profile.agent_ids)


# ---------------------------------------------------------------------------
# Public-project profiles (outcomes = all k-subsets of r resources)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CpppSpec:
    """Project-selection problem: choose k of r resources; each agent values
    resource subsets via a normalized monotone set function."""

    r: int
    k: int
    value_oracles: tuple[Callable, ...]

    def __post_init__(self):
        if not (1 <= self.k <= self.r):
            raise ValueError("need 1 <= k <= r")
        object.__setattr__(self, "value_oracles", tuple(self.value_oracles))

    @property
    def n_outcomes(self) -> int:
        return math.comb(self.r, self.k)


def coverage_valuation(target: Sequence[int]) -> Callable:
    """Set function |S intersect target|: normalized and monotone."""
    wanted = frozenset(int(t) for t in target)

    def value(subset) -> float:
        return float(len(wanted & frozenset(subset)))

    return value


def validate_cppp_spec(spec: CpppSpec, rng: RngStream, chains: int = 20) -> None:
    """Spot-check normalization (v(empty) = 0) and monotonicity on random
    inclusion chains."""
    resources = list(range(spec.r))
    for oracle in spec.value_oracles:
        if oracle(()) != 0.0:
            raise ValueError("valuations must be normalized: v(empty) = 0")
        for _ in range(chains):
            perm = sorted(resources, key=lambda _: rng.random())
            prev = 0.0
            for size in range(1, spec.r + 1):
                cur = float(oracle(tuple(sorted(perm[:size]))))
                if cur < prev - 1e-12:
                    raise ValueError("valuations must be monotone")
                prev = cur


def cppp_profile(spec: CpppSpec) -> tuple[ValuationProfile, list[tuple[int, ...]]]:
    """Profile over all k-subsets in lexicographic order, filled from the
    agents' value oracles; returns (profile, outcome labels)."""
    if spec.n_outcomes > CPPP_MAX_OUTCOMES:
        raise ValueError(
            f"{spec.n_outcomes} outcomes exceed the enumerable cap {CPPP_MAX_OUTCOMES}")
    labels = [tuple(c) for c in itertools.combinations(range(spec.r), spec.k)]
    n = len(spec.value_oracles)
    reported = np.empty((n, len(labels)))
    for i, oracle in enumerate(spec.value_oracles):
        for j, subset in enumerate(labels):
            reported[i, j] = float(oracle(subset))
    return ValuationProfile.truthful(reported), labels


def random_coverage_cppp(r: int, k: int, n: int, rng: RngStream) -> CpppSpec:
    """Agents covet random nonempty resource subsets (coverage valuations)."""
    oracles = []
    for _ in range(n):
        target = [res for res in range(r) if rng.random() < 0.5]
        if not target:
            target = [rng.integers(r)]
        oracles.append(coverage_valuation(target))
    return CpppSpec(r, k, tuple(oracles))


# ---------------------------------------------------------------------------
# Random metric instances
# ---------------------------------------------------------------------------

def _distinct_points(n: int, n_points: int, rng: RngStream) -> list[int]:
    # Fisher-Yates prefix: n distinct point indices.
    pool = list(range(n_points))
    for i in range(n):
        j = i + rng.integers(n_points - i)
        pool[i], pool[j] = pool[j], pool[i]
    return sorted(pool[:n])


def random_line_instance(n: int, k: int, rng: RngStream,
                         n_points: int | None = None,
                         span: float = 10.0) -> MetricInstance:
    """Agents at distinct random coordinates on a line segment; the point set
    is the agent locations plus a few spare points."""
    n_points = n_points or n + 2
    if n_points < n:
        raise ValueError("need at least one point per agent")
    coords = sorted(rng.random() * span for _ in range(n_points))
    agents = _distinct_points(n, n_points, rng)
    return MetricInstance(tuple(range(n_points)), line_metric(coords),
                          agents, list(agents), k)


def random_metric_instance(n: int, k: int, n_points: int,
                           rng: RngStream, scale: float = 10.0) -> MetricInstance:
    """Random symmetric costs repaired into a metric by shortest-path
    closure (Floyd-Warshall), agents at distinct random points."""
    if n_points < n:
        raise ValueError("need at least one point per agent")
    dist = np.zeros((n_points, n_points))
    for a in range(n_points):
        for b in range(a + 1, n_points):
            d = (0.1 + rng.random()) * scale
            dist[a, b] = dist[b, a] = d
    for via in range(n_points):
        np.minimum(dist, dist[:, via:via + 1] + dist[via:via + 1, :], out=dist)
    agents = _distinct_points(n, n_points, rng)
    return MetricInstance(tuple(range(n_points)), dist, agents, list(agents), k)
