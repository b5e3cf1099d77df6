"""k-facility location on finite metrics with selective verification.

Two mechanisms: the deterministic farthest-point rule (max-cost objective)
and the randomized proportional rule (social-cost objective).  Both verify
exactly the agents allocated a facility and rerun without any caught liars.
Exhaustive optima and exact process-tree computations are provided as
independent oracles for the approximation, participation, and obliviousness
audits.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import RngStream, VerificationOracle

BRUTE_FORCE_MAX_POINTS = 16
BRUTE_FORCE_MAX_K = 4
EXACT_COST_MAX_AGENTS = 7
EXACT_COST_MAX_K = 3


@dataclass(frozen=True)
class MetricInstance:
    """Finite metric, agent locations (true and reported), facility count."""

    points: tuple
    dist: np.ndarray
    agents_true: np.ndarray
    agents_reported: np.ndarray
    k: int

    def __post_init__(self):
        dist = np.ascontiguousarray(np.asarray(self.dist, dtype=np.float64))
        n_points = dist.shape[0]
        points = tuple(self.points) if self.points else tuple(range(n_points))
        if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
            raise ValueError("dist must be a square matrix")
        if len(points) != n_points:
            raise ValueError("points length must match dist")
        if np.any(dist < 0) or not np.all(np.isfinite(dist)):
            raise ValueError("distances must be finite and nonnegative")
        if np.any(np.abs(np.diag(dist)) > 0):
            raise ValueError("dist diagonal must be zero")
        if np.any(np.abs(dist - dist.T) > 1e-12):
            raise ValueError("dist must be symmetric")
        for a in range(n_points):
            for b in range(n_points):
                slack = dist[a] + dist[b]  # via every midpoint at once
                if dist[a, b] > slack.min() + 1e-9:
                    raise ValueError("triangle inequality violated")
        true = np.asarray(self.agents_true, dtype=np.int64)
        rep = np.asarray(self.agents_reported, dtype=np.int64)
        if true.shape != rep.shape or true.ndim != 1:
            raise ValueError("agent location vectors must match")
        for arr in (true, rep):
            if arr.size and (arr.min() < 0 or arr.max() >= n_points):
                raise ValueError("agent locations must index points")
        if not (isinstance(self.k, (int, np.integer)) and self.k >= 1):
            raise ValueError("k must be an integer >= 1")
        dist.setflags(write=False)
        true.setflags(write=False)
        rep.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "dist", dist)
        object.__setattr__(self, "agents_true", true)
        object.__setattr__(self, "agents_reported", rep)
        object.__setattr__(self, "k", int(self.k))

    @property
    def n(self) -> int:
        return self.agents_true.shape[0]

    @property
    def n_points(self) -> int:
        return self.dist.shape[0]

    @property
    def truthful_mask(self) -> np.ndarray:
        return self.agents_true == self.agents_reported

    def oracle(self) -> VerificationOracle:
        return VerificationOracle(self.truthful_mask)

    def with_reported(self, agent: int, point: int) -> "MetricInstance":
        rep = self.agents_reported.copy()
        rep[agent] = point
        return MetricInstance(self.points, self.dist.copy(),
                              self.agents_true.copy(), rep, self.k)


@dataclass(frozen=True)
class FacilityResult:
    """Facility point indices plus verification bookkeeping (as in
    MechanismResult; at most k facilities, possibly fewer after exclusions
    or with coincident locations)."""

    facilities: frozenset[int]
    verified: tuple[int, ...]
    liars_caught: frozenset[int]
    recursion_depth: int

    def __post_init__(self):
        if not self.liars_caught <= set(self.verified):
            raise ValueError("liars_caught must be a subset of verified")

    @property
    def oracle_calls(self) -> int:
        return len(self.verified)

    def to_json(self) -> dict:
        return {
            "facilities": sorted(self.facilities),
            "verified": sorted(self.verified),
            "liars_caught": sorted(self.liars_caught),
            "depth": self.recursion_depth,
        }


def point_distance(dist: np.ndarray, point: int, targets) -> float:
    """d(point, C): distance to the nearest of the targets; inf when empty."""
    if not targets:
        return math.inf
    return min(float(dist[point, q]) for q in targets)


def max_cost(instance: MetricInstance, facilities) -> float:
    return max(point_distance(instance.dist, p, facilities)
               for p in instance.agents_true)


def social_cost(instance: MetricInstance, facilities) -> float:
    return sum(point_distance(instance.dist, p, facilities)
               for p in instance.agents_true)


# ---------------------------------------------------------------------------
# Farthest-point mechanism (max cost)
# ---------------------------------------------------------------------------

def greedy_centers(locations, k: int, dist: np.ndarray) -> list[int]:
    """Pick order of the farthest-point rule on a location profile.

    First pick is the first agent; each next pick maximizes the distance to
    the current facility set, ties to the lowest index.  Picks are distinct
    agents (coincident ties keep picking unpicked agents), min(k, n) total.
    Returns local agent indices in pick order.
    """
    n = len(locations)
    picks = min(k, n)
    if picks == 0:
        return []
    chosen = [0]
    selected = [False] * n
    selected[0] = True
    c_pts = {locations[0]}
    while len(chosen) < picks:
        best = -1
        best_d = -1.0
        for i in range(n):
            if not selected[i]:
                d = point_distance(dist, locations[i], c_pts)
                if d > best_d:
                    best = i
                    best_d = d
        chosen.append(best)
        selected[best] = True
        c_pts.add(locations[best])
    return chosen


def run_greedy(instance: MetricInstance, oracle: VerificationOracle,
               rng: RngStream | None = None) -> FacilityResult:
    """Farthest-point mechanism: verify the facility holders; exclude caught
    liars and rerun on the remaining agents.  Deterministic (rng unused)."""
    n = instance.n
    bits = oracle.truth_bits
    excluded: set[int] = set()
    verified: list[int] = []
    caught: set[int] = set()
    depth = 0
    while True:
        active = [i for i in range(n) if i not in excluded]
        if not active:
            return FacilityResult(frozenset(), tuple(verified),
                                  frozenset(caught), depth)
        locations = [int(instance.agents_reported[i]) for i in active]
        holders = [active[idx] for idx in
                   greedy_centers(locations, instance.k, instance.dist)]
        caught_new = False
        for i in holders:
            if i not in verified:
                verified.append(i)
                oracle.verify(i)
                if not bits[i]:
                    caught.add(i)
                    caught_new = True
        if not caught_new:
            facilities = frozenset(int(instance.agents_reported[i]) for i in holders)
            return FacilityResult(facilities, tuple(verified),
                                  frozenset(caught), depth)
        excluded |= caught
        depth += 1


# ---------------------------------------------------------------------------
# Proportional mechanism (social cost)
# ---------------------------------------------------------------------------

def run_proportional(instance: MetricInstance, oracle: VerificationOracle,
                     rng: RngStream) -> FacilityResult:
    """Proportional mechanism: first facility uniform over agents, each next
    with probability proportional to the distance to the current set; verify
    the holders, exclude caught liars and redraw.  Fewer than k remaining
    agents each get a facility; if all remaining distances vanish earlier,
    the set is filled uniformly from unused points."""
    bits = oracle.truth_bits
    truthful = np.array([bits[i] for i in range(instance.n)], dtype=bool)
    order = np.empty(max(instance.n, 1), dtype=np.int64)
    fac = np.empty(max(instance.k, instance.n_points), dtype=np.int64)
    state, n_fac, depth, nv, _ = _kernels.proportional_trial(
        instance.dist, instance.agents_reported, truthful, instance.k,
        instance.n_points, rng.kernel_state(), order, fac)
    rng.set_kernel_state(state)
    verified = []
    caught = []
    for pos in order[:nv]:
        i = int(pos)
        verified.append(i)
        if not oracle.verify(i):
            caught.append(i)
    return FacilityResult(frozenset(int(p) for p in fac[:n_fac]),
                          tuple(verified), frozenset(caught), int(depth))


@dataclass(frozen=True)
class FacilityBatchStats:
    trials: int
    set_frequencies: dict
    mean_verified: float
    max_verified: int
    mean_depth: float
    mean_max_cost: float
    mean_social_cost: float


def proportional_empirical(instance: MetricInstance, trials: int, seed: int,
                           stream_base: int = 0) -> FacilityBatchStats:
    """Monte Carlo facility-set distribution of the proportional mechanism;
    trial t draws from stream stream_base + t."""
    if instance.n_points > 62:
        raise ValueError("batch simulation supports at most 62 points")
    truthful = instance.truthful_mask
    masks, depths, nvs, _ = _kernels.proportional_batch(
        instance.dist, instance.agents_reported, truthful,
        instance.k, instance.n_points,
        np.uint64(seed & (2**64 - 1)), np.uint64(stream_base & (2**64 - 1)),
        int(trials))
    unique, counts = np.unique(masks, return_counts=True)
    freqs = {}
    cost_max = 0.0
    cost_sum = 0.0
    for mask, count in zip(unique.tolist(), counts.tolist()):
        fset = frozenset(p for p in range(instance.n_points) if mask >> p & 1)
        freqs[fset] = count / trials
        cost_max += (count / trials) * max_cost(instance, fset)
        cost_sum += (count / trials) * social_cost(instance, fset)
    return FacilityBatchStats(
        trials=int(trials),
        set_frequencies=freqs,
        mean_verified=float(nvs.mean()),
        max_verified=int(nvs.max()),
        mean_depth=float(depths.mean()),
        mean_max_cost=cost_max,
        mean_social_cost=cost_sum,
    )


def tv_set_distributions(a: dict, b: dict) -> float:
    keys = set(a) | set(b)
    return 0.5 * sum(abs(a.get(key, 0.0) - b.get(key, 0.0)) for key in keys)


# ---------------------------------------------------------------------------
# Exhaustive optima
# ---------------------------------------------------------------------------

def _check_brute_scale(n_points: int, k: int) -> None:
    if n_points > BRUTE_FORCE_MAX_POINTS or k > BRUTE_FORCE_MAX_K:
        raise ValueError(
            f"instance too large for brute force "
            f"(max {BRUTE_FORCE_MAX_POINTS} points, k <= {BRUTE_FORCE_MAX_K})")


def brute_force_kcenter(agent_points, k: int, dist: np.ndarray):
    """Exhaustive minimum of the max agent-facility distance over all
    k-subsets of the point set; ties to the lexicographically first set."""
    n_points = dist.shape[0]
    _check_brute_scale(n_points, k)
    best_set = None
    best_cost = math.inf
    for combo in itertools.combinations(range(n_points), min(k, n_points)):
        cost = max((point_distance(dist, int(p), combo) for p in agent_points),
                   default=0.0)
        if cost < best_cost - 1e-15:
            best_cost = cost
            best_set = frozenset(combo)
    return best_set, best_cost


def brute_force_kmedian(agent_points, k: int, dist: np.ndarray):
    """Exhaustive minimum of the total agent-facility distance."""
    n_points = dist.shape[0]
    _check_brute_scale(n_points, k)
    best_set = None
    best_cost = math.inf
    for combo in itertools.combinations(range(n_points), min(k, n_points)):
        cost = sum(point_distance(dist, int(p), combo) for p in agent_points)
        if cost < best_cost - 1e-15:
            best_cost = cost
            best_set = frozenset(combo)
    return best_set, best_cost


# ---------------------------------------------------------------------------
# Exact process-tree computations (independent of the sampling kernel)
# ---------------------------------------------------------------------------

def proportional_outcome_distribution(locations, k: int, dist: np.ndarray,
                                      n_points: int) -> dict:
    """Exact joint law of (picked agents, facility set) for one liar-free
    pass of the proportional rule on a location profile.

    Keys are (frozenset of local agent indices, frozenset of point indices);
    values sum to 1.  Mirrors the sampling semantics exactly, including the
    house-everyone rule for n < k and the uniform fill on vanishing
    distances.
    """
    n = len(locations)
    out: dict = {}

    def leaf(picked, c, prob):
        key = (picked, c)
        out[key] = out.get(key, 0.0) + prob

    if n == 0:
        leaf(frozenset(), frozenset(), 1.0)
        return out
    if n < k:
        leaf(frozenset(range(n)), frozenset(locations), 1.0)
        return out

    def fill(picked, c, prob):
        if len(c) >= k or len(c) >= n_points:
            leaf(picked, c, prob)
            return
        rest = [p for p in range(n_points) if p not in c]
        for p in rest:
            fill(picked, c | {p}, prob / len(rest))

    def step(picked, c, prob):
        if len(c) == k:
            leaf(picked, c, prob)
            return
        weights = [point_distance(dist, locations[i], c) for i in range(n)]
        total = sum(weights)
        if total <= 0.0:
            fill(picked, c, prob)
            return
        for i in range(n):
            if weights[i] > 0.0:
                step(picked | {i}, c | {locations[i]}, prob * weights[i] / total)

    for i in range(n):
        step(frozenset({i}), frozenset({locations[i]}), 1.0 / n)
    return out


def proportional_set_distribution(locations, k: int, dist: np.ndarray,
                                  n_points: int) -> dict:
    """Marginal law over facility sets of one liar-free proportional pass."""
    sets: dict = {}
    for (_, fac), prob in proportional_outcome_distribution(
            locations, k, dist, n_points).items():
        sets[fac] = sets.get(fac, 0.0) + prob
    return sets


def _proportional_pruned_distribution(locations, truthful, k: int,
                                      dist: np.ndarray, n_points: int) -> dict:
    """Facility-set law of the pass with liar picks pruned and each node's
    remaining branch probabilities renormalized (the per-step conditional).

    The weights still come from the full profile, so this exercises the
    liar bookkeeping; requires at least k truthful agents so the pruned
    pass never starves.
    """
    n = len(locations)
    keep = [i for i in range(n) if truthful[i]]
    out: dict = {}

    def leaf(c, prob):
        out[c] = out.get(c, 0.0) + prob

    if len(keep) == 0:
        raise ValueError("no truthful agents to condition on")
    if n < k:
        leaf(frozenset(locations[i] for i in keep), 1.0)
        return out

    def fill(c, prob):
        if len(c) >= k or len(c) >= n_points:
            leaf(c, prob)
            return
        rest = [p for p in range(n_points) if p not in c]
        for p in rest:
            fill(c | {p}, prob / len(rest))

    def step(c, prob):
        if len(c) == k:
            leaf(c, prob)
            return
        weights = {i: point_distance(dist, locations[i], c) for i in keep}
        total = sum(weights.values())
        if total <= 0.0:
            fill(c, prob)
            return
        for i, w in weights.items():
            if w > 0.0:
                step(c | {locations[i]}, prob * w / total)

    for i in keep:
        step(frozenset({locations[i]}), 1.0 / len(keep))
    return out


def proportional_obliviousness_gap(instance: MetricInstance) -> float:
    """Exact per-step obliviousness check: total variation between the
    liar-pruned pass (liar branches dropped, probabilities renormalized at
    every pick) and the liar-excluded run.  Zero up to roundoff whenever at
    least k truthful agents remain.

    Note this is the per-step conditional, not conditioning on the global
    no-catch event: for sequential selection the global conditional weights
    early picks by their downstream escape probability and genuinely differs
    from the excluded run (see the mechanism-law oracle below for the exact
    effect of restarts).
    """
    truthful = instance.truthful_mask
    if truthful.sum() < min(instance.k, instance.n):
        raise ValueError("need at least k truthful agents for the pruned pass")
    locations = [int(p) for p in instance.agents_reported]
    pruned = _proportional_pruned_distribution(
        locations, truthful, instance.k, instance.dist, instance.n_points)
    survivors = [locations[i] for i in range(instance.n) if truthful[i]]
    excluded = proportional_set_distribution(
        survivors, instance.k, instance.dist, instance.n_points)
    return tv_set_distributions(pruned, excluded)


def proportional_mechanism_distribution(instance: MetricInstance) -> dict:
    """Exact facility-set law of the full mechanism including verification:
    passes whose picks contain liars are discarded and rerun without the
    caught agents.  Enumerable at desk scale; memoized over agent subsets."""
    dist = instance.dist
    k = instance.k
    n_points = instance.n_points
    reported = [int(p) for p in instance.agents_reported]
    truthful = instance.truthful_mask
    memo: dict = {}

    def law(active: frozenset) -> dict:
        if active in memo:
            return memo[active]
        joint = proportional_outcome_distribution(
            [reported[i] for i in sorted(active)], k, dist, n_points)
        agents = sorted(active)
        result: dict = {}
        for (picked_local, fac), prob in joint.items():
            picked = {agents[i] for i in picked_local}
            caught = {i for i in picked if not truthful[i]}
            if not caught:
                result[fac] = result.get(fac, 0.0) + prob
            else:
                for sub_fac, sub_prob in law(active - caught).items():
                    result[sub_fac] = result.get(sub_fac, 0.0) + prob * sub_prob
        memo[active] = result
        return result

    return law(frozenset(range(instance.n)))


def proportional_expected_cost(instance: MetricInstance, agent: int,
                               include_agent: bool = True) -> float:
    """Exact expected distance of the agent's true location to the facility
    set of a liar-free proportional run, with or without her participation.
    Exact recursion over the selection tree; inf when nobody participates.
    """
    if instance.n > EXACT_COST_MAX_AGENTS or instance.k > EXACT_COST_MAX_K:
        raise ValueError(
            f"instance too large for the exact recursion "
            f"(max {EXACT_COST_MAX_AGENTS} agents, k <= {EXACT_COST_MAX_K})")
    pts = [int(p) for p in instance.agents_true]
    dist = instance.dist
    k = instance.k
    n_points = instance.n_points
    target = pts[agent]
    cand = [i for i in range(instance.n) if include_agent or i != agent]
    if not cand:
        return math.inf
    if len(cand) < k:
        return point_distance(dist, target, {pts[i] for i in cand})

    memo: dict = {}

    def fill_expect(c: frozenset) -> float:
        if len(c) >= k or len(c) >= n_points:
            return point_distance(dist, target, c)
        rest = [p for p in range(n_points) if p not in c]
        return sum(fill_expect(c | {p}) for p in rest) / len(rest)

    def after(c: frozenset) -> float:
        if len(c) == k:
            return point_distance(dist, target, c)
        if c in memo:
            return memo[c]
        weights = [(i, point_distance(dist, pts[i], c)) for i in cand]
        total = sum(w for _, w in weights)
        if total <= 0.0:
            value = fill_expect(c)
        else:
            value = 0.0
            for i, w in weights:
                if w > 0.0 and i != agent:
                    value += (w / total) * after(c | {pts[i]})
                # i == agent: facility lands on the target, final cost 0
        memo[c] = value
        return value

    return sum(0.0 if i == agent else after(frozenset({pts[i]}))
               for i in cand) / len(cand)


# ---------------------------------------------------------------------------
# Instance file format:
# {"points": [...], "dist": [[...]] | {"line": [coords]},
#  "agents_true": [...], "agents_reported": [...], "k": int}
# ---------------------------------------------------------------------------

def line_metric(coords) -> np.ndarray:
    c = np.asarray(coords, dtype=np.float64)
    return np.abs(c[:, None] - c[None, :])


def instance_to_json(instance: MetricInstance) -> dict:
    return {
        "points": list(instance.points),
        "dist": instance.dist.tolist(),
        "agents_true": instance.agents_true.tolist(),
        "agents_reported": instance.agents_reported.tolist(),
        "k": instance.k,
    }


def instance_from_json(data: dict) -> MetricInstance:
    dist_spec = data["dist"]
    if isinstance(dist_spec, dict):
        if "line" not in dist_spec:
            raise ValueError("dist object must carry a 'line' coordinate list")
        coords = dist_spec["line"]
        dist = line_metric(coords)
        points = tuple(data.get("points", range(len(coords))))
    else:
        dist = np.asarray(dist_spec, dtype=np.float64)
        points = tuple(data.get("points", range(dist.shape[0])))

    def resolve(loc):
        if loc in points:
            return points.index(loc)
        idx = int(loc)
        if 0 <= idx < len(points):
            return idx
        raise ValueError(f"unknown point {loc!r}")

    true = [resolve(p) for p in data["agents_true"]]
    reported = [resolve(p) for p in data.get("agents_reported", data["agents_true"])]
    return MetricInstance(points, dist, true, reported, int(data["k"]))


def load_instance(path) -> MetricInstance:
    with open(path) as fh:
        return instance_from_json(json.load(fh))


def save_instance(instance: MetricInstance, path) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_json(instance), fh, sort_keys=True)
        fh.write("\n")
