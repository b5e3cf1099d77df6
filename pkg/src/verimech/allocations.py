"""Closed-form allocation rules and their analytic property calculators.

These are the liar-free laws the mechanisms must reproduce; they are computed
directly from weight vectors (vectorized numpy), independently of the
sampling kernels, so simulation audits compare two separate routes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Allocation, RngStream, ValuationProfile, WeightVector, weight_vector


@dataclass(frozen=True)
class Uniform:
    pass


@dataclass(frozen=True)
class Power:
    l: int

    def __post_init__(self):
        if int(self.l) != self.l or self.l < 0:
            raise ValueError("power exponent l must be an integer >= 0")
        object.__setattr__(self, "l", int(self.l))


@dataclass(frozen=True)
class PartialPower:
    l: int
    r: int

    def __post_init__(self):
        if int(self.l) != self.l or self.l < 1:
            raise ValueError("l must be an integer >= 1")
        if int(self.r) != self.r or self.r < 1:
            raise ValueError("r must be an integer >= 1")
        object.__setattr__(self, "l", int(self.l))
        object.__setattr__(self, "r", int(self.r))


@dataclass(frozen=True)
class Exponential:
    alpha: float

    def __post_init__(self):
        if not (self.alpha > 0):
            raise ValueError("alpha must be positive")
        object.__setattr__(self, "alpha", float(self.alpha))


RuleSpec = Uniform | Power | PartialPower | Exponential


def _as_weights(w) -> np.ndarray:
    arr = np.asarray(w, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] < 1:
        raise ValueError("weight vector must be a nonempty 1-D array")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError("weights must be finite and nonnegative")
    return arr


def power_allocation(w: WeightVector, l: int) -> Allocation:
    """Outcome j with probability w_j^l / sum_q w_q^l; full allocation.

    l = 0 and the all-zero weight vector both give the uniform allocation
    (any constant rule is trivially robust and truthful).
    """
    w = _as_weights(w)
    m = w.shape[0]
    spec = Power(l)
    if spec.l == 0:
        return Allocation(np.full(m, 1.0 / m))
    wmax = w.max()
    if wmax <= 0.0:
        return Allocation(np.full(m, 1.0 / m))
    p = (w / wmax) ** spec.l
    return Allocation(p / p.sum())


def partial_power_allocation(w: WeightVector, l: int, r: int) -> Allocation:
    """The curved power rule: probability (1 - 1/r) w_j^l / (m^{1/(l+1)} N)
    with N the (l+1)/l-norm of the componentwise power w^l; the remaining
    mass goes to the null outcome.  All-zero weights give the all-null
    allocation."""
    w = _as_weights(w)
    m = w.shape[0]
    spec = PartialPower(l, r)
    wmax = w.max()
    if wmax <= 0.0:
        return Allocation(np.zeros(m), 1.0)
    a = w / wmax
    s_l1 = (a ** (spec.l + 1)).sum()
    norm = s_l1 ** (spec.l / (spec.l + 1.0))
    probs = (1.0 - 1.0 / spec.r) * (a ** spec.l) / (m ** (1.0 / (spec.l + 1.0)) * norm)
    return Allocation(probs, 1.0 - probs.sum())


def exponential_allocation(w: WeightVector, alpha: float) -> Allocation:
    """Outcome j with probability proportional to exp(w_j / alpha), computed
    with a max shift so large weights cannot overflow."""
    w = _as_weights(w)
    if not (alpha > 0):
        raise ValueError("alpha must be positive")
    z = np.exp((w - w.max()) / alpha)
    return Allocation(z / z.sum())


def evaluate_rule(spec: RuleSpec, w: WeightVector) -> Allocation:
    w = _as_weights(w)
    if isinstance(spec, Uniform):
        m = w.shape[0]
        return Allocation(np.full(m, 1.0 / m))
    if isinstance(spec, Power):
        return power_allocation(w, spec.l)
    if isinstance(spec, PartialPower):
        return partial_power_allocation(w, spec.l, spec.r)
    if isinstance(spec, Exponential):
        return exponential_allocation(w, spec.alpha)
    raise TypeError(f"unknown rule spec: {spec!r}")


def expected_welfare(w: WeightVector, allocation: Allocation) -> float:
    """Total expected valuation w . probs; the null outcome contributes 0."""
    w = _as_weights(w)
    if w.shape[0] != allocation.m:
        raise ValueError("weight and allocation sizes differ")
    return float(w @ allocation.probs)


def approximation_ratio(w: WeightVector, allocation: Allocation) -> float:
    """Expected welfare relative to the best single outcome max_j w_j."""
    w = _as_weights(w)
    top = w.max()
    if top <= 0.0:
        raise ValueError("approximation ratio undefined for all-zero weights")
    return expected_welfare(w, allocation) / top


def participation_bound(spec: RuleSpec, m: int) -> float:
    """Guaranteed floor on the participation margin: 1 for the maximizing
    rules (and the constant uniform rule), m^{-1/(l+1)} for the power rule."""
    if isinstance(spec, Power):
        return m ** (-1.0 / (spec.l + 1.0))
    return 1.0


def participation_margin(spec: RuleSpec, profile: ValuationProfile, agent: int) -> float:
    """Ratio of an agent's expected utility with and without her report,
    evaluated on true valuations; +inf when both sides vanish."""
    pos = profile.agent_ids.index(agent)
    x_i = profile.truth[pos]
    w = weight_vector(profile, use_truth=True)
    with_i = float(x_i @ evaluate_rule(spec, w).probs)
    rest = np.delete(profile.truth, pos, axis=0)
    w_rest = rest.sum(axis=0) if rest.size else np.zeros(profile.m)
    without_i = float(x_i @ evaluate_rule(spec, w_rest).probs)
    if without_i <= 0.0:
        return math.inf
    return with_i / without_i


# ---------------------------------------------------------------------------
# Welfare-extremality audit for the maximizing rules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExtremalityReport:
    spec: RuleSpec
    probes: int
    violations: int
    worst_slack: float
    witness: np.ndarray | None

    @property
    def passed(self) -> bool:
        return self.violations == 0


def _entropy(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def midr_extremality_check(spec: RuleSpec, w: WeightVector, probes: int,
                           rng: RngStream, tol: float = 1e-9) -> ExtremalityReport:
    """Verify that the rule's output maximizes its objective over its range.

    For the curved power rule the range is the nonnegative (l+1)/l-norm ball
    of radius (1 - 1/r) m^{-1/(l+1)}; the output must sit on the boundary and
    beat every probe on plain welfare.  For the exponential rule the range is
    the simplex and the objective is welfare plus alpha times entropy.
    Probes are boundary points in random positive directions plus half-radius
    interior points (boundary comparisons are the binding ones).
    """
    w = _as_weights(w)
    m = w.shape[0]
    if isinstance(spec, PartialPower):
        alloc = partial_power_allocation(w, spec.l, spec.r)
        q = 1.0 + 1.0 / spec.l
        radius = (1.0 - 1.0 / spec.r) * m ** (-1.0 / (spec.l + 1.0))
        if w.max() > 0:
            fnorm = float((alloc.probs ** q).sum() ** (1.0 / q))
            if abs(fnorm - radius) > tol:
                return ExtremalityReport(spec, 0, 1, abs(fnorm - radius), alloc.probs)
        best = expected_welfare(w, alloc)

        def objective(z):
            return float(w @ z)

        def probe(k):
            direction = np.array([abs(rng.gauss()) for _ in range(m)])
            if direction.sum() <= 0:
                direction = np.full(m, 1.0)
            scale = radius / float((direction ** q).sum() ** (1.0 / q))
            z = direction * scale
            return z if k % 2 == 0 else 0.5 * z
    elif isinstance(spec, Exponential):
        alloc = exponential_allocation(w, spec.alpha)
        best = expected_welfare(w, alloc) + spec.alpha * _entropy(alloc.probs)

        def objective(z):
            return float(w @ z) + spec.alpha * _entropy(z)

        def probe(k):
            e = np.array([-math.log(1.0 - rng.random()) for _ in range(m)])
            if e.sum() <= 0:
                e = np.full(m, 1.0)
            return e / e.sum()
    else:
        raise TypeError("extremality check applies to PartialPower or Exponential")

    violations = 0
    worst = 0.0
    witness = None
    for k in range(probes):
        z = probe(k)
        slack = objective(z) - best
        if slack > tol:
            violations += 1
            if slack > worst:
                worst = slack
                witness = z
    return ExtremalityReport(spec, probes, violations, worst, witness)
