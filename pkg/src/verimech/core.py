"""Shared domain types: valuation profiles, allocations, the verification
oracle, and reproducible random streams.

Weight vectors are plain float64 numpy arrays throughout (``WeightVector`` is
an alias); the structured types below are immutable after construction and
safe to share across parallel trial workers.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _kernels

WeightVector = np.ndarray

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB

ALLOCATION_TOL = 1e-12


def _mix64_int(z: int) -> int:
    """SplitMix64 finalizer on python ints; bit-identical to the kernel's."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX_A) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX_B) & _MASK64
    return z ^ (z >> 31)


def _label_to_int(label) -> int:
    if isinstance(label, str):
        return zlib.crc32(label.encode("utf-8"))
    return int(label) & _MASK64


class RngStream:
    """Deterministic SplitMix64 stream identified by (seed, stream_id).

    Equal identifiers give bit-identical draw sequences; distinct stream ids
    give independent streams, so parallel trials can each own one.  The same
    generator backs the compiled kernels, which lets a single mechanism run
    reproduce exactly one trial of a batch simulation.
    """

    __slots__ = ("seed", "stream_id", "_state")

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self._state = _mix64_int(
            (_mix64_int((self.seed + _GOLDEN) & _MASK64)
             + self.stream_id * _MIX_A) & _MASK64)

    def random(self) -> float:
        """Uniform double in [0, 1)."""
        self._state = (self._state + _GOLDEN) & _MASK64
        return (_mix64_int(self._state) >> 11) * 2.0 ** -53

    def integers(self, n: int) -> int:
        """Uniform index in [0, n)."""
        idx = int(self.random() * n)
        return n - 1 if idx >= n else idx

    def coin(self) -> bool:
        return self.random() < 0.5

    def gauss(self) -> float:
        """Standard normal via Box-Muller (two draws per call)."""
        u1 = self.random()
        u2 = self.random()
        return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)

    def substream(self, *labels) -> "RngStream":
        """Independent stream derived by stable labels (ints or strings)."""
        sid = self.stream_id
        for label in labels:
            sid = _mix64_int((sid ^ _label_to_int(label)) + _GOLDEN)
        return RngStream(self.seed, sid)

    # Kernel handoff: mechanisms consume draws from the stream's current
    # position and advance it.
    def kernel_state(self) -> np.uint64:
        return np.uint64(self._state)

    def set_kernel_state(self, state) -> None:
        self._state = int(state) & _MASK64

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def _as_matrix(values, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(values, dtype=np.float64))
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    if np.any(arr < 0):
        raise ValueError(f"{name} must be nonnegative")
    return arr


@dataclass(frozen=True)
class ValuationProfile:
    """Reported and true agent valuations over m outcomes.

    An agent is truthful iff her reported row equals her true row exactly,
    componentwise.  Agent ids stay stable under exclusion so verification
    logs remain meaningful.
    """

    reported: np.ndarray
    truth: np.ndarray
    agent_ids: tuple[int, ...] = field(default=())

    def __post_init__(self):
        reported = _as_matrix(self.reported, "reported")
        truth = _as_matrix(self.truth, "truth")
        if reported.shape != truth.shape:
            raise ValueError(
                f"reported {reported.shape} and truth {truth.shape} differ")
        if reported.shape[1] < 1:
            raise ValueError("profile needs at least one outcome")
        ids = self.agent_ids or tuple(range(reported.shape[0]))
        if len(ids) != reported.shape[0]:
            raise ValueError("agent_ids length must match row count")
        reported.setflags(write=False)
        truth.setflags(write=False)
        object.__setattr__(self, "reported", reported)
        object.__setattr__(self, "truth", truth)
        object.__setattr__(self, "agent_ids", tuple(int(i) for i in ids))

    @classmethod
    def truthful(cls, values) -> "ValuationProfile":
        arr = _as_matrix(values, "values")
        return cls(arr, arr.copy())

    @property
    def n(self) -> int:
        return self.reported.shape[0]

    @property
    def m(self) -> int:
        return self.reported.shape[1]

    @property
    def truthful_mask(self) -> np.ndarray:
        return np.all(self.reported == self.truth, axis=1)

    def with_reported_row(self, agent: int, row) -> "ValuationProfile":
        """Copy of the profile with one reported row replaced."""
        pos = self.agent_ids.index(agent)
        reported = self.reported.copy()
        reported[pos] = np.asarray(row, dtype=np.float64)
        return ValuationProfile(reported, self.truth.copy(), self.agent_ids)


def weight_vector(profile: ValuationProfile, use_truth: bool = False) -> WeightVector:
    """Per-outcome total valuation: column sums of the selected matrix."""
    matrix = profile.truth if use_truth else profile.reported
    return matrix.sum(axis=0) if profile.n else np.zeros(profile.m)


def exclude(profile: ValuationProfile, agents: Iterable[int]) -> ValuationProfile:
    """Profile with the given agents' rows removed; remaining ids are kept."""
    drop = set(int(a) for a in agents)
    unknown = drop - set(profile.agent_ids)
    if unknown:
        raise IndexError(f"unknown agent ids: {sorted(unknown)}")
    keep = [pos for pos, aid in enumerate(profile.agent_ids) if aid not in drop]
    return ValuationProfile(
        profile.reported[keep].copy(),
        profile.truth[keep].copy(),
        tuple(profile.agent_ids[pos] for pos in keep),
    )


@dataclass(frozen=True)
class Allocation:
    """Sub-distribution over m outcomes plus explicit null mass."""

    probs: np.ndarray
    null_mass: float = 0.0

    def __post_init__(self):
        probs = np.ascontiguousarray(np.asarray(self.probs, dtype=np.float64))
        if probs.ndim != 1:
            raise ValueError("probs must be a vector")
        null = float(self.null_mass)
        if np.any(probs < -ALLOCATION_TOL) or null < -ALLOCATION_TOL:
            raise ValueError("allocation entries must be nonnegative")
        total = probs.sum() + null
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"allocation mass {total} is not 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "null_mass", null)

    @property
    def m(self) -> int:
        return self.probs.shape[0]

    @property
    def is_full(self) -> bool:
        return self.null_mass == 0.0

    def to_json(self) -> dict:
        return {"probs": self.probs.tolist(), "null": self.null_mass}


def tv_distance(a: Allocation, b: Allocation) -> float:
    """Total variation distance, treating the null mass as outcome m."""
    if a.m != b.m:
        raise ValueError(f"allocation sizes differ: {a.m} vs {b.m}")
    return float(0.5 * (np.abs(a.probs - b.probs).sum()
                        + abs(a.null_mass - b.null_mass)))


class VerificationOracle:
    """Pure truthfulness oracle with an append-only call log.

    ``verify(i)`` always returns the same bit for agent ``i`` regardless of
    call order; every call is logged.  Each trial owns its own instance.
    """

    def __init__(self, truth_bits, agent_ids: Sequence[int] | None = None):
        bits = np.asarray(truth_bits, dtype=bool)
        ids = tuple(agent_ids) if agent_ids is not None else tuple(range(bits.shape[0]))
        if len(ids) != bits.shape[0]:
            raise ValueError("agent_ids length must match truth_bits")
        self._bits = dict(zip(ids, bits.tolist()))
        self.call_log: list[int] = []

    @classmethod
    def for_profile(cls, profile: ValuationProfile) -> "VerificationOracle":
        return cls(profile.truthful_mask, profile.agent_ids)

    @property
    def truth_bits(self) -> dict[int, bool]:
        return dict(self._bits)

    def verify(self, agent: int) -> bool:
        self.call_log.append(int(agent))
        return self._bits[int(agent)]


# ---------------------------------------------------------------------------
# Profile file format: {"m": int, "reported": [[...]], "truth": [[...]]?}
# ---------------------------------------------------------------------------

def profile_to_json(profile: ValuationProfile) -> dict:
    return {
        "m": profile.m,
        "reported": profile.reported.tolist(),
        "truth": profile.truth.tolist(),
    }


def profile_from_json(data: dict) -> ValuationProfile:
    if "reported" not in data:
        raise ValueError("profile JSON needs a 'reported' matrix")
    reported = np.asarray(data["reported"], dtype=np.float64)
    if reported.ndim != 2:
        raise ValueError("'reported' must be a matrix")
    m = int(data.get("m", reported.shape[1] if reported.size else 0))
    if reported.size and reported.shape[1] != m:
        raise ValueError(f"'m'={m} does not match reported width {reported.shape[1]}")
    truth = np.asarray(data.get("truth", reported), dtype=np.float64)
    return ValuationProfile(reported, truth)


def load_profile(path) -> ValuationProfile:
    with open(path) as fh:
        return profile_from_json(json.load(fh))


def save_profile(profile: ValuationProfile, path) -> None:
    with open(path, "w") as fh:
        json.dump(profile_to_json(profile), fh, sort_keys=True)
        fh.write("\n")


def kernel_backend() -> str:
    """'numba' when kernels are JIT-compiled, 'numpy' for the fallback."""
    return "numba" if _kernels.NUMBA_ENABLED else "numpy"
