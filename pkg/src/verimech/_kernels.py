"""Hot sampling loops shared by the single-run mechanism API and the batch auditors.

Every function here is written as a plain scalar/loop routine over numpy arrays
so that numba can compile it unchanged.  At import time the public kernels are
wrapped with ``@njit(cache=True)`` unless numba is unavailable or the
environment variable ``VERIMECH_NUMBA`` is set to ``0``/``false``/``off``; the
fallback runs the identical source interpreted (wrapped in ``np.errstate`` to
silence uint64 wraparound warnings), so both backends consume randomness
draw-for-draw identically and produce bit-equal results.

Randomness: a SplitMix64 stream per (seed, stream_id).  Batch drivers give
trial ``t`` the stream ``stream_base + t``, so trials are independent of
execution order and of the total trial count.
"""

from __future__ import annotations

import math
import os

import numpy as np

# SplitMix64 constants (Steele, Lea & Flood's generator).
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_A = np.uint64(0xBF58476D1CE4E5B9)
_MIX_B = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 2.0 ** -53


def numba_enabled() -> bool:
    flag = os.environ.get("VERIMECH_NUMBA", "").strip().lower()
    if flag in {"0", "false", "off", "no"}:
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


# ---------------------------------------------------------------------------
# RNG primitives
# ---------------------------------------------------------------------------

def mix64(z):
    z = (z ^ (z >> _S30)) * _MIX_A
    z = (z ^ (z >> _S27)) * _MIX_B
    return z ^ (z >> _S31)


def stream_state(seed, stream_id):
    """Initial SplitMix64 state for an independent (seed, stream_id) stream."""
    return mix64(mix64(seed + _GOLDEN) + stream_id * _MIX_A)


def next_double(state):
    """Advance the stream; returns (state, uniform double in [0, 1))."""
    state = state + _GOLDEN
    return state, (mix64(state) >> _S11) * _INV53


def _uniform_index(n, state):
    state, u = next_double(state)
    idx = int(u * n)
    if idx >= n:
        idx = n - 1
    return state, idx


def _categorical(weights, total, state):
    """Index drawn proportionally to ``weights``; ``total`` must be their sum
    accumulated in index order (the scan then provably terminates)."""
    state, u = next_double(state)
    target = u * total
    n = weights.shape[0]
    acc = 0.0
    for idx in range(n):
        acc += weights[idx]
        if target < acc:
            return state, idx
    for idx in range(n - 1, -1, -1):
        if weights[idx] > 0.0:
            return state, idx
    return state, n - 1


def _draw_agent(reported, active, j, wj, state):
    """Active agent drawn with probability reported[i, j] / wj."""
    state, u = next_double(state)
    target = u * wj
    n = reported.shape[0]
    acc = 0.0
    for i in range(n):
        if active[i]:
            acc += reported[i, j]
            if target < acc:
                return state, i
    for i in range(n - 1, -1, -1):
        if active[i] and reported[i, j] > 0.0:
            return state, i
    return state, -1


def poisson_draw(lam, state):
    """Poisson(lam) via unit-rate arrival counting; safe for large lam."""
    if lam <= 0.0:
        return state, 0
    k = 0
    acc = 0.0
    while True:
        state, u = next_double(state)
        acc += -math.log(1.0 - u)
        if acc > lam:
            return state, k
        k += 1


# ---------------------------------------------------------------------------
# Shared helpers over valuation matrices
# ---------------------------------------------------------------------------

def _active_weights(reported, active, w):
    n, m = reported.shape
    for j in range(m):
        w[j] = 0.0
    for i in range(n):
        if active[i]:
            for j in range(m):
                w[j] += reported[i, j]


def _vec_max(w):
    m = w.shape[0]
    best = 0.0
    for j in range(m):
        if w[j] > best:
            best = w[j]
    return best


def partial_power_mass(w, l, r):
    """Total outcome probability of the curved power rule: sum_j f_j(w)."""
    m = w.shape[0]
    wmax = _vec_max(w)
    if wmax <= 0.0:
        return 0.0
    s_l = 0.0
    s_l1 = 0.0
    for j in range(m):
        a = w[j] / wmax
        s_l += a ** l
        s_l1 += a ** (l + 1)
    norm = s_l1 ** (l / (l + 1.0))
    return (1.0 - 1.0 / r) * s_l / (m ** (1.0 / (l + 1.0)) * norm)


def bot_probabilities_kernel(w_full, w_t, l, r):
    """Correction probabilities for the liar-detected branch.

    Returns (p, p_null, pr_bot) where p[j] is the probability of outcome j
    conditional on the branch being taken, p_null the remaining mass, and
    pr_bot the unconditional probability of reaching the branch.  Requires
    max(w_full) > 0; pr_bot may be 0 when w_t == w_full (caller's error case).
    """
    m = w_full.shape[0]
    wmax = _vec_max(w_full)
    s_full_l = 0.0
    s_full_l1 = 0.0
    s_t_l1 = 0.0
    for j in range(m):
        a = w_full[j] / wmax
        s_full_l += a ** l
        s_full_l1 += a ** (l + 1)
        at = w_t[j] / wmax
        s_t_l1 += at ** (l + 1)
    rho = s_t_l1 / s_full_l1
    rho_r = rho ** r
    minv = m ** (-1.0 / (l + 1.0))
    coef = (1.0 - 1.0 / r) * minv
    norm_full = s_full_l1 ** (l / (l + 1.0))
    mass_full = coef * s_full_l / norm_full

    pr_nobot_total = rho_r * (1.0 - mass_full)  # null without any liar caught
    p = np.empty(m)
    for j in range(m):
        at = w_t[j] / wmax
        p[j] = rho_r * coef * (at ** l) / norm_full  # outcome j, no liar caught
        pr_nobot_total += p[j]
    pr_bot = 1.0 - pr_nobot_total
    if pr_bot <= 0.0:
        # unreachable branch (no effective misreports); caller raises
        for j in range(m):
            p[j] = 0.0
        return p, 1.0, pr_bot

    if s_t_l1 > 0.0:
        norm_t = s_t_l1 ** (l / (l + 1.0))
        for j in range(m):
            at = w_t[j] / wmax
            p[j] = (coef * (at ** l) / norm_t - p[j]) / pr_bot
    else:
        for j in range(m):
            p[j] = (0.0 - p[j]) / pr_bot
    p_sum = 0.0
    for j in range(m):
        p_sum += p[j]
    return p, 1.0 - p_sum, pr_bot


# ---------------------------------------------------------------------------
# Term samplers (single draw, no verification)
# ---------------------------------------------------------------------------

def power_term(reported, active, l, state, tuple_out):
    """Outcome j and tuple of l agents drawn proportionally to the product of
    their column-j valuations.  Returns (state, j); -1 if the active weights
    are all zero with l >= 1 (caller handles the degenerate fallback)."""
    n, m = reported.shape
    w = np.empty(m)
    _active_weights(reported, active, w)
    if l == 0:
        state, j = _uniform_index(m, state)
        return state, j
    wmax = _vec_max(w)
    if wmax <= 0.0:
        return state, -1
    pw = np.empty(m)
    tot = 0.0
    for j in range(m):
        pw[j] = (w[j] / wmax) ** l
        tot += pw[j]
    state, j = _categorical(pw, tot, state)
    for pos in range(l):
        state, pick = _draw_agent(reported, active, j, w[j], state)
        tuple_out[pos] = pick
    return state, j


def exponential_head(reported, active, alpha, state):
    """Outcome j and tuple length ell ~ Poisson(w_j / alpha).
    Returns (state, j, ell, w_j); the witness tuple is drawn separately so
    the caller can size its buffer to ell exactly."""
    n, m = reported.shape
    w = np.empty(m)
    _active_weights(reported, active, w)
    wmax = _vec_max(w)
    pe = np.empty(m)
    tot = 0.0
    for j in range(m):
        pe[j] = math.exp((w[j] - wmax) / alpha)
        tot += pe[j]
    state, j = _categorical(pe, tot, state)
    state, ell = poisson_draw(w[j] / alpha, state)
    return state, j, ell, w[j]


def fill_positions(reported, active, j, wj, ell, state, tuple_out):
    """Draw ell tuple positions independently, each proportional to the
    agents' column-j values; tuple_out must have length >= ell."""
    for pos in range(ell):
        state, pick = _draw_agent(reported, active, j, wj, state)
        tuple_out[pos] = pick
    return state


# ---------------------------------------------------------------------------
# Mechanism trials
# ---------------------------------------------------------------------------

def power_trial(reported, truthful, l, state, verified_order):
    """One run of the power mechanism with selective verification.

    Catches liars appearing in the sampled tuple, excludes them, and redraws
    on the reduced profile.  verified_order[:nv] records distinct verified
    agents in first-verification order.  Returns
    (state, outcome, depth, nv, nc).
    """
    n, m = reported.shape
    active = np.ones(n, np.bool_)
    is_verified = np.zeros(n, np.bool_)
    w = np.empty(m)
    pw = np.empty(m)
    nv = 0
    nc = 0
    depth = 0
    while True:
        if l == 0:
            state, j = _uniform_index(m, state)
            return state, j, depth, nv, nc
        _active_weights(reported, active, w)
        wmax = _vec_max(w)
        if wmax <= 0.0:
            state, j = _uniform_index(m, state)
            return state, j, depth, nv, nc
        tot = 0.0
        for j in range(m):
            pw[j] = (w[j] / wmax) ** l
            tot += pw[j]
        state, j = _categorical(pw, tot, state)
        caught_new = False
        for pos in range(l):
            state, pick = _draw_agent(reported, active, j, w[j], state)
            if not is_verified[pick]:
                is_verified[pick] = True
                verified_order[nv] = pick
                nv += 1
                if not truthful[pick]:
                    nc += 1
                    caught_new = True
        if not caught_new:
            return state, j, depth, nv, nc
        for i in range(n):
            if is_verified[i] and not truthful[i]:
                active[i] = False
        depth += 1


def exponential_trial(reported, truthful, alpha, state, verified_order):
    """One run of the exponential mechanism with selective verification.
    Returns (state, outcome, depth, nv, nc)."""
    n, m = reported.shape
    active = np.ones(n, np.bool_)
    is_verified = np.zeros(n, np.bool_)
    w = np.empty(m)
    pe = np.empty(m)
    nv = 0
    nc = 0
    depth = 0
    while True:
        _active_weights(reported, active, w)
        wmax = _vec_max(w)
        tot = 0.0
        for j in range(m):
            pe[j] = math.exp((w[j] - wmax) / alpha)
            tot += pe[j]
        state, j = _categorical(pe, tot, state)
        state, ell = poisson_draw(w[j] / alpha, state)
        caught_new = False
        for pos in range(ell):
            state, pick = _draw_agent(reported, active, j, w[j], state)
            if not is_verified[pick]:
                is_verified[pick] = True
                verified_order[nv] = pick
                nv += 1
                if not truthful[pick]:
                    nc += 1
                    caught_new = True
        if not caught_new:
            return state, j, depth, nv, nc
        for i in range(n):
            if is_verified[i] and not truthful[i]:
                active[i] = False
        depth += 1


def partial_power_trial(reported, truthful, l, r, state, verified_order):
    """One run of the curved power mechanism with the liar-detected branch.

    Stage A draws r screening tuples of length l+1; stage B draws the outcome
    tuple of length l.  Any liar caught diverts to the correction branch:
    verify everyone, then redraw from the correction probabilities.  Returns
    (state, outcome, bot, nv, nc) with outcome == -1 for the null result.
    """
    n, m = reported.shape
    all_active = np.ones(n, np.bool_)
    is_verified = np.zeros(n, np.bool_)
    w = np.empty(m)
    pw = np.empty(m)
    nv = 0
    nc = 0
    _active_weights(reported, all_active, w)
    wmax = _vec_max(w)
    if wmax <= 0.0:
        return state, -1, 0, nv, nc

    tot1 = 0.0
    for j in range(m):
        pw[j] = (w[j] / wmax) ** (l + 1)
        tot1 += pw[j]
    caught = False
    for _ in range(r):
        state, j = _categorical(pw, tot1, state)
        for pos in range(l + 1):
            state, pick = _draw_agent(reported, all_active, j, w[j], state)
            if not is_verified[pick]:
                is_verified[pick] = True
                verified_order[nv] = pick
                nv += 1
                if not truthful[pick]:
                    nc += 1
                    caught = True

    outcome = -1
    if not caught:
        mass = partial_power_mass(w, l, r)
        state, u = next_double(state)
        if u < 1.0 - mass:
            return state, -1, 0, nv, nc
        totl = 0.0
        for j in range(m):
            pw[j] = (w[j] / wmax) ** l
            totl += pw[j]
        state, j = _categorical(pw, totl, state)
        for pos in range(l):
            state, pick = _draw_agent(reported, all_active, j, w[j], state)
            if not is_verified[pick]:
                is_verified[pick] = True
                verified_order[nv] = pick
                nv += 1
                if not truthful[pick]:
                    nc += 1
                    caught = True
        if not caught:
            return state, j, 0, nv, nc

    # Liar-detected branch: verify everyone, rebuild the truthful weights,
    # and redraw so the unconditional law matches the liar-free rule.
    for i in range(n):
        if not is_verified[i]:
            is_verified[i] = True
            verified_order[nv] = i
            nv += 1
            if not truthful[i]:
                nc += 1
    w_t = np.empty(m)
    for j in range(m):
        w_t[j] = 0.0
    for i in range(n):
        if truthful[i]:
            for j in range(m):
                w_t[j] += reported[i, j]
    p, p_null, pr_bot = bot_probabilities_kernel(w, w_t, l, r)
    tot = 0.0
    for j in range(m):
        if p[j] < 0.0:
            p[j] = 0.0
        tot += p[j]
    state, u = next_double(state)
    target = u * (tot + (p_null if p_null > 0.0 else 0.0))
    acc = 0.0
    outcome = -1
    for j in range(m):
        acc += p[j]
        if target < acc:
            outcome = j
            break
    return state, outcome, 1, nv, nc


def proportional_trial(dist, agent_pts, truthful, k, n_points, state,
                       verified_order, fac_out):
    """One run of the proportional facility mechanism with verification.

    First facility uniform over active agents, each next proportional to the
    distance to the current set; facility holders are verified, caught liars
    excluded and the draw restarted.  When fewer than k agents remain each
    gets a facility; when all remaining distances vanish earlier, the set is
    filled uniformly from unused points.  Returns (state, n_fac, depth, nv, nc)
    with fac_out[:n_fac] the facility point indices.
    """
    n = agent_pts.shape[0]
    active = np.ones(n, np.bool_)
    is_verified = np.zeros(n, np.bool_)
    in_c = np.zeros(n_points, np.bool_)
    picked = np.empty(n, np.int64)
    mind = np.empty(n)
    nv = 0
    nc = 0
    depth = 0
    while True:
        n_act = 0
        for i in range(n):
            if active[i]:
                n_act += 1
        if n_act == 0:
            return state, 0, depth, nv, nc
        for p in range(n_points):
            in_c[p] = False
        n_fac = 0
        n_picked = 0
        if n_act < k:
            for i in range(n):
                if active[i]:
                    picked[n_picked] = i
                    n_picked += 1
                    pt = agent_pts[i]
                    if not in_c[pt]:
                        in_c[pt] = True
                        fac_out[n_fac] = pt
                        n_fac += 1
        else:
            state, rank = _uniform_index(n_act, state)
            first = -1
            cnt = -1
            for i in range(n):
                if active[i]:
                    cnt += 1
                    if cnt == rank:
                        first = i
                        break
            picked[0] = first
            n_picked = 1
            pt = agent_pts[first]
            in_c[pt] = True
            fac_out[0] = pt
            n_fac = 1
            for i in range(n):
                mind[i] = dist[agent_pts[i], pt]
            while n_fac < k:
                tot = 0.0
                for i in range(n):
                    if active[i]:
                        tot += mind[i]
                if tot <= 0.0:
                    while n_fac < k and n_fac < n_points:
                        n_out = n_points - n_fac
                        state, rank = _uniform_index(n_out, state)
                        cnt = -1
                        for p in range(n_points):
                            if not in_c[p]:
                                cnt += 1
                                if cnt == rank:
                                    in_c[p] = True
                                    fac_out[n_fac] = p
                                    n_fac += 1
                                    break
                    break
                state, u = next_double(state)
                target = u * tot
                acc = 0.0
                pick = -1
                for i in range(n):
                    if active[i]:
                        acc += mind[i]
                        if target < acc:
                            pick = i
                            break
                if pick < 0:
                    for i in range(n - 1, -1, -1):
                        if active[i] and mind[i] > 0.0:
                            pick = i
                            break
                picked[n_picked] = pick
                n_picked += 1
                pt = agent_pts[pick]
                in_c[pt] = True
                fac_out[n_fac] = pt
                n_fac += 1
                for i in range(n):
                    d = dist[agent_pts[i], pt]
                    if d < mind[i]:
                        mind[i] = d
        caught_new = False
        for idx in range(n_picked):
            i = picked[idx]
            if not is_verified[i]:
                is_verified[i] = True
                verified_order[nv] = i
                nv += 1
                if not truthful[i]:
                    nc += 1
                    caught_new = True
        if not caught_new:
            return state, n_fac, depth, nv, nc
        for i in range(n):
            if is_verified[i] and not truthful[i]:
                active[i] = False
        depth += 1


# ---------------------------------------------------------------------------
# Batch drivers (trial t uses stream stream_base + t)
# ---------------------------------------------------------------------------

def power_batch(reported, truthful, l, seed, stream_base, trials):
    n = reported.shape[0]
    outcomes = np.empty(trials, np.int64)
    depths = np.empty(trials, np.int64)
    nvs = np.empty(trials, np.int64)
    ncs = np.empty(trials, np.int64)
    vo = np.empty(max(n, 1), np.int64)
    for t in range(trials):
        st = stream_state(seed, stream_base + np.uint64(t))
        st, j, d, nv, nc = power_trial(reported, truthful, l, st, vo)
        outcomes[t] = j
        depths[t] = d
        nvs[t] = nv
        ncs[t] = nc
    return outcomes, depths, nvs, ncs


def exponential_batch(reported, truthful, alpha, seed, stream_base, trials):
    n = reported.shape[0]
    outcomes = np.empty(trials, np.int64)
    depths = np.empty(trials, np.int64)
    nvs = np.empty(trials, np.int64)
    ncs = np.empty(trials, np.int64)
    vo = np.empty(max(n, 1), np.int64)
    for t in range(trials):
        st = stream_state(seed, stream_base + np.uint64(t))
        st, j, d, nv, nc = exponential_trial(reported, truthful, alpha, st, vo)
        outcomes[t] = j
        depths[t] = d
        nvs[t] = nv
        ncs[t] = nc
    return outcomes, depths, nvs, ncs


def partial_power_batch(reported, truthful, l, r, seed, stream_base, trials):
    n = reported.shape[0]
    outcomes = np.empty(trials, np.int64)
    bots = np.empty(trials, np.int64)
    nvs = np.empty(trials, np.int64)
    ncs = np.empty(trials, np.int64)
    vo = np.empty(max(n, 1), np.int64)
    for t in range(trials):
        st = stream_state(seed, stream_base + np.uint64(t))
        st, j, b, nv, nc = partial_power_trial(reported, truthful, l, r, st, vo)
        outcomes[t] = j
        bots[t] = b
        nvs[t] = nv
        ncs[t] = nc
    return outcomes, bots, nvs, ncs


def uniform_batch(m, seed, stream_base, trials):
    outcomes = np.empty(trials, np.int64)
    for t in range(trials):
        st = stream_state(seed, stream_base + np.uint64(t))
        st, j = _uniform_index(m, st)
        outcomes[t] = j
    return outcomes


def proportional_batch(dist, agent_pts, truthful, k, n_points, seed,
                       stream_base, trials):
    """Facility sets returned as bitmasks over point indices (n_points <= 62)."""
    n = agent_pts.shape[0]
    masks = np.empty(trials, np.int64)
    depths = np.empty(trials, np.int64)
    nvs = np.empty(trials, np.int64)
    ncs = np.empty(trials, np.int64)
    vo = np.empty(max(n, 1), np.int64)
    fac = np.empty(max(k, n_points), np.int64)
    for t in range(trials):
        st = stream_state(seed, stream_base + np.uint64(t))
        st, n_fac, d, nv, nc = proportional_trial(
            dist, agent_pts, truthful, k, n_points, st, vo, fac)
        mask = 0
        for q in range(n_fac):
            mask |= 1 << fac[q]
        masks[t] = mask
        depths[t] = d
        nvs[t] = nv
        ncs[t] = nc
    return masks, depths, nvs, ncs


# ---------------------------------------------------------------------------
# Backend selection
# ---------------------------------------------------------------------------

NUMBA_ENABLED = numba_enabled()

_JIT_NAMES = [
    "mix64",
    "stream_state",
    "next_double",
    "_uniform_index",
    "_categorical",
    "_draw_agent",
    "poisson_draw",
    "_active_weights",
    "_vec_max",
    "partial_power_mass",
    "bot_probabilities_kernel",
    "power_term",
    "exponential_head",
    "fill_positions",
    "power_trial",
    "exponential_trial",
    "partial_power_trial",
    "proportional_trial",
    "power_batch",
    "exponential_batch",
    "partial_power_batch",
    "uniform_batch",
    "proportional_batch",
]

# Entry points called from outside this module; in fallback mode they are
# wrapped in an errstate context so uint64 wraparound stays silent.
_ENTRY_NAMES = [
    "mix64",
    "stream_state",
    "next_double",
    "poisson_draw",
    "partial_power_mass",
    "bot_probabilities_kernel",
    "power_term",
    "exponential_head",
    "fill_positions",
    "power_trial",
    "exponential_trial",
    "partial_power_trial",
    "proportional_trial",
    "power_batch",
    "exponential_batch",
    "partial_power_batch",
    "uniform_batch",
    "proportional_batch",
]

if NUMBA_ENABLED:
    from numba import njit

    for _name in _JIT_NAMES:
        globals()[_name] = njit(cache=True)(globals()[_name])
else:
    import functools

    def _quiet(fn):
        @functools.wraps(fn)
        def wrapper(*args):
            with np.errstate(over="ignore"):
                return fn(*args)
        return wrapper

    for _name in _ENTRY_NAMES:
        globals()[_name] = _quiet(globals()[_name])
