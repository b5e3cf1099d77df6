"""Backend equivalence (JIT vs interpreted fallback) and RNG primitives."""

import json
import os
import subprocess
import sys
import textwrap

import numpy as np
import pytest

from verimech import _kernels
from verimech.analysis import run_trials
from verimech.allocations import Exponential, PartialPower, Power, Uniform
from verimech.core import ValuationProfile, kernel_backend

DIGEST_SCRIPT = textwrap.dedent("""
    import json
    import numpy as np
    import verimech as vm
    from verimech import analysis

    prof = vm.ValuationProfile([[1, 0.2, 0], [0.3, 0.9, 0.1], [5, 5, 5]],
                               [[1, 0.2, 0], [0.3, 0.9, 0.1], [0, 0.5, 2.0]])
    digest = {"backend": vm.kernel_backend()}
    for name, spec in [("power", vm.Power(2)), ("expo", vm.Exponential(0.7)),
                       ("pp", vm.PartialPower(1, 2)), ("uni", vm.Uniform())]:
        rows = analysis.run_trials(spec, prof, 300, seed=55)
        digest[name] = [arr.tolist() for arr in rows]
    inst = vm.random_line_instance(5, 2, vm.RngStream(9))
    stats = vm.proportional_empirical(inst, 300, seed=66)
    digest["prop"] = sorted((sorted(s), p) for s, p in stats.set_frequencies.items())
    print(json.dumps(digest, sort_keys=True))
""")


def _digest(extra_env):
    env = dict(os.environ)
    env.update(extra_env)
    out = subprocess.run([sys.executable, "-c", DIGEST_SCRIPT], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def test_fallback_backend_is_bit_identical():
    jit = _digest({"VERIMECH_NUMBA": "1"})
    plain = _digest({"VERIMECH_NUMBA": "0"})
    jit.pop("backend")  # "numba", or "numpy" where numba is unavailable
    assert plain.pop("backend") == "numpy"
    assert jit == plain


def test_current_backend_reported():
    assert kernel_backend() in {"numba", "numpy"}


# ---------------------------------------------------------------------------
# RNG primitives
# ---------------------------------------------------------------------------

def test_stream_states_differ_across_trials():
    states = {int(_kernels.stream_state(np.uint64(3), np.uint64(t)))
              for t in range(1000)}
    assert len(states) == 1000


def test_poisson_moments():
    lam = 3.0
    state = _kernels.stream_state(np.uint64(1), np.uint64(0))
    draws = np.empty(20_000)
    for i in range(draws.shape[0]):
        state, k = _kernels.poisson_draw(lam, np.uint64(int(state) & (2**64 - 1)))
        draws[i] = k
    assert draws.mean() == pytest.approx(lam, rel=0.05)
    assert draws.var() == pytest.approx(lam, rel=0.1)


def test_poisson_zero_rate():
    state = _kernels.stream_state(np.uint64(1), np.uint64(1))
    state2, k = _kernels.poisson_draw(0.0, state)
    assert k == 0
    assert int(state2) == int(state)  # no draws consumed


def test_poisson_large_rate_no_underflow():
    state = _kernels.stream_state(np.uint64(2), np.uint64(0))
    total = 0
    for i in range(50):
        state, k = _kernels.poisson_draw(800.0, np.uint64(int(state) & (2**64 - 1)))
        total += k
    assert total / 50 == pytest.approx(800.0, rel=0.05)


# ---------------------------------------------------------------------------
# Per-trial streams: results do not depend on batch size or chunking
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("spec", [Power(2), Exponential(0.6),
                                  PartialPower(1, 2), Uniform()])
def test_trial_records_are_prefix_stable(spec):
    prof = ValuationProfile([[1, 0.2], [0.3, 0.9], [4, 4]],
                            [[1, 0.2], [0.3, 0.9], [0, 0.5]])
    full = run_trials(spec, prof, 40, seed=31)
    short = run_trials(spec, prof, 25, seed=31)
    for a, b in zip(full, short):
        np.testing.assert_array_equal(a[:25], b)


def test_stream_base_offsets_trials():
    prof = ValuationProfile.truthful([[1, 0.2], [0.3, 0.9]])
    full = run_trials(Power(2), prof, 30, seed=8, stream_base=0)
    tail = run_trials(Power(2), prof, 20, seed=8, stream_base=10)
    for a, b in zip(full, tail):
        np.testing.assert_array_equal(a[10:], b)
