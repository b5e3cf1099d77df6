"""Command-line surface: outputs, determinism, exit codes."""

import json

import numpy as np
import pytest

from verimech.cli import main
from verimech.core import ValuationProfile, save_profile
from verimech.facility import MetricInstance, line_metric, save_instance


@pytest.fixture
def identity_profile(tmp_path):
    path = tmp_path / "identity.json"
    save_profile(ValuationProfile.truthful(np.eye(2)), path)
    return str(path)


@pytest.fixture
def spike_profile(tmp_path):
    path = tmp_path / "spike.json"
    save_profile(ValuationProfile.truthful([[1.0, 0.0]]), path)
    return str(path)


@pytest.fixture
def liar_profile(tmp_path):
    path = tmp_path / "liar.json"
    profile = ValuationProfile([[1, 0.2, 0.1], [30, 30, 30]],
                               [[1, 0.2, 0.1], [0.2, 0.5, 0.1]])
    save_profile(profile, path)
    return str(path)


@pytest.fixture
def line_instance_path(tmp_path):
    path = tmp_path / "inst.json"
    inst = MetricInstance(tuple(range(4)), line_metric([0, 4, 5, 10]),
                          [0, 1, 2, 3], [0, 1, 2, 3], 2)
    save_instance(inst, path)
    return str(path)


def test_alloc_power_identity(identity_profile, capsys):
    assert main(["alloc", "--mechanism", "power", "--l", "1",
                 "--profile", identity_profile]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["probs"] == [0.5, 0.5]
    assert payload["null"] == 0.0


def test_alloc_partial_power_spike(spike_profile, capsys):
    assert main(["alloc", "--mechanism", "partial-power", "--l", "1",
                 "--r", "2", "--profile", spike_profile]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["probs"][0] == pytest.approx(0.3535533905932738, abs=1e-12)
    assert payload["probs"][1] == 0.0


def test_alloc_uniform_thirds(tmp_path, capsys):
    path = tmp_path / "m3.json"
    save_profile(ValuationProfile.truthful([[1.0, 5.0, 2.0]]), path)
    assert main(["alloc", "--mechanism", "uniform",
                 "--profile", str(path)]) == 0
    payload = json.loads(capsys.readouterr().out)
    np.testing.assert_allclose(payload["probs"], [1 / 3] * 3)


def test_simulate_byte_identical_reruns(identity_profile, tmp_path, capsys):
    out1 = tmp_path / "a.csv"
    out2 = tmp_path / "b.csv"
    summaries = []
    for out in (out1, out2):
        assert main(["simulate", "--mechanism", "power", "--l", "2",
                     "--profile", identity_profile, "--trials", "500",
                     "--seed", "9", "--out", str(out)]) == 0
        summaries.append(capsys.readouterr().out)
    assert out1.read_bytes() == out2.read_bytes()
    assert summaries[0] == summaries[1]
    summary = json.loads(summaries[0])
    assert summary["max_verified"] <= 2
    assert summary["consistency_ok"] is True


def test_simulate_reports_caught_liars(liar_profile, capsys):
    assert main(["simulate", "--mechanism", "power", "--l", "3",
                 "--profile", liar_profile, "--trials", "2000",
                 "--seed", "3"]) == 0
    summary = json.loads(capsys.readouterr().out)
    hist = summary["liars_caught_histogram"]
    assert "1" in hist  # the planted liar gets caught in some trials


def test_audit_robustness_pass_and_control_failure(liar_profile, capsys):
    assert main(["audit", "robustness", "--mechanism", "power", "--l", "3",
                 "--profile", liar_profile, "--trials", "30000",
                 "--seed", "2"]) == 0
    capsys.readouterr()
    assert main(["audit", "robustness", "--mechanism", "power", "--l", "3",
                 "--profile", liar_profile, "--trials", "30000",
                 "--seed", "2", "--leak-reports"]) == 1
    payload = json.loads(capsys.readouterr().out)
    assert payload["pass"] is False


def test_audit_truthfulness(identity_profile, capsys):
    assert main(["audit", "truthfulness", "--mechanism", "exponential",
                 "--alpha", "0.5", "--profile", identity_profile,
                 "--agent", "0", "--lie", "scale:4", "--trials", "20000",
                 "--seed", "5"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["kind"] == "truthfulness" and payload["pass"] is True


def test_facility_greedy_reports_brute_force(line_instance_path, capsys):
    assert main(["facility", "--mechanism", "greedy",
                 "--instance", line_instance_path]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["max_cost"] == 5.0
    assert payload["opt_max_cost"] == 4.0
    assert payload["ratio"] <= 2.0


def test_facility_proportional_summary(line_instance_path, capsys):
    assert main(["facility", "--mechanism", "proportional",
                 "--instance", line_instance_path, "--trials", "5000",
                 "--seed", "4"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["mean_verified"] == 2.0
    assert payload["mean_social_cost"] >= payload["opt_social_cost"] - 1e-9


def test_tradeoff_writes_csv(identity_profile, tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["tradeoff", "--family", "power", "--values", "0,1,3",
                 "--profile", identity_profile, "--trials", "2000",
                 "--seed", "6", "--out", str(out)]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0].startswith("family,parameter,analytic_bound")
    assert len(lines) == 4


def test_gen_kinds_and_determinism(tmp_path):
    for kind, extra in [("random", []), ("lower-bound", ["--m", "4"]),
                        ("single-minded", ["--m", "3", "--big", "100"]),
                        ("cppp-coverage", ["--resources", "4", "--k", "2"]),
                        ("facility-line", ["--n", "4", "--k", "2"]),
                        ("facility-metric", ["--n", "3", "--k", "1"])]:
        a = tmp_path / f"{kind}-a.json"
        b = tmp_path / f"{kind}-b.json"
        for out in (a, b):
            assert main(["gen", "--kind", kind, "--seed", "7",
                         "--out", str(out), *extra]) == 0
        assert a.read_bytes() == b.read_bytes()
        json.loads(a.read_text())


def test_gen_with_liars(tmp_path):
    out = tmp_path / "liars.json"
    assert main(["gen", "--kind", "random", "--n", "4", "--m", "3",
                 "--seed", "8", "--liars", "0,2", "--lie", "scale:3",
                 "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    reported = np.array(data["reported"])
    truth = np.array(data["truth"])
    mask = np.all(reported == truth, axis=1)
    np.testing.assert_array_equal(mask, [False, True, False, True])


def test_usage_errors_exit_two(tmp_path, capsys):
    missing = str(tmp_path / "nope.json")
    assert main(["alloc", "--mechanism", "power", "--l", "1",
                 "--profile", missing]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["alloc", "--mechanism", "uniform", "--profile", str(bad)]) == 2
    good = tmp_path / "ok.json"
    save_profile(ValuationProfile.truthful([[1.0]]), good)
    assert main(["alloc", "--mechanism", "martian", "--profile", str(good)]) == 2
    assert main(["alloc", "--mechanism", "power", "--profile", str(good)]) == 2
    capsys.readouterr()


def test_config_overrides_flags(identity_profile, tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"trials": 100, "seed": 42}))
    out = tmp_path / "cfg.csv"
    assert main(["simulate", "--mechanism", "power", "--l", "1",
                 "--profile", identity_profile, "--trials", "99999",
                 "--seed", "1", "--out", str(out),
                 "--config", str(config)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["trials"] == 100 and summary["seed"] == 42
    assert len(out.read_text().strip().splitlines()) == 101
