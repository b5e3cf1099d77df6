"""Command-line experiment runner.

Subcommands: ``alloc`` (closed-form rule on a profile), ``simulate`` (batch
mechanism runs to CSV + JSON summary), ``audit`` (robustness / truthfulness,
exit 1 on failure), ``facility`` (greedy / proportional vs brute force),
``tradeoff`` (parameter sweep to CSV), ``gen`` (instance generators).

All randomness flows from ``--seed``; reruns with identical arguments produce
byte-identical outputs.  Exit codes: 0 ok / audit pass, 1 audit failure,
2 usage or I/O error.  ``--config FILE`` loads a JSON object whose entries
override the flags.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import analysis, facility, instances
from .allocations import (Exponential, PartialPower, Power, RuleSpec, Uniform,
                          approximation_ratio, evaluate_rule, expected_welfare)
from .core import RngStream, kernel_backend, load_profile, weight_vector


class UsageError(Exception):
    pass


def _build_rule(args) -> RuleSpec:
    name = (args.mechanism or "").lower()
    try:
        if name == "uniform":
            return Uniform()
        if name == "power":
            if args.l is None:
                raise UsageError("power needs --l")
            return Power(args.l)
        if name in {"partial-power", "partial_power", "partial"}:
            if args.l is None or args.r is None:
                raise UsageError("partial-power needs --l and --r")
            return PartialPower(args.l, args.r)
        if name in {"exponential", "expo"}:
            if args.alpha is None:
                raise UsageError("exponential needs --alpha")
            return Exponential(args.alpha)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    raise UsageError(f"unknown mechanism {args.mechanism!r}")


def _emit(text: str, out) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
    else:
        with open(out, "w") as fh:
            fh.write(text)
            if not text.endswith("\n"):
                fh.write("\n")


def _coerce(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _json_text(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, default=_coerce)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_alloc(args) -> int:
    spec = _build_rule(args)
    profile = load_profile(args.profile)
    w = weight_vector(profile)
    alloc = evaluate_rule(spec, w)
    payload = alloc.to_json()
    payload["welfare"] = expected_welfare(w, alloc)
    if w.max() > 0:
        payload["ratio"] = approximation_ratio(w, alloc)
    _emit(_json_text(payload), args.out)
    return 0


def cmd_simulate(args) -> int:
    spec = _build_rule(args)
    profile = load_profile(args.profile)
    outcomes, bots, depths, nvs, ncs = analysis.run_trials(
        spec, profile, args.trials, args.seed, n_jobs=args.parallel)
    ok = bool(np.all(ncs <= nvs)) and bool(np.all(nvs <= profile.n))

    lines = ["trial,outcome,bot_resolved,depth,n_verified,n_liars_caught"]
    for t in range(args.trials):
        outcome = "null" if outcomes[t] < 0 else str(int(outcomes[t]))
        lines.append(f"{t},{outcome},{int(bots[t])},{int(depths[t])},"
                     f"{int(nvs[t])},{int(ncs[t])}")
    if args.out:
        _emit("\n".join(lines), args.out)

    counts = np.bincount(outcomes[outcomes >= 0], minlength=profile.m)
    caught_hist = {str(k): int(v) for k, v in
                   zip(*np.unique(ncs, return_counts=True))}
    summary = {
        "mechanism": args.mechanism,
        "trials": args.trials,
        "seed": args.seed,
        "backend": kernel_backend(),
        "frequencies": (counts / args.trials).tolist(),
        "null_frequency": float((outcomes < 0).sum() / args.trials),
        "mean_verified": float(nvs.mean()),
        "max_verified": int(nvs.max()),
        "liars_caught_histogram": caught_hist,
        "consistency_ok": ok,
    }
    sys.stdout.write(_json_text(summary) + "\n")
    return 0 if ok else 1


def cmd_audit(args) -> int:
    spec = _build_rule(args)
    profile = load_profile(args.profile)
    if args.kind == "robustness":
        report = analysis.robustness_audit(
            spec, profile, trials=args.trials, seed=args.seed,
            threshold=args.threshold, n_jobs=args.parallel,
            leak_reports=args.leak_reports)
    elif args.kind == "truthfulness":
        if args.agent is None or args.lie is None:
            raise UsageError("truthfulness audit needs --agent and --lie")
        report = analysis.truthfulness_audit(
            spec, profile, args.agent, _parse_lie(args.lie),
            trials=args.trials, seed=args.seed, n_jobs=args.parallel)
    else:
        raise UsageError(f"unknown audit kind {args.kind!r}")
    _emit(_json_text(report.to_json()), args.out)
    return 0 if report.passed else 1


def _parse_lie(text: str):
    kind, _, value = text.partition(":")
    try:
        if kind == "scale":
            return instances.Scale(float(value))
        if kind == "constant":
            return instances.Constant(float(value))
        if kind == "swap":
            j1, j2 = value.split(",")
            return instances.Swap(int(j1), int(j2))
    except ValueError as exc:
        raise UsageError(f"bad lie spec {text!r}: {exc}") from exc
    raise UsageError(f"unknown lie kind {kind!r} (scale:c, swap:j1,j2, constant:v)")


def cmd_facility(args) -> int:
    inst = facility.load_instance(args.instance)
    payload: dict = {"k": inst.k, "n": inst.n, "mechanism": args.mechanism}
    if args.mechanism == "greedy":
        result = facility.run_greedy(inst, inst.oracle())
        opt_set, opt_cost = facility.brute_force_kcenter(
            inst.agents_true, inst.k, inst.dist)
        cost = facility.max_cost(inst, result.facilities)
        payload.update(result.to_json())
        payload["max_cost"] = cost
        payload["opt_max_cost"] = opt_cost
        payload["opt_set"] = sorted(opt_set)
        payload["ratio"] = cost / opt_cost if opt_cost > 0 else 1.0
    elif args.mechanism == "proportional":
        stats = facility.proportional_empirical(inst, args.trials, args.seed)
        opt_set, opt_cost = facility.brute_force_kmedian(
            inst.agents_true, inst.k, inst.dist)
        top = sorted(stats.set_frequencies.items(),
                     key=lambda kv: (-kv[1], sorted(kv[0])))[:10]
        payload["trials"] = args.trials
        payload["seed"] = args.seed
        payload["mean_social_cost"] = stats.mean_social_cost
        payload["opt_social_cost"] = opt_cost
        payload["opt_set"] = sorted(opt_set)
        payload["mean_verified"] = stats.mean_verified
        payload["top_sets"] = [{"set": sorted(s), "freq": f} for s, f in top]
    else:
        raise UsageError(f"unknown facility mechanism {args.mechanism!r}")
    _emit(_json_text(payload), args.out)
    return 0


def cmd_tradeoff(args) -> int:
    profile = load_profile(args.profile)
    if args.family == "partial-power":
        values = []
        for chunk in args.values.split(";"):
            l, r = chunk.split(",")
            values.append((int(l), int(r)))
    elif args.family == "power":
        values = [int(v) for v in args.values.split(",")]
    else:
        values = [float(v) for v in args.values.split(",")]
    rows = analysis.tradeoff_sweep(args.family, profile, values,
                                   args.trials, args.seed,
                                   n_jobs=args.parallel)
    lines = [",".join(analysis.SWEEP_COLUMNS)]
    for row in rows:
        lines.append(",".join(str(row[col]) for col in analysis.SWEEP_COLUMNS))
    _emit("\n".join(lines), args.out)
    return 0


def cmd_gen(args) -> int:
    rng = RngStream(args.seed)
    kind = args.kind
    if kind == "random":
        profile = instances.random_profile(args.n, args.m, rng,
                                           kind=args.flavor,
                                           density=args.density)
    elif kind == "lower-bound":
        nu, delta = instances.default_lower_bound_params(args.m)
        nu = args.nu or nu
        delta = args.delta or delta
        profile = instances.lower_bound_instance(args.m, nu, delta, rng)
    elif kind == "single-minded":
        profile = instances.single_minded_instance(args.m, args.big)
    elif kind == "cppp-coverage":
        spec = instances.random_coverage_cppp(args.resources, args.k, args.n, rng)
        profile, labels = instances.cppp_profile(spec)
        payload = {"m": profile.m,
                   "reported": profile.reported.tolist(),
                   "truth": profile.truth.tolist(),
                   "outcome_labels": [list(s) for s in labels]}
        _emit(_json_text(payload), args.out)
        return 0
    elif kind == "facility-line":
        inst = instances.random_line_instance(args.n, args.k, rng)
        _emit(_json_text(facility.instance_to_json(inst)), args.out)
        return 0
    elif kind == "facility-metric":
        inst = instances.random_metric_instance(args.n, args.k,
                                                args.n_points or args.n + 2, rng)
        _emit(_json_text(facility.instance_to_json(inst)), args.out)
        return 0
    else:
        raise UsageError(f"unknown generator kind {kind!r}")
    if args.liars:
        agents = [int(a) for a in args.liars.split(",")]
        profile = instances.apply_liars(profile, agents, _parse_lie(args.lie))
    from .core import profile_to_json
    _emit(_json_text(profile_to_json(profile)), args.out)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_rule_flags(sub) -> None:
    sub.add_argument("--mechanism", required=True)
    sub.add_argument("--l", type=int, default=None)
    sub.add_argument("--r", type=int, default=None)
    sub.add_argument("--alpha", type=float, default=None)


def _add_common(sub) -> None:
    sub.add_argument("--trials", type=int, default=analysis.DEFAULT_TRIALS)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out", default=None)
    sub.add_argument("--parallel", type=int, default=1)
    sub.add_argument("--config", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="verimech",
        description="Mechanisms with selective verification: simulate and audit.")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("alloc", help="closed-form allocation on a profile")
    _add_rule_flags(p)
    p.add_argument("--profile", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_alloc)

    p = subs.add_parser("simulate", help="batch mechanism runs to CSV")
    _add_rule_flags(p)
    p.add_argument("--profile", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = subs.add_parser("audit", help="robustness or truthfulness audit")
    p.add_argument("kind", choices=["robustness", "truthfulness"])
    _add_rule_flags(p)
    p.add_argument("--profile", required=True)
    p.add_argument("--agent", type=int, default=None)
    p.add_argument("--lie", default=None)
    p.add_argument("--threshold", type=float, default=analysis.DEFAULT_TV_THRESHOLD)
    p.add_argument("--leak-reports", action="store_true",
                   help="run the broken no-verification control (should fail)")
    _add_common(p)
    p.set_defaults(func=cmd_audit)

    p = subs.add_parser("facility", help="facility mechanisms vs brute force")
    p.add_argument("--mechanism", choices=["greedy", "proportional"],
                   required=True)
    p.add_argument("--instance", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_facility)

    p = subs.add_parser("tradeoff", help="parameter sweep to CSV")
    p.add_argument("--family", choices=["power", "partial-power", "exponential"],
                   required=True)
    p.add_argument("--values", required=True,
                   help="power: 0,1,2  partial-power: 1,2;2,4  exponential: .5,1")
    p.add_argument("--profile", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_tradeoff)

    p = subs.add_parser("gen", help="emit generated instances as JSON")
    p.add_argument("--kind", required=True,
                   choices=["random", "lower-bound", "single-minded",
                            "cppp-coverage", "facility-line", "facility-metric"])
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--m", type=int, default=8)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--nu", type=int, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--big", type=float, default=1.0)
    p.add_argument("--resources", type=int, default=4)
    p.add_argument("--n-points", type=int, default=None)
    p.add_argument("--flavor", default="uniform01",
                   choices=["uniform01", "sparse", "spiked"])
    p.add_argument("--density", type=float, default=0.3)
    p.add_argument("--liars", default=None, help="comma-separated agent ids")
    p.add_argument("--lie", default="scale:2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_gen)
    return parser


def _apply_config(args) -> None:
    if getattr(args, "config", None):
        with open(args.config) as fh:
            overrides = json.load(fh)
        for key, value in overrides.items():
            setattr(args, key.replace("-", "_"), value)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config(args)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError, ValueError, KeyError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
