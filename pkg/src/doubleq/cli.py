"""``doubleq`` command line: oracle, bounds, run, ensemble, covering, overestimate.

Exit status is 0 when every configured check passes, 1 when a check fails and
2 for unusable input (bad flags, malformed or invalid configs).
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .harness.checks import measure_covering, sa2l_spot_check
from .harness.config import ConfigError, ExperimentConfig, load_config, parse_json_text
from .harness.ensemble import SCHEMA_VERSION, TrialError, canonical_dumps, run_ensemble
from .harness.probe import overestimation_probe
from .harness.trial import prepare, run_trial
from .mdp import bellman_apply, load_mdp, optimal_q, sup_norm_diff
from .theory import (C_MIN_KINDS, TheoryDomainError, TheoryParams, bounds_report, c_admissible,
                     SYNC_KINDS)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _seed_range(text: str) -> list[int]:
    lo, sep, hi = text.partition("..")
    try:
        if not sep:
            return [int(text)]
        lo_i, hi_i = int(lo), int(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N..M, got {text!r}") from None
    if hi_i < lo_i:
        raise argparse.ArgumentTypeError(f"empty seed range {text!r}")
    return list(range(lo_i, hi_i + 1))


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _write(doc: dict, out: str | None, name: str) -> str:
    text = canonical_dumps(doc) if "generated_at" not in doc else json.dumps(doc, sort_keys=True, indent=1) + "\n"
    if out is None:
        sys.stdout.write(text)
        return "-"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    target = path / name
    target.write_text(text)
    return str(target)


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if getattr(args, "seeds", None) is not None:
        changes["seeds"] = args.seeds
    elif getattr(args, "seed", None) is not None:
        changes["seeds"] = [args.seed]
    if getattr(args, "stride", None) is not None:
        changes["stride"] = args.stride
    if getattr(args, "trackers", None) is not None:
        changes["trackers"] = args.trackers
    if getattr(args, "parallel", None) is not None:
        changes["parallel"] = args.parallel
    if getattr(args, "out", None) is not None:
        changes["out_dir"] = args.out
    return config.with_updates(**changes) if changes else config


def _load(args) -> ExperimentConfig:
    if args.config is None:
        raise ConfigError("--config is required")
    return _apply_overrides(load_config(args.config), args)


def _status(passed: bool) -> int:
    return EXIT_OK if passed else EXIT_FAIL


# --- subcommands --------------------------------------------------------------

def cmd_oracle(args) -> int:
    if args.mdp is not None:
        mdp, tol = load_mdp(args.mdp), args.tol
    else:
        config = _load(args)
        mdp, tol = config.mdp.build(), config.oracle_tol
    q_star = optimal_q(mdp, tol=tol)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "oracle",
        "mdp": mdp.name,
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "gamma": mdp.gamma,
        "tol": tol,
        "bellman_residual": sup_norm_diff(bellman_apply(mdp, q_star), q_star),
        "q_star": q_star.tolist(),
    }
    where = _write(doc, args.out, "qstar.json")
    if where != "-":
        print(f"wrote {where}")
    return EXIT_OK


def cmd_bounds(args) -> int:
    if args.config is None:
        raise ConfigError("--config is required")
    doc = parse_json_text(Path(args.config).read_text(), args.config)
    if not isinstance(doc, dict):
        raise ConfigError("bounds config must be a JSON object")
    fields = set(TheoryParams.__dataclass_fields__)
    extra = {"tau_1", "n_states", "n_actions", "n_blocks", "sequences"}
    unknown = set(doc) - fields - extra
    if unknown:
        raise ConfigError(f"unknown fields: {sorted(unknown)}")
    for required in ("gamma", "epsilon", "tau_1", "n_states", "n_actions"):
        if required not in doc:
            raise ConfigError(f"{required}: field required")
    sequences = doc.get("sequences", ["g", "d"])
    if not set(sequences) <= {"g", "d"} or not sequences:
        raise ConfigError("sequences: must be a non-empty subset of ['g', 'd']")
    tp = {k: v for k, v in doc.items() if k in fields}
    if "c" not in tp:
        kinds = SYNC_KINDS if "d" in sequences else ("sync-g",)
        tp["c"] = 1.0
        params = TheoryParams(**tp)
        params.validate(need_d="d" in sequences)
        tp["c"] = c_admissible(kinds, params.kappa, params.delta_slack, doc["tau_1"], params.omega)
    params = TheoryParams(**tp)
    params.validate(need_d="d" in sequences)
    report = bounds_report(params, tau_1=doc["tau_1"], n_states=doc["n_states"],
                           n_actions=doc["n_actions"], n_blocks=doc.get("n_blocks"))
    report = {"schema_version": SCHEMA_VERSION, "kind": "bounds", "c_kinds": list(C_MIN_KINDS), **report}
    where = _write(report, args.out, "bounds.json")
    if where != "-":
        print(f"wrote {where}")
    return EXIT_OK


def _report_ensemble(report, args, name: str, kind: str) -> int:
    doc = report.to_dict()
    doc["kind"] = kind
    for check, res in sorted(report.checks.items()):
        print(f"[{'PASS' if res['passed'] else 'FAIL'}] {check}", file=sys.stderr)
    where = _write(doc, args.out, name)
    if where != "-":
        print(f"wrote {where}")
    return _status(report.passed)


def cmd_run(args) -> int:
    config = _load(args)
    seed = config.seed_list()[0]
    report = run_ensemble(config, [seed], parallel=1)
    if args.out is not None:
        trace = run_trial(config, seed)
        Path(args.out).mkdir(parents=True, exist_ok=True)
        trace.to_csv(Path(args.out) / f"trace_seed{seed}.csv")
    return _report_ensemble(report, args, "report.json", "run")


def cmd_ensemble(args) -> int:
    config = _load(args)
    report = run_ensemble(config)
    return _report_ensemble(report, args, "report.json", "ensemble")


def cmd_covering(args) -> int:
    config = _load(args)
    if config.algorithm != "async-double":
        raise ConfigError("algorithm: covering is measured on asynchronous runs ('async-double')")
    prep = prepare(config)
    n_pairs = prep.mdp.n_states * prep.mdp.n_actions
    results = []
    passed = True
    for seed in config.seed_list():
        trace = run_trial(config.with_updates(stride=1), seed, prep)
        tables = trace.chose[:-1]
        pairs = trace.s[:-1] * prep.mdp.n_actions + trace.a[:-1]
        cov = measure_covering(tables, pairs, n_pairs)
        entry = {"seed": seed, **{k: (None if math.isinf(v) else v) for k, v in cov.items()}}
        ok = math.isfinite(cov["L"])
        if ok and 2 * cov["L"] <= len(pairs):
            spot = sa2l_spot_check(pairs, n_pairs, cov["L"], np.random.default_rng(seed))
            entry["sa2l_failures"] = spot["failures"]
            ok = not spot["failures"]
        if config.exploration.kind == "round-robin":
            entry["expected_L"] = n_pairs
            ok = ok and cov["L"] == n_pairs
        entry["passed"] = ok
        passed = passed and ok
        results.append(entry)
    doc = {"schema_version": SCHEMA_VERSION, "kind": "covering", "config": json.loads(config.to_json()),
           "exploration": config.exploration.kind, "n_pairs": n_pairs, "seeds": results,
           "passed": passed}
    print(f"[{'PASS' if passed else 'FAIL'}] covering", file=sys.stderr)
    where = _write(doc, args.out, "covering.json")
    if where != "-":
        print(f"wrote {where}")
    return _status(passed)


def cmd_overestimate(args) -> int:
    config = _load(args)
    if config.horizon is None:
        raise ConfigError("horizon: the overestimation probe needs a fixed horizon")
    double = config.algorithm if config.algorithm != "vanilla" else "sync-double"
    mdp = config.mdp.build()
    stats = overestimation_probe(mdp, ["vanilla", double], config.horizon, config.seed_list(),
                                 omega=config.omega)
    passed = (stats["algorithms"]["vanilla"]["positive_at_n_sigma"]
              and stats["differences"][double]["baseline_exceeds_at_n_sigma"])
    doc = {"schema_version": SCHEMA_VERSION, "kind": "overestimate",
           "config": json.loads(config.to_json()), **stats, "passed": bool(passed)}
    print(f"[{'PASS' if passed else 'FAIL'}] overestimation", file=sys.stderr)
    where = _write(doc, args.out, "overestimate.json")
    if where != "-":
        print(f"wrote {where}")
    return _status(passed)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="doubleq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, run_flags=True):
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--out", metavar="DIR", help="write outputs here instead of stdout")
        if run_flags:
            p.add_argument("--seed", type=int, metavar="N")
            p.add_argument("--seeds", type=_seed_range, metavar="N..M")
            p.add_argument("--stride", type=int, metavar="K")
            p.add_argument("--trackers", type=_on_off, metavar="on|off")
            p.add_argument("--parallel", type=int, metavar="P")

    p = sub.add_parser("oracle", help="compute Q* by value iteration")
    common(p, run_flags=False)
    p.add_argument("--mdp", metavar="PATH", help="MDP JSON file (instead of --config)")
    p.add_argument("--tol", type=float, default=1e-12)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("bounds", help="evaluate constants and bounds for a parameter JSON")
    common(p, run_flags=False)
    p.set_defaults(func=cmd_bounds)

    for name, func, text in (("run", cmd_run, "a single seeded trial"),
                             ("ensemble", cmd_ensemble, "a seeded Monte-Carlo ensemble"),
                             ("covering", cmd_covering, "measure the covering number"),
                             ("overestimate", cmd_overestimate, "vanilla vs double bias probe")):
        p = sub.add_parser(name, help=text)
        common(p)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, TheoryDomainError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except TrialError as err:
        print(f"error: trial failed for {err}", file=sys.stderr)
        return EXIT_FAIL
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
