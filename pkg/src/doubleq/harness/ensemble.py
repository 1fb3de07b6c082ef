"""Seeded Monte-Carlo ensembles and their JSON reports."""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import lru_cache
from pathlib import Path

import numpy as np

from ..theory import derive_constants
from .checks import check_envelopes, measure_covering, split_within_band, update_counts
from .config import CHECK_NAMES, ExperimentConfig
from .trial import Prepared, complete_blocks, prepare, run_trial

SCHEMA_VERSION = 1
SPLIT_PASS_RATE = 0.99
BOUND_TOL = 1e-12


class TrialError(RuntimeError):
    def __init__(self, seed: int, cause: BaseException):
        super().__init__(f"seed {seed}: {type(cause).__name__}: {cause}")
        self.seed = seed


@lru_cache(maxsize=4)
def _prepared_for(config_json: str) -> Prepared:
    return prepare(ExperimentConfig.model_validate_json(config_json))


def summarize_trace(trace, prep: Prepared) -> dict:
    """Per-seed results; the only thing shipped back from a worker."""
    config = prep.config
    mdp = prep.mdp
    consts = derive_constants(mdp.gamma, mdp.r_max)
    q_ceiling = mdp.r_max / (1.0 - mdp.gamma)
    double = config.algorithm != "vanilla"
    out = {
        "seed": trace.seed,
        "final_error": float(trace.final_error),
        "final_ok": bool(trace.final_error <= config.epsilon),
        "qmax_all": trace.qmax_all,
        "errmax_all": trace.errmax_all,
        "max_abs_reward": trace.max_abs_reward,
        "bounded": bool(trace.qmax_all <= q_ceiling + BOUND_TOL
                        and trace.errmax_all <= consts.v_max + BOUND_TOL
                        and trace.max_abs_reward <= mdp.r_max + BOUND_TOL),
        "total_a": trace.total_a_updates if double else None,
        "split_ok": split_within_band(trace.total_a_updates, trace.horizon) if double else None,
        **trace.counts,
    }
    blocks = complete_blocks(prep.schedule, trace.horizon)
    if blocks is not None:
        env = {}
        if double:
            env["g"] = check_envelopes(trace, blocks, consts, "uBA-vs-G")
            env["sigma_d"] = check_envelopes(trace, blocks, consts, "uBA-vs-sigmaD")
        env["d"] = check_envelopes(trace, blocks, consts, "r-vs-D")
        out["envelopes"] = env
        if double:
            kappa = config.schedule.kappa if config.schedule is not None else 0.8
            out["update_blocks"] = update_counts(trace, blocks, kappa)
    if config.algorithm == "async-double":
        n_a = mdp.n_actions
        if trace.stride == 1 and len(trace.t) == trace.horizon + 1:
            pairs = trace.s[:-1] * n_a + trace.a[:-1]
            cov = measure_covering(trace.chose[:-1], pairs, mdp.n_states * n_a) if trace.horizon else None
            out["covering"] = None if cov is None else {k: _json_num(v) for k, v in cov.items()}
    return out


def _json_num(x):
    return None if isinstance(x, float) and math.isinf(x) else x


def _run_seed(config_json: str, seed: int) -> dict:
    prep = _prepared_for(config_json)
    try:
        trace = run_trial(prep.config, seed, prep)
        summary = summarize_trace(trace, prep)
        if prep.config.trace_csv and prep.config.out_dir:
            out = Path(prep.config.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            trace.to_csv(out / f"trace_seed{seed}.csv")
        return summary
    except Exception as exc:
        raise TrialError(seed, exc) from exc


def _rate(flags) -> float | None:
    flags = [bool(f) for f in flags]
    return sum(flags) / len(flags) if flags else None


@dataclass
class EnsembleReport:
    config: dict
    seeds: list
    per_seed: list
    aggregate: dict
    schedule: dict | None
    checks: dict
    generated_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())

    def to_dict(self, canonical: bool = False) -> dict:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "kind": "ensemble",
            "config": self.config,
            "seeds": self.seeds,
            "schedule": self.schedule,
            "aggregate": self.aggregate,
            "checks": self.checks,
            "passed": self.passed,
            "per_seed": self.per_seed,
        }
        if not canonical:
            doc["generated_at"] = self.generated_at
        return doc

    def canonical_json(self) -> str:
        return canonical_dumps(self.to_dict(canonical=True))


def canonical_dumps(doc: dict) -> str:
    """Sorted keys, no timestamp: equal runs give byte-identical text."""
    doc = {k: v for k, v in doc.items() if k != "generated_at"}
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n"


def _aggregate(per_seed: list, prep: Prepared) -> tuple[dict, dict]:
    config = prep.config
    double = config.algorithm != "vanilla"
    n = len(per_seed)
    agg = {
        "n_seeds": n,
        "horizon": prep.horizon,
        "final_error_mean": float(np.mean([p["final_error"] for p in per_seed])),
        "final_error_max": float(max(p["final_error"] for p in per_seed)),
        "final_success_rate": _rate(p["final_ok"] for p in per_seed),
        "bounded_rate": _rate(p["bounded"] for p in per_seed),
        "qmax_all": max(p["qmax_all"] for p in per_seed),
        "errmax_all": max(p["errmax_all"] for p in per_seed),
        "drift_violations": sum(p["drift_violations"] for p in per_seed),
        "x_violations": sum(p["x_violations"] for p in per_seed),
        "y_violations": sum(p["y_violations"] for p in per_seed),
        "x_lapses": sum(p["x_lapses"] for p in per_seed),
        "y_lapses": sum(p["y_lapses"] for p in per_seed),
    }
    checks = {}
    enabled = set(config.checks) if config.checks is not None else set(CHECK_NAMES)

    def add(name, passed, **detail):
        if name in enabled:
            checks[name] = {"passed": bool(passed), **detail}

    add("boundedness", agg["bounded_rate"] == 1.0, rate=agg["bounded_rate"])
    add("final-error", agg["final_success_rate"] >= 1.0 - config.delta,
        rate=agg["final_success_rate"], threshold=1.0 - config.delta)
    if double:
        add("drift", agg["drift_violations"] == 0, violations=agg["drift_violations"])
        split = _rate(p["split_ok"] for p in per_seed)
        agg["split_rate"] = split
        add("update-split", split >= SPLIT_PASS_RATE, rate=split, threshold=SPLIT_PASS_RATE)
    if double and config.trackers:
        total = agg["x_violations"] + agg["y_violations"]
        add("sandwich", total == 0, violations=total)
    if per_seed and "envelopes" in per_seed[0]:
        d_fail = _rate(not all(p["envelopes"]["d"]) for p in per_seed)
        agg["envelope_d_violation_rate"] = d_fail
        add("envelope-d", d_fail <= config.delta, rate=d_fail, threshold=config.delta)
        if double:
            g_pass = [all(p["envelopes"]["g"]) for p in per_seed]
            sd_pass = [all(p["envelopes"]["sigma_d"]) for p in per_seed]
            g_fail = 1.0 - _rate(g_pass)
            sd_fail = 1.0 - _rate(sd_pass)
            contained = all(sd for g, sd in zip(g_pass, sd_pass) if g)
            agg.update(envelope_g_violation_rate=g_fail, envelope_sigma_d_violation_rate=sd_fail,
                       g_pass_seeds=[p["seed"] for p, ok in zip(per_seed, g_pass) if ok],
                       sigma_d_pass_seeds=[p["seed"] for p, ok in zip(per_seed, sd_pass) if ok])
            add("envelope-g", g_fail <= config.delta, rate=g_fail, threshold=config.delta)
            add("envelope-sigma-d", sd_fail <= config.delta, rate=sd_fail, threshold=config.delta)
            add("containment", contained)
            flags = [ok for p in per_seed for ok in p["update_blocks"]["passed"]]
            if flags:
                rate = _rate(flags)
                agg["update_block_pass_rate"] = rate
                add("update-blocks", rate >= 1.0 - config.delta, rate=rate, threshold=1.0 - config.delta)
    if config.algorithm == "async-double":
        ls = [p.get("covering", {}) or {} for p in per_seed]
        vals = [c.get("L") for c in ls]
        finite = [v for v in vals if v is not None]
        agg["covering_max"] = max(finite) if len(finite) == len(vals) and finite else None
        add("covering", len(finite) == len(vals) and bool(finite), max_l=agg["covering_max"])
    return agg, checks


def run_ensemble(config: ExperimentConfig, seeds=None, parallel: int | None = None) -> EnsembleReport:
    """Run every seed and aggregate. Results are keyed and ordered by seed, so
    the report does not depend on the seed order or on the parallelism."""
    seeds = sorted(set(config.seed_list() if seeds is None else seeds))
    if not seeds:
        raise ValueError("empty seed list")
    parallel = parallel or config.parallel
    config_json = config.to_json()
    prep = _prepared_for(config_json)
    if parallel > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            per_seed = list(pool.map(_run_seed, [config_json] * len(seeds), seeds))
    else:
        per_seed = [_run_seed(config_json, s) for s in seeds]
    per_seed.sort(key=lambda p: p["seed"])
    agg, checks = _aggregate(per_seed, prep)
    sched = None
    if prep.schedule is not None:
        sched = {"boundaries": list(prep.schedule.boundaries), **prep.schedule_info}
    return EnsembleReport(config=json.loads(config_json), seeds=seeds, per_seed=per_seed,
                          aggregate=agg, schedule=sched, checks=checks)
