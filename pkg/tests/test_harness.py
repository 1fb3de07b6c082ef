import json
import math

import numpy as np
import pytest

from doubleq import ExplorationPolicy, Mdp, fanout_mdp, optimal_q, random_mdp
from doubleq.harness.checks import (check_envelopes, measure_covering, sa2l_spot_check, update_counts,
                                    visit_count, x_closed_form_check)
from doubleq.harness.config import ConfigError, ExperimentConfig, parse_config, parse_json_text
from doubleq.harness.ensemble import run_ensemble, summarize_trace
from doubleq.harness.probe import overestimation_probe
from doubleq.harness.trackers import SandwichTrackers, reference_run, track_sandwich
from doubleq.harness.trial import (TrialTrace, prepare, record_times, restart_plan, run_trial, simulate,
                                   trace_from_raw)
from doubleq.theory import c_admissible, derive_constants, epoch_schedule, g_seq, step_coefficient

from conftest import single_state

HALF = derive_constants(0.5)


def cfg(**kw):
    base = {"mdp": {"kind": "random"}, "algorithm": "sync-double", "horizon": 2000, "seeds": [0]}
    base.update(kw)
    return parse_config(base)


def synthetic_trace(values, t=None, cum_a=None, schedule=None):
    values = np.asarray(values, dtype=float)
    n = values.size
    t = np.arange(1, n + 1) if t is None else np.asarray(t)
    cum_a = np.zeros(n, dtype=np.int64) if cum_a is None else np.asarray(cum_a)
    z = np.zeros(n)
    return TrialTrace(seed=0, algorithm="sync-double", horizon=int(t[-1]) - 1, stride=1, schedule=schedule,
                      t=t, u_norm=values, ra_norm=values, rb_norm=z, qmax=z, drift_max=z,
                      chose=np.ones(n, dtype=np.int64), s=-np.ones(n, dtype=np.int64),
                      a=-np.ones(n, dtype=np.int64), cum_a=cum_a, q_a=np.zeros((1, 1)), q_b=np.zeros((1, 1)),
                      qmax_all=0.0, errmax_all=0.0, max_abs_reward=0.0, counts={}, trackers=None)


@pytest.mark.parametrize("algorithm, kind", [
    ("vanilla", "uniform"), ("sync-double", "uniform"), ("async-double", "uniform"),
    ("async-double", "round-robin"), ("async-double", "epsilon-greedy"),
])
def test_kernel_matches_reference(algorithm, kind):
    mdp = random_mdp(4, 2, seed=3)
    q_star = optimal_q(mdp)
    sched = epoch_schedule(20, 3.0, 0.8, 4)
    policy = ExplorationPolicy(kind, 0.3)
    horizon = 600
    raw = simulate(mdp, q_star, algorithm, 0.8, horizon, 7, exploration=policy, tracking=True,
                   schedule=sched, rec_times=record_times(horizon, 1, []))
    fast = trace_from_raw(raw, 7, algorithm, horizon, 1, sched)
    ref, _ = reference_run(mdp, q_star, algorithm, 0.8, horizon, 7, exploration=policy, tracking=True,
                           schedule=sched)
    np.testing.assert_array_equal(fast.q_a, ref.q_a)
    np.testing.assert_array_equal(fast.u_norm, ref.u_norm)
    for name in ("t", "chose", "s", "a", "cum_a"):
        np.testing.assert_array_equal(getattr(fast, name), getattr(ref, name))
    assert fast.counts == ref.counts
    if ref.trackers is not None:
        np.testing.assert_allclose(fast.trackers, ref.trackers, atol=1e-15)


def test_same_seed_same_trace():
    config = cfg(trackers=True)
    assert run_trial(config, 5).fingerprint() == run_trial(config, 5).fingerprint()
    assert run_trial(config, 5).fingerprint() != run_trial(config, 6).fingerprint()


def test_zero_horizon():
    trace = run_trial(cfg(horizon=0), 0)
    assert list(trace.t) == [1]
    assert trace.final_error == np.abs(optimal_q(random_mdp(4, 2))).max()


def test_single_state_sync_double_converges():
    mdp = single_state(reward=0.5, gamma=0.5, noise=0.5)
    q_star = optimal_q(mdp)
    raw = simulate(mdp, q_star, "sync-double", 0.6, 10 ** 4, 0)
    assert abs(raw["q_a"][0, 0] - q_star[0, 0]) < 0.05


def test_recorded_boundaries_and_stride():
    config = cfg(horizon=5000, stride=1000, trackers=True)
    prep = prepare(config)
    trace = run_trial(config, 0, prep)
    for tau in prep.schedule.boundaries:
        if tau <= 5001:
            trace.at(tau)
    assert {1, 1000, 5000, 5001} <= set(trace.t.tolist())


def test_csv_trace(tmp_path):
    trace = run_trial(cfg(horizon=50), 0)
    trace.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0].startswith("t,u_ba_norm")
    assert len(lines) == len(trace.t) + 1


def test_envelope_counterexample():
    sched = epoch_schedule(10, 1.0, 0.5, 7)
    trace = synthetic_trace(np.full(sched.end + 5, g_seq(5, HALF)))
    flags = check_envelopes(trace, sched, HALF, "uBA-vs-G")
    assert flags[:4] == [True] * 4
    assert flags[5] is False


def test_envelope_ceiling_passes():
    sched = epoch_schedule(10, 1.0, 0.5, 3)
    trace = synthetic_trace(np.full(sched.end + 1, HALF.v_max))
    assert check_envelopes(trace, sched, HALF, "uBA-vs-G")[0] is False
    assert check_envelopes(trace, sched, HALF, "r-vs-D")[0] is True


def test_envelope_looser_is_monotone():
    sched = epoch_schedule(10, 1.0, 0.5, 5)
    rng = np.random.default_rng(0)
    trace = synthetic_trace(rng.uniform(0, 4, sched.end + 1))
    tight = check_envelopes(trace, sched, HALF, "uBA-vs-G")
    loose = check_envelopes(trace, sched, HALF, "uBA-vs-sigmaD")
    assert all(l or not t for t, l in zip(tight, loose))


def test_envelope_needs_full_trace():
    sched = epoch_schedule(10, 1.0, 0.5, 5)
    with pytest.raises(ValueError):
        check_envelopes(synthetic_trace(np.zeros(10)), sched, HALF, "uBA-vs-G")


def test_update_counts_forced_a():
    sched = epoch_schedule(5, 2.0, 0.5, 4)
    n = sched.end + 1
    trace = synthetic_trace(np.zeros(n), cum_a=np.arange(n))
    res = update_counts(trace, sched, 0.8)
    lengths = np.diff(sched.boundaries)
    assert res["i_a"] == lengths.tolist()
    assert res["thresholds"] == pytest.approx((0.4 * lengths).tolist())
    assert all(res["passed"])


def test_update_counts_conserve():
    config = cfg(horizon=20000, trackers=True, stride=20000)
    prep = prepare(config)
    trace = run_trial(config, 1, prep)
    res = update_counts(trace, prep.schedule, 0.8)
    b = prep.schedule.boundaries
    assert sum(res["i_a"]) == trace.cum_a[trace.at(b[-1])] - trace.cum_a[trace.at(b[0])]


def test_block_threshold_is_kappa_half_of_length():
    c = 1.05 * c_admissible(("sync-g", "sync-d"), 0.8, 0.1, 200, 0.8)
    sched = epoch_schedule(200, step_coefficient(c, 0.8), 0.8, 3)
    trace = synthetic_trace(np.zeros(sched.end + 1), cum_a=np.zeros(sched.end + 1, dtype=np.int64))
    res = update_counts(trace, sched, 0.8)
    for k, thr in enumerate(res["thresholds"]):
        assert thr == pytest.approx(0.4 * (sched.boundaries[k + 1] - sched.boundaries[k]))


def test_tracker_restart_and_unit_step():
    trk = SandwichTrackers((2, 2), HALF, [1], [4.0], [8.0])
    u = np.full((2, 2), 1.0)
    trk.observe(1, u, np.zeros((2, 2)))
    assert np.all(trk.X == 4.0) and np.all(trk.Z == 0.0)
    assert trk.x_active and trk.y_active
    trk.advance(1.0, True, (np.arange(2)[:, None], np.arange(2)[None, :]), np.zeros((2, 2)),
                np.zeros((2, 2)), np.zeros((2, 2)))
    assert np.all(trk.X == HALF.gamma_prime * 4.0)
    assert np.all(trk.Y == HALF.gamma_dprime * 8.0)


def test_tracker_lapse_when_precondition_fails():
    trk = SandwichTrackers((1, 1), HALF, [1], [1.0], [8.0])
    trk.observe(1, np.full((1, 1), 2.0), np.zeros((1, 1)))
    assert not trk.x_active and trk.lapses["x"] == 1


def test_sandwich_holds_reference():
    mdp = random_mdp(4, 2, seed=0)
    sched = epoch_schedule(20, 3.0, 0.8, 5)
    for seed in range(3):
        trk, violations = track_sandwich(mdp, optimal_q(mdp), "sync-double", 0.8, 1500, seed, sched)
        assert violations == 0


def test_w_vanishes_without_noise():
    kernel = np.zeros((3, 2, 3))
    for s in range(3):
        kernel[s, 0, s] = 1.0
        kernel[s, 1, (s + 1) % 3] = 1.0
    reward = np.random.default_rng(0).uniform(-1, 1, size=kernel.shape)
    mdp = Mdp(kernel, reward, 0.5, 1.0, 0.0)
    sched = epoch_schedule(20, 3.0, 0.8, 4)
    trace, trk = reference_run(mdp, optimal_q(mdp), "sync-double", 0.8, 1000, 0, tracking=True, schedule=sched)
    assert np.abs(trk.W).max() <= 1e-12
    assert trk.violations == {"x": 0, "y": 0}


def test_restart_plan_layout():
    sched = epoch_schedule(20, 3.0, 0.8, 2)
    times, g, d = restart_plan(sched, HALF)
    assert times.tolist() == [1, *sched.boundaries]
    assert g[0] == HALF.v_max and g[1] == pytest.approx(g_seq(1, HALF))


def test_x_closed_form():
    c = 1.05 * c_admissible(("sync-g", "sync-d"), 0.8, 0.1, 200, 0.8)
    sched = epoch_schedule(200, step_coefficient(c, 0.8), 0.8, 4)
    for which in ("x", "y"):
        for q in (1, 2, 3):
            res = x_closed_form_check(sched, HALF, q, kappa=0.8, delta_slack=0.1, c=c, which=which)
            assert res["status"] == "ok"
            assert res["holds"]
            assert res["closed_form_max_gap"] <= 1e-12 * res["restart_value"]


def test_x_closed_form_skips_small_c():
    sched = epoch_schedule(200, 2.0, 0.8, 3)
    res = x_closed_form_check(sched, HALF, 1, kappa=0.8, delta_slack=0.1, c=1.0)
    assert res["status"] == "skipped"


def test_covering_round_robin_2x2():
    pairs = np.tile(np.arange(4), 10)
    tables = np.repeat([1, 0], 20)
    pairs = np.concatenate([pairs[:20], pairs[:20]])
    assert measure_covering(tables, pairs, 4) == {"A": 4, "B": 4, "L": 4}


def test_covering_skipped_pair_is_infinite():
    pairs = np.tile([0, 1, 2], 10)
    res = measure_covering(np.ones(30, dtype=int), pairs, 4)
    assert math.isinf(res["L"])


def test_covering_empty_stream():
    with pytest.raises(ValueError):
        measure_covering([], [], 4)


def test_covering_uniform_visits():
    trace = run_trial(cfg(algorithm="async-double", horizon=5000, mdp={"kind": "random"}), 3)
    pairs = trace.s[:-1] * 2 + trace.a[:-1]
    cov = measure_covering(trace.chose[:-1], pairs, 8)
    assert math.isfinite(cov["L"])
    spot = sa2l_spot_check(pairs, 8, cov["L"], np.random.default_rng(0))
    assert spot["failures"] == []
    assert visit_count(pairs, int(pairs[0]), 1, 1) == 1


def test_ensemble_order_independent():
    config = cfg(trackers=True, horizon=3000)
    a = run_ensemble(config, [3, 1, 2])
    b = run_ensemble(config, [2, 3, 1, 1])
    assert a.canonical_json() == b.canonical_json()


def test_ensemble_parallel_matches_serial():
    config = cfg(horizon=3000, seeds=[0, 1, 2, 3])
    assert run_ensemble(config, parallel=1).canonical_json() == run_ensemble(config, parallel=2).canonical_json()


def test_ensemble_of_one_is_the_trial():
    config = cfg(horizon=3000, trackers=True)
    report = run_ensemble(config, [4])
    prep = prepare(config)
    assert report.per_seed == [summarize_trace(run_trial(config, 4, prep), prep)]
    assert report.aggregate["final_error_max"] == report.per_seed[0]["final_error"]


def test_report_config_round_trip():
    config = cfg(trackers=True, schedule={"tau_1": 100}, checks=["sandwich"])
    report = run_ensemble(config, [0])
    assert parse_config(report.to_dict()["config"]) == config
    assert "generated_at" not in json.loads(report.canonical_json())


def test_probe_noise_free():
    mdp = fanout_mdp(4, noise_halfwidth=0.0)
    stats = overestimation_probe(mdp, ["vanilla", "sync-double"], 500, range(6))
    for algo in ("vanilla", "sync-double"):
        assert stats["algorithms"][algo]["mean_bias"] == 0.0
        assert not stats["algorithms"][algo]["positive_at_n_sigma"]


def test_probe_needs_seeds():
    with pytest.raises(ValueError):
        overestimation_probe(fanout_mdp(2), ["vanilla"], 10, [0])


@pytest.mark.parametrize("doc, message", [
    ({"mdp": {"kind": "random"}}, "horizon"),
    ({"horizon": 10, "schedule": {"n_blocks": 2}}, "horizon"),
    ({"horizon": 10, "algorithm": "triple"}, "algorithm"),
    ({"horizon": 10, "typo": 1}, "typo"),
    ({"horizon": 10, "schedule": {"kappa": 0.5}, "trackers": True}, "ln 2"),
])
def test_config_errors(doc, message):
    with pytest.raises(ConfigError, match=message):
        prepare(parse_config(doc))


def test_json_error_position():
    with pytest.raises(ConfigError, match="line 2, column"):
        parse_json_text('{\n  "a": ,\n}')
