"""Single seeded trials: schedule resolution, the compiled run and its trace."""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import _kernel as K
from ..learners import ASYNC_DRAWS, DRAWS_PER_PAIR, v_max
from ..mdp import Mdp, optimal_q
from ..theory import (BlockSchedule, TheoryDomainError, blocks_within, c_admissible, check_kappa_delta,
                      derive_constants, d_seq, epoch_schedule, g_seq, m_star, step_coefficient)
from .config import ConfigError, ExperimentConfig, ScheduleSpec

ALGO_CODES = {"vanilla": K.VANILLA, "sync-double": K.SYNC_DOUBLE, "async-double": K.ASYNC_DOUBLE}
EXPLORE_CODES = {"uniform": K.UNIFORM, "round-robin": K.ROUND_ROBIN, "epsilon-greedy": K.EPS_GREEDY}

STRIDE_LIMIT = 1_000_000
CHUNK_UNIFORMS = 2_000_000


def default_stride(horizon: int) -> int:
    return 1 if horizon <= STRIDE_LIMIT else max(1, horizon // STRIDE_LIMIT)


def draws_per_iteration(algorithm: str, n_pairs: int) -> int:
    if algorithm == "vanilla":
        return DRAWS_PER_PAIR * n_pairs
    if algorithm == "sync-double":
        return 1 + DRAWS_PER_PAIR * n_pairs
    return ASYNC_DRAWS


@dataclass(frozen=True)
class Prepared:
    """Everything shared read-only by the trials of one config."""

    config: ExperimentConfig
    mdp: Mdp
    q_star: np.ndarray
    horizon: int
    schedule: BlockSchedule | None
    schedule_info: dict


def _c_kinds(algorithm: str) -> tuple:
    return ("async-g", "async-d") if algorithm == "async-double" else ("sync-g", "sync-d")


def resolve_schedule(config: ExperimentConfig, mdp: Mdp) -> tuple[BlockSchedule | None, int, dict]:
    """Return (schedule, horizon, info).

    In horizon mode the schedule only places tracker restarts and block checks,
    and keeps the complete blocks that fit in [1, T + 1].
    """
    spec = config.schedule
    if spec is None:
        if config.trackers:
            spec = ScheduleSpec()
        else:
            return None, int(config.horizon), {}
    lval = spec.covering_l if config.algorithm == "async-double" else 1
    try:
        check_kappa_delta(spec.kappa, spec.delta_slack, need_d=True)
        c_min_val = c_admissible(_c_kinds(config.algorithm), spec.kappa, spec.delta_slack,
                                 spec.tau_1, config.omega, lval)
    except TheoryDomainError as err:
        raise ConfigError(f"schedule: {err}") from None
    c = spec.c if spec.c is not None else spec.c_factor * c_min_val
    step = step_coefficient(c, spec.kappa, lval)
    m = m_star(mdp.gamma, config.epsilon, v_max(mdp))
    info = {"c": c, "c_min": c_min_val, "step_coeff": step, "m_star": m, "covering_l": lval}
    if config.horizon is not None:
        horizon = int(config.horizon)
        n = blocks_within(spec.tau_1, step, config.omega, horizon + 1, cap=10 ** 9)
        sched = epoch_schedule(spec.tau_1, step, config.omega, n)
        complete = sched.end <= horizon + 1
        info.update(n_blocks=n if complete else 0, truncated=False)
        return sched, horizon, info
    target = spec.n_blocks if spec.n_blocks is not None else max(m, 1)
    n = target
    if spec.max_iterations is not None:
        n = blocks_within(spec.tau_1, step, config.omega, spec.max_iterations + 1, cap=target)
    sched = epoch_schedule(spec.tau_1, step, config.omega, n)
    info.update(n_blocks=n, n_blocks_target=target, truncated=n < target)
    return sched, sched.end - 1, info


def prepare(config: ExperimentConfig) -> Prepared:
    mdp = config.mdp.build()
    if config.exploration.start_state >= mdp.n_states:
        raise ConfigError(f"exploration.start_state: {config.exploration.start_state} is not a state "
                          f"of a {mdp.n_states}-state MDP")
    if abs(config.q_init) > mdp.r_max / (1 - mdp.gamma):
        raise ConfigError("q_init: must satisfy |q_init| <= r_max / (1 - gamma)")
    schedule, horizon, info = resolve_schedule(config, mdp)
    q_star = optimal_q(mdp, tol=config.oracle_tol)
    q_star.setflags(write=False)
    return Prepared(config, mdp, q_star, horizon, schedule, info)


def restart_plan(schedule: BlockSchedule | None, consts) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tracker restarts: t = 1 with (G_0, D_0), then tau_q with (G_q, D_q)."""
    plan = {1: 0}
    if schedule is not None:
        for q, tau in enumerate(schedule.boundaries, start=1):
            plan[int(tau)] = q
    times = np.array(sorted(plan), dtype=np.int64)
    idx = [plan[t] for t in times]
    g = np.array([g_seq(q, consts) for q in idx])
    d = np.array([d_seq(q, consts) for q in idx])
    return times, g, d


def record_times(horizon: int, stride: int, extra) -> np.ndarray:
    parts = [np.array([1, horizon + 1], dtype=np.int64),
             np.arange(stride, horizon + 1, stride, dtype=np.int64)]
    extra = np.asarray(extra, dtype=np.int64)
    parts.append(extra[(extra >= 1) & (extra <= horizon + 1)])
    return np.unique(np.concatenate(parts))


@dataclass
class TrialTrace:
    seed: int
    algorithm: str
    horizon: int
    stride: int
    schedule: BlockSchedule | None
    t: np.ndarray
    u_norm: np.ndarray
    ra_norm: np.ndarray
    rb_norm: np.ndarray
    qmax: np.ndarray
    drift_max: np.ndarray
    chose: np.ndarray
    s: np.ndarray
    a: np.ndarray
    cum_a: np.ndarray
    q_a: np.ndarray
    q_b: np.ndarray | None
    qmax_all: float
    errmax_all: float
    max_abs_reward: float
    counts: dict = field(default_factory=dict)
    trackers: np.ndarray | None = None

    @property
    def final_error(self) -> float:
        return float(self.ra_norm[-1])

    @property
    def total_a_updates(self) -> int:
        return int(self.cum_a[-1])

    def at(self, t: int) -> int:
        i = int(np.searchsorted(self.t, t))
        if i >= len(self.t) or self.t[i] != t:
            raise KeyError(f"no record at t={t}")
        return i

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.t, self.u_norm, self.ra_norm, self.rb_norm, self.qmax, self.drift_max,
                    self.chose, self.s, self.a, self.cum_a, self.q_a):
            h.update(np.ascontiguousarray(arr).tobytes())
        if self.q_b is not None:
            h.update(self.q_b.tobytes())
        return h.hexdigest()

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            out = csv.writer(f)
            out.writerow(["t", "u_ba_norm", "qa_err", "qb_err", "chose_a", "s", "a"])
            for i in range(len(self.t)):
                out.writerow([int(self.t[i]), repr(float(self.u_norm[i])), repr(float(self.ra_norm[i])),
                              repr(float(self.rb_norm[i])), int(self.chose[i]), int(self.s[i]),
                              int(self.a[i])])


def simulate(mdp: Mdp, q_star: np.ndarray, algorithm: str, omega: float, horizon: int, seed: int, *,
             exploration=None, q_init: float = 0.0, tracking: bool = False,
             schedule: BlockSchedule | None = None, rec_times=None) -> dict:
    """Run the compiled kernel and return raw arrays."""
    n_s, n_a = mdp.shape
    consts = derive_constants(mdp.gamma, mdp.r_max)
    algo = ALGO_CODES[algorithm]
    kind = EXPLORE_CODES[exploration.kind] if exploration is not None else K.UNIFORM
    eps = exploration.epsilon if exploration is not None else 0.0
    qa = np.full((n_s, n_a), float(q_init))
    qb = qa.copy()
    trk = np.zeros((4, n_s, n_a))
    ist = np.zeros(K.N_ISTATE, dtype=np.int64)
    ist[K.I_CUR_STATE] = getattr(exploration, "start_state", 0)
    fst = np.zeros(K.N_FSTATE)
    counts = np.zeros(K.N_COUNTS, dtype=np.int64)
    r_times, g_vals, d_vals = restart_plan(schedule, consts)
    if rec_times is None:
        rec_times = np.array([1, horizon + 1], dtype=np.int64)
    rec_f = np.zeros((len(rec_times), K.N_RF))
    rec_i = np.zeros((len(rec_times), K.N_RI), dtype=np.int64)
    cdf = np.ascontiguousarray(mdp.cdf)
    kernel = np.ascontiguousarray(mdp.kernel)
    reward_mean = np.ascontiguousarray(mdp.reward_mean)
    expected = np.ascontiguousarray(mdp.expected_reward)
    qs = np.ascontiguousarray(q_star, dtype=np.float64)

    rng = np.random.default_rng(seed)
    per_iter = draws_per_iteration(algorithm, n_s * n_a)
    chunk = max(1, CHUNK_UNIFORMS // per_iter)
    t = 1
    while t <= horizon:
        n = min(chunk, horizon - t + 1)
        draws = rng.random((n, per_iter))
        K.run_chunk(algo, kind, eps, cdf, kernel, reward_mean, expected, mdp.noise_halfwidth,
                    mdp.gamma, omega, qs, qa, qb, draws, t, tracking, r_times, g_vals, d_vals,
                    consts.sigma, consts.gamma_prime, consts.gamma_dprime, trk, ist, fst, counts,
                    rec_times, rec_f, rec_i)
        t += n
    K.finish(algo, qa, qb, qs, kernel, mdp.gamma, consts.gamma_prime, consts.sigma, tracking,
             horizon + 1, r_times, g_vals, d_vals, trk, ist, fst, counts, rec_times, rec_f, rec_i)
    n_rec = int(ist[K.I_REC_PTR])
    if n_rec != len(rec_times):
        raise RuntimeError(f"kernel wrote {n_rec} of {len(rec_times)} records")
    return {
        "rec_f": rec_f, "rec_i": rec_i, "q_a": qa, "q_b": None if algorithm == "vanilla" else qb,
        "qmax_all": float(fst[K.F_QMAX]), "errmax_all": float(fst[K.F_ERRMAX]),
        "max_abs_reward": float(fst[K.F_REWMAX]),
        "counts": {
            "x_violations": int(counts[K.C_X_VIOL]), "y_violations": int(counts[K.C_Y_VIOL]),
            "drift_violations": int(counts[K.C_DRIFT_VIOL]), "x_lapses": int(counts[K.C_X_LAPSE]),
            "y_lapses": int(counts[K.C_Y_LAPSE]),
        },
        "trackers": trk if tracking and algorithm != "vanilla" else None,
    }


def trace_from_raw(raw: dict, seed: int, algorithm: str, horizon: int, stride: int,
                   schedule: BlockSchedule | None) -> TrialTrace:
    f, i = raw["rec_f"], raw["rec_i"]
    return TrialTrace(
        seed=seed, algorithm=algorithm, horizon=horizon, stride=stride, schedule=schedule,
        t=i[:, K.R_T].copy(), u_norm=f[:, K.R_U].copy(), ra_norm=f[:, K.R_RA].copy(),
        rb_norm=f[:, K.R_RB].copy(), qmax=f[:, K.R_QMAX].copy(), drift_max=f[:, K.R_DRIFT].copy(),
        chose=i[:, K.R_CHOSE].copy(), s=i[:, K.R_S].copy(), a=i[:, K.R_A].copy(),
        cum_a=i[:, K.R_CUM_A].copy(), q_a=raw["q_a"], q_b=raw["q_b"], qmax_all=raw["qmax_all"],
        errmax_all=raw["errmax_all"], max_abs_reward=raw["max_abs_reward"], counts=raw["counts"],
        trackers=raw["trackers"])


def run_trial(config: ExperimentConfig, seed: int, prepared: Prepared | None = None) -> TrialTrace:
    """Deterministic trace for (config, seed)."""
    prep = prepared if prepared is not None else prepare(config)
    horizon = prep.horizon
    stride = config.stride or default_stride(horizon)
    extra = []
    if prep.schedule is not None:
        extra = list(prep.schedule.boundaries)
    rec = record_times(horizon, stride, extra)
    raw = simulate(prep.mdp, prep.q_star, config.algorithm, config.omega, horizon, seed,
                   exploration=config.exploration, q_init=config.q_init,
                   tracking=config.trackers and config.algorithm != "vanilla",
                   schedule=prep.schedule, rec_times=rec)
    return trace_from_raw(raw, seed, config.algorithm, horizon, stride, prep.schedule)


def final_tables(mdp: Mdp, algorithm: str, omega: float, horizon: int, seed: int,
                 exploration=None) -> tuple[np.ndarray, np.ndarray | None]:
    """Q^A_T (and Q^B_T) only; no trace kept."""
    raw = simulate(mdp, np.zeros(mdp.shape), algorithm, omega, horizon, seed, exploration=exploration)
    return raw["q_a"], raw["q_b"]


def complete_blocks(schedule: BlockSchedule | None, horizon: int) -> BlockSchedule | None:
    """The prefix of ``schedule`` whose blocks end by t = horizon + 1."""
    if schedule is None:
        return None
    b = [tau for tau in schedule.boundaries if tau <= horizon + 1]
    if len(b) < 2:
        return None
    return BlockSchedule(schedule.tau_1, schedule.step_coeff, schedule.omega, tuple(b))
