"""Sandwich trackers X/Z (around u^BA) and Y/W (around r_t = Q^A - Q*).

``reference_run`` drives the plain numpy learners step by step and advances
the trackers next to them. It is slow, and exists as an independent check on
the compiled kernel and as the readable statement of the tracker rules.
"""
from __future__ import annotations

import numpy as np

from ..learners import (ExplorationPolicy, async_double_q_step, drift_table, f_increment, init_state,
                        sync_double_q_step, vanilla_q_step, w_noise)
from ..mdp import Mdp, bellman_apply
from ..theory import BlockSchedule, derive_constants
from .trial import TrialTrace, restart_plan

SANDWICH_TOL = 1e-9
DRIFT_TOL = 1e-12


class SandwichTrackers:
    """X, Z restart at every block start with X = G_q, Z = 0; Y, W with Y = D_k, W = 0.

    X and Z move whenever u^BA moves at a pair (every pair on synchronous
    steps, the visited pair on asynchronous ones). Y and W move only where
    Q^A is updated. A tracker pair is armed at a restart only if its
    precondition holds, and disarms as soon as it fails.
    """

    def __init__(self, shape, consts, restart_times, g_vals, d_vals):
        self.consts = consts
        self.restart_times = np.asarray(restart_times)
        self.g_vals = np.asarray(g_vals)
        self.d_vals = np.asarray(d_vals)
        self.X = np.zeros(shape)
        self.Z = np.zeros(shape)
        self.Y = np.zeros(shape)
        self.W = np.zeros(shape)
        self.ptr = 0
        self.idx = 0
        self.x_active = False
        self.y_active = False
        self.violations = {"x": 0, "y": 0}
        self.lapses = {"x": 0, "y": 0}

    @property
    def g(self) -> float:
        return float(self.g_vals[self.idx])

    @property
    def d(self) -> float:
        return float(self.d_vals[self.idx])

    def observe(self, t: int, u: np.ndarray, r: np.ndarray) -> None:
        u_norm = float(np.abs(u).max())
        r_norm = float(np.abs(r).max())
        sigma = self.consts.sigma
        if self.ptr < len(self.restart_times) and t == self.restart_times[self.ptr]:
            self.idx = self.ptr
            self.ptr += 1
            self.X[:] = self.g
            self.Z[:] = 0.0
            self.Y[:] = self.d
            self.W[:] = 0.0
            self.x_active = u_norm <= self.g
            self.y_active = r_norm <= self.d and u_norm <= sigma * self.d
            self.lapses["x"] += not self.x_active
            self.lapses["y"] += not self.y_active
            return
        if self.x_active:
            dev = u - self.Z
            self.violations["x"] += int(np.sum((dev > self.X + SANDWICH_TOL) | (dev < -self.X - SANDWICH_TOL)))
            if u_norm > self.g:
                self.x_active = False
                self.lapses["x"] += 1
        if self.y_active:
            dev = r - self.W
            self.violations["y"] += int(np.sum((dev > self.Y + SANDWICH_TOL) | (dev < -self.Y - SANDWICH_TOL)))
            if r_norm > self.d or u_norm > sigma * self.d:
                self.y_active = False
                self.lapses["y"] += 1

    def advance(self, alpha: float, chose_a: bool, where, f, h, w=None) -> None:
        """``where`` indexes the pairs whose u^BA moved; f, h (and w) are given there."""
        gp, gdp = self.consts.gamma_prime, self.consts.gamma_dprime
        self.X[where] = (1.0 - alpha) * self.X[where] + alpha * gp * self.g
        self.Z[where] = (1.0 - alpha) * self.Z[where] + alpha * (f - h)
        if chose_a:
            self.Y[where] = (1.0 - alpha) * self.Y[where] + alpha * gdp * self.d
            self.W[where] = (1.0 - alpha) * self.W[where] + alpha * w

    def state(self) -> np.ndarray:
        return np.stack([self.X, self.Z, self.Y, self.W])


def reference_run(mdp: Mdp, q_star: np.ndarray, algorithm: str, omega: float, horizon: int,
                  seed: int, *, exploration: ExplorationPolicy | None = None, start_state: int = 0,
                  q_init: float = 0.0, tracking: bool = False,
                  schedule: BlockSchedule | None = None) -> tuple[TrialTrace, SandwichTrackers | None]:
    """Step-by-step run with stride 1; same draws and same trace layout as the kernel."""
    consts = derive_constants(mdp.gamma, mdp.r_max)
    double = algorithm != "vanilla"
    tracking = tracking and double
    policy = exploration or ExplorationPolicy()
    state = init_state(mdp, algorithm, omega, q_init)
    rng = np.random.default_rng(seed)
    r_times, g_vals, d_vals = restart_plan(schedule, consts)
    trk = SandwichTrackers(mdp.shape, consts, r_times, g_vals, d_vals) if tracking else None
    rows_f, rows_i = [], []
    qmax_all = errmax_all = max_reward = 0.0
    drift_viol = 0
    cum_a = 0
    current = start_state
    s_idx, a_idx = np.indices(mdp.shape)

    for t in range(1, horizon + 2):
        q_a = state.q_a
        q_b = state.q_b if double else q_a
        u = q_b - q_a
        r = q_a - q_star
        u_norm = float(np.abs(u).max())
        ra = float(np.abs(r).max())
        rb = float(np.abs(q_b - q_star).max())
        qmax = max(float(np.abs(q_a).max()), float(np.abs(q_b).max()))
        qmax_all, errmax_all = max(qmax_all, qmax), max(errmax_all, ra, rb)
        dmax = 0.0
        h = None
        if double:
            h = drift_table(q_a, q_b, mdp)
            dmax = float(np.abs(h).max())
            drift_viol += dmax > consts.gamma_prime * u_norm + DRIFT_TOL
        if trk is not None:
            trk.observe(t, u, r)
        if t == horizon + 1:
            rows_f.append((u_norm, ra, rb, qmax, dmax))
            rows_i.append((t, -1, -1, -1, cum_a))
            break
        t_q_a = bellman_apply(mdp, q_a) if trk is not None else None
        qa_old, qb_old = q_a.copy(), q_b.copy()

        if algorithm == "vanilla":
            vanilla_q_step(state, mdp, rng)
        elif algorithm == "sync-double":
            sync_double_q_step(state, mdp, rng)
        else:
            state, current = async_double_q_step(state, mdp, policy, current, rng)
        info = state.last
        if info.rewards is not None:
            max_reward = max(max_reward, float(np.abs(info.rewards).max()))
        else:
            max_reward = max(max_reward, abs(info.reward))

        if trk is not None:
            if algorithm == "sync-double":
                where = (s_idx, a_idx)
                s_next, reward = info.next_states, info.rewards
            else:
                where = (info.s, info.a)
                s_next, reward = info.next_state, info.reward
            f = f_increment(qa_old, qb_old, info.chose_a, where[0], where[1], s_next, reward, mdp.gamma)
            w = w_noise(qa_old, t_q_a, where[0], where[1], s_next, reward, mdp.gamma) if info.chose_a else None
            trk.advance(info.alpha, info.chose_a, where, f, h[where], w)

        chose = -1 if info.chose_a is None else int(info.chose_a)
        s_vis = -1 if info.s is None else info.s
        a_vis = -1 if info.a is None else info.a
        rows_f.append((u_norm, ra, rb, qmax, dmax))
        rows_i.append((t, chose, s_vis, a_vis, cum_a))
        cum_a += chose == 1

    f_arr = np.array(rows_f, dtype=np.float64).reshape(-1, 5)
    i_arr = np.array(rows_i, dtype=np.int64).reshape(-1, 5)
    counts = {
        "x_violations": trk.violations["x"] if trk else 0,
        "y_violations": trk.violations["y"] if trk else 0,
        "drift_violations": int(drift_viol),
        "x_lapses": trk.lapses["x"] if trk else 0,
        "y_lapses": trk.lapses["y"] if trk else 0,
    }
    trace = TrialTrace(
        seed=seed, algorithm=algorithm, horizon=horizon, stride=1, schedule=schedule,
        t=i_arr[:, 0], u_norm=f_arr[:, 0], ra_norm=f_arr[:, 1], rb_norm=f_arr[:, 2], qmax=f_arr[:, 3],
        drift_max=f_arr[:, 4], chose=i_arr[:, 1], s=i_arr[:, 2], a=i_arr[:, 3], cum_a=i_arr[:, 4],
        q_a=state.q_a.copy(), q_b=None if not double else state.q_b.copy(), qmax_all=qmax_all,
        errmax_all=errmax_all, max_abs_reward=max_reward, counts=counts,
        trackers=trk.state() if trk else None)
    return trace, trk


def track_sandwich(mdp: Mdp, q_star: np.ndarray, algorithm: str, omega: float, horizon: int,
                   seed: int, schedule: BlockSchedule, **kwargs) -> tuple[SandwichTrackers, int]:
    """Advance the trackers alongside a reference run; return them with the violation count."""
    _, trk = reference_run(mdp, q_star, algorithm, omega, horizon, seed, tracking=True,
                           schedule=schedule, **kwargs)
    return trk, trk.violations["x"] + trk.violations["y"]
