"""Post-hoc checks on traces: block envelopes, update counts, covering, closed forms."""
from __future__ import annotations

import math

import numpy as np

from ..theory import BlockSchedule, DerivedConstants, c_min, d_seq, g_seq
from .trial import TrialTrace

ENVELOPE_TOL = 1e-9
ENVELOPE_MODES = ("uBA-vs-G", "uBA-vs-sigmaD", "r-vs-D")


def envelope_value(mode: str, k: int, consts: DerivedConstants) -> float:
    if mode == "uBA-vs-G":
        return g_seq(k, consts)
    if mode == "uBA-vs-sigmaD":
        return consts.sigma * d_seq(k, consts)
    if mode == "r-vs-D":
        return d_seq(k, consts)
    raise ValueError(f"unknown envelope mode {mode!r}; expected one of {ENVELOPE_MODES}")


def check_envelopes(trace: TrialTrace, schedule: BlockSchedule, consts: DerivedConstants,
                    mode: str) -> list[bool]:
    """Block q passes iff every recorded t in [tau_{q+1}, tau_{q+2}) stays under the envelope of index q+1.

    Boundaries are 0-based here: block q spans ``boundaries[q]`` to ``boundaries[q+1]``.
    """
    if schedule.end > trace.t[-1]:
        raise ValueError(f"schedule ends at t={schedule.end} but the trace stops at t={trace.t[-1]}")
    values = trace.ra_norm if mode == "r-vs-D" else trace.u_norm
    b = np.asarray(schedule.boundaries)
    lo = np.searchsorted(trace.t, b[:-1], side="left")
    hi = np.searchsorted(trace.t, b[1:], side="left")
    out = []
    for q in range(schedule.n_blocks):
        env = envelope_value(mode, q + 1, consts)
        seg = values[lo[q]:hi[q]]
        out.append(bool(seg.size == 0 or seg.max() <= env + ENVELOPE_TOL))
    return out


def update_counts(trace: TrialTrace, schedule: BlockSchedule, kappa: float) -> dict:
    """I^A_k per block [tau_k, tau_{k+1}) against the (kappa/2) x block-length threshold."""
    counts, thresholds, passed = [], [], []
    for k in range(schedule.n_blocks):
        start, stop = schedule.boundaries[k], schedule.boundaries[k + 1]
        i_a = int(trace.cum_a[trace.at(stop)] - trace.cum_a[trace.at(start)])
        thr = 0.5 * kappa * (stop - start)
        counts.append(i_a)
        thresholds.append(thr)
        passed.append(i_a >= thr)
    return {"i_a": counts, "thresholds": thresholds, "passed": passed}


def split_within_band(total_a: int, horizon: int, n_sigma: float = 3.0) -> bool:
    """|I^A - T/2| <= n_sigma sqrt(T/4): a Binomial(T, 1/2) sanity band."""
    return abs(total_a - horizon / 2.0) <= n_sigma * math.sqrt(horizon / 4.0)


def measure_covering(tables, pairs, n_pairs: int) -> dict:
    """Empirical covering number of a stream of asynchronous updates.

    ``tables[i]`` is 1 for an A-update and 0 for a B-update at step i, and
    ``pairs[i]`` the flat index s * |A| + a of the visited pair. For each table
    L is the smallest W such that every W consecutive updates of that table
    visit all pairs, i.e. one more than the longest run that misses some pair.
    Returns ``math.inf`` for a table that never covers every pair.
    """
    tables = np.asarray(tables)
    pairs = np.asarray(pairs)
    if tables.size == 0:
        raise ValueError("empty update stream")
    if tables.shape != pairs.shape:
        raise ValueError("tables and pairs must have the same length")
    out = {}
    for name, flag in (("A", 1), ("B", 0)):
        seq = pairs[tables == flag]
        out[name] = _covering_of(seq, n_pairs)
    out["L"] = max(out["A"], out["B"])
    return out


def _covering_of(seq: np.ndarray, n_pairs: int):
    if seq.size == 0:
        return math.inf
    longest = 0
    for p in range(n_pairs):
        pos = np.flatnonzero(seq == p)
        if pos.size == 0:
            return math.inf
        gaps = np.diff(pos) - 1
        run = max(int(pos[0]), int(seq.size - 1 - pos[-1]), int(gaps.max()) if gaps.size else 0)
        longest = max(longest, run)
    return longest + 1


def visit_count(pairs, pair: int, t1: int, t2: int) -> int:
    """|T(s,a,t1,t2)|: visits to ``pair`` during iterations t1..t2 (1-based, inclusive)."""
    pairs = np.asarray(pairs)
    return int(np.count_nonzero(pairs[t1 - 1:t2] == pair))


def sa2l_spot_check(pairs, n_pairs: int, covering_l: int, rng: np.random.Generator,
                    n_checks: int = 100) -> dict:
    """Sample (s,a,t,k) with t + 2kL - 1 inside the stream and test |T(s,a,t,t+2kL-1)| >= k."""
    pairs = np.asarray(pairs)
    n = pairs.size
    if not math.isfinite(covering_l) or 2 * covering_l > n:
        raise ValueError(f"stream of {n} steps is too short for covering number {covering_l}")
    k_max = n // (2 * covering_l)
    failures = []
    for _ in range(n_checks):
        k = int(rng.integers(1, k_max + 1))
        t = int(rng.integers(1, n - 2 * k * covering_l + 2))
        p = int(rng.integers(0, n_pairs))
        got = visit_count(pairs, p, t, t + 2 * k * covering_l - 1)
        if got < k:
            failures.append({"pair": p, "t": t, "k": k, "visits": got})
    return {"checks": n_checks, "failures": failures}


def x_closed_form_check(schedule: BlockSchedule, consts: DerivedConstants, q: int, *,
                        kappa: float, delta_slack: float, c: float, which: str = "x",
                        update_mask=None) -> dict:
    """Run the deterministic X (or Y) recursion from its restart and test the one-block-later bound.

    X restarts at G_q on tau_q and moves towards gamma' G_q; for t in the next
    block it must sit below (gamma' + 2 xi / (2 + Delta)) G_q. The Y version uses
    D_k, gamma'' and beta. Each iterate is also compared with its closed form
    gamma' G_q + rho_t, rho_t = (1 - gamma') G_q prod (1 - alpha_i).
    ``update_mask[i]`` says whether step tau_q + i updates (default: every step).
    Block index q counts from 1, matching the restart at tau_q.
    """
    if which not in ("x", "y"):
        raise ValueError("which must be 'x' or 'y'")
    if not 1 <= q <= schedule.n_blocks - 1:
        raise ValueError(f"q must lie in [1, {schedule.n_blocks - 1}] so that block q+1 is scheduled")
    kind = "sync-g" if which == "x" else "sync-d"
    try:
        need = c_min(kind, kappa, delta_slack, schedule.tau_1, schedule.omega)
    except ValueError as err:
        return {"status": "skipped", "reason": str(err)}
    if c < need:
        return {"status": "skipped", "reason": f"c={c:.6g} is below c_min[{kind}]={need:.6g}"}

    omega = schedule.omega
    start, mid, stop = schedule.boundaries[q - 1], schedule.boundaries[q], schedule.boundaries[q + 1]
    if which == "x":
        level, pull, rate = g_seq(q, consts), consts.gamma_prime, consts.xi
    else:
        level, pull, rate = d_seq(q, consts), consts.gamma_dprime, consts.beta
    bound = (pull + 2.0 * rate / (2.0 + delta_slack)) * level
    n_steps = stop - start
    mask = np.ones(n_steps, dtype=bool) if update_mask is None else np.asarray(update_mask, dtype=bool)
    if mask.size < n_steps:
        raise ValueError(f"update_mask covers {mask.size} steps, need {n_steps}")

    x = level
    log_prod = 0.0
    worst_gap = 0.0
    worst = -math.inf
    for i in range(n_steps):
        t = start + i
        if t >= mid:
            worst = max(worst, x)
        closed = pull * level + (1.0 - pull) * level * math.exp(log_prod)
        worst_gap = max(worst_gap, abs(x - closed))
        if mask[i]:
            alpha = t ** -omega
            x = (1.0 - alpha) * x + alpha * pull * level
            log_prod += math.log1p(-alpha) if alpha < 1.0 else -math.inf
    return {
        "status": "ok",
        "restart_value": level,
        "bound": bound,
        "max_in_next_block": worst,
        "holds": bool(worst <= bound + ENVELOPE_TOL),
        "closed_form_max_gap": worst_gap,
    }
