"""Compiled trial loop.

Replays the reference step functions in ``doubleq.learners`` on pre-drawn
uniforms, while maintaining the sandwich trackers, the boundedness running maxima
and the per-iteration trace records. All mutable state lives in the arrays
passed in, so a run can be split into chunks of draws without changing a bit.
"""
import numpy as np
from numba import njit

VANILLA, SYNC_DOUBLE, ASYNC_DOUBLE = 0, 1, 2
UNIFORM, ROUND_ROBIN, EPS_GREEDY = 0, 1, 2

# int state slots
I_CURSOR_A, I_CURSOR_B, I_CUR_STATE, I_REC_PTR, I_CUM_A = 0, 1, 2, 3, 4
I_X_ACTIVE, I_Y_ACTIVE, I_RESTART_PTR, I_RESTART_IDX = 5, 6, 7, 8
N_ISTATE = 9

# float state slots
F_QMAX, F_ERRMAX, F_REWMAX = 0, 1, 2
N_FSTATE = 3

# counters
C_X_VIOL, C_Y_VIOL, C_DRIFT_VIOL, C_X_LAPSE, C_Y_LAPSE = 0, 1, 2, 3, 4
N_COUNTS = 5

# record columns
R_U, R_RA, R_RB, R_QMAX, R_DRIFT = 0, 1, 2, 3, 4
N_RF = 5
R_T, R_CHOSE, R_S, R_A, R_CUM_A = 0, 1, 2, 3, 4
N_RI = 5

SANDWICH_TOL = 1e-9
DRIFT_TOL = 1e-12


@njit(cache=True)
def _argmax_rows(q, out):
    n_s, n_a = q.shape
    for s in range(n_s):
        best = 0
        for a in range(1, n_a):
            if q[s, a] > q[s, best]:
                best = a
        out[s] = best


@njit(cache=True)
def _draw_next(cdf, s, a, u):
    n = cdf.shape[2]
    for k in range(n):
        if cdf[s, a, k] > u:
            return k
    return n - 1


@njit(cache=True)
def _observe(algo, qa, qb, qstar, kernel, gamma, gprime, sigma, tracking,
             t, restart_times, g_vals, d_vals, trk, h, amax, bmax, ist, fst, counts, nums):
    """Norms, exact drift and tracker restart/check for Q_t (before iteration t)."""
    n_s, n_a = qa.shape
    u_norm = 0.0
    ra = 0.0
    rb = 0.0
    qmax = 0.0
    for s in range(n_s):
        for a in range(n_a):
            x = abs(qa[s, a])
            if x > qmax:
                qmax = x
            x = abs(qa[s, a] - qstar[s, a])
            if x > ra:
                ra = x
            if algo != VANILLA:
                x = abs(qb[s, a])
                if x > qmax:
                    qmax = x
                x = abs(qb[s, a] - qstar[s, a])
                if x > rb:
                    rb = x
                x = abs(qb[s, a] - qa[s, a])
                if x > u_norm:
                    u_norm = x
    if algo == VANILLA:
        rb = ra
    if qmax > fst[F_QMAX]:
        fst[F_QMAX] = qmax
    if ra > fst[F_ERRMAX]:
        fst[F_ERRMAX] = ra
    if rb > fst[F_ERRMAX]:
        fst[F_ERRMAX] = rb

    dmax = 0.0
    if algo != VANILLA:
        _argmax_rows(qa, amax)
        _argmax_rows(qb, bmax)
        for s in range(n_s):
            for a in range(n_a):
                acc = 0.0
                for sn in range(n_s):
                    acc += kernel[s, a, sn] * (qa[sn, bmax[sn]] - qb[sn, amax[sn]])
                h[s, a] = 0.5 * (qb[s, a] - qa[s, a]) + 0.5 * gamma * acc
                if abs(h[s, a]) > dmax:
                    dmax = abs(h[s, a])
        if dmax > gprime * u_norm + DRIFT_TOL:
            counts[C_DRIFT_VIOL] += 1

    if tracking and algo != VANILLA:
        rp = ist[I_RESTART_PTR]
        if rp < restart_times.shape[0] and t == restart_times[rp]:
            g = g_vals[rp]
            d = d_vals[rp]
            for s in range(n_s):
                for a in range(n_a):
                    trk[0, s, a] = g
                    trk[1, s, a] = 0.0
                    trk[2, s, a] = d
                    trk[3, s, a] = 0.0
            ist[I_RESTART_IDX] = rp
            ist[I_RESTART_PTR] = rp + 1
            if u_norm <= g:
                ist[I_X_ACTIVE] = 1
            else:
                ist[I_X_ACTIVE] = 0
                counts[C_X_LAPSE] += 1
            if ra <= d and u_norm <= sigma * d:
                ist[I_Y_ACTIVE] = 1
            else:
                ist[I_Y_ACTIVE] = 0
                counts[C_Y_LAPSE] += 1
        else:
            ri = ist[I_RESTART_IDX]
            if ist[I_X_ACTIVE] == 1:
                for s in range(n_s):
                    for a in range(n_a):
                        dev = (qb[s, a] - qa[s, a]) - trk[1, s, a]
                        if dev > trk[0, s, a] + SANDWICH_TOL or dev < -trk[0, s, a] - SANDWICH_TOL:
                            counts[C_X_VIOL] += 1
                if u_norm > g_vals[ri]:
                    ist[I_X_ACTIVE] = 0
                    counts[C_X_LAPSE] += 1
            if ist[I_Y_ACTIVE] == 1:
                for s in range(n_s):
                    for a in range(n_a):
                        dev = (qa[s, a] - qstar[s, a]) - trk[3, s, a]
                        if dev > trk[2, s, a] + SANDWICH_TOL or dev < -trk[2, s, a] - SANDWICH_TOL:
                            counts[C_Y_VIOL] += 1
                if ra > d_vals[ri] or u_norm > sigma * d_vals[ri]:
                    ist[I_Y_ACTIVE] = 0
                    counts[C_Y_LAPSE] += 1
    nums[R_U] = u_norm
    nums[R_RA] = ra
    nums[R_RB] = rb
    nums[R_QMAX] = qmax
    nums[R_DRIFT] = dmax


@njit(cache=True)
def _record(ist, rec_times, rec_f, rec_i, t, nums, chose, s, a):
    p = ist[I_REC_PTR]
    if p < rec_times.shape[0] and rec_times[p] == t:
        for k in range(N_RF):
            rec_f[p, k] = nums[k]
        rec_i[p, R_T] = t
        rec_i[p, R_CHOSE] = chose
        rec_i[p, R_S] = s
        rec_i[p, R_A] = a
        rec_i[p, R_CUM_A] = ist[I_CUM_A]
        ist[I_REC_PTR] = p + 1


@njit(cache=True)
def run_chunk(algo, explore_kind, explore_eps, cdf, kernel, reward_mean, expected_reward,
              eta, gamma, omega, qstar, qa, qb, draws, t0,
              tracking, restart_times, g_vals, d_vals, sigma, gprime, gdprime,
              trk, ist, fst, counts, rec_times, rec_f, rec_i):
    """Run iterations t0 .. t0 + len(draws) - 1 in place."""
    n_s, n_a = qa.shape
    n_pairs = n_s * n_a
    h = np.zeros((n_s, n_a))
    tqa = np.zeros((n_s, n_a))
    new_q = np.zeros((n_s, n_a))
    vmax = np.zeros(n_s)
    amax = np.zeros(n_s, dtype=np.int64)
    bmax = np.zeros(n_s, dtype=np.int64)
    nums = np.zeros(N_RF)
    track = tracking and algo != VANILLA
    for i in range(draws.shape[0]):
        t = t0 + i
        _observe(algo, qa, qb, qstar, kernel, gamma, gprime, sigma, tracking,
                 t, restart_times, g_vals, d_vals, trk, h, amax, bmax, ist, fst, counts, nums)
        alpha = float(t) ** -omega
        row = draws[i]

        if algo == VANILLA:
            for s in range(n_s):
                best = qa[s, 0]
                for a in range(1, n_a):
                    if qa[s, a] > best:
                        best = qa[s, a]
                vmax[s] = best
            for s in range(n_s):
                for a in range(n_a):
                    k = 2 * (s * n_a + a)
                    sn = _draw_next(cdf, s, a, row[k])
                    r = reward_mean[s, a, sn] + eta * (2.0 * row[k + 1] - 1.0)
                    if abs(r) > fst[F_REWMAX]:
                        fst[F_REWMAX] = abs(r)
                    target = r + gamma * vmax[sn]
                    new_q[s, a] = (1.0 - alpha) * qa[s, a] + alpha * target
            qa[:, :] = new_q
            _record(ist, rec_times, rec_f, rec_i, t, nums, -1, -1, -1)
            continue

        # amax/bmax already hold the greedy actions of Q_t (from _observe)
        if track:
            for s in range(n_s):
                vmax[s] = qa[s, amax[s]]
            for s in range(n_s):
                for a in range(n_a):
                    acc = 0.0
                    for sn in range(n_s):
                        acc += kernel[s, a, sn] * vmax[sn]
                    tqa[s, a] = expected_reward[s, a] + gamma * acc
        g_cur = g_vals[ist[I_RESTART_IDX]] if track else 0.0
        d_cur = d_vals[ist[I_RESTART_IDX]] if track else 0.0
        chose_a = row[0] < 0.5

        if algo == SYNC_DOUBLE:
            for s in range(n_s):
                for a in range(n_a):
                    k = 1 + 2 * (s * n_a + a)
                    sn = _draw_next(cdf, s, a, row[k])
                    r = reward_mean[s, a, sn] + eta * (2.0 * row[k + 1] - 1.0)
                    if abs(r) > fst[F_REWMAX]:
                        fst[F_REWMAX] = abs(r)
                    if chose_a:
                        target = r + gamma * qb[sn, amax[sn]]
                        new_q[s, a] = qa[s, a] + alpha * (target - qa[s, a])
                        f = qb[s, a] - r - gamma * qb[sn, amax[sn]]
                    else:
                        target = r + gamma * qa[sn, bmax[sn]]
                        new_q[s, a] = qb[s, a] + alpha * (target - qb[s, a])
                        f = r + gamma * qa[sn, bmax[sn]] - qa[s, a]
                    if track:
                        trk[0, s, a] = (1.0 - alpha) * trk[0, s, a] + alpha * gprime * g_cur
                        trk[1, s, a] = (1.0 - alpha) * trk[1, s, a] + alpha * (f - h[s, a])
                        if chose_a:
                            w = r + gamma * qa[sn, amax[sn]] - tqa[s, a]
                            trk[2, s, a] = (1.0 - alpha) * trk[2, s, a] + alpha * gdprime * d_cur
                            trk[3, s, a] = (1.0 - alpha) * trk[3, s, a] + alpha * w
            if chose_a:
                qa[:, :] = new_q
            else:
                qb[:, :] = new_q
            s_vis = -1
            a_vis = -1
        else:
            table = 0 if chose_a else 1
            if explore_kind == UNIFORM:
                s_vis = min(int(row[1] * n_s), n_s - 1)
                a_vis = min(int(row[2] * n_a), n_a - 1)
            elif explore_kind == ROUND_ROBIN:
                pair = ist[I_CURSOR_A + table]
                ist[I_CURSOR_A + table] = (pair + 1) % n_pairs
                s_vis = pair // n_a
                a_vis = pair % n_a
            else:
                s_vis = ist[I_CUR_STATE]
                if row[1] < explore_eps:
                    a_vis = min(int(row[2] * n_a), n_a - 1)
                else:
                    a_vis = 0
                    best = qa[s_vis, 0] + qb[s_vis, 0]
                    for a in range(1, n_a):
                        v = qa[s_vis, a] + qb[s_vis, a]
                        if v > best:
                            best = v
                            a_vis = a
            s, a = s_vis, a_vis
            sn = _draw_next(cdf, s, a, row[3])
            r = reward_mean[s, a, sn] + eta * (2.0 * row[4] - 1.0)
            if abs(r) > fst[F_REWMAX]:
                fst[F_REWMAX] = abs(r)
            if chose_a:
                target = r + gamma * qb[sn, amax[sn]]
                f = qb[s, a] - r - gamma * qb[sn, amax[sn]]
                w = r + gamma * qa[sn, amax[sn]] - tqa[s, a]
                qa[s, a] = qa[s, a] + alpha * (target - qa[s, a])
            else:
                target = r + gamma * qa[sn, bmax[sn]]
                f = r + gamma * qa[sn, bmax[sn]] - qa[s, a]
                w = 0.0
                qb[s, a] = qb[s, a] + alpha * (target - qb[s, a])
            if track:
                trk[0, s, a] = (1.0 - alpha) * trk[0, s, a] + alpha * gprime * g_cur
                trk[1, s, a] = (1.0 - alpha) * trk[1, s, a] + alpha * (f - h[s, a])
                if chose_a:
                    trk[2, s, a] = (1.0 - alpha) * trk[2, s, a] + alpha * gdprime * d_cur
                    trk[3, s, a] = (1.0 - alpha) * trk[3, s, a] + alpha * w
            ist[I_CUR_STATE] = sn

        _record(ist, rec_times, rec_f, rec_i, t, nums, 1 if chose_a else 0, s_vis, a_vis)
        if chose_a:
            ist[I_CUM_A] += 1


@njit(cache=True)
def finish(algo, qa, qb, qstar, kernel, gamma, gprime, sigma, tracking, t,
           restart_times, g_vals, d_vals, trk, ist, fst, counts, rec_times, rec_f, rec_i):
    """Observe and record the terminal tables at t = T + 1."""
    n_s, n_a = qa.shape
    h = np.zeros((n_s, n_a))
    amax = np.zeros(n_s, dtype=np.int64)
    bmax = np.zeros(n_s, dtype=np.int64)
    nums = np.zeros(N_RF)
    _observe(algo, qa, qb, qstar, kernel, gamma, gprime, sigma, tracking,
             t, restart_times, g_vals, d_vals, trk, h, amax, bmax, ist, fst, counts, nums)
    _record(ist, rec_times, rec_f, rec_i, t, nums, -1, -1, -1)
