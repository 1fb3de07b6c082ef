"""Vanilla, synchronous double and asynchronous double Q-learning.

These step functions are the readable reference implementation. Every step
consumes a fixed number of uniforms from the generator, in a fixed order, so
that the compiled kernel in ``doubleq._kernel`` can replay the exact same run:

* vanilla:       ``[u_next, u_noise]`` for each pair in row-major order
* sync-double:   ``[coin]`` then ``[u_next, u_noise]`` for each pair
* async-double:  ``[coin, sel1, sel2, u_next, u_noise]``

UPDATE(A) is chosen iff ``coin < 0.5``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mdp import Mdp, _check_table

ALGORITHMS = ("vanilla", "sync-double", "async-double")
EXPLORATION_KINDS = ("uniform", "round-robin", "epsilon-greedy")

DRAWS_PER_PAIR = 2
ASYNC_DRAWS = 5


def poly_lr(t: int, omega: float) -> float:
    """alpha_t = t^-omega."""
    if isinstance(t, bool) or int(t) != t or t < 1:
        raise ValueError(f"t must be a positive integer, got {t!r}")
    if not 0.0 < omega < 1.0:
        raise ValueError(f"omega must lie in (0, 1), got {omega!r}")
    return float(t) ** -omega


def q_bound(mdp: Mdp) -> float:
    """R_max / (1 - gamma): the sup-norm ceiling on every iterate from zero init."""
    return mdp.r_max / (1.0 - mdp.gamma)


def v_max(mdp: Mdp) -> float:
    return 2.0 * mdp.r_max / (1.0 - mdp.gamma)


@dataclass
class StepInfo:
    """What happened during one iteration.

    Synchronous steps fill ``next_states``/``rewards`` with one sample per
    pair; asynchronous steps fill the scalar fields for the visited pair.
    ``chose_a`` is None for vanilla.
    """

    t: int
    alpha: float
    chose_a: bool | None
    next_states: np.ndarray | None = None
    rewards: np.ndarray | None = None
    s: int | None = None
    a: int | None = None
    next_state: int | None = None
    reward: float | None = None


@dataclass
class LearnerState:
    algorithm: str
    q_a: np.ndarray
    q_b: np.ndarray | None
    omega: float
    t: int = 1
    cursors: list = field(default_factory=lambda: [0, 0])
    last: StepInfo | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.algorithm == "vanilla":
            if self.q_b is not None:
                raise ValueError("vanilla Q-learning keeps a single table")
        elif self.q_b is None:
            raise ValueError(f"{self.algorithm} needs both Q^A and Q^B")
        poly_lr(self.t, self.omega)

    @property
    def u_ba(self) -> np.ndarray:
        if self.q_b is None:
            return np.zeros_like(self.q_a)
        return self.q_b - self.q_a

    def copy(self) -> "LearnerState":
        return LearnerState(self.algorithm, self.q_a.copy(),
                            None if self.q_b is None else self.q_b.copy(),
                            self.omega, self.t, list(self.cursors), self.last)


def init_state(mdp: Mdp, algorithm: str, omega: float, q_init: float = 0.0) -> LearnerState:
    q_a = np.full(mdp.shape, float(q_init))
    q_b = None if algorithm == "vanilla" else q_a.copy()
    return LearnerState(algorithm, q_a, q_b, omega)


def _sample_all_pairs(mdp: Mdp, draws: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One independent (s', R) per pair from a (S*A, 2) block of uniforms."""
    n_s, n_a = mdp.shape
    u_next = draws[:, 0].reshape(n_s, n_a)
    u_noise = draws[:, 1].reshape(n_s, n_a)
    next_states = (mdp.cdf <= u_next[:, :, None]).sum(axis=2)
    s_idx, a_idx = np.indices((n_s, n_a))
    rewards = (mdp.reward_mean[s_idx, a_idx, next_states]
               + mdp.noise_halfwidth * (2.0 * u_noise - 1.0))
    return next_states, rewards


def _check_tag(state: LearnerState, algorithm: str) -> None:
    if state.algorithm != algorithm:
        raise ValueError(f"expected a {algorithm} learner, got {state.algorithm}")


def vanilla_q_step(state: LearnerState, mdp: Mdp, rng: np.random.Generator) -> LearnerState:
    _check_tag(state, "vanilla")
    alpha = poly_lr(state.t, state.omega)
    draws = rng.random((mdp.n_states * mdp.n_actions, DRAWS_PER_PAIR))
    next_states, rewards = _sample_all_pairs(mdp, draws)
    target = rewards + mdp.gamma * state.q_a.max(axis=1)[next_states]
    state.q_a = (1.0 - alpha) * state.q_a + alpha * target
    state.last = StepInfo(state.t, alpha, None, next_states=next_states, rewards=rewards)
    state.t += 1
    return state


def sync_double_q_step(state: LearnerState, mdp: Mdp, rng: np.random.Generator,
                       force: bool | None = None) -> LearnerState:
    """One iteration of Algorithm 1: a fair coin picks the table, all pairs update.

    ``force`` overrides the coin (which is still drawn, keeping the stream aligned).
    """
    _check_tag(state, "sync-double")
    alpha = poly_lr(state.t, state.omega)
    coin = rng.random()
    chose_a = bool(coin < 0.5) if force is None else bool(force)
    draws = rng.random((mdp.n_states * mdp.n_actions, DRAWS_PER_PAIR))
    next_states, rewards = _sample_all_pairs(mdp, draws)
    if chose_a:
        a_star = state.q_a.argmax(axis=1)[next_states]
        target = rewards + mdp.gamma * state.q_b[next_states, a_star]
        state.q_a = state.q_a + alpha * (target - state.q_a)
    else:
        b_star = state.q_b.argmax(axis=1)[next_states]
        target = rewards + mdp.gamma * state.q_a[next_states, b_star]
        state.q_b = state.q_b + alpha * (target - state.q_b)
    state.last = StepInfo(state.t, alpha, chose_a, next_states=next_states, rewards=rewards)
    state.t += 1
    return state


@dataclass(frozen=True)
class ExplorationPolicy:
    """Behaviour for asynchronous learning.

    ``uniform`` picks a state-action pair uniformly at random every step
    (generative model); ``round-robin`` walks the pairs in row-major order with
    one cursor per table, so each table sees every pair in any |S||A|
    consecutive updates; ``epsilon-greedy`` follows a trajectory, acting
    greedily on Q^A + Q^B with probability 1 - epsilon.
    """

    kind: str = "uniform"
    epsilon: float = 0.1

    def __post_init__(self):
        if self.kind not in EXPLORATION_KINDS:
            raise ValueError(f"unknown exploration kind {self.kind!r}; expected one of {EXPLORATION_KINDS}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")

    def select(self, state: LearnerState, mdp: Mdp, current_state: int, table: int,
               u1: float, u2: float) -> tuple[int, int]:
        n_s, n_a = mdp.shape
        if self.kind == "uniform":
            return min(int(u1 * n_s), n_s - 1), min(int(u2 * n_a), n_a - 1)
        if self.kind == "round-robin":
            pair = state.cursors[table]
            state.cursors[table] = (pair + 1) % (n_s * n_a)
            return divmod(pair, n_a)
        s = int(current_state)
        if u1 < self.epsilon:
            return s, min(int(u2 * n_a), n_a - 1)
        q_sum = state.q_a[s] if state.q_b is None else state.q_a[s] + state.q_b[s]
        return s, int(np.argmax(q_sum))


def async_double_q_step(state: LearnerState, mdp: Mdp, policy: ExplorationPolicy,
                        current_state: int, rng: np.random.Generator,
                        force: bool | None = None) -> tuple[LearnerState, int]:
    """Update the single visited entry of the chosen table; return the next state."""
    _check_tag(state, "async-double")
    alpha = poly_lr(state.t, state.omega)
    coin, sel1, sel2, u_next, u_noise = rng.random(ASYNC_DRAWS)
    chose_a = bool(coin < 0.5) if force is None else bool(force)
    s, a = policy.select(state, mdp, current_state, 0 if chose_a else 1, sel1, sel2)
    mdp.check_index(s, a)
    s_next = int(np.searchsorted(mdp.cdf[s, a], u_next, side="right"))
    reward = mdp.reward_mean[s, a, s_next] + mdp.noise_halfwidth * (2.0 * u_noise - 1.0)
    if chose_a:
        a_star = int(np.argmax(state.q_a[s_next]))
        target = reward + mdp.gamma * state.q_b[s_next, a_star]
        state.q_a[s, a] = state.q_a[s, a] + alpha * (target - state.q_a[s, a])
    else:
        b_star = int(np.argmax(state.q_b[s_next]))
        target = reward + mdp.gamma * state.q_a[s_next, b_star]
        state.q_b[s, a] = state.q_b[s, a] + alpha * (target - state.q_b[s, a])
    state.last = StepInfo(state.t, alpha, chose_a, s=s, a=a, next_state=s_next, reward=float(reward))
    state.t += 1
    return state, s_next


# --- analysis quantities -----------------------------------------------------

def drift_table(q_a: np.ndarray, q_b: np.ndarray, mdp: Mdp) -> np.ndarray:
    """E[F_t(s,a) | past] for every pair, using the kernel exactly.

    F_t is the increment driving u^BA = Q^B - Q^A. Averaging over the fair coin,
    E[F_t] = u/2 + (gamma/2) sum_s' P(s'|s,a) (Q^A(s',b*) - Q^B(s',a*)).
    """
    q_a = _check_table(mdp, q_a, "q_a")
    q_b = _check_table(mdp, q_b, "q_b")
    rows = np.arange(mdp.n_states)
    cross = q_a[rows, q_b.argmax(axis=1)] - q_b[rows, q_a.argmax(axis=1)]
    return 0.5 * (q_b - q_a) + 0.5 * mdp.gamma * (mdp.kernel @ cross)


def exact_drift_mean(state: LearnerState, mdp: Mdp, s: int, a: int) -> float:
    mdp.check_index(s, a)
    if state.q_b is None:
        raise ValueError("drift is only defined for double learners")
    return float(drift_table(state.q_a, state.q_b, mdp)[s, a])


def f_increment(q_a: np.ndarray, q_b: np.ndarray, chose_a: bool, s, a, s_next, reward,
                gamma: float):
    """F_t(s,a): the sample that u^BA moves towards on this step.

    Works elementwise, so ``s, a, s_next, reward`` may be arrays.
    """
    if chose_a:
        a_star = q_a[s_next].argmax(axis=-1)
        return q_b[s, a] - reward - gamma * q_b[s_next, a_star]
    b_star = q_b[s_next].argmax(axis=-1)
    return reward + gamma * q_a[s_next, b_star] - q_a[s, a]


def w_noise(q_a: np.ndarray, t_q_a: np.ndarray, s, a, s_next, reward, gamma: float):
    """w_t(s,a) = R + gamma Q^A(s', a*) - (T Q^A)(s,a); zero-mean given the past."""
    a_star = q_a[s_next].argmax(axis=-1)
    return reward + gamma * q_a[s_next, a_star] - t_q_a[s, a]
