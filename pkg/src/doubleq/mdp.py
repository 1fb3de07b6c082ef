"""Finite MDPs: representation, sampling, the exact Bellman operator and a
value-iteration oracle for Q*.

Q-tables are plain ``numpy`` arrays of shape ``(n_states, n_actions)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np

KERNEL_ATOL = 1e-12


class TransitionSample(NamedTuple):
    next_state: int
    reward: float


@dataclass(frozen=True, eq=False)
class Mdp:
    """A finite discounted MDP with bounded stochastic rewards.

    The reward for ``(s, a, s')`` is ``reward_mean[s, a, s']`` plus noise drawn
    uniformly from ``[-noise_halfwidth, noise_halfwidth]``.
    """

    kernel: np.ndarray
    reward_mean: np.ndarray
    gamma: float
    r_max: float
    noise_halfwidth: float = 0.0
    name: str = field(default="mdp", compare=False)

    def __post_init__(self):
        kernel = np.array(self.kernel, dtype=np.float64)
        reward_mean = np.array(self.reward_mean, dtype=np.float64)
        if kernel.ndim != 3 or kernel.shape[0] != kernel.shape[2]:
            raise ValueError(f"kernel must have shape (S, A, S), got {kernel.shape}")
        if reward_mean.shape != kernel.shape:
            raise ValueError(
                f"reward_mean shape {reward_mean.shape} does not match kernel {kernel.shape}")
        if kernel.shape[0] < 1 or kernel.shape[1] < 1:
            raise ValueError("need at least one state and one action")
        if not np.all(np.isfinite(kernel)) or np.any(kernel < 0):
            raise ValueError("kernel entries must be finite and non-negative")
        row_err = np.abs(kernel.sum(axis=2) - 1.0)
        if np.any(row_err > KERNEL_ATOL):
            s, a = np.unravel_index(np.argmax(row_err), row_err.shape)
            raise ValueError(f"kernel[{s}][{a}] sums to {kernel[s, a].sum()!r}, expected 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.r_max <= 0:
            raise ValueError(f"r_max must be positive, got {self.r_max}")
        if self.noise_halfwidth < 0:
            raise ValueError("noise_halfwidth must be non-negative")
        if not np.all(np.isfinite(reward_mean)):
            raise ValueError("reward_mean entries must be finite")
        worst = np.abs(reward_mean).max() + self.noise_halfwidth
        if worst > self.r_max * (1 + 1e-12):
            raise ValueError(
                f"|reward_mean| + noise_halfwidth reaches {worst}, exceeding r_max={self.r_max}")
        kernel.setflags(write=False)
        reward_mean.setflags(write=False)
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "reward_mean", reward_mean)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "r_max", float(self.r_max))
        object.__setattr__(self, "noise_halfwidth", float(self.noise_halfwidth))

    @property
    def n_states(self) -> int:
        return self.kernel.shape[0]

    @property
    def n_actions(self) -> int:
        return self.kernel.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.kernel.shape[0], self.kernel.shape[1]

    @cached_property
    def cdf(self) -> np.ndarray:
        """Cumulative kernel over next states, last column pinned to exactly 1."""
        cdf = np.cumsum(self.kernel, axis=2)
        cdf[..., -1] = 1.0
        cdf.setflags(write=False)
        return cdf

    @cached_property
    def expected_reward(self) -> np.ndarray:
        """E[R | s, a] = sum_s' P(s'|s,a) R_sa^s'."""
        r = np.einsum("ijk,ijk->ij", self.kernel, self.reward_mean)
        r.setflags(write=False)
        return r

    def check_index(self, s: int, a: int) -> None:
        if not (0 <= s < self.n_states and 0 <= a < self.n_actions):
            raise IndexError(
                f"(s={s}, a={a}) outside {self.n_states} states x {self.n_actions} actions")

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.gamma,
            "r_max": self.r_max,
            "noise_halfwidth": self.noise_halfwidth,
            "kernel": self.kernel.tolist(),
            "reward_mean": self.reward_mean.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict, name: str = "mdp") -> "Mdp":
        missing = {"n_states", "n_actions", "gamma", "r_max", "kernel", "reward_mean"} - doc.keys()
        if missing:
            raise ValueError(f"MDP document missing fields: {sorted(missing)}")
        mdp = cls(
            kernel=np.asarray(doc["kernel"], dtype=np.float64),
            reward_mean=np.asarray(doc["reward_mean"], dtype=np.float64),
            gamma=doc["gamma"],
            r_max=doc["r_max"],
            noise_halfwidth=doc.get("noise_halfwidth", 0.0),
            name=name,
        )
        if mdp.shape != (doc["n_states"], doc["n_actions"]):
            raise ValueError(
                f"declared dims ({doc['n_states']}, {doc['n_actions']}) do not match "
                f"kernel dims {mdp.shape}")
        return mdp


def load_mdp(path: str | Path) -> Mdp:
    path = Path(path)
    with path.open() as f:
        return Mdp.from_dict(json.load(f), name=path.stem)


def save_mdp(mdp: Mdp, path: str | Path) -> None:
    Path(path).write_text(json.dumps(mdp.to_dict(), indent=2) + "\n")


def _check_table(mdp: Mdp, q: np.ndarray, what: str = "q") -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != mdp.shape:
        raise ValueError(f"{what} has shape {q.shape}, MDP expects {mdp.shape}")
    return q


def draw_next_state(cdf_row: np.ndarray, u: float) -> int:
    """Inverse-CDF lookup: the first next state whose cumulative mass exceeds u."""
    return int(np.searchsorted(cdf_row, u, side="right"))


def sample_from_uniforms(mdp: Mdp, s: int, a: int, u_next: float, u_noise: float) -> TransitionSample:
    s_next = draw_next_state(mdp.cdf[s, a], u_next)
    reward = mdp.reward_mean[s, a, s_next] + mdp.noise_halfwidth * (2.0 * u_noise - 1.0)
    return TransitionSample(s_next, float(reward))


def sample_transition(mdp: Mdp, s: int, a: int, rng: np.random.Generator) -> TransitionSample:
    """Draw (s', R) for the pair (s, a). Consumes exactly two uniforms from ``rng``."""
    mdp.check_index(s, a)
    u_next = rng.random()
    u_noise = rng.random()
    return sample_from_uniforms(mdp, s, a, u_next, u_noise)


def greedy(q: np.ndarray, axis: int = -1) -> np.ndarray:
    """Argmax with ties broken towards the lowest action index."""
    return np.argmax(q, axis=axis)


def bellman_apply(mdp: Mdp, q: np.ndarray) -> np.ndarray:
    """(T q)(s,a) = sum_s' P(s'|s,a) (R_sa^s' + gamma max_a' q(s',a'))."""
    q = _check_table(mdp, q)
    v = q.max(axis=1)
    return mdp.expected_reward + mdp.gamma * (mdp.kernel @ v)


def sup_norm(q: np.ndarray) -> float:
    return float(np.max(np.abs(q))) if np.size(q) else 0.0


def sup_norm_diff(q: np.ndarray, q2: np.ndarray) -> float:
    q, q2 = np.asarray(q), np.asarray(q2)
    if q.shape != q2.shape:
        raise ValueError(f"shape mismatch: {q.shape} vs {q2.shape}")
    return sup_norm(q - q2)


def optimal_q(mdp: Mdp, tol: float = 1e-12, max_iter: int = 1_000_000) -> np.ndarray:
    """Value iteration from zero; the result satisfies ||T Q - Q|| <= tol.

    Stops once successive iterates differ by at most ``tol * (1 - gamma) / gamma``,
    which by contraction also puts the returned table within ``tol`` of Q*.
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    stop = tol * (1.0 - mdp.gamma) / mdp.gamma
    q = np.zeros(mdp.shape)
    for _ in range(max_iter):
        q_next = bellman_apply(mdp, q)
        if sup_norm_diff(q_next, q) <= stop:
            return q_next
        q = q_next
    raise RuntimeError(f"value iteration did not reach tol={tol} in {max_iter} sweeps")


# --- generators -------------------------------------------------------------

def random_mdp(n_states: int, n_actions: int, *, seed: int = 0, gamma: float = 0.5,
               r_max: float = 1.0, noise_halfwidth: float = 0.5) -> Mdp:
    """Dirichlet(1) transition rows, reward means uniform in +-(r_max - noise)."""
    if noise_halfwidth > r_max:
        raise ValueError("noise_halfwidth cannot exceed r_max")
    rng = np.random.default_rng(seed)
    kernel = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    # renormalise so rows sum to 1 within KERNEL_ATOL after the float division
    kernel /= kernel.sum(axis=2, keepdims=True)
    span = r_max - noise_halfwidth
    reward_mean = rng.uniform(-span, span, size=(n_states, n_actions, n_states))
    return Mdp(kernel, reward_mean, gamma, r_max, noise_halfwidth,
               name=f"random-{n_states}x{n_actions}-s{seed}")


def chain_mdp(n_states: int, *, gamma: float = 0.9, slip: float = 0.0,
              r_max: float = 1.0, noise_halfwidth: float = 0.0) -> Mdp:
    """Two-action chain: action 0 steps left, action 1 steps right.

    With probability ``slip`` the move goes the other way. Landing on the last
    state pays ``r_max - noise_halfwidth`` in expectation, everything else 0.
    """
    if n_states < 2:
        raise ValueError("a chain needs at least two states")
    kernel = np.zeros((n_states, 2, n_states))
    for s in range(n_states):
        left, right = max(s - 1, 0), min(s + 1, n_states - 1)
        kernel[s, 0, left] += 1 - slip
        kernel[s, 0, right] += slip
        kernel[s, 1, right] += 1 - slip
        kernel[s, 1, left] += slip
    reward_mean = np.zeros_like(kernel)
    reward_mean[:, :, -1] = r_max - noise_halfwidth
    return Mdp(kernel, reward_mean, gamma, r_max, noise_halfwidth, name=f"chain-{n_states}")


def fanout_mdp(n_arms: int = 8, *, gamma: float = 0.9, noise_halfwidth: float = 1.0) -> Mdp:
    """Root state 0 with ``n_arms`` zero-mean arms, all leading to absorbing state 1.

    Every reward has mean zero, so Q* is identically zero; any positive
    ``max_a Q(0, a)`` after learning is pure estimation bias.
    """
    kernel = np.zeros((2, n_arms, 2))
    kernel[:, :, 1] = 1.0
    reward_mean = np.zeros_like(kernel)
    r_max = noise_halfwidth if noise_halfwidth > 0 else 1.0
    return Mdp(kernel, reward_mean, gamma, r_max, noise_halfwidth, name=f"fanout-{n_arms}")
