import sys

import numpy as np
import pytest

from doubleq import Mdp


def single_state(reward=1.0, gamma=0.5, noise=0.0, n_actions=1):
    kernel = np.ones((1, n_actions, 1))
    rewards = np.full((1, n_actions, 1), reward)
    return Mdp(kernel, rewards, gamma, max(abs(reward) + noise, 1e-9), noise)


def swap_mdp(gamma=0.5):
    kernel = np.array([[[0.0, 1.0]], [[1.0, 0.0]]])
    return Mdp(kernel, np.zeros_like(kernel), gamma, 1.0)


def truncated_q_star(mdp, horizon):
    """Q* by enumerating every deterministic policy and summing P^k r to a finite horizon."""
    n_s, n_a = mdp.shape
    r = mdp.expected_reward
    best_v = np.full(n_s, -np.inf)
    for code in range(n_a ** n_s):
        pol = [(code // n_a ** s) % n_a for s in range(n_s)]
        p_pi = mdp.kernel[np.arange(n_s), pol]
        r_pi = r[np.arange(n_s), pol]
        v = np.zeros(n_s)
        term = r_pi.copy()
        for k in range(horizon):
            v += mdp.gamma ** k * term
            term = p_pi @ term
        best_v = np.maximum(best_v, v)
    return r + mdp.gamma * mdp.kernel @ best_v


@pytest.fixture
def one_state():
    return single_state()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, title, secs, detail = results[n]
        terminalreporter.write_line(
            f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {title} ({secs:.1f}s){' - ' + detail if detail else ''}")
