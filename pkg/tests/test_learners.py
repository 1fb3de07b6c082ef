import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from doubleq import (ExplorationPolicy, LearnerState, Mdp, async_double_q_step, bellman_apply, chain_mdp,
                     exact_drift_mean, init_state, optimal_q, poly_lr, random_mdp, sync_double_q_step,
                     vanilla_q_step)
from doubleq.learners import drift_table, f_increment, q_bound, w_noise

from conftest import single_state


class Scripted:
    """Stands in for a Generator and hands out a fixed list of uniforms."""

    def __init__(self, values):
        self.values = list(values)

    def random(self, size=None):
        if size is None:
            return self.values.pop(0)
        n = int(np.prod(size))
        out, self.values = self.values[:n], self.values[n:]
        return np.array(out).reshape(size)


@pytest.mark.parametrize("t, omega, expected", [
    (1, 0.8, 1.0),
    (16, 0.5, 0.25),
    (1000, 0.8, 0.0039810717055349725),
])
def test_poly_lr(t, omega, expected):
    assert poly_lr(t, omega) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("t, omega", [(0, 0.8), (1, 0.0), (1, 1.0), (2.5, 0.5)])
def test_poly_lr_rejects(t, omega):
    with pytest.raises(ValueError):
        poly_lr(t, omega)


def test_vanilla_first_step_is_full_target(one_state):
    state = vanilla_q_step(init_state(one_state, "vanilla", 0.8), one_state, np.random.default_rng(0))
    assert state.q_a[0, 0] == 1.0
    assert state.t == 2


def test_vanilla_tiny_rate_leaves_q_alone(one_state):
    state = init_state(one_state, "vanilla", 0.99)
    state.q_a[:] = 0.3
    state.t = 10 ** 15
    vanilla_q_step(state, one_state, np.random.default_rng(0))
    assert state.q_a[0, 0] == pytest.approx(0.3, abs=1e-12)


def test_vanilla_converges_on_chain():
    mdp = chain_mdp(2, gamma=0.9)
    state = init_state(mdp, "vanilla", 0.6)
    rng = np.random.default_rng(0)
    for _ in range(10 ** 4):
        vanilla_q_step(state, mdp, rng)
    assert np.abs(state.q_a - optimal_q(mdp)).max() < 0.05


def test_forced_a_update(one_state):
    state = sync_double_q_step(init_state(one_state, "sync-double", 0.8), one_state,
                               np.random.default_rng(0), force=True)
    assert state.q_a[0, 0] == 1.0
    assert state.q_b[0, 0] == 0.0
    assert state.last.chose_a


def test_forced_coin_keeps_stream():
    mdp = random_mdp(3, 2, seed=1)
    r1, r2 = np.random.default_rng(4), np.random.default_rng(4)
    sync_double_q_step(init_state(mdp, "sync-double", 0.8), mdp, r1, force=False)
    sync_double_q_step(init_state(mdp, "sync-double", 0.8), mdp, r2)
    assert r1.random() == r2.random()


def test_symmetric_tables_match_vanilla_target():
    kernel = np.array([[[0.0, 1.0], [1.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]]])
    reward = np.array([[[0.0, 0.5], [0.2, 0.0]], [[-0.3, 0.0], [0.0, 0.1]]])
    mdp = Mdp(kernel, reward, 0.7, 1.0)
    q = np.array([[0.4, -0.2], [0.9, 0.3]])
    for force in (True, False):
        dbl = LearnerState("sync-double", q.copy(), q.copy(), 0.5, t=3)
        van = LearnerState("vanilla", q.copy(), None, 0.5, t=3)
        sync_double_q_step(dbl, mdp, np.random.default_rng(2), force=force)
        rng = np.random.default_rng(2)
        rng.random()
        vanilla_q_step(van, mdp, rng)
        updated = dbl.q_a if force else dbl.q_b
        np.testing.assert_allclose(updated, van.q_a, atol=1e-15)


def test_u_ba_recursion():
    mdp = random_mdp(4, 2, seed=0)
    state = init_state(mdp, "sync-double", 0.8)
    rng = np.random.default_rng(3)
    s_idx, a_idx = np.indices(mdp.shape)
    for _ in range(200):
        qa, qb, u = state.q_a.copy(), state.q_b.copy(), state.u_ba
        sync_double_q_step(state, mdp, rng)
        info = state.last
        f = f_increment(qa, qb, info.chose_a, s_idx, a_idx, info.next_states, info.rewards, mdp.gamma)
        np.testing.assert_allclose(state.u_ba, (1 - info.alpha) * u + info.alpha * f, atol=1e-13)


def test_error_decomposition_on_a_updates():
    mdp = random_mdp(4, 2, seed=0)
    q_star = optimal_q(mdp)
    state = init_state(mdp, "sync-double", 0.8)
    rng = np.random.default_rng(8)
    s_idx, a_idx = np.indices(mdp.shape)
    seen = 0
    for _ in range(300):
        qa, u = state.q_a.copy(), state.u_ba
        tqa = bellman_apply(mdp, qa)
        sync_double_q_step(state, mdp, rng)
        info = state.last
        if not info.chose_a:
            continue
        seen += 1
        s2 = info.next_states
        w = w_noise(qa, tqa, s_idx, a_idx, s2, info.rewards, mdp.gamma)
        a_star = qa[s2].argmax(axis=-1)
        r = qa - q_star
        expected = (1 - info.alpha) * r + info.alpha * (tqa - q_star + w + mdp.gamma * u[s2, a_star])
        np.testing.assert_allclose(state.q_a - q_star, expected, atol=1e-12)
    assert seen > 100


def test_w_noise_is_zero_mean():
    mdp = random_mdp(3, 2, seed=6)
    qa = np.random.default_rng(1).normal(size=mdp.shape)
    tqa = bellman_apply(mdp, qa)
    a_star = qa.argmax(axis=1)
    mean = (mdp.kernel * (mdp.reward_mean + mdp.gamma * qa[np.arange(3), a_star][None, None, :])).sum(axis=2) - tqa
    np.testing.assert_allclose(mean, 0.0, atol=1e-14)


@pytest.mark.parametrize("kind", ["uniform", "round-robin", "epsilon-greedy"])
def test_async_touches_one_entry(kind):
    mdp = random_mdp(3, 3, seed=2)
    state = init_state(mdp, "async-double", 0.8)
    rng = np.random.default_rng(0)
    policy = ExplorationPolicy(kind)
    current = 0
    for _ in range(100):
        qa, qb = state.q_a.copy(), state.q_b.copy()
        state, current = async_double_q_step(state, mdp, policy, current, rng)
        info = state.last
        changed, other = (state.q_a, qb) if info.chose_a else (state.q_b, qa)
        before = qa if info.chose_a else qb
        mask = np.ones(mdp.shape, bool)
        mask[info.s, info.a] = False
        np.testing.assert_array_equal(changed[mask], before[mask])
        np.testing.assert_array_equal(state.q_b if info.chose_a else state.q_a, other)


def test_async_first_step_equals_reward():
    mdp = random_mdp(2, 2, seed=3)
    state, _ = async_double_q_step(init_state(mdp, "async-double", 0.8), mdp, ExplorationPolicy(),
                                   0, np.random.default_rng(1))
    info = state.last
    table = state.q_a if info.chose_a else state.q_b
    assert table[info.s, info.a] == info.reward


def test_single_state_async_matches_sync():
    mdp = single_state(reward=0.2, gamma=0.6, noise=0.5)
    uniforms = np.random.default_rng(0).random((500, 3))
    sync_draws = uniforms.ravel().tolist()
    async_draws = [x for c, n, z in uniforms for x in (c, 0.5, 0.5, n, z)]
    s_state = init_state(mdp, "sync-double", 0.7)
    a_state = init_state(mdp, "async-double", 0.7)
    s_rng, a_rng = Scripted(sync_draws), Scripted(async_draws)
    for _ in range(500):
        sync_double_q_step(s_state, mdp, s_rng)
        a_state, _ = async_double_q_step(a_state, mdp, ExplorationPolicy(), 0, a_rng)
    assert s_state.q_a[0, 0] == a_state.q_a[0, 0]
    assert s_state.q_b[0, 0] == a_state.q_b[0, 0]


def test_round_robin_cursor_per_table():
    mdp = random_mdp(2, 2, seed=0)
    state = init_state(mdp, "async-double", 0.8)
    policy = ExplorationPolicy("round-robin")
    visits = {True: [], False: []}
    rng = np.random.default_rng(0)
    for _ in range(40):
        state, _ = async_double_q_step(state, mdp, policy, 0, rng)
        visits[state.last.chose_a].append(state.last.s * 2 + state.last.a)
    for seq in visits.values():
        assert seq == [i % 4 for i in range(len(seq))]


def test_drift_zero_for_equal_tables():
    mdp = random_mdp(3, 2, seed=1)
    q = np.random.default_rng(0).normal(size=mdp.shape)
    assert np.all(drift_table(q, q.copy(), mdp) == 0.0)


def test_drift_single_state_constant_gap():
    mdp = single_state(gamma=0.3, n_actions=2)
    delta = 0.8
    qa = np.array([[0.1, -0.4]])
    state = LearnerState("sync-double", qa, qa + delta, 0.8)
    assert exact_drift_mean(state, mdp, 0, 1) == pytest.approx(delta * (1 - 0.3) / 2, abs=1e-15)


def test_drift_needs_double_learner(one_state):
    with pytest.raises(ValueError):
        exact_drift_mean(init_state(one_state, "vanilla", 0.8), one_state, 0, 0)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 999), st.integers(0, 999), st.sampled_from([0.4, 0.5, 0.8, 0.95]))
def test_drift_contracts(mdp_seed, q_seed, gamma):
    mdp = random_mdp(4, 3, seed=mdp_seed, gamma=gamma)
    rng = np.random.default_rng(q_seed)
    qa = rng.normal(size=mdp.shape)
    qb = qa + rng.normal(scale=rng.choice([1e-3, 1.0]), size=mdp.shape)
    bound = (1 + gamma) / 2 * np.abs(qb - qa).max()
    assert np.abs(drift_table(qa, qb, mdp)).max() <= bound + 1e-12


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["vanilla", "sync-double", "async-double"]), st.integers(0, 999),
       st.sampled_from([0.5, 0.9]), st.sampled_from([0.51, 0.8, 0.99]))
def test_iterates_stay_bounded(algorithm, seed, gamma, omega):
    mdp = random_mdp(3, 2, seed=seed, gamma=gamma, noise_halfwidth=1.0)
    state = init_state(mdp, algorithm, omega)
    rng = np.random.default_rng(seed)
    ceiling = q_bound(mdp) + 1e-12
    current = 0
    for _ in range(300):
        if algorithm == "vanilla":
            vanilla_q_step(state, mdp, rng)
        elif algorithm == "sync-double":
            sync_double_q_step(state, mdp, rng)
        else:
            state, current = async_double_q_step(state, mdp, ExplorationPolicy(), current, rng)
        assert np.abs(state.q_a).max() <= ceiling
        if state.q_b is not None:
            assert np.abs(state.q_b).max() <= ceiling


def test_wrong_learner_tag(one_state):
    with pytest.raises(ValueError):
        vanilla_q_step(init_state(one_state, "sync-double", 0.8), one_state, np.random.default_rng(0))
    with pytest.raises(ValueError):
        LearnerState("vanilla", np.zeros((1, 1)), np.zeros((1, 1)), 0.8)
