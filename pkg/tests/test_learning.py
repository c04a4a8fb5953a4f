from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rewalign.envs import KeyChestEnv, TabularModel, generate_demonstrations, value_iteration
from rewalign.errors import InvalidInputError
from rewalign.events import Trajectory
from rewalign.harness import build_redistribution, default_pipeline, demo_policy, make_env
from rewalign.learning import (
    LearnerConfig,
    QTable,
    bc_initialize,
    demo_buffer,
    epsilon_greedy,
    q_learning_update,
    rudder_q_update,
    sqil_update,
    train,
)
from rewalign.stats import episodes_to_threshold


def traj(states, actions):
    return Trajectory(states, actions, [0.0] * (len(actions) - 1) + [1.0])


# BC initialisation -------------------------------------------------------------

def test_bc_zero_noise_single_demo():
    q = bc_initialize(QTable.zeros(6, 4), [traj([0, 1, 2, 3], [3, 1, 2])], (0.25, 0.0))
    for s, a in ((0, 3), (1, 1), (2, 2)):
        assert q.greedy(s) == a
    assert np.all(q.values[3:] == 0.25)
    assert np.all(q.values[0, [0, 1, 2]] == 0.25)


def test_bc_majority_action():
    demos = [traj([0, 0], [3]), traj([0, 0], [3]), traj([0, 0], [3]), traj([0, 0], [0])]
    q = bc_initialize(QTable.zeros(1, 4), demos, (0.0, 0.1), np.random.default_rng(0))
    assert q.greedy(0) == 3


def test_bc_seeded_noise_is_reproducible():
    demos = [traj([0, 1, 2], [1, 1])]
    a = bc_initialize(QTable.zeros(5, 4), demos, (0.0, 0.3), np.random.default_rng(4))
    b = bc_initialize(QTable.zeros(5, 4), demos, (0.0, 0.3), np.random.default_rng(4))
    assert a.values.tobytes() == b.values.tobytes()


def test_bc_rejects_negative_std():
    with pytest.raises(InvalidInputError):
        bc_initialize(QTable.zeros(1, 2), [], (0.0, -1.0))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 3)), min_size=1, max_size=8), min_size=1, max_size=5),
       st.integers(0, 2**31 - 1), st.floats(0.0, 2.0))
def test_bc_greedy_is_demo_majority(demo_steps, seed, std):
    demos = [traj([s for s, _ in steps] + [0], [a for _, a in steps]) for steps in demo_steps]
    q = bc_initialize(QTable.zeros(5, 4), demos, (0.0, std), np.random.default_rng(seed))
    counts = {}
    for steps in demo_steps:
        for s, a in steps:
            counts.setdefault(s, Counter())[a] += 1
    for s, c in counts.items():
        top = max(c.values())
        assert c[q.greedy(s)] == top
        assert q.greedy(s) == min(a for a, k in c.items() if k == top)


# updates ---------------------------------------------------------------------

def test_rudder_update_single_step():
    q = rudder_q_update(QTable.zeros(1, 1), (0, 0, 1.0), 0.1)
    assert q.values[0, 0] == pytest.approx(0.1) and q.counts[0, 0] == 1


@pytest.mark.parametrize("r,lr", [(1.0, 0.1), (-2.5, 0.3), (0.0, 0.5)])
def test_rudder_update_closed_form(r, lr):
    q = QTable(np.full((1, 1), 3.0), np.zeros((1, 1)))
    for k in range(1, 60):
        rudder_q_update(q, (0, 0, r), lr)
        assert q.values[0, 0] == pytest.approx(r + (3.0 - r) * (1 - lr) ** k, abs=1e-12)


def test_rudder_update_mean_of_iid_stream():
    # the running estimate fluctuates with sd sqrt(lr / (2 - lr)); its time
    # average after burn-in settles on the mean
    rng = np.random.default_rng(0)
    q = QTable.zeros(1, 1)
    trace = []
    for r in rng.normal(0.7, 1.0, 40000):
        rudder_q_update(q, (0, 0, r), 0.01)
        trace.append(q.values[0, 0])
    assert abs(np.mean(trace[2000:]) - 0.7) < 0.05


def test_q_learning_terminal_step():
    q = q_learning_update(QTable.zeros(1, 1), (0, 0, 1.0, 0, True), 0.5)
    assert q.values[0, 0] == 0.5


def test_q_learning_zero_reward_fixed_point():
    q = QTable.zeros(3, 2)
    for _ in range(100):
        q_learning_update(q, (0, 1, 0.0, 2, False), 0.5)
    assert np.all(q.values == 0)


def _random_deterministic_mdp(rng, n, A):
    nxt = rng.integers(0, n, (A, n, 1))
    reward = rng.uniform(-1, 1, (A, n))
    return TabularModel(nxt, np.ones((A, n, 1)), reward, np.zeros(n))


@pytest.mark.parametrize("seed", range(5))
def test_q_learning_sweeps_converge_to_value_iteration(seed):
    rng = np.random.default_rng(seed)
    n, A, g = int(rng.integers(2, 21)), int(rng.integers(1, 5)), 0.9
    m = _random_deterministic_mdp(rng, n, A)
    v, _ = value_iteration(m, discount=g, tol=1e-13)
    oracle = m.q_values(v, g)
    q = QTable.zeros(n, A)
    for _ in range(600):
        for s in range(n):
            for a in range(A):
                q_learning_update(q, (s, a, m.reward[a, s], int(m.next[a, s, 0]), False), 1.0, g)
    assert np.abs(q.values - oracle).max() < 1e-6


def test_q_learning_two_state_chain():
    # state 0 -> 1 with reward 0, state 1 terminal with reward 1
    q = QTable.zeros(2, 1)
    for _ in range(200):
        q_learning_update(q, (0, 0, 0.0, 1, False), 0.5)
        q_learning_update(q, (1, 0, 1.0, 1, True), 0.5)
    assert np.abs(q.values[:, 0] - [1.0, 1.0]).max() < 1e-6


def test_sqil_demo_only_rises():
    q = QTable.zeros(2, 1)
    buf = [(1, 0, 1, True)]
    rng = np.random.default_rng(0)
    for _ in range(100):
        sqil_update(q, (0, 0, 0.0, 0, True), buf, 0.1, rng)
    assert q.values[1, 0] > 0.99 and q.values[0, 0] == 0.0


def test_sqil_agent_only_decays():
    q = QTable(np.ones((2, 1)), np.zeros((2, 1)))
    buf = [(1, 0, 1, True)]
    rng = np.random.default_rng(0)
    for _ in range(200):
        sqil_update(q, (0, 0, 0.0, 0, True), buf, 0.1, rng)
    assert q.values[0, 0] < 1e-6


def test_sqil_matches_hand_replay():
    buf = [(0, 1, 1, False), (1, 0, 0, True)]
    agent = [(0, 0, 0.0, 1, False), (1, 1, 0.0, 0, True), (0, 1, 0.0, 1, False)] * 5
    q = QTable.zeros(2, 2)
    rng = np.random.default_rng(3)
    for tr in agent:
        sqil_update(q, tr, buf, 0.2, rng, 0.9)
    # replay by hand with the same draws
    Q = np.zeros((2, 2))
    picks = np.random.default_rng(3)
    for s, a, _, s2, done in agent:
        Q[s, a] += 0.2 * ((0.0 if done else 0.9 * Q[s2].max()) - Q[s, a])
        ds, da, ds2, ddone = buf[int(picks.integers(2))]
        Q[ds, da] += 0.2 * ((1.0 if ddone else 1.0 + 0.9 * Q[ds2].max()) - Q[ds, da])
    assert np.array_equal(q.values, Q)


def test_sqil_empty_buffer():
    with pytest.raises(InvalidInputError):
        sqil_update(QTable.zeros(1, 1), (0, 0, 0.0, 0, True), [], 0.1, np.random.default_rng(0))


def test_demo_buffer_marks_last_step():
    buf = demo_buffer([traj([0, 1, 2], [1, 0])])
    assert buf == [(0, 1, 1, False), (1, 0, 2, True)]


# acting ----------------------------------------------------------------------

def test_epsilon_greedy_examples():
    rng = np.random.default_rng(0)
    q = QTable(np.array([[0.1, 0.5, 0.2], [0.0, 0.0, 0.0]]), np.zeros((2, 3)))
    assert all(epsilon_greedy(q, 0, 0.0, rng) == 1 for _ in range(50))
    assert epsilon_greedy(q, 1, 0.0, rng) == 0
    c = Counter(epsilon_greedy(q, 0, 1.0, rng) for _ in range(10_000))
    assert all(abs(c[a] / 10_000 - 1 / 3) <= 0.02 for a in range(3))
    with pytest.raises(InvalidInputError):
        epsilon_greedy(q, 0, 1.5, rng)


@settings(max_examples=100)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=6), st.floats(-100, 100))
def test_greedy_invariant_to_constant_shift(values, c):
    q = QTable(np.array([values]), np.zeros((1, len(values))))
    shifted = QTable(np.array([values]) + c, np.zeros((1, len(values))))
    a, b = q.greedy(0), shifted.greedy(0)
    # float rounding can only merge near-ties
    assert a == b or abs(values[a] - values[b]) < 1e-9 * (1 + abs(c))


# training --------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(InvalidInputError):
        LearnerConfig("nope")
    with pytest.raises(InvalidInputError):
        LearnerConfig("bcq", learning_rate=0.0)
    with pytest.raises(InvalidInputError):
        LearnerConfig("bcq", epsilon=2.0)
    assert LearnerConfig.default("align").learning_rate == 0.1
    assert LearnerConfig.default("bcq").learning_rate == 0.01


def test_train_budget_one():
    env = KeyChestEnv()
    demos = generate_demonstrations(env, demo_policy(env), 0.2, 2, np.random.default_rng(0))
    curve, _ = train(env, LearnerConfig("bcq", 0.01), demos, np.random.default_rng(1), budget=1)
    assert len(curve.episodes) >= 1 and curve.episodes[-1] == 1


def test_train_stops_when_bc_already_solves():
    env = KeyChestEnv()
    demos = generate_demonstrations(env, demo_policy(env), 0.0, 3, np.random.default_rng(0))
    for method in ("bcq", "sqil"):
        curve, _ = train(env, LearnerConfig.default(method), demos, np.random.default_rng(1), threshold=0.8)
        assert episodes_to_threshold(curve.as_pairs(), 0.8, 5000) == 0


def test_train_align_needs_redistributor():
    env = KeyChestEnv()
    with pytest.raises(InvalidInputError):
        train(env, LearnerConfig("align"), [], np.random.default_rng(0))


def test_train_is_deterministic():
    env = make_env("fourrooms")
    rng = np.random.default_rng(5)
    demos = generate_demonstrations(env, demo_policy(env), 0.2, 3, rng)
    runs = [train(env, LearnerConfig.default("sqil"), demos, np.random.default_rng(2), budget=30)[1] for _ in range(2)]
    assert runs[0].values.tobytes() == runs[1].values.tobytes()


@pytest.mark.slow
def test_fourrooms_hundred_demos_learns_within_tens_of_episodes():
    env = make_env("fourrooms")
    rng = np.random.default_rng(100)
    demos = generate_demonstrations(env, demo_policy(env), 0.2, 100, rng)
    art = build_redistribution(env, demos, default_pipeline("fourrooms"), rng)
    curve, _ = train(env, LearnerConfig.default("align"), demos, rng, art.redistributor, threshold=0.8)
    assert episodes_to_threshold(curve.as_pairs(), 0.8, 5000) <= 100
