"""Tabular learners: redistributed-reward Q estimation and baselines."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInputError
from .events import Trajectory

METHODS = ("align", "bcq", "sqil")


@dataclass
class QTable:
    values: np.ndarray
    counts: np.ndarray

    @classmethod
    def zeros(cls, n_states: int, n_actions: int) -> "QTable":
        return cls(np.zeros((n_states, n_actions)), np.zeros((n_states, n_actions), dtype=np.int64))

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.values.shape != self.counts.shape:
            raise InvalidInputError("values and counts must have the same shape")

    @property
    def n_actions(self) -> int:
        return self.values.shape[1]

    def greedy(self, state: int) -> int:
        return int(np.argmax(self.values[state]))

    def greedy_policy(self) -> np.ndarray:
        return np.argmax(self.values, axis=1)

    def copy(self) -> "QTable":
        return QTable(self.values.copy(), self.counts.copy())


@dataclass
class LearnerConfig:
    """``update`` selects how the align learner uses redistributed reward:
    "direct" averages the immediate reward into Q, "td" runs Q-learning on it.
    """

    method: str = "align"
    learning_rate: float = 0.1
    epsilon: float = 0.2
    bc_mean: float = 0.0
    bc_std: float = 0.1
    discount: float = 1.0
    update: str = "td"

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidInputError(f"unknown method {self.method!r}")
        if not self.learning_rate > 0:
            raise InvalidInputError("learning rate must be positive")
        if not 0 <= self.epsilon <= 1:
            raise InvalidInputError("epsilon must lie in [0, 1]")
        if not 0 <= self.discount <= 1:
            raise InvalidInputError("discount must lie in [0, 1]")
        if self.update not in ("direct", "td", "mc"):
            raise InvalidInputError(f"unknown update {self.update!r}")

    @classmethod
    def default(cls, method: str) -> "LearnerConfig":
        if method == "align":
            return cls("align", 0.1, discount=0.99, update="td")
        if method == "bcq":
            return cls("bcq", 0.01)
        if method == "sqil":
            return cls("sqil", 0.01, discount=0.99)
        raise InvalidInputError(f"unknown method {method!r}")


def bc_initialize(
    qtable: QTable,
    demos: Sequence[Trajectory],
    noise: tuple[float, float] = (0.0, 0.1),
    rng: np.random.Generator | None = None,
) -> QTable:
    """Behavioral-cloning initialisation.

    Demo actions get 0.5 + 0.5 * (their frequency in that state); every other
    entry is drawn from Normal(mean, std), capped at 0.5 on demo states so the
    demo actions stay on top.
    """
    mean, std = noise
    if std < 0:
        raise InvalidInputError("noise std must be non-negative")
    rng = rng if rng is not None else np.random.default_rng(0)
    n, A = qtable.values.shape
    freq = np.zeros((n, A))
    for d in demos:
        np.add.at(freq, (np.asarray(d.states[:-1]), np.asarray(d.actions)), 1.0)
    visited = freq.sum(axis=1) > 0
    vals = rng.normal(mean, std, size=(n, A)) if std > 0 else np.full((n, A), float(mean))
    vals[visited] = np.minimum(vals[visited], 0.5)
    freq[visited] /= freq[visited].sum(axis=1, keepdims=True)
    demo = freq > 0
    vals[demo] = 0.5 + 0.5 * freq[demo]
    qtable.values[:] = vals
    return qtable


def rudder_q_update(qtable: QTable, transition, lr: float) -> QTable:
    """Q(s,a) <- Q(s,a) + lr (R - Q(s,a)) with R the redistributed reward."""
    s, a, r = transition
    if not 0 < lr <= 1:
        raise InvalidInputError("learning rate must lie in (0, 1]")
    qtable.values[s, a] += lr * (r - qtable.values[s, a])
    qtable.counts[s, a] += 1
    return qtable


def q_learning_update(qtable: QTable, transition, lr: float, discount: float = 1.0) -> QTable:
    s, a, r, s2, done = transition
    if not 0 < lr <= 1:
        raise InvalidInputError("learning rate must lie in (0, 1]")
    target = r if done else r + discount * qtable.values[s2].max()
    qtable.values[s, a] += lr * (target - qtable.values[s, a])
    qtable.counts[s, a] += 1
    return qtable


def sqil_update(qtable: QTable, agent_transition, demo_buffer, lr: float, rng: np.random.Generator, discount: float = 0.99) -> QTable:
    """One backup on the agent transition with reward 0 and one on a uniformly
    drawn demo transition with reward 1."""
    if not len(demo_buffer):
        raise InvalidInputError("empty demonstration buffer")
    s, a, _, s2, done = agent_transition
    q_learning_update(qtable, (s, a, 0.0, s2, done), lr, discount)
    ds, da, ds2, ddone = demo_buffer[int(rng.integers(len(demo_buffer)))]
    q_learning_update(qtable, (ds, da, 1.0, ds2, ddone), lr, discount)
    return qtable


def epsilon_greedy(qtable: QTable, state: int, epsilon: float, rng: np.random.Generator) -> int:
    if not 0 <= epsilon <= 1:
        raise InvalidInputError("epsilon must lie in [0, 1]")
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(qtable.n_actions))
    return qtable.greedy(state)


def demo_buffer(demos: Sequence[Trajectory]) -> list[tuple[int, int, int, bool]]:
    out = []
    for d in demos:
        T = len(d.actions)
        for t in range(T):
            out.append((d.states[t], d.actions[t], d.states[t + 1], t == T - 1))
    return out


def evaluate(env, qtable: QTable, rng: np.random.Generator, rollouts: int = 10) -> float:
    """Mean return of greedy rollouts; a rollout that enters an absorbing
    state is cut short since its return is then fixed."""
    greedy = qtable.greedy_policy().tolist()
    total = 0.0
    for _ in range(rollouts):
        s = env.reset(rng)
        done = False
        r = 0.0
        while not done:
            s, r, done = env.step(greedy[s], rng)
            if not done and env.is_absorbing(s):
                r = 1.0 if env.is_target(s) else 0.0
                break
        total += r
    return total / rollouts


@dataclass
class LearningCurve:
    episodes: list[int]
    returns: list[float]
    budget: int
    threshold: float

    def as_pairs(self) -> list[tuple[int, float]]:
        return list(zip(self.episodes, self.returns))


def _run_episode(env, q: np.ndarray, epsilon: float, rng: np.random.Generator):
    """ε-greedy episode; returns states, actions, rewards."""
    T = env.horizon
    explore = (rng.random(T) < epsilon).tolist()
    rand_a = rng.integers(q.shape[1], size=T).tolist()
    slip_u = rng.random(T).tolist()
    slip_k = rng.integers(3, size=T).tolist()
    s = env.reset(rng)
    states, actions, rewards = [s], [], []
    for t in range(T):
        a = rand_a[t] if explore[t] else int(q[s].argmax())
        s, r, _ = env.step(a, rng, slip_u[t], slip_k[t])
        states.append(s)
        actions.append(a)
        rewards.append(r)
    return states, actions, rewards


def train(
    env,
    config: LearnerConfig,
    demos: Sequence[Trajectory],
    rng: np.random.Generator,
    redistributor: Callable[[Trajectory], np.ndarray] | None = None,
    budget: int = 5000,
    eval_every: int = 10,
    eval_rollouts: int = 10,
    threshold: float | None = None,
    qtable: QTable | None = None,
) -> tuple[LearningCurve, QTable]:
    """Train one learner and record greedy evaluation returns.

    Evaluation happens before the first episode and every ``eval_every``
    episodes.  With ``threshold`` set, training stops at the first
    evaluation reaching it.  ``redistributor`` maps a finished trajectory to
    per-step rewards and is required by the align method.
    """
    if budget < 1:
        raise InvalidInputError("budget must be at least 1")
    if config.method == "align" and redistributor is None:
        raise InvalidInputError("align method needs a redistributor")
    if qtable is None:
        qtable = QTable.zeros(env.n_states, env.n_actions)
        bc_initialize(qtable, demos, (config.bc_mean, config.bc_std), rng)
    buffer = demo_buffer(demos) if config.method == "sqil" else None
    q = qtable.values
    counts = qtable.counts
    lr, gamma = config.learning_rate, config.discount
    curve = LearningCurve([], [], budget, threshold if threshold is not None else float("nan"))

    def checkpoint(ep):
        ret = evaluate(env, qtable, rng, eval_rollouts)
        curve.episodes.append(ep)
        curve.returns.append(ret)
        return threshold is not None and ret >= threshold

    if checkpoint(0):
        return curve, qtable
    for ep in range(1, budget + 1):
        states, actions, rewards = _run_episode(env, q, config.epsilon, rng)
        T = len(actions)
        if config.method == "align":
            traj = Trajectory(states, actions, rewards)
            R = redistributor(traj).tolist()
            if config.update == "direct":
                for t in range(T):
                    s, a = states[t], actions[t]
                    q[s, a] += lr * (R[t] - q[s, a])
                    counts[s, a] += 1
            elif config.update == "mc":
                g = 0.0
                for t in range(T - 1, -1, -1):
                    g = R[t] + gamma * g
                    s, a = states[t], actions[t]
                    q[s, a] += lr * (g - q[s, a])
                    counts[s, a] += 1
            else:
                for t in range(T):
                    s, a = states[t], actions[t]
                    target = R[t] if t == T - 1 else R[t] + gamma * q[states[t + 1]].max()
                    q[s, a] += lr * (target - q[s, a])
                    counts[s, a] += 1
        elif config.method == "bcq":
            for t in range(T):
                s, a = states[t], actions[t]
                target = rewards[t] if t == T - 1 else rewards[t] + gamma * q[states[t + 1]].max()
                q[s, a] += lr * (target - q[s, a])
                counts[s, a] += 1
        else:
            picks = rng.integers(len(buffer), size=T).tolist()
            for t in range(T):
                s, a, s2 = states[t], actions[t], states[t + 1]
                target = 0.0 if t == T - 1 else gamma * q[s2].max()
                q[s, a] += lr * (target - q[s, a])
                counts[s, a] += 1
                ds, da, ds2, ddone = buffer[picks[t]]
                target = 1.0 if ddone else 1.0 + gamma * q[ds2].max()
                q[ds, da] += lr * (target - q[ds, da])
                counts[ds, da] += 1
        if ep % eval_every == 0 or ep == budget:
            if checkpoint(ep):
                break
    return curve, qtable
