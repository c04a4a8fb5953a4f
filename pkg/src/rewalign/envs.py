"""Gridworld and key-chest environments with explicit tabular models."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import EpisodeFinishedError, GenerationFailureError, InvalidInputError
from .events import Trajectory

UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))
ACTION_NAMES = ("up", "down", "left", "right")


@dataclass(frozen=True)
class Layout:
    height: int
    width: int
    walls: frozenset
    doors: frozenset
    portal_entries: tuple
    portal_exit: tuple
    start: tuple
    target: tuple

    @classmethod
    def parse(cls, text: str) -> "Layout":
        lines = [ln.rstrip("\n") for ln in text.strip().splitlines()]
        if not lines or len({len(ln) for ln in lines}) != 1:
            raise InvalidInputError("map must be a non-empty rectangle")
        walls, doors, entries = set(), set(), []
        start = target = exit_ = None
        for r, line in enumerate(lines):
            for c, ch in enumerate(line):
                if ch == "#":
                    walls.add((r, c))
                elif ch == "D":
                    doors.add((r, c))
                elif ch == "P":
                    entries.append((r, c))
                elif ch == "X":
                    exit_ = (r, c)
                elif ch == "S":
                    start = (r, c)
                elif ch == "T":
                    target = (r, c)
                elif ch != ".":
                    raise InvalidInputError(f"unknown map symbol {ch!r}")
        if start is None or target is None:
            raise InvalidInputError("map needs a start and a target")
        if entries and exit_ is None:
            raise InvalidInputError("portal entries without an exit")
        return cls(len(lines), len(lines[0]), frozenset(walls), frozenset(doors),
                   tuple(entries), exit_, start, target)

    @classmethod
    def load(cls, name_or_path: str) -> "Layout":
        p = Path(name_or_path)
        if p.exists():
            return cls.parse(p.read_text())
        try:
            text = resources.files("rewalign.maps").joinpath(f"{name_or_path}.txt").read_text()
        except FileNotFoundError:
            raise InvalidInputError(f"no map named {name_or_path!r}") from None
        return cls.parse(text)


class RoomsEnv:
    """Rooms gridworld with a teleport portal.

    The observed state is ``pid * cells + cell`` where pid indexes the active
    portal entry.  The portal room cannot be re-entered, so once the agent has
    left it the pid carries no information and is reset to 0.  Reward 1 is
    paid at step ``horizon`` iff the target was reached; the target is
    absorbing.
    """

    n_actions = 4

    def __init__(self, layout: Layout | str = "fourrooms", slip: float = 0.01, horizon: int = 200):
        if isinstance(layout, str):
            layout = Layout.load(layout)
        if not 0 <= slip <= 1:
            raise InvalidInputError("slip must lie in [0, 1]")
        self.layout = layout
        self.slip = float(slip)
        self.horizon = int(horizon)
        self.n_cells = layout.height * layout.width
        self.n_portals = max(1, len(layout.portal_entries))
        self.n_states = self.n_portals * self.n_cells
        self.start_cell = self.cell_index(layout.start)
        self.target_cell = self.cell_index(layout.target)
        self.entry_cells = [self.cell_index(p) for p in layout.portal_entries]
        self.exit_cell = self.cell_index(layout.portal_exit) if layout.portal_exit else -1
        # successor cell per (cell, direction) ignoring the portal
        nxt = np.empty((self.n_cells, 4), dtype=np.int64)
        for cell in range(self.n_cells):
            r, c = divmod(cell, layout.width)
            for d, (dr, dc) in enumerate(MOVES):
                rr, cc = r + dr, c + dc
                ok = 0 <= rr < layout.height and 0 <= cc < layout.width and (rr, cc) not in layout.walls
                nxt[cell, d] = rr * layout.width + cc if ok else cell
        self._move = nxt
        self._move_list = nxt.tolist()
        self.walkable = np.array([divmod(c, layout.width) not in layout.walls for c in range(self.n_cells)])
        # cells reachable from the start without the portal
        home = {self.start_cell}
        stack = [self.start_cell]
        while stack:
            cell = stack.pop()
            for d in range(4):
                nb = int(nxt[cell, d])
                if nb not in home:
                    home.add(nb)
                    stack.append(nb)
        self.portal_room = np.zeros(self.n_cells, dtype=bool)
        self.portal_room[list(home)] = True
        self._in_room = self.portal_room.tolist()
        self.t = 0
        self.state = None
        self.done = True

    def cell_index(self, rc) -> int:
        return rc[0] * self.layout.width + rc[1]

    def decode(self, state: int) -> tuple[int, int]:
        """(cell, portal id) of a composite state."""
        pid, cell = divmod(int(state), self.n_cells)
        return cell, pid

    def encode(self, cell: int, pid: int) -> int:
        return pid * self.n_cells + cell

    def observation_key(self, state: int) -> int:
        return int(state) % self.n_cells

    def reset(self, rng: np.random.Generator) -> int:
        pid = int(rng.integers(self.n_portals))
        self.t = 0
        self.done = False
        self.state = self.encode(self.start_cell, pid)
        return self.state

    def transition(self, state: int, direction: int) -> int:
        """Deterministic move in ``direction`` including portal and absorption."""
        pid, cell = divmod(state, self.n_cells)
        if cell == self.target_cell:
            return state
        new = self._move_list[cell][direction]
        if self.entry_cells and new == self.entry_cells[pid]:
            new = self.exit_cell
        if not self._in_room[new]:
            return new
        return pid * self.n_cells + new

    def sample_direction(self, action: int, rng: np.random.Generator) -> int:
        if self.slip > 0 and rng.random() < self.slip:
            d = int(rng.integers(3))
            return d + (d >= action)
        return action

    def step(self, action: int, rng: np.random.Generator, u: float | None = None, k: int | None = None):
        """Advance one step; returns (state, reward, done).

        ``u`` and ``k`` may supply pre-drawn uniforms for the slip test and the
        slip direction so hot loops can batch their random draws.
        """
        if self.done:
            raise EpisodeFinishedError("episode already finished")
        if not 0 <= action < 4:
            raise InvalidInputError(f"invalid action {action}")
        if u is None:
            d = self.sample_direction(action, rng)
        elif u < self.slip:
            d = k + (k >= action)
        else:
            d = action
        self.state = self.transition(self.state, d)
        self.t += 1
        self.done = self.t >= self.horizon
        reward = 1.0 if self.done and self.is_target(self.state) else 0.0
        return self.state, reward, self.done

    def is_target(self, state: int) -> bool:
        return int(state) % self.n_cells == self.target_cell

    def is_absorbing(self, state: int) -> bool:
        return self.is_target(state)

    def tabular_model(self) -> "TabularModel":
        """Explicit model paying 1 on arrival at the target (target absorbing)."""
        n = self.n_states
        nxt = np.empty((4, n, 4), dtype=np.int64)
        base = np.empty((n, 4), dtype=np.int64)
        for s in range(n):
            for d in range(4):
                base[s, d] = self.transition(s, d)
        for a in range(4):
            nxt[a] = base
        prob = np.empty((4, 4))
        for a in range(4):
            prob[a] = self.slip / 3
            prob[a, a] = 1 - self.slip
        prob = np.broadcast_to(prob[:, None, :], (4, n, 4)).copy()
        tgt = np.array([self.is_target(s) for s in range(n)])
        reward = (prob * (tgt[nxt] & ~tgt[None, :, None])).sum(axis=2)
        return TabularModel(nxt, prob, reward, tgt.astype(float))

    def shortest_path_length(self, pid: int) -> int:
        """BFS distance from the start to the target under slip 0."""
        src = self.encode(self.start_cell, pid)
        dist = {src: 0}
        queue = deque([src])
        while queue:
            s = queue.popleft()
            if self.is_target(s):
                return dist[s]
            for d in range(4):
                s2 = self.transition(s, d)
                if s2 not in dist:
                    dist[s2] = dist[s] + 1
                    queue.append(s2)
        raise InvalidInputError("target unreachable")


def rooms_reset(env: RoomsEnv, rng: np.random.Generator) -> int:
    return env.reset(rng)


def rooms_step(env: RoomsEnv, state: int, action: int, rng: np.random.Generator):
    if env.state != state:
        raise InvalidInputError("state does not match the environment")
    return env.step(action, rng)


class KeyChestEnv:
    """1D track: fetch the key at one end, then open the chest at the other.

    State is ``phase * length + position`` with phase 0 (no key), 1 (key held)
    or 2 (chest opened).  Reward 1 at the final step iff the chest was opened.
    """

    n_actions = 2

    def __init__(self, length: int = 10, start: int = 4, key: int = 0, chest: int = 9, horizon: int = 32):
        if not (0 <= start < length and 0 <= key < length and 0 <= chest < length) or key == chest:
            raise InvalidInputError("invalid key-chest layout")
        self.length, self.start, self.key, self.chest = length, start, key, chest
        self.horizon = horizon
        self.n_states = 3 * length
        self.t = 0
        self.state = None
        self.done = True

    def decode(self, state: int) -> tuple[int, int]:
        """(position, phase)."""
        phase, pos = divmod(int(state), self.length)
        return pos, phase

    def observation_key(self, state: int) -> int:
        return int(state)

    def transition(self, state: int, action: int) -> int:
        phase, pos = divmod(state, self.length)
        pos = max(0, pos - 1) if action == 0 else min(self.length - 1, pos + 1)
        if phase == 0 and pos == self.key:
            phase = 1
        elif phase == 1 and pos == self.chest:
            phase = 2
        return phase * self.length + pos

    def reset(self, rng: np.random.Generator | None = None) -> int:
        self.t = 0
        self.done = False
        self.state = self.start
        return self.state

    def step(self, action: int, rng: np.random.Generator | None = None, u=None, k=None):
        if self.done:
            raise EpisodeFinishedError("episode already finished")
        if action not in (0, 1):
            raise InvalidInputError(f"invalid action {action}")
        self.state = self.transition(self.state, action)
        self.t += 1
        self.done = self.t >= self.horizon
        reward = 1.0 if self.done and self.is_target(self.state) else 0.0
        return self.state, reward, self.done

    def is_target(self, state: int) -> bool:
        return int(state) // self.length == 2

    def is_absorbing(self, state: int) -> bool:
        return False

    def key_steps(self, traj: Trajectory) -> list[int]:
        """Steps that picked up the key or opened the chest."""
        ph = [s // self.length for s in traj.states]
        return [t for t in range(len(traj.actions)) if ph[t + 1] != ph[t]]

    def tabular_model(self) -> "TabularModel":
        n = self.n_states
        nxt = np.array([[[self.transition(s, a)] for s in range(n)] for a in range(2)], dtype=np.int64)
        prob = np.ones((2, n, 1))
        opened = np.array([self.is_target(s) for s in range(n)])
        reward = (opened[nxt[..., 0]] & ~opened[None, :]).astype(float)
        return TabularModel(nxt, prob, reward, opened.astype(float))


def keychest_step(env: KeyChestEnv, state: int, action: int, rng=None):
    if env.state != state:
        raise InvalidInputError("state does not match the environment")
    return env.step(action, rng)


@dataclass
class TabularModel:
    """Explicit MDP: action a in state s moves to ``next[a, s, k]`` with
    probability ``prob[a, s, k]`` and expected reward ``reward[a, s]``.
    ``terminal`` is the value paid at the end of a finite horizon."""

    next: np.ndarray
    prob: np.ndarray
    reward: np.ndarray
    terminal: np.ndarray

    def __post_init__(self):
        if not np.allclose(self.prob.sum(axis=2), 1.0):
            raise InvalidInputError("transition probabilities must sum to 1")

    @property
    def n_states(self) -> int:
        return self.next.shape[1]

    @property
    def n_actions(self) -> int:
        return self.next.shape[0]

    def q_values(self, v: np.ndarray, discount: float = 1.0, with_reward: bool = True) -> np.ndarray:
        q = (self.prob * v[self.next]).sum(axis=2) * discount
        if with_reward:
            q = q + self.reward
        return q.T  # n x A


@dataclass
class TabularPolicy:
    """Deterministic actions or per-state action distributions."""

    actions: np.ndarray | None = None
    probs: np.ndarray | None = None

    def __post_init__(self):
        if (self.actions is None) == (self.probs is None):
            raise InvalidInputError("give exactly one of actions or probs")
        if self.probs is not None and not np.allclose(self.probs.sum(axis=1), 1.0):
            raise InvalidInputError("action distributions must sum to 1")
        if self.actions is not None:
            self.actions = np.asarray(self.actions, dtype=np.int64)
            self._list = self.actions.tolist()

    def act(self, state: int, rng: np.random.Generator | None = None) -> int:
        if self.actions is not None:
            return self._list[state]
        return int(rng.choice(self.probs.shape[1], p=self.probs[state]))


def _greedy(q: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Argmax per row with lowest-index tie-break (ties within ``tol``)."""
    return np.argmax(q >= q.max(axis=1, keepdims=True) - tol, axis=1)


def value_iteration(
    model: TabularModel,
    discount: float = 1.0,
    horizon: int | None = None,
    tol: float = 1e-10,
    max_iterations: int = 100_000,
):
    """Bellman optimality iteration.

    With ``horizon`` the problem is solved on the time-augmented state space
    by backward induction from the terminal values; the result holds values
    (horizon+1, n) and a policy per time step (horizon, n).  Backward
    induction stops early once a sweep changes no value by more than ``tol``
    and the remaining layers are filled with the fixed point.  Without
    ``horizon`` the discounted infinite-horizon problem is iterated to
    ``tol`` and a single stationary policy is returned.
    """
    if horizon is not None:
        n = model.n_states
        values = np.empty((horizon + 1, n))
        policies = np.empty((horizon, n), dtype=np.int64)
        values[horizon] = model.terminal
        t = horizon - 1
        while t >= 0:
            q = model.q_values(values[t + 1], discount, with_reward=False)
            values[t] = q.max(axis=1)
            policies[t] = _greedy(q)
            if np.max(np.abs(values[t] - values[t + 1])) <= tol:
                values[:t] = values[t]
                policies[:t] = policies[t]
                break
            t -= 1
        return values, [TabularPolicy(p) for p in policies]
    if not 0 <= discount < 1:
        raise InvalidInputError("infinite-horizon iteration needs discount < 1")
    v = np.zeros(model.n_states)
    for _ in range(max_iterations):
        q = model.q_values(v, discount)
        v_new = q.max(axis=1)
        if np.max(np.abs(v_new - v)) <= tol:
            v = v_new
            break
        v = v_new
    q = model.q_values(v, discount)
    return v, TabularPolicy(_greedy(q, tol=1e-12))


def rollout(env, policy, rng: np.random.Generator, exploration: float = 0.0) -> Trajectory:
    """One full episode; with probability ``exploration`` a step takes a
    uniformly random action instead of the policy's."""
    s = env.reset(rng)
    states, actions, rewards = [s], [], []
    done = False
    while not done:
        if exploration > 0 and rng.random() < exploration:
            a = int(rng.integers(env.n_actions))
        else:
            a = policy.act(s, rng)
        s, r, done = env.step(a, rng)
        states.append(s)
        actions.append(a)
        rewards.append(r)
    return Trajectory(states, actions, rewards)


def generate_demonstrations(
    env,
    policy: TabularPolicy,
    exploration: float,
    n: int,
    rng: np.random.Generator,
    budget: int | None = None,
) -> list[Trajectory]:
    """Sample until ``n`` episodes reach the target.

    The default budget of ``max(1000, 100 n)`` episodes fails any policy
    whose success rate is below 1%.
    """
    if not 0 <= exploration <= 1:
        raise InvalidInputError("exploration must lie in [0, 1]")
    if n < 0:
        raise InvalidInputError("n must be non-negative")
    if budget is None:
        budget = max(1000, 100 * n)
    demos: list[Trajectory] = []
    tries = 0
    while len(demos) < n:
        if tries >= budget:
            raise GenerationFailureError(f"{len(demos)} successes in {tries} episodes (need {n})")
        traj = rollout(env, policy, rng, exploration)
        tries += 1
        if traj.terminal_return > 0:
            demos.append(traj)
    return demos


def random_transitions(env, n_episodes: int, rng: np.random.Generator, length: int | None = None) -> list[tuple[int, int]]:
    """Random-policy transitions started from uniformly drawn states.

    Random starts spread coverage over cells a walk from the fixed start
    would rarely reach.
    """
    length = length or env.horizon
    valid = [s for s in range(env.n_states) if _is_valid_state(env, s)]
    out = []
    for _ in range(n_episodes):
        s = valid[int(rng.integers(len(valid)))]
        for _ in range(length):
            if env.is_absorbing(s):
                break
            a = int(rng.integers(env.n_actions))
            if isinstance(env, RoomsEnv):
                s2 = env.transition(s, env.sample_direction(a, rng))
            else:
                s2 = env.transition(s, a)
            out.append((s, s2))
            s = s2
    return out


def _is_valid_state(env, s: int) -> bool:
    if isinstance(env, RoomsEnv):
        cell, pid = env.decode(s)
        if pid and not env.portal_room[cell]:
            return False
        return bool(env.walkable[cell]) and cell != env.target_cell and (
            not env.entry_cells or cell != env.entry_cells[pid]
        )
    return True
