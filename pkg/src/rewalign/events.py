"""Turning state trajectories into short sequences of discrete events.

States are embedded with a tabular successor representation, clustered by
affinity propagation on the successor rows, and every trajectory is then
rewritten as the sequence of cluster letters it passes through.
"""
from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import InvalidInputError

LETTERS = string.ascii_uppercase


@dataclass
class Trajectory:
    """One episode: ``states`` holds s_0..s_T, one more entry than ``actions``.

    ``rewards[t]`` is the reward that followed ``actions[t]``.
    """

    states: list[int]
    actions: list[int]
    rewards: list[float]

    def __post_init__(self):
        self.states = [int(s) for s in self.states]
        self.actions = [int(a) for a in self.actions]
        self.rewards = [float(r) for r in self.rewards]
        if not self.actions:
            raise InvalidInputError("trajectory has no steps")
        if len(self.states) != len(self.actions) + 1 or len(self.rewards) != len(self.actions):
            raise InvalidInputError(
                "expected len(states) == len(actions) + 1 == len(rewards) + 1"
            )
        if any(r != 0.0 for r in self.rewards[:-1]):
            raise InvalidInputError("episodic trajectories carry reward only at the final step")

    def __len__(self):
        return len(self.actions)

    @property
    def terminal_return(self) -> float:
        return float(sum(self.rewards))

    def steps(self):
        return list(zip(self.states[:-1], self.actions, self.rewards))

    def transitions(self):
        return list(zip(self.states[:-1], self.states[1:]))


@dataclass
class SuccessorMatrix:
    matrix: np.ndarray
    learning_rate: float
    discount: float

    @property
    def n_states(self) -> int:
        return self.matrix.shape[0]


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    centers: np.ndarray
    n_clusters: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        self.centers = np.asarray(self.centers, dtype=int)
        if self.n_clusters < 1 or len(self.centers) != self.n_clusters:
            raise InvalidInputError("cluster assignment needs one center per cluster")
        if self.labels.min() < 0 or self.labels.max() >= self.n_clusters:
            raise InvalidInputError("labels out of range")
        if len(np.unique(self.labels)) != self.n_clusters:
            raise InvalidInputError("empty cluster in assignment")

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)


@dataclass(frozen=True)
class EventAlphabet:
    n_events: int

    def __post_init__(self):
        if not 1 <= self.n_events <= len(LETTERS):
            raise InvalidInputError(f"alphabet size {self.n_events} is not letter-encodable")

    def letter(self, event: int) -> str:
        if not 0 <= event < self.n_events:
            raise InvalidInputError(f"event {event} outside alphabet of size {self.n_events}")
        return LETTERS[event]

    def index(self, letter: str) -> int:
        i = LETTERS.find(letter)
        if i < 0 or i >= self.n_events:
            raise InvalidInputError(f"letter {letter!r} outside alphabet")
        return i

    def encode(self, events: Iterable[int]) -> str:
        return "".join(self.letter(e) for e in events)

    def decode(self, text: str) -> list[int]:
        return [self.index(ch) for ch in text]

    @property
    def letters(self) -> str:
        return LETTERS[: self.n_events]


@dataclass
class EventSequence:
    """Events e_0..e_T of one episode.

    ``steps[k]`` is the trajectory step that emitted ``events[k]``; it is
    used to hand redistributed rewards back to individual steps.
    """

    events: list[int]
    source_return: float = 0.0
    steps: list[int] | None = None
    name: str = ""

    def __post_init__(self):
        self.events = [int(e) for e in self.events]
        if not self.events:
            raise InvalidInputError("event sequence is empty")
        if min(self.events) < 0:
            raise InvalidInputError("negative event index")
        if self.steps is not None:
            self.steps = [int(s) for s in self.steps]
            if len(self.steps) != len(self.events):
                raise InvalidInputError("steps and events differ in length")

    def __len__(self):
        return len(self.events)

    def prefix(self, t: int) -> "EventSequence":
        steps = None if self.steps is None else self.steps[: t + 1]
        return EventSequence(self.events[: t + 1], self.source_return, steps, self.name)


@dataclass
class EventBackground:
    p: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        if self.p.ndim != 1 or len(self.p) == 0:
            raise InvalidInputError("background must be a non-empty vector")
        if np.any(self.p <= 0):
            raise InvalidInputError("background probabilities must be strictly positive")
        if abs(self.p.sum() - 1.0) > 1e-12:
            raise InvalidInputError("background probabilities must sum to 1")

    def __len__(self):
        return len(self.p)


def build_successor_representation(
    transitions: Sequence[tuple[int, int]],
    learning_rate: float = 0.1,
    discount: float = 0.99,
    sweeps: int = 1,
    n_states: int | None = None,
) -> SuccessorMatrix:
    """Tabular TD(0) successor representation.

    Every transition (s, s') applies
    ``M[s] += lr * (onehot(s) + discount * M[s'] - M[s])``; the whole list is
    replayed ``sweeps`` times starting from a zero matrix.
    """
    if not transitions:
        raise InvalidInputError("no transitions given")
    if not 0.0 < learning_rate <= 1.0:
        raise InvalidInputError("learning rate must lie in (0, 1]")
    if not 0.0 <= discount < 1.0:
        raise InvalidInputError("discount must lie in [0, 1)")
    pairs = np.asarray(transitions, dtype=int)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise InvalidInputError("transitions must be (state, next_state) pairs")
    if n_states is None:
        n_states = int(pairs.max()) + 1
    if pairs.min() < 0 or pairs.max() >= n_states:
        raise InvalidInputError("state index out of range")

    M = np.zeros((n_states, n_states))
    lr, g = learning_rate, discount
    pairs = pairs.tolist()
    for _ in range(sweeps):
        for s, s2 in pairs:
            target = g * M[s2]
            target[s] += 1.0
            M[s] += lr * (target - M[s])
    return SuccessorMatrix(M, learning_rate, discount)


def successor_similarity(m: SuccessorMatrix | np.ndarray) -> np.ndarray:
    """Negative Euclidean distance between successor rows."""
    rows = m.matrix if isinstance(m, SuccessorMatrix) else np.asarray(m, dtype=float)
    return -cdist(rows, rows)


def _median_preference(S: np.ndarray) -> float:
    return similarity_quantile(S, 0.5)


def similarity_quantile(S: np.ndarray, q: float) -> float:
    """Quantile of the off-diagonal similarities; a preference for AP.

    Higher quantiles give more exemplars.
    """
    if not 0 <= q <= 1:
        raise InvalidInputError("quantile must lie in [0, 1]")
    n = S.shape[0]
    off = S[~np.eye(n, dtype=bool)]
    return float(np.quantile(off, q))


def affinity_propagation(
    similarity: np.ndarray,
    damping: float = 0.5,
    max_iterations: int = 1000,
    preference: float | str = "median",
    convergence_iter: int = 15,
) -> ClusterAssignment:
    """Affinity propagation (responsibility/availability message passing).

    ``preference`` is written onto the diagonal; ``"median"`` uses the median
    off-diagonal similarity.  Exactly tied similarities are broken in favour
    of lower point indices by a deterministic perturbation of a few ulps, so
    the result depends only on the inputs.  If no point ends with a positive
    self-evidence, the point with the largest evidence becomes the single
    exemplar.
    """
    S = np.array(similarity, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise InvalidInputError("similarity matrix must be square")
    if not 0.5 <= damping < 1.0:
        raise InvalidInputError("damping must lie in [0.5, 1)")
    n = S.shape[0]
    if n == 0:
        raise InvalidInputError("empty similarity matrix")
    if n == 1:
        return ClusterAssignment(np.zeros(1, dtype=int), np.zeros(1, dtype=int), 1)

    pref = _median_preference(S) if preference == "median" else float(preference)
    original = S.copy()
    np.fill_diagonal(S, pref)
    finite = np.abs(S[np.isfinite(S)])
    scale = finite.max() if finite.size and finite.max() > 0 else 1.0
    S -= (64 * np.finfo(float).eps * scale) * np.arange(n)[None, :]

    rows = np.arange(n)
    R = np.zeros((n, n))
    A = np.zeros((n, n))
    last = None
    stable = 0
    evidence = np.zeros(n)
    for _ in range(max_iterations):
        AS = A + S
        best = AS.argmax(axis=1)
        first = AS[rows, best]
        AS[rows, best] = -np.inf
        second = AS.max(axis=1)
        R_new = S - first[:, None]
        R_new[rows, best] = S[rows, best] - second
        R = damping * R + (1 - damping) * R_new

        Rp = np.maximum(R, 0)
        Rp[rows, rows] = R[rows, rows]
        A_new = Rp.sum(axis=0)[None, :] - Rp
        self_avail = A_new[rows, rows].copy()
        A_new = np.minimum(A_new, 0)
        A_new[rows, rows] = self_avail
        A = damping * A + (1 - damping) * A_new

        evidence = R[rows, rows] + A[rows, rows]
        exemplars = tuple(np.flatnonzero(evidence > 0))
        if exemplars and exemplars == last:
            stable += 1
            if stable >= convergence_iter:
                break
        else:
            stable = 0
        last = exemplars

    centers = np.flatnonzero(evidence > 0)
    if centers.size == 0:
        centers = np.array([int(np.argmax(evidence))])
    labels = np.argmax(original[:, centers], axis=1)
    labels[centers] = np.arange(len(centers))
    return ClusterAssignment(labels, centers, len(centers))


def merge_clusters(
    assignment: ClusterAssignment, embedding: np.ndarray, max_clusters: int
) -> ClusterAssignment:
    """Greedily merge the two clusters with the closest centers until at most
    ``max_clusters`` remain.  The merged center is the member nearest to the
    members' mean embedding."""
    if max_clusters < 1:
        raise InvalidInputError("max_clusters must be at least 1")
    X = np.asarray(embedding, dtype=float)
    groups = [list(assignment.members(k)) for k in range(assignment.n_clusters)]
    centers = [int(c) for c in assignment.centers]
    while len(groups) > max_clusters:
        D = cdist(X[centers], X[centers])
        D[np.tril_indices(len(centers))] = np.inf
        i, j = np.unravel_index(int(np.argmin(D)), D.shape)
        members = sorted(groups[i] + groups[j])
        mean = X[members].mean(axis=0)
        nearest = members[int(np.argmin(((X[members] - mean) ** 2).sum(axis=1)))]
        groups[i], centers[i] = members, nearest
        del groups[j], centers[j]
    labels = np.empty(len(assignment.labels), dtype=int)
    for k, members in enumerate(groups):
        labels[members] = k
    return ClusterAssignment(labels, np.array(centers), len(groups))


def events_from_states(
    states: Sequence[int],
    labels: np.ndarray,
    key: Callable[[int], int] | None = None,
) -> tuple[list[int], list[int]]:
    """Map states to cluster labels and collapse runs of repeated labels.

    Returns the events and, for each event, the index in ``states`` where the
    run started.
    """
    events: list[int] = []
    where: list[int] = []
    n = len(labels)
    for i, s in enumerate(states):
        k = key(s) if key is not None else s
        if not 0 <= k < n:
            raise InvalidInputError(f"state {s} has no cluster label")
        e = int(labels[k])
        if not events or events[-1] != e:
            events.append(e)
            where.append(i)
    return events, where


def map_to_events(
    trajectory: Trajectory,
    assignment: ClusterAssignment,
    alphabet: EventAlphabet | None = None,
    key: Callable[[int], int] | None = None,
    name: str = "",
) -> EventSequence:
    """Event sequence of a trajectory.

    The event of step t is the cluster of the state reached by action a_t, so
    a change of cluster is credited to the step that caused it.  ``key``
    projects an observed state onto the index space the clustering was built
    on (e.g. grid cell without episode context).
    """
    events, where = events_from_states(trajectory.states[1:], assignment.labels, key)
    if alphabet is not None and max(events) >= alphabet.n_events:
        raise InvalidInputError("event outside alphabet")
    return EventSequence(events, trajectory.terminal_return, where, name)


def event_frequencies(sequences: Sequence[EventSequence], alphabet_size: int) -> EventBackground:
    """Relative event frequencies; if any event is unseen, every count gets +1."""
    if not sequences or all(len(s) == 0 for s in sequences):
        raise InvalidInputError("no events to count")
    counts = Counter()
    for seq in sequences:
        counts.update(seq.events)
    if max(counts) >= alphabet_size:
        raise InvalidInputError("event outside alphabet")
    c = np.array([counts.get(i, 0) for i in range(alphabet_size)], dtype=float)
    if np.any(c == 0):
        c += 1.0
    return EventBackground(c / c.sum())
