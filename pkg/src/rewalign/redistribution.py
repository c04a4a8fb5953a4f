"""Reward redistribution from profile prefix scores."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateModelError, InvalidInputError
from .events import EventSequence, events_from_states
from .profile import PSSM, prefix_last_columns, prefix_scores


@dataclass(frozen=True)
class RedistributionModel:
    """PSSM plus the scale C = mean demo return / mean demo score gain."""

    pssm: PSSM
    scale: float
    mean_demo_return: float
    mean_demo_gain: float


@dataclass
class RedistributedEpisode:
    """Per-event rewards R_{t+1}, their prefix scores and the correction R_{T+2}."""

    rewards: np.ndarray
    correction: float
    original_return: float
    prefix: np.ndarray
    scale: float

    @property
    def total(self) -> float:
        return float(self.rewards.sum() + self.correction)


@dataclass
class SubGoalSet:
    positions: list[int]
    threshold: float
    column_rewards: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if not self.threshold > 0:
            raise InvalidInputError("threshold must be positive")
        if any(b <= a for a, b in zip(self.positions, self.positions[1:])):
            raise InvalidInputError("positions must be strictly increasing")


def fit_redistribution(demos: Sequence[EventSequence], pssm: PSSM, returns: Sequence[float] | None = None) -> RedistributionModel:
    """Fit the scale C on demonstrations.

    By telescoping, a demo's total score gain is its final prefix score.
    ``returns`` overrides the demos' own ``source_return``.
    """
    if not demos:
        raise InvalidInputError("need at least one demonstration")
    gains = np.array([prefix_scores(d, pssm)[-1] for d in demos])
    if returns is None:
        returns = [d.source_return for d in demos]
    rets = np.asarray(returns, dtype=float)
    if rets.shape != gains.shape:
        raise InvalidInputError("one return per demonstration required")
    mean_gain = float(gains.mean())
    if abs(mean_gain) < 1e-12:
        raise DegenerateModelError("demonstrations have zero mean score gain")
    mean_ret = float(rets.mean())
    return RedistributionModel(pssm, mean_ret / mean_gain, mean_ret, mean_gain)


def redistribute(seq: EventSequence, model: RedistributionModel, original_return: float | None = None) -> RedistributedEpisode:
    """R_{t+1} = C (S(tau_t) - S(tau_{t-1})), S(tau_{-1}) = 0, plus the
    correction that restores the episode's original return."""
    if original_return is None:
        original_return = seq.source_return if isinstance(seq, EventSequence) else 0.0
    S = prefix_scores(seq, model.pssm)
    rewards = model.scale * np.diff(S, prepend=0.0)
    correction = float(original_return - rewards.sum())
    return RedistributedEpisode(rewards, correction, float(original_return), S, model.scale)


def step_rewards(episode: RedistributedEpisode, steps: Sequence[int], n_steps: int) -> np.ndarray:
    """Spread per-event rewards onto environment steps.

    ``steps[k]`` is the step that emitted event k.  The correction is paid on
    the last step since the environment has no extra slot for it.
    """
    if len(steps) != len(episode.rewards):
        raise InvalidInputError("one step index per event required")
    out = np.zeros(n_steps)
    np.add.at(out, np.asarray(steps, dtype=int), episode.rewards)
    out[-1] += episode.correction
    return out


def mean_correction(demos: Sequence[EventSequence], model: RedistributionModel, returns: Sequence[float] | None = None) -> float:
    if returns is None:
        returns = [d.source_return for d in demos]
    return float(np.mean([redistribute(d, model, g).correction for d, g in zip(demos, returns)]))


def estimate_kappa(episodes: Sequence[np.ndarray], m: int, t: int) -> float:
    """Monte-Carlo kappa(m, t) = E[sum_{tau=0..m} R_{t+2+tau}].

    Each episode is an array of per-step rewards where entry k holds R_{k+1}.
    """
    if not len(episodes):
        raise InvalidInputError("no episodes")
    rows = [np.asarray(e, dtype=float) for e in episodes]
    if any(r.ndim != 1 or len(r) != len(rows[0]) for r in rows):
        raise InvalidInputError("episodes must share a horizon")
    arr = np.stack(rows)
    if t < 0 or m < 0 or t + 1 + m >= arr.shape[1]:
        raise InvalidInputError(f"kappa({m}, {t}) outside horizon {arr.shape[1]}")
    return float(arr[:, t + 1 : t + 2 + m].sum(axis=1).mean())


def column_rewards(demos: Sequence[EventSequence], model: RedistributionModel) -> np.ndarray:
    """Mean redistributed reward credited to each profile column.

    A step's reward goes to the highest column matched by its prefix
    alignment, i.e. the last column consumed so far.
    """
    totals = np.zeros(model.pssm.length)
    for d in demos:
        ep = redistribute(d, model)
        for r, col in zip(ep.rewards, prefix_last_columns(d, model.pssm)):
            if col is not None:
                totals[col] += r
    return totals / len(demos)


def extract_subgoals(demos: Sequence[EventSequence], model: RedistributionModel, threshold: float | None = None) -> SubGoalSet:
    """Profile columns whose mean demo reward exceeds ``threshold``.

    The default threshold is the mean positive redistributed reward.
    """
    if not demos:
        raise InvalidInputError("need at least one demonstration")
    if threshold is None:
        pos = np.concatenate([redistribute(d, model).rewards for d in demos])
        pos = pos[pos > 0]
        threshold = float(pos.mean()) if pos.size else 1.0
    if not threshold > 0:
        raise InvalidInputError("threshold must be positive")
    cr = column_rewards(demos, model)
    return SubGoalSet([int(c) for c in np.flatnonzero(cr > threshold)], float(threshold), cr)


class EpisodeRedistributor:
    """Maps finished trajectories to per-step redistributed rewards.

    States are labelled through ``labels[key(state)]`` and collapsed to events
    exactly as the demonstrations were.
    """

    def __init__(self, model: RedistributionModel, labels: np.ndarray, key=None):
        self.model = model
        self.labels = np.asarray(labels)
        self.key = key

    def sequence(self, traj) -> EventSequence:
        events, where = events_from_states(traj.states[1:], self.labels, self.key)
        return EventSequence(events, traj.terminal_return, where)

    def episode(self, traj) -> RedistributedEpisode:
        return redistribute(self.sequence(traj), self.model, traj.terminal_return)

    def step_rewards(self, traj, correction: bool = True) -> np.ndarray:
        seq = self.sequence(traj)
        ep = redistribute(seq, self.model, traj.terminal_return)
        if not correction:
            ep.correction = 0.0
        return step_rewards(ep, seq.steps, len(traj.actions))

    def __call__(self, traj) -> np.ndarray:
        return self.step_rewards(traj)
