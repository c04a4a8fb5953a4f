"""Profile model and position-specific scoring of event sequences."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alignment import MSA, karlin_lambda
from .errors import DegenerateColumnError, InvalidInputError, NoRootError
from .events import EventBackground, EventSequence

SCORE_FLOOR = -10.0


@dataclass
class ProfileModel:
    """Column-wise event frequencies ``q`` (L x n) of an MSA.

    Event frequencies and the gap frequency of a column sum to one.
    """

    q: np.ndarray
    gap: np.ndarray
    pseudocount: float
    n_rows: int

    @property
    def length(self) -> int:
        return self.q.shape[0]

    @property
    def n_events(self) -> int:
        return self.q.shape[1]


def column_frequencies(msa: MSA, alphabet_size: int, pseudocount: float | None = None) -> ProfileModel:
    """q[t, i] = (count of i in column t + pc) / (rows + pc * n).

    ``pseudocount`` defaults to 1% of the row count.
    """
    if pseudocount is None:
        pseudocount = 0.01 * msa.n_rows
    if pseudocount < 0:
        raise InvalidInputError("pseudocount must be non-negative")
    counts, gaps = msa.column_counts(alphabet_size)
    denom = msa.n_rows + pseudocount * alphabet_size
    return ProfileModel((counts + pseudocount) / denom, gaps / denom, float(pseudocount), msa.n_rows)


@dataclass
class PSSM:
    """Column scores ``s[t, i]`` for event i at profile position t (L x n)."""

    s: np.ndarray
    lambdas: np.ndarray
    gap_penalty: np.ndarray
    background: np.ndarray
    insertion_penalty: float = 0.0

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        L = self.s.shape[0]
        self.lambdas = np.broadcast_to(np.asarray(self.lambdas, dtype=float), (L,)).copy()
        self.gap_penalty = np.broadcast_to(np.asarray(self.gap_penalty, dtype=float), (L,)).copy()
        self.background = np.asarray(self.background, dtype=float)
        if not np.all(np.isfinite(self.s)):
            raise InvalidInputError("PSSM scores must be finite")
        self._rows = [np.ascontiguousarray(col) for col in self.s.T]
        self._zero_gaps = not np.any(self.gap_penalty)

    @property
    def length(self) -> int:
        return self.s.shape[0]

    @property
    def n_events(self) -> int:
        return self.s.shape[1]

    @property
    def consensus(self) -> np.ndarray:
        return np.argmax(self.s, axis=1)


def build_pssm(
    profile: ProfileModel,
    background: EventBackground,
    floor: float = SCORE_FLOOR,
    gap_penalty: float | np.ndarray = 0.0,
    insertion_penalty: float = 0.0,
) -> PSSM:
    """Log-odds column scores ln(q/p) / lambda_t.

    Each column's event frequencies are renormalised over events before the
    log-odds are taken; lambda_t is then the positive root of
    sum_i p_i exp(lambda s_it) = 1, which is 1 for a normalised column.
    Scores below ``floor / lambda_t`` are clipped to it.  ``insertion_penalty``
    is charged per sequence event left unaligned.
    """
    p = background.p
    if len(p) != profile.n_events:
        raise InvalidInputError("background and profile disagree on the alphabet")
    mass = profile.q.sum(axis=1)
    bad = np.flatnonzero(mass <= 0)
    if bad.size:
        raise DegenerateColumnError(f"column {int(bad[0])} has no event mass")
    q = profile.q / mass[:, None]
    with np.errstate(divide="ignore"):
        raw = np.log(q / p)  # L x n

    L = profile.length
    lambdas = np.ones(L)
    for t in range(L):
        finite = raw[t][np.isfinite(raw[t])]
        if np.all(np.abs(finite) < 1e-12):
            continue  # column equals the background: every score is 0
        try:
            lambdas[t] = karlin_lambda(p, raw[t])
        except NoRootError:
            lambdas[t] = 1.0  # exact root of a normalised column
    s = raw / lambdas[:, None]
    s = np.maximum(s, floor / lambdas[:, None])
    return PSSM(s, lambdas, gap_penalty, p, insertion_penalty)


@dataclass
class ProfileAlignmentResult:
    score: float
    columns: list[int | None]

    def matched(self) -> list[tuple[int, int]]:
        return [(t, j) for t, j in enumerate(self.columns) if j is not None]


def _events(seq) -> list[int]:
    return list(seq.events) if isinstance(seq, EventSequence) else [int(e) for e in seq]


def _next_column(prev: np.ndarray, row: np.ndarray, pssm: PSSM) -> np.ndarray:
    """DP column for one more sequence event.

    ``prev[c]`` is the best score of the sequence so far against the first c
    profile columns.  The new event either matches column c or stays
    unaligned at the insertion penalty, and a column may be skipped at its
    gap penalty.
    """
    base = np.empty_like(prev)
    ins = pssm.insertion_penalty
    if ins:
        base[0] = prev[0] - ins
        np.maximum(prev[:-1] + row, prev[1:] - ins, out=base[1:])
    else:
        base[0] = prev[0]
        np.maximum(prev[:-1] + row, prev[1:], out=base[1:])
    if pssm._zero_gaps:
        return np.maximum.accumulate(base)
    cur = base
    g = pssm.gap_penalty
    for c in range(1, len(cur)):
        skip = cur[c - 1] - g[c - 1]
        if skip > cur[c]:
            cur[c] = skip
    return cur


def _first_column(pssm: PSSM) -> np.ndarray:
    col = np.zeros(pssm.length + 1)
    if not pssm._zero_gaps:
        for c in range(1, len(col)):
            col[c] = col[c - 1] - pssm.gap_penalty[c - 1]
    return col


def profile_dp(seq, pssm: PSSM) -> np.ndarray:
    """Full DP table D[c, j]: best score of the first j events against the
    first c profile columns."""
    events = _events(seq)
    if events and (min(events) < 0 or max(events) >= pssm.n_events):
        raise InvalidInputError("event outside the PSSM alphabet")
    D = np.empty((pssm.length + 1, len(events) + 1))
    D[:, 0] = _first_column(pssm)
    for j, e in enumerate(events, start=1):
        D[:, j] = _next_column(D[:, j - 1], pssm._rows[e], pssm)
    return D


def _traceback(D: np.ndarray, events: list[int], pssm: PSSM, j: int) -> list[int | None]:
    cols: list[int | None] = [None] * pssm.length
    c = pssm.length
    while c > 0 or j > 0:
        here = D[c, j]
        if c > 0 and j > 0 and here == D[c - 1, j - 1] + pssm.s[c - 1, events[j - 1]]:
            cols[c - 1] = j - 1
            c, j = c - 1, j - 1
        elif c > 0 and here == D[c - 1, j] - pssm.gap_penalty[c - 1]:
            c -= 1
        else:
            j -= 1
    return cols


def align_to_profile(seq, pssm: PSSM) -> ProfileAlignmentResult:
    """Global alignment of a sequence to the profile.

    ``columns[t]`` is the sequence position aligned to profile column t, or
    None for a skipped column.  Ties prefer a match, then skipping the
    column, then leaving the event unaligned.
    """
    events = _events(seq)
    D = profile_dp(events, pssm)
    return ProfileAlignmentResult(float(D[-1, -1]), _traceback(D, events, pssm, len(events)))


def profile_alignment_score(events, columns, pssm: PSSM) -> float:
    """Recompute the score of a column assignment."""
    total = 0.0
    for t, j in enumerate(columns):
        total += pssm.s[t, events[j]] if j is not None else -pssm.gap_penalty[t]
    unaligned = len(events) - sum(j is not None for j in columns)
    return total - pssm.insertion_penalty * unaligned


def prefix_scores(seq, pssm: PSSM, incremental: bool = True) -> np.ndarray:
    """S(tau_t) for every prefix tau_t = e_0..e_t.

    The incremental path extends one DP column per event; the other path
    re-runs the full alignment for each prefix.  Both give identical floats
    because DP column j never depends on later events.
    """
    events = _events(seq)
    if not events:
        raise InvalidInputError("empty sequence")
    if min(events) < 0 or max(events) >= pssm.n_events:
        raise InvalidInputError("event outside the PSSM alphabet")
    if not incremental:
        return np.array([profile_dp(events[: t + 1], pssm)[-1, -1] for t in range(len(events))])
    out = np.empty(len(events))
    col = _first_column(pssm)
    rows = pssm._rows
    for t, e in enumerate(events):
        col = _next_column(col, rows[e], pssm)
        out[t] = col[-1]
    return out


def prefix_last_columns(seq, pssm: PSSM) -> list[int | None]:
    """For each prefix, the highest profile column matched by its optimal
    alignment (None if nothing matched)."""
    events = _events(seq)
    D = profile_dp(events, pssm)
    out: list[int | None] = []
    for t in range(len(events)):
        cols = _traceback(D, events, pssm, t + 1)
        used = [c for c, j in enumerate(cols) if j is not None]
        out.append(used[-1] if used else None)
    return out
