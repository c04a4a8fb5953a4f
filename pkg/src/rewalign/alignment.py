"""Scoring systems, pairwise global alignment and progressive MSA.

Gaps are represented by ``GAP`` (-1) inside aligned rows.  A gap run of
length k costs ``gap_open + k * gap_extend``; both default to zero, which is
the setting used for demonstrations.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, NoRootError
from .events import EventBackground, EventSequence

GAP = -1
NEG = float("-inf")

# Traceback states, listed in tie-break preference order.
MATCH, UP, LEFT = 0, 1, 2


@dataclass
class ScoringMatrix:
    s: np.ndarray
    background: EventBackground
    gap_open: float = 0.0
    gap_extend: float = 0.0

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        n = len(self.background)
        if self.s.shape != (n, n):
            raise InvalidInputError("scoring matrix shape does not match the background")
        if not np.allclose(self.s, self.s.T, rtol=0, atol=1e-12):
            raise InvalidInputError("scoring matrix must be symmetric")
        if self.gap_open < 0 or self.gap_extend < 0:
            raise InvalidInputError("gap penalties are non-negative costs")

    @property
    def n(self) -> int:
        return self.s.shape[0]

    def permuted(self, perm: Sequence[int]) -> "ScoringMatrix":
        """Relabel events: old event ``i`` becomes ``perm[i]``."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        return ScoringMatrix(
            self.s[np.ix_(inv, inv)],
            EventBackground(self.background.p[inv]),
            self.gap_open,
            self.gap_extend,
        )


def build_scoring_matrix_simple(
    background: EventBackground, alpha: float = -1.0, gap_open: float = 0.0, gap_extend: float = 0.0
) -> ScoringMatrix:
    """Self-match score 1/p_i, every mismatch scored ``alpha``."""
    if alpha > 0:
        raise InvalidInputError("alpha must be <= 0")
    p = background.p
    if np.any(p <= 0):
        raise InvalidInputError("background probabilities must be positive")
    s = np.full((len(p), len(p)), float(alpha))
    np.fill_diagonal(s, 1.0 / p)
    return ScoringMatrix(s, background, gap_open, gap_extend)


def build_scoring_matrix_karlin(
    background: EventBackground,
    epsilon: float = 0.0,
    off_diagonal: float = -1.0,
    gap_open: float = 0.0,
    gap_extend: float = 0.0,
) -> ScoringMatrix:
    """Log-odds scores ln(q_ij / (p_i p_j)) for a chosen target distribution.

    The target puts mass p_i - epsilon on each self-match and spreads epsilon
    evenly over the mismatches of event i, so the target sums to one and the
    scores come out in units where lambda* = 1.  With ``epsilon == 0`` the
    mismatch target is zero and mismatches get the constant ``off_diagonal``.
    """
    p = background.p
    n = len(p)
    if epsilon < 0 or epsilon >= p.min():
        raise InvalidInputError("epsilon must satisfy 0 <= epsilon < min(p)")
    q = np.empty((n, n))
    if n > 1:
        q[:] = epsilon / (n - 1)
    np.fill_diagonal(q, p - epsilon)
    q /= q.sum()
    pp = np.outer(p, p)
    with np.errstate(divide="ignore"):
        s = np.log(q / pp)
    if epsilon == 0:
        s[~np.eye(n, dtype=bool)] = off_diagonal
    return ScoringMatrix(s, background, gap_open, gap_extend)


def karlin_lambda(weights: np.ndarray, scores: np.ndarray, tol: float = 1e-10) -> float:
    """Positive root of sum(weights * exp(lam * scores)) = 1.

    Scans lam over powers of two in [2^-20, 2^10] for a sign change, then
    bisects.  Entries with score -inf contribute nothing.
    """
    w = np.asarray(weights, dtype=float).ravel()
    x = np.asarray(scores, dtype=float).ravel()
    keep = np.isfinite(x)
    w, x = w[keep], x[keep]

    def excess(lam):
        return float(np.dot(w, np.exp(lam * x))) - 1.0

    if not np.any(x > 0):
        raise NoRootError("no positive score, the function stays below 1")
    grid = [2.0**k for k in range(-20, 11)]
    lo = hi = None
    prev = None
    for lam in grid:
        if excess(lam) > 0:
            if prev is None:
                raise NoRootError("expected score is not negative; no positive root")
            lo, hi = prev, lam
            break
        prev = lam
    if hi is None:
        raise NoRootError("no sign change found up to lambda = 2^10")

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if excess(mid) > 0:
            hi = mid
        else:
            lo = mid
    root = lo if abs(excess(lo)) <= abs(excess(hi)) else hi
    if abs(excess(root)) >= tol:
        raise NoRootError(f"bisection did not reach tolerance {tol}")
    return root


def solve_lambda(scoring: ScoringMatrix) -> float:
    p = scoring.background.p
    pp = np.outer(p, p)
    s = scoring.s
    if not (np.any(s > 0) and np.any(s < 0)):
        raise NoRootError("need both positive and negative scores")
    if float((pp * s).sum()) >= 0:
        raise NoRootError("expected score must be negative")
    return karlin_lambda(pp, s)


@dataclass
class PairwiseAlignment:
    aligned_a: list[int]
    aligned_b: list[int]
    score: float

    def __post_init__(self):
        if len(self.aligned_a) != len(self.aligned_b):
            raise InvalidInputError("aligned rows differ in length")

    def degapped(self) -> tuple[list[int], list[int]]:
        return [x for x in self.aligned_a if x != GAP], [x for x in self.aligned_b if x != GAP]


def global_dp(sub, gap_open: float = 0.0, gap_extend: float = 0.0):
    """Affine-gap global alignment over a substitution table.

    ``sub[i][j]`` scores putting item i of the first input against item j
    of the second.  Returns the optimal score and the list of moves
    (MATCH / UP = first item against a gap / LEFT = gap against second item)
    from the start.  Ties prefer MATCH, then UP, then LEFT.
    """
    n = len(sub)
    m = len(sub[0]) if n else 0
    go = gap_open + gap_extend
    ge = gap_extend

    M = [[NEG] * (m + 1) for _ in range(n + 1)]
    X = [[NEG] * (m + 1) for _ in range(n + 1)]
    Y = [[NEG] * (m + 1) for _ in range(n + 1)]
    # back pointers: state we came from
    bM = [[0] * (m + 1) for _ in range(n + 1)]
    bX = [[0] * (m + 1) for _ in range(n + 1)]
    bY = [[0] * (m + 1) for _ in range(n + 1)]
    M[0][0] = 0.0
    for i in range(1, n + 1):
        X[i][0] = -go if i == 1 else X[i - 1][0] - ge
        bX[i][0] = MATCH if i == 1 else UP
    for j in range(1, m + 1):
        Y[0][j] = -go if j == 1 else Y[0][j - 1] - ge
        bY[0][j] = MATCH if j == 1 else LEFT

    for i in range(1, n + 1):
        Mi, Xi, Yi = M[i], X[i], Y[i]
        Mp, Xp, Yp = M[i - 1], X[i - 1], Y[i - 1]
        row = sub[i - 1]
        bMi, bXi, bYi = bM[i], bX[i], bY[i]
        for j in range(1, m + 1):
            # match
            a, b, c = Mp[j - 1], Xp[j - 1], Yp[j - 1]
            if a >= b and a >= c:
                best, ptr = a, MATCH
            elif b >= c:
                best, ptr = b, UP
            else:
                best, ptr = c, LEFT
            Mi[j] = best + row[j - 1]
            bMi[j] = ptr
            # first item against a gap
            a, b, c = Mp[j] - go, Xp[j] - ge, Yp[j] - go
            if a >= b and a >= c:
                Xi[j], bXi[j] = a, MATCH
            elif b >= c:
                Xi[j], bXi[j] = b, UP
            else:
                Xi[j], bXi[j] = c, LEFT
            # gap against second item
            a, b, c = Mi[j - 1] - go, Xi[j - 1] - go, Yi[j - 1] - ge
            if a >= b and a >= c:
                Yi[j], bYi[j] = a, MATCH
            elif b >= c:
                Yi[j], bYi[j] = b, UP
            else:
                Yi[j], bYi[j] = c, LEFT

    a, b, c = M[n][m], X[n][m], Y[n][m]
    if a >= b and a >= c:
        score, state = a, MATCH
    elif b >= c:
        score, state = b, UP
    else:
        score, state = c, LEFT
    if n == 0 or m == 0:
        state = UP if n else LEFT
    score += 0.0  # normalise -0.0

    moves = []
    i, j = n, m
    while i > 0 or j > 0:
        moves.append(state)
        if state == MATCH:
            state = bM[i][j]
            i, j = i - 1, j - 1
        elif state == UP:
            state = bX[i][j]
            i -= 1
        else:
            state = bY[i][j]
            j -= 1
    moves.reverse()
    return score, moves


def _check_events(seq: Sequence[int], n: int):
    if not seq:
        raise InvalidInputError("cannot align an empty sequence")
    if min(seq) < 0 or max(seq) >= n:
        raise InvalidInputError("event index outside the scoring matrix")


def _events(x) -> list[int]:
    return list(x.events) if isinstance(x, EventSequence) else [int(e) for e in x]


def pairwise_align(a, b, scoring: ScoringMatrix) -> PairwiseAlignment:
    """Needleman-Wunsch style global alignment with affine gaps."""
    a, b = _events(a), _events(b)
    _check_events(a, scoring.n)
    _check_events(b, scoring.n)
    sub = scoring.s[np.ix_(a, b)].tolist()
    score, moves = global_dp(sub, scoring.gap_open, scoring.gap_extend)
    ra, rb = [], []
    i = j = 0
    for mv in moves:
        if mv == MATCH:
            ra.append(a[i]); rb.append(b[j]); i += 1; j += 1
        elif mv == UP:
            ra.append(a[i]); rb.append(GAP); i += 1
        else:
            ra.append(GAP); rb.append(b[j]); j += 1
    return PairwiseAlignment(ra, rb, score)


def _gap_cost(runs: int, length: int, scoring: ScoringMatrix) -> float:
    return runs * scoring.gap_open + length * scoring.gap_extend


def alignment_score(aligned_a: Sequence[int], aligned_b: Sequence[int], scoring: ScoringMatrix) -> float:
    """Recompute a pairwise alignment score from its columns.

    A run of consecutive columns with a gap in the same row counts as one gap.
    Gap-gap columns are ignored.
    """
    total = 0.0
    cost = 0.0
    prev = None  # which row had a gap in the previous column
    for x, y in zip(aligned_a, aligned_b):
        if x == GAP and y == GAP:
            continue
        if x != GAP and y != GAP:
            total += scoring.s[x, y]
            prev = None
            continue
        row = "b" if y == GAP else "a"
        cost += scoring.gap_extend + (scoring.gap_open if prev != row else 0.0)
        prev = row
    return total - cost


@dataclass
class GuideTree:
    """UPGMA merge history.

    Leaves are 0..n_leaves-1; merge k creates node ``n_leaves + k`` joining
    ``merges[k] = (left, right)`` at ``heights[k]``.
    """

    n_leaves: int
    merges: list[tuple[int, int]] = field(default_factory=list)
    heights: list[float] = field(default_factory=list)

    @property
    def root(self) -> int:
        return self.n_leaves + len(self.merges) - 1 if self.merges else 0

    def leaves(self, node: int) -> list[int]:
        if node < self.n_leaves:
            return [node]
        left, right = self.merges[node - self.n_leaves]
        return self.leaves(left) + self.leaves(right)


def build_guide_tree(pairwise_scores: np.ndarray) -> GuideTree:
    """UPGMA on distances ``max_score - score``; ties join the lowest pair."""
    S = np.asarray(pairwise_scores, dtype=float)
    k = S.shape[0]
    if S.shape != (k, k):
        raise InvalidInputError("score matrix must be square")
    if not np.allclose(S, S.T):
        raise InvalidInputError("score matrix must be symmetric")
    tree = GuideTree(k)
    if k < 2:
        return tree
    off = S[~np.eye(k, dtype=bool)]
    D = off.max() - S
    active = {i: 1 for i in range(k)}  # node id -> size
    dist = {(i, j): D[i, j] for i in range(k) for j in range(i + 1, k)}
    next_id = k
    while len(active) > 1:
        (i, j), d = min(dist.items(), key=lambda kv: (kv[1], kv[0]))
        ni, nj = active.pop(i), active.pop(j)
        new = next_id
        next_id += 1
        for other in active:
            dio = dist.pop((min(i, other), max(i, other)))
            djo = dist.pop((min(j, other), max(j, other)))
            dist[(other, new)] = (ni * dio + nj * djo) / (ni + nj)
        del dist[(i, j)]
        active[new] = ni + nj
        tree.merges.append((i, j))
        tree.heights.append(d / 2.0)
    return tree


@dataclass
class MSA:
    rows: list[list[int]]
    score: float = 0.0
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.rows:
            raise InvalidInputError("MSA without rows")
        L = len(self.rows[0])
        if any(len(r) != L for r in self.rows):
            raise InvalidInputError("MSA rows differ in length")

    @property
    def length(self) -> int:
        return len(self.rows[0])

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def degapped(self) -> list[list[int]]:
        return [[x for x in r if x != GAP] for r in self.rows]

    def column_counts(self, n_events: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-column event counts (L x n) and gap counts (L,)."""
        arr = np.asarray(self.rows)
        counts = np.zeros((self.length, n_events))
        for e in range(n_events):
            counts[:, e] = (arr == e).sum(axis=0)
        return counts, (arr == GAP).sum(axis=0).astype(float)


def sum_of_pairs_score(msa: MSA, scoring: ScoringMatrix) -> float:
    """Sum over row pairs and columns of the pair score.

    Event-event pairs score s[x, y]; an event against a gap costs
    ``gap_extend``; gap-gap pairs score 0.
    """
    counts, gaps = msa.column_counts(scoring.n)
    S = scoring.s
    total = 0.0
    for c, g in zip(counts, gaps):
        events = c.sum()
        pair = float(c @ S @ c - c @ np.diag(S)) / 2.0
        total += pair - scoring.gap_extend * events * g
    return total


def _profile_freqs(rows: list[list[int]], n: int) -> np.ndarray:
    arr = np.asarray(rows)
    F = np.zeros((arr.shape[1], n))
    for e in range(n):
        F[:, e] = (arr == e).sum(axis=0)
    return F / arr.shape[0]


def align_profiles(rows_a: list[list[int]], rows_b: list[list[int]], scoring: ScoringMatrix):
    """Align two blocks of already-aligned rows column against column.

    Columns score by the expected pairwise score of their event frequency
    vectors (gaps contribute zero).  Returns the merged rows, a first.
    """
    Fa = _profile_freqs(rows_a, scoring.n)
    Fb = _profile_freqs(rows_b, scoring.n)
    sub = (Fa @ scoring.s @ Fb.T).tolist()
    _, moves = global_dp(sub, scoring.gap_open, scoring.gap_extend)
    out_a = [[] for _ in rows_a]
    out_b = [[] for _ in rows_b]
    i = j = 0
    for mv in moves:
        take_a = mv in (MATCH, UP)
        take_b = mv in (MATCH, LEFT)
        for r, src in zip(out_a, rows_a):
            r.append(src[i] if take_a else GAP)
        for r, src in zip(out_b, rows_b):
            r.append(src[j] if take_b else GAP)
        i += take_a
        j += take_b
    return out_a + out_b


def pairwise_score_matrix(sequences: Sequence, scoring: ScoringMatrix) -> np.ndarray:
    seqs = [_events(s) for s in sequences]
    k = len(seqs)
    P = np.zeros((k, k))
    for i, j in itertools.combinations(range(k), 2):
        sub = scoring.s[np.ix_(seqs[i], seqs[j])].tolist()
        P[i, j] = P[j, i] = global_dp(sub, scoring.gap_open, scoring.gap_extend)[0]
    return P


def progressive_msa(sequences: Sequence, scoring: ScoringMatrix) -> MSA:
    """All-pairs alignment, UPGMA guide tree, then profile merges in tree order."""
    if len(sequences) < 2:
        raise InvalidInputError("progressive MSA needs at least two sequences")
    seqs = [_events(s) for s in sequences]
    for s in seqs:
        _check_events(s, scoring.n)
    names = [getattr(s, "name", "") or f"seq{i}" for i, s in enumerate(sequences)]

    tree = build_guide_tree(pairwise_score_matrix(seqs, scoring))
    blocks: dict[int, tuple[list[int], list[list[int]]]] = {
        i: ([i], [list(s)]) for i, s in enumerate(seqs)
    }
    for k, (left, right) in enumerate(tree.merges):
        ids_a, rows_a = blocks.pop(left)
        ids_b, rows_b = blocks.pop(right)
        blocks[tree.n_leaves + k] = (ids_a + ids_b, align_profiles(rows_a, rows_b, scoring))
    ids, rows = blocks[tree.root]
    ordered = [None] * len(seqs)
    for idx, row in zip(ids, rows):
        ordered[idx] = row
    msa = MSA(ordered, names=names)
    msa.score = sum_of_pairs_score(msa, scoring)
    return msa
