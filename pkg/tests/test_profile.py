from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rewalign.alignment import GAP, MSA
from rewalign.errors import DegenerateColumnError, InvalidInputError
from rewalign.events import EventBackground
from rewalign.profile import (
    PSSM,
    ProfileModel,
    align_to_profile,
    build_pssm,
    column_frequencies,
    prefix_scores,
    profile_alignment_score,
)


def brute_force_profile(events, pssm):
    """Best score over every monotone assignment of sequence positions to columns."""
    L, T = pssm.length, len(events)
    best = -np.inf
    for k in range(min(L, T) + 1):
        for cols in combinations(range(L), k):
            for pos in combinations(range(T), k):
                score = sum(pssm.s[c, events[j]] for c, j in zip(cols, pos))
                score -= sum(pssm.gap_penalty[c] for c in range(L) if c not in cols)
                score -= pssm.insertion_penalty * (T - k)
                best = max(best, score)
    return best


def random_pssm(seed, n=3, L=4, gaps=False, ins=0.0):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=(L, n)).round(3)
    g = rng.uniform(0, 1, L).round(3) if gaps else 0.0
    return PSSM(s, 1.0, g, np.full(n, 1.0 / n), ins)


# column frequencies --------------------------------------------------------------

def test_column_frequencies_examples():
    q = column_frequencies(MSA([[0], [0], [0]]), 3, 0.0).q
    assert q[0].tolist() == [1.0, 0.0, 0.0]
    q = column_frequencies(MSA([[0], [0], [1]]), 3, 0.0).q
    assert q[0] == pytest.approx([2 / 3, 1 / 3, 0.0], abs=1e-15)
    q = column_frequencies(MSA([[0], [0]]), 2, 1.0).q
    assert q[0].tolist() == [0.75, 0.25]


@settings(max_examples=60)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 2.0))
def test_column_frequencies_with_gaps_sum_to_one(seed, pc):
    rng = np.random.default_rng(seed)
    rows = [[int(x) if rng.random() > 0.3 else GAP for x in rng.integers(0, 4, 5)] for _ in range(4)]
    prof = column_frequencies(MSA(rows), 4, pc)
    assert np.allclose(prof.q.sum(axis=1) + prof.gap, 1.0, atol=1e-12, rtol=0)


def test_column_frequencies_rejects_negative_pseudocount():
    with pytest.raises(InvalidInputError):
        column_frequencies(MSA([[0]]), 2, -1.0)


# PSSM ------------------------------------------------------------------------

def test_pssm_background_column_scores_zero():
    p = np.array([0.2, 0.3, 0.5])
    prof = ProfileModel(p[None, :].copy(), np.zeros(1), 0.0, 1)
    pssm = build_pssm(prof, EventBackground(p))
    assert np.all(pssm.s == 0.0)


def test_pssm_peaked_column():
    q = np.array([[0.97, 0.01, 0.01, 0.01]])
    pssm = build_pssm(ProfileModel(q, np.zeros(1), 0.0, 1), EventBackground(np.full(4, 0.25)))
    lam = pssm.lambdas[0]
    assert abs(lam - 1.0) < 1e-6
    assert pssm.s[0, 0] == pytest.approx(np.log(0.97 / 0.25) / lam)
    assert abs(np.sum(0.25 * np.exp(lam * pssm.s[0])) - 1) < 1e-8
    assert pssm.consensus.tolist() == [0]


def test_pssm_peaked_column_from_pseudocounts():
    msa = MSA([[0]] * 96)
    prof = column_frequencies(msa, 4, 1.0)
    assert prof.q[0] == pytest.approx([0.97, 0.01, 0.01, 0.01])


def test_pssm_degenerate_column():
    prof = ProfileModel(np.zeros((1, 2)), np.ones(1), 0.0, 1)
    with pytest.raises(DegenerateColumnError):
        build_pssm(prof, EventBackground([0.5, 0.5]))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([0.0, 0.01, 0.5]))
def test_pssm_roots_and_consensus(seed, pc):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    rows = [[int(x) if rng.random() > 0.2 else GAP for x in rng.integers(0, n, 6)] for _ in range(int(rng.integers(1, 6)))]
    for r in rows:
        r[0] = 0
    msa = MSA(rows)
    p = rng.dirichlet(np.ones(n)) * 0.5 + 0.5 / n
    prof = column_frequencies(msa, n, pc)
    if np.any(prof.q.sum(axis=1) == 0):
        return
    pssm = build_pssm(prof, EventBackground(p / p.sum()))
    assert np.all(np.isfinite(pssm.s))
    assert np.array_equal(pssm.consensus, pssm.s.argmax(axis=1))
    q = prof.q / prof.q.sum(axis=1, keepdims=True)
    for t in range(pssm.length):
        if np.all(q[t] > 0):  # no floored entries: the root identity is exact
            lam = pssm.lambdas[t]
            assert abs(np.sum(pssm.background * np.exp(lam * pssm.s[t])) - 1) < 1e-8


# profile alignment ---------------------------------------------------------------

def test_consensus_sequence_matches_every_column():
    s = np.full((4, 4), -2.0)
    cons = [0, 2, 1, 3]
    for t, e in enumerate(cons):
        s[t, e] = 1.0 + t
    pssm = PSSM(s, 1.0, 0.0, np.full(4, 1 / 4))
    r = align_to_profile(cons, pssm)
    assert r.score == sum(s[t, e] for t, e in enumerate(cons))
    assert r.columns == [0, 1, 2, 3]
    # prefix scores are running sums of the column maxima
    assert prefix_scores(cons, pssm).tolist() == np.cumsum([s[t, e] for t, e in enumerate(cons)]).tolist()


def test_single_event_takes_best_column():
    pssm = random_pssm(3, L=5)
    for e in range(3):
        r = align_to_profile([e], pssm)
        assert r.score == max(0.0, pssm.s[:, e].max())
        assert r.score == brute_force_profile([e], pssm)


def test_insertion_is_free_without_penalty():
    s = np.array([[2.0, -1.0, -1.0], [-1.0, 2.0, -1.0]])
    pssm = PSSM(s, 1.0, 0.0, np.full(3, 1 / 3))
    assert align_to_profile([0, 1], pssm).score == align_to_profile([0, 2, 1], pssm).score == 4.0
    charged = PSSM(s, 1.0, 0.0, np.full(3, 1 / 3), insertion_penalty=0.5)
    assert align_to_profile([0, 2, 1], charged).score == 3.5


def test_all_one_event_matches_column_zero_only():
    s = np.array([[3.0, -1.0], [-1.0, 1.0], [-1.0, 1.0]])
    pssm = PSSM(s, 1.0, 0.0, np.full(2, 0.5))
    assert prefix_scores([0, 0, 0, 0], pssm).tolist() == [3.0] * 4


events_st = st.lists(st.integers(0, 2), min_size=1, max_size=5)


@settings(max_examples=150, deadline=None)
@given(events_st, st.integers(0, 2**31 - 1), st.integers(1, 5), st.booleans(), st.sampled_from([0.0, 0.3]))
def test_profile_alignment_against_enumeration(events, seed, L, gaps, ins):
    pssm = random_pssm(seed, 3, L, gaps, ins)
    r = align_to_profile(events, pssm)
    assert r.score == pytest.approx(brute_force_profile(events, pssm), abs=1e-9)
    matched = [j for j in r.columns if j is not None]
    assert all(a < b for a, b in zip(matched, matched[1:]))
    assert profile_alignment_score(events, r.columns, pssm) == pytest.approx(r.score, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 2), min_size=1, max_size=12), st.integers(0, 2**31 - 1),
       st.booleans(), st.sampled_from([0.0, 2.0]))
def test_prefix_scores_incremental_equals_full(events, seed, gaps, ins):
    pssm = random_pssm(seed, 3, 6, gaps, ins)
    inc = prefix_scores(events, pssm, incremental=True)
    full = prefix_scores(events, pssm, incremental=False)
    assert inc.tolist() == full.tolist()
    assert inc[-1] == align_to_profile(events, pssm).score


def test_background_columns_contribute_nothing():
    rng = np.random.default_rng(0)
    s = rng.normal(size=(3, 3))
    s[1] = 0.0
    with_bg = PSSM(s, 1.0, 0.0, np.full(3, 1 / 3))
    without = PSSM(np.delete(s, 1, axis=0), 1.0, 0.0, np.full(3, 1 / 3))
    for seq in ([0, 1, 2], [2, 2], [1, 0, 1, 2]):
        assert align_to_profile(seq, with_bg).score == align_to_profile(seq, without).score


def test_prefix_scores_rejects_bad_input():
    pssm = random_pssm(0)
    with pytest.raises(InvalidInputError):
        prefix_scores([], pssm)
    with pytest.raises(InvalidInputError):
        prefix_scores([7], pssm)
