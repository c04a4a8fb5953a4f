"""Text and CSV serialisation of pipeline artefacts.

Floats are written with ``repr`` so every file round-trips bit-exactly.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .alignment import GAP, MSA, ScoringMatrix
from .errors import InvalidInputError
from .events import ClusterAssignment, EventAlphabet, EventBackground, EventSequence, Trajectory
from .learning import QTable
from .profile import PSSM
from .redistribution import RedistributedEpisode


def _f(x) -> str:
    return repr(float(x))


def _write(path, text: str):
    if path is None:
        return text
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)
    return text


def _read(src) -> str:
    if isinstance(src, Path) or (isinstance(src, str) and "\n" not in src and Path(src).exists()):
        return Path(src).read_text()
    return src


def _rows(src) -> list[list[str]]:
    return [r for r in csv.reader(io.StringIO(_read(src))) if r]


def _csv(rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    return buf.getvalue()


# event sequences ---------------------------------------------------------

def format_sequences(seqs: Sequence[EventSequence], alphabet: EventAlphabet) -> str:
    out = []
    for i, s in enumerate(seqs):
        out.append(f">{s.name or f'seq{i}'} return={_f(s.source_return)}")
        out.append(alphabet.encode(s.events))
    return "\n".join(out) + "\n"


def parse_sequences(text: str, alphabet: EventAlphabet) -> list[EventSequence]:
    seqs = []
    name, ret, body = None, 0.0, []

    def flush():
        if name is not None:
            seqs.append(EventSequence(alphabet.decode("".join(body)), ret, None, name))

    for line in _read(text).splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith(">"):
            flush()
            head = line[1:].split()
            name, ret, body = head[0] if head else "", 0.0, []
            for tok in head[1:]:
                if tok.startswith("return="):
                    ret = float(tok[len("return="):])
        elif name is None:
            raise InvalidInputError("sequence data before the first header")
        else:
            body.append(line)
    flush()
    return seqs


def write_sequences(path, seqs, alphabet):
    return _write(path, format_sequences(seqs, alphabet))


# cluster assignments -----------------------------------------------------

def format_assignment(labels: np.ndarray, alphabet: EventAlphabet) -> str:
    rows = [("state_id", "cluster", "letter")]
    rows += [(i, int(k), alphabet.letter(int(k))) for i, k in enumerate(labels)]
    return _csv(rows)


def parse_assignment(text: str) -> np.ndarray:
    rows = _rows(text)
    if rows[0] != ["state_id", "cluster", "letter"]:
        raise InvalidInputError("bad assignment header")
    labels = np.empty(len(rows) - 1, dtype=np.int64)
    for r in rows[1:]:
        labels[int(r[0])] = int(r[1])
    return labels


def assignment_from_labels(labels: np.ndarray) -> ClusterAssignment:
    """Rebuild an assignment; each cluster's first member stands in as its center."""
    n = int(labels.max()) + 1
    centers = np.array([int(np.flatnonzero(labels == k)[0]) for k in range(n)])
    return ClusterAssignment(labels, centers, n)


# MSA --------------------------------------------------------------------

def format_msa(msa: MSA, alphabet: EventAlphabet) -> str:
    out = []
    for i, row in enumerate(msa.rows):
        name = msa.names[i] if i < len(msa.names) and msa.names[i] else f"seq{i}"
        out.append(f">{name}")
        out.append("".join("-" if e == GAP else alphabet.letter(e) for e in row))
    return "\n".join(out) + "\n"


def parse_msa(text: str, alphabet: EventAlphabet) -> MSA:
    names, rows = [], []
    for line in _read(text).splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith(">"):
            names.append(line[1:].split()[0] if len(line) > 1 else "")
            rows.append([])
        else:
            rows[-1].extend(GAP if ch == "-" else alphabet.index(ch) for ch in line)
    return MSA(rows, 0.0, names)


# scoring matrix ----------------------------------------------------------

def format_scoring(scoring: ScoringMatrix, alphabet: EventAlphabet) -> str:
    letters = [alphabet.letter(i) for i in range(scoring.n)]
    rows = [[""] + letters]
    rows += [[letters[i]] + [_f(x) for x in scoring.s[i]] for i in range(scoring.n)]
    rows.append(["background"] + [_f(x) for x in scoring.background.p])
    rows.append(["gap_open", _f(scoring.gap_open)])
    rows.append(["gap_extend", _f(scoring.gap_extend)])
    return _csv(rows)


def parse_scoring(text: str) -> ScoringMatrix:
    rows = _rows(text)
    n = len(rows[0]) - 1
    s = np.array([[float(x) for x in r[1:]] for r in rows[1 : n + 1]])
    meta = {r[0]: r[1:] for r in rows[n + 1 :]}
    bg = EventBackground(np.array([float(x) for x in meta["background"]]))
    return ScoringMatrix(s, bg, float(meta["gap_open"][0]), float(meta["gap_extend"][0]))


# PSSM ---------------------------------------------------------------------

def format_pssm(pssm: PSSM, alphabet: EventAlphabet) -> str:
    """Rows are events, columns are profile positions, followed by the
    consensus line and per-column metadata."""
    L = pssm.length
    rows = [["event"] + [str(t) for t in range(L)]]
    for i in range(pssm.n_events):
        rows.append([alphabet.letter(i)] + [_f(x) for x in pssm.s[:, i]])
    rows.append(["consensus"] + [alphabet.letter(int(e)) for e in pssm.consensus])
    rows.append(["lambda"] + [_f(x) for x in pssm.lambdas])
    rows.append(["gap_penalty"] + [_f(x) for x in pssm.gap_penalty])
    rows.append(["background"] + [_f(x) for x in pssm.background])
    rows.append(["insertion_penalty", _f(pssm.insertion_penalty)])
    return _csv(rows)


def parse_pssm(text: str) -> PSSM:
    rows = _rows(text)
    body = []
    meta = {}
    for r in rows[1:]:
        if r[0] in ("consensus", "lambda", "gap_penalty", "background", "insertion_penalty"):
            meta[r[0]] = r[1:]
        else:
            body.append([float(x) for x in r[1:]])
    s = np.array(body).T
    return PSSM(
        s,
        np.array([float(x) for x in meta["lambda"]]),
        np.array([float(x) for x in meta["gap_penalty"]]),
        np.array([float(x) for x in meta["background"]]),
        float(meta.get("insertion_penalty", ["0.0"])[0]),
    )


# redistributed episodes ---------------------------------------------------

def format_redistribution(seq: EventSequence, ep: RedistributedEpisode, alphabet: EventAlphabet) -> str:
    rows = [("t", "event_letter", "S_prefix", "R")]
    for t, (e, S, R) in enumerate(zip(seq.events, ep.prefix, ep.rewards)):
        rows.append((t, alphabet.letter(e), _f(S), _f(R)))
    rows.append(("correction", "", "", _f(ep.correction)))
    return _csv(rows)


def parse_redistribution(text: str) -> tuple[list[str], np.ndarray, np.ndarray, float]:
    rows = _rows(text)[1:]
    letters = [r[1] for r in rows[:-1]]
    S = np.array([float(r[2]) for r in rows[:-1]])
    R = np.array([float(r[3]) for r in rows[:-1]])
    if rows[-1][0] != "correction":
        raise InvalidInputError("missing correction row")
    return letters, S, R, float(rows[-1][3])


# trajectories, curves, Q-tables --------------------------------------------

def format_trajectory(traj: Trajectory) -> str:
    rows = [("t", "state", "action", "reward")]
    for t, (s, a, r) in enumerate(traj.steps()):
        rows.append((t, s, a, _f(r)))
    rows.append((len(traj), traj.states[-1], "", ""))
    return _csv(rows)


def parse_trajectory(text: str) -> Trajectory:
    rows = _rows(text)[1:]
    states = [int(r[1]) for r in rows]
    actions = [int(r[2]) for r in rows[:-1]]
    rewards = [float(r[3]) for r in rows[:-1]]
    return Trajectory(states, actions, rewards)


def format_curve(curve: Sequence[tuple[int, float]]) -> str:
    return _csv([("episode", "eval_return")] + [(int(e), _f(r)) for e, r in curve])


def parse_curve(text: str) -> list[tuple[int, float]]:
    return [(int(r[0]), float(r[1])) for r in _rows(text)[1:]]


def format_qtable(q: QTable) -> str:
    A = q.n_actions
    rows = [["state"] + [f"q{a}" for a in range(A)] + [f"n{a}" for a in range(A)]]
    for s in range(q.values.shape[0]):
        rows.append([s] + [_f(x) for x in q.values[s]] + [int(c) for c in q.counts[s]])
    return _csv(rows)


def parse_qtable(text: str) -> QTable:
    rows = _rows(text)
    A = (len(rows[0]) - 1) // 2
    vals = np.array([[float(x) for x in r[1 : 1 + A]] for r in rows[1:]])
    counts = np.array([[int(x) for x in r[1 + A :]] for r in rows[1:]])
    return QTable(vals, counts)
