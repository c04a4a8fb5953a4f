"""End-to-end pipeline: demonstrations to redistributed reward to learning."""
from __future__ import annotations

import csv
import io as _io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import io as rio
from .alignment import MSA, ScoringMatrix, build_scoring_matrix_karlin, build_scoring_matrix_simple, progressive_msa
from .envs import KeyChestEnv, RoomsEnv, generate_demonstrations, random_transitions, rollout, value_iteration
from .errors import InvalidInputError, RewalignError
from .events import (
    ClusterAssignment,
    EventAlphabet,
    EventBackground,
    EventSequence,
    Trajectory,
    affinity_propagation,
    build_successor_representation,
    event_frequencies,
    events_from_states,
    merge_clusters,
    similarity_quantile,
    successor_similarity,
)
from .learning import METHODS, LearnerConfig, train
from .profile import PSSM, build_pssm, column_frequencies
from .redistribution import EpisodeRedistributor, RedistributionModel, fit_redistribution
from .stats import episodes_to_threshold, key_event_detection_rate, mann_whitney_u

log = logging.getLogger(__name__)

ENVIRONMENTS = ("fourrooms", "eightrooms", "keychest")


@dataclass
class PipelineConfig:
    """Settings for steps (I)-(V) of the redistribution pipeline."""

    max_clusters: int = 15
    sr_learning_rate: float = 0.1
    sr_discount: float = 0.99
    sr_sweeps: int = 3
    random_episodes: int = 200
    random_length: int = 50
    ap_damping: float = 0.5
    ap_iterations: int = 1000
    ap_quantile: float = 0.5
    scoring: str = "karlin"
    alpha: float = -1.0
    epsilon: float = 0.0
    off_diagonal: float = -1.0
    pseudocount: float | None = None
    insertion_penalty: float = 0.0

    def __post_init__(self):
        if self.max_clusters < 1:
            raise InvalidInputError("max_clusters must be at least 1")
        if self.scoring not in ("simple", "karlin"):
            raise InvalidInputError(f"unknown scoring scheme {self.scoring!r}")
        if self.insertion_penalty < 0:
            raise InvalidInputError("insertion penalty must be non-negative")
        if not 0 <= self.ap_quantile <= 1:
            raise InvalidInputError("ap_quantile must lie in [0, 1]")


def default_pipeline(env_name: str) -> PipelineConfig:
    """Per-environment pipeline defaults.

    Gridworlds charge unaligned events so that re-entering an already matched
    room does not earn reward again.  The key-chest track has few enough
    states that nearly every state keeps its own event.
    """
    if env_name == "keychest":
        return PipelineConfig(max_clusters=26, ap_quantile=0.99)
    return PipelineConfig(insertion_penalty=1.0)


@dataclass
class PipelineArtifacts:
    assignment: ClusterAssignment
    labels: np.ndarray
    sequences: list[EventSequence]
    background: EventBackground
    scoring: ScoringMatrix
    msa: MSA
    pssm: PSSM
    model: RedistributionModel
    redistributor: EpisodeRedistributor

    @property
    def alphabet(self) -> EventAlphabet:
        return EventAlphabet(self.assignment.n_clusters)


def make_env(name: str, slip: float = 0.01):
    if name in ("fourrooms", "eightrooms"):
        return RoomsEnv(name, slip=slip)
    if name == "keychest":
        return KeyChestEnv()
    path = Path(name)
    if path.exists():
        return RoomsEnv(str(path), slip=slip)
    raise InvalidInputError(f"unknown environment {name!r}")


def demo_policy(env):
    """Optimal policy used to generate demonstrations."""
    _, policy = value_iteration(env.tabular_model(), discount=0.99)
    return policy


def cluster_states(env, demos: Sequence[Trajectory], cfg: PipelineConfig, rng: np.random.Generator):
    """Successor representation + affinity propagation over observation keys.

    Returns the assignment over the visited keys and a label for every key;
    keys never seen in the transitions get the label of the nearest center.
    """
    key = env.observation_key
    n_keys = env.n_cells if isinstance(env, RoomsEnv) else env.n_states
    trans = [(key(s), key(s2)) for d in demos for s, s2 in d.transitions()]
    trans += [(key(s), key(s2)) for s, s2 in random_transitions(env, cfg.random_episodes, rng, cfg.random_length)]
    sr = build_successor_representation(trans, cfg.sr_learning_rate, cfg.sr_discount, cfg.sr_sweeps, n_keys)
    seen = np.zeros(n_keys, dtype=bool)
    for a, b in trans:
        seen[a] = seen[b] = True
    idx = np.flatnonzero(seen)
    rows = sr.matrix[idx]
    sim = successor_similarity(rows)
    assignment = affinity_propagation(sim, cfg.ap_damping, cfg.ap_iterations, similarity_quantile(sim, cfg.ap_quantile))
    assignment = merge_clusters(assignment, rows, cfg.max_clusters)
    labels = np.empty(n_keys, dtype=np.int64)
    labels[idx] = assignment.labels
    if (~seen).any():
        centers = rows[assignment.centers]
        d = ((sr.matrix[~seen][:, None, :] - centers[None]) ** 2).sum(axis=2)
        labels[~seen] = d.argmin(axis=1)
    return assignment, labels


def make_scoring(background: EventBackground, cfg: PipelineConfig) -> ScoringMatrix:
    if cfg.scoring == "simple":
        return build_scoring_matrix_simple(background, cfg.alpha)
    if cfg.scoring == "karlin":
        return build_scoring_matrix_karlin(background, cfg.epsilon, cfg.off_diagonal)
    raise InvalidInputError(f"unknown scoring scheme {cfg.scoring!r}")


def demo_sequences(env, demos: Sequence[Trajectory], labels: np.ndarray) -> list[EventSequence]:
    seqs = []
    for i, d in enumerate(demos):
        ev, where = events_from_states(d.states[1:], labels, env.observation_key)
        seqs.append(EventSequence(ev, d.terminal_return, where, f"demo{i}"))
    return seqs


def build_redistribution(env, demos: Sequence[Trajectory], cfg: PipelineConfig, rng: np.random.Generator) -> PipelineArtifacts:
    """Steps (I)-(V): events, scoring matrix, MSA, PSSM and the fitted model."""
    if len(demos) < 1:
        raise InvalidInputError("need at least one demonstration")
    assignment, labels = cluster_states(env, demos, cfg, rng)
    seqs = demo_sequences(env, demos, labels)
    background = event_frequencies(seqs, assignment.n_clusters)
    scoring = make_scoring(background, cfg)
    if len(seqs) >= 2:
        msa = progressive_msa(seqs, scoring)
    else:
        msa = MSA([list(seqs[0].events)], 0.0, [seqs[0].name])
    profile = column_frequencies(msa, assignment.n_clusters, cfg.pseudocount)
    pssm = build_pssm(profile, background, insertion_penalty=cfg.insertion_penalty)
    model = fit_redistribution(seqs, pssm)
    return PipelineArtifacts(assignment, labels, seqs, background, scoring, msa, pssm, model,
                             EpisodeRedistributor(model, labels, env.observation_key))


# experiments ----------------------------------------------------------------

@dataclass
class ExperimentConfig:
    env: str = "fourrooms"
    slip: float = 0.01
    demo_counts: tuple[int, ...] = (2, 5, 10, 50, 100)
    seeds: int = 20
    methods: tuple[str, ...] = METHODS
    pipeline: PipelineConfig | None = None
    learners: dict = field(default_factory=dict)
    threshold: float = 0.8
    budget: int = 5000
    eval_every: int = 10
    eval_rollouts: int = 10
    demo_exploration: float = 0.2
    master_seed: int = 0
    output_dir: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.pipeline is None:
            self.pipeline = default_pipeline(self.env)
        self.demo_counts = tuple(int(n) for n in self.demo_counts)
        self.methods = tuple(self.methods)
        if self.seeds < 1:
            raise InvalidInputError("seed count must be at least 1")
        if not self.demo_counts or min(self.demo_counts) < 1:
            raise InvalidInputError("demo counts must be positive")
        for m in self.methods:
            if m not in METHODS:
                raise InvalidInputError(f"unknown method {m!r}")
        if self.env not in ENVIRONMENTS and not Path(self.env).exists():
            raise InvalidInputError(f"environment {self.env!r} is neither built in nor an existing file")
        if self.budget < 1 or self.eval_every < 1:
            raise InvalidInputError("budget and eval_every must be positive")

    def learner(self, method: str) -> LearnerConfig:
        return self.learners.get(method) or LearnerConfig.default(method)


@dataclass(frozen=True)
class ResultRow:
    method: str
    n_demos: int
    seed: int
    episodes: int
    censored: bool
    error: str = ""


@dataclass
class ResultTable:
    rows: list[ResultRow]
    methods: tuple[str, ...]
    demo_counts: tuple[int, ...]
    seeds: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = len(self.methods) * len(self.demo_counts) * self.seeds
        if len(self.rows) != expected:
            raise InvalidInputError(f"expected {expected} rows, got {len(self.rows)}")
        order = {m: i for i, m in enumerate(self.methods)}
        self.rows.sort(key=lambda r: (order[r.method], r.n_demos, r.seed))

    def cell(self, method: str, n_demos: int) -> list[int]:
        """Episodes-to-threshold of the seeds that ran without error."""
        return [r.episodes for r in self.rows if r.method == method and r.n_demos == n_demos and not r.error]

    def summary(self) -> list[dict]:
        out = []
        for m in self.methods:
            for n in self.demo_counts:
                rows = [r for r in self.rows if r.method == m and r.n_demos == n]
                eps = np.array([r.episodes for r in rows if not r.error], dtype=float)
                out.append(dict(
                    method=m,
                    n_demos=n,
                    mean_episodes=float(eps.mean()) if eps.size else float("nan"),
                    median_episodes=float(np.median(eps)) if eps.size else float("nan"),
                    std_episodes=float(eps.std()) if eps.size else float("nan"),
                    n_seeds=len(rows),
                    n_censored=sum(r.censored for r in rows if not r.error),
                    n_errors=sum(bool(r.error) for r in rows),
                ))
        return out

    def p_values(self, reference: str = "align", alternative: str = "two-sided") -> dict:
        """Mann-Whitney p-value of ``reference`` against every other method,
        keyed by (method, n_demos)."""
        out = {}
        if reference not in self.methods:
            return out
        for n in self.demo_counts:
            a = self.cell(reference, n)
            for m in self.methods:
                if m == reference:
                    continue
                b = self.cell(m, n)
                out[(m, n)] = mann_whitney_u(a, b, alternative)[1] if a and b else float("nan")
        return out


def _cell_seed(master: int, n: int, seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master, n, seed, stream]))


def run_cell(cfg: ExperimentConfig, n: int, seed: int) -> tuple[list[ResultRow], dict]:
    """All methods for one (demo count, seed) cell on a shared demo set.

    Returns the rows and a mapping of relative artifact paths to file text.
    """
    files: dict[str, str] = {}
    tag = f"n{n}_seed{seed}"
    try:
        env = make_env(cfg.env, cfg.slip)
        demos = generate_demonstrations(env, demo_policy(env), cfg.demo_exploration, n, _cell_seed(cfg.master_seed, n, seed, 0))
    except RewalignError as exc:
        log.warning("cell %s failed: %s", tag, exc)
        return [ResultRow(m, n, seed, cfg.budget + 1, True, exc.category) for m in cfg.methods], files
    art = None
    if "align" in cfg.methods:
        try:
            art = build_redistribution(env, demos, cfg.pipeline, _cell_seed(cfg.master_seed, n, seed, 1))
            alpha = art.alphabet
            files[f"artifacts/{tag}/sequences.fasta"] = rio.format_sequences(art.sequences, alpha)
            files[f"artifacts/{tag}/clusters.csv"] = rio.format_assignment(art.labels, alpha)
            files[f"artifacts/{tag}/scoring.csv"] = rio.format_scoring(art.scoring, alpha)
            files[f"artifacts/{tag}/msa.fasta"] = rio.format_msa(art.msa, alpha)
            files[f"artifacts/{tag}/pssm.csv"] = rio.format_pssm(art.pssm, alpha)
        except RewalignError as exc:
            log.warning("pipeline %s failed: %s", tag, exc)
            art = exc
    rows = []
    for method in cfg.methods:
        if method == "align" and isinstance(art, RewalignError):
            rows.append(ResultRow(method, n, seed, cfg.budget + 1, True, art.category))
            continue
        try:
            curve, _ = train(
                env, cfg.learner(method), demos, _cell_seed(cfg.master_seed, n, seed, 2),
                art.redistributor if method == "align" else None,
                cfg.budget, cfg.eval_every, cfg.eval_rollouts, cfg.threshold,
            )
        except RewalignError as exc:
            rows.append(ResultRow(method, n, seed, cfg.budget + 1, True, exc.category))
            continue
        eps = episodes_to_threshold(curve.as_pairs(), cfg.threshold, cfg.budget)
        rows.append(ResultRow(method, n, seed, eps, eps > cfg.budget))
        files[f"curves/{method}_{tag}.csv"] = rio.format_curve(curve.as_pairs())
    return rows, files


def _run_cell_args(args):
    return run_cell(*args)


def run_pipeline(cfg: ExperimentConfig) -> ResultTable:
    """Run every (method, demo count, seed) cell and export the results.

    Cells are independent; with ``workers > 1`` they run in a process pool.
    Results do not depend on the worker count.
    """
    jobs = [(cfg, n, seed) for n in cfg.demo_counts for seed in range(cfg.seeds)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_run_cell_args, jobs))
    else:
        results = [run_cell(*j) for j in jobs]
    rows = [r for rs, _ in results for r in rs]
    meta = dict(
        env=cfg.env, slip=cfg.slip, threshold=cfg.threshold, budget=cfg.budget,
        eval_every=cfg.eval_every, eval_rollouts=cfg.eval_rollouts, master_seed=cfg.master_seed,
    )
    table = ResultTable(rows, cfg.methods, cfg.demo_counts, cfg.seeds, meta)
    if cfg.output_dir is not None:
        out = Path(cfg.output_dir)
        for _, files in results:
            for rel, text in sorted(files.items()):
                p = out / rel
                p.parent.mkdir(parents=True, exist_ok=True)
                p.write_text(text)
        export(table, out)
    return table


def _fmt(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return "" if np.isnan(x) else repr(x)
    return str(x)


def export(table: ResultTable, out_dir) -> tuple[Path, Path]:
    """Write ``results_raw.csv`` and ``results_summary.csv``.

    The summary is long format (one row per method and demo count) with the
    axes and log scale of the usual episodes-vs-demos plot in its header
    comments.
    """
    if not table.rows:
        raise InvalidInputError("empty result table")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "n_demos", "seed", "episodes_to_threshold", "censored", "error"])
    for r in table.rows:
        w.writerow([r.method, r.n_demos, r.seed, r.episodes, _fmt(r.censored), r.error])
    raw = out / "results_raw.csv"
    raw.write_text(buf.getvalue())

    pvals = table.p_values()
    buf = _io.StringIO()
    for k in sorted(table.metadata):
        buf.write(f"# {k}={table.metadata[k]}\n")
    buf.write("# plot: x=n_demos y=mean_episodes yscale=log\n")
    cols = ["method", "n_demos", "mean_episodes", "median_episodes", "std_episodes",
            "n_seeds", "n_censored", "n_errors", "p_value_vs_align"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for s in table.summary():
        s["p_value_vs_align"] = pvals.get((s["method"], s["n_demos"]), float("nan"))
        w.writerow([_fmt(s[c]) for c in cols])
    summary = out / "results_summary.csv"
    summary.write_text(buf.getvalue())
    return raw, summary


# key-event detection ----------------------------------------------------------

def detection_rate(
    env: KeyChestEnv,
    artifacts: PipelineArtifacts,
    n_episodes: int,
    rng: np.random.Generator,
    exploration: float = 0.5,
    policy=None,
) -> float:
    """Key-event detection rate on fresh episodes that contain a key event.

    Episodes come from the demo policy with ``exploration``; per-step
    rewards exclude the correction.
    """
    policy = policy if policy is not None else demo_policy(env)
    rewards, keys = [], []
    tries = 0
    while len(rewards) < n_episodes:
        tries += 1
        if tries > 100 * n_episodes:
            raise InvalidInputError("too few test episodes contain a key event")
        traj = rollout(env, policy, rng, exploration)
        ks = env.key_steps(traj)
        if not ks:
            continue
        rewards.append(artifacts.redistributor.step_rewards(traj, correction=False))
        keys.append(ks)
    return key_event_detection_rate(rewards, keys)
