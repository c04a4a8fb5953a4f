"""Command-line entry point.

Every subcommand reads the same config file, recomputes the pipeline up to
its own stage from the configured seed and writes that stage's artifacts.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path


from . import io as rio
from .config import Config, load_config
from .envs import generate_demonstrations, rollout
from .errors import RewalignError
from .harness import (
    ResultRow,
    ResultTable,
    _cell_seed,
    build_redistribution,
    demo_policy,
    export,
    make_env,
    run_pipeline,
)
from .learning import train
from .stats import episodes_to_threshold

log = logging.getLogger("rewalign")

COMMANDS = ("demos", "cluster", "align", "pssm", "redistribute", "train", "experiment", "stats")


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    print(path)


def _demos(cfg: Config):
    exp, run = cfg.experiment, cfg.run
    env = make_env(exp.env, exp.slip)
    rng = _cell_seed(exp.master_seed, run.n_demos, run.seed, 0)
    demos = generate_demonstrations(env, demo_policy(env), exp.demo_exploration, run.n_demos, rng)
    return env, demos


def _artifacts(cfg: Config):
    env, demos = _demos(cfg)
    exp, run = cfg.experiment, cfg.run
    art = build_redistribution(env, demos, exp.pipeline, _cell_seed(exp.master_seed, run.n_demos, run.seed, 1))
    return env, demos, art


def cmd_demos(cfg: Config) -> None:
    _, demos = _demos(cfg)
    for i, d in enumerate(demos):
        _write(cfg.output_dir / "demos" / f"demo{i:03d}.csv", rio.format_trajectory(d))


def cmd_cluster(cfg: Config) -> None:
    _, _, art = _artifacts(cfg)
    _write(cfg.output_dir / "clusters.csv", rio.format_assignment(art.labels, art.alphabet))
    _write(cfg.output_dir / "sequences.fasta", rio.format_sequences(art.sequences, art.alphabet))


def cmd_align(cfg: Config) -> None:
    _, _, art = _artifacts(cfg)
    _write(cfg.output_dir / "scoring.csv", rio.format_scoring(art.scoring, art.alphabet))
    _write(cfg.output_dir / "msa.fasta", rio.format_msa(art.msa, art.alphabet))


def cmd_pssm(cfg: Config) -> None:
    _, _, art = _artifacts(cfg)
    _write(cfg.output_dir / "pssm.csv", rio.format_pssm(art.pssm, art.alphabet))


def cmd_redistribute(cfg: Config) -> None:
    env, demos, art = _artifacts(cfg)
    out = cfg.output_dir / "redistributed"
    red = art.redistributor
    for i, d in enumerate(demos):
        seq = red.sequence(d)
        _write(out / f"demo{i:03d}.csv", rio.format_redistribution(seq, red.episode(d), art.alphabet))
    if cfg.run.test_episodes:
        rng = _cell_seed(cfg.experiment.master_seed, cfg.run.n_demos, cfg.run.seed, 3)
        policy = demo_policy(env)
        for i in range(cfg.run.test_episodes):
            tr = rollout(env, policy, rng, 0.5)
            _write(out / f"test{i:03d}.csv", rio.format_redistribution(red.sequence(tr), red.episode(tr), art.alphabet))


def cmd_train(cfg: Config) -> None:
    exp, run = cfg.experiment, cfg.run
    if run.method == "align":
        env, demos, art = _artifacts(cfg)
        red = art.redistributor
    else:
        (env, demos), red = _demos(cfg), None
    curve, q = train(
        env, exp.learner(run.method), demos, _cell_seed(exp.master_seed, run.n_demos, run.seed, 2), red,
        exp.budget, exp.eval_every, exp.eval_rollouts, exp.threshold,
    )
    _write(cfg.output_dir / f"curve_{run.method}.csv", rio.format_curve(curve.as_pairs()))
    _write(cfg.output_dir / f"qtable_{run.method}.csv", rio.format_qtable(q))
    eps = episodes_to_threshold(curve.as_pairs(), exp.threshold, exp.budget)
    print(f"episodes_to_threshold={eps}{' (censored)' if eps > exp.budget else ''}")


def _print_summary(table: ResultTable) -> None:
    pvals = table.p_values()
    for s in table.summary():
        p = pvals.get((s["method"], s["n_demos"]))
        extra = f"  p_vs_align={p:.3g}" if p is not None else ""
        print(f"{s['method']:>6} n={s['n_demos']:<4} mean={s['mean_episodes']:.1f} "
              f"censored={s['n_censored']} errors={s['n_errors']}{extra}")


def cmd_experiment(cfg: Config) -> None:
    table = run_pipeline(cfg.experiment)
    _print_summary(table)
    print(cfg.output_dir / "results_summary.csv")


def read_results(path) -> ResultTable:
    """Load a raw results CSV written by ``export``."""
    rows, methods, counts, seeds = [], [], set(), set()
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            row = ResultRow(r["method"], int(r["n_demos"]), int(r["seed"]), int(r["episodes_to_threshold"]),
                            r["censored"] == "1", r["error"])
            rows.append(row)
            if row.method not in methods:
                methods.append(row.method)
            counts.add(row.n_demos)
            seeds.add(row.seed)
    return ResultTable(rows, tuple(methods), tuple(sorted(counts)), len(seeds))


def cmd_stats(cfg: Config, results: str | None = None) -> None:
    path = Path(results) if results else cfg.output_dir / "results_raw.csv"
    table = read_results(path)
    _print_summary(table)
    export(table, path.parent / "stats")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="rewalign", description="Alignment-based reward redistribution")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("-c", "--config", help="key-value config file")
    parser.add_argument("-s", "--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    parser.add_argument("-o", "--output", help="output directory (overrides output_dir)")
    parser.add_argument("--results", help="raw results CSV for the stats command")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    overrides = list(args.set)
    if args.output:
        overrides.append(f"output_dir={args.output}")
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "stats":
            cmd_stats(cfg, args.results)
        else:
            globals()[f"cmd_{args.command}"](cfg)
    except RewalignError as exc:
        print(json.dumps({"error": exc.category, "message": str(exc)}), file=sys.stderr)
        return 2
    except OSError as exc:
        print(json.dumps({"error": "io-error", "message": str(exc)}), file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
