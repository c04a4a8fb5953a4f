import json
import shutil
import subprocess

import pytest

from rewalign import io as rio
from rewalign.cli import main, read_results
from rewalign.events import EventAlphabet

SMALL = ["-s", "budget=20", "-s", "eval_rollouts=2", "-s", "run.n_demos=3", "-s", "demo_counts=2",
         "-s", "seeds=2", "-s", "methods=align,bcq"]


def run(tmp_path, *args):
    return main([*args, "-o", str(tmp_path), *SMALL])


def test_demos(tmp_path, capsys):
    assert run(tmp_path, "demos") == 0
    files = sorted((tmp_path / "demos").glob("*.csv"))
    assert len(files) == 3
    assert rio.parse_trajectory(files[0]).terminal_return == 1.0


def test_cluster_align_pssm(tmp_path):
    for cmd in ("cluster", "align", "pssm"):
        assert run(tmp_path, cmd) == 0
    labels = rio.parse_assignment(tmp_path / "clusters.csv")
    alpha = EventAlphabet(int(labels.max()) + 1)
    assert len(rio.parse_sequences(tmp_path / "sequences.fasta", alpha)) == 3
    assert len(rio.parse_msa(tmp_path / "msa.fasta", alpha).rows) == 3
    assert rio.parse_scoring(tmp_path / "scoring.csv").n == alpha.n_events
    assert rio.parse_pssm(tmp_path / "pssm.csv").n_events == alpha.n_events


def test_redistribute(tmp_path):
    assert main(["redistribute", "-o", str(tmp_path), *SMALL, "-s", "run.test_episodes=2"]) == 0
    out = tmp_path / "redistributed"
    assert len(list(out.glob("demo*.csv"))) == 3 and len(list(out.glob("test*.csv"))) == 2
    _, _, R, corr = rio.parse_redistribution(out / "demo000.csv")
    assert abs(R.sum() + corr - 1.0) < 1e-9


@pytest.mark.parametrize("method", ["align", "sqil"])
def test_train(tmp_path, capsys, method):
    assert run(tmp_path, "train", "-s", f"run.method={method}") == 0
    assert "episodes_to_threshold=" in capsys.readouterr().out
    assert rio.parse_curve(tmp_path / f"curve_{method}.csv")[0][0] == 0
    assert rio.parse_qtable(tmp_path / f"qtable_{method}.csv").values.shape[1] == 4


def test_experiment_then_stats(tmp_path, capsys):
    assert run(tmp_path, "experiment") == 0
    out = capsys.readouterr().out
    assert "align" in out and "bcq" in out
    table = read_results(tmp_path / "results_raw.csv")
    assert len(table.rows) == 4 and table.methods == ("align", "bcq")
    assert run(tmp_path, "stats") == 0
    # re-exporting the loaded table reproduces the raw file byte for byte
    assert (tmp_path / "stats" / "results_raw.csv").read_bytes() == (tmp_path / "results_raw.csv").read_bytes()


def test_invalid_key_reports_json(tmp_path, capsys):
    assert main(["demos", "-o", str(tmp_path), "-s", "colour=blue"]) == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "invalid-input" and "colour" in err["message"]


def test_generation_failure_reports_json(tmp_path, capsys):
    assert main(["demos", "-o", str(tmp_path), "-s", "demo_exploration=1.0", "-s", "run.n_demos=50"]) == 2
    assert json.loads(capsys.readouterr().err.strip())["error"] == "generation-failure"


def test_missing_results_file(tmp_path, capsys):
    assert main(["stats", "-o", str(tmp_path), "--results", str(tmp_path / "none.csv")]) == 3
    assert json.loads(capsys.readouterr().err.strip())["error"] == "io-error"


@pytest.mark.skipif(shutil.which("rewalign") is None, reason="console script not installed")
def test_console_script():
    res = subprocess.run(["rewalign", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "experiment" in res.stdout
