import io
import json
import subprocess
import sys

import numpy as np
import pytest

from ftclab.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_INADMISSIBLE, EXIT_OK, build_parser, cmd_bounds, main, resolve_config
from ftclab.ftc import distinct_laplacian_eigenvalues, load_sequence
from ftclab.graphs import build_topology, load_graph
from ftclab.metrics import Trace
from ftclab.problems import load_problem

FAST = ["--graph", "hypercube:3", "--construction", "hypercube", "--N", "5", "--M", "3",
        "--iters", "12", "--replications", "2", "--record-every", "4"]


def test_gen_seq_hypercube(tmp_path, capsys):
    assert main(["gen", "seq", "--graph", "hypercube:4", "--construction", "hypercube", "--out", str(tmp_path)]) == 0
    assert sorted(p.name for p in tmp_path.glob("A_*.mtx")) == ["A_1.mtx", "A_2.mtx", "A_3.mtx", "A_4.mtx"]
    assert json.loads((tmp_path / "meta.json").read_text())["eps_tau"] <= 1e-12
    assert "tau=4" in capsys.readouterr().out


def test_gen_seq_laplacian_reports_tau(tmp_path, capsys):
    assert main(["gen", "seq", "--graph", "path:16", "--construction", "laplacian_factor", "--out", str(tmp_path)]) == 0
    tau = len(distinct_laplacian_eigenvalues(build_topology("path", 16)))
    assert f"tau={tau}" in capsys.readouterr().out
    assert load_sequence(tmp_path).tau == tau


def test_gen_problem_defaults(tmp_path):
    assert main(["gen", "problem", "--out", str(tmp_path)]) == 0
    meta = json.loads((tmp_path / "meta.json").read_text())
    assert (meta["K"], meta["N"], meta["M"], meta["rho"]) == (16, 15, 10, 0.01)
    assert load_problem(tmp_path).K == 16


def test_gen_graph_and_reuse(tmp_path):
    assert main(["gen", "graph", "--graph", "ring:6", "--out", str(tmp_path / "g")]) == 0
    assert load_graph(tmp_path / "g" / "graph.json").K == 6
    args = ["run", "--graph-file", str(tmp_path / "g" / "graph.json"), "--N", "4", "--M", "2",
            "--iters", "5", "--replications", "1", "--out", str(tmp_path / "r")]
    assert main(args) == 0
    assert json.loads((tmp_path / "r" / "summary.json").read_text())["tau"] == 3  # eigenvalues {1, 3, 4}


def test_run_from_saved_artifacts(tmp_path):
    main(["gen", "seq", "--graph", "ring:8", "--out", str(tmp_path / "s")])
    main(["gen", "problem", "--K", "8", "--N", "5", "--M", "3", "--out", str(tmp_path / "p")])
    args = ["run", "--seq-dir", str(tmp_path / "s"), "--problem-dir", str(tmp_path / "p"),
            "--iters", "10", "--replications", "1", "--out", str(tmp_path / "r")]
    assert main(args) == EXIT_OK
    assert (tmp_path / "r" / "mean.csv").exists()


def test_run_repeatable(tmp_path):
    for name in ("a", "b"):
        assert main(["--seed", "7", "run", *FAST, "--out", str(tmp_path / name)]) == EXIT_OK
    assert (tmp_path / "a" / "mean.csv").read_bytes() == (tmp_path / "b" / "mean.csv").read_bytes()
    assert sorted(p.name for p in (tmp_path / "a").glob("seed_*.csv")) == ["seed_7.csv", "seed_8.csv"]


def test_flags_override_config_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"run": {"mu": 0.3, "num_iters": 7}, "graph": {"spec": "ring:4"}}))
    args = build_parser().parse_args(["run", "--config", str(cfg), "--mu", "0.2"])
    resolved = resolve_config(args)
    assert resolved.run["mu"] == 0.2 and resolved.run["num_iters"] == 7
    assert resolved.graph["spec"] == "ring:4"
    assert resolved.run["replications"] == 10  # default


def test_global_flags_before_or_after_subcommand():
    before = resolve_config(build_parser().parse_args(["--seed", "3", "--jobs", "2", "run"]))
    after = resolve_config(build_parser().parse_args(["run", "--seed", "3", "--jobs", "2"]))
    assert before.run["seed"] == after.run["seed"] == 3
    assert before.jobs == after.jobs == 2


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["run", "--graph", "torus:4", "--out", str(tmp_path)]) == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad)]) == EXIT_CONFIG
    bad.write_text(json.dumps({"run": {"speed": 1}}))
    assert main(["run", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["run", "--seq-dir", str(tmp_path / "missing")]) == EXIT_CONFIG
    assert "error:" in capsys.readouterr().err


def test_divergence_exit_3(tmp_path):
    code = main(["run", *FAST, "--mu", "1e7", "--iters", "300", "--deterministic", "--out", str(tmp_path)])
    assert code == EXIT_DIVERGED
    assert list(tmp_path.glob("seed_*.partial.csv"))
    assert json.loads((tmp_path / "summary.json").read_text())["diverged"]


def test_inadmissible_bounds_exit_4(tmp_path):
    code = main(["run", *FAST, "--mu", "0.3", "--bounds", "--out", str(tmp_path)])
    assert code == EXIT_INADMISSIBLE
    assert (tmp_path / "mean.csv").exists()  # the run itself completed
    assert main(["run", *FAST, "--mu", "0.001", "--bounds", "--out", str(tmp_path / "ok")]) == EXIT_OK
    tr = Trace.read_csv(tmp_path / "ok" / "mean.csv")
    assert np.isfinite(tr.column("thm1_bound")).all()


def test_sweep_command(tmp_path, capsys):
    args = ["sweep", *FAST, "--variable", "eps_tau", "--values", "0,0.2", "--out", str(tmp_path)]
    assert main(args) == EXIT_OK
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[1].startswith("value,mu,steady_state_msd") and len(lines) == 4
    assert "eps_tau=0.2" in capsys.readouterr().out


def test_bounds_exact_ftc_matches_arithmetic(tmp_path):
    args = build_parser().parse_args(["bounds", "--graph", "hypercube:2", "--construction", "hypercube",
                                      "--N", "5", "--M", "3", "--mu", "0.001", "--iters", "4", "--deterministic"])
    buf = io.StringIO()
    assert cmd_bounds(resolve_config(args), buf) == EXIT_OK
    text = buf.getvalue()
    report = dict(line[2:].split(": ", 1) for line in text.splitlines() if line.startswith("# "))
    B, tau, K, mu = float(report["B"]), 2, 4, 0.001
    expected = 27 * mu**2 * tau * (2 * tau - 1) * K * B**2
    rows = [line.split(",") for line in text.splitlines() if line and line[0].isdigit()]
    assert len(rows) == 5
    for r in rows:
        assert float(r[1]) == pytest.approx(expected, rel=1e-12)


def test_bounds_not_applicable(capsys, tmp_path):
    assert main(["bounds", "--graph", "path:16", "--iters", "2", "--out", str(tmp_path)]) == EXIT_INADMISSIBLE
    out = capsys.readouterr().out
    assert "# thm1: not applicable" in out
    assert json.loads((tmp_path / "bounds.json").read_text())["thm1"].startswith("not applicable")


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ftclab.cli", "gen", "graph", "--graph", "star:5",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "star:5" in proc.stdout
