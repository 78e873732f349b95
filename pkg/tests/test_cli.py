import json
import os
import subprocess
import sys

from msoe.cli import main

CONFIGS = os.path.join(os.path.dirname(__file__), "..", "configs")

SMALL = """\
model:
  preset: {preset}
simulation:
  n: 400
  horizon: 40
  censoring: {{law: uniform, lo: 10, hi: 40}}
  master_seed: 5
grid:
  M: 10
{extra}"""


def cfg(tmp_path, preset="markov_illness_death", extra="", name="c.cfg"):
    p = tmp_path / name
    p.write_text(SMALL.format(preset=preset, extra=extra))
    return str(p)


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out.split(), out.err


def test_estimate_writes_fit_and_manifest(tmp_path, capsys):
    out = tmp_path / "o"
    code, files, _ = run(["estimate", "--config", cfg(tmp_path), "--out-dir", str(out)], capsys)
    assert code == 0
    names = [os.path.basename(f) for f in files]
    assert names == ["oe_table.csv", "rates.csv", "truth.csv", "manifest.json"]
    man = json.loads((out / "manifest.json").read_text())
    assert man["master_seed"] == 5 and len(man["config_sha256"]) == 64
    assert man["files"] == names[:-1]
    assert {"numpy", "scipy", "python", "msoe"} <= set(man["versions"])
    header = (out / "rates.csv").read_text().splitlines()[0]
    assert header == "transition,bin,t_lo,t_hi,rate,variance,ci_lo,ci_hi"


def test_unknown_subcommand_exits_1(capsys):
    assert main_exit(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def main_exit(argv):
    try:
        return main(argv)
    except SystemExit as exc:
        return exc.code


def test_validation_error_exits_1(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("model:\n  preset: markov_illness_death\nsimulation:\n  n: 3\n")
    code, files, err = run(["simulate", "--config", str(p), "--out-dir", str(tmp_path / "o")], capsys)
    assert code == 1 and files == []
    assert "master_seed" in err


def test_runtime_error_exits_2(tmp_path, capsys):
    p = tmp_path / "in.cfg"
    p.write_text("input:\n  events: missing.csv\ngrid:\n  M: 4\n  t_max: 10\n")
    code, _, err = run(["estimate", "--config", str(p), "--out-dir", str(tmp_path / "o")], capsys)
    assert code == 2 and "runtime failure" in err


def test_seed_override_changes_output(tmp_path, capsys):
    c = cfg(tmp_path)
    run(["simulate", "--config", c, "--out-dir", str(tmp_path / "a")], capsys)
    run(["simulate", "--config", c, "--out-dir", str(tmp_path / "b"), "--seed", "6"], capsys)
    a = (tmp_path / "a" / "events.csv").read_bytes()
    b = (tmp_path / "b" / "events.csv").read_bytes()
    assert a != b


def test_simulate_then_ingest_lasso_and_tree(tmp_path, capsys):
    run(["simulate", "--config", cfg(tmp_path), "--out-dir", str(tmp_path / "sim")], capsys)
    for method, extra in (("lasso", "  lambda: [10, 1]\n"), ("tree", "  tree: {max_depth: 2}\n")):
        p = tmp_path / f"{method}.cfg"
        p.write_text(
            "input:\n  events: sim/events.csv\n  absorbing: ['3']\ngrid:\n  M: 10\n  t_max: 40\n"
            f"estimation:\n  method: {method}\n  transition: '1->2'\n{extra}"
        )
        code, files, _ = run(["estimate", "--config", str(p), "--out-dir", str(tmp_path / method)], capsys)
        assert code == 0
        if method == "lasso":
            assert [os.path.basename(f) for f in files][-2:] == ["lasso_path.csv", "manifest.json"]
            head = (tmp_path / method / "lasso_00.csv").read_text().splitlines()[0]
            assert head.endswith(",method,lambda")
        else:
            head = (tmp_path / method / "tree.csv").read_text().splitlines()[0]
            assert head.endswith(",method,leaf_id")


def test_experiments_are_thread_count_invariant(tmp_path, capsys):
    cases = [
        ("sweep", "markov_illness_death", "experiment:\n  Ms: [5, 40]\n  reps: 30\n  n: 200\n"),
        ("clt", "markov_illness_death", "experiment:\n  Ms: [15]\n  reps: 30\n  n: 200\n"),
        ("independence", "markov_illness_death", "experiment:\n  reps: 40\n  n: 200\n"),
        ("lemma-check", "markov_illness_death", "experiment:\n  n: 5000\n"),
        ("surface", "semimarkov_illness_death", "experiment:\n  n: 3000\n"),
        ("slice", "semimarkov_illness_death", "  duration: {M: 10}\n"),
    ]
    for cmd, preset, extra in cases:
        c = cfg(tmp_path, preset, extra, name=f"{cmd}.cfg")
        outs = []
        for workers in ("1", "3"):
            d = tmp_path / f"{cmd}_{workers}"
            code, files, err = run([cmd, "--config", c, "--out-dir", str(d), "--workers", workers], capsys)
            assert code == 0, err
            outs.append({os.path.basename(f): open(f, "rb").read() for f in files if f.endswith(".csv")})
        assert outs[0] == outs[1] and outs[0]


def test_help_documents_keys():
    res = subprocess.run([sys.executable, "-m", "msoe", "sweep", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for key in ("master_seed", "censoring", "min_deviance_gain", "paper-scale", "reps 1000"):
        assert key in res.stdout


def test_quiet_verbosity(tmp_path):
    env = dict(os.environ, MSOE_VERBOSITY="quiet")
    res = subprocess.run(
        [sys.executable, "-m", "msoe", "simulate", "--config", cfg(tmp_path), "--out-dir", str(tmp_path / "q")],
        capture_output=True, text=True, env=env,
    )
    assert res.returncode == 0 and res.stderr == ""
    assert res.stdout.splitlines()[0].endswith("events.csv")


def test_paper_sweep_config_matches_design():
    from msoe.config import load_config

    p = load_config(os.path.join(CONFIGS, "paper_sweep.cfg")).experiment_params("sweep")
    assert p["reps"] == 1000 and p["n"] == 500 and p["Ms"] == list(range(5, 85, 5))
