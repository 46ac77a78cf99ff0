import json
import subprocess
import sys

import numpy as np
import pytest

from mfgame.cli import main

from oracles import scenario_text


def read_json(path):
    return json.loads(path.read_text())


def measure_file(path, rows, dim=1):
    lines = [f"# dim={dim} n={len(rows)}"] + [" ".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def test_w2_command(tmp_path, capsys):
    a = measure_file(tmp_path / "a.txt", [(0.1, 0.5), (0.6, 0.5)])
    b = measure_file(tmp_path / "b.txt", [(0.3, 0.5), (0.9, 0.5)])
    assert main(["w2", a, a]) == 0
    assert float(capsys.readouterr().out) == 0.0
    assert main(["w2", a, b, "--plan"]) == 0
    out = capsys.readouterr().out.splitlines()
    # pairings 0.1-0.3 and 0.6-0.9 cost (0.04 + 0.09) / 2
    assert float(out[0]) == pytest.approx(np.sqrt(0.065), abs=1e-12)
    assert len(out) == 3


def test_w2_usage_errors(tmp_path):
    a = measure_file(tmp_path / "a.txt", [(0.1, 1.0)])
    b = measure_file(tmp_path / "b.txt", [(0.1, 0.2, 1.0)], dim=2)
    junk = tmp_path / "junk.txt"
    junk.write_text("not a measure\n")
    assert main(["w2", a, b]) == 2
    assert main(["w2", a, str(junk)]) == 2
    assert main(["w2", a, str(tmp_path / "missing.txt")]) == 2
    with pytest.raises(SystemExit) as info:
        main(["w2", a])
    assert info.value.code == 2


def test_simulate_translation(tmp_path):
    path = tmp_path / "shift.ini"
    path.write_text(scenario_text(horizon=0.4, initial="0.1; 0.8"))
    out = tmp_path / "run"
    code = main(["simulate", "--scenario", str(path), "--strategy", "const:2", "--opponent", "const:1",
                 "--cells", "2", "--out", str(out), "--halve-step"])
    assert code == 0
    summary = read_json(out / "summary.json")
    np.testing.assert_allclose(sorted(p[0] for p in summary["final_points"]), [0.2, 0.5], atol=1e-12)
    assert summary["final_barycenter"][0] == pytest.approx(0.35, abs=1e-12)
    assert summary["flow_lipschitz"]["ok"]
    assert summary["halved_step"]["terminal_w2"] == pytest.approx(0.0, abs=1e-12)
    assert (out / "trace.csv").read_text().startswith("# command=simulate\n")


def test_usage_errors(tmp_path):
    out = str(tmp_path)
    assert main(["verify", "--scenario", "still", "--trials", "0", "--out", out]) == 2
    assert main(["gamma", "--scenario", "still", "--eps", "a,b", "--out", out]) == 2
    assert main(["simulate", "--scenario", "still", "--strategy", "bogus", "--out", out]) == 2
    assert main(["simulate", "--scenario", "still", "--strategy", "const:7", "--out", out]) == 2
    assert main(["iterate", "--scenario", "no_such_preset", "--out", out]) == 2
    assert main(["iterate", "--scenario", "still", "--cells", "0", "--out", out]) == 2
    assert main(["iterate", "--scenario", "still", "--max-k", "-1", "--out", out]) == 2


def test_resource_caps(tmp_path, capsys):
    out = str(tmp_path)
    assert main(["iterate", "--scenario", "pursuit_circle", "--graph-cap", "1000", "--out", out]) == 3
    assert "layer sizes" in capsys.readouterr().err
    assert main(["rollout", "--scenario", "pursuit_circle", "--strategy", "const:0", "--cap", "10",
                 "--out", out]) == 3


def test_iterate_still_and_resume(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["iterate", "--scenario", "still", "--out", str(a)]) == 0
    summary = read_json(a / "summary.json")
    assert summary["root_gap"] == 0.0 and summary["converged"]
    assert summary["layer_sizes"] == [1, 1, 1, 1]
    assert main(["iterate", "--scenario", "still", "--resume", str(a / "tables.csv"), "--out", str(b)]) == 0
    resumed = read_json(b / "summary.json")
    assert resumed["resumed"] is True
    for key in ("lower_root", "upper_root", "k", "converged", "layer_sizes"):
        assert resumed[key] == summary[key]


def test_resume_matches_fresh_run(tmp_path):
    part, rest, fresh = tmp_path / "part", tmp_path / "rest", tmp_path / "fresh"
    assert main(["iterate", "--scenario", "barycenter", "--max-k", "0", "--out", str(part)]) == 0
    assert main(["iterate", "--scenario", "barycenter", "--resume", str(part / "tables.csv"),
                 "--out", str(rest)]) == 0
    assert main(["iterate", "--scenario", "barycenter", "--out", str(fresh)]) == 0
    r, f = read_json(rest / "summary.json"), read_json(fresh / "summary.json")
    for key in ("lower_root", "upper_root", "root_gap", "k", "converged"):
        assert r[key] == f[key]


def test_byte_identical_reruns(tmp_path):
    args = ["rollout", "--scenario", "split_linear", "--strategy", "shift", "--eps", "0.05"]
    assert main(args + ["--out", str(tmp_path / "x")]) == 0
    assert main(args + ["--out", str(tmp_path / "y")]) == 0
    for name in ("trace.csv", "search.json"):
        assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()
    # a different seed changes the echoed metadata
    assert main(args + ["--seed", "1", "--out", str(tmp_path / "z")]) == 0
    assert (tmp_path / "x" / "search.json").read_bytes() != (tmp_path / "z" / "search.json").read_bytes()


def test_gamma_command(tmp_path):
    assert main(["gamma", "--scenario", "split_linear", "--eps", "0.1,0.05", "--out", str(tmp_path)]) == 0
    study = read_json(tmp_path / "gamma.json")
    assert len(study["rows"]) == 2 and all(r["ok"] for r in study["rows"])
    assert study["excess_nonincreasing"]
    body = [ln for ln in (tmp_path / "gamma.csv").read_text().splitlines() if not ln.startswith("#")]
    assert len(body) == 3 and body[0].startswith("eps,")


def test_verify_passes_and_negative_control_fails(tmp_path):
    assert main(["verify", "--scenario", "split_linear", "--trials", "200", "--out", str(tmp_path / "ok")]) == 0
    report = read_json(tmp_path / "ok" / "verify.json")
    assert report["violations"] == 0 and "tables" in report["report"]
    # shrinking the declared Lipschitz constant tenfold breaks the flow estimate
    code = main(["verify", "--scenario", "pursuit_circle", "--l-scale", "0.1", "--skip-tables",
                 "--out", str(tmp_path / "bad")])
    assert code == 1
    bad = read_json(tmp_path / "bad" / "verify.json")
    assert bad["violations"] >= 1
    assert bad["meta"]["params"]["l_scale"] == 0.1


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "mfgame", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("mfgame ")
