import csv
import io
import json

import numpy as np
import pytest

from mgvl.certified import loads_log
from mgvl.cli import (EXIT_CONFIG, EXIT_IO, RunConfig, csv_text, fmt, main,
                      parse_game_source)
from mgvl.evalx import best_response_markov, strategy_mod_markov
from mgvl.game import MarkovPolicy, parse_game

GAME = "random:zs,S=2,A=2,B=2,H=2,seed=3"


def train(tmp_path, name, *extra):
    out = tmp_path / name
    code = main(["train", "--game", GAME, "--K", "40", "--seed", "7", "--out", str(out),
                 *extra])
    return code, out


def read_csv(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


def test_train_writes_artifacts(tmp_path):
    code, out = train(tmp_path, "run", "--checkpoints", "10,20")
    assert code == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["logs"] == ["log_p0.json", "log_p1.json"]
    for f in man["artifacts"]:
        assert (out / f).exists()
    rows = read_csv(out / "diagnostics.csv")
    assert list(rows[0]) == ["episode", "player", "optimism_violations", "gap_trace",
                             "wallclock_ms"]
    assert [r["episode"] for r in rows] == ["10", "10", "20", "20", "40", "40"]
    assert loads_log((out / "log_p0.json").read_text()).K == 40


def test_same_command_twice_byte_identical(tmp_path):
    _, a = train(tmp_path, "a")
    _, b = train(tmp_path, "b")
    for f in ("log_p0.json", "log_p1.json", "game.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_manifest_rerun_reproduces_logs(tmp_path):
    _, a = train(tmp_path, "a", "--format", "binary")
    rerun = tmp_path / "again"
    assert main(["train", "--manifest", str(a / "manifest.json"), "--out", str(rerun)]) == 0
    for f in ("log_p0.bin", "log_p1.bin"):
        assert (a / f).read_bytes() == (rerun / f).read_bytes()


def test_manifest_rerun_with_game_file(tmp_path):
    game_file = tmp_path / "g.json"
    assert main(["gen", "--game", GAME, "--out", str(game_file)]) == 0
    out = tmp_path / "r"
    assert main(["train", "--game", str(game_file), "--K", "20", "--out", str(out)]) == 0
    game_file.unlink()
    # the run directory's copy of the game stands in for the missing file
    assert main(["train", "--manifest", str(out / "manifest.json"),
                 "--out", str(tmp_path / "r2")]) == 0
    assert (out / "log_p0.json").read_bytes() == (tmp_path / "r2" / "log_p0.json").read_bytes()


def test_nashq_on_general_sum_is_config_error(tmp_path):
    code = main(["train", "--algo", "nashq", "--game", "random:gs,S=2,H=2", "--K", "5",
                 "--out", str(tmp_path / "x")])
    assert code == EXIT_CONFIG
    assert not (tmp_path / "x").exists()


def test_config_errors(tmp_path):
    assert main(["train", "--K", "0", "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert main(["train", "--game", "random:zs,Q=3", "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert main(["train", "--algo", "bogus"]) == EXIT_CONFIG
    assert main(["train", "--game", str(tmp_path / "missing.json"),
                 "--out", str(tmp_path / "x")]) == EXIT_IO
    bad = tmp_path / "bad.json"
    bad.write_text('{"horizon": 1}')
    assert main(["train", "--game", str(bad), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert not (tmp_path / "x").exists()


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text(f'game = "{GAME}"\nK = 15\nseed = 2\n')
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--K", "12", "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["K"] == 12 and man["config"]["seed"] == 2
    jcfg = tmp_path / "c.json"
    jcfg.write_text(json.dumps({"game": GAME, "K": 9, "surprise": 1}))
    assert main(["train", "--config", str(jcfg), "--out", str(out)]) == EXIT_CONFIG


def test_eval_rows_per_checkpoint_player_mode(tmp_path):
    _, out = train(tmp_path, "run", "--checkpoints", "20")
    assert main(["eval", str(out)]) == 0
    rows = read_csv(out / "gaps.csv")
    keys = {(r["K"], r["player"], r["mode"]) for r in rows}
    assert keys == {(k, p, m) for k in ("20", "40") for p in ("0", "1")
                    for m in ("best_response", "strategy_mod")}
    assert all(float(r["gap"]) >= -1e-8 for r in rows)
    assert len(json.loads((out / "gaps.json").read_text())) == len(rows)


def test_eval_mc_rows_have_stderr(tmp_path):
    _, out = train(tmp_path, "run")
    assert main(["eval", str(out), "--modes", "best_response", "--mc", "2000"]) == 0
    rows = read_csv(out / "gaps.csv")
    mc = [r for r in rows if r["exact_or_mc"] == "mc"]
    exact = [r for r in rows if r["exact_or_mc"] == "exact"]
    assert len(mc) == len(exact) == 2
    for r, e in zip(mc, exact):
        assert float(r["stderr"]) > 0
        assert abs(float(r["on_policy"]) - float(e["on_policy"])) <= 4 * float(r["stderr"])


def test_eval_k1_matches_markov_collapse(tmp_path):
    out = tmp_path / "k1"
    g3 = "random:gs,m=3,actions=2x2x2,S=2,H=2,seed=1"
    assert main(["train", "--game", g3, "--K", "1", "--algo", "vlearn-swap",
                 "--out", str(out)]) == 0
    assert main(["eval", str(out), "--unvisited", "execute"]) == 0
    game = parse_game((out / "game.json").read_text())
    pol = MarkovPolicy.uniform(game)
    joint = [[pol.joint(h, s) for s in range(game.num_states)] for h in range(game.horizon)]
    for r in read_csv(out / "gaps.csv"):
        i = int(r["player"])
        if r["mode"] == "best_response":
            ref = best_response_markov(game, pol, i).value(0)
        else:
            ref = strategy_mod_markov(game, joint, i)[0, 0]
        assert float(r["upper_bound"]) == pytest.approx(ref, abs=1e-10)


def test_eval_monotone_adds_nash_gap(tmp_path):
    out = tmp_path / "mono"
    assert main(["train", "--algo", "vlearn-monotone", "--game", GAME, "--K", "30",
                 "--out", str(out)]) == 0
    assert (out / "monotone_cuts.json").exists()
    assert main(["eval", str(out), "--modes", "best_response"]) == 0
    modes = {r["mode"] for r in read_csv(out / "gaps.csv")}
    assert "nash_markov" in modes


def test_nashq_train_and_eval(tmp_path):
    out = tmp_path / "q"
    assert main(["train", "--algo", "nashq", "--game", GAME, "--K", "30",
                 "--out", str(out)]) == 0
    assert (out / "log_joint.json").exists()
    assert main(["eval", str(out)]) == 0
    assert {r["mode"] for r in read_csv(out / "gaps.csv")} == {"best_response"}


def test_parity_run_writes_transcript(tmp_path):
    out = tmp_path / "p"
    assert main(["train", "--game", "parity:H=4,T=1|3,alpha=0.2", "--K", "25",
                 "--out", str(out)]) == 0
    lines = (out / "opponent_transcript.jsonl").read_text().splitlines()
    assert len(lines) == 25 and json.loads(lines[0])["episode"] == 1


def test_eval_missing_or_corrupt_log(tmp_path):
    assert main(["eval", str(tmp_path / "nothing")]) == EXIT_IO
    _, out = train(tmp_path, "run")
    (out / "log_p1.json").write_text("{")
    assert main(["eval", str(out)]) == EXIT_IO


def test_bench_and_threads_env(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("MGVL_THREADS", "2")
    assert main(["bench", "--game", GAME, "--K", "20", "--seeds", "2"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3
    monkeypatch.setenv("MGVL_THREADS", "x")
    assert main(["bench", "--game", GAME, "--K", "20"]) == EXIT_CONFIG


def test_parallel_eval_matches_serial(tmp_path, monkeypatch):
    _, out = train(tmp_path, "run", "--checkpoints", "20")
    assert main(["eval", str(out)]) == 0
    serial = (out / "gaps.csv").read_text()
    monkeypatch.setenv("MGVL_THREADS", "2")
    assert main(["eval", str(out)]) == 0
    assert (out / "gaps.csv").read_text() == serial


def test_number_formatting_locale_free():
    assert fmt(1234567.5) == "1234567.5"
    assert fmt(np.float64(0.1)) == "0.1"
    assert fmt(True) == "1" and fmt(np.int64(3)) == "3"
    assert csv_text(("a", "b"), [[1, 2.5]]) == "a,b\n1,2.5\n"


def test_inline_specs():
    g, extra = parse_game_source("parity:H=6,T=1|3,alpha=0.2")
    assert g.num_states == 13 and extra["parity"].T == (1, 3)
    g, _ = parse_game_source("random:coop,m=3,actions=2x3x2,S=2,H=1")
    assert g.action_counts == (2, 3, 2)
    cfg = RunConfig(K=5, checkpoints=[9, 2])
    cfg.validate()
    assert cfg.checkpoints == [2, 5]


def test_version_flag(capsys):
    assert main(["--version"]) == 0
