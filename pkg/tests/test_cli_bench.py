import csv
import io
import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from pfmc.cli_bench import (
    CSV_HEADER,
    EXIT_ATTACK,
    EXIT_ERROR,
    EXIT_OK,
    BenchMatrix,
    RunRequest,
    UsageError,
    main,
    run_bench,
    run_verification,
)
from pfmc.parallel_strategies import StrategyConfig

SCHEMA = Path(__file__).resolve().parent.parent / "docs" / "result.schema.json"


def req(path="corpus:sso_flawed", sessions=2, depth=7, kind="enhanced-buffer", workers=2, **kw):
    return RunRequest(path, sessions, depth, StrategyConfig.make(kind, workers), **kw)


def run(r):
    out, err = io.StringIO(), io.StringIO()
    res, code = run_verification(r, out, err)
    return res, code, out.getvalue(), err.getvalue()


def test_sso_flawed_attack_exit_code(capsys):
    code = main(["corpus:sso_flawed", "--sessions", "2", "--depth", "12", "--strategy", "ebuffer",
                 "--workers", "4"])
    out = capsys.readouterr().out
    assert code == EXIT_ATTACK
    assert "ATTACK FOUND" in out and "SP authenticates C on URI" in out


@pytest.mark.parametrize("name", ["sso_flawed", "kerberos", "tls"])
def test_depth_zero_exits_ok(name, capsys):
    assert main([f"corpus:{name}", "--sessions", "2", "--depth", "0", "--workers", "1"]) == EXIT_OK


def test_missing_file(tmp_path, capsys):
    code = main([str(tmp_path / "nope.AnB"), "--sessions", "1", "--depth", "3", "--workers", "1"])
    assert code == EXIT_ERROR
    assert "cannot read" in capsys.readouterr().err


def test_malformed_input(tmp_path, capsys):
    p = tmp_path / "bad.AnB"
    p.write_text("Protocol: X\nTypes: Agent A\nActions:\n")
    assert main([str(p), "--sessions", "1", "--depth", "3", "--workers", "1"]) == EXIT_ERROR


@pytest.mark.parametrize("argv", [
    ["corpus:tls", "--sessions", "0", "--depth", "3", "--workers", "1"],
    ["corpus:tls", "--sessions", "1", "--depth", "3", "--workers", "1", "--strategy", "magic"],
    ["corpus:tls", "--sessions", "1", "--depth", "-1", "--workers", "1"],
    ["corpus:nothing", "--sessions", "1", "--depth", "3", "--workers", "1"],
])
def test_usage_errors(argv, capsys):
    assert main(argv) == EXIT_ERROR


def test_json_and_text_agree():
    _, code_t, text, _ = run(req())
    _, code_j, js, _ = run(req(output="json"))
    doc = json.loads(js)
    assert code_t == code_j == doc["exit_code"] == EXIT_ATTACK
    assert doc["verdict"] == "attack-found" and "ATTACK FOUND" in text
    assert doc["trace"] in text
    assert doc["attack"]["goal"] == "SP authenticates C on URI"


def test_json_matches_documented_schema():
    schema = json.loads(SCHEMA.read_text())
    _, _, js, _ = run(req(output="json"))
    doc = json.loads(js)
    assert set(doc) == set(schema["properties"]) == set(schema["required"])
    cfg = schema["properties"]["config"]
    assert set(doc["config"]) == set(cfg["required"])
    stats = schema["properties"]["stats"]
    assert set(doc["stats"]) == set(stats["required"])
    att = schema["properties"]["attack"]
    assert set(doc["attack"]) == set(att["required"])


def test_auto_depth_raises_the_bound():
    _, _, js, _ = run(req(path="corpus:tls", sessions=1, depth=1, auto_depth=True, output="json",
                          kind="sequential", workers=1))
    # A: send | receive, send | receive;  B: receive, send | receive, send
    assert json.loads(js)["config"]["depth"] == 5


def test_single_request_single_row(tmp_path):
    path = tmp_path / "stats.csv"
    m = BenchMatrix([req(stats_csv=str(path))], 1, stats_csv=str(path))
    run_bench(m)
    lines = path.read_text().splitlines()
    assert lines[0] == CSV_HEADER
    assert len(lines) == 2


def test_csv_rows_parse_back(tmp_path):
    path = tmp_path / "stats.csv"
    reqs = [req(kind=k, workers=w, depth=5) for k in ("sequential", "chunk-subtrees")
            for w in (1, 3)]
    run_bench(BenchMatrix(reqs, 2, stats_csv=str(path)))
    rows = list(csv.DictReader(path.open()))
    assert len(rows) == 8
    for r, row in zip([r for r in reqs for _ in range(2)], rows):
        assert row["protocol"] == "sso_flawed"
        assert int(row["sessions"]) == r.sessions and int(row["depth"]) == r.depth
        assert row["strategy"] == r.strategy.kind and int(row["workers"]) == r.strategy.workers
        assert float(row["wall_s"]) > 0 and row["verdict"] == "no-attack-within-depth"
    assert [row["rep"] for row in rows] == ["1", "2"] * 4


def test_error_rows_keep_the_matrix_going(tmp_path):
    path = tmp_path / "stats.csv"
    reqs = [req(path=str(tmp_path / "missing.AnB")), req(depth=3)]
    outs = run_bench(BenchMatrix(reqs, 1, stats_csv=str(path)))
    rows = list(csv.DictReader(path.open()))
    assert [r["verdict"] for r in rows] == ["error", "no-attack-within-depth"]
    assert outs[0].exit_code == EXIT_ERROR


def test_bench_matrix_validation():
    with pytest.raises(UsageError):
        BenchMatrix([], 1)
    with pytest.raises(UsageError):
        BenchMatrix([req()], 0)


def test_bench_command_line(tmp_path, capsys):
    path = tmp_path / "b.csv"
    code = main(["bench", "corpus:tls", "--sessions", "1", "--depth", "2,3", "--strategy",
                 "seq,ebuffer", "--workers", "1,2", "--stats-csv", str(path)])
    assert code == EXIT_OK
    rows = list(csv.DictReader(path.open()))
    assert len(rows) == 8
    assert {r["strategy"] for r in rows} == {"sequential", "enhanced-buffer"}


def test_deterministic_runs_repeat_exactly():
    docs = []
    for _ in range(3):
        _, _, js, _ = run(req(kind="hybrid-subtrees", workers=4, output="json"))
        docs.append(json.loads(js))
    assert len({d["trace"] for d in docs}) == 1
    assert len({d["verdict"] for d in docs}) == 1


def test_console_script():
    exe = shutil.which("pfmc")
    cmd = [exe] if exe else [sys.executable, "-m", "pfmc.cli_bench"]
    out = subprocess.run(cmd + ["corpus:kerberos", "--sessions", "1", "--depth", "2",
                                "--workers", "1"], capture_output=True, text=True)
    assert out.returncode == EXIT_OK
    assert "no attack within depth 2" in out.stdout
