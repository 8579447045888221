import subprocess
import sys
from pathlib import Path

import pytest

from ccnstream import cli
from ccnstream.fabric import read_trace, write_trace
from ccnstream.scenarios import SCENARIOS, Flags, run_scenario

GOLDEN = Path(__file__).parent / "golden"
GOLDEN_IDS = sorted(p.name.split(".")[0] for p in GOLDEN.glob("*.seed7.jsonl"))


def test_every_scenario_except_loss_stress_has_a_golden():
    assert GOLDEN_IDS == sorted(set(SCENARIOS) - {"loss-stress"})


@pytest.mark.parametrize("sid", GOLDEN_IDS)
def test_run_matches_golden(sid, tmp_path, capsys):
    out = tmp_path / "t.jsonl"
    rc = cli.main(["run", sid, "--seed", "7", "--trace", str(out),
                   "--golden", str(GOLDEN / f"{sid}.seed7.jsonl")])
    text = capsys.readouterr().out
    assert rc == 0, text
    assert "FAIL" not in text
    assert out.read_bytes() == (GOLDEN / f"{sid}.seed7.jsonl").read_bytes()


@pytest.mark.parametrize("sid", sorted(SCENARIOS))
def test_real_crypto_scenarios_pass(sid):
    assert run_scenario(sid, Flags(seed=7, crypto="real")).passed


@pytest.mark.parametrize("sid", GOLDEN_IDS)
def test_real_crypto_matches_golden_shape(sid, tmp_path, capsys):
    out = tmp_path / "real.jsonl"
    assert cli.main(["run", sid, "--seed", "7", "--crypto", "real", "-q", "--trace", str(out)]) == 0
    golden = GOLDEN / f"{sid}.seed7.jsonl"
    assert cli.main(["check", str(out), str(golden), "--crypto", "real"]) == 0


def test_check_reports_first_divergence(tmp_path, capsys):
    golden = GOLDEN / "basic.seed7.jsonl"
    records = read_trace(golden)
    tampered = tmp_path / "bad.jsonl"
    write_trace(records[:5] + [records[6]] + records[6:], tampered)
    assert cli.main(["check", str(tampered), str(golden)]) == 1
    assert "first divergence at line 6" in capsys.readouterr().out

    short = tmp_path / "short.jsonl"
    write_trace(records[:-1], short)
    assert cli.main(["check", str(short), str(golden)]) == 1
    assert f"line {len(records)}" in capsys.readouterr().out


def test_different_seed_diverges(capsys):
    rc = cli.main(["run", "basic", "--seed", "8", "-q", "--golden", str(GOLDEN / "basic.seed7.jsonl")])
    assert rc == 1
    assert "first divergence" in capsys.readouterr().out


def test_check_missing_or_corrupt_file_is_a_usage_error(tmp_path):
    golden = str(GOLDEN / "basic.seed7.jsonl")
    assert cli.main(["check", str(tmp_path / "nope"), golden]) == 2
    junk = tmp_path / "junk.jsonl"
    junk.write_text("{not json\n")
    assert cli.main(["check", str(junk), golden, "--crypto", "real"]) == 2


@pytest.mark.parametrize("argv", [
    ["run", "no-such-scenario"],
    ["run", "basic", "--window", "0"],
    ["run", "basic", "--drop-rate", "1.5"],
    ["run", "basic", "--crypto", "rsa"],
    [],
])
def test_usage_errors_exit_2(argv):
    with pytest.raises(SystemExit) as e:
        cli.main(argv)
    assert e.value.code == 2


def test_time_limit_is_a_failure(capsys):
    assert cli.main(["run", "loss-stress", "--max-time", "100", "-q"]) == 1
    assert "FAIL" in capsys.readouterr().err


def test_failed_expectation_exits_1(capsys):
    # With every link dead, the Open can never be answered.
    assert cli.main(["run", "basic", "--drop-rate", "1.0"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_list(capsys):
    assert cli.main(["list"]) == 0
    out = capsys.readouterr().out
    for sid in SCENARIOS:
        assert sid in out


def test_module_entry_point():
    done = subprocess.run([sys.executable, "-m", "ccnstream", "run", "auth-reject", "-q"],
                          capture_output=True, text=True)
    assert done.returncode == 0, done.stderr
    assert "auth-reject: ok" in done.stdout
