"""Command-line interface: subcommands, delegation, exit codes."""

import json

import pandas as pd
import pytest

from session_miner.cli import main
from session_miner.canonlog import parse_log
from session_miner.sessionize import threshold_sweep

pytestmark = pytest.mark.usefixtures("no_env_config")


@pytest.fixture
def no_env_config(monkeypatch):
    monkeypatch.delenv("SESSION_MINER_CONFIG", raising=False)


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli-cohort")
    code = main(
        [
            "synth",
            "--set", "n_classes=2",
            "--set", "students_per_class=8",
            "--set", "months=2",
            "--set", "sessions_per_month=3",
            "--seed", "5",
            "--out-dir", str(d),
        ]
    )
    assert code == 0
    return d


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exit_info:
        main(["--version"])
    assert exit_info.value.code == 0
    assert "session-miner" in capsys.readouterr().out


def test_synth_spec_file_and_overrides(tmp_path, capsys):
    spec = tmp_path / "cohort.spec"
    spec.write_text("n_classes = 1\nstudents_per_class = 6\nmonths = 1\nsessions_per_month = 2\n")
    code = main(
        ["synth", "--spec", str(spec), "--set", "students_per_class=7",
         "--seed", "3", "--out-dir", str(tmp_path / "d"), "--stem", "tiny"]
    )
    assert code == 0
    truth = json.loads((tmp_path / "d" / "tiny_ground_truth.json").read_text())
    assert truth["spec"]["n_classes"] == 1
    assert truth["spec"]["students_per_class"] == 7  # --set beats the file
    assert truth["spec"]["seed"] == 3


def test_parse_writes_canonical(data_dir, tmp_path):
    out = tmp_path / "canonical.csv"
    code = main(["parse", str(data_dir / "cohort_log.csv"), "--out", str(out)])
    assert code == 0
    round_trip = parse_log(str(out)).transactions
    direct = parse_log(str(data_dir / "cohort_log.csv")).transactions
    pd.testing.assert_frame_equal(round_trip, direct)


def test_sessions_subcommand(data_dir, tmp_path):
    out = tmp_path / "sessions.csv"
    assert main(["sessions", str(data_dir / "cohort_log.csv"), "--out", str(out)]) == 0
    sessions = pd.read_csv(out)
    assert len(sessions) == 12  # 2 classes x 2 months x 3 sessions
    assert (sessions["kind"] == "classwork").all()


def test_sweep_delegation_identity(data_dir, tmp_path):
    out = tmp_path / "sweep.csv"
    fig = tmp_path / "sweep.png"
    code = main(
        ["sweep", str(data_dir / "cohort_log.csv"), "--out", str(out), "--fig", str(fig)]
    )
    assert code == 0
    tx = parse_log(str(data_dir / "cohort_log.csv")).transactions
    expected = threshold_sweep(tx, timezone="UTC").to_csv(index=False)
    assert out.read_text() == expected  # byte-for-byte delegation
    assert fig.exists() and fig.stat().st_size > 0


def test_sweep_single_threshold(data_dir, tmp_path):
    out = tmp_path / "one.csv"
    code = main(
        ["sweep", str(data_dir / "cohort_log.csv"), "--thresholds", "7.5", "--out", str(out)]
    )
    assert code == 0
    sweep = pd.read_csv(out)
    assert len(sweep) == 1
    assert sweep.iloc[0]["threshold"] == 7.5


def test_measures_and_reliability_chain(data_dir, tmp_path):
    panel_path = tmp_path / "panel.csv"
    slices_path = tmp_path / "slices.csv"
    code = main(
        ["measures", str(data_dir / "cohort_log.csv"),
         "--panel", str(panel_path), "--slices", str(slices_path)]
    )
    assert code == 0
    assert len(pd.read_csv(slices_path)) == 12 * 8  # every member in every session

    out = tmp_path / "reliability.csv"
    assert main(["reliability", "--panel", str(panel_path), "--out", str(out)]) == 0
    rel = pd.read_csv(out)
    assert "delayed_start" in set(rel["measure"])


def test_gaming_subcommand(data_dir, tmp_path):
    labels = tmp_path / "labels.csv"
    tendency = tmp_path / "tendency.csv"
    code = main(
        ["gaming", str(data_dir / "cohort_log.csv"),
         "--labels", str(labels), "--tendency", str(tendency)]
    )
    assert code == 0
    got = pd.read_csv(labels)
    assert {"class_id", "session_index", "student_id", "problem_id", "gamed"} <= set(got.columns)
    assert len(pd.read_csv(tendency)) == 16


def test_gaming_custom_rules(data_dir, tmp_path):
    rules = tmp_path / "rules.txt"
    rules.write_text("# flag every encounter that opens with any event\nposition == 0\n")
    labels = tmp_path / "labels.csv"
    code = main(
        ["gaming", str(data_dir / "cohort_log.csv"), "--rules", str(rules),
         "--labels", str(labels)]
    )
    assert code == 0
    got = pd.read_csv(labels)
    assert got["gamed"].all()  # position 0 exists in every encounter


def test_validity_and_stepwise_subcommands(data_dir, tmp_path):
    panel_path = tmp_path / "panel.csv"
    main(["measures", str(data_dir / "cohort_log.csv"), "--panel", str(panel_path)])
    validity_path = tmp_path / "validity.csv"
    code = main(
        ["validity", "--panel", str(panel_path),
         "--outcomes", str(data_dir / "cohort_outcomes.csv"), "--out", str(validity_path)]
    )
    assert code == 0
    validity = pd.read_csv(validity_path)
    assert validity.iloc[0]["model"] == "baseline"

    step_path = tmp_path / "stepwise.json"
    code = main(
        ["stepwise", "--panel", str(panel_path),
         "--outcomes", str(data_dir / "cohort_outcomes.csv"), "--out", str(step_path)]
    )
    assert code == 0
    report = json.loads(step_path.read_text())
    assert report["outcome"] == "final_score"


def test_run_subcommand_and_config_file(data_dir, tmp_path):
    conf = tmp_path / "miner.conf"
    conf.write_text("gap_threshold_mins = 7.5\nfigures = false\n")
    code = main(
        ["run", str(data_dir / "cohort_log.csv"),
         "--outcomes", str(data_dir / "cohort_outcomes.csv"),
         "--config", str(conf), "--out-dir", str(tmp_path / "report")]
    )
    assert code == 0
    manifest = json.loads((tmp_path / "report" / "manifest.json").read_text())
    assert manifest["config"]["figures"] is False
    assert not (tmp_path / "report" / "figures").exists()


def test_env_var_config(data_dir, tmp_path, monkeypatch):
    conf = tmp_path / "env.conf"
    conf.write_text("min_active_students = 99\nfigures = false\n")
    monkeypatch.setenv("SESSION_MINER_CONFIG", str(conf))
    code = main(["run", str(data_dir / "cohort_log.csv"), "--out-dir", str(tmp_path / "r")])
    assert code == 0
    sessions = pd.read_csv(tmp_path / "r" / "sessions.csv")
    assert (sessions["kind"] != "classwork").all()  # nobody reaches 99 students


def test_exit_code_unknown_adapter(data_dir, tmp_path, capsys):
    code = main(
        ["parse", str(data_dir / "cohort_log.csv"), "--adapter", "mystery",
         "--out", str(tmp_path / "x.csv")]
    )
    assert code == 2  # rejected by config validation before parsing
    assert "adapter" in capsys.readouterr().err


def test_exit_code_bad_config_key(data_dir, tmp_path, capsys):
    code = main(
        ["run", str(data_dir / "cohort_log.csv"), "--set", "warp_speed=9",
         "--out-dir", str(tmp_path / "r")]
    )
    assert code == 2
    assert "warp_speed" in capsys.readouterr().err


def test_exit_code_missing_file(tmp_path, capsys):
    code = main(["parse", str(tmp_path / "ghost.csv"), "--out", str(tmp_path / "x.csv")])
    assert code == 6
    assert "ghost" in capsys.readouterr().err


def test_exit_code_malformed_log(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("alpha,beta\n1,2\n")
    code = main(["parse", str(bad), "--out", str(tmp_path / "x.csv")])
    assert code == 3
    assert "bad.csv" in capsys.readouterr().err


def test_exit_code_bad_rules(data_dir, tmp_path, capsys):
    rules = tmp_path / "rules.txt"
    rules.write_text("sparkle == 3\n")
    code = main(
        ["gaming", str(data_dir / "cohort_log.csv"), "--rules", str(rules),
         "--labels", str(tmp_path / "l.csv")]
    )
    assert code == 2
    assert "sparkle" in capsys.readouterr().err


def test_exit_code_invalid_synth_spec(tmp_path, capsys):
    code = main(["synth", "--set", "n_classes=0", "--out-dir", str(tmp_path / "d")])
    assert code == 2
