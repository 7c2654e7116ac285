import json
import os

import pytest

from teachcut.cli import main


def run(argv):
    return main(argv)


def expect_usage_exit(argv):
    with pytest.raises(SystemExit) as excinfo:
        main(argv)
    assert excinfo.value.code == 1


@pytest.fixture()
def dataset(tmp_path):
    path = str(tmp_path / "data.jsonl")
    assert run(["simulate", "--out", path, "--rollouts", "4", "--tau", "3",
                "--noise", "0.1", "--seed", "1"]) == 0
    return path


def test_end_to_end_chain(tmp_path, dataset, capsys):
    assert os.path.isfile(str(tmp_path / "ground_truth.jsonl"))
    released = str(tmp_path / "released.jsonl")
    assert run(["release", "--in", dataset, "--out", released]) == 0
    first = json.loads(open(released, "rb").readline())
    assert first["release"]["accepted"] is True
    assert first["release"]["release_segment"] == 3

    permuted = str(tmp_path / "permuted.jsonl")
    assert run(["permute", "--in", released, "--out", permuted,
                "--seed", "2"]) == 0

    diag = str(tmp_path / "diag")
    assert run(["diagnose", "--in", dataset, "--out", diag]) == 0
    for name in ("bins.csv", "margin_bins.csv", "summary.csv"):
        assert os.path.isfile(os.path.join(diag, name))

    err = capsys.readouterr().err
    assert "release: 4 records, 4 accepted, 0 errors" in err
    assert "permute: 4 records" in err
    assert "diagnose: wrote" in err


def test_snr_stdout_format(capsys):
    assert run(["snr", "--m-prefix", "1", "--v-prefix", "1",
                "--m-suffix", "0", "--v-suffix", "1"]) == 0
    assert capsys.readouterr().out == ("improves=True snr_release=1.0 "
                                       "snr_full=0.5\n")
    assert run(["snr", "--m-prefix", "1", "--v-prefix", "1",
                "--m-suffix", "1", "--v-suffix", "1"]) == 0
    assert capsys.readouterr().out == ("improves=False snr_release=1.0 "
                                       "snr_full=2.0\n")


def test_snr_rejects_bad_moments():
    expect_usage_exit(["snr", "--m-prefix", "1", "--v-prefix", "0",
                       "--m-suffix", "0", "--v-suffix", "1"])


def test_fixed_strategy_forms(tmp_path, dataset):
    out = str(tmp_path / "out.jsonl")
    assert run(["release", "--in", dataset, "--out", out,
                "--strategy", "fixed:5"]) == 0
    mask = json.loads(open(out, "rb").readline())["release"]["prefix_mask"]
    assert sum(mask) == 5.0

    assert run(["release", "--in", dataset, "--out", out,
                "--strategy", "fixed", "--prefix-tokens", "7"]) == 0
    mask = json.loads(open(out, "rb").readline())["release"]["prefix_mask"]
    assert sum(mask) == 7.0

    # matching forms may be combined; everything else is a usage error
    assert run(["release", "--in", dataset, "--out", out,
                "--strategy", "fixed:5", "--prefix-tokens", "5"]) == 0
    expect_usage_exit(["release", "--in", dataset, "--out", out,
                       "--strategy", "fixed"])
    expect_usage_exit(["release", "--in", dataset, "--out", out,
                       "--strategy", "fixed:abc"])
    expect_usage_exit(["release", "--in", dataset, "--out", out,
                       "--strategy", "fixed:0"])
    expect_usage_exit(["release", "--in", dataset, "--out", out,
                       "--strategy", "fixed:5", "--prefix-tokens", "4"])
    expect_usage_exit(["release", "--in", dataset, "--out", out,
                       "--strategy", "bic", "--prefix-tokens", "4"])


def test_unknown_strategy_exits_one(tmp_path, dataset, capsys):
    expect_usage_exit(["release", "--in", dataset,
                       "--out", str(tmp_path / "o.jsonl"),
                       "--strategy", "banana"])
    assert "unknown strategy" in capsys.readouterr().err


def test_missing_input_file(tmp_path, capsys):
    expect_usage_exit(["release", "--in", str(tmp_path / "absent.jsonl"),
                       "--out", str(tmp_path / "o.jsonl")])
    assert "input file not found" in capsys.readouterr().err


def test_missing_required_flag(dataset):
    expect_usage_exit(["release", "--in", dataset])
    expect_usage_exit(["diagnose", "--in", dataset])
    expect_usage_exit([])


def test_bad_jobs_value_exits_one(tmp_path, dataset):
    expect_usage_exit(["release", "--in", dataset,
                       "--out", str(tmp_path / "o.jsonl"), "--jobs", "0"])


def test_strict_bad_data_exits_two(tmp_path, capsys):
    src = tmp_path / "bad.jsonl"
    src.write_bytes(b"junk\n")
    code = run(["release", "--in", str(src),
                "--out", str(tmp_path / "o.jsonl"), "--strict"])
    assert code == 2
    assert "teachcut: error:" in capsys.readouterr().err


def test_failsoft_bad_data_exits_zero(tmp_path, capsys):
    src = tmp_path / "bad.jsonl"
    src.write_bytes(b"junk\n")
    assert run(["release", "--in", str(src),
                "--out", str(tmp_path / "o.jsonl")]) == 0
    assert "0 records, 0 accepted, 1 errors" in capsys.readouterr().err


def test_simulate_validation(tmp_path):
    out = str(tmp_path / "d.jsonl")
    expect_usage_exit(["simulate", "--out", out, "--n", "6", "--tau", "6"])
    expect_usage_exit(["simulate", "--out", out, "--rollouts", "0"])
    expect_usage_exit(["simulate", "--out", out, "--noise", "-1"])


def test_diagnose_empty_input_reports(tmp_path, capsys):
    src = tmp_path / "empty.jsonl"
    src.write_bytes(b"")
    assert run(["diagnose", "--in", str(src),
                "--out", str(tmp_path / "d")]) == 0
    assert "nothing written" in capsys.readouterr().err


def test_log_env_levels(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("TEACHCUT_LOG", "DEBUG")
    assert run(["snr", "--m-prefix", "1", "--v-prefix", "1",
                "--m-suffix", "0", "--v-suffix", "0"]) == 0
    monkeypatch.setenv("TEACHCUT_LOG", "not-a-level")
    assert run(["snr", "--m-prefix", "1", "--v-prefix", "1",
                "--m-suffix", "0", "--v-suffix", "0"]) == 0


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["--help"])
    assert excinfo.value.code == 0
    out = capsys.readouterr().out
    for name in ("release", "diagnose", "permute", "simulate", "snr"):
        assert name in out
