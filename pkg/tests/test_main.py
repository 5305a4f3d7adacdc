#!/usr/bin/env python3
"""
Tests for the simulate / fit / bench command line
"""

import os
import sys
import tempfile
from unittest.mock import patch

import pandas as pd
from dotenv import load_dotenv

# Add the parent directory to Python path to allow imports
sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), '..'))

# Load environment variables
load_dotenv()

from src import main as cli  # noqa: E402
from src.errors import ReplicationFailureError  # noqa: E402


def test_preset_and_overrides():
    parser = cli.build_parser()
    bench = cli.bench_config_from_args(parser.parse_args(["bench", "--preset", "het500", "--reps", "5"]))
    assert (bench.generator, bench.n, bench.d, bench.replications) == ("HET", 500, 100, 5)
    assert "ols" not in bench.methods and "ipw" in bench.methods

    bench = cli.bench_config_from_args(parser.parse_args(
        ["bench", "--preset", "hom1000", "--n", "200", "--methods", "gp, ols", "--target", "CATE", "--nu", "0.01"]))
    assert (bench.generator, bench.n) == ("HOM", 200)
    assert bench.methods == ("gp", "ols") and bench.resolved_target == "CATE" and bench.nu_override == 0.01
    print("✓ Presets fill defaults and explicit flags win")


def test_bench_file_with_custom_columns():
    with tempfile.TemporaryDirectory() as tmp:
        code = cli.main(["simulate", "--generator", "HOM", "--n", "100", "--d", "5", "--seed", "1", "--out", tmp])
        assert code == cli.EXIT_OK
        path = os.path.join(tmp, "renamed.csv")
        frame = pd.read_csv(os.path.join(tmp, "HOM_n100_seed1.csv"))
        frame.rename(columns={"r": "treat", "y": "outcome"}).to_csv(path, index=False)

        out_dir = os.path.join(tmp, "bench")
        code = cli.main(["bench", "--generator", "file", "--data", path, "--truth", "1.0",
                         "--treatment-col", "treat", "--outcome-col", "outcome", "--methods", "ipw",
                         "--reps", "1", "--workers", "1", "--out", out_dir, "--log-level", "WARNING"])
        assert code == cli.EXIT_OK
        summary = pd.read_csv(os.path.join(out_dir, "summary.csv"))
        table = open(os.path.join(out_dir, "summary.txt"), encoding="utf-8").read()
    assert summary["completed"].iloc[0] == 1
    assert "n=100 d=5" in table
    print("✓ bench reads a file dataset through --treatment-col and --outcome-col")


def test_simulate_then_fit():
    with tempfile.TemporaryDirectory() as tmp:
        code = cli.main(["simulate", "--generator", "HOM", "--n", "100", "--d", "6", "--seed", "3", "--out", tmp])
        assert code == cli.EXIT_OK
        path = os.path.join(tmp, "HOM_n100_seed3.csv")
        frame = pd.read_csv(path)
        assert list(frame.columns) == [f"x{j}" for j in range(1, 7)] + ["r", "y"] and len(frame) == 100

        out_dir = os.path.join(tmp, "ipw")
        code = cli.main(["fit", path, "--method", "ipw", "--out", out_dir, "--log-level", "WARNING"])
        assert code == cli.EXIT_OK
        assert os.path.isfile(os.path.join(out_dir, "estimate.csv"))
    print("✓ simulate writes a CSV that fit accepts")


def test_validation_errors_exit_one():
    with tempfile.TemporaryDirectory() as tmp:
        assert cli.main(["fit", os.path.join(tmp, "missing.csv"), "--out", tmp]) == cli.EXIT_ERROR
        assert cli.main(["bench", "--generator", "IHDP-B", "--out", tmp]) == cli.EXIT_ERROR
        assert cli.main(["bench", "--preset", "het500", "--reps", "0", "--out", tmp]) == cli.EXIT_ERROR
        assert cli.main(["simulate", "--generator", "IHDP-B", "--out", tmp]) == cli.EXIT_ERROR
    print("✓ Missing files and invalid configurations exit with code 1")


def test_replication_failure_exit_two():
    with tempfile.TemporaryDirectory() as tmp:
        failure = ReplicationFailureError("too many failed replications: gp 3/10", failures={"gp": 3})
        with patch("src.main.run_replications", side_effect=failure) as mock_run:
            code = cli.main(["bench", "--preset", "hom500", "--reps", "10", "--out", tmp])
        assert mock_run.called
    assert code == cli.EXIT_REPLICATION_FAILURE
    print("✓ Excess replication failures exit with code 2")


def test_small_bench_run():
    with tempfile.TemporaryDirectory() as tmp:
        code = cli.main(["bench", "--generator", "HET", "--n", "100", "--d", "5", "--reps", "2",
                         "--methods", "ipw", "--workers", "1", "--out", tmp])
        assert code == cli.EXIT_OK
        summary = pd.read_csv(os.path.join(tmp, "summary.csv"))
    assert summary["method"].tolist() == ["ipw"] and summary["completed"].iloc[0] == 2
    print("✓ bench writes the summary CSV")


def main():
    """Run all command line tests"""
    print("Running Command Line Tests\n")

    tests = [
        ("Preset And Overrides", test_preset_and_overrides),
        ("Simulate Then Fit", test_simulate_then_fit),
        ("Bench File With Custom Columns", test_bench_file_with_custom_columns),
        ("Validation Errors", test_validation_errors_exit_one),
        ("Replication Failure", test_replication_failure_exit_two),
        ("Small Bench Run", test_small_bench_run),
    ]

    passed = 0
    total = len(tests)

    for test_name, test_func in tests:
        print(f"\n{test_name}:")
        try:
            test_func()
            passed += 1
        except Exception as e:
            print(f"✗ {test_name} failed: {e}")

    print(f"\n\nCommand Line Test Results: {passed}/{total} tests passed")

    if passed == total:
        print("🎉 All command line tests passed!")
        return 0
    else:
        print("❌ Some command line tests failed!")
        return 1


if __name__ == "__main__":
    sys.exit(main())
