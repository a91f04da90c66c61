from __future__ import annotations

import csv
import io
import json
import math
import pathlib
import subprocess
import sys

import pytest

from diffwave_inverse.cli import main
from diffwave_inverse.inverse import ReconstructionRun
from diffwave_inverse.mlf import mittag_leffler


def test_mlf_table(capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["mlf-table", "--alpha", "1.5", "--beta", "1", "--xmin", "0.01",
                 "--xmax", "100", "-n", "5"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["z", "value"]
    assert len(rows) == 6
    z, value = float(rows[3][0]), float(rows[3][1])
    assert z == pytest.approx(-1.0)
    assert value == mittag_leffler(z, 1.5, 1.0)


def test_forward(tmp_path: pathlib.Path) -> None:
    out = tmp_path / "u.csv"
    assert main(["forward", "--example", "ex1", "--t", "0.5", "--K", "16", "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["index", "x", "value"] and len(rows) == 16

    assert main(["forward", "--example", "ex3", "--t", "0.5", "--K", "8",
                 "--variant", "lumped", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 1 + 49


def test_invert(capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["invert", "--example", "ex1", "--eps", "0.001", "--seed", "2"]) == 0
    payload = json.loads(capsys.readouterr().out)
    problem = payload.pop("problem")
    run = ReconstructionRun.from_dict(payload)
    assert problem["K"] == 102 and problem["seed"] == 2
    assert problem["delta"] > 0 and 0 < problem["re_a"] < 1
    assert run.config.mu == pytest.approx(0.2 * problem["delta"] ** (2 / 3))
    assert run.config.mode == "auto"

    assert main(["invert", "--eps", "0.001", "--auto-mu", "--p", "1", "--c", "0.5",
                 "--mode", "solve", "--variant", "lumped", "--K", "32"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["config"]["mu"] == pytest.approx(0.5 * payload["problem"]["delta"] ** 0.5)
    assert payload["problem"]["variant"] == "lumped" and payload["iterations_used"] == 0


def test_invert_reports_library_errors(capsys: pytest.CaptureFixture[str]) -> None:
    with pytest.raises(SystemExit) as info:
        main(["invert", "--eps", "0.001", "--mode", "iterate", "--mu", "1e-3"])
    assert info.value.code == 2
    assert capsys.readouterr().err.startswith("error: 1 mode(s) have |r^mu| >= 1")


def test_bench_run_is_deterministic(tmp_path: pathlib.Path,
                                    capsys: pytest.CaptureFixture[str]) -> None:
    args = ["bench", "run", "--example", "ex2", "--eps", "0.001,0.01", "--seeds", "3",
            "--no-timings", "--threads", "2"]
    assert main(args + ["--out", str(tmp_path / "a"), "--fields"]) == 0
    first = capsys.readouterr().out
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert capsys.readouterr().out == first

    a = (tmp_path / "a" / "ex2_galerkin.csv").read_bytes()
    b = (tmp_path / "b" / "ex2_galerkin.csv").read_bytes()
    assert a == b
    assert (tmp_path / "a" / "ex2_galerkin.json").exists()
    assert (tmp_path / "a" / "ex2_galerkin_1_f.csv").exists()
    assert len(a.decode().splitlines()) == 3


def test_bench_config_file_and_flag_precedence(tmp_path: pathlib.Path,
                                               capsys: pytest.CaptureFixture[str]) -> None:
    config = tmp_path / "bench.yaml"
    config.write_text(
        "example: ex1\n"
        "eps: [0.001, 0.01]\n"
        "seeds: 2\n"
        "variant: lumped\n"
        f"out: {tmp_path / 'from_config'}\n"
        "name: cfg\n"
        "mu-c: 0.3\n"
    )
    assert main(["bench", "run", "--config", str(config), "--eps", "0.005", "--no-timings"]) == 0
    rows = list(csv.DictReader((tmp_path / "from_config" / "cfg.csv").open()))
    assert [float(r["eps"]) for r in rows] == [0.005]

    spec = json.loads((tmp_path / "from_config" / "cfg.json").read_text())["spec"]
    assert spec["variant"] == "lumped"
    assert spec["seeds"] == [0, 1]
    assert spec["mu_rule"] == [0.3, pytest.approx(2 / 3)]
    capsys.readouterr()


def test_bench_sweeps(tmp_path: pathlib.Path, capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["bench", "sweep-alpha", "--alphas", "1.1,1.2", "--seeds", "1", "--K", "8",
                 "--out", str(tmp_path), "--no-timings"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("alpha,eps,delta") and len(lines) == 3

    assert main(["bench", "sweep-t2", "--t2-list", "1,5", "--seeds", "1", "--K", "8",
                 "--out", str(tmp_path), "--no-timings"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("T2,eps") and [ln.split(",")[0] for ln in lines[1:]] == ["1.0", "5.0"]
    assert (tmp_path / "ex3_T2_sweep.csv").exists()


def test_sweep_t2_failure_row(tmp_path: pathlib.Path, capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["bench", "sweep-t2", "--t2-list", "1,2", "--T1", "1", "--seeds", "1",
                 "--K", "8", "--out", str(tmp_path), "--no-timings"]) == 0
    rows = capsys.readouterr().out.strip().splitlines()[1:]
    assert math.isnan(float(rows[0].split(",")[3]))
    payload = json.loads((tmp_path / "ex3_T2_sweep.json").read_text())
    assert "ContractionError" in payload["rows"][0]["error"]


def test_reproduce_all_tables(tmp_path: pathlib.Path, capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["bench", "reproduce-paper", "--seeds", "2", "--out", str(tmp_path),
                 "--no-timings"]) == 0
    out = capsys.readouterr().out
    assert out.count("table1 eps=") == 4 and out.count("table5 T2=") == 5
    for name in ("table1", "table2", "table3", "table4", "table5"):
        assert (tmp_path / f"{name}.csv").exists() and (tmp_path / f"{name}.json").exists()
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert set(summary) == {"table1", "table2", "table3", "table4", "table5"}


def test_module_entry_point() -> None:
    result = subprocess.run([sys.executable, "-m", "diffwave_inverse", "--help"],
                            capture_output=True, text=True, check=True)
    assert "mlf-table" in result.stdout and "bench" in result.stdout
