import json
import math

import pytest

from app.core.errors import UsageError
from app.cli import commands
from app.cli.commands import db_to_linear, linear_to_db, parse_grid, run
from app.cli.output import format_scaled, to_csv

SMALL = ["--nt", "2", "--nr", "2", "--lambdas", "1,2"]


def test_hkn_quadrature(capsys):
    assert run(["hkn", "--k", "2", "--n", "3", "--x", "5", "--lambda", "5", "--method", "quad"]) == 0
    header, row = capsys.readouterr().out.strip().splitlines()
    assert header == "k,n,x,lambda,value,method,terms_or_steps,rel_err,wall_ms"
    assert ",quadrature," in row


def test_hkn_series_stall_is_reported(capsys):
    code = run(["hkn", "--k", "2", "--n", "3", "--x", "30", "--lambda", "30"])
    assert code == 4
    assert "code=no-convergence" in capsys.readouterr().err


def test_hkn_at_zero(capsys):
    assert run(["hkn", "--k", "0", "--n", "1", "--x", "0", "--lambda", "3"]) == 0
    assert "0.000000000e+00" in capsys.readouterr().out


def test_hkn_beyond_double_range(capsys):
    assert run(["hkn", "--k", "0", "--n", "1", "--x", "1e6", "--lambda", "1e6", "--method", "quadrature"]) == 0
    value = capsys.readouterr().out.strip().splitlines()[1].split(",")[4]
    assert int(value.split("e")[1]) > 300


def test_model_errors_exit_three(capsys):
    assert run(["cdf", "--nt", "2", "--nr", "2", "--lambdas", "1,1", "--x", "1"]) == 3
    assert "code=invalid-model" in capsys.readouterr().err
    assert run(["cdf", "--nt", "3", "--nr", "2", "--lambdas", "1,2,3", "--x", "1"]) == 3


def test_usage_errors_exit_two(capsys):
    assert run(["cdf", "--bogus"]) == 2
    assert run(["cdf"] + SMALL) == 2
    assert "code=usage" in capsys.readouterr().err


def test_cdf_csv_is_byte_stable(capsys):
    argv = ["cdf"] + SMALL + ["--x", "1,3,6", "--no-timing"]
    assert run(argv) == 0
    first = capsys.readouterr().out
    assert run(argv) == 0
    assert capsys.readouterr().out == first
    lines = first.strip().splitlines()
    assert lines[0] == "x,cdf,abs_err,method,wall_ms"
    assert len(lines) == 4
    assert all(line.endswith(",hgm,0") for line in lines[1:])


def test_cdf_json(capsys):
    assert run(["cdf"] + SMALL + ["--log10-x", "0,0.5", "--out", "json", "--method", "series"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["meta"]["lambdas"] == [1.0, 2.0]
    assert [r["method"] for r in doc["rows"]] == ["series", "series"]
    assert 0.0 < doc["rows"][0]["cdf"] < doc["rows"][1]["cdf"] < 1.0


def test_outage_with_plot_script(tmp_path):
    out, plot = tmp_path / "outage.csv", tmp_path / "outage.gp"
    argv = ["outage", "--nt", "2", "--nr", "2", "--shape", "1,2", "--k-db", "5",
            "--gamma-b-db-grid", "0:20:5", "--out-file", str(out), "--emit-plot", str(plot)]
    assert run(argv) == 0
    rows = out.read_text().strip().splitlines()
    assert rows[0] == "gamma_b_db,x,outage,abs_err"
    outage = [float(r.split(",")[2]) for r in rows[1:]]
    assert all(b <= a + 1e-10 for a, b in zip(outage, outage[1:]))
    script = plot.read_text()
    assert "set logscale y" in script
    assert f"plot '{out}'" in script


def test_config_file_presets_flags(tmp_path, capsys):
    cfg = tmp_path / "run.env"
    cfg.write_text("nt=2\nnr=2\nlambdas=1,2\nx=3\nno-timing=true\n")
    assert run(["cdf", "--config", str(cfg)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 2
    assert lines[1].endswith(",0")

    cfg.write_text("unknown_flag=1\n")
    assert run(["cdf", "--config", str(cfg)]) == 2


def test_validate_small_case(capsys):
    argv = ["validate"] + SMALL + ["--x", "3", "--samples", "20000", "--method", "quadrature", "--threads", "1"]
    assert run(argv) == 0
    header = capsys.readouterr().out.splitlines()[0]
    assert header == "x,analytic,abs_err,mc,std_err,z"


def test_helpers():
    assert db_to_linear(10.0) == pytest.approx(10.0)
    assert linear_to_db(100.0) == pytest.approx(20.0)
    assert parse_grid("0:1:3") == [0.0, 0.5, 1.0]
    with pytest.raises(UsageError):
        parse_grid("0:1")
    assert format_scaled(-1, 400.30102999566398) == "-2.000000000e+400"
    assert to_csv([{"a": 1, "b": 0.5}], ["a", "b"]) == "a,b\n1,5.000000000e-01\n"


@pytest.mark.slow
def test_bench_small(tmp_path):
    out = tmp_path / "bench.json"
    assert run(["bench", "--suite", "small", "--out", "json", "--out-file", str(out), "--threads", "1"]) == 0
    doc = json.loads(out.read_text())
    assert {r["status"] for r in doc["rows"]} == {"ok"}
    assert doc["meta"]["numpy"]


def test_validate_is_reproducible(capsys):
    argv = ["validate"] + SMALL + ["--x", "2,4", "--samples", "5000", "--seed", "7", "--threads", "1"]
    assert run(argv) == 0
    first = capsys.readouterr().out
    assert run(argv) == 0
    assert capsys.readouterr().out == first


def test_unexpected_failure_exits_one(monkeypatch, capsys):
    def boom(args):
        raise RuntimeError("boom")

    monkeypatch.setattr(commands, "cmd_cdf", boom)
    assert run(["cdf"] + SMALL + ["--x", "1"]) == 1
    assert "error code=internal exit=1: RuntimeError: boom" in capsys.readouterr().err


@pytest.mark.slow
def test_spread_spectrum_lowers_outage(tmp_path):
    # (5,100) at equal trace 49750: condition number 18.9 against 1.041
    k_db = repr(10 * math.log10(99.5))
    outage = {}
    for name, shape in (("flat", "9750,9850,9950,10050,10150"), ("spread", "1000,5475,9950,14425,18900")):
        out = tmp_path / f"{name}.csv"
        argv = ["outage", "--nt", "5", "--nr", "100", "--shape", shape, "--k-db", k_db,
                "--gamma-b-db-grid=-14:-10:3", "--method", "hgm-enhanced", "--precision-bits", "106",
                "--threads", "1", "--out-file", str(out)]
        assert run(argv) == 0
        outage[name] = [[float(v) for v in r.split(",")] for r in out.read_text().strip().splitlines()[1:]]
    for flat, spread in zip(outage["flat"], outage["spread"]):
        assert flat[1] == pytest.approx(spread[1])
        assert spread[2] <= flat[2] + 3 * (flat[3] + spread[3]) + 1e-12
    assert outage["flat"][1][2] - outage["spread"][1][2] > 0.3
