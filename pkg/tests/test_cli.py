import csv
import io
import json
import subprocess
import sys

import pytest

from critmass.cli import main, parse_sizes
from critmass.errors import ValidationError
from critmass.report import RunConfig, StageError, dumps, emit_plot_data, run_full_analysis


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def error_block(err):
    return json.loads(err.strip().splitlines()[-1])["error"]


@pytest.fixture(scope="module")
def small_report():
    return run_full_analysis(RunConfig(exclusions=("#9",), resamples=400, seed=3))


def test_run_config_invariants():
    with pytest.raises(ValidationError):
        RunConfig(resamples=100, seed=1)
    with pytest.raises(ValidationError):
        RunConfig(seed=1, level=1.0)
    with pytest.raises(ValidationError, match="seed"):
        RunConfig(resamples=500)
    assert RunConfig(resamples=0).seed is None


def test_report_contents(small_report):
    d = json.loads(dumps(small_report.to_dict()))
    assert set(d) == {"config", "dataset", "headline", "fit", "tests", "comparison", "residuals",
                      "leverage_flags"}
    assert d["config"]["seed"] == 3
    assert set(d["tests"]) == {"no_correlation", "equal_slopes", "zero_right_slope", "ks_normality"}
    assert len(d["comparison"]) == 5
    assert d["fit"]["excluded"] == [{"index": 9, "name": "Joint submission: Edinburgh & Heriot-Watt"}]
    assert set(d["fit"]["classification_counts"]) == {"small", "medium", "large"}
    assert len(d["residuals"]["vs_model"]["ranking"]) == 29
    assert len(d["residuals"]["vs_mean_all"]["ranking"]) == 30


def test_ten_significant_digits():
    text = dumps({"x": 1 / 3, "y": float("nan"), "z": [2.0 / 3]})
    assert json.loads(text) == {"x": 0.3333333333, "y": None, "z": [0.6666666667]}


def test_plot_data_shapes(small_report, active):
    rows = list(csv.reader(io.StringIO(emit_plot_data(small_report, "fit"))))
    assert rows[0] == ["N_grid", "prediction", "band_lo", "band_hi"]
    body = [[float(v) for v in r] for r in rows[1:]]
    assert len(body) == 200
    N, _ = active.arrays()
    assert body[0][0] == N.min() and body[-1][0] == N.max()
    assert all(lo <= p <= hi for _, p, lo, hi in body)
    model_rows = list(csv.reader(io.StringIO(emit_plot_data(small_report, "rank-model"))))
    assert model_rows[0] == ["index", "name", "deviation", "excluded_flag"]
    assert len(model_rows) - 1 == 29
    data_rows = list(csv.reader(io.StringIO(emit_plot_data(small_report, "data"))))
    assert len(data_rows) - 1 == 30
    assert [r[-1] for r in data_rows[1:]].count("1") == 1
    with pytest.raises(ValidationError):
        emit_plot_data(small_report, "fig9")


def test_full_data_flags_joint_submission():
    rep = run_full_analysis(RunConfig(resamples=200, seed=1))
    flagged = {f["index"]: f for f in rep.leverage_flags}
    assert 9 in flagged
    assert flagged[9]["largest_group"] and flagged[9]["ratio_to_mean"] > 3


def test_missing_input_exit_2(capsys, tmp_path):
    code, _, err = run(["fit", "--input", str(tmp_path / "nope.csv"), "--seed", "1"], capsys)
    assert code == 2
    assert error_block(err)["stage"] == "load"


def test_malformed_input_exit_2(capsys, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("A,1,2\nB,oops,3\n", encoding="utf-8")
    code, _, err = run(["compare", "--input", str(bad)], capsys)
    assert code == 2
    block = error_block(err)
    assert block["stage"] == "load" and block["type"] == "ParseError" and "line 2" in block["message"]


def test_usage_errors_exit_2(capsys):
    assert run(["fit"], capsys)[0] == 2  # no seed
    assert run(["frobnicate"], capsys)[0] == 2
    assert run(["rank", "--mode", "median"], capsys)[0] == 2
    code, _, err = run(["fit", "--seed", "1", "--resamples", "50"], capsys)
    assert code == 2 and error_block(err)["stage"] == "usage"


def test_bad_exclusion_is_an_analysis_error(capsys):
    code, _, err = run(["compare", "--exclude", "Atlantis"], capsys)
    assert code == 1
    assert error_block(err) == {"stage": "exclude", "type": "RecordLookupError",
                                "message": "no record matches 'Atlantis'"}


def test_degenerate_data_exit_1(capsys, tmp_path):
    tiny = tmp_path / "tiny.csv"
    tiny.write_text("a,1,10\nb,2,20\nc,3,30\nd,4,35\ne,5,37\n", encoding="utf-8")
    code, _, err = run(["fit", "--input", str(tiny), "--seed", "1", "--resamples", "200"], capsys)
    assert code == 1
    assert error_block(err)["stage"] == "fit"


def test_fit_command(capsys, tmp_path):
    out, band = tmp_path / "fit.json", tmp_path / "band.csv"
    code, _, _ = run(["fit", "--exclude", "#9", "--seed", "5", "--resamples", "200",
                      "--out", str(out), "--plot-data", str(band)], capsys)
    assert code == 0
    d = json.loads(out.read_text(encoding="utf-8"))
    for key in ("parameters", "standard_errors", "breakpoint", "r_squared", "critical_masses",
                "classification_counts", "excluded"):
        assert key in d
    assert len(band.read_text(encoding="utf-8").splitlines()) == 201


def test_test_command(capsys):
    code, out, _ = run(["test", "--exclude", "#9", "--which", "nocorr"], capsys)
    assert code == 0
    tests = json.loads(out)["tests"]
    assert list(tests) == ["no_correlation"] and tests["no_correlation"]["p_value"] < 0.001
    assert run(["test", "--which", "slopes"], capsys)[0] == 2  # bootstrap without a seed


def test_compare_command_formats(capsys, tmp_path):
    j, c = tmp_path / "t.json", tmp_path / "t.csv"
    assert run(["compare", "--exclude", "#9", "--out", str(j)], capsys)[0] == 0
    assert run(["compare", "--exclude", "#9", "--out", str(c)], capsys)[0] == 0
    rows = json.loads(j.read_text(encoding="utf-8"))["comparison"]
    assert [r["model"] for r in rows][:2] == ["cubic", "piecewise"]
    header = c.read_text(encoding="utf-8").splitlines()[0]
    assert header == "model,parameter,value,standard_error,r_squared,converged,error"


def test_rank_command(capsys, tmp_path):
    fig = tmp_path / "fig3.csv"
    code, out, _ = run(["rank", "--exclude", "#9", "--mode", "model", "--plot-data", str(fig)], capsys)
    assert code == 0
    assert out.splitlines()[1].startswith("1,Oxford,")
    lines = fig.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "index,name,deviation,excluded_flag" and len(lines) == 30
    code, out, _ = run(["rank", "--exclude", "#9"], capsys)
    assert len(out.splitlines()) == 31  # vs_mean keeps every record


def test_simulate_round_trip(capsys, tmp_path):
    out = tmp_path / "synth.csv"
    argv = ["simulate", "--a", "16.9", "--b", "3.8", "--nc", "18", "--noise", "2",
            "--sizes", "2:30:2", "--seed", "9", "--out", str(out)]
    assert run(argv, capsys)[0] == 0
    first = out.read_bytes()
    assert run(argv, capsys)[0] == 0
    assert out.read_bytes() == first
    code, text, _ = run(["compare", "--input", str(out)], capsys)
    assert code == 0 and len(json.loads(text)["comparison"]) == 5


def test_parse_sizes(tmp_path):
    assert list(parse_sizes("2:6")) == [2, 3, 4, 5, 6]
    assert list(parse_sizes("1:2:0.5")) == [1.0, 1.5, 2.0]
    f = tmp_path / "sizes.txt"
    f.write_text("3 4.5\n7,8\n", encoding="utf-8")
    assert list(parse_sizes(str(f))) == [3, 4.5, 7, 8]
    with pytest.raises(ValidationError):
        parse_sizes("5:1")


def test_report_is_byte_identical(capsys, tmp_path):
    paths = []
    for k in range(2):
        out, plots = tmp_path / f"r{k}.json", tmp_path / f"plots{k}"
        argv = ["report", "--exclude", "#9", "--seed", "11", "--resamples", "300",
                "--out", str(out), "--plot-dir", str(plots)]
        assert run(argv, capsys)[0] == 0
        paths.append((out, plots))
    (a, pa), (b, pb) = paths
    assert a.read_bytes() == b.read_bytes()
    for fig in ("data", "fit", "rank-mean", "rank-model"):
        assert (pa / f"{fig}.csv").read_bytes() == (pb / f"{fig}.csv").read_bytes()


def test_stage_error_block():
    err = StageError("bootstrap", ValidationError("boom"))
    assert err.exit_code == 1
    assert err.to_dict() == {"error": {"stage": "bootstrap", "type": "ValidationError", "message": "boom"}}


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "critmass.cli", "fit", "--input", "/nonexistent/x.csv",
                           "--seed", "1"], capture_output=True, text=True)
    assert proc.returncode == 2
    assert json.loads(proc.stderr)["error"]["stage"] == "load"
