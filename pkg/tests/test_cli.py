import csv

import numpy as np
import pytest

from fracmv.cli import build_parser, main, run_scenario
from fracmv.plots import emit_plots

from test_scenario import BASE


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_parser_global_flags_on_both_sides():
    ap = build_parser()
    a = ap.parse_args(["--seed", "5", "fbm-sample"])
    b = ap.parse_args(["fbm-sample", "--seed", "5", "--threads", "2"])
    assert a.seed == b.seed == 5
    assert a.threads == 1 and b.threads == 2


def test_fbm_sample_csv(tmp_path):
    out = tmp_path / "x.csv"
    assert main(["fbm-sample", "--paths", "2", "--steps", "16", "--out", str(out)]) == 0
    r = rows(out)
    assert list(r[0]) == ["path_id", "node_index", "t", "B_H", "B_Htilde"]
    assert len(r) == 2 * 17
    assert float(r[0]["B_H"]) == 0.0


def test_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("FRACMV_OUT", str(tmp_path / "env"))
    assert main(["fbm-sample", "--paths", "1", "--steps", "16"]) == 0
    assert (tmp_path / "env" / "fbm_sample.csv").exists()


def test_simulate_is_deterministic_across_threads(tmp_path):
    args = ["simulate", "--scenario", "linear_1d_H07", "--paths", "50", "--steps", "32"]
    assert main([*args, "--out", str(tmp_path / "a.csv"), "--threads", "1"]) == 0
    assert main([*args, "--out", str(tmp_path / "b.csv"), "--threads", "3"]) == 0
    a, b = (tmp_path / "a.csv").read_bytes(), (tmp_path / "b.csv").read_bytes()
    assert a == b
    assert rows(tmp_path / "a.csv")[0].keys() == {"path_id", "node", "t", "x1"}


def test_harnack_report(tmp_path, capsys):
    code = main(["harnack", "--scenario", "linear_1d_H07", "--paths", "2000", "--t0", "1.0",
                 "--out", str(tmp_path)])
    assert code == 0
    text = capsys.readouterr().out
    assert "bound" in text and "verdict = pass" in text
    r = rows(tmp_path / "harnack_paths.csv")
    assert len(r) == 2000 and set(r[0]) == {"path_id", "log_R", "quad_norm"}


def test_bismut_subcommands(tmp_path):
    out = tmp_path / "b.csv"
    assert main(["bismut", "--scenario", "linear_1d_H07", "--paths", "4000", "--steps", "64",
                 "--fd-check", "--out", str(out)]) == 0
    r = rows(out)[0]
    assert set(r) == {"estimate", "std_error", "fd_value", "fd_error", "pass"}
    assert r["pass"] == "true"
    assert main(["degenerate-bismut", "--scenario", "kinetic_H07", "--paths", "4000",
                 "--steps", "64", "--phi", "last", "--f", "last", "--out", str(out)]) == 0
    # the non-degenerate subcommand refuses a degenerate scenario
    assert main(["bismut", "--scenario", "kinetic_H07", "--out", str(out)]) == 2


def test_exit_codes(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("model = [")
    assert run_scenario(bad, tmp_path) == 2
    assert main(["run", "--scenario", str(bad)]) == 2
    assert main(["no-such-command"]) == 2
    b0 = tmp_path / "b0.toml"
    b0.write_text(BASE.replace("d = 1", "d = 2").replace("A0 = [[-1.0]]", "A0 = [[0.0, -1.0]]")
                  .replace("A1 = [[0.5]]", "A1 = [[0.0, 0.5]]").replace("mean = [0.0]", "mean = [0.0, 0.0]")
                  .replace("std = [0.1]", "std = [0.1, 0.1]")
                  + "\n[degenerate]\nm = 1\nl = 1\nA = [[0.0]]\nB = [[0.0]]\n")
    assert run_scenario(b0, tmp_path) == 3


def test_kalman_diagnostic_printed(tmp_path, capsys):
    b0 = tmp_path / "b0.toml"
    b0.write_text(BASE.replace("d = 1", "d = 2").replace("A0 = [[-1.0]]", "A0 = [[0.0, -1.0]]")
                  .replace("A1 = [[0.5]]", "A1 = [[0.0, 0.5]]").replace("mean = [0.0]", "mean = [0.0, 0.0]")
                  .replace("std = [0.1]", "std = [0.1, 0.1]")
                  + "\n[degenerate]\nm = 1\nl = 1\nA = [[0.0]]\nB = [[0.0]]\n")
    main(["run", "--scenario", str(b0), "--out", str(tmp_path)])
    assert "Kalman rank 0" in capsys.readouterr().err


def test_empty_check_list(tmp_path):
    s = tmp_path / "empty.toml"
    s.write_text(BASE)
    assert run_scenario(s, tmp_path) == 0
    summary = next(tmp_path.glob("*/summary.csv"))
    assert summary.read_text().strip() == "check,measured,threshold,pass"


def test_failed_check_exits_one(tmp_path):
    # an unattainable stability limit turns the sweep into a failing check
    s = tmp_path / "strict.toml"
    s.write_text(BASE.replace("checks = []", 'checks = ["stability"]\nstability.max_ratio = 1e-9'))
    assert run_scenario(s, tmp_path) == 1
    r = rows(next(tmp_path.glob("*/summary.csv")))
    assert r[0]["check"] == "stability_ratio" and r[0]["pass"] == "false"


@pytest.mark.slow
def test_shipped_linear_scenario_passes(tmp_path):
    assert run_scenario("linear_1d_H07", tmp_path) == 0
    r = rows(tmp_path / "linear_1d_H07" / "summary.csv")
    assert r and all(x["pass"] == "true" for x in r)


def test_plots_skip_missing_csvs(tmp_path):
    with pytest.warns(UserWarning):
        assert emit_plots(tmp_path) == []


def test_plots_from_csvs(tmp_path):
    with open(tmp_path / "fbm_variance.csv", "w") as fh:
        fh.write("H,node,t,target,var_volterra,var_cholesky\n")
        for k in range(1, 5):
            t = k / 4
            fh.write(f"0.7,{k},{t},{t**1.4},{t**1.4},{t**1.4}\n")
    with pytest.warns(UserWarning):
        out = emit_plots(tmp_path)
    assert [p.name for p in out] == ["variance_fit.png"]
    assert out[0].stat().st_size > 0
