import json
import math

import numpy as np
import pytest

from genmean.cli import main

from test_harness import MINIMAL, write_fixture


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def parse_rows(text):
    return [[float(v) for v in line.split(",")] for line in text.strip().splitlines()]


class TestAggregate:
    def test_arithmetic(self, tmp_path, capsys):
        path = write_fixture(tmp_path, MINIMAL, [0, 1, 1])
        code, out, err = run(capsys, "aggregate", str(path), "--order", "1")
        assert code == 0
        want = (np.array(MINIMAL[0]) + np.array(MINIMAL[1])) / 2
        np.testing.assert_allclose(parse_rows(out), want, rtol=1e-11)
        assert "config" in err

    def test_min_counterexample(self, tmp_path, capsys):
        path = write_fixture(tmp_path, [[[0.9, 0.1]], [[0.01, 0.99]]], [0])
        code, out, _ = run(capsys, "aggregate", str(path), "--order", "-inf")
        assert code == 0
        np.testing.assert_allclose(parse_rows(out)[0], [0.0909, 0.9091], atol=5e-5)

    def test_output_file_and_digits(self, tmp_path, capsys):
        path = write_fixture(tmp_path, MINIMAL, [0, 1, 1])
        out = tmp_path / "agg.csv"
        code, stdout, _ = run(capsys, "aggregate", str(path), "--order", "0.5", "--out", str(out))
        assert code == 0 and stdout == ""
        for cell in out.read_text().replace("\n", ",").strip(",").split(","):
            assert len(cell.replace("0.", "", 1).lstrip("0").replace(".", "")) <= 12

    def test_malformed_csv(self, tmp_path, capsys):
        path = write_fixture(tmp_path, MINIMAL, [0, 1, 1])
        (tmp_path / "m0.csv").write_text("0.5;0.5\n")
        code, out, err = run(capsys, "aggregate", str(path), "--order", "1")
        assert code == 2 and out == ""
        assert "m0.csv" in err

    def test_bad_order(self, tmp_path, capsys):
        path = write_fixture(tmp_path, MINIMAL, [0, 1, 1])
        assert run(capsys, "aggregate", str(path), "--order", "fast")[0] == 2


class TestSweep:
    def test_identical_models_flat(self, tmp_path, capsys):
        m = [[0.3, 0.7], [0.8, 0.2], [0.5, 0.5]]
        path = write_fixture(tmp_path, [m, m, m], [1, 0, 1])
        out = tmp_path / "res.csv"
        assert run(capsys, "sweep", str(path), "--out", str(out))[0] == 0
        rows = out.read_text().splitlines()[1:]
        vals = [float(r.split(",")[1]) for r in rows]
        assert len(vals) == 14
        np.testing.assert_allclose(vals, vals[0], rtol=1e-12)

    def test_synthetic_safe_interval(self, tmp_path, capsys):
        code, out, _ = run(capsys, "synth", "dirichlet_jitter", "--out-dir", str(tmp_path / "d"),
                           "--n", "200", "--k", "4", "--classes", "6", "--ensembles", "2", "--seed", "3")
        assert code == 0
        manifest = out.strip()
        res = tmp_path / "res.json"
        assert run(capsys, "sweep", manifest, "--format", "json", "--out", str(res),
                   "--grid", "-inf,0,0.25,0.5,0.75,1,+inf")[0] == 0
        doc = json.loads(res.read_text())
        for r, v in zip(doc["grid"], doc["mean_nll"]):
            if r not in ("-inf", "+inf"):
                assert v <= doc["baseline_mean"] + 1e-9

    def test_empty_grid(self, tmp_path, capsys):
        path = write_fixture(tmp_path, MINIMAL, [0, 1, 1])
        assert run(capsys, "sweep", str(path), "--grid", "")[0] == 2

    def test_stdout_twelve_digits(self, tmp_path, capsys):
        path = write_fixture(tmp_path, MINIMAL, [0, 1, 1])
        code, out, _ = run(capsys, "sweep", str(path), "--grid", "0,1")
        assert code == 0
        row = out.splitlines()[1].split(",")
        assert row[1] == f"{float(row[1]):.12g}"


class TestGaussianSweep:
    def test_figure_one_table(self, tmp_path, capsys):
        out = tmp_path / "fig1.csv"
        code, _, _ = run(capsys, "gaussian-sweep", "--experts", "-3.5:1.8;3.5:1.8",
                         "--sample", "0:4", "--n", "20000", "--out", str(out))
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("order,mean_nll,std_nll,baseline_mean,baseline_std")
        assert len(lines) == 15

    def test_single_expert_flat(self, capsys):
        code, out, _ = run(capsys, "gaussian-sweep", "--experts", "0:2", "--sample", "0:2",
                           "--n", "2000", "--grid", "-inf,0,0.5,2,+inf")
        assert code == 0
        vals = [float(line.split(",")[1]) for line in out.splitlines()[1:]]
        np.testing.assert_allclose(vals, vals[0], rtol=1e-9)

    def test_zero_std(self, capsys):
        assert run(capsys, "gaussian-sweep", "--experts", "-1:0;1:1", "--sample", "0:1")[0] == 2

    def test_unknown_flag(self, capsys):
        code, _, err = run(capsys, "gaussian-sweep", "--experts", "0:1", "--sample", "0:1", "--bogus")
        assert code == 2 and "bogus" in err


class TestCounterexample:
    def table(self, out):
        lines = out.strip().splitlines()
        head = lines[0].split("\t")
        return [dict(zip(head, line.split("\t"))) for line in lines[1:]]

    def test_min(self, capsys):
        code, out, _ = run(capsys, "counterexample", "min")
        (row,) = self.table(out)
        assert code == 0
        assert float(row["log_aggregated"]) == pytest.approx(-2.40, abs=5e-3)
        assert float(row["avg_log_individual"]) == pytest.approx(-2.36, abs=5e-3)
        assert float(row["gap"]) < 0

    def test_max(self, capsys):
        code, out, _ = run(capsys, "counterexample", "max")
        (row,) = self.table(out)
        assert float(row["log_aggregated"]) == pytest.approx(-0.145, abs=5e-4)
        assert float(row["avg_log_individual"]) == pytest.approx(-0.105, abs=5e-4)
        assert float(row["gap"]) < 0

    def test_gaussian_neg(self, capsys):
        code, out, _ = run(capsys, "counterexample", "gaussian-neg")
        rows = self.table(out)
        assert code == 0
        for row in rows:
            assert float(row["gap"]) == pytest.approx(-3.307, abs=1e-3)

    def test_gaussian_gt1(self, capsys):
        code, out, _ = run(capsys, "counterexample", "gaussian-gt1")
        (row,) = self.table(out)
        log_z = float(row["aggregated"].split("=")[1])
        assert float(row["gap"]) == pytest.approx(-log_z, abs=1e-10)
        assert float(row["gap"]) < 0


class TestZcheck:
    @pytest.mark.parametrize("order,want", [("0", -0.5), ("0.5", math.log((1 + math.exp(-0.5)) / 2)), ("1", 0.0)])
    def test_agreement(self, capsys, order, want):
        code, out, _ = run(capsys, "zcheck", "--experts", "-1:1;1:1", "--order", order)
        assert code == 0
        values = {line.split("\t")[0]: line.split("\t")[1] for line in out.splitlines()[1:]}
        assert float(values["quadrature_1d"]) == pytest.approx(want, abs=1e-10)
        assert len([k for k in values if k.startswith("closed_form")]) == 1

    def test_numeric_only(self, capsys):
        code, out, _ = run(capsys, "zcheck", "--experts", "-1:1;1:1", "--order", "-inf")
        assert code == 0
        assert "closed_form" not in out

    def test_consistency_failure(self, capsys):
        code, out, _ = run(capsys, "zcheck", "--experts", "-1:1;1:1", "--order", "0", "--tol", "-1")
        assert code == 4
        assert "closed_form_geometric" in out

    def test_accuracy_failure(self, capsys):
        code, _, err = run(capsys, "zcheck", "--experts", "-1:1;1:1", "--order", "-1", "--rel-tol", "1e-30")
        assert code == 3

    def test_parse_error(self, capsys):
        assert run(capsys, "zcheck", "--experts", "x", "--order", "0")[0] == 2


def test_determinism(tmp_path, capsys):
    run(capsys, "synth", "near_consensus", "--out-dir", str(tmp_path / "d"), "--n", "50", "--k", "4",
        "--classes", "8", "--ensembles", "2", "--seed", "1")
    outs = []
    for i in range(2):
        a, b = tmp_path / f"s{i}.json", tmp_path / f"g{i}.csv"
        assert run(capsys, "sweep", str(tmp_path / "d" / "manifest.json"), "--format", "json", "--out", str(a))[0] == 0
        assert run(capsys, "gaussian-sweep", "--experts", "-2:1;2:1.5", "--sample", "0:3", "--n", "3000",
                   "--seed", "9", "--out", str(b))[0] == 0
        outs.append((a.read_bytes(), b.read_bytes()))
    assert outs[0] == outs[1]
