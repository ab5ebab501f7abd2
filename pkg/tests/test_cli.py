import json
import subprocess
import sys

import numpy as np
import pytest

from histoband.cli import main, read_csv


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


@pytest.fixture
def small_csv(tmp_path):
    return write(tmp_path / "small.csv", "x1,y\n0.1,1\n0.2,3\n0.7,5\n")


@pytest.fixture
def uniform_csv(tmp_path):
    # four points per cell, so p_hat is constant over the 5 cells
    rng = np.random.default_rng(0)
    x = (np.repeat(np.arange(5), 4) + rng.random(20)) / 5
    y = rng.normal(size=20)
    rows = "\n".join(f"{float(a)!r},{float(b)!r}" for a, b in zip(x, y))
    return write(tmp_path / "uniform.csv", "x1,y\n" + rows + "\n")


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestFit:
    def test_small_sample(self, capsys, small_csv):
        code, out, _ = run(capsys, "fit", small_csv, "--inv-mesh", 2)
        doc = json.loads(out)
        assert code == 0
        assert [c["m_hat"] for c in doc["cells"]] == [2.0, 5.0]
        assert [c["count"] for c in doc["cells"]] == [2, 1]
        assert doc["cells"][0]["sigma2_local"] == 1.0 and doc["cells"][1]["low_count"]

    def test_empty_file(self, capsys, tmp_path):
        code, _, err = run(capsys, "fit", write(tmp_path / "e.csv", ""), "--inv-mesh", 2)
        assert code == 2 and "no data rows" in err

    def test_header_only_reports_dimension(self, capsys, tmp_path):
        code, _, err = run(capsys, "fit", write(tmp_path / "h.csv", "x1,x2,x3,y\n"), "--inv-mesh", 2)
        assert code == 2 and "no data rows" in err and "p=3" in err

    def test_malformed_row_line_number(self, capsys, tmp_path):
        code, _, err = run(capsys, "fit", write(tmp_path / "m.csv", "x1,y\n0.1,1\n0.2,abc\n"), "--inv-mesh", 2)
        assert code == 2 and "line 3" in err

    def test_wrong_field_count(self, capsys, tmp_path):
        code, _, err = run(capsys, "fit", write(tmp_path / "m.csv", "x1,y\n0.1,1,2\n"), "--inv-mesh", 2)
        assert code == 2 and "line 2" in err

    def test_covariate_out_of_range(self, capsys, tmp_path):
        code, _, err = run(capsys, "fit", write(tmp_path / "o.csv", "x1,y\n1.5,1\n"), "--inv-mesh", 2)
        assert code == 2 and "outside" in err

    def test_bad_header(self, capsys, tmp_path):
        code, _, err = run(capsys, "fit", write(tmp_path / "b.csv", "a,b\n0.1,1\n"), "--inv-mesh", 2)
        assert code == 2 and "line 1" in err

    def test_out_file(self, capsys, small_csv, tmp_path):
        out = tmp_path / "fit.json"
        assert run(capsys, "fit", small_csv, "--inv-mesh", 2, "--out", out)[0] == 0
        assert json.loads(out.read_text())["n"] == 3

    def test_csv_round_trip(self, capsys, tmp_path):
        rng = np.random.default_rng(4)
        x, y = rng.random((30, 2)), rng.normal(size=30) * 1e3
        text = "x1,x2,y\n" + "\n".join(f"{float(a)!r},{float(b)!r},{float(c)!r}" for (a, b), c in zip(x, y))
        path = write(tmp_path / "rt.csv", text + "\n")
        data = read_csv(path)
        np.testing.assert_array_equal(data.xs, x)
        np.testing.assert_array_equal(data.ys, y)
        _, out, _ = run(capsys, "fit", path, "--inv-mesh", 1)
        assert json.loads(out)["cells"][0]["m_hat"] == pytest.approx(y.mean(), abs=1e-12)


class TestBand:
    def test_global_equal_radii(self, capsys, uniform_csv):
        code, out, err = run(capsys, "band", uniform_csv, "--inv-mesh", 5, "--variance", "global")
        radii = [c["radius"] for c in json.loads(out)["cells"]]
        assert code == 0 and max(radii) == min(radii)
        assert "J=5" in err and "c_delta(beta)=" in err

    def test_smaller_beta_wider(self, capsys, uniform_csv):
        _, out05, _ = run(capsys, "band", uniform_csv, "--inv-mesh", 5, "--beta", 0.05)
        _, out50, _ = run(capsys, "band", uniform_csv, "--inv-mesh", 5, "--beta", 0.5)
        r05 = [c["radius"] for c in json.loads(out05)["cells"]]
        r50 = [c["radius"] for c in json.loads(out50)["cells"]]
        assert all(a > b for a, b in zip(r05, r50))

    def test_degenerate_cell_encoded_as_null(self, capsys, small_csv, tmp_path):
        code, _, _ = run(capsys, "band", small_csv, "--inv-mesh", 4, "--out", tmp_path / "b")
        doc = json.loads((tmp_path / "b.json").read_text())
        empty = [c for c in doc["cells"] if c["degenerate"]]
        assert code == 0 and empty
        assert all(c["lower"] is None and c["upper"] is None for c in empty)
        lines = (tmp_path / "b.csv").read_text().splitlines()
        assert lines[0] == "cell,lo1,hi1,center,lower,upper,degenerate" and len(lines) == 5

    def test_local_variance(self, capsys, uniform_csv):
        code, out, _ = run(capsys, "band", uniform_csv, "--inv-mesh", 5, "--variance", "local")
        assert code == 0 and not any(c["degenerate"] for c in json.loads(out)["cells"])

    def test_oracle_requires_spec(self, capsys, small_csv):
        code, _, err = run(capsys, "band", small_csv, "--inv-mesh", 2, "--variance", "oracle")
        assert code == 2 and "oracle-spec" in err

    def test_oracle_inline_spec(self, capsys, uniform_csv):
        spec = json.dumps({"covariates": {"id": "uniform"}, "noise": {"id": "gaussian", "sigma": 1.0}})
        code, out, _ = run(capsys, "band", uniform_csv, "--inv-mesh", 5, "--variance", "oracle",
                           "--oracle-spec", spec, "--beta", 0.1)
        doc = json.loads(out)
        # tau = 0.2, n = 20: radius = c / sqrt(4)
        assert code == 0
        np.testing.assert_allclose([c["radius"] for c in doc["cells"]], doc["quantile"] / 2, rtol=1e-12)

    def test_beta_out_of_range(self, capsys, small_csv):
        assert run(capsys, "band", small_csv, "--inv-mesh", 2, "--beta", 1.5)[0] == 2


class TestQuantile:
    @pytest.mark.parametrize("beta,expected", [(0.05, "1.959964"), (0.3173105, "1.000000")])
    def test_single_cell(self, capsys, beta, expected):
        code, out, _ = run(capsys, "quantile", "--cells", 1, "--beta", beta)
        assert code == 0 and out.strip() == expected

    @pytest.mark.parametrize("argv", [("--cells", 0, "--beta", 0.1), ("--cells", 5, "--beta", 1.0)])
    def test_invalid(self, capsys, argv):
        assert run(capsys, "quantile", *argv)[0] == 2


COVERAGE_CONFIG = {
    "schema": 1,
    "scenario": {"n": 2000, "inv_mesh": 5, "replications": 60, "seed": 2},
    "thresholds": {"min_coverage": 0.8},
}


class TestSimulate:
    def test_coverage_pass_and_workers_identical(self, capsys, tmp_path):
        cfg = write(tmp_path / "c.json", json.dumps(COVERAGE_CONFIG))
        code1, out1, err = run(capsys, "simulate", "coverage", "--config", cfg, "--workers", 1)
        code8, out8, _ = run(capsys, "simulate", "coverage", "--config", cfg, "--workers", 8)
        assert code1 == code8 == 0 and "PASS min_coverage" in err
        d1, d8 = json.loads(out1), json.loads(out8)
        assert d1.pop("meta")["workers"] == 1 and d8.pop("meta")["workers"] == 8
        assert json.dumps(d1) == json.dumps(d8)

    def test_threshold_failure_exit_1(self, capsys, tmp_path):
        doc = dict(COVERAGE_CONFIG, thresholds={"min_coverage": 1.01})
        code, _, err = run(capsys, "simulate", "coverage", "--config", write(tmp_path / "c.json", json.dumps(doc)))
        assert code == 1 and "FAIL" in err

    @pytest.mark.parametrize("doc", [
        dict(COVERAGE_CONFIG, schema=2),
        dict(COVERAGE_CONFIG, colour="red"),
        dict(COVERAGE_CONFIG, thresholds={"max_ks": 0.1}),
        dict(COVERAGE_CONFIG, scenario={"n": 100, "inv_mesh": 2, "bins": 3}),
        {"schema": 1},
    ])
    def test_config_errors_exit_2(self, capsys, tmp_path, doc):
        code, _, err = run(capsys, "simulate", "coverage", "--config", write(tmp_path / "c.json", json.dumps(doc)))
        assert code == 2 and err.startswith("error:")

    def test_schema_mismatch_message(self, capsys, tmp_path):
        doc = dict(COVERAGE_CONFIG, schema=2)
        _, _, err = run(capsys, "simulate", "coverage", "--config", write(tmp_path / "c.json", json.dumps(doc)))
        assert "schema mismatch" in err

    def test_missing_config(self, capsys):
        assert run(capsys, "simulate", "coverage")[0] == 2

    def test_verify_binomial_default(self, capsys):
        code, out, _ = run(capsys, "simulate", "verify-binomial")
        assert code == 0 and json.loads(out)["summary"]["verdict"] == "bounded"

    def test_seed_override(self, capsys, tmp_path):
        cfg = write(tmp_path / "c.json", json.dumps(COVERAGE_CONFIG))
        _, out, _ = run(capsys, "simulate", "coverage", "--config", cfg, "--seed", 9)
        assert json.loads(out)["config"]["seed"] == 9

    def test_env_overrides_workers(self, capsys, tmp_path, monkeypatch):
        cfg = write(tmp_path / "c.json", json.dumps(COVERAGE_CONFIG))
        monkeypatch.setenv("HISTOBAND_THREADS", "3")
        _, out, _ = run(capsys, "simulate", "coverage", "--config", cfg, "--workers", 1)
        assert json.loads(out)["meta"]["workers"] == 3
        monkeypatch.setenv("HISTOBAND_THREADS", "many")
        assert run(capsys, "simulate", "coverage", "--config", cfg)[0] == 2

    def test_rate_and_phat_with_csv(self, capsys, tmp_path):
        doc = {"schema": 1, "scenario": {"regression": {"id": "holder_bump"}, "replications": 3},
               "n_values": [1000, 10_000, 100_000]}
        cfg = write(tmp_path / "r.json", json.dumps(doc))
        with pytest.warns(UserWarning, match="decades"):
            code, out, _ = run(capsys, "simulate", "rate", "--config", cfg, "--csv", tmp_path / "r.csv")
        assert code == 0 and len(json.loads(out)["summary"]["median_sup_error"]) == 3
        assert (tmp_path / "r.csv").read_text().splitlines()[0].startswith("n,r,")
        doc["scenario"]["inv_mesh"] = 10
        cfg = write(tmp_path / "p.json", json.dumps(doc))
        code, out, _ = run(capsys, "simulate", "phat", "--config", cfg)
        assert code == 0 and json.loads(out)["kind"] == "phat"


def test_console_script(tmp_path):
    res = subprocess.run([sys.executable, "-m", "histoband.cli", "quantile", "--cells", "100", "--beta", "0.05"],
                         capture_output=True, text=True, check=True)
    assert res.stdout.strip() == "3.473979"
