"""End-to-end command-line behavior: artifacts, exit codes, reproducibility."""

import json

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from transreg.cli import main

EXPECTED_BLOCKS = (
    "draws_beta0.csv",
    "draws_gamma0.csv",
    "draws_delta_tilde.csv",
    "draws_log_tau2_delta.csv",
)


def _write_gaussian_csv(path, n=60, seed=0):
    rng = np.random.default_rng(seed)
    frame = pd.DataFrame({"y": rng.normal(0.4, 1.1, n), "x": rng.uniform(-2, 2, n)})
    frame.to_csv(path, index=False)
    return frame


def _base_config(tmp, out_name="fit_out", **over):
    doc = {
        "data": str(tmp / "train.csv"),
        "response": "y",
        "output": str(tmp / out_name),
        "transform": {"J": 10},
        "mcmc": {"warmup": 40, "samples": 30, "chains": 1, "seed": 7},
    }
    doc.update(over)
    return doc


def _write_config(tmp, doc, name="config.json"):
    path = tmp / name
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def fitted_dir(tmp_path_factory, runner):
    tmp = tmp_path_factory.mktemp("fit")
    _write_gaussian_csv(tmp / "train.csv")
    cfg = _write_config(tmp, _base_config(tmp))
    result = runner.invoke(main, ["fit", "--config", str(cfg)])
    assert result.exit_code == 0, result.output
    return tmp / "fit_out"


@pytest.fixture(scope="module")
def fitted_cov_dir(tmp_path_factory, runner):
    tmp = tmp_path_factory.mktemp("fitcov")
    _write_gaussian_csv(tmp / "train.csv")
    doc = _base_config(
        tmp, location=[{"name": "x_lin", "kind": "linear", "covariate": "x"}]
    )
    cfg = _write_config(tmp, doc)
    result = runner.invoke(main, ["fit", "--config", str(cfg)])
    assert result.exit_code == 0, result.output
    return tmp / "fit_out", tmp


def test_fit_writes_all_artifacts(fitted_dir):
    for name in EXPECTED_BLOCKS + ("diagnostics.json", "manifest.json"):
        assert (fitted_dir / name).exists(), name
    manifest = json.loads((fitted_dir / "manifest.json").read_text())
    assert set(manifest) == {"config", "seed", "versions"}
    assert manifest["seed"] == 7
    assert {"python", "transreg", "numpy", "scipy", "pandas", "click"} <= set(
        manifest["versions"]
    )
    diag = json.loads((fitted_dir / "diagnostics.json").read_text())
    assert "parameters" in diag and "divergences" in diag


def test_fit_draws_long_format(fitted_dir):
    frame = pd.read_csv(fitted_dir / "draws_delta_tilde.csv")
    assert list(frame.columns) == ["iteration", "chain", "parameter", "value"]
    assert set(frame["chain"]) == {0}
    assert frame["parameter"].str.match(r"delta_tilde\[\d+\]").all()
    assert frame.groupby("parameter")["iteration"].count().eq(30).all()


def test_fit_missing_data_file(runner, tmp_path):
    cfg = _write_config(tmp_path, _base_config(tmp_path))
    result = runner.invoke(main, ["fit", "--config", str(cfg)])
    assert result.exit_code == 3
    assert "data file not found" in result.output


def test_fit_missing_response_column(runner, tmp_path):
    _write_gaussian_csv(tmp_path / "train.csv")
    cfg = _write_config(tmp_path, _base_config(tmp_path, response="z"))
    result = runner.invoke(main, ["fit", "--config", str(cfg)])
    assert result.exit_code == 3
    assert "'z'" in result.output and "response" in result.output


def test_fit_bad_lambda_mode_names_field(runner, tmp_path):
    _write_gaussian_csv(tmp_path / "train.csv")
    doc = _base_config(tmp_path)
    doc["transform"]["lambda_mode"] = "smooth"
    cfg = _write_config(tmp_path, doc)
    result = runner.invoke(main, ["fit", "--config", str(cfg)])
    assert result.exit_code == 2
    assert "transform.lambda_mode" in result.output


def test_fit_unknown_top_level_field(runner, tmp_path):
    _write_gaussian_csv(tmp_path / "train.csv")
    doc = _base_config(tmp_path)
    doc["transformation"] = {}
    cfg = _write_config(tmp_path, doc)
    result = runner.invoke(main, ["fit", "--config", str(cfg)])
    assert result.exit_code == 2
    assert "unknown fields" in result.output and "transformation" in result.output


def test_fit_non_numeric_cell_reports_line(runner, tmp_path):
    frame = _write_gaussian_csv(tmp_path / "train.csv", n=10)
    frame["y"] = frame["y"].astype(object)
    frame.loc[4, "y"] = "oops"
    frame.to_csv(tmp_path / "train.csv", index=False)
    cfg = _write_config(tmp_path, _base_config(tmp_path))
    result = runner.invoke(main, ["fit", "--config", str(cfg)])
    assert result.exit_code == 3
    assert "line 6" in result.output  # row 4 + header + 1-based


def test_fit_same_seed_reproduces_bytes(runner, tmp_path):
    _write_gaussian_csv(tmp_path / "train.csv")
    cfg = _write_config(tmp_path, _base_config(tmp_path))
    for out in ("run_a", "run_b"):
        result = runner.invoke(main, ["fit", "--config", str(cfg), "--out", str(tmp_path / out)])
        assert result.exit_code == 0, result.output
    for name in EXPECTED_BLOCKS:
        a = (tmp_path / "run_a" / name).read_bytes()
        b = (tmp_path / "run_b" / name).read_bytes()
        assert a == b, name


def test_manifest_roundtrip_reproduces(runner, fitted_dir, tmp_path):
    result = runner.invoke(
        main,
        ["fit", "--config", str(fitted_dir / "manifest.json"), "--out", str(tmp_path / "redo")],
    )
    assert result.exit_code == 0, result.output
    for name in EXPECTED_BLOCKS:
        assert (fitted_dir / name).read_bytes() == (tmp_path / "redo" / name).read_bytes()


def test_fit_chain_override(runner, tmp_path):
    _write_gaussian_csv(tmp_path / "train.csv", n=50)
    cfg = _write_config(tmp_path, _base_config(tmp_path))
    result = runner.invoke(
        main, ["fit", "--config", str(cfg), "--chains", "2", "--out", str(tmp_path / "two")]
    )
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(tmp_path / "two" / "draws_beta0.csv")
    assert set(frame["chain"]) == {0, 1}


def test_predict_quantile_defaults(runner, fitted_dir, tmp_path):
    req = tmp_path / "req.csv"
    pd.DataFrame({"dummy": [0, 0]}).to_csv(req, index=False)
    out = tmp_path / "pred.csv"
    result = runner.invoke(
        main,
        ["predict", "--fit-dir", str(fitted_dir), "--data", str(req), "--kind", "quantile", "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["row_id", "y_or_u", "mean", "lo", "hi"]
    assert len(frame) == 2 * 5  # default levels
    np.testing.assert_allclose(
        frame.loc[frame["row_id"] == 0, "y_or_u"], [0.05, 0.25, 0.5, 0.75, 0.95]
    )
    per_row = frame[frame["row_id"] == 0]
    assert per_row["mean"].is_monotonic_increasing
    assert (frame["lo"] <= frame["hi"]).all()


def test_predict_cdf_needs_values(runner, fitted_dir, tmp_path):
    req = tmp_path / "req.csv"
    pd.DataFrame({"dummy": [0]}).to_csv(req, index=False)
    result = runner.invoke(
        main,
        ["predict", "--fit-dir", str(fitted_dir), "--data", str(req), "--kind", "cdf", "--out", str(tmp_path / "o.csv")],
    )
    assert result.exit_code == 2
    assert "--values" in result.output


def test_predict_cdf_values(runner, fitted_dir, tmp_path):
    req = tmp_path / "req.csv"
    pd.DataFrame({"dummy": [0]}).to_csv(req, index=False)
    out = tmp_path / "cdf.csv"
    result = runner.invoke(
        main,
        [
            "predict", "--fit-dir", str(fitted_dir), "--data", str(req),
            "--kind", "cdf", "--values", "-1.0,0.4,2.0", "--hpd", "--out", str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(out)
    assert len(frame) == 3
    assert frame["mean"].between(0, 1).all()
    assert frame["mean"].is_monotonic_increasing


def test_predict_missing_covariate_column(runner, fitted_cov_dir, tmp_path):
    fit_dir, _ = fitted_cov_dir
    req = tmp_path / "req.csv"
    pd.DataFrame({"notx": [1.0]}).to_csv(req, index=False)
    result = runner.invoke(
        main,
        ["predict", "--fit-dir", str(fit_dir), "--data", str(req), "--kind", "quantile", "--out", str(tmp_path / "o.csv")],
    )
    assert result.exit_code == 3
    assert "'x'" in result.output


def test_predict_covariate_shifts_location(runner, fitted_cov_dir, tmp_path):
    fit_dir, _ = fitted_cov_dir
    req = tmp_path / "req.csv"
    pd.DataFrame({"x": [-2.0, 2.0]}).to_csv(req, index=False)
    out = tmp_path / "q.csv"
    result = runner.invoke(
        main,
        ["predict", "--fit-dir", str(fit_dir), "--data", str(req), "--kind", "quantile", "--values", "0.5", "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(out)
    assert len(frame) == 2
    # the training slope is positive (0.8 truth), so medians must be ordered
    assert frame.loc[0, "mean"] < frame.loc[1, "mean"]


def test_simulate_writes_data_and_truth(runner, tmp_path):
    result = runner.invoke(
        main,
        ["simulate", "--kind", "mixture", "--n", "50", "--seed", "3", "--surface", "2", "--out", str(tmp_path / "sim")],
    )
    assert result.exit_code == 0, result.output
    data = pd.read_csv(tmp_path / "sim" / "data.csv")
    truth = pd.read_csv(tmp_path / "sim" / "truth.csv")
    assert set(data.columns) == {"y", "x", "mu", "log_sigma"}
    assert list(truth.columns) == ["r", "pdf", "cdf"]
    assert len(data) == len(truth) == 50
    assert truth["cdf"].between(0, 1).all()


def test_simulate_seed_reproducible(runner, tmp_path):
    for name in ("s1", "s2"):
        result = runner.invoke(
            main, ["simulate", "--kind", "skewnorm", "--n", "40", "--seed", "11", "--out", str(tmp_path / name)]
        )
        assert result.exit_code == 0
    a = (tmp_path / "s1" / "data.csv").read_bytes()
    assert a == (tmp_path / "s2" / "data.csv").read_bytes()


def test_simulate_empty_dataset(runner, tmp_path):
    result = runner.invoke(
        main, ["simulate", "--kind", "gaussian", "--n", "0", "--out", str(tmp_path / "empty")]
    )
    assert result.exit_code == 0, result.output
    data = pd.read_csv(tmp_path / "empty" / "data.csv")
    assert len(data) == 0
    assert list(data.columns) == ["y"]


def test_calibrate_psi_table(runner, tmp_path):
    out = tmp_path / "tv.csv"
    result = runner.invoke(
        main,
        ["calibrate-psi", "--psi", "0.1,1.0", "--n-tau", "5", "--n-delta", "5", "--n-bases", "16", "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["psi", "n_tau", "n_delta", "q50", "q90", "q99"]
    assert len(frame) == 2
    assert (frame["q50"] <= frame["q90"]).all() and (frame["q90"] <= frame["q99"]).all()
    # common random numbers: a larger scale stretches every quantile
    assert frame.loc[0, "q90"] < frame.loc[1, "q90"]


def test_calibrate_psi_rejects_nonpositive(runner, tmp_path):
    result = runner.invoke(
        main, ["calibrate-psi", "--psi", "0.5,-1", "--out", str(tmp_path / "x.csv")]
    )
    assert result.exit_code == 2
    assert "positive" in result.output


def test_diagnose_prints_table(runner, fitted_dir, tmp_path):
    json_out = tmp_path / "diag.json"
    result = runner.invoke(
        main, ["diagnose", "--fit-dir", str(fitted_dir), "--json", str(json_out)]
    )
    assert result.exit_code == 0, result.output
    assert "parameter" in result.output and "rhat" in result.output
    assert "log_tau2_delta" in result.output
    assert "divergences" in result.output  # echoed from the stored notes
    doc = json.loads(json_out.read_text())
    assert "log_tau2_delta" in doc["parameters"]


def test_diagnose_missing_fit_dir(runner, tmp_path):
    result = runner.invoke(main, ["diagnose", "--fit-dir", str(tmp_path / "nope")])
    assert result.exit_code == 3
    assert "no draws files" in result.output


def test_unknown_predict_kind_is_usage_error(runner, tmp_path):
    result = runner.invoke(
        main,
        ["predict", "--fit-dir", "d", "--data", "f", "--kind", "density", "--out", "o"],
    )
    assert result.exit_code == 2
    assert "Invalid value" in result.output
