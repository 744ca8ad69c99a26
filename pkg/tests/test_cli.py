import csv
import json
import os
import shutil
import subprocess
import sys

import pytest

from multicure.cli import main
from multicure.likelihood import SubjectRecord, write_dataset


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def files(d):
    return {f: (d / f).read_bytes() for f in sorted(os.listdir(d))}


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture
def sim_config(tmp_path):
    return write_json(tmp_path / "sim.json", {"schema_version": 1, "n_subjects": 80,
                                               "scenario": {"lag_scenario": "LT2", "nls_scenario": "NLS1"}})


@pytest.fixture
def dataset(tmp_path, sim_config):
    assert main(["simulate", "--config", sim_config, "--out", str(tmp_path / "sim"), "--seed", "4"]) == 0
    return str(tmp_path / "sim" / "LT2xNLS1.csv")


FAST = ["--chains", "2", "--iterations", "120", "--burn-in", "20"]


# ---------------------------------------------------------------- simulate


def test_simulate_writes_dataset_truth_and_manifest(tmp_path):
    out = tmp_path / "s"
    assert main(["simulate", "--out", str(out), "--seed", "1"]) == 0
    assert sorted(os.listdir(out)) == ["LT1xNLS1.csv", "LT1xNLS1.scenario.json", "LT1xNLS1.truth.csv",
                                       "manifest.json"]
    assert len(rows(out / "LT1xNLS1.csv")) == 1001
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "simulate" and man["seed"] == 1
    assert "wall_clock_seconds" not in man
    assert man["config"]["scenario"]["theta"] == pytest.approx([1 / 3] * 3)


def test_simulate_zero_subjects(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"schema_version": 1, "n_subjects": 0})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert rows(tmp_path / "o" / "LT1xNLS1.csv") == [["id", "entry_time", "exit_time", "screenings",
                                                      "covariates_theta", "covariates_lag"]]


def test_simulate_is_byte_identical(tmp_path, sim_config):
    for d in ("a", "b"):
        assert main(["simulate", "--config", sim_config, "--out", str(tmp_path / d), "--seed", "9"]) == 0
    assert files(tmp_path / "a") == files(tmp_path / "b")


def test_record_timing_is_opt_in(tmp_path):
    main(["simulate", "--out", str(tmp_path / "t"), "--record-timing"])
    assert "wall_clock_seconds" in json.loads((tmp_path / "t" / "manifest.json").read_text())


def test_timeline_flags(tmp_path):
    assert main(["simulate", "--out", str(tmp_path / "t"), "--truncate-lag", "none", "--max-age", "80"]) == 0
    man = json.loads((tmp_path / "t" / "manifest.json").read_text())
    tl = man["config"]["scenario"]["timeline"]
    assert tl["max_lag_years"] is None and tl["eligibility_length"] == 30.0
    assert main(["simulate", "--out", str(tmp_path / "u"), "--truncate-lag", "ten"]) == 1


@pytest.mark.parametrize("scenario,message", [
    ({"theta": [0.5, 0.5, 0.1], "lambda_single": 0.1, "lambda_pair": [0.5, 0.5]}, "sum to 1"),
    ({"theta": [0.5, 0.5, 0.0], "lambda_single": -0.1, "lambda_pair": [0.5, 0.5]}, "positive"),
    ({"lag_scenario": "LT1", "alpha": 1.5}, "alpha"),
    ({"lag_scenario": "LT7"}, "unknown lag"),
])
def test_invalid_scenarios_exit_1(tmp_path, capsys, scenario, message):
    cfg = write_json(tmp_path / "c.json", {"schema_version": 1, "scenario": scenario})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert message in capsys.readouterr().err


def test_config_parse_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"schema_version": 1,\n "n_subjects": }')
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "line 2" in capsys.readouterr().err
    cfg = write_json(tmp_path / "v.json", {"schema_version": 7})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert main(["simulate", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 1


# ---------------------------------------------------------------- fit


def test_fit_outputs(tmp_path, dataset):
    out = tmp_path / "fit"
    assert main(["fit", dataset, "--out", str(out), "--seed", "3"] + FAST) == 0
    assert sorted(os.listdir(out)) == ["chain_0.csv", "chain_0.json", "chain_1.csv", "chain_1.json",
                                       "convergence.json", "manifest.json", "summary.csv", "summary.json"]
    header = rows(out / "chain_0.csv")[0]
    for fam in ("theta_0", "theta_1", "theta_2", "lambda_1_1", "lambda_2_1", "lambda_2_2", "alpha"):
        assert fam in header
    assert len(rows(out / "chain_0.csv")) == 101
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["chain"]["n_chains"] == 2 and man["config"]["chain"]["thin"] == 1
    conv = json.loads((out / "convergence.json").read_text())
    assert "rhat" in conv["theta_0"]


def test_fit_defaults_are_explicit_in_manifest(tmp_path, dataset):
    out = tmp_path / "fit"
    cfg = write_json(tmp_path / "c.json", {"schema_version": 1, "chain": {"iterations": 30, "burn_in": 10,
                                                                         "n_chains": 1}})
    assert main(["fit", dataset, "--config", cfg, "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["priors"] == {"s": 1.0, "b": 1.0, "c": 2.0, "d": 1.0, "tau_rate": 1.0,
                                       "beta_prior": [0.0, 10.0], "omega_prior": [0.0, 10.0]}
    assert man["config"]["model"]["ell"] == 2 and man["seed"] == 0


def test_fit_univariate_columns(tmp_path):
    data = tmp_path / "uni.csv"
    write_dataset(data, [SubjectRecord("1", 0.0, 40.0, (3.0,)), SubjectRecord("2", 5.0, 20.0, ()),
                         SubjectRecord("3", 0.0, 12.0, (8.5,))])
    out = tmp_path / "fit"
    assert main(["fit", str(data), "--ell", "1", "--out", str(out)] + FAST) == 0
    assert rows(out / "chain_0.csv")[0] == ["theta_0", "theta_1", "gamma_0", "gamma_1", "lambda_1_1",
                                            "kappa1_1_1", "kappa2_1_1"]


def test_fit_covariate_columns(tmp_path):
    data = tmp_path / "cov.csv"
    write_dataset(data, [SubjectRecord(str(i), 0.0, 40.0, (3.0 + i % 5,) if i % 2 else (), (float(i % 3 == 0),))
                         for i in range(12)])
    cfg = write_json(tmp_path / "c.json", {"schema_version": 1, "model": {"ell": 1, "theta_covariates": True}})
    out = tmp_path / "fit"
    assert main(["fit", str(data), "--config", cfg, "--out", str(out)] + FAST) == 0
    header = rows(out / "chain_0.csv")[0]
    assert header[:2] == ["beta_1_0", "beta_1_1"] and "theta_0" not in header


def test_fit_is_byte_identical(tmp_path, dataset):
    for d in ("a", "b"):
        assert main(["fit", dataset, "--out", str(tmp_path / d), "--seed", "5", "--threads", "2"] + FAST) == 0
    assert files(tmp_path / "a") == files(tmp_path / "b")


def test_fit_rejects_malformed_rows(tmp_path, capsys):
    data = tmp_path / "bad.csv"
    data.write_text("id,entry_time,exit_time,screenings,covariates_theta,covariates_lag\n"
                    "1,0,40,3,,\n2,abc,40,,,\n3,0,40,2;5,,\n")
    assert main(["fit", str(data), "--out", str(tmp_path / "o")] + FAST) == 1
    err = capsys.readouterr().err
    assert "row 3" in err and "row 4" in err and "row 2" not in err


def test_fit_missing_dataset(tmp_path):
    assert main(["fit", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")]) == 1


def test_fit_numerical_failure_exit_2(tmp_path, dataset, monkeypatch, capsys):
    import multicure.cli as cli
    from multicure.sampler import SamplerError

    def boom(*args, **kwargs):
        raise SamplerError("non-finite likelihood after block 'lambda' in sweep 7", sweep=7, block="lambda")

    monkeypatch.setattr(cli, "run_chains", boom)
    assert main(["fit", dataset, "--out", str(tmp_path / "o")] + FAST) == 2
    assert "sweep 7" in capsys.readouterr().err


# ---------------------------------------------------------------- study


def test_study_truth_injection_zero_bias(tmp_path):
    cfg = write_json(tmp_path / "st.json", {"schema_version": 1, "scenarios": ["LT1xNLS1", "LT3xNLS2"],
                                            "n_subjects": 10, "replicates": 2, "estimator": "truth"})
    out = tmp_path / "study"
    assert main(["study", "--config", cfg, "--out", str(out)] + FAST) == 0
    table = rows(out / "table.csv")
    assert table[0] == ["parameter", "LT1xNLS1_bias", "LT1xNLS1_rmse", "LT3xNLS2_bias", "LT3xNLS2_rmse"]
    assert [r[0] for r in table[1:8]] == ["theta_0", "theta_1", "theta_2", "median_1_1", "median_2_1",
                                          "median_2_2", "alpha"]
    assert all(float(v) == 0.0 for r in table[1:8] for v in r[1:])
    reps = rows(out / "replicates.csv")
    assert len(reps) == 5 and all(r[2] == "ok" for r in reps[1:])


def test_study_full_grid_accepted_and_streamed(tmp_path):
    cfg = write_json(tmp_path / "st.json", {"schema_version": 1, "grid": "full", "n_subjects": 3,
                                            "replicates": 1, "estimator": "truth"})
    out = tmp_path / "study"
    assert main(["study", "--config", cfg, "--out", str(out)]) == 0
    assert len(rows(out / "replicates.csv")) == 7
    assert len(rows(out / "table.csv")[0]) == 13


def test_study_posterior_small(tmp_path):
    cfg = write_json(tmp_path / "st.json", {"schema_version": 1, "scenarios": ["LT2xNLS1"], "n_subjects": 40,
                                            "replicates": 1, "chain": {"iterations": 60, "burn_in": 20,
                                                                       "n_chains": 1}})
    out = tmp_path / "study"
    assert main(["study", "--config", cfg, "--out", str(out), "--seed", "2"]) == 0
    reps = rows(out / "replicates.csv")
    assert reps[1][2] == "ok" and all(v for v in reps[1][3:])


@pytest.mark.parametrize("cfg", [
    {"schema_version": 1},
    {"schema_version": 1, "scenarios": ["LT9xNLS1"]},
    {"schema_version": 1, "scenarios": ["LT1xNLS1"], "estimator": "mean"},
    {"schema_version": 1, "scenarios": ["LT1xNLS1"], "replicates": 0},
])
def test_study_config_errors(tmp_path, cfg):
    path = write_json(tmp_path / "st.json", cfg)
    assert main(["study", "--config", path, "--out", str(tmp_path / "o")]) == 1


# ---------------------------------------------------------------- curves


def test_curves_from_fit(tmp_path, dataset):
    fit = tmp_path / "fit"
    assert main(["fit", dataset, "--out", str(fit)] + FAST) == 0
    cfg = write_json(tmp_path / "g.json", {"schema_version": 1, "grid": {"times": [0, 1, 5], "contour_points": 6}})
    for d in ("c1", "c2"):
        assert main(["curves", str(fit), "--config", cfg, "--out", str(tmp_path / d)]) == 0
    assert files(tmp_path / "c1") == files(tmp_path / "c2")
    body = rows(tmp_path / "c1" / "curves.csv")
    kinds = {r[0] for r in body[1:]}
    assert kinds == {"population", "marginal", "conditional", "bivariate-contour", "posterior-density"}
    cond = [r for r in body if r[0] == "conditional" and r[2] == "0.0"]
    assert cond and all(float(r[4]) == 1.0 for r in cond)


def test_curves_errors(tmp_path, dataset):
    assert main(["curves", str(tmp_path), "--out", str(tmp_path / "o")]) == 1
    fit = tmp_path / "fit"
    assert main(["fit", dataset, "--out", str(fit)] + FAST) == 0
    cfg = write_json(tmp_path / "g.json", {"schema_version": 1, "grid": {"times": [0, 30]}})
    assert main(["curves", str(fit), "--config", cfg, "--out", str(tmp_path / "o")]) == 1


# ---------------------------------------------------------------- entry point


def test_console_script(tmp_path):
    exe = shutil.which("multicure")
    cmd = [exe] if exe else [sys.executable, "-m", "multicure.cli"]
    res = subprocess.run(cmd + ["simulate", "--out", str(tmp_path / "x"), "--seed", "2"],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    res = subprocess.run(cmd + ["--version"], capture_output=True, text=True)
    assert res.stdout.strip() == "0.1.0"
