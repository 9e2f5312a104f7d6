import json

import numpy as np
import pytest

from dcoe.baselines import evaluate
from dcoe.cli import main
from dcoe.depmodels import Autoregressive
from dcoe.proportion import IndependentGaussian, NullCalibration, estimate_pi, quantile_level
from dcoe.simharness import Constant, DcoeMethod, ExperimentSpec, _Sampler
from dcoe.statvector import load_z_file, write_index_file, write_z_file

from conftest import validate


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def error_of(err):
    doc = json.loads(err.strip().splitlines()[-1])
    assert set(doc) == {"error", "message"}
    return doc


@pytest.fixture(scope="module")
def model1_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("m1")
    spec = ExperimentSpec(2000, 0.3, Constant(5.0), Autoregressive(0.2), [DcoeMethod(0.1)], 1, 2024)
    stats = _Sampler(spec).draw(0)
    write_z_file(d / "z.txt", stats.z)
    write_index_file(d / "truth.txt", stats.truth)
    return d, stats


@pytest.fixture(scope="module")
def calib_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cal") / "c.json"
    assert main(["calibrate", "--p", "2000", "--n", "500", "--null", "independent", "--seed", "7", "--out", str(path)]) == 0
    return path


def test_calibrate_writes_file(calib_file, capsys):
    doc = json.loads(calib_file.read_text())
    validate(doc, "calibration")
    assert doc["quantile_level"] == pytest.approx(0.6373, abs=5e-5)
    assert doc["quantile_level"] == pytest.approx(quantile_level(2000), rel=1e-9)


def test_calibrate_prints_constants(tmp_path, capsys):
    code, out, _ = run(capsys, "calibrate", "--p", 50, "--n", 100, "--out", tmp_path / "c.json")
    assert code == 0 and "c_p_05=" in out and "c_p_1=" in out and "quantile_level=" in out


@pytest.mark.parametrize("argv", [["calibrate", "--n", "500", "--out", "x.json"],
                                  ["calibrate", "--p", "2000", "--n", "10", "--out", "x.json"],
                                  ["calibrate", "--p", "20", "--null", "covariance", "--out", "x.json"],
                                  ["frobnicate"],
                                  []])
def test_usage_errors_exit_2(argv, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    code, _, err = run(capsys, *argv)
    assert code == 2
    assert error_of(err)["error"] == "UsageError"
    assert not (tmp_path / "x.json").exists()


def test_covariance_null_via_json(tmp_path, capsys):
    code, _, _ = run(capsys, "calibrate", "--p", 60, "--n", 100, "--null", "covariance",
                     "--covariance", '{"type": "block", "block_size": 10, "within_corr": 0.5}',
                     "--out", tmp_path / "c.json")
    assert code == 0
    assert json.loads((tmp_path / "c.json").read_text())["null_source"]["covariance"]["type"] == "block"


def test_external_null(tmp_path, capsys):
    np.savetxt(tmp_path / "null.csv", np.random.default_rng(0).standard_normal((100, 30)), delimiter=",")
    code, _, _ = run(capsys, "calibrate", "--p", 30, "--n", 100, "--null", "external",
                     "--matrix", tmp_path / "null.csv", "--out", tmp_path / "c.json")
    assert code == 0
    code, _, err = run(capsys, "calibrate", "--p", 30, "--n", 120, "--null", "external",
                       "--matrix", tmp_path / "null.csv", "--out", tmp_path / "c2.json")
    assert code == 2


def test_estimate_pi_null_and_saturated(tmp_path, calib_file, capsys):
    write_z_file(tmp_path / "null.txt", np.random.default_rng(11).standard_normal(2000))
    code, out, _ = run(capsys, "estimate-pi", "--z", tmp_path / "null.txt", "--calibration", calib_file,
                       "--out", tmp_path / "pi.json")
    assert code == 0
    doc = json.loads((tmp_path / "pi.json").read_text())
    validate(doc, "proportion")
    expected = estimate_pi(load_z_file(tmp_path / "null.txt"), NullCalibration.load(calib_file))
    assert doc["pi_hat"] == pytest.approx(expected.pi_hat, rel=1e-9, abs=1e-12)
    assert doc["pi_hat"] < 0.01

    write_z_file(tmp_path / "sat.txt", np.full(2000, 10.0))
    code, out, _ = run(capsys, "estimate-pi", "--z", tmp_path / "sat.txt", "--calibration", calib_file)
    assert code == 0
    doc = json.loads(out[out.index("{"):])
    validate(doc, "proportion")
    assert doc["pi_hat"] >= 0.99


def test_estimate_pi_size_mismatch(tmp_path, calib_file, capsys):
    write_z_file(tmp_path / "z.txt", np.zeros(1999))
    code, _, err = run(capsys, "estimate-pi", "--z", tmp_path / "z.txt", "--calibration", calib_file)
    assert code == 2 and "p=" in error_of(err)["message"]


def test_select_known_s_equal_p(tmp_path, capsys):
    z = np.random.default_rng(1).standard_normal(40)
    write_z_file(tmp_path / "z.txt", z)
    code, out, _ = run(capsys, "select", "--z", tmp_path / "z.txt", "--beta", 0.5, "--s", "known:40",
                       "--out", tmp_path / "r.json")
    assert code == 0 and "selected" in out
    doc = json.loads((tmp_path / "r.json").read_text())
    validate(doc, "selection")
    assert doc["s_source"] == "Known" and doc["s_used"] == 40
    # s = p: estimate 1 - k/p falls below 0.5 first at k = 21.
    assert doc["k_selected"] == 20 and doc["crossing_rank"] == 21
    assert (tmp_path / "r_trace.csv").read_text().splitlines()[0] == "rank,index,t,fnp_hat"


def test_select_nested_through_cli(tmp_path, model1_files, capsys):
    d, _ = model1_files
    sets = {}
    for beta in (0.1, 0.2):
        out = tmp_path / f"r{beta}.json"
        assert main(["select", "--z", str(d / "z.txt"), "--beta", str(beta), "--s", "known:205", "--out", str(out)]) == 0
        sets[beta] = set(json.loads(out.read_text())["selected"])
    assert sets[0.2] <= sets[0.1]


def test_select_with_truth_reports_metrics(tmp_path, model1_files, capsys):
    d, stats = model1_files
    out = tmp_path / "r.json"
    code, _, _ = run(capsys, "select", "--z", d / "z.txt", "--beta", 0.1, "--s", "known:205",
                     "--truth", d / "truth.txt", "--out", out)
    assert code == 0
    doc = json.loads(out.read_text())
    validate(doc, "selection")
    m = evaluate(doc["selected"], stats, "DCOE")
    assert doc["metrics"] == pytest.approx({"fnp": m.fnp, "fdp": m.fdp, "fm_index": m.fm_index, "n_selected": m.n_selected})


def test_select_estimated(tmp_path, model1_files, calib_file, capsys):
    d, _ = model1_files
    out = tmp_path / "r.json"
    code, _, _ = run(capsys, "select", "--z", d / "z.txt", "--beta", 0.1, "--s", f"estimate:{calib_file}", "--out", out)
    assert code == 0
    doc = json.loads(out.read_text())
    validate(doc, "selection")
    assert doc["s_source"] == "Estimated" and doc["warning"] is None
    assert doc["s_used"] == pytest.approx(2000 * doc["proportion"]["pi_hat"])


def test_select_degenerate_proportion(tmp_path, capsys, monkeypatch):
    # Bounding constants this large force both estimators below zero.
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    NullCalibration(200, 100, 1e3, 1e3, IndependentGaussian(), 0).save(tmp_path / "c.json")
    write_z_file(tmp_path / "z.txt", np.random.default_rng(11).standard_normal(200))
    out = tmp_path / "r.json"
    code, stdout, _ = run(capsys, "select", "--z", tmp_path / "z.txt", "--beta", 0.1,
                          "--s", f"estimate:{tmp_path / 'c.json'}", "--out", out)
    assert code == 0 and "DegenerateProportion" in stdout
    doc = json.loads(out.read_text())
    validate(doc, "selection")
    assert doc["warning"] == "DegenerateProportion" and doc["k_selected"] == 0 and doc["s_source"] == "Estimated"


@pytest.mark.parametrize("extra", [["--beta", "1.0", "--s", "known:3"], ["--beta", "0.1", "--s", "known:-1"],
                                   ["--beta", "0.1", "--s", "guess"], ["--beta", "0.1", "--s", "known:99"]])
def test_select_validation(tmp_path, extra, capsys):
    write_z_file(tmp_path / "z.txt", np.arange(10.0))
    code, _, err = run(capsys, "select", "--z", tmp_path / "z.txt", *extra, "--out", tmp_path / "r.json")
    assert code == 2 and error_of(err)
    assert not (tmp_path / "r.json").exists()


def test_select_unreadable_z(tmp_path, capsys):
    (tmp_path / "z.txt").write_text("1.0\nabc\n")
    code, _, err = run(capsys, "select", "--z", tmp_path / "z.txt", "--beta", 0.1, "--s", "known:1", "--out", tmp_path / "r.json")
    assert code == 2


def test_theory(capsys):
    code, out, _ = run(capsys, "theory", "--gamma", 0.3, "--eta", 0.95, "--p", 2000)
    assert code == 0
    doc = json.loads(out)
    validate(doc, "theory")
    assert doc["mu1"] == pytest.approx(2.1356, abs=1e-4)
    assert doc["phase_boundary"] == pytest.approx(-0.35)
    code, _, err = run(capsys, "theory", "--gamma", 0.3, "--eta", 1.5, "--p", 2000)
    assert code == 2


def test_reproduce_table1_small(tmp_path, capsys):
    code, out, _ = run(capsys, "reproduce", "--experiment", "table1", "--model", "ar", "--A", 3, "--reps", 5,
                       "--out-dir", tmp_path)
    assert code == 0 and "DCOE(beta=0.2)" in out
    summary = (tmp_path / "table1_ar_summary.csv").read_text().splitlines()
    assert summary[0] == "method,mean_fnp,sd_fnp,mean_fdp,sd_fdp,mean_fm,sd_fm"
    assert len(summary) == 5
    cfg = json.loads((tmp_path / "table1_ar_config.json").read_text())
    validate(cfg, "experiment_config")
    assert cfg["n_replications"] == 5 and cfg["signal_strength"] == {"A": 3.0, "type": "constant"}


def test_reproduce_figure3_mu_min_column(tmp_path, capsys):
    code, _, _ = run(capsys, "reproduce", "--experiment", "figure3", "--model", "ar", "--reps", 2, "--out-dir", tmp_path)
    assert code == 0
    lines = (tmp_path / "figure3_ar_curve.csv").read_text().splitlines()
    header = lines[0].split(",")
    assert header == ["replication", "rank", "t", "fnp_hat", "fnp_true", "abs_diff", "mu1", "mu2", "mu_min"]
    assert len(lines) == 1 + 2 * 2000
    mu_min = {float(line.split(",")[-1]) for line in lines[1:]}
    assert len(mu_min) == 1 and mu_min.pop() == pytest.approx(1.687, abs=1e-3)
    validate(json.loads((tmp_path / "figure3_ar_config.json").read_text()), "experiment_config")


def test_reproduce_grid(tmp_path, capsys):
    code, _, _ = run(capsys, "reproduce", "--experiment", "grid", "--out-dir", tmp_path)
    assert code == 0
    mask = (tmp_path / "grid_mask_truth.txt").read_text()
    assert mask.count("1") == 994 and len(mask.splitlines()) == 100
    assert (tmp_path / "grid_metrics.csv").exists()


def test_reproduce_config_file(tmp_path, capsys):
    cfg = {"kind": "experiment", "name": "mine", "p": 200, "gamma": 0.5, "n_replications": 3, "master_seed": 1,
           "signal_strength": {"type": "constant", "A": 4.0}, "covariance": {"type": "identity"},
           "methods": [{"type": "dcoe", "beta": 0.2}, {"type": "bh", "alpha": 0.05}]}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    code, _, _ = run(capsys, "reproduce", "--config", tmp_path / "cfg.json", "--out-dir", tmp_path / "o")
    assert code == 0 and (tmp_path / "o" / "mine_raw.csv").exists()


def test_reproduce_errors(tmp_path, capsys):
    assert run(capsys, "reproduce", "--out-dir", tmp_path)[0] == 2
    (tmp_path / "bad.json").write_text('{"kind": "experiment", "methods": []}')
    code, _, err = run(capsys, "reproduce", "--config", tmp_path / "bad.json", "--out-dir", tmp_path)
    assert code == 2 and error_of(err)


def test_seed_env_override(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    main(["calibrate", "--p", "30", "--n", "100", "--seed", "1", "--out", str(tmp_path / "a.json")])
    monkeypatch.setenv("DCOE_SEED", "99")
    main(["calibrate", "--p", "30", "--n", "100", "--seed", "1", "--out", str(tmp_path / "b.json")])
    main(["calibrate", "--p", "30", "--n", "100", "--seed", "99", "--out", str(tmp_path / "c.json")])
    a, b, c = (json.loads((tmp_path / f"{n}.json").read_text()) for n in "abc")
    assert b["master_seed"] == 99 and b == c and a != b


def test_runtime_failure_exit_1(tmp_path, capsys, monkeypatch):
    import dcoe.cli as cli

    def boom(*a, **k):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(cli, "theory_boundaries", boom)
    code, _, err = run(capsys, "theory", "--gamma", 0.3, "--eta", 0.5, "--p", 100)
    assert code == 1 and error_of(err) == {"error": "RuntimeError", "message": "disk on fire"}
