import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from harnacklab import cli
from harnacklab.config import ConfigError, ExperimentConfig
from harnacklab.control import ControlFunction
from harnacklab.spectral import SpectralOperator
from harnacklab.testfunctions import TestFunction, battery
from harnacklab.verify import (
    CheckReport,
    MCEstimate,
    check_regularity,
    entropy_estimate,
    gaussian_expectation,
    identity_verdict,
    inequality_verdict,
    log_sobolev_constant,
    regularity_integrals,
)


# --- estimators and verdicts ------------------------------------------------

def test_deterministic_samples_have_zero_stderr():
    est = MCEstimate.from_samples(np.full(100, 2.5))
    assert est.mean == 2.5 and est.stderr == 0.0


def test_verdict_thresholds():
    assert identity_verdict(2.9, 0.1, None) == "pass"
    assert identity_verdict(3.1, 0.1, None) == "fail"
    assert identity_verdict(1.0, 0.1, 0.01) == "inconclusive"
    assert inequality_verdict(0.29, 0.1, None) == "pass"
    assert inequality_verdict(0.31, 0.1, None) == "fail"
    assert inequality_verdict(-5.0, 0.1, 0.01) == "inconclusive"


def test_report_rejects_unknown_verdict():
    with pytest.raises(ValueError):
        CheckReport("x", "t", "maybe", {})


@given(st.lists(st.floats(0.01, 20.0), min_size=2, max_size=50))
def test_normalised_entropy_is_nonnegative(r):
    H, _ = entropy_estimate(np.array(r))
    assert H >= -1e-12


def test_entropy_of_constant_density_is_zero():
    H, infl = entropy_estimate(np.full(10, 3.0))
    assert H == pytest.approx(0.0, abs=1e-14)
    assert np.allclose(infl, 0.0)


def test_gaussian_expectation_moments():
    assert gaussian_expectation(lambda z: z ** 2, 1.0, 0.25) == pytest.approx(1.25, rel=1e-10)
    assert gaussian_expectation(np.cos, 0.0, 1.0) == pytest.approx(np.exp(-0.5), rel=1e-10)


def test_log_sobolev_constant_without_drift_is_two():
    assert log_sobolev_constant(0.0, 1.5) == pytest.approx(2.0)
    assert log_sobolev_constant(0.0, 1.5, segment=True) == pytest.approx(5.0)
    assert log_sobolev_constant(0.5, 1.0) == pytest.approx(2 * (1 + 0.5 * np.exp(0.5)))


# --- maximal regularity -------------------------------------------------------

def test_regularity_single_mode_oracle():
    # v(t) = 1 - e^{-t}, so int |A v|^2 = int (1 - e^{-t})^2 dt on [0, 1]
    f = ControlFunction(np.ones((257, 1)), 1 / 256)
    Av2, dv2, f2 = regularity_integrals(SpectralOperator(np.array([1.0])), f)
    assert Av2 == pytest.approx(0.168091, abs=1e-6)
    assert dv2 == pytest.approx((1 - np.exp(-2)) / 2, rel=1e-10)
    assert f2 == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_regularity_inequalities_hold(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    A = SpectralOperator(np.sort(rng.uniform(0.1, 50.0, n)))
    f = ControlFunction(rng.standard_normal((int(rng.integers(3, 40)), n)), 0.05)
    assert check_regularity(A, f).passed


# --- test functions -----------------------------------------------------------

@pytest.mark.parametrize("kind", ["coordinate", "bounded-smooth", "indicator-smoothed",
                                  "positive-exp"])
def test_test_function_derivatives(kind):
    f = TestFunction.endpoint(kind, [1.0])
    z = np.linspace(-2, 2, 41)
    fd = (f.g(z + 1e-6) - f.g(z - 1e-6)) / 2e-6
    assert np.allclose(f.dg(z), fd, atol=1e-6)
    assert np.all(f.g(z) >= f.lower_bound - 1e-12)


def test_raw_indicator_has_no_gradient():
    with pytest.raises(TypeError):
        TestFunction.endpoint("indicator", [1.0]).dg(0.0)


def test_battery_sizes():
    assert len(battery(4, harnack=True)) == 4
    assert all(f.nonnegative for f in battery(4, harnack=True))
    assert all(f.differentiable for f in battery(4, harnack=False))


# --- configuration ------------------------------------------------------------

configs = st.fixed_dictionaries({
    "model": st.fixed_dictionaries({
        "kind": st.sampled_from(["delay", "evolution"]),
        "n": st.integers(1, 16),
        "drift": st.sampled_from(["linear", "bounded-smooth", "zero"]),
        "sigma": st.floats(0.1, 3.0),
    }),
    "run": st.fixed_dictionaries({
        "step": st.sampled_from([0.25, 0.125, 0.0625, 0.015625]),
        "seed": st.integers(0, 2 ** 32),
        "p": st.lists(st.floats(1.01, 10.0), min_size=1, max_size=3),
    }),
})


@given(configs)
def test_config_round_trip_is_idempotent(data):
    cfg = ExperimentConfig.from_dict(data)
    text = cfg.dumps()
    import tomli
    again = ExperimentConfig.from_dict(tomli.loads(text))
    assert again == cfg
    assert again.dumps() == text


@pytest.mark.parametrize("data, needle", [
    ({"run": {"bogus": 1}}, "bogus"),
    ({"extra": {}}, "extra"),
    ({"run": {"step": 0.3}}, "divide"),
    ({"run": {"p": [0.5]}}, "p must exceed 1"),
    ({"model": {"kind": "other"}}, "kind"),
    ({"model": {"tau": -1.0}}, "tau"),
])
def test_config_rejections(data, needle):
    with pytest.raises(ConfigError, match=needle):
        ExperimentConfig.from_dict(data)


def test_malformed_toml_is_config_error(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[run\nstep = ")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(p)


# --- CLI ------------------------------------------------------------------------

def test_cli_control_suite_passes(tmp_path):
    code = cli.run(["check", "control", "--seed", "7", "--out", str(tmp_path)])
    assert code == 0
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["seed"] == 7 and len(doc["determinism_hash"]) == 64
    assert "wall_time" in doc
    assert (tmp_path / "summary.csv").read_text().startswith("check,tag,variant")


def test_cli_rejects_small_p_before_simulation(tmp_path, monkeypatch):
    called = []
    monkeypatch.setattr(cli, "run_suite", lambda *a: called.append(a))
    assert cli.run(["check", "harnack-delay", "--p", "0.5", "--out", str(tmp_path)]) == 2
    assert not called


def test_cli_config_error_exit(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[model]\nunknown_key = 3\n")
    assert cli.run(["check", "control", "--config", str(cfg)]) == 2


def test_cli_unwritable_output(tmp_path):
    target = tmp_path / "file"
    target.write_text("")
    assert cli.run(["check", "regularity", "--out", str(target / "sub")]) == 2


def test_cli_zero_shift_is_trivial_pass(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[shift]\neta = "zero"\n[run]\nn_paths = 500\n')
    assert cli.run(["check", "ibp-delay", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "report.json").read_text())
    ibp = [r for r in doc["reports"] if r["check"] == "ibp_delay"]
    assert ibp and all(r["trivial"] for r in ibp)


def test_emit_rejects_empty_report(tmp_path):
    with pytest.raises(ValueError):
        cli.emit_report([], tmp_path)


def test_exit_aggregation():
    assert cli.aggregate_exit(["pass", "pass", "fail"]) == 1
    assert cli.aggregate_exit(["pass", "inconclusive"]) == 3
    assert cli.aggregate_exit(["pass", "inconclusive", "fail"]) == 1
    assert cli.aggregate_exit(["pass"]) == 0


def test_reports_identical_apart_from_wall_time(tmp_path):
    docs = []
    for k in range(2):
        out = tmp_path / "run"
        assert cli.run(["check", "regularity", "--out", str(out)]) == 0
        doc = json.loads((out / "report.json").read_text())
        doc.pop("wall_time")
        docs.append(doc)
    assert docs[0] == docs[1]


def test_dump_paths_writes_trajectories(tmp_path):
    code = cli.run(["check", "ibp-pathspace", "--samples", "300", "--dump-paths",
                    "--out", str(tmp_path)])
    assert code == 0
    header = (tmp_path / "paths.csv").read_text().splitlines()[0]
    assert header.startswith("report,check,time,x1")


def test_list_and_oracle(capsys):
    assert cli.run(["list"]) == 0
    assert "harnack-evolution" in capsys.readouterr().out
    assert cli.run(["oracle"]) == 0
    vals = json.loads(capsys.readouterr().out)
    assert vals["min_energy_single_mode"] == pytest.approx(2.313035, abs=1e-6)
