import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from amortsmc import made
from amortsmc.cli import (
    BENCH_HEADER,
    EXIT_DEGENERATE,
    EXIT_OK,
    EXIT_RUNTIME,
    EXIT_USAGE,
    METRIC_HEADER,
    OUT_ENV,
    RunConfig,
    UsageError,
    main,
    parse_overrides,
    parse_value,
)
from amortsmc.models import build, toy_log_evidence
from amortsmc.training import TrainArtifact

GOLDEN = Path(__file__).parent / "golden"
QUICK = ["--set", "n_epochs=2", "--set", "n_train=200", "--set", "n_validate=50", "--set", "minibatch=50"]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def metric(rows, name):
    return [r for r in rows if r["metric"] == name]


# -- parsing ----------------------------------------------------------------------

def test_parse_values():
    assert parse_value("3") == 3 and parse_value("0.5") == 0.5
    assert parse_value("16,16") == (16, 16) and parse_value("8,") == (8,)
    assert parse_value("multinomial") == "multinomial"
    assert parse_overrides(["N=3", "hidden=4,4"]) == {"N": 3, "hidden": (4, 4)}
    with pytest.raises(UsageError):
        parse_overrides(["N"])


def test_run_config_contract():
    with pytest.raises(UsageError, match="artifact"):
        RunConfig("infer", "pump", proposal="learned")
    with pytest.raises(UsageError):
        RunConfig("infer", "pump", particles=0)
    with pytest.raises(UsageError):
        RunConfig("benchmark", "pump")
    RunConfig("infer", "pump", proposal="learned", artifact=Path("a.json"))


@pytest.mark.parametrize("argv", [
    [],
    ["train"],
    ["infer", "--model", "ising"],
    ["infer", "--model", "pump", "-K", "0"],
    ["infer", "--model", "pump", "--proposal", "learned"],
    ["infer", "--model", "pump", "--set", "colour=red"],
    ["infer", "--model", "pump", "--set", "scheme=residual"],
    ["benchmark", "--model", "pump"],
])
def test_usage_errors_exit_1(argv, tmp_path, capsys):
    assert main(argv + ["--out", str(tmp_path)] if argv else argv) == EXIT_USAGE
    assert capsys.readouterr().err


def test_help_exits_0(capsys):
    assert main(["--help"]) == EXIT_OK
    assert "amortsmc" in capsys.readouterr().out


def test_missing_artifact_is_runtime_error(tmp_path, capsys):
    code = main(["infer", "--model", "pump", "--proposal", "learned", "--artifact", str(tmp_path / "none.json"),
                 "--out", str(tmp_path)])
    assert code == EXIT_RUNTIME and "does not exist" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_degenerate_weights_exit_3(tmp_path, capsys):
    code = main(["infer", "--model", "conjugate-toy", "-K", "10", "--set", "noise_var=1e-320", "--out", str(tmp_path)])
    assert code == EXIT_DEGENERATE and "degenerate" in capsys.readouterr().err


# -- inspect ---------------------------------------------------------------------------

@pytest.mark.parametrize("name,argv", [
    ("conjugate-toy", ["--model", "conjugate-toy"]),
    ("pump", ["--model", "pump"]),
    ("regression-N2", ["--model", "regression", "--set", "N=2"]),
])
def test_inspect_matches_golden(name, argv, capsys):
    assert main(["inspect"] + argv) == EXIT_OK
    assert capsys.readouterr().out == (GOLDEN / f"inspect-{name}.txt").read_text()


def test_inspect_regression_single_factor(capsys):
    main(["inspect", "--model", "regression"])
    out = capsys.readouterr().out
    assert "inverse factors: 1" in out and "(w2, w1, w0) |" in out


def test_inspect_pump_two_networks(capsys):
    main(["inspect", "--model", "pump"])
    out = capsys.readouterr().out
    assert "networks: 2" in out and out.count("[shared: pump]") == 10


@pytest.mark.parametrize("name", ["conjugate-toy", "regression", "pump", "fhmm"])
def test_every_model_round_trips_through_inspect(name, capsys):
    assert main(["inspect", "--model", name]) == EXIT_OK
    out = capsys.readouterr().out
    bundle = build(name)
    assert f"inverse factors: {len(bundle.inverse.factors)}" in out
    for f in bundle.inverse.factors:
        assert f.describe() in out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "amortsmc", "inspect", "--model", "conjugate-toy"],
                         capture_output=True, text=True, check=True)
    assert res.stdout == (GOLDEN / "inspect-conjugate-toy.txt").read_text()


# -- train ---------------------------------------------------------------------------

def test_train_toy_trace_and_artifact(tmp_path, capsys):
    assert main(["train", "--model", "conjugate-toy", "--seed", "3", "--out", str(tmp_path)]) == EXIT_OK
    art = TrainArtifact.load(tmp_path / "conjugate-toy-artifact.json")
    rows = read_csv(tmp_path / "conjugate-toy-train-trace.csv")
    assert {r["network"] for r in rows} == set(art.specs)
    assert all(r["seed"] == "3" for r in rows)
    nll = [float(r["validation_nll"]) for r in rows]
    assert nll[-1] < nll[0]
    manifest = json.loads((tmp_path / "conjugate-toy-train-manifest.json").read_text())
    assert manifest["wall_time_seconds"] < 60


def test_train_with_no_steps_keeps_initialization(tmp_path):
    assert main(["train", "--model", "conjugate-toy", "--out", str(tmp_path), "--set", "max_steps_per_epoch=0"]
                + QUICK) == EXIT_OK
    art = TrainArtifact.load(tmp_path / "conjugate-toy-artifact.json")
    spec = art.specs["factor0"]
    (ss,) = np.random.SeedSequence(0).spawn(1)
    init = made.init_network(spec.shape, np.random.default_rng(ss), cond_transform=spec.cond_transform,
                             target_transform=spec.target_transform)
    assert made.network_to_dict(art.networks["factor0"]) == made.network_to_dict(init)


@pytest.mark.parametrize("model,extra", [
    ("conjugate-toy", []),
    ("pump", ["--set", "hidden=8"]),
    ("fhmm", ["--set", "D=2", "--set", "T=3", "--set", "transition_hidden=8", "--set", "initial_hidden=8"]),
])
def test_train_and_infer_are_byte_identical(tmp_path, model, extra):
    runs = []
    for d in ("a", "b"):
        out = tmp_path / d
        assert main(["train", "--model", model, "--seed", "5", "--out", str(out)] + QUICK + extra) == EXIT_OK
        art = out / f"{model}-artifact.json"
        assert main(["infer", "--model", model, "--proposal", "learned", "--artifact", str(art), "-K", "50",
                     "--seed", "9", "--out", str(out)] + extra) == EXIT_OK
        runs.append(out)
    for name in (f"{model}-artifact.json", f"{model}-train-trace.csv", f"{model}-infer-learned-K50-seed9.csv"):
        assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes()


# -- infer ---------------------------------------------------------------------------

def test_infer_metrics_file(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path))
    assert main(["infer", "--model", "fhmm", "--set", "D=2", "--set", "T=4", "-K", "40", "--seed", "2"]) == EXIT_OK
    path = tmp_path / "fhmm-infer-prior-K40-seed2.csv"
    rows = read_csv(path)
    assert tuple(rows[0]) == METRIC_HEADER
    assert all(r["seed"] == "2" and r["K"] == "40" for r in rows)
    assert [int(r["step"]) for r in metric(rows, "ess")] == [1, 2, 3, 4]
    assert len(metric(rows, "posterior_mean")) == 8
    manifest = json.loads(path.with_suffix(".json").read_text())
    (z,) = metric(rows, "log_evidence")
    assert float(z["value"]) == manifest["log_evidence"]  # repr round-trips exactly


def test_pump_fixture_prior_smoke(tmp_path):
    assert main(["infer", "--model", "pump", "-K", "10000", "--out", str(tmp_path)]) == EXIT_OK
    (z,) = metric(read_csv(tmp_path / "pump-infer-prior-K10000-seed0.csv"), "log_evidence")
    assert np.isfinite(float(z["value"]))


def test_pump_data_file_sets_plate_size(tmp_path):
    data = tmp_path / "pumps.txt"
    data.write_text("# t y\n10.0 1\n20.0 4\n5.5 0\n")
    assert main(["infer", "--model", "pump", "-K", "100", "--data", str(data), "--out", str(tmp_path)]) == EXIT_OK
    rows = metric(read_csv(tmp_path / "pump-infer-prior-K100-seed0.csv"), "posterior_mean")
    assert {r["variable"] for r in rows} == {"alpha", "beta", "theta[1]", "theta[2]", "theta[3]"}


def test_regression_wrong_size_is_rejected(tmp_path, capsys):
    assert main(["train", "--model", "regression", "--set", "N=3", "--set", "hidden=8", "--out", str(tmp_path)]
                + QUICK) == EXIT_OK
    data = tmp_path / "reg.txt"
    np.savetxt(data, np.column_stack([np.linspace(-1, 1, 5), np.arange(5.0)]))
    capsys.readouterr()
    code = main(["infer", "--model", "regression", "--proposal", "learned", "--artifact",
                 str(tmp_path / "regression-artifact.json"), "--data", str(data), "--out", str(tmp_path)])
    assert code == EXIT_RUNTIME
    assert "N=3" in capsys.readouterr().err


def test_toy_learned_evidence(tmp_path, toy_artifact):
    art = tmp_path / "toy.json"
    toy_artifact.save(art)
    assert main(["infer", "--model", "conjugate-toy", "--proposal", "learned", "--artifact", str(art),
                 "-K", "1000", "--out", str(tmp_path)]) == EXIT_OK
    (z,) = metric(read_csv(tmp_path / "conjugate-toy-infer-learned-K1000-seed0.csv"), "log_evidence")
    exact = toy_log_evidence(1.0)
    assert abs(float(z["value"]) - exact) < 0.02 * abs(exact)


def test_toy_data_file(tmp_path):
    data = tmp_path / "y.txt"
    data.write_text("2.0\n")
    assert main(["infer", "--model", "conjugate-toy", "-K", "20000", "--data", str(data), "--out", str(tmp_path)]) == 0
    (m,) = metric(read_csv(tmp_path / "conjugate-toy-infer-prior-K20000-seed0.csv"), "posterior_mean")
    assert abs(float(m["value"]) - 1.0) < 0.05


# -- benchmark -------------------------------------------------------------------

def test_benchmark_row_counts(tmp_path, toy_artifact):
    art = tmp_path / "toy.json"
    toy_artifact.save(art)
    assert main(["benchmark", "--model", "conjugate-toy", "--artifact", str(art), "--set", "grid=5,10,50",
                 "--set", "seeds=3", "--out", str(tmp_path)]) == EXIT_OK
    rows = read_csv(tmp_path / "conjugate-toy-benchmark.csv")
    assert tuple(rows[0]) == BENCH_HEADER
    assert len(rows) == 3 * 3 * 2
    summary = read_csv(tmp_path / "conjugate-toy-benchmark-summary.csv")
    assert len(summary) == 3 * 2 and all(r["n_seeds"] == "3" for r in summary)
    assert not (tmp_path / "conjugate-toy-ancestry.csv").exists()


def test_fhmm_benchmark_writes_ancestry_traces(tmp_path):
    extra = ["--set", "D=2", "--set", "T=4", "--set", "transition_hidden=8", "--set", "initial_hidden=8"]
    assert main(["train", "--model", "fhmm", "--out", str(tmp_path)] + QUICK + extra) == EXIT_OK
    assert main(["benchmark", "--model", "fhmm", "--artifact", str(tmp_path / "fhmm-artifact.json"),
                 "--set", "grid=5", "--set", "seeds=2", "--set", "ancestry_K=20", "--out", str(tmp_path)]) == 0
    assert len(read_csv(tmp_path / "fhmm-benchmark.csv")) == 1 * 2 * 2
    anc = read_csv(tmp_path / "fhmm-ancestry.csv")
    assert len(anc) == 2 * 2 * 4
    assert all(1 <= int(r["unique_ancestries"]) <= 20 for r in anc)
