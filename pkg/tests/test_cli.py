"""Command-line front end: all five subcommands, config handling, exit
codes."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from lfrid.cli import main
from lfrid.lfr import DeltaStructure, LfrPlant
from lfrid.model import LfrModel, write_model
from lfrid.sched import SchedulingNet
from lfrid.train import ParamLayout, TrainConfig, build_model, init_params


@pytest.fixture
def runner():
    return CliRunner()


def small_config(tmp_path, **training):
    """A tiny but end-to-end-complete experiment config using CSVs written
    by `generate` (so `train` does not regenerate the benchmark)."""
    cfg = {
        "dataset": {
            "train_csv": str(tmp_path / "nl-msd-train.csv"),
            "val_csv": str(tmp_path / "nl-msd-val.csv"),
        },
        "model": {"mode": "rational", "n_x": 1, "eta": [1], "hidden": []},
        "training": {"restarts": 1, "adam_epochs": 5, "lbfgs_epochs": 5,
                     "seed": 0, **training},
        "output": {"dir": str(tmp_path / "run")},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def write_tiny_dataset(path, N=80, n_u=1, n_y=1, seed=0):
    from lfrid.bench import Dataset, write_csv
    rng = np.random.default_rng(seed)
    ds = Dataset(name="tiny", u=rng.normal(size=(N, n_u)),
                 y=rng.normal(size=(N, n_y)), ts=0.1)
    write_csv(ds, path)


def tiny_model(mode="rational", seed=0):
    cfg = TrainConfig(mode=mode, n_x=1, eta=(1,))
    layout = ParamLayout(cfg, 1, 1)
    return build_model(cfg, layout, init_params(cfg, 1, 1, rng=seed))


# --------------------------------------------------------------- generate

def test_generate_writes_three_csvs(runner, tmp_path):
    res = runner.invoke(main, ["generate", "--seed", "1", "--split", "train",
                               "--split", "val", "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    assert (tmp_path / "nl-msd-train.csv").exists()
    assert (tmp_path / "nl-msd-val.csv").exists()
    assert not (tmp_path / "nl-msd-test.csv").exists()
    assert (tmp_path / "nl-msd-train.csv.meta.json").exists()
    assert "N=6000" in res.output


def test_generate_unknown_benchmark_exit_1(runner, tmp_path):
    res = runner.invoke(main, ["generate", "--benchmark", "bogus",
                               "--out", str(tmp_path)])
    assert res.exit_code == 1


# ------------------------------------------------------------------ train

def test_train_end_to_end_tiny(runner, tmp_path):
    for split in ("train", "val"):
        write_tiny_dataset(tmp_path / f"nl-msd-{split}.csv",
                           seed=0 if split == "train" else 1)
    cfg_path = small_config(tmp_path)
    res = runner.invoke(main, ["train", "--config", str(cfg_path)])
    assert res.exit_code == 0, res.output
    out = tmp_path / "run"
    assert (out / "model.json").exists()
    assert (out / "summary.json").exists()
    trace = (out / "trace.jsonl").read_text().strip().splitlines()
    assert trace and all("loss" in json.loads(l) for l in trace)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["mode"] == "rational" and summary["restarts"] == 1


def test_train_missing_config_exit_1(runner):
    res = runner.invoke(main, ["train", "--config", "/nonexistent.json"])
    assert res.exit_code == 1


def test_train_invalid_config_exit_1(runner, tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    res = runner.invoke(main, ["train", "--config", str(p)])
    assert res.exit_code == 1


def test_train_determinism_identical_model_documents(runner, tmp_path):
    """Two identical runs must produce byte-identical model documents."""
    for split in ("train", "val"):
        write_tiny_dataset(tmp_path / f"nl-msd-{split}.csv",
                           seed=0 if split == "train" else 1)
    cfg_path = small_config(tmp_path, restarts=2)
    docs = []
    for run in ("a", "b"):
        out = tmp_path / run
        res = runner.invoke(main, ["train", "--config", str(cfg_path),
                                   "--out", str(out)])
        assert res.exit_code == 0, res.output
        docs.append((out / "model.json").read_bytes())
    assert docs[0] == docs[1]


# ------------------------------------------------------------------- eval

def test_eval_reports_bfr_and_mse(runner, tmp_path):
    model = tiny_model()
    mpath = tmp_path / "model.json"
    write_model(model, mpath)
    dpath = tmp_path / "data.csv"
    write_tiny_dataset(dpath)
    res = runner.invoke(main, ["eval", str(mpath), str(dpath),
                               "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    assert "BFR =" in res.output and "MSE =" in res.output
    assert (tmp_path / "eval_trace.csv").exists()


def test_eval_fit_x0_flag(runner, tmp_path):
    model = tiny_model()
    mpath = tmp_path / "model.json"
    write_model(model, mpath)
    dpath = tmp_path / "data.csv"
    write_tiny_dataset(dpath)
    res = runner.invoke(main, ["eval", str(mpath), str(dpath), "--fit-x0"])
    assert res.exit_code == 0, res.output


def test_eval_channel_mismatch_exit_2(runner, tmp_path):
    model = tiny_model()
    mpath = tmp_path / "model.json"
    write_model(model, mpath)
    dpath = tmp_path / "data.csv"
    write_tiny_dataset(dpath, n_u=2)
    res = runner.invoke(main, ["eval", str(mpath), str(dpath)])
    assert res.exit_code == 2


def test_eval_unreadable_model_exit_1(runner, tmp_path):
    dpath = tmp_path / "data.csv"
    write_tiny_dataset(dpath)
    res = runner.invoke(main, ["eval", str(tmp_path / "no.json"), str(dpath)])
    assert res.exit_code == 1


# ----------------------------------------------------------------- verify

def test_verify_wellposed_model(runner, tmp_path):
    mpath = tmp_path / "model.json"
    write_model(tiny_model(), mpath)
    res = runner.invoke(main, ["verify", str(mpath)])
    assert res.exit_code == 0, res.output
    assert "rho(D_zw)" in res.output
    assert "empirical check passed" in res.output


def test_verify_affine_trivial(runner, tmp_path):
    mpath = tmp_path / "model.json"
    write_model(tiny_model(mode="affine"), mpath)
    res = runner.invoke(main, ["verify", str(mpath)])
    assert res.exit_code == 0
    assert "trivially well-posed" in res.output


def test_verify_illposed_exit_3(runner, tmp_path):
    # hand-built plant with D_zw = 2I: singular at p = 0.5
    plant = LfrPlant(
        A_x=np.zeros((1, 1)), B_w=np.ones((1, 1)), B_u=np.ones((1, 1)),
        C_z=np.ones((1, 1)), D_zw=2.0 * np.eye(1), D_zu=np.zeros((1, 1)),
        C_y=np.ones((1, 1)), D_yw=np.zeros((1, 1)), D_yu=np.zeros((1, 1)),
        delta=DeltaStructure((1,)),
    )
    net = SchedulingNet(W_x=np.zeros((1, 1)), W_u=np.zeros((1, 1)),
                        W_d=np.zeros((1, 0)), b=np.zeros(1))
    mpath = tmp_path / "model.json"
    write_model(LfrModel(mode="rational", plant=plant, net=net,
                         x0=np.zeros(1)), mpath)
    res = runner.invoke(main, ["verify", str(mpath)])
    assert res.exit_code == 3
    assert "counterexample" in res.output


# -------------------------------------------------------------- export-ss

def test_export_ss_writes_frozen_matrices(runner, tmp_path):
    mpath = tmp_path / "model.json"
    write_model(tiny_model(), mpath)
    pfile = tmp_path / "points.csv"
    np.savetxt(pfile, np.array([[0.0], [0.5], [-0.5]]), delimiter=",")
    res = runner.invoke(main, ["export-ss", str(mpath), str(pfile),
                               "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    records = json.loads((tmp_path / "frozen_ss.json").read_text())
    assert len(records) == 3
    for rec in records:
        assert "A" in rec and "D" in rec


def test_export_ss_dimension_mismatch_exit_1(runner, tmp_path):
    mpath = tmp_path / "model.json"
    write_model(tiny_model(), mpath)
    pfile = tmp_path / "points.csv"
    np.savetxt(pfile, np.zeros((2, 3)), delimiter=",")
    res = runner.invoke(main, ["export-ss", str(mpath), str(pfile),
                               "--out", str(tmp_path)])
    assert res.exit_code == 1


def test_help_lists_all_subcommands(runner):
    res = runner.invoke(main, ["--help"])
    assert res.exit_code == 0
    for cmd in ("generate", "train", "eval", "verify", "export-ss"):
        assert cmd in res.output
