"""Command-line front end.

Subcommands: generate, train, eval, verify, export-ss.  Experiments are
driven by a JSON config file with dataset / model / training / output
sections; command-line flags override config fields.  The default output
directory can be set through the LFRID_OUT_DIR environment variable.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure,
3 verification failure.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import bench, lfr, train as train_mod
from .errors import AllRestartsFailed, LfridError, SingularPoint
from .model import read_model, write_model

EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_VERIFY = 3


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    raise SystemExit(code)


def _out_dir(explicit: str | None, cfg: dict | None = None) -> Path:
    import os
    if explicit:
        d = Path(explicit)
    elif cfg and cfg.get("output", {}).get("dir"):
        d = Path(cfg["output"]["dir"])
    else:
        d = Path(os.environ.get("LFRID_OUT_DIR", "."))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        _fail(EXIT_USAGE, f"config file not found: {p}")
    try:
        with open(p) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        _fail(EXIT_USAGE, f"config is not valid JSON: {exc}")


@click.group()
def main():
    """Estimate well-posed LPV models in linear fractional representation."""


@main.command()
@click.option("--benchmark", default="nl-msd", show_default=True,
              help="Benchmark name.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--split", "splits", multiple=True,
              type=click.Choice(["train", "val", "test"]),
              help="Limit generation to given splits (default: all three).")
@click.option("--out", default=None, help="Output directory.")
def generate(benchmark, seed, splits, out):
    """Generate benchmark datasets as CSV files with metadata sidecars."""
    if benchmark != "nl-msd":
        _fail(EXIT_USAGE, f"unknown benchmark {benchmark!r} (available: nl-msd)")
    out_dir = _out_dir(out)
    for split in splits or ("train", "val", "test"):
        ds = bench.generate_msd_dataset(split, seed=seed)
        path = out_dir / f"{benchmark}-{split}.csv"
        bench.write_csv(ds, path)
        click.echo(f"wrote {path}  (N={ds.N}, T_s={ds.ts})")


def _dataset_from_config(cfg: dict, split: str) -> bench.Dataset:
    dcfg = cfg.get("dataset", {})
    key = f"{split}_csv"
    if key in dcfg:
        p = Path(dcfg[key])
        if not p.exists():
            _fail(EXIT_USAGE, f"dataset file not found: {p}")
        return bench.read_csv(p)
    name = dcfg.get("benchmark", "nl-msd")
    if name != "nl-msd":
        _fail(EXIT_USAGE, f"unknown benchmark {name!r}")
    return bench.generate_msd_dataset(split, seed=int(dcfg.get("seed", 0)))


def _train_config(cfg: dict, overrides: dict) -> train_mod.TrainConfig:
    mcfg = cfg.get("model", {})
    tcfg = dict(cfg.get("training", {}))
    tcfg.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return train_mod.TrainConfig(
            mode=mcfg.get("mode", "rational"),
            n_x=int(mcfg.get("n_x", 2)),
            eta=tuple(mcfg.get("eta", [1])),
            hidden=tuple(mcfg.get("hidden", [])),
            epsilon=float(mcfg.get("epsilon", 1e-3)),
            adam_epochs=int(tcfg.get("adam_epochs", 1000)),
            lbfgs_epochs=int(tcfg.get("lbfgs_epochs", 4000)),
            adam_step=float(tcfg.get("adam_step", 1e-3)),
            adam_betas=tuple(tcfg.get("adam_betas", (0.9, 0.999))),
            lbfgs_memory=int(tcfg.get("lbfgs_memory", 10)),
            reg_rho=float(tcfg.get("reg_rho", 1e-4)),
            restarts=int(tcfg.get("restarts", 25)),
            seed=int(tcfg.get("seed", 0)),
            normalize_data=bool(tcfg.get("normalize_data", False)),
            n_jobs=int(tcfg.get("n_jobs", 1)),
        )
    except (ValueError, TypeError) as exc:
        _fail(EXIT_USAGE, f"invalid config: {exc}")


@main.command(name="train")
@click.option("--config", "config_path", required=True,
              help="JSON experiment config.")
@click.option("--restarts", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--jobs", type=int, default=None,
              help="Cap on concurrent restarts.")
@click.option("--out", default=None, help="Output directory.")
def train_cmd(config_path, restarts, seed, jobs, out):
    """Run the two-stage multi-start estimation and write the best model."""
    cfg = _load_config(config_path)
    tc = _train_config(cfg, {"restarts": restarts, "seed": seed,
                             "n_jobs": jobs})
    train_ds = _dataset_from_config(cfg, "train")
    val_ds = _dataset_from_config(cfg, "val")
    out_dir = _out_dir(out, cfg)
    trace_path = out_dir / "trace.jsonl"
    t_start = time.perf_counter()
    with open(trace_path, "w") as trace_fh:
        def trace_cb(restart, phase, losses):
            for i, v in enumerate(losses):
                rec = {"restart": restart, "phase": phase, "iter": i,
                       "loss": (v if np.isfinite(v) else None),
                       "elapsed": round(time.perf_counter() - t_start, 3)}
                trace_fh.write(json.dumps(rec) + "\n")
        try:
            result = train_mod.fit(tc, train_ds, val_ds, trace_cb=trace_cb)
        except AllRestartsFailed as exc:
            _fail(EXIT_RUNTIME, str(exc))
    model_path = out_dir / "model.json"
    write_model(result.model, model_path)
    summary = {
        "mode": tc.mode, "n_x": tc.n_x, "n_p": tc.n_p, "eta": list(tc.eta),
        "restarts": tc.restarts, "best_restart": result.best_index,
        "bfr_train": result.bfr_train, "bfr_val": result.bfr_val,
        "wall_seconds": result.wall_seconds,
    }
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=1)
    click.echo(f"wrote {model_path}")
    click.echo(json.dumps(summary, indent=1))


@main.command(name="eval")
@click.argument("model_path")
@click.argument("dataset_path")
@click.option("--fit-x0", is_flag=True,
              help="Re-estimate the initial state on the first 100 samples.")
@click.option("--out", default=None,
              help="Directory for the per-sample trace CSV.")
def eval_cmd(model_path, dataset_path, fit_x0, out):
    """Simulate a model over a dataset and report BFR and MSE."""
    try:
        model = read_model(model_path)
    except (OSError, json.JSONDecodeError, LfridError) as exc:
        _fail(EXIT_USAGE, f"cannot read model: {exc}")
    try:
        data = bench.read_csv(dataset_path)
    except (OSError, LfridError) as exc:
        _fail(EXIT_USAGE, f"cannot read dataset: {exc}")
    if data.n_u != model.plant.n_u or data.n_y != model.plant.n_y \
            or data.n_d != model.net.n_d:
        _fail(EXIT_RUNTIME,
              f"channel mismatch: model expects n_u={model.plant.n_u}, "
              f"n_y={model.plant.n_y}, n_d={model.net.n_d}; dataset has "
              f"n_u={data.n_u}, n_y={data.n_y}, n_d={data.n_d}")
    x0 = model.x0
    if fit_x0:
        x0 = _estimate_x0(model, data, n_fit=min(100, data.N))
    try:
        traj = model.simulate(data.u, d=data.d, x0=x0)
    except LfridError as exc:
        _fail(EXIT_RUNTIME, f"simulation failed: {exc}")
    score = bench.bfr(data.y, traj.y)
    mse = float(np.mean((data.y - traj.y) ** 2))
    click.echo(f"BFR = {score:.4f} %")
    click.echo(f"MSE = {mse:.6e}")
    out_dir = _out_dir(out) if out else None
    if out_dir is not None:
        path = out_dir / "eval_trace.csv"
        with open(path, "w") as fh:
            heads = [f"y{i+1}" for i in range(data.n_y)]
            fh.write("k," + ",".join(heads)
                     + "," + ",".join(h + "_hat" for h in heads)
                     + "," + ",".join(h + "_err" for h in heads) + "\n")
            for k in range(data.N):
                row = ([str(k)] + [repr(v) for v in data.y[k]]
                       + [repr(v) for v in traj.y[k]]
                       + [repr(v) for v in (data.y[k] - traj.y[k])])
                fh.write(",".join(row) + "\n")
        click.echo(f"wrote {path}")


def _estimate_x0(model, data: bench.Dataset, n_fit: int) -> np.ndarray:
    """Short L-BFGS over the initial state only, on a data prefix."""
    u, d, y = data.u[:n_fit], data.d[:n_fit], data.y[:n_fit]

    def fun(x0):
        try:
            traj = model.simulate(u, d=d, x0=x0)
        except LfridError:
            return np.inf, np.zeros_like(x0)
        err = float(np.mean((y - traj.y) ** 2))
        g = np.zeros_like(x0)  # central differences; n_x is tiny
        h = 1e-6
        for i in range(x0.size):
            e = np.zeros_like(x0)
            e[i] = h
            try:
                fp = np.mean((y - model.simulate(u, d=d, x0=x0 + e).y) ** 2)
                fm = np.mean((y - model.simulate(u, d=d, x0=x0 - e).y) ** 2)
                g[i] = (fp - fm) / (2 * h)
            except LfridError:
                return np.inf, np.zeros_like(x0)
        return err, g

    x0, _ = train_mod.lbfgs_run(fun, model.x0.copy(), max_iters=50)
    return x0


@main.command()
@click.argument("model_path")
@click.option("--grid", default=21, show_default=True, type=int,
              help="Grid points per scheduling dimension.")
@click.option("--samples", default=1000, show_default=True, type=int,
              help="Additional random samples.")
def verify(model_path, grid, samples):
    """Check well-posedness of a model on the unit scheduling box."""
    try:
        model = read_model(model_path)
    except (OSError, json.JSONDecodeError, LfridError) as exc:
        _fail(EXIT_USAGE, f"cannot read model: {exc}")
    plant = model.plant
    if plant.n_w == 0 or not np.any(plant.D_zw):
        click.echo("D_zw = 0: trivially well-posed (affine dependency)")
        return
    report = lfr.is_well_posed(plant, grid_per_dim=grid,
                               random_samples=samples)
    click.echo(f"rho(D_zw)       = {report.rho:.6f}  "
               f"({'<' if report.rho_below_one else '>='} 1)")
    click.echo(f"sigma_max(D_zw) = {report.sigma_max:.6f}  "
               f"(small-gain certificate: "
               f"{'yes' if report.certified_small_gain else 'no'})")
    click.echo(f"min |det(I - D_zw Delta(p))| over {report.samples_checked} "
               f"samples = {report.min_abs_det:.6e}")
    if not report.empirical_ok:
        click.echo(f"ill-posed: counterexample p = {report.counterexample}",
                   err=True)
        raise SystemExit(EXIT_VERIFY)
    click.echo("empirical check passed")


@main.command(name="export-ss")
@click.argument("model_path")
@click.argument("p_file")
@click.option("--out", default=None, help="Output directory.")
def export_ss(model_path, p_file, out):
    """Freeze the model at given scheduling points and write the LTI
    matrices (A, B, C, D)(p) per point."""
    try:
        model = read_model(model_path)
    except (OSError, json.JSONDecodeError, LfridError) as exc:
        _fail(EXIT_USAGE, f"cannot read model: {exc}")
    try:
        P = np.atleast_2d(np.loadtxt(p_file, delimiter=",", ndmin=2))
    except (OSError, ValueError) as exc:
        _fail(EXIT_USAGE, f"cannot read scheduling points: {exc}")
    if P.shape[1] != model.plant.n_p:
        _fail(EXIT_USAGE,
              f"points have {P.shape[1]} columns, model has "
              f"n_p = {model.plant.n_p}")
    out_dir = _out_dir(out)
    path = out_dir / "frozen_ss.json"
    records = []
    for i, p in enumerate(P):
        try:
            A, B, C, D = lfr.eliminate_to_ss(model.plant, p)
        except SingularPoint:
            click.echo(f"row {i}: singular at p = {p.tolist()}", err=True)
            records.append({"p": p.tolist(), "singular": True})
            continue
        records.append({"p": p.tolist(), "A": A.tolist(), "B": B.tolist(),
                        "C": C.tolist(), "D": D.tolist()})
    with open(path, "w") as fh:
        json.dump(records, fh, indent=1)
    click.echo(f"wrote {path} ({len(records)} points)")


if __name__ == "__main__":
    main()
