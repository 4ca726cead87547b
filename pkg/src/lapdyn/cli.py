"""Command-line entry point.

Subcommands: gen, train, eval, ilt-bench, export-plot.  Each accepts an
optional JSON config file plus flag overrides (flags win), and every output
file embeds the fully-resolved configuration in its header so a run can be
reproduced from its own artifacts.  The single honored environment variable
is LAPDYN_OUT_DIR (default output directory).

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 checkpoint /
dataset incompatibility.
"""

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import datasets, evaluate
from .model import LaplaceModel, ModelConfig, train

CONFIG_VERSION = 1

TRAIN_DEFAULTS = {
    "seed": 0,
    "epochs": 1000,
    "lr": 1e-3,
    "batch_size": 128,
    "patience": 100,
    "chunk_size": 64,
    "latent_dim": 2,
    "ilt": {"algorithm": "fsi", "N": 16},
    "phi_max": None,
    "ablation_no_projection": False,
}


class IncompatibilityError(Exception):
    """Checkpoint and dataset disagree on shape or normalization."""


def _load_json_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            parsed = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(parsed, dict):
        raise ValueError(f"config {path} must hold a JSON object")
    return parsed


def _merge(defaults, file_config, overrides):
    unknown = set(file_config) - set(defaults)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    merged = dict(defaults)
    merged.update(file_config)
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    return merged


def _out_dir(args):
    out = args.out or os.environ.get("LAPDYN_OUT_DIR") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _resolved_header(command, config):
    return {"command": command, "config_version": CONFIG_VERSION, **config}


def cmd_gen(args):
    config = _merge(
        {"system": None, "n_traj": 1000, "n_points": 200, "seed": 0,
         "noise_sigma": 0.0},
        _load_json_config(args.config),
        {"system": args.system, "n_traj": args.n, "n_points": args.points,
         "seed": args.seed, "noise_sigma": args.noise},
    )
    if config["system"] is None:
        raise ValueError("gen needs --system (or a config with one)")
    dataset = datasets.generate_dataset(
        config["system"], n_traj=config["n_traj"], n_points=config["n_points"],
        seed=config["seed"], noise_sigma=config["noise_sigma"],
    )
    path = _out_dir(args) / f"{config['system']}.jsonl"
    datasets.save_dataset(dataset, path, run_config=_resolved_header("gen", config))
    sizes = {part: len(ids) for part, ids in dataset.split.items()}
    print(f"wrote {path} (train {sizes['train']} / val {sizes['val']} / test {sizes['test']})")
    return 0


def _model_config_from(config, state_dim):
    ilt_spec = config["ilt"]
    if ilt_spec.get("algorithm", "fsi") != "fsi":
        raise ValueError(
            "training decodes through the Fourier-series inversion; other "
            "algorithms are available in ilt-bench only"
        )
    return ModelConfig(
        state_dim=state_dim,
        latent_dim=config["latent_dim"],
        ilt_degree=int(ilt_spec.get("N", 16)),
        phi_max=config["phi_max"],
        ablation_no_projection=bool(config["ablation_no_projection"]),
    )


def cmd_train(args):
    config = _merge(
        TRAIN_DEFAULTS,
        _load_json_config(args.config),
        {"seed": args.seed, "epochs": args.epochs, "lr": args.lr,
         "batch_size": args.batch_size, "patience": args.patience,
         "phi_max": args.phi_max,
         "ablation_no_projection": args.ablation_no_projection},
    )
    dataset = datasets.load_dataset(args.dataset)
    model = LaplaceModel(_model_config_from(config, dataset.state_dim),
                         seed=config["seed"])
    result = train(
        model, dataset, epochs=config["epochs"], lr=config["lr"],
        batch_size=config["batch_size"], patience=config["patience"],
        seed=config["seed"], chunk_size=config["chunk_size"],
        log_every=args.log_every,
    )
    out = _out_dir(args)
    header = _resolved_header("train", config)
    model.save(out / "checkpoint.json", run_config=header)
    with open(out / "history.csv", "w", newline="") as fh:
        fh.write(f"# {json.dumps(header)}\n")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss_mean", "train_loss_sum", "val_rmse"])
        for row in result["history"]:
            writer.writerow([row["epoch"], repr(row["train_loss_mean"]),
                             repr(row["train_loss_sum"]), repr(row["val_rmse"])])
    print(f"wrote {out / 'checkpoint.json'} (best epoch {result['best_epoch']}, "
          f"best val RMSE {result['best_val_rmse']:.6g})")
    return 0


def _load_compatible(checkpoint_path, dataset_path):
    model = LaplaceModel.load(checkpoint_path)
    dataset = datasets.load_dataset(dataset_path)
    if model.config.state_dim != dataset.state_dim:
        raise IncompatibilityError(
            f"checkpoint expects {model.config.state_dim}-dimensional states, "
            f"dataset has {dataset.state_dim}"
        )
    if not (np.array_equal(model.norm_mean, dataset.norm_mean)
            and np.array_equal(model.norm_std, dataset.norm_std)):
        raise IncompatibilityError(
            "normalization statistics differ between checkpoint and dataset; "
            "evaluate against the dataset the model was trained on"
        )
    return model, dataset


def cmd_eval(args):
    model, dataset = _load_compatible(args.checkpoint, args.dataset)
    report = evaluate.extrapolation_eval(model, dataset, part=args.part)
    config = {"checkpoint": str(args.checkpoint), "dataset": str(args.dataset),
              "part": args.part}
    header = _resolved_header("eval", config)
    report.config = {**report.config, **header}
    out = _out_dir(args)
    report.write_json(out / "report.json")
    report.write_csv(out / "report.csv", header_comment=json.dumps(header))
    print(f"mean RMSE {report.mean_rmse:.6g} +/- {report.std_rmse:.6g} "
          f"over {len(report.trajectory_ids)} trajectories")
    return 0


def cmd_ilt_bench(args):
    config = _merge(
        {"algorithms": list(evaluate.BENCH_ALGORITHMS), "N": None,
         "n_points": 1000, "cme_coeffs": None},
        _load_json_config(args.config),
        {"algorithms": args.algorithms.split(",") if args.algorithms else None,
         "N": args.N, "n_points": args.points, "cme_coeffs": args.cme_coeffs},
    )
    try:
        rows = evaluate.ilt_benchmark(
            algorithms=config["algorithms"], degree=config["N"],
            n_points=config["n_points"], cme_coeff_source=config["cme_coeffs"],
        )
    except FileNotFoundError as exc:
        raise ValueError(
            f"coefficient table not found ({exc}); pass --cme-coeffs or drop "
            f"'cme' from --algorithms"
        ) from exc
    path = _out_dir(args) / "ilt_benchmark.csv"
    header = _resolved_header("ilt-bench", config)
    evaluate.write_ilt_table(rows, path, header_comment=json.dumps(header))
    for row in rows:
        print(f"{row['algorithm']:10s} N={row['degree']:<3d} "
              f"RMSE {row['rmse']:.3e}  {row['mean_time_per_point_s'] * 1e6:.1f} us/point")
    return 0


def cmd_export_plot(args):
    model, dataset = _load_compatible(args.checkpoint, args.dataset)
    wanted = [int(i) for i in args.ids.split(",")]
    test_ids = set(dataset.split["test"])
    unknown = [i for i in wanted if i not in test_ids]
    if unknown:
        raise ValueError(f"ids not in the test split: {unknown}")
    by_id = {t.id: t for t in dataset.trajectories}
    out = _out_dir(args)
    header = _resolved_header("export-plot", {
        "checkpoint": str(args.checkpoint), "dataset": str(args.dataset),
        "ids": wanted,
    })
    dim = dataset.state_dim
    for traj_id in wanted:
        traj = by_id[traj_id]
        half = traj.times.size // 2
        pred = model.predict(traj.times[:half], traj.states[None, :half, :],
                             traj.times[half:])[0]
        # observed rows echo the window the model was conditioned on
        pred_full = np.concatenate([traj.states[:half], pred], axis=0)
        path = out / f"plot_{traj_id}.csv"
        with open(path, "w", newline="") as fh:
            fh.write(f"# {json.dumps(header)}\n")
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"truth_{d}" for d in range(dim)]
                            + [f"pred_{d}" for d in range(dim)])
            for i, t in enumerate(traj.times):
                writer.writerow([repr(float(t))]
                                + [repr(float(v)) for v in traj.states[i]]
                                + [repr(float(v)) for v in pred_full[i]])
        print(f"wrote {path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lapdyn",
        description="Learn differential equations in the Laplace domain.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a trajectory dataset")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--system", choices=sorted(datasets.SYSTEMS))
    p.add_argument("--n", type=int, help="number of trajectories")
    p.add_argument("--points", type=int, help="time points per trajectory")
    p.add_argument("--seed", type=int)
    p.add_argument("--noise", type=float, help="observation noise sigma")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("dataset", help="dataset file from gen")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--phi-max", type=float)
    p.add_argument("--ablation-no-projection", action="store_const", const=True)
    p.add_argument("--log-every", type=int, default=None)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--part", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ilt-bench", help="run the cos(t) inversion benchmark")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--algorithms", help="comma-separated algorithm list")
    p.add_argument("--N", type=int, help="inversion degree")
    p.add_argument("--points", type=int, help="number of time points")
    p.add_argument("--cme-coeffs", help="coefficient table path")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_ilt_bench)

    p = sub.add_parser("export-plot", help="dump truth/prediction curves as CSV")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--ids", required=True, help="comma-separated test trajectory ids")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_export_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except IncompatibilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, FloatingPointError, ArithmeticError, OverflowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
