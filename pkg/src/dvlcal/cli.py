"""Command-line surface: simulate trajectories, materialize the training
dataset, train an error-model regressor, and run the Monte-Carlo evaluation.

Exit codes: 0 success, 2 configuration error, 3 data/IO error, 4 numerical
divergence.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import torch

from . import __version__
from .config import ExperimentConfig, config_hash, load_config, save_config
from .core import ConfigurationError, DataError, DivergenceError, EmKind
from .dataset import build_test_suite, generate_shards, manifest_sha256
from .evaluate import NetworkCalibrator, evaluate_suite, table4_csv, table5_csv
from .network import build_model, load_checkpoint, save_checkpoint, train_model
from .simulate import derive_seed, write_trajectory_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4

TRAJ_NAMES = ("calib", "eval1", "eval2", "eval3", "eval4")


def _load_experiment(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def cmd_simulate(args) -> int:
    cfg = _load_experiment(args)
    spec = cfg.test_suite_spec()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dvl_types = [args.dvl_type] if args.dvl_type else sorted(spec.dvl_types)
    wanted = [args.traj] if args.traj else list(TRAJ_NAMES)
    suite = build_test_suite(spec, cfg.seed)
    written = []
    for d in dvl_types:
        if d not in suite:
            raise ConfigurationError(f"unknown DVL type {d}")
        series_by_name = {"calib": suite[d].calibration}
        for i, ev in enumerate(suite[d].evaluations):
            series_by_name[f"eval{i + 1}"] = ev
        for name in wanted:
            if name not in series_by_name:
                raise ConfigurationError(f"unknown trajectory {name!r}")
            path = out / f"dvl{d}_{name}.csv"
            write_trajectory_csv(path, series_by_name[name])
            written.append(path)
    print(f"wrote {len(written)} trajectory file(s) to {out}")
    return EXIT_OK


def cmd_gen_dataset(args) -> int:
    cfg = _load_experiment(args)
    manifest = generate_shards(
        cfg.dataset_spec(),
        args.out,
        master_seed=cfg.seed,
        scale_fraction=args.scale_fraction,
    )
    counts = manifest["counts"]
    print(
        f"dataset at {args.out}: {counts['combinations']} combinations, "
        f"{counts['trajectories']} trajectories, "
        f"{counts['train_windows']} train / {counts['val_windows']} val windows"
    )
    print(f"manifest sha256 {manifest_sha256(args.out)}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_experiment(args)
    em_kind = EmKind(args.em.upper())
    from .dataset import load_training_arrays

    x_tr, y_tr, x_va, y_va = load_training_arrays(args.dataset, em_kind)
    train_cfg = cfg.train_config()
    epoch_offset = 0
    if args.resume:
        bundle = load_checkpoint(args.resume)
        if bundle.model.em_kind is not em_kind:
            raise ConfigurationError(
                f"checkpoint is for {bundle.model.em_kind.value}, requested {em_kind.value}"
            )
        model = bundle.model
        epoch_offset = bundle.header.get("epochs_completed", 0)
    else:
        model = build_model(em_kind, cfg.training.window_n, seed=train_cfg.seed)

    result = train_model(model, (x_tr, y_tr), (x_va, y_va), train_cfg,
                         epoch_offset=epoch_offset, log=print)

    fingerprint = {
        "manifest_sha256": manifest_sha256(args.dataset),
        "train_windows": len(x_tr),
        "val_windows": len(x_va),
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(
        out,
        model,
        train_cfg,
        dataset_fingerprint=fingerprint,
        epochs_completed=epoch_offset + result.epochs_run,
        best_val_loss=result.best_val_loss,
    )
    loss_path = out.with_suffix(".loss.csv")
    with open(loss_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, tr, va in result.history:
            writer.writerow([epoch, repr(tr), repr(va)])
    print(
        f"trained {em_kind.value}: best val loss {result.best_val_loss:.3e} "
        f"at epoch {result.best_epoch}; checkpoint {out}, losses {loss_path}"
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_experiment(args)
    bundle = load_checkpoint(args.checkpoint)
    if args.em and bundle.model.em_kind is not EmKind(args.em.upper()):
        raise DataError(
            f"checkpoint holds {bundle.model.em_kind.value}, requested {args.em.upper()}"
        )
    runs = args.runs if args.runs else cfg.evaluation.runs
    spec = cfg.test_suite_spec()
    calibrator = NetworkCalibrator(bundle.model)
    metadata = {
        "config_hash": config_hash(cfg),
        "checkpoint_em": bundle.model.em_kind.value,
        "checkpoint_fingerprint": bundle.header.get("dataset_fingerprint", {}),
    }
    report = evaluate_suite(
        spec,
        calibrator,
        runs=runs,
        seed=derive_seed(cfg.seed, 0xEA1),
        windows=cfg.evaluation.calibration_windows,
        baseline_window=cfg.evaluation.baseline_window,
        metadata=metadata,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "table4_rmse.csv").write_text(table4_csv(report))
    (out / "table5_convergence.csv").write_text(table5_csv(report.convergence))
    print(f"evaluation report in {out} ({runs} runs, canonical={runs >= 200})")
    for row in report.convergence:
        print(
            f"  DVL{row.dvl_type}: baseline {row.baseline_seconds:.0f} s, "
            f"ours {row.ours_seconds:.0f} s, improvement {row.improvement_percent:.0f}%"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dvlcal", description="DVL/GNSS-RTK calibration experiments"
    )
    parser.add_argument("--version", action="version", version=f"dvlcal {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write test-suite trajectory CSV files")
    p.add_argument("--config", help="experiment config YAML")
    p.add_argument("--seed", type=int, help="override master seed")
    p.add_argument("--out", default="trajectories", help="output directory")
    p.add_argument("--dvl-type", type=int, choices=(1, 2, 3, 4), help="only this DVL type")
    p.add_argument("--traj", choices=TRAJ_NAMES, help="only this trajectory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gen-dataset", help="materialize the training grid into shards")
    p.add_argument("--config", help="experiment config YAML")
    p.add_argument("--seed", type=int, help="override master seed")
    p.add_argument("--out", default="dataset", help="output directory")
    p.add_argument("--scale-fraction", type=float, default=1.0,
                   help="uniformly subsample the grid (desk-scale runs)")
    p.add_argument("--threads", type=int, help="worker thread cap")
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("train", help="train one error-model regressor")
    p.add_argument("--config", help="experiment config YAML")
    p.add_argument("--seed", type=int, help="override master seed")
    p.add_argument("--dataset", required=True, help="dataset directory with manifest")
    p.add_argument("--em", default="EM4", choices=("EM1", "EM2", "EM3", "EM4", "em1", "em2", "em3", "em4"))
    p.add_argument("--out", default="checkpoints/model.ckpt", help="checkpoint path")
    p.add_argument("--resume", help="continue from an existing checkpoint")
    p.add_argument("--threads", type=int, help="torch thread cap")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="Monte-Carlo RMSE and convergence study")
    p.add_argument("--config", help="experiment config YAML")
    p.add_argument("--seed", type=int, help="override master seed")
    p.add_argument("--checkpoint", required=True, help="trained model checkpoint")
    p.add_argument("--em", help="expected error model of the checkpoint")
    p.add_argument("--runs", type=int, help="Monte-Carlo runs (default from config)")
    p.add_argument("--out", default="report", help="output directory")
    p.add_argument("--threads", type=int, help="torch thread cap")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("write-config", help="write the default config YAML")
    p.add_argument("--out", default="dvlcal.yaml")
    p.set_defaults(func=cmd_write_config)
    return parser


def cmd_write_config(args) -> int:
    save_config(ExperimentConfig(), args.out)
    print(f"default config written to {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", None):
        torch.set_num_threads(args.threads)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
