"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import data as data_mod
from .blocks import TFDNet
from .checkpoint import CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, default_config
from .signal import StftConfig, spectrogram_export
from .tensor import NonFiniteError, Tensor, no_grad
from .training import (TrainingDiverged, evaluate, evaluate_predictor, persistence_forecast,
                       train_loop, write_history)

log = logging.getLogger("tfdnet")

CHECKPOINT_NAME = "checkpoint.tfdnet"


class ValidationError(ValueError):
    """Bad user input: config, dataset shape, channel index."""


def _load_run(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig.from_dict({})
    if getattr(args, "seed", None) is not None:
        cfg.training.seed = args.seed
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    return cfg


def _load_data(cfg: RunConfig):
    entry = data_mod.CATALOG.get(cfg.catalog) if cfg.catalog else None
    series = data_mod.load_csv(cfg.data_path, entry)
    return series, data_mod.prepare(series.values, cfg.split)


def _fmt(x: float) -> str:
    return repr(float(x))


def cmd_train(args) -> int:
    cfg = _load_run(args)
    series, prep = _load_data(cfg)
    mcfg = cfg.model_config(series.n_channels)
    L, T = mcfg.seq_len, mcfg.pred_len
    train = prep.windows("train", L, T)
    val = prep.windows("val", L, T)
    test = prep.windows("test", L, T)
    model = TFDNet(mcfg, seed=cfg.training.seed)
    result = train_loop(model, train, val, cfg.training)
    os.makedirs(cfg.out_dir, exist_ok=True)
    extra = {
        "scaler_mean": prep.scaler.mean.tolist(),
        "scaler_std": prep.scaler.std.tolist(),
        "best_epoch": result.best_epoch,
        "columns": series.columns,
    }
    save_checkpoint(os.path.join(cfg.out_dir, CHECKPOINT_NAME), model, extra)
    write_history(os.path.join(cfg.out_dir, "history.csv"), result.history)
    val_m = evaluate(model, val, cfg.training.batch_size)
    test_m = evaluate(model, test, cfg.training.batch_size)
    naive = evaluate_predictor(lambda x: persistence_forecast(x, T), test, cfg.training.batch_size)
    summary = {
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.history),
        "val_mse": val_m.mse, "val_mae": val_m.mae,
        "test_mse": test_m.mse, "test_mae": test_m.mae,
        "test_windows": test_m.n_windows,
        "persistence_test_mse": naive.mse, "persistence_test_mae": naive.mae,
    }
    with open(os.path.join(cfg.out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"val  mse={_fmt(val_m.mse)} mae={_fmt(val_m.mae)}")
    print(f"test mse={_fmt(test_m.mse)} mae={_fmt(test_m.mae)} windows={test_m.n_windows}")
    return 0


def _checkpoint_path(args, cfg):
    return args.checkpoint or os.path.join(cfg.out_dir, CHECKPOINT_NAME)


def _load_matching_model(args, cfg, series):
    path = _checkpoint_path(args, cfg)
    ck_config, _, _ = read_checkpoint(path)
    if ck_config["n_channels"] != series.n_channels:
        raise ValidationError(f"channel mismatch: checkpoint expects D={ck_config['n_channels']}, "
                              f"dataset has D={series.n_channels}")
    expected = cfg.model_config(series.n_channels).to_dict()
    diff = [k for k in expected if k != "init_std" and expected[k] != ck_config.get(k)]
    if diff:
        detail = ", ".join(f"{k}: config={expected[k]!r} checkpoint={ck_config.get(k)!r}" for k in diff)
        raise ValidationError(f"architecture mismatch between config and checkpoint ({detail})")
    return load_checkpoint(path)


def cmd_evaluate(args) -> int:
    cfg = _load_run(args)
    series, prep = _load_data(cfg)
    model, _ = _load_matching_model(args, cfg, series)
    L, T = model.config.seq_len, model.config.pred_len
    rows = []
    print(f"{'split':<6}{'horizon':>8}  {'mse':<22}{'mae':<22}windows")
    for split in ("val", "test"):
        m = evaluate(model, prep.windows(split, L, T), cfg.training.batch_size)
        print(f"{split:<6}{T:>8}  {_fmt(m.mse):<22}{_fmt(m.mae):<22}{m.n_windows}")
        for step in range(T):
            rows.append((split, step + 1, m.mse_per_step[step], m.mae_per_step[step]))
        rows.append((split, "all", m.mse, m.mae))
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "evaluation.csv"), "w") as fh:
        fh.write("split,horizon_step,mse,mae\n")
        for split, step, mse, mae in rows:
            fh.write(f"{split},{step},{_fmt(mse)},{_fmt(mae)}\n")
    return 0


def cmd_forecast(args) -> int:
    cfg = _load_run(args)
    series, prep = _load_data(cfg)
    model, extra = _load_matching_model(args, cfg, series)
    L = model.config.seq_len
    if series.values.shape[0] < L:
        raise ValidationError(f"dataset has {series.values.shape[0]} rows, need at least L={L}")
    window = prep.standardized[-L:].T
    with no_grad():
        pred = model.forward(Tensor(window)).data          # (D, T)
    pred = prep.scaler.inverse(pred.T)                     # (T, D)
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "forecast.csv")
    with open(path, "w") as fh:
        fh.write(",".join(["step"] + series.columns) + "\n")
        for k, row in enumerate(pred, start=1):
            fh.write(",".join([str(k)] + [_fmt(v) for v in row]) + "\n")
    print(f"wrote {path}")
    return 0


def _dataset_arg(args):
    if args.data:
        return args.data, None
    cfg = _load_run(args)
    return cfg.data_path, data_mod.CATALOG.get(cfg.catalog) if cfg.catalog else None


def cmd_analyze(args) -> int:
    path, entry = _dataset_arg(args)
    series = data_mod.load_csv(path, entry)
    if series.n_channels < 2:
        raise ValidationError("analysis requires D >= 2 channels")
    report = data_mod.channel_correlation(series.values.T, args.ma_kernel)
    out = args.out or "analysis"
    data_mod.write_correlation_report(report, out, series.columns)
    for label in ("raw", "seasonal", "trend"):
        print(f"macc_{label}={_fmt(getattr(report, f'macc_{label}'))}")
    print(f"recommendation={report.recommendation()} "
          f"(heuristic: MK when seasonal MACC >= raw MACC, else IK)")
    return 0


def cmd_spectrogram(args) -> int:
    path, entry = _dataset_arg(args)
    series = data_mod.load_csv(path, entry)
    if not 0 <= args.channel < series.n_channels:
        raise ValidationError(f"channel {args.channel} out of range for D={series.n_channels}")
    strides = args.strides or [S // 2 for S in args.windows]
    if len(strides) != len(args.windows):
        raise ValidationError("--windows and --strides must have the same length")
    out = args.out or "spectrogram"
    os.makedirs(out, exist_ok=True)
    x = series.values[:, args.channel][None, :]
    for S, l in zip(args.windows, strides):
        try:
            cfg = StftConfig(S, l)
        except ValueError as exc:
            raise ValidationError(str(exc)) from None
        for f in spectrogram_export(x, cfg, os.path.join(out, f"spec_S{S}_l{l}")):
            print(f"wrote {f}")
    return 0


def cmd_print_default_config(args) -> int:
    print(json.dumps(default_config(), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tfdnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--out", help="output directory (overrides out_dir)")
        if seed:
            sp.add_argument("--seed", type=int, help="override training.seed")

    sp = sub.add_parser("train", help="train a model and write checkpoint, history and summary")
    common(sp)
    sp.set_defaults(func=cmd_train)
    for name, fn, text in (("evaluate", cmd_evaluate, "MSE/MAE of a checkpoint on val and test"),
                           ("forecast", cmd_forecast, "forecast the steps after the dataset's end")):
        sp = sub.add_parser(name, help=text)
        common(sp)
        sp.add_argument("--checkpoint", help=f"checkpoint file (default OUT/{CHECKPOINT_NAME})")
        sp.set_defaults(func=fn)
    sp = sub.add_parser("analyze", help="channel-correlation analysis of raw/seasonal/trend parts")
    common(sp, seed=False)
    sp.add_argument("--data", help="dataset CSV (overrides the config's data.path)")
    sp.add_argument("--ma-kernel", type=int, default=25)
    sp.set_defaults(func=cmd_analyze)
    sp = sub.add_parser("spectrogram", help="write |STFT| magnitude CSVs for one channel")
    common(sp, seed=False)
    sp.add_argument("--data", help="dataset CSV (overrides the config's data.path)")
    sp.add_argument("--channel", type=int, default=0)
    sp.add_argument("--windows", type=int, nargs="+", default=[8, 16, 32])
    sp.add_argument("--strides", type=int, nargs="+")
    sp.set_defaults(func=cmd_spectrogram)
    sp = sub.add_parser("print-default-config", help="print the full default configuration")
    sp.set_defaults(func=cmd_print_default_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, CheckpointError, TrainingDiverged, NonFiniteError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
