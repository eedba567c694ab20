"""``ofdm-tsync`` command line: gen, train, sweep, report."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import nn, seeding
from .config import CONFIG_ENV, RunConfig, parse_override
from .errors import ConfigurationError, FormatError, TrainingDivergedError
from .evaluation import complexity_report, export_results, model_dims, sweep
from .frame import FrameSpec, generate_zc
from .pipeline import estimate_timing, generate_dataset, load_dataset, save_dataset, simulate_trial, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGED = 4

log = logging.getLogger("ofdm_tsync")


def _echo_config(cfg: RunConfig) -> None:
    print("# resolved config")
    print(json.dumps(cfg.as_dict(), indent=2, sort_keys=True))


def cmd_gen(cfg: RunConfig, out_path: str) -> int:
    ds = generate_dataset(cfg.dataset(), workers=int(cfg["workers"]))
    save_dataset(ds, out_path)
    print(f"wrote {len(ds)} samples to {out_path}")
    print(f"rejection rate: {ds.rejection_rate:.6f}")
    return EXIT_OK


def write_loss_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for r in history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss)])


def cmd_train(cfg: RunConfig, dataset_path: str, model_out: str, loss_csv: str | None = None) -> int:
    ds = load_dataset(dataset_path)
    frame = cfg.frame()
    model = nn.init_params(frame.n, frame.ng, seeding.derive_rng(cfg["seed"], seeding.INIT),
                           channels=int(cfg["channels"]), bn_epsilon=float(cfg["bn_epsilon"]),
                           bn_momentum=float(cfg["bn_momentum"]))
    best, history = train(ds, model, cfg.training(),
                          progress=lambda r: print(f"epoch {r.epoch:3d}  train {r.train_loss:.5f}  val {r.val_loss:.5f}",
                                                   flush=True))
    nn.save_model(best, model_out)
    loss_csv = loss_csv or f"{model_out}.loss.csv"
    write_loss_csv(history, loss_csv)
    print(f"wrote model to {model_out} and loss history to {loss_csv}")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, model_path: str | None, out_dir: str) -> int:
    sspec = cfg.sweep()
    model = None
    if "proposed" in sspec.methods:
        if not model_path or not Path(model_path).is_file():
            print(f"error: method 'proposed' needs a trained model; no model file at {model_path!r}",
                  file=sys.stderr)
            return EXIT_IO
        model = nn.load_model(model_path)
    frame = cfg.frame()
    result = sweep(sspec, model, frame, workers=int(cfg["workers"]))
    report = complexity_report(frame, *model_dims(model)) if model is not None else None
    paths = export_results(result, out_dir, report)
    for p in result.points:
        print(f"{p.method:15s} snr={p.snr_db:5.1f} L={p.l:3d} eta={p.eta:.2f}  "
              f"P_err={p.error_probability:.5f} ({p.errors}/{p.trials})")
    if result.window_violations:
        print(f"warning: {result.window_violations} estimates fell outside the search window", file=sys.stderr)
    for m, t in result.wall_time.items():
        print(f"wall time {m}: {t:.3f} s")
    print("wrote " + ", ".join(str(p) for p in paths))
    return EXIT_OK


def cmd_report(cfg: RunConfig, model_path: str | None = None, runs: int = 1000) -> int:
    frame = cfg.frame()
    ours = complexity_report(frame)
    print("complexity (complex multiplications), this configuration:")
    print(f"  coarse stage formula Nlag*N         = {ours.coarse_formula}")
    print(f"  coarse stage instrumented count     = {ours.coarse_instrumented}")
    print(f"  conv terms K*N_l*C_(l-1)*C_l        = {list(ours.conv_terms)}")
    print(f"  dense terms N_(l-1)*N_l             = {list(ours.dense_terms)}")
    print(f"  proposed total                      = {ours.proposed}")

    table = complexity_report(FrameSpec(n=128, ng=32, nd=128, nlag=160), nlag=180)
    print("reference example parameters (N=128, Ng=32, M=288, Nlag=180):")
    print(f"  proposed = {table.proposed}   CS (6 iterations) = {table.cs}   ELM = {table.elm}")
    for name, (formula, printed) in table.discrepancies().items():
        print(f"  note: {name} expression evaluates to {formula}, the reference table lists {printed}")

    if model_path and Path(model_path).is_file():
        model = nn.load_model(model_path)
        source = model_path
    else:
        model = nn.init_params(frame.n, frame.ng, seeding.derive_rng(cfg["seed"], seeding.INIT))
        source = "untrained model (timing does not depend on weights)"
    training = generate_zc(frame)
    trial = simulate_trial(frame, cfg.channel(), seeding.derive_rng(cfg["seed"], seeding.MISC), training)
    estimate_timing(trial.y, model, frame, training)  # warm-up
    t0 = time.perf_counter()
    for _ in range(runs):
        estimate_timing(trial.y, model, frame, training)
    per = (time.perf_counter() - t0) / runs
    print(f"mean wall time per estimate over {runs} runs: {per * 1e6:.1f} us ({source})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"YAML/JSON config file (default: ${CONFIG_ENV})")
    common.add_argument("--workers", type=int, help="worker processes for trial-parallel stages")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ofdm-tsync", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a labelled training dataset")
    p.add_argument("--out", help="dataset file (default: config dataset_path)")

    p = sub.add_parser("train", parents=[common], help="train the network on a dataset")
    p.add_argument("--dataset", help="dataset file (default: config dataset_path)")
    p.add_argument("--model-out", help="model file (default: config model_path)")
    p.add_argument("--loss-csv", help="per-epoch loss CSV (default: <model>.loss.csv)")

    p = sub.add_parser("sweep", parents=[common], help="Monte-Carlo error-probability sweep")
    p.add_argument("--model", help="trained model file (default: config model_path)")
    p.add_argument("--out-dir", help="output directory (default: config out_dir)")

    p = sub.add_parser("report", parents=[common], help="complexity accounting and timing")
    p.add_argument("--model", help="model used for the timing measurement")
    p.add_argument("--runs", type=int, default=1000)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = dict(parse_override(s) for s in args.set)
        if args.workers is not None:
            overrides["workers"] = args.workers
        if args.seed is not None:
            overrides["seed"] = args.seed
        cfg = RunConfig.resolve(args.config, overrides)
        _echo_config(cfg)
        if args.command == "gen":
            return cmd_gen(cfg, args.out or cfg["dataset_path"])
        if args.command == "train":
            return cmd_train(cfg, args.dataset or cfg["dataset_path"], args.model_out or cfg["model_path"],
                             args.loss_csv)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.model or cfg["model_path"], args.out_dir or cfg["out_dir"])
        return cmd_report(cfg, args.model, args.runs)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc} (epoch={exc.epoch}, step={exc.step}, loss={exc.last_loss})",
              file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
