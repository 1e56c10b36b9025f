"""Command line entry point: ``wavedir <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data or schema error, 3 runtime failure.

``--config FILE`` reads flat ``key=value`` lines (``#`` comments allowed);
keys are the long option names with dashes or underscores, and explicit
command-line options override them.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import datapipe, harness, synth
from .errors import ArtifactError, InsufficientDataError, RecordError, SchemaError, WavedirError
from .model import load_checkpoint
from .numerics import SeededRng

log = logging.getLogger("wavedir")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _ints(text):
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _floats(text):
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _words(text):
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


def read_config(path) -> dict:
    out = {}
    for no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{no}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def _common(p):
    p.add_argument("--config", help="flat key=value file of option defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = _Parser(prog="wavedir", description="Wave-direction estimation from USV sensor logs")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    subs = {}

    p = subs["synth"] = sub.add_parser("synth", help="generate a synthetic scenario (logs + metadata)")
    _common(p)
    p.add_argument("--scenario", choices=("pool", "sea"), default="pool")
    p.add_argument("--trajectories", type=int, default=10, help="pool only")
    p.add_argument("--duration", type=float, default=120.0, help="pool trajectory length, seconds")
    p.add_argument("--sample-rate", type=float, default=36.0)

    p = subs["preprocess"] = sub.add_parser("preprocess", help="clean, window, split and standardize logs")
    _common(p)
    p.add_argument("--data", required=True, help="directory holding metadata.csv and logs/")
    p.add_argument("--sequence-size", type=_ints, default=(10,), help="one or more comma-separated sizes")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--split-mode", choices=("chronological", "shuffled"), default="chronological")
    p.add_argument("--speed-floor", type=float, default=0.1)
    p.add_argument("--min-len", type=int, default=100)
    p.add_argument("--overrides", help="CSV of log_id,t_start,t_end intervals to cut")
    p.add_argument("--standardizer", help="dataset .json whose standardizer to apply (unseen data)")

    p = subs["train"] = sub.add_parser("train", help="train a model on a preprocessed dataset")
    _common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", choices=("lstm", "mlp"), default="lstm")
    p.add_argument("--hidden", type=int, default=20)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--clip-norm", type=float, default=None)

    p = subs["eval"] = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=("test", "train"), default="test")

    p = subs["predict"] = sub.add_parser("predict", help="predict absolute wave directions")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=("test", "train"), default="test")

    p = subs["smooth"] = sub.add_parser("smooth", help="circular moving average of predictions")
    _common(p)
    p.add_argument("--predictions", required=True, help="predictions.csv from `wavedir predict`")
    p.add_argument("--window-seconds", type=float, default=16.0)
    p.add_argument("--sample-rate", type=float, default=36.0)
    p.add_argument("--series", choices=("wave_deg", "relative_deg"), default="wave_deg")

    p = subs["sweep"] = sub.add_parser("sweep", help="train the hyperparameter grid")
    _common(p)
    p.add_argument("--datasets-dir", required=True, help="directory with dataset_n<N>.json files")
    p.add_argument("--sequence-sizes", type=_ints, default=(10, 20, 30))
    p.add_argument("--hidden-sizes", type=_ints, default=(10, 20, 100))
    p.add_argument("--layer-counts", type=_ints, default=(1, 5))
    p.add_argument("--learning-rates", type=_floats, default=(0.001, 0.0001))
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--repeats", type=int, default=1)

    p = subs["baseline"] = sub.add_parser("baseline", help="compare LSTM, MLP and circular-mean predictors")
    _common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--models", type=_words, default=("lstm", "mlp", "circular_mean"))
    p.add_argument("--hidden", type=int, default=20)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=32)
    return parser, subs


def _apply_config(argv, subs):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config or known.command not in subs:
        return
    sp = subs[known.command]
    dests = {a.dest: a for a in sp._actions}
    values = read_config(known.config)
    unknown = [k for k in values if k not in dests or k in ("config", "help")]
    if unknown:
        raise UsageError(f"{known.config}: unknown keys for `{known.command}`: {unknown}")
    defaults = {}
    for k, v in values.items():
        action = dests[k]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[k] = v.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            try:
                defaults[k] = action.type(v)
            except ValueError as exc:
                raise UsageError(f"{known.config}: bad value for {k}: {exc}") from None
        else:
            defaults[k] = v
    sp.set_defaults(**defaults)
    for a in sp._actions:
        if a.dest in defaults:
            a.required = False


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args):
    if args.scenario == "pool":
        sc = synth.make_pool_scenario(args.seed, n_trajectories=args.trajectories, duration=args.duration,
                                      sample_rate=args.sample_rate)
    else:
        sc = synth.make_sea_scenario(args.seed, sample_rate=args.sample_rate)
    out = sc.write(_out(args))
    n = sum(len(v) for v in sc.logs.values())
    print(f"wrote {len(sc.logs)} logs, {n} records to {out}")


def cmd_preprocess(args):
    out = _out(args)
    transects = datapipe.load_logs(args.data, speed_floor=args.speed_floor, min_len=args.min_len,
                                   overrides=args.overrides)
    if not transects:
        raise InsufficientDataError(f"no transects survived cleaning in {args.data}")
    fixed = None
    if args.standardizer:
        fixed = datapipe.load_dataset(args.standardizer).standardizer
    for n in args.sequence_size:
        ds = datapipe.build_dataset(transects, n, args.stride, args.train_fraction, SeededRng(args.seed),
                                    args.split_mode, standardizer=fixed)
        ds.meta = {
            "split_seed": args.seed,
            "split_mode": args.split_mode,
            "train_fraction": args.train_fraction,
            "stride": args.stride,
            "speed_floor": args.speed_floor,
            "min_len": args.min_len,
            "n_transects": len(transects),
            "sample_rate_hz": transects[0].sample_rate,
            "standardizer_source": args.standardizer,
        }
        bin_path, _ = datapipe.save_dataset(out / f"dataset_n{n}", ds)
        print(f"n={n}: {len(ds.train)} train / {len(ds.test)} test windows -> {bin_path}")


def cmd_train(args):
    ds = datapipe.load_dataset(args.dataset)
    if len(ds.train) == 0:
        raise ArtifactError(f"{args.dataset} has no training windows (was it built with --standardizer?)")
    rec = harness.run_training(ds, _out(args), model_kind=args.model, hidden=args.hidden, layers=args.layers,
                               learning_rate=args.learning_rate, epochs=args.epochs, batch_size=args.batch_size,
                               seed=args.seed, clip_norm=args.clip_norm, dataset_ref=str(args.dataset))
    print(json.dumps(rec.metrics, sort_keys=True))


def cmd_eval(args):
    report = harness.evaluate_checkpoint(args.checkpoint, args.dataset, args.split)
    out = _out(args)
    report.write(out / "metrics.json")
    report.write_diffs_csv(out / "diffs.csv")
    print(json.dumps(report.to_json(), sort_keys=True))


def cmd_predict(args):
    model, _ = load_checkpoint(args.checkpoint)
    ds = datapipe.load_dataset(args.dataset)
    ws = getattr(ds, args.split)
    if len(ws) == 0:
        raise ArtifactError(f"{args.dataset} has no {args.split} windows")
    rows, wave = harness.predict_rows(model, ws)
    out = _out(args)
    harness.write_predictions(out / "predictions.csv", rows)
    summary = harness.prediction_summary(wave)
    (out / "prediction_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))


def cmd_smooth(args):
    rows = harness.read_predictions(args.predictions)
    smoothed, report = harness.smooth_series(rows, args.window_seconds, args.sample_rate, args.series)
    out = _out(args)
    with open(out / "smoothed.csv", "w") as fh:
        fh.write("transect,row,raw_deg,smoothed_deg\n")
        for r in smoothed:
            fh.write(f"{r['transect']},{r['row']},{r['raw_deg']!r},{r['smoothed_deg']!r}\n")
    (out / "smoothing_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(json.dumps({k: report[k] for k in ("kernel_samples", "raw_circular_std_deg",
                                             "smoothed_circular_std_deg")}, sort_keys=True))


def cmd_sweep(args):
    grid = harness.SweepGrid(args.sequence_sizes, args.hidden_sizes, args.layer_counts, args.learning_rates)
    summary = harness.run_sweep(grid, args.datasets_dir, _out(args), epochs=args.epochs,
                                batch_size=args.batch_size, seed=args.seed, parallelism=args.parallelism,
                                repeats=args.repeats)
    failed = sum(r["status"] != "ok" for r in summary["rows"])
    print(f"{len(summary['rows'])} cells, {failed} failed; selected {summary['selected']}")


def cmd_baseline(args):
    unknown = [m for m in args.models if m not in harness.MODEL_KINDS]
    if unknown:
        raise UsageError(f"unknown model(s) {unknown}; supported: {', '.join(harness.MODEL_KINDS)}")
    ds = datapipe.load_dataset(args.dataset)
    table = harness.run_baseline(ds, _out(args), args.models, hidden=args.hidden, layers=args.layers,
                                 learning_rate=args.learning_rate, epochs=args.epochs,
                                 batch_size=args.batch_size, seed=args.seed, dataset_ref=str(args.dataset))
    for r in table:
        print(f"{r['model']:>14}  MAPE {r['mape_percent']:8.2f} %  angular {r['angular_score_deg']:7.2f} deg")


COMMANDS = {
    "synth": cmd_synth, "preprocess": cmd_preprocess, "train": cmd_train, "eval": cmd_eval,
    "predict": cmd_predict, "smooth": cmd_smooth, "sweep": cmd_sweep, "baseline": cmd_baseline,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser, subs = build_parser()
    try:
        _apply_config(argv, subs)
    except (UsageError, OSError) as exc:
        print(f"wavedir: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"wavedir {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SchemaError, RecordError, ArtifactError, InsufficientDataError, FileNotFoundError) as exc:
        print(f"wavedir {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (WavedirError, ArithmeticError, ValueError, RuntimeError) as exc:
        print(f"wavedir {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
