"""Run orchestration: single training runs, hyperparameter sweeps and baselines.

Every run writes its artifacts into its own directory::

    model.ckpt      checkpoint (JSON header + float64 parameter block)
    train_log.jsonl one line per epoch
    metrics.json    test-split MetricReport
    run.json        configs, seed, config hash, artifact digests
    timing.json     wall-clock data, kept apart so the rest is byte-stable
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import metrics
from .datapipe import Dataset, WindowSet, load_dataset
from .errors import ArtifactError, SchemaError
from .model import ModelConfig, build_model, load_checkpoint, predict_batch, save_checkpoint
from .numerics import SeededRng
from .training import TrainConfig, train

FORMAT_VERSION = 1
MODEL_KINDS = ("lstm", "mlp", "circular_mean")
SWEEP_COLUMNS = ("sequence_size", "hidden", "layers", "learning_rate", "mape_percent", "angular_score_deg")
REFERENCE_SELECTED = {"sequence_size": 10, "hidden": 20, "layers": 1, "learning_rate": 0.001}


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def derive_seed(seed: int, label: str) -> int:
    """Independent 63-bit seed for a labelled run."""
    return int(SeededRng(seed).fork(label).next_uint64(1)[0] >> np.uint64(1))


def _dump(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


@dataclass
class RunRecord:
    label: str
    model: str
    model_config: dict
    train_config: dict
    seed: int
    metrics: dict
    out_dir: str
    checkpoint: str | None = None
    log_path: str | None = None
    status: str = "ok"
    error: str | None = None
    started: float = 0.0
    finished: float = 0.0


def circular_mean_prediction(train: WindowSet, count: int) -> np.ndarray:
    """Constant (sin, cos) of the training targets' circular mean direction."""
    ang = metrics.to_angle(train.targets[:, 0], train.targets[:, 1])
    mu = metrics.circular_mean(ang)
    return np.tile([math.sin(mu), math.cos(mu)], (count, 1))


def run_training(ds: Dataset, out_dir, *, model_kind="lstm", hidden=20, layers=1, learning_rate=1e-3,
                 epochs=50, batch_size=32, seed=0, clip_norm=None, dataset_ref=None, label=None) -> RunRecord:
    """Train one model on ``ds.train``, evaluate on ``ds.test`` and write its artifacts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    label = label or f"{model_kind}_n{ds.n}_h{hidden}_l{layers}_lr{learning_rate:g}"
    started = time.time()
    if model_kind == "circular_mean":
        pred = circular_mean_prediction(ds.train, len(ds.test))
        report = metrics.evaluate(pred, ds.test.targets)
        report.write(out / "metrics.json")
        rec = RunRecord(label, model_kind, {"sequence_size": ds.n}, {}, seed, report.to_json(), str(out),
                        started=started, finished=time.time())
        _dump(out / "run.json", {"format_version": FORMAT_VERSION, "label": label, "model": model_kind,
                                 "metrics": report.to_json(), "dataset": dataset_ref})
        return rec

    mcfg = ModelConfig(ds.n, hidden, layers, learning_rate)
    tcfg = TrainConfig(epochs=epochs, batch_size=batch_size, learning_rate=learning_rate, seed=seed,
                       clip_norm=clip_norm)
    model = build_model(model_kind, mcfg, SeededRng(seed).fork(f"init:{model_kind}"))
    model, losses = train(model, ds.train, ds.test, tcfg)
    pred = predict_batch(model, ds.test)
    report = metrics.evaluate(pred, ds.test.targets)

    ckpt = out / "model.ckpt"
    logp = out / "train_log.jsonl"
    cfg_all = {"model": model_kind, "model_config": asdict(mcfg), "train_config": asdict(tcfg)}
    save_checkpoint(ckpt, model, seed=seed, standardizer_ref=dataset_ref,
                    extra={"config_hash": config_hash(cfg_all), "adam_steps": losses.steps})
    losses.write_jsonl(logp)
    report.write(out / "metrics.json")
    report.write_diffs_csv(out / "diffs.csv")
    _dump(out / "run.json", {
        "format_version": FORMAT_VERSION,
        "label": label,
        "seed": seed,
        "config_hash": config_hash(cfg_all),
        **cfg_all,
        "dataset": dataset_ref,
        "metrics": report.to_json(),
        "final_train_mse": losses.train_mse[-1],
        "final_test_mse": losses.test_mse[-1] if losses.test_mse else None,
        "digests": {"model.ckpt": sha256_file(ckpt), "metrics.json": sha256_file(out / "metrics.json")},
    })
    finished = time.time()
    _dump(out / "timing.json", {"started": started, "finished": finished, "epoch_seconds": losses.seconds})
    return RunRecord(label, model_kind, asdict(mcfg), asdict(tcfg), seed, report.to_json(), str(out), str(ckpt),
                     str(logp), started=started, finished=finished)


def evaluate_checkpoint(checkpoint, dataset, split="test") -> metrics.MetricReport:
    model, _ = load_checkpoint(checkpoint)
    ds = dataset if isinstance(dataset, Dataset) else load_dataset(dataset)
    ws = getattr(ds, split)
    if model.config.sequence_size != ws.n:
        raise ValueError(f"checkpoint expects sequence size {model.config.sequence_size}, dataset has {ws.n}")
    return metrics.evaluate(predict_batch(model, ws), ws.targets)


def predict_rows(model, ws: WindowSet):
    """Per-window prediction rows with relative and absolute (compass) directions."""
    pred = predict_batch(model, ws)
    rel = np.atleast_1d(metrics.to_angle(pred[:, 0], pred[:, 1]))
    wave = np.atleast_1d(metrics.recover_wave_direction(pred, ws.final_yaw))
    rows = []
    for k in range(len(ws)):
        rows.append({
            "transect": ws.transect[k],
            "row": int(ws.start[k]) + ws.n - 1,
            "yaw": float(ws.final_yaw[k]),
            "pred_sin": float(pred[k, 0]),
            "pred_cos": float(pred[k, 1]),
            "relative_deg": float(np.degrees(rel[k])),
            "wave_deg": float(np.degrees(wave[k])),
        })
    return rows, wave


PREDICTION_COLUMNS = ("transect", "row", "yaw", "pred_sin", "pred_cos", "relative_deg", "wave_deg")


def write_predictions(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PREDICTION_COLUMNS)
        for r in rows:
            w.writerow([r[c] if isinstance(r[c], (str, int)) else repr(r[c]) for c in PREDICTION_COLUMNS])


def read_predictions(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or any(c not in reader.fieldnames for c in PREDICTION_COLUMNS):
            raise SchemaError(f"{path}: not a predictions file from `wavedir predict`")
        return [{**r, "row": int(r["row"]), **{c: float(r[c]) for c in PREDICTION_COLUMNS[2:]}} for r in reader]


def prediction_summary(wave_angles) -> dict:
    mu = metrics.circular_mean(wave_angles)
    return {
        "n_samples": int(len(wave_angles)),
        "mean_wave_direction_deg": float(np.degrees(mu) % 360.0),
        "circular_std_deg": float(np.degrees(metrics.circular_std(wave_angles))),
    }


def smooth_series(rows, window_seconds: float, sample_rate: float, series: str = "wave_deg"):
    """Circular moving average per transect; returns smoothed rows and a before/after report."""
    by_t: dict = {}
    for r in rows:
        by_t.setdefault(r["transect"], []).append(r)
    out_rows, per = [], {}
    raw_all, smooth_all = [], []
    kernel = None
    for tid, rs in by_t.items():
        rs = sorted(rs, key=lambda r: r["row"])
        ang = np.radians([r[series] for r in rs])
        step = float(np.median(np.diff([r["row"] for r in rs]))) if len(rs) > 1 else 1.0
        rate = sample_rate / max(step, 1.0)
        kernel = metrics.smoothing_kernel_size(window_seconds, rate)
        sm = metrics.moving_average_direction(ang, window_seconds, rate)
        for r, s in zip(rs, sm):
            val = float(np.degrees(s))
            if series == "wave_deg":
                val %= 360.0
            out_rows.append({"transect": tid, "row": r["row"], "raw_deg": r[series], "smoothed_deg": val})
        per[tid] = {
            "kernel_samples": kernel,
            "raw_circular_std_deg": float(np.degrees(metrics.circular_std(ang))),
            "smoothed_circular_std_deg": float(np.degrees(metrics.circular_std(sm))),
            "raw_mean_deg": float(np.degrees(metrics.circular_mean(ang)) % 360.0),
            "smoothed_mean_deg": float(np.degrees(metrics.circular_mean(sm)) % 360.0),
        }
        raw_all.append(ang)
        smooth_all.append(sm)
    raw_cat = np.concatenate(raw_all) if raw_all else np.zeros(0)
    sm_cat = np.concatenate(smooth_all) if smooth_all else np.zeros(0)
    report = {
        "series": series,
        "window_seconds": window_seconds,
        "sample_rate_hz": sample_rate,
        "kernel_samples": kernel,
        "raw_circular_std_deg": float(np.degrees(metrics.circular_std(raw_cat))) if raw_cat.size else None,
        "smoothed_circular_std_deg": float(np.degrees(metrics.circular_std(sm_cat))) if sm_cat.size else None,
        "transects": per,
    }
    return out_rows, report


@dataclass
class SweepGrid:
    sequence_sizes: tuple = (10, 20, 30)
    hidden_sizes: tuple = (10, 20, 100)
    layer_counts: tuple = (1, 5)
    learning_rates: tuple = (0.001, 0.0001)

    def configs(self):
        """Cells ordered by layers, then hidden size, sequence size and learning rate."""
        for layers, hidden, n, lr in itertools.product(self.layer_counts, self.hidden_sizes,
                                                       self.sequence_sizes, self.learning_rates):
            yield {"sequence_size": n, "hidden": hidden, "layers": layers, "learning_rate": lr}

    def __len__(self):
        return len(self.sequence_sizes) * len(self.hidden_sizes) * len(self.layer_counts) * len(self.learning_rates)


def cell_label(cell: dict, repeat: int = 0) -> str:
    base = f"n{cell['sequence_size']}_h{cell['hidden']}_l{cell['layers']}_lr{cell['learning_rate']:g}"
    return base if repeat == 0 else f"{base}_r{repeat}"


def _sweep_job(args):
    cell, repeat, dataset_path, run_dir, epochs, batch_size, seed = args
    label = cell_label(cell, repeat)
    run_seed = derive_seed(seed, label)
    try:
        ds = load_dataset(dataset_path)
        rec = run_training(ds, run_dir, model_kind="lstm", hidden=cell["hidden"], layers=cell["layers"],
                           learning_rate=cell["learning_rate"], epochs=epochs, batch_size=batch_size,
                           seed=run_seed, dataset_ref=str(dataset_path), label=label)
        ok = all(math.isfinite(v) for v in (rec.metrics["mape_percent"], rec.metrics["angular_score_deg"]))
        if not ok:
            rec.status, rec.error = "failed", "non-finite metrics"
        return asdict(rec)
    except Exception as exc:  # a diverged cell must not abort the sweep
        return asdict(RunRecord(label, "lstm", cell, {"epochs": epochs, "batch_size": batch_size}, run_seed,
                                {}, str(run_dir), status="failed", error=f"{type(exc).__name__}: {exc}"))


def dataset_path_for(datasets_dir, n: int) -> Path:
    return Path(datasets_dir) / f"dataset_n{n}.json"


def run_sweep(grid: SweepGrid, datasets_dir, out_dir, *, epochs=50, batch_size=32, seed=0, parallelism=1,
              repeats=1) -> dict:
    """Train every grid cell and write ``sweep.csv`` and ``sweep.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for n in grid.sequence_sizes:
        if not dataset_path_for(datasets_dir, n).exists():
            raise ArtifactError(f"{dataset_path_for(datasets_dir, n)} missing; run `wavedir preprocess "
                                f"--sequence-size {n}` first")
    jobs = []
    for cell in grid.configs():
        for r in range(repeats):
            jobs.append((cell, r, str(dataset_path_for(datasets_dir, cell["sequence_size"])),
                         str(out / "runs" / cell_label(cell, r)), epochs, batch_size, seed))
    if parallelism > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]

    rows = []
    for cell in grid.configs():
        recs = [res for res in results if res["label"] in {cell_label(cell, r) for r in range(repeats)}]
        good = [res for res in recs if res["status"] == "ok"]
        row = dict(cell)
        if good:
            row["mape_percent"] = float(np.mean([g["metrics"]["mape_percent"] for g in good]))
            row["angular_score_deg"] = float(np.mean([g["metrics"]["angular_score_deg"] for g in good]))
        else:
            row["mape_percent"] = row["angular_score_deg"] = float("nan")
        row["status"] = "ok" if len(good) == len(recs) else "failed"
        row["errors"] = [g["error"] for g in recs if g["status"] != "ok"]
        row["runs"] = [{"label": g["label"], "seed": g["seed"], "checkpoint": g["checkpoint"],
                        "out_dir": g["out_dir"], "metrics": g["metrics"], "status": g["status"]} for g in recs]
        rows.append(row)

    finite = [r for r in rows if math.isfinite(r["angular_score_deg"])]
    best_ang = min(finite, key=lambda r: r["angular_score_deg"]) if finite else None
    best_mape = min(finite, key=lambda r: r["mape_percent"]) if finite else None
    for r in rows:
        r["best_angular_score"] = r is best_ang
        r["best_mape"] = r is best_mape

    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([r["sequence_size"], r["hidden"], r["layers"], repr(r["learning_rate"]),
                        repr(r["mape_percent"]), repr(r["angular_score_deg"])])
    summary = {
        "format_version": FORMAT_VERSION,
        "seed": seed,
        "epochs": epochs,
        "batch_size": batch_size,
        "repeats": repeats,
        "grid": asdict(grid),
        "config_hash": config_hash({"grid": asdict(grid), "epochs": epochs, "batch_size": batch_size,
                                    "seed": seed, "repeats": repeats}),
        "rows": rows,
        "selected": {k: best_ang[k] for k in SWEEP_COLUMNS} if best_ang else None,
        "selection_rule": "lowest angular score",
        "reference_selected": REFERENCE_SELECTED,
    }
    _dump(out / "sweep.json", summary)
    return summary


def run_baseline(ds: Dataset, out_dir, models=("lstm", "mlp", "circular_mean"), *, hidden=20, layers=1,
                 learning_rate=1e-3, epochs=50, batch_size=32, seed=0, dataset_ref=None) -> list[dict]:
    """Train each model on the same split with shared hyperparameters; write ``baseline.csv/json``."""
    unknown = [m for m in models if m not in MODEL_KINDS]
    if unknown:
        raise ValueError(f"unknown model(s) {unknown}; supported: {', '.join(MODEL_KINDS)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = []
    for kind in models:
        rec = run_training(ds, out / kind, model_kind=kind, hidden=hidden, layers=layers,
                           learning_rate=learning_rate, epochs=epochs, batch_size=batch_size, seed=seed,
                           dataset_ref=dataset_ref)
        table.append({"model": kind, **rec.metrics})
    with open(out / "baseline.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "mape_percent", "angular_score_deg"])
        for r in table:
            w.writerow([r["model"], repr(r["mape_percent"]), repr(r["angular_score_deg"])])
    _dump(out / "baseline.json", {"format_version": FORMAT_VERSION, "seed": seed,
                                  "shared": {"hidden": hidden, "layers": layers, "learning_rate": learning_rate,
                                             "epochs": epochs, "batch_size": batch_size},
                                  "rows": table})
    return table

