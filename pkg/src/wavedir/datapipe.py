"""Sensor-log ingestion, cleaning, angle encoding, windowing and standardization.

Raw logs are CSV files with one column per :class:`RawRecord` field. A
metadata CSV (``id,wave_direction_deg,sample_rate_hz``) names each log and
gives the per-log ground-truth wave direction.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ArtifactError, InsufficientDataError, RecordError, SchemaError
from .metrics import wrap_angle
from .numerics import SeededRng

log = logging.getLogger(__name__)

FEATURE_NAMES = (
    "accel_x", "accel_y", "accel_z",
    "gyro_x", "gyro_y", "gyro_z",
    "mag_x", "mag_y", "mag_z",
    "north_vel", "east_vel", "down_vel",
    "alt",
    "yaw_sine", "yaw_cosine", "roll_sine", "roll_cosine", "pitch_sine", "pitch_cosine",
    "w_quat", "x_quat", "y_quat", "z_quat",
    "heave_period", "heave_motion", "heave_accel",
)
N_FEATURES = len(FEATURE_NAMES)

SIGMA_FLOOR = 1e-8
QUAT_TOLERANCE = 0.01
DATASET_MAGIC = b"WAVEDIR\x00"
DATASET_VERSION = 1


@dataclass(slots=True)
class RawRecord:
    timestamp: float
    accel_x: float
    accel_y: float
    accel_z: float
    gyro_x: float
    gyro_y: float
    gyro_z: float
    mag_x: float
    mag_y: float
    mag_z: float
    north_vel: float
    east_vel: float
    down_vel: float
    alt: float
    yaw: float
    roll: float
    pitch: float
    w_quat: float
    x_quat: float
    y_quat: float
    z_quat: float
    heave_period: float
    heave_motion: float
    heave_accel: float
    valid: bool = True


RAW_COLUMNS = tuple(f.name for f in fields(RawRecord))
_FLOAT_COLUMNS = RAW_COLUMNS[:-1]


def _in_half_open_pi(x: float) -> bool:
    return -math.pi < x <= math.pi


@dataclass
class LogFile:
    """Records read from one CSV log plus the tally of rejected lines."""

    records: list
    rejected: list = field(default_factory=list)  # (line_no, reason)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]


def _parse_flag(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "t", "yes"):
        return True
    if t in ("0", "false", "f", "no"):
        return False
    raise ValueError(f"bad flag {text!r}")


def load_csv(path, strict: bool = False) -> LogFile:
    """Read a raw sensor log.

    A header that lacks any :data:`RAW_COLUMNS` entry, or carries unknown
    columns, raises :class:`SchemaError`. Lines with unparseable values or
    out-of-range Euler angles are skipped and tallied in ``rejected``; with
    ``strict=True`` the first such line raises :class:`RecordError` instead.
    """
    path = Path(path)
    out = LogFile(records=[])
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected a header row") from None
        missing = [c for c in RAW_COLUMNS if c not in header]
        extra = [c for c in header if c not in RAW_COLUMNS]
        if missing or extra:
            raise SchemaError(f"{path}: missing columns {missing}, unexpected columns {extra}")
        pos = [header.index(c) for c in RAW_COLUMNS]
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                if len(row) != len(header):
                    raise ValueError(f"expected {len(header)} fields, got {len(row)}")
                vals = [float(row[p]) for p in pos[:-1]]
                if not all(math.isfinite(v) for v in vals):
                    raise ValueError("non-finite value")
                rec = RawRecord(*vals, valid=_parse_flag(row[pos[-1]]))
                for name in ("yaw", "roll", "pitch"):
                    if not _in_half_open_pi(getattr(rec, name)):
                        raise ValueError(f"{name}={getattr(rec, name)} outside (-pi, pi]")
            except ValueError as exc:
                if strict:
                    raise RecordError(line_no, str(exc)) from None
                out.rejected.append((line_no, str(exc)))
                continue
            out.records.append(rec)
    if out.rejected:
        log.warning("%s: rejected %d malformed lines", path, len(out.rejected))
    return out


def write_csv(path, records) -> None:
    """Write records with 17 significant digits so reloading is lossless."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(RAW_COLUMNS)
        for r in records:
            w.writerow([f"{getattr(r, c):.17g}" for c in _FLOAT_COLUMNS] + ["1" if r.valid else "0"])


@dataclass(frozen=True)
class LogMeta:
    id: str
    wave_direction_deg: float
    sample_rate_hz: float


def read_metadata(path) -> list[LogMeta]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"id", "wave_direction_deg", "sample_rate_hz"}
        if reader.fieldnames is None or not need.issubset(reader.fieldnames):
            raise SchemaError(f"{path}: metadata header must contain {sorted(need)}")
        return [LogMeta(r["id"], float(r["wave_direction_deg"]), float(r["sample_rate_hz"])) for r in reader]


def write_metadata(path, metas) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "wave_direction_deg", "sample_rate_hz"])
        for m in metas:
            w.writerow([m.id, repr(float(m.wave_direction_deg)), repr(float(m.sample_rate_hz))])


def read_boundary_overrides(path) -> dict[str, list[tuple[float, float]]]:
    """Manual transect cuts: lines of ``log_id,t_start,t_end`` to exclude."""
    cuts: dict[str, list[tuple[float, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#") or row[0] == "log_id":
                continue
            cuts.setdefault(row[0].strip(), []).append((float(row[1]), float(row[2])))
    return cuts


def encode_angles(yaw, roll, pitch):
    """(sin, cos) of yaw, roll and pitch, in feature order."""
    return (math.sin(yaw), math.cos(yaw), math.sin(roll), math.cos(roll), math.sin(pitch), math.cos(pitch))


def make_label(yaw, wave_direction):
    """(sin d, cos d) of the relative direction d = wrap(yaw - wave_direction)."""
    d = wrap_angle(np.asarray(yaw, dtype=np.float64) - np.asarray(wave_direction, dtype=np.float64))
    return np.sin(d), np.cos(d)


def records_to_array(records) -> np.ndarray:
    """Columnar float64 view of records, columns in :data:`RAW_COLUMNS` order."""
    return np.array([[getattr(r, c) for c in RAW_COLUMNS] for r in records], dtype=np.float64).reshape(
        -1, len(RAW_COLUMNS)
    )


def _col(raw: np.ndarray, name: str) -> np.ndarray:
    return raw[:, RAW_COLUMNS.index(name)]


def to_features(raw: np.ndarray) -> np.ndarray:
    """Map columnar raw records onto the 26 feature columns."""
    out = np.empty((raw.shape[0], N_FEATURES))
    for j, name in enumerate(FEATURE_NAMES):
        if name.endswith("_sine"):
            out[:, j] = np.sin(_col(raw, name[: -len("_sine")]))
        elif name.endswith("_cosine"):
            out[:, j] = np.cos(_col(raw, name[: -len("_cosine")]))
        else:
            out[:, j] = _col(raw, name)
    return out


@dataclass
class Transect:
    """A contiguous cleaned segment: feature rows plus what labels need."""

    id: str
    rows: np.ndarray  # (N, 26), encoded but not standardized
    yaw: np.ndarray
    timestamps: np.ndarray
    source_index: np.ndarray  # positions in the originating record list
    sample_rate: float
    wave_direction: float | None = None

    def __len__(self):
        return self.rows.shape[0]

    @property
    def labels(self) -> np.ndarray:
        if self.wave_direction is None:
            raise ArtifactError(f"transect {self.id} has no wave direction; supply log metadata")
        return wrap_angle(self.yaw - self.wave_direction)


def clean_and_segment(
    records,
    speed_floor: float = 0.1,
    min_len: int = 100,
    *,
    sample_rate: float | None = None,
    log_id: str = "log",
    wave_direction: float | None = None,
    exclusions=(),
) -> list[Transect]:
    """Drop unusable rows and split the remainder into transects.

    Rows are dropped when flagged invalid, when the quaternion norm is more
    than ``QUAT_TOLERANCE`` from 1, when horizontal speed is under
    ``speed_floor`` or when the timestamp falls inside an ``exclusions``
    interval. Segments break at dropped rows and at time gaps longer than
    two sample periods; segments shorter than ``min_len`` are discarded.
    """
    records = list(records)
    if not records:
        return []
    raw = records_to_array(records)
    t = _col(raw, "timestamp")
    if sample_rate is None:
        dt = np.diff(t)
        if dt.size == 0 or not np.any(dt > 0):
            raise InsufficientDataError("cannot infer a sample rate from fewer than two timestamps")
        sample_rate = 1.0 / float(np.median(dt[dt > 0]))
    quat = raw[:, [RAW_COLUMNS.index(c) for c in ("w_quat", "x_quat", "y_quat", "z_quat")]]
    speed = np.hypot(_col(raw, "north_vel"), _col(raw, "east_vel"))
    keep = (
        (_col(raw, "valid") > 0.5)
        & (np.abs(np.linalg.norm(quat, axis=1) - 1.0) <= QUAT_TOLERANCE)
        & (speed >= speed_floor)
    )
    for t0, t1 in exclusions:
        keep &= ~((t >= t0) & (t <= t1))

    max_gap = 2.0 / sample_rate
    breaks = np.zeros(len(records), dtype=bool)
    breaks[1:] = np.diff(t) > max_gap * (1 + 1e-9)

    feats = to_features(raw)
    yaw = _col(raw, "yaw")
    out: list[Transect] = []
    start = None
    for i in range(len(records) + 1):
        boundary = i == len(records) or not keep[i] or breaks[i]
        if boundary and start is not None:
            if i - start >= min_len:
                idx = np.arange(start, i)
                out.append(Transect(
                    id=f"{log_id}.{len(out)}",
                    rows=feats[idx],
                    yaw=yaw[idx].copy(),
                    timestamps=t[idx].copy(),
                    source_index=idx,
                    sample_rate=sample_rate,
                    wave_direction=wave_direction,
                ))
            start = None
        if i < len(records) and keep[i] and start is None:
            start = i
    return out


@dataclass
class WindowSet:
    """Fixed-length windows: the first ``n - 1`` rows as input, row ``n`` as target.

    ``transect`` and ``start`` locate each window's source rows so raw rows
    stay recoverable; ``final_yaw`` is the yaw at the target row, needed to
    turn a relative prediction back into an absolute direction.
    """

    windows: np.ndarray  # (count, n - 1, 26)
    targets: np.ndarray  # (count, 2)
    n: int
    transect: np.ndarray = None  # (count,) str
    start: np.ndarray = None  # (count,) int
    final_yaw: np.ndarray = None  # (count,)

    def __post_init__(self):
        count = self.windows.shape[0]
        if self.transect is None:
            self.transect = np.array([""] * count, dtype=object)
        if self.start is None:
            self.start = np.arange(count, dtype=np.int64)
        if self.final_yaw is None:
            self.final_yaw = np.zeros(count)

    def __len__(self):
        return self.windows.shape[0]

    def take(self, idx) -> "WindowSet":
        idx = np.asarray(idx, dtype=np.int64)
        return WindowSet(self.windows[idx], self.targets[idx], self.n, self.transect[idx], self.start[idx],
                         self.final_yaw[idx])

    @classmethod
    def empty(cls, n: int) -> "WindowSet":
        return cls(np.zeros((0, n - 1, N_FEATURES)), np.zeros((0, 2)), n,
                   np.array([], dtype=object), np.zeros(0, dtype=np.int64), np.zeros(0))

    @classmethod
    def concat(cls, sets, n: int) -> "WindowSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls.empty(n)
        return cls(
            np.concatenate([s.windows for s in sets]),
            np.concatenate([s.targets for s in sets]),
            n,
            np.concatenate([s.transect for s in sets]),
            np.concatenate([s.start for s in sets]),
            np.concatenate([s.final_yaw for s in sets]),
        )


def window_count(length: int, n: int, stride: int) -> int:
    return 0 if length < n else (length - n) // stride + 1


def make_windows(t: Transect, n: int, stride: int = 1) -> WindowSet:
    if n < 2:
        raise ValueError(f"sequence size must be >= 2, got {n}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    count = window_count(len(t), n, stride)
    if count == 0:
        log.warning("transect %s has %d rows, shorter than sequence size %d", t.id, len(t), n)
        return WindowSet.empty(n)
    starts = np.arange(count, dtype=np.int64) * stride
    view = np.lib.stride_tricks.sliding_window_view(t.rows, (n - 1, N_FEATURES))[:, 0]
    windows = view[starts].copy()
    final = starts + n - 1
    s, c = make_label(t.yaw[final], t.wave_direction if t.wave_direction is not None else _missing(t))
    return WindowSet(windows, np.column_stack([s, c]), n, np.array([t.id] * count, dtype=object), starts,
                     t.yaw[final].copy())


def _missing(t):
    raise ArtifactError(f"transect {t.id} has no wave direction; supply log metadata")


@dataclass
class Standardizer:
    mu: np.ndarray
    sigma: np.ndarray  # as fitted, may contain zeros
    sigma_clamped: np.ndarray
    fit_count: int = 0

    def apply(self, rows) -> np.ndarray:
        return (np.asarray(rows, dtype=np.float64) - self.mu) / self.sigma_clamped

    def to_json(self) -> dict:
        return {"mu": self.mu.tolist(), "sigma": self.sigma.tolist(), "sigma_floor": SIGMA_FLOOR}

    @classmethod
    def from_json(cls, d) -> "Standardizer":
        sigma = np.asarray(d["sigma"], dtype=np.float64)
        return cls(np.asarray(d["mu"], dtype=np.float64), sigma, np.maximum(sigma, d.get("sigma_floor", SIGMA_FLOOR)),
                   fit_count=1)


def fit_standardizer(train_rows) -> Standardizer:
    """Per-feature mean and population standard deviation of training rows."""
    rows = np.asarray(train_rows, dtype=np.float64).reshape(-1, N_FEATURES)
    if rows.shape[0] < 2:
        raise InsufficientDataError(f"need at least 2 rows to fit a standardizer, got {rows.shape[0]}")
    mu = rows.mean(axis=0)
    sigma = rows.std(axis=0)
    return Standardizer(mu, sigma, np.maximum(sigma, SIGMA_FLOOR), fit_count=1)


def apply_standardizer(s: Standardizer, rows) -> np.ndarray:
    return s.apply(rows)


def split(windows: WindowSet, train_fraction: float = 0.8, rng: SeededRng | None = None,
          mode: str = "chronological") -> tuple[WindowSet, WindowSet]:
    """Partition windows into train and test sets.

    ``chronological`` keeps the first share of every transect's windows for
    training and the tail for testing. ``shuffled`` draws a random partition
    of all windows from ``rng``.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    count = len(windows)
    if count < 2:
        raise InsufficientDataError(f"need at least 2 windows to split, got {count}")
    if mode == "chronological":
        train_idx, test_idx = [], []
        for tid in dict.fromkeys(windows.transect.tolist()):
            idx = np.flatnonzero(windows.transect == tid)
            idx = idx[np.argsort(windows.start[idx], kind="stable")]
            k = int(round(train_fraction * idx.size))
            train_idx.append(idx[:k])
            test_idx.append(idx[k:])
        train = np.sort(np.concatenate(train_idx))
        test = np.sort(np.concatenate(test_idx))
    elif mode == "shuffled":
        if rng is None:
            raise ValueError("shuffled split needs an rng")
        perm = rng.fork("split").permutation(count)
        k = int(round(train_fraction * count))
        train, test = np.sort(perm[:k]), np.sort(perm[k:])
    else:
        raise ValueError(f"unknown split mode {mode!r}; expected 'chronological' or 'shuffled'")
    return windows.take(train), windows.take(test)


def training_rows(transects, windows: WindowSet) -> np.ndarray:
    """Unique source rows feeding the inputs of ``windows``."""
    by_id = {t.id: t for t in transects}
    chunks = []
    for tid in dict.fromkeys(windows.transect.tolist()):
        sel = windows.transect == tid
        used = np.zeros(len(by_id[tid]), dtype=bool)
        for s in windows.start[sel]:
            used[s: s + windows.n - 1] = True
        chunks.append(by_id[tid].rows[used])
    return np.concatenate(chunks) if chunks else np.zeros((0, N_FEATURES))


@dataclass
class Dataset:
    train: WindowSet
    test: WindowSet
    standardizer: Standardizer
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.train.n if len(self.train) else self.test.n


def standardize_windows(s: Standardizer, ws: WindowSet) -> WindowSet:
    return WindowSet(s.apply(ws.windows), ws.targets, ws.n, ws.transect, ws.start, ws.final_yaw)


def build_dataset(transects, n: int, stride: int = 1, train_fraction: float = 0.8,
                  rng: SeededRng | None = None, mode: str = "chronological",
                  standardizer: Standardizer | None = None) -> Dataset:
    """Window, split and standardize transects.

    The standardizer is fitted once on the training windows' input rows and
    then applied, unchanged, to both splits. Passing ``standardizer`` skips
    fitting and places every window in ``test`` (used for unseen data).
    """
    raw = WindowSet.concat([make_windows(t, n, stride) for t in transects], n)
    if standardizer is not None:
        return Dataset(WindowSet.empty(n), standardize_windows(standardizer, raw), standardizer)
    train, test = split(raw, train_fraction, rng, mode)
    s = fit_standardizer(training_rows(transects, train))
    return Dataset(standardize_windows(s, train), standardize_windows(s, test), s)


def load_logs(data_dir, *, speed_floor=0.1, min_len=100, overrides=None) -> list[Transect]:
    """Load every log named in ``data_dir/metadata.csv`` and segment it."""
    data_dir = Path(data_dir)
    meta_path = data_dir / "metadata.csv"
    if not meta_path.exists():
        raise ArtifactError(f"{meta_path} not found; create it with `wavedir synth` or by hand")
    cuts = read_boundary_overrides(overrides) if overrides else {}
    transects = []
    for m in read_metadata(meta_path):
        logf = load_csv(data_dir / "logs" / f"{m.id}.csv")
        transects.extend(clean_and_segment(
            logf.records, speed_floor, min_len, sample_rate=m.sample_rate_hz, log_id=m.id,
            wave_direction=math.radians(m.wave_direction_deg), exclusions=cuts.get(m.id, ()),
        ))
    return transects


_ARRAYS = ("windows", "targets", "start", "final_yaw")


def save_dataset(stem, ds: Dataset) -> tuple[Path, Path]:
    """Write ``stem.bin`` (16-byte header + little-endian float64) and ``stem.json``."""
    stem = Path(stem)
    bin_path, json_path = stem.with_suffix(".bin"), stem.with_suffix(".json")
    blocks, layout = [], []
    offset = 0
    for split_name, ws in (("train", ds.train), ("test", ds.test)):
        for name in _ARRAYS:
            arr = np.ascontiguousarray(getattr(ws, name), dtype="<f8")
            blocks.append(arr.tobytes())
            layout.append({"split": split_name, "name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.size
    with open(bin_path, "wb") as fh:
        fh.write(DATASET_MAGIC + struct.pack("<II", DATASET_VERSION, len(layout)))
        for b in blocks:
            fh.write(b)
    digest = hashlib.sha256(bin_path.read_bytes()).hexdigest()
    sidecar = {
        **ds.meta,
        "format_version": DATASET_VERSION,
        "sequence_size": ds.n,
        "feature_order": list(FEATURE_NAMES),
        "arrays": layout,
        "transects": {"train": ds.train.transect.tolist(), "test": ds.test.transect.tolist()},
        "standardizer": ds.standardizer.to_json(),
        "binary": bin_path.name,
        "binary_sha256": digest,
    }
    json_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return bin_path, json_path


def load_dataset(path) -> Dataset:
    """Load a dataset written by :func:`save_dataset` (pass either file)."""
    json_path = Path(path).with_suffix(".json")
    if not json_path.exists():
        raise ArtifactError(f"{json_path} not found; produce it with `wavedir preprocess`")
    side = json.loads(json_path.read_text())
    bin_path = json_path.with_name(side["binary"])
    raw = bin_path.read_bytes()
    if raw[:8] != DATASET_MAGIC:
        raise ArtifactError(f"{bin_path}: bad magic, not a wavedir dataset")
    version, _ = struct.unpack("<II", raw[8:16])
    if version != DATASET_VERSION:
        raise ArtifactError(f"{bin_path}: unsupported dataset version {version}")
    if list(side["feature_order"]) != list(FEATURE_NAMES):
        raise ArtifactError(f"{json_path}: feature order differs from this build")
    data = np.frombuffer(raw, dtype="<f8", offset=16)
    parts: dict = {"train": {}, "test": {}}
    for a in side["arrays"]:
        size = int(np.prod(a["shape"], dtype=np.int64))
        parts[a["split"]][a["name"]] = data[a["offset"]: a["offset"] + size].reshape(a["shape"]).astype(np.float64)
    n = side["sequence_size"]
    sets = {}
    for split_name in ("train", "test"):
        p = parts[split_name]
        sets[split_name] = WindowSet(
            p["windows"].reshape(-1, n - 1, N_FEATURES), p["targets"].reshape(-1, 2), n,
            np.array(side["transects"][split_name], dtype=object), p["start"].astype(np.int64), p["final_yaw"],
        )
    meta = {k: v for k, v in side.items() if k not in (
        "format_version", "sequence_size", "feature_order", "arrays", "transects", "standardizer", "binary",
        "binary_sha256")}
    meta["binary_sha256"] = side["binary_sha256"]
    return Dataset(sets["train"], sets["test"], Standardizer.from_json(side["standardizer"]), meta)
