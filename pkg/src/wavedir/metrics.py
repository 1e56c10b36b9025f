"""Evaluation metrics and circular statistics for predicted wave directions.

Predictions and targets are ``(count, 2)`` arrays of ``(sin, cos)`` pairs.
Angles are radians; the public angular score is reported in degrees.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, UndefinedAngleError

MAPE_FLOOR = 1e-3
TWO_PI = 2.0 * np.pi


def wrap_angle(x):
    """Wrap radians into (-pi, pi]."""
    x = np.asarray(x, dtype=np.float64)
    # round() is odd-symmetric, so wrap(-x) == -wrap(x) away from the cut
    out = x - TWO_PI * np.round(x / TWO_PI)
    out = np.where(out <= -np.pi, out + TWO_PI, out)
    out = np.where(out > np.pi, out - TWO_PI, out)
    return float(out) if out.ndim == 0 else out


def _pairs(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1 and a.shape[0] == 2:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != 2:
        raise DimensionError(f"{name} must have shape (count, 2), got {a.shape}")
    return a


def _check_pair(pred, actual):
    pred = _pairs(pred, "pred")
    actual = _pairs(actual, "actual")
    if pred.shape != actual.shape:
        raise DimensionError(f"shape mismatch: pred {pred.shape} vs actual {actual.shape}")
    if pred.shape[0] == 0:
        raise ValueError("metrics need at least one sample")
    return pred, actual


def mape(pred, actual) -> float:
    """Mean absolute percentage error pooled over both components.

    Denominators are clamped at ``MAPE_FLOOR`` because sine and cosine
    components legitimately pass through zero.
    """
    pred, actual = _check_pair(pred, actual)
    denom = np.maximum(np.abs(actual), MAPE_FLOOR)
    return float(np.mean(np.abs(pred - actual) / denom) * 100.0)


def to_angle(sin_val, cos_val):
    """atan2 of a (sin, cos) pair; raises on the exact origin."""
    s = np.asarray(sin_val, dtype=np.float64)
    c = np.asarray(cos_val, dtype=np.float64)
    bad = (s == 0.0) & (c == 0.0)
    if np.any(bad):
        rows = np.flatnonzero(np.atleast_1d(bad)).tolist()
        raise UndefinedAngleError(f"(sin, cos) == (0, 0) has no angle (rows {rows[:10]})")
    out = np.arctan2(s, c)
    # atan2 returns -pi for (-0.0, negative); keep the half-open convention
    out = np.where(out == -np.pi, np.pi, out)
    return float(out) if out.ndim == 0 else out


def normalize_diff(a, b):
    """Signed circular difference ``a - b`` wrapped into (-pi, pi]."""
    return wrap_angle(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))


def angle_diffs(pred, actual) -> np.ndarray:
    pred, actual = _check_pair(pred, actual)
    return np.atleast_1d(normalize_diff(to_angle(pred[:, 0], pred[:, 1]), to_angle(actual[:, 0], actual[:, 1])))


def angular_score(pred, actual) -> float:
    """RMSE of wrapped angle differences, in degrees."""
    d = angle_diffs(pred, actual)
    return float(np.degrees(np.sqrt(np.mean(d * d))))


def circular_mean(angles) -> float:
    a = np.asarray(angles, dtype=np.float64)
    return float(to_angle(np.mean(np.sin(a)), np.mean(np.cos(a))))


def circular_std(angles) -> float:
    """Circular standard deviation sqrt(-2 ln R), radians."""
    a = np.asarray(angles, dtype=np.float64)
    r = np.hypot(np.mean(np.sin(a)), np.mean(np.cos(a)))
    return float(np.sqrt(-2.0 * np.log(min(r, 1.0))))


def smoothing_kernel_size(window_seconds: float, sample_rate: float) -> int:
    k = int(round(window_seconds * sample_rate))
    if k < 1:
        raise ValueError(f"window of {window_seconds} s at {sample_rate} Hz spans no samples")
    return k


def moving_average_direction(angles, window_seconds: float, sample_rate: float) -> np.ndarray:
    """Trailing circular moving average of an angle series.

    Each output is the direction of the summed unit vectors over the last
    ``round(window_seconds * sample_rate)`` samples; the first outputs use
    whatever prefix is available.
    """
    k = smoothing_kernel_size(window_seconds, sample_rate)
    a = np.asarray(angles, dtype=np.float64)
    if a.size == 0:
        return a.copy()
    pad = np.zeros(k - 1)
    s = np.lib.stride_tricks.sliding_window_view(np.concatenate([pad, np.sin(a)]), k).sum(axis=1)
    c = np.lib.stride_tricks.sliding_window_view(np.concatenate([pad, np.cos(a)]), k).sum(axis=1)
    return np.atleast_1d(to_angle(s, c))


def recover_wave_direction(pred_rel, yaw):
    """Absolute wave direction in [0, 2*pi) from a relative (sin, cos) prediction."""
    p = np.asarray(pred_rel, dtype=np.float64)
    rel = to_angle(p[..., 0], p[..., 1])
    out = np.mod(np.asarray(yaw, dtype=np.float64) - rel, TWO_PI)
    out = np.where(out >= TWO_PI, 0.0, out)
    return float(out) if out.ndim == 0 else out


@dataclass
class MetricReport:
    mape: float
    angular_score: float
    n_samples: int
    diffs: np.ndarray = field(repr=False)

    def to_json(self) -> dict:
        return {
            "mape_percent": self.mape,
            "angular_score_deg": self.angular_score,
            "n_samples": self.n_samples,
        }

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    def write_diffs_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "diff_rad", "diff_deg"])
            for i, d in enumerate(self.diffs):
                w.writerow([i, repr(float(d)), repr(float(np.degrees(d)))])


def evaluate(pred, actual) -> MetricReport:
    diffs = angle_diffs(pred, actual)
    return MetricReport(
        mape=mape(pred, actual),
        angular_score=float(np.degrees(np.sqrt(np.mean(diffs * diffs)))),
        n_samples=int(diffs.shape[0]),
        diffs=diffs,
    )
