"""Wave-direction estimation for unmanned surface vehicles from onboard motion sensors.

A from-scratch stacked LSTM (numpy only) regresses the sine and cosine of the
encounter angle between vessel heading and wave propagation from sliding
windows of IMU and navigation features.
"""

from .datapipe import FEATURE_NAMES, build_dataset, clean_and_segment, load_csv, make_label, make_windows
from .metrics import angular_score, mape, moving_average_direction, normalize_diff, recover_wave_direction
from .model import ModelConfig, StackedLstm, build_model
from .numerics import SeededRng, matmul
from .training import TrainConfig, gradient_check, train

__version__ = "0.1.0"

__all__ = [
    "FEATURE_NAMES", "ModelConfig", "SeededRng", "StackedLstm", "TrainConfig", "angular_score",
    "build_dataset", "build_model", "clean_and_segment", "gradient_check", "load_csv", "make_label",
    "make_windows", "mape", "matmul", "moving_average_direction", "normalize_diff", "recover_wave_direction",
    "train",
]
