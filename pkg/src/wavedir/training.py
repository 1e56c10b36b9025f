"""MSE loss, Adam updates, the epoch loop and a finite-difference gradient checker."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .datapipe import WindowSet
from .errors import DimensionError, NonFiniteGradientError
from .model import predict_batch
from .numerics import SeededRng

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"pred {pred.shape} vs target {target.shape}")
    if pred.size == 0:
        raise ValueError("mse_loss needs at least one sample")
    r = pred - target
    return float(np.mean(r * r))


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    shuffle_each_epoch: bool = True
    clip_norm: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


class AdamState:
    """First/second moment buffers per parameter and the shared step counter."""

    def __init__(self, params: dict, beta1=BETA1, beta2=BETA2, eps=EPS):
        self.m = {k: np.zeros_like(p) for k, p in params.items()}
        self.v = {k: np.zeros_like(p) for k, p in params.items()}
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update applied in place.

    All gradients are checked before anything is touched, so a NaN or Inf
    gradient leaves parameters and moments exactly as they were.
    """
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NonFiniteGradientError(f"non-finite gradient in {bad} at step {state.t + 1}; update refused")
    for k, p in params.items():
        if p.shape != grads[k].shape or p.shape != state.m[k].shape:
            raise DimensionError(f"{k}: parameter {p.shape}, gradient {grads[k].shape}, moment {state.m[k].shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, p in params.items():
        g = grads[k]
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def _clip(grads: dict, max_norm: float) -> None:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


@dataclass
class LossReport:
    train_mse: list = field(default_factory=list)
    test_mse: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    steps: int = 0

    def records(self):
        for e, tr in enumerate(self.train_mse):
            yield {
                "epoch": e + 1,
                "train_mse": tr,
                "test_mse": self.test_mse[e] if e < len(self.test_mse) else None,
                "seconds": self.seconds[e],
            }

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec) + "\n")


def batch_gradient(model, X, Y):
    """Loss and a copy of the averaged gradient for one batch."""
    pred, cache = model.forward(X)
    loss = model.backward(cache, pred, Y)
    return loss, {k: g.copy() for k, g in model.grads.items()}


def train(model, train_windows: WindowSet, test_windows: WindowSet | None, cfg: TrainConfig,
          on_epoch=None):
    """Mini-batch Adam training for ``cfg.epochs`` epochs.

    The epoch's training MSE is the sample-weighted mean of its batch losses;
    test MSE (when test windows are given) comes from a full pass after the
    epoch. Returns ``(model, LossReport)``.
    """
    count = len(train_windows)
    if count == 0:
        raise ValueError("training set is empty")
    X, Y = train_windows.windows, train_windows.targets
    state = AdamState(model.params, BETA1, BETA2, EPS)
    rng = SeededRng(cfg.seed).fork("batching")
    report = LossReport()
    params, grads = model.params, model.grads
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.fork(f"epoch{epoch}").permutation(count) if cfg.shuffle_each_epoch else np.arange(count)
        total = 0.0
        for s in range(0, count, cfg.batch_size):
            idx = order[s: s + cfg.batch_size]
            pred, cache = model.forward(X[idx])
            loss = model.backward(cache, pred, Y[idx])
            if cfg.clip_norm is not None:
                _clip(grads, cfg.clip_norm)
            adam_step(params, grads, state, cfg.learning_rate)
            model.mark_updated()
            total += loss * idx.size
            report.steps += 1
        report.train_mse.append(total / count)
        if test_windows is not None and len(test_windows):
            report.test_mse.append(mse_loss(predict_batch(model, test_windows), test_windows.targets))
        report.seconds.append(time.perf_counter() - t0)
        if on_epoch is not None:
            on_epoch(epoch + 1, report)
    model.adam_state = state
    return model, report


EXTENDED = np.longdouble


def _sigmoid_ext(z):
    return 1.0 / (1.0 + np.exp(-z))


def reference_forward(model, window, dtype=EXTENDED) -> np.ndarray:
    """Loop-form forward of one window in ``dtype`` arithmetic.

    Shares no code with the vectorized forward; the gradient checker uses it
    so that its finite differences are not swamped by float64 cancellation.
    """
    p = {k: v.astype(dtype) for k, v in model.params.items()}
    x = np.asarray(window).astype(dtype)
    if model.kind == "mlp":
        v = x.reshape(-1)
        h1 = np.tanh(p["W1"] @ v + p["b1"])
        h2 = np.tanh(p["W2"] @ h1 + p["b2"])
        return p["W3"] @ h2 + p["b3"]
    H = model.config.hidden
    seq = list(x)
    for k in range(model.config.num_layers):
        W, U, b = p[f"layer{k}.W"], p[f"layer{k}.U"], p[f"layer{k}.b"]
        h = np.zeros(H, dtype=dtype)
        c = np.zeros(H, dtype=dtype)
        out = []
        for xt in seq:
            z = W @ xt + U @ h + b
            i, f = _sigmoid_ext(z[:H]), _sigmoid_ext(z[H: 2 * H])
            g, o = np.tanh(z[2 * H: 3 * H]), _sigmoid_ext(z[3 * H:])
            c = f * c + i * g
            h = o * np.tanh(c)
            out.append(h)
        seq = out
    return p["head.W"] @ seq[-1] + p["head.b"]


def gradient_check(model, window, target, delta: float = 1e-5, analytic=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per element is ``|a - n| / max(|a|, |n|, 1e-10)``. The
    two perturbed losses are evaluated by :func:`reference_forward` in
    extended precision (where the platform has it). ``analytic`` may supply
    a pre-computed gradient dict, e.g. a deliberately corrupted one.
    """
    X = np.asarray(window, dtype=np.float64)
    if X.ndim == 3:
        if X.shape[0] != 1:
            raise DimensionError("gradient_check takes a single window")
        X = X[0]
    Y = np.asarray(target, dtype=np.float64).reshape(-1)
    if analytic is None:
        _, analytic = batch_gradient(model, X[None], Y[None])
    y_ext = Y.astype(EXTENDED)

    def loss():
        r = reference_forward(model, X) - y_ext
        return np.mean(r * r)

    worst = 0.0
    for name, p in model.params.items():
        flat = p.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + delta
            lp = loss()
            flat[j] = orig - delta
            lm = loss()
            flat[j] = orig
            num = float((lp - lm) / (2 * EXTENDED(delta)))
            a = float(a_flat[j])
            rel = abs(a - num) / max(abs(a), abs(num), 1e-10)
            worst = max(worst, rel)
    return worst


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
