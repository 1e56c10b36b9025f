"""Stacked LSTM sequence-to-one regressor and an MLP baseline.

Both models map a batch of windows ``(batch, n - 1, 26)`` to ``(batch, 2)``
raw (sin, cos) outputs and expose the same small surface used by training:
``params``/``grads`` dicts of float64 arrays, ``forward`` returning a cache,
and ``backward`` filling ``grads`` from that cache.

LSTM cell (no peepholes), gate rows stacked in the order input, forget,
cell, output::

    i = sigmoid(W_i x + U_i h + b_i)     f = sigmoid(W_f x + U_f h + b_f)
    g = tanh(W_g x + U_g h + b_g)        o = sigmoid(W_o x + U_o h + b_o)
    c' = f * c + i * g                   h' = o * tanh(c')
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .datapipe import FEATURE_NAMES, N_FEATURES, WindowSet
from .errors import ArtifactError, DimensionError, StaleCacheError
from .numerics import SeededRng, matmul, sigmoid, uniform_init

GATES = ("input", "forget", "cell", "output")
CHECKPOINT_MAGIC = b"WDCKPT\x00\x00"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    sequence_size: int
    hidden: int
    num_layers: int = 1
    learning_rate: float = 1e-3
    input_dim: int = N_FEATURES

    def __post_init__(self):
        if self.sequence_size < 2:
            raise ValueError(f"sequence_size must be >= 2, got {self.sequence_size}")
        if self.hidden < 1 or self.num_layers < 1:
            raise ValueError("hidden and num_layers must be >= 1")


class LstmLayerParams:
    """Weights of one LSTM layer, stored gate-stacked with per-gate views.

    ``W`` is ``(4 * hidden, input_dim)``, ``U`` is ``(4 * hidden, hidden)`` and
    ``b`` is ``(4 * hidden,)``; ``W_i``, ``U_f``, ``b_o`` and friends are views
    into those blocks, as are the matching ``grad_*`` buffers.
    """

    def __init__(self, input_dim: int, hidden: int, W=None, U=None, b=None):
        self.input_dim = input_dim
        self.hidden = hidden
        self.W = np.zeros((4 * hidden, input_dim)) if W is None else W
        self.U = np.zeros((4 * hidden, hidden)) if U is None else U
        self.b = np.zeros(4 * hidden) if b is None else b
        if self.W.shape != (4 * hidden, input_dim) or self.U.shape != (4 * hidden, hidden) or \
                self.b.shape != (4 * hidden,):
            raise DimensionError(f"inconsistent LSTM layer shapes W{self.W.shape} U{self.U.shape} b{self.b.shape}")
        self.grad_W = np.zeros_like(self.W)
        self.grad_U = np.zeros_like(self.U)
        self.grad_b = np.zeros_like(self.b)

    @classmethod
    def initialized(cls, rng: SeededRng, input_dim: int, hidden: int) -> "LstmLayerParams":
        W = uniform_init(rng.fork("W"), 4 * hidden, input_dim, input_dim)
        U = uniform_init(rng.fork("U"), 4 * hidden, hidden, hidden)
        b = np.zeros(4 * hidden)
        b[hidden: 2 * hidden] = 1.0
        return cls(input_dim, hidden, W, U, b)

    def gate(self, name: str, which: str = "W") -> np.ndarray:
        k = GATES.index(name)
        return getattr(self, which)[k * self.hidden: (k + 1) * self.hidden]

    def __getattr__(self, attr):
        # W_i, U_f, b_g, grad_W_o ...
        prefix, _, g = attr.rpartition("_")
        short = {"i": "input", "f": "forget", "g": "cell", "o": "output"}
        if prefix in ("W", "U", "b", "grad_W", "grad_U", "grad_b") and g in short:
            return self.gate(short[g], prefix)
        raise AttributeError(attr)


def cell_forward(params: LstmLayerParams, x, state, pre_x=None):
    """One LSTM step for a batch.

    ``x`` is ``(batch, input_dim)`` (a vector is treated as a batch of one)
    and ``state`` is ``(h, c)``. ``pre_x`` may carry an already computed
    ``x @ W.T + b``. Returns ``(h', c', cache)``.
    """
    h, c = state
    if x is not None:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    h = np.atleast_2d(h)
    c = np.atleast_2d(c)
    H = params.hidden
    if h.shape[1] != H or c.shape[1] != H or (pre_x is None and x.shape[1] != params.input_dim):
        raise DimensionError(f"cell expects x (*, {params.input_dim}) and state (*, {H}); "
                             f"got x {x.shape}, h {h.shape}, c {c.shape}")
    if pre_x is None:
        pre_x = matmul(x, params.W.T) + params.b
    z = pre_x + matmul(h, params.U.T)
    a = np.empty_like(z)
    a[:, : 2 * H] = sigmoid(z[:, : 2 * H])
    a[:, 2 * H: 3 * H] = np.tanh(z[:, 2 * H: 3 * H])
    a[:, 3 * H:] = sigmoid(z[:, 3 * H:])
    i, f, g, o = a[:, :H], a[:, H: 2 * H], a[:, 2 * H: 3 * H], a[:, 3 * H:]
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, {"a": a, "tc": tc}


@dataclass
class DenseHead:
    W: np.ndarray  # (2, hidden)
    b: np.ndarray  # (2,)

    def __post_init__(self):
        if self.W.shape[0] != 2 or self.b.shape != (2,):
            raise DimensionError(f"head must have 2 outputs, got W{self.W.shape} b{self.b.shape}")
        self.grad_W = np.zeros_like(self.W)
        self.grad_b = np.zeros_like(self.b)


class _Cache:
    __slots__ = ("version", "data", "owner")

    def __init__(self, owner, version, data):
        self.owner = owner
        self.version = version
        self.data = data


class _ModelBase:
    kind = ""

    def __init__(self):
        self.version = 0

    def param_items(self):
        raise NotImplementedError

    @property
    def params(self) -> dict:
        return {k: p for k, p, _ in self.param_items()}

    @property
    def grads(self) -> dict:
        return {k: g for k, _, g in self.param_items()}

    def zero_grads(self):
        for _, _, g in self.param_items():
            g[...] = 0.0

    def n_params(self) -> int:
        return sum(p.size for _, p, _ in self.param_items())

    def mark_updated(self):
        self.version += 1

    def _check_cache(self, cache):
        if cache is None or not isinstance(cache, _Cache):
            raise StaleCacheError("backward called without a forward cache")
        if cache.owner is not self or cache.version != self.version:
            raise StaleCacheError("forward cache is stale: parameters changed since it was computed")

    def predict(self, windows) -> np.ndarray:
        return self.forward(windows)[0]

    def backward(self, cache, pred, target):
        """Fill ``grads`` with d(MSE)/d(theta) averaged over the batch; returns the loss."""
        self._check_cache(cache)
        pred = np.asarray(pred, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        if pred.shape != target.shape:
            raise DimensionError(f"pred {pred.shape} vs target {target.shape}")
        resid = pred - target
        dpred = 2.0 * resid / resid.size
        self._backward(cache.data, dpred)
        return float(np.mean(resid * resid))


class StackedLstm(_ModelBase):
    kind = "lstm"

    def __init__(self, config: ModelConfig, layers, head: DenseHead):
        super().__init__()
        self.config = config
        self.layers = list(layers)
        self.head = head
        dim = config.input_dim
        for k, layer in enumerate(self.layers):
            if layer.input_dim != dim or layer.hidden != config.hidden:
                raise DimensionError(f"layer {k} expects input {layer.input_dim}, got {dim}")
            dim = layer.hidden

    @classmethod
    def initialized(cls, config: ModelConfig, rng: SeededRng) -> "StackedLstm":
        layers = []
        dim = config.input_dim
        for k in range(config.num_layers):
            layers.append(LstmLayerParams.initialized(rng.fork(f"layer{k}"), dim, config.hidden))
            dim = config.hidden
        head = DenseHead(uniform_init(rng.fork("head"), 2, config.hidden, config.hidden), np.zeros(2))
        return cls(config, layers, head)

    def param_items(self):
        for k, layer in enumerate(self.layers):
            yield f"layer{k}.W", layer.W, layer.grad_W
            yield f"layer{k}.U", layer.U, layer.grad_U
            yield f"layer{k}.b", layer.b, layer.grad_b
        yield "head.W", self.head.W, self.head.grad_W
        yield "head.b", self.head.b, self.head.grad_b

    def forward(self, windows):
        X = np.asarray(windows, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        n_steps = self.config.sequence_size - 1
        if X.ndim != 3 or X.shape[1] != n_steps or X.shape[2] != self.config.input_dim:
            raise DimensionError(f"expected windows (*, {n_steps}, {self.config.input_dim}), got {X.shape}")
        B, T, _ = X.shape
        H = self.config.hidden
        # Caches are kept time-major, (T, B, ...), so per-step slices are contiguous.
        inp = np.ascontiguousarray(X.transpose(1, 0, 2))
        layer_caches = []
        for layer in self.layers:
            pre = matmul(inp.reshape(T * B, -1), layer.W.T).reshape(T, B, 4 * H) + layer.b
            hs = np.empty((T, B, H))
            cs = np.empty((T, B, H))
            acts = np.empty((T, B, 4 * H))
            tcs = np.empty((T, B, H))
            h = np.zeros((B, H))
            c = np.zeros((B, H))
            for t in range(T):
                h, c, cc = cell_forward(layer, None, (h, c), pre_x=pre[t])
                hs[t], cs[t], acts[t], tcs[t] = h, c, cc["a"], cc["tc"]
            layer_caches.append((inp, hs, cs, acts, tcs))
            inp = hs
        last = inp[-1]
        pred = matmul(last, self.head.W.T) + self.head.b
        return pred, _Cache(self, self.version, layer_caches)

    def _backward(self, layer_caches, dpred):
        H = self.config.hidden
        self.head.grad_W[...] = dpred.T @ layer_caches[-1][1][-1]
        self.head.grad_b[...] = dpred.sum(axis=0)
        T, B = layer_caches[0][1].shape[:2]
        dHs = np.zeros((T, B, H))
        dHs[-1] = dpred @ self.head.W
        for layer, (inp, hs, cs, acts, tcs) in zip(reversed(self.layers), reversed(layer_caches)):
            dZ = np.empty((T, B, 4 * H))
            dh_next = np.zeros((B, H))
            dc_next = np.zeros((B, H))
            for t in range(T - 1, -1, -1):
                a = acts[t]
                i, f, g, o = a[:, :H], a[:, H: 2 * H], a[:, 2 * H: 3 * H], a[:, 3 * H:]
                tc = tcs[t]
                dh = dHs[t] + dh_next
                dc = dc_next + dh * o * (1.0 - tc * tc)
                dz = dZ[t]
                dz[:, :H] = dc * g * i * (1.0 - i)
                if t > 0:
                    dz[:, H: 2 * H] = dc * cs[t - 1] * f * (1.0 - f)
                else:
                    dz[:, H: 2 * H] = 0.0
                dz[:, 2 * H: 3 * H] = dc * i * (1.0 - g * g)
                dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
                dc_next = dc * f
                dh_next = dz @ layer.U
            flatZ = dZ.reshape(T * B, 4 * H)
            layer.grad_W[...] = flatZ.T @ inp.reshape(T * B, -1)
            layer.grad_b[...] = flatZ.sum(axis=0)
            if T > 1:
                layer.grad_U[...] = dZ[1:].reshape(-1, 4 * H).T @ hs[:-1].reshape(-1, H)
            else:
                layer.grad_U[...] = 0.0
            dHs = (flatZ @ layer.W).reshape(T, B, -1)


class Mlp(_ModelBase):
    """Two tanh hidden layers of width ``hidden`` over the flattened window."""

    kind = "mlp"

    def __init__(self, config: ModelConfig, weights):
        super().__init__()
        self.config = config
        d_in = (config.sequence_size - 1) * config.input_dim
        shapes = [(config.hidden, d_in), (config.hidden,), (config.hidden, config.hidden), (config.hidden,),
                  (2, config.hidden), (2,)]
        if [w.shape for w in weights] != shapes:
            raise DimensionError(f"MLP weight shapes {[w.shape for w in weights]} != {shapes}")
        self.weights = list(weights)
        self.grad_buffers = [np.zeros_like(w) for w in self.weights]

    @classmethod
    def initialized(cls, config: ModelConfig, rng: SeededRng) -> "Mlp":
        d_in = (config.sequence_size - 1) * config.input_dim
        H = config.hidden
        return cls(config, [
            uniform_init(rng.fork("W1"), H, d_in, d_in), np.zeros(H),
            uniform_init(rng.fork("W2"), H, H, H), np.zeros(H),
            uniform_init(rng.fork("W3"), 2, H, H), np.zeros(2),
        ])

    def param_items(self):
        names = ("W1", "b1", "W2", "b2", "W3", "b3")
        for name, w, g in zip(names, self.weights, self.grad_buffers):
            yield name, w, g

    def forward(self, windows):
        X = np.asarray(windows, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        n_steps = self.config.sequence_size - 1
        if X.ndim != 3 or X.shape[1:] != (n_steps, self.config.input_dim):
            raise DimensionError(f"expected windows (*, {n_steps}, {self.config.input_dim}), got {X.shape}")
        W1, b1, W2, b2, W3, b3 = self.weights
        x = X.reshape(X.shape[0], -1)
        h1 = np.tanh(matmul(x, W1.T) + b1)
        h2 = np.tanh(matmul(h1, W2.T) + b2)
        out = matmul(h2, W3.T) + b3
        return out, _Cache(self, self.version, (x, h1, h2))

    def _backward(self, data, dpred):
        x, h1, h2 = data
        W1, _, W2, _, W3, _ = self.weights
        g = self.grad_buffers
        g[4][...] = dpred.T @ h2
        g[5][...] = dpred.sum(axis=0)
        d2 = (dpred @ W3) * (1.0 - h2 * h2)
        g[2][...] = d2.T @ h1
        g[3][...] = d2.sum(axis=0)
        d1 = (d2 @ W2) * (1.0 - h1 * h1)
        g[0][...] = d1.T @ x
        g[1][...] = d1.sum(axis=0)


def sequence_forward(model: StackedLstm, window):
    """Forward one ``(n - 1, 26)`` window; returns ``(prediction (2,), cache)``."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2:
        raise DimensionError(f"expected a single (n - 1, features) window, got {window.shape}")
    pred, cache = model.forward(window[None])
    return pred[0], cache


def mlp_forward(model: Mlp, window) -> np.ndarray:
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2:
        raise DimensionError(f"expected a single (n - 1, features) window, got {window.shape}")
    return model.forward(window[None])[0][0]


def predict_batch(model, windows, chunk: int = 1024) -> np.ndarray:
    """Predictions for every window of a WindowSet (or raw array)."""
    X = windows.windows if isinstance(windows, WindowSet) else np.asarray(windows, dtype=np.float64)
    if X.shape[0] == 0:
        return np.zeros((0, 2))
    return np.concatenate([model.predict(X[s: s + chunk]) for s in range(0, X.shape[0], chunk)])


def build_model(kind: str, config: ModelConfig, rng: SeededRng):
    if kind == "lstm":
        return StackedLstm.initialized(config, rng)
    if kind == "mlp":
        return Mlp.initialized(config, rng)
    raise ValueError(f"unknown model kind {kind!r}; supported: lstm, mlp")


def save_checkpoint(path, model, *, seed=None, standardizer_ref=None, extra=None) -> str:
    """Write JSON header + little-endian float64 parameters; returns the sha256 digest.

    Layout: 8-byte magic, uint32 format version, uint32 header length, UTF-8
    JSON header, then parameters in ``header["layout"]`` order. LSTM layers
    are stored bottom to top as W, U, b with gate blocks in the order input,
    forget, cell, output; the head (W, b) comes last.
    """
    layout = [{"name": k, "shape": list(p.shape)} for k, p, _ in model.param_items()]
    header = {
        "format_version": CHECKPOINT_VERSION,
        "model": model.kind,
        "config": asdict(model.config),
        "feature_order": list(FEATURE_NAMES),
        "gate_order": list(GATES),
        "seed": seed,
        "standardizer": standardizer_ref,
        "layout": layout,
        **(extra or {}),
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for _, p, _ in model.param_items())
    blob = CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(hbytes)) + hbytes + body
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def load_checkpoint(path):
    """Return ``(model, header)`` from a file written by :func:`save_checkpoint`."""
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"{path} not found; produce it with `wavedir train`")
    blob = path.read_bytes()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise ArtifactError(f"{path}: not a wavedir checkpoint")
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != CHECKPOINT_VERSION:
        raise ArtifactError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(blob[16: 16 + hlen].decode("utf-8"))
    data = np.frombuffer(blob, dtype="<f8", offset=16 + hlen)
    config = ModelConfig(**header["config"])
    model = build_model(header["model"], config, SeededRng(0))
    offset = 0
    for (name, p, _), entry in zip(model.param_items(), header["layout"]):
        if entry["name"] != name or list(p.shape) != entry["shape"]:
            raise ArtifactError(f"{path}: layout entry {entry} does not match model parameter {name}{p.shape}")
        p[...] = data[offset: offset + p.size].reshape(p.shape)
        offset += p.size
    if offset != data.size:
        raise ArtifactError(f"{path}: {data.size - offset} trailing values after parameter block")
    return model, header
