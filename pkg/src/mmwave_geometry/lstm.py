"""Single-layer LSTM classifiers over sliding windows of feature vectors.

Two output arrangements share the same recurrent trunk:

* multiclass: 9 sigmoid outputs, positions 0-4 for the distance classes and
  5-8 for the angle classes, trained against a two-hot target;
* multihead: a 5-way distance softmax and a 4-way angle softmax.

Gradients are computed by hand (backpropagation through time) and the
parameters are updated with Adam.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import N_ANGLES, N_DISTANCES
from .errors import InputError, ParameterError, TrainingError
from .features import FeatureMatrix

MODEL_FORMAT = "mmwave-geometry/lstm"
MODEL_VERSION = 1


def sigmoid(a: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def softmax(a: np.ndarray) -> np.ndarray:
    e = np.exp(a - a.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(a: np.ndarray) -> np.ndarray:
    s = a - a.max(axis=-1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


# --------------------------------------------------------------------------
# Windows


@dataclass(frozen=True)
class Windows:
    """Stacked windows: ``X`` is (n_windows, L, k); labels are per window."""

    X: np.ndarray
    capture_ids: np.ndarray
    distance: np.ndarray | None = None
    angle: np.ndarray | None = None
    distance_ft: np.ndarray | None = None

    def __len__(self) -> int:
        return self.X.shape[0]

    def take(self, idx) -> "Windows":
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return Windows(self.X[idx], self.capture_ids[idx], pick(self.distance), pick(self.angle), pick(self.distance_ft))


def make_windows(features: FeatureMatrix, length: int, stride: int) -> Windows:
    """Cut each capture into windows of ``length`` rows every ``stride`` rows.

    A capture yields ``(len - length) // stride + 1`` windows; captures shorter
    than ``length`` are skipped with a warning. Windows never cross captures.
    """
    if length < 1 or stride < 1:
        raise ParameterError("window length and stride must be >= 1")
    caps = np.asarray(features.capture_ids)
    _, first, inverse = np.unique(caps, return_index=True, return_inverse=True)
    starts_all, short = [], []
    for g in np.argsort(first, kind="stable"):
        rows = np.flatnonzero(inverse == g)
        if len(rows) < length:
            short.append(str(caps[rows[0]]))
            continue
        for s in range(0, len(rows) - length + 1, stride):
            starts_all.append(rows[s:s + length])
    if short:
        warnings.warn(f"skipped {len(short)} capture(s) shorter than window length {length}: {short[:5]}",
                      RuntimeWarning, stacklevel=2)
    k = features.X.shape[1]
    if not starts_all:
        empty = np.zeros(0, dtype=np.int64)
        return Windows(np.zeros((0, length, k)), np.zeros(0, dtype=object),
                       None if features.distance is None else empty,
                       None if features.angle is None else empty,
                       None if features.distance_ft is None else np.zeros(0))
    idx = np.stack(starts_all)
    head = idx[:, 0]
    pick = lambda a: None if a is None else np.asarray(a)[head]  # noqa: E731
    return Windows(features.X[idx], caps[head], pick(features.distance), pick(features.angle), pick(features.distance_ft))


# --------------------------------------------------------------------------
# Models


@dataclass(frozen=True)
class LstmConfig:
    hidden: int = 64
    window: int = 20
    stride: int = 5
    epochs: int = 30
    batch: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.hidden < 1 or self.window < 1 or self.stride < 1 or self.batch < 1 or self.epochs < 0:
            raise ParameterError("hidden, window, stride and batch must be >= 1; epochs >= 0")


class SequenceModel:
    """LSTM trunk plus output head(s). Parameters live in ``self.params``.

    Gate blocks in ``W`` (4H x (k+H)) and ``b`` are ordered input, forget,
    cell candidate, output.
    """

    arch = ""
    head_shapes: dict[str, int] = {}

    def __init__(self, input_dim: int, hidden: int, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.input_dim = input_dim
        self.hidden = hidden
        bound = 1.0 / math.sqrt(hidden)
        H = hidden
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0
        self.params: dict[str, np.ndarray] = {
            "W": rng.uniform(-bound, bound, size=(4 * H, input_dim + H)),
            "b": b,
        }
        for name, n_out in self.head_shapes.items():
            self.params["V" + name] = rng.uniform(-bound, bound, size=(n_out, H))
            self.params["c" + name] = np.zeros(n_out)

    # -- trunk ------------------------------------------------------------

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        if X.ndim != 3 or X.shape[2] != self.input_dim:
            raise InputError(f"expected windows of width {self.input_dim}, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise InputError("non-finite value in window")
        return X

    def trunk_forward(self, X: np.ndarray) -> tuple[np.ndarray, dict]:
        """Final hidden state for a batch of windows, plus the BPTT cache."""
        X = self._check(X)
        B, L, _ = X.shape
        H = self.hidden
        W, b = self.params["W"], self.params["b"]
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        cache = {"z": [], "i": [], "f": [], "g": [], "o": [], "c_prev": [], "tc": []}
        for t in range(L):
            z = np.concatenate([X[:, t, :], h], axis=1)
            a = z @ W.T + b
            i = sigmoid(a[:, :H])
            f = sigmoid(a[:, H:2 * H])
            g = np.tanh(a[:, 2 * H:3 * H])
            o = sigmoid(a[:, 3 * H:])
            c_prev = c
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            for key, val in (("z", z), ("i", i), ("f", f), ("g", g), ("o", o), ("c_prev", c_prev), ("tc", tc)):
                cache[key].append(val)
        return h, cache

    def trunk_backward(self, cache: dict, dh: np.ndarray) -> dict[str, np.ndarray]:
        H = self.hidden
        k = self.input_dim
        W = self.params["W"]
        dW = np.zeros_like(W)
        db = np.zeros_like(self.params["b"])
        dc = np.zeros_like(dh)
        for t in reversed(range(len(cache["z"]))):
            i, f, g, o = cache["i"][t], cache["f"][t], cache["g"][t], cache["o"][t]
            tc = cache["tc"][t]
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * cache["c_prev"][t]
            dc = dc * f
            da = np.concatenate([di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o)], axis=1)
            dW += da.T @ cache["z"][t]
            db += da.sum(axis=0)
            dh = (da @ W)[:, k:]
        return {"W": dW, "b": db}

    # -- heads (subclass) -----------------------------------------------------

    def _head_loss(self, h: np.ndarray, distance: np.ndarray, angle: np.ndarray) -> tuple[float, dict, np.ndarray]:
        raise NotImplementedError

    def probabilities(self, X: np.ndarray) -> dict[str, np.ndarray]:
        raise NotImplementedError

    # -- shared -------------------------------------------------------------

    def loss_and_grads(self, X: np.ndarray, distance: np.ndarray, angle: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
        """Mean loss over the batch and its gradient for every parameter."""
        h, cache = self.trunk_forward(X)
        loss, grads, dh = self._head_loss(h, np.asarray(distance), np.asarray(angle))
        grads.update(self.trunk_backward(cache, dh))
        return loss, grads

    def loss(self, X: np.ndarray, distance: np.ndarray, angle: np.ndarray) -> float:
        h, _ = self.trunk_forward(X)
        return self._head_loss(h, np.asarray(distance), np.asarray(angle))[0]

    def predict(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray, dict[str, np.ndarray]]:
        """(distance class, angle class, probabilities) for each window. Pure."""
        probs = self.probabilities(X)
        if "multiclass" in probs:
            p = probs["multiclass"]
            return np.argmax(p[:, :N_DISTANCES], axis=1), np.argmax(p[:, N_DISTANCES:], axis=1), probs
        return np.argmax(probs["distance"], axis=1), np.argmax(probs["angle"], axis=1), probs

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "arch": self.arch,
            "input_dim": self.input_dim,
            "hidden": self.hidden,
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in sorted(self.params.items())},
        }

    @staticmethod
    def from_dict(d: dict) -> "SequenceModel":
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise InputError(f"not a version-{MODEL_VERSION} LSTM model")
        cls = {"multiclass": MulticlassModel, "multihead": MultiheadModel}[d["arch"]]
        m = cls(d["input_dim"], d["hidden"])
        for k, v in d["params"].items():
            m.params[k] = np.array(v["data"], dtype=np.float64).reshape(v["shape"])
        return m


class MulticlassModel(SequenceModel):
    """Nine independent sigmoid outputs, summed binary cross-entropy."""

    arch = "multiclass"
    head_shapes = {"": N_DISTANCES + N_ANGLES}

    @staticmethod
    def two_hot(distance: np.ndarray, angle: np.ndarray) -> np.ndarray:
        Y = np.zeros((len(distance), N_DISTANCES + N_ANGLES))
        rows = np.arange(len(distance))
        Y[rows, distance] = 1.0
        Y[rows, N_DISTANCES + angle] = 1.0
        return Y

    def _head_loss(self, h, distance, angle):
        V, c = self.params["V"], self.params["c"]
        logits = h @ V.T + c
        Y = self.two_hot(distance, angle)
        B = h.shape[0]
        # softplus(l) - y*l is the stable form of the binary cross-entropy
        loss = float(np.sum(np.logaddexp(0.0, logits) - Y * logits) / B)
        dlogits = (sigmoid(logits) - Y) / B
        grads = {"V": dlogits.T @ h, "c": dlogits.sum(axis=0)}
        return loss, grads, dlogits @ V

    def probabilities(self, X):
        h, _ = self.trunk_forward(X)
        return {"multiclass": sigmoid(h @ self.params["V"].T + self.params["c"])}


class MultiheadModel(SequenceModel):
    """Distance softmax and angle softmax reading the same final hidden state."""

    arch = "multihead"
    head_shapes = {"d": N_DISTANCES, "a": N_ANGLES}

    def _head_loss(self, h, distance, angle):
        B = h.shape[0]
        rows = np.arange(B)
        loss = 0.0
        grads = {}
        dh = np.zeros_like(h)
        for name, target in (("d", distance), ("a", angle)):
            V, c = self.params["V" + name], self.params["c" + name]
            logits = h @ V.T + c
            loss -= float(np.sum(log_softmax(logits)[rows, target]) / B)
            dlogits = softmax(logits)
            dlogits[rows, target] -= 1.0
            dlogits /= B
            grads["V" + name] = dlogits.T @ h
            grads["c" + name] = dlogits.sum(axis=0)
            dh += dlogits @ V
        return loss, grads, dh

    def probabilities(self, X):
        h, _ = self.trunk_forward(X)
        p = self.params
        return {"distance": softmax(h @ p["Vd"].T + p["cd"]), "angle": softmax(h @ p["Va"].T + p["ca"])}


# --------------------------------------------------------------------------
# Training


@dataclass
class TrainingLog:
    epoch: list[int]
    train_loss: list[float]
    val_distance_acc: list[float | None]
    val_angle_acc: list[float | None]

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_distance_acc", "val_angle_acc"])
            for row in zip(self.epoch, self.train_loss, self.val_distance_acc, self.val_angle_acc):
                w.writerow([row[0]] + ["" if v is None else repr(float(v)) for v in row[1:]])


class _Adam:
    def __init__(self, params: dict[str, np.ndarray], config: LstmConfig):
        self.cfg = config
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        cfg = self.cfg
        self.t += 1
        c1 = 1.0 - cfg.beta1 ** self.t
        c2 = 1.0 - cfg.beta2 ** self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * g
            self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * g * g
            params[k] -= cfg.learning_rate * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + cfg.adam_eps)


def _accuracy(model: SequenceModel, windows: Windows) -> tuple[float, float]:
    d, a, _ = model.predict(windows.X)
    return float(np.mean(d == windows.distance)), float(np.mean(a == windows.angle))


def _train(model: SequenceModel, windows: Windows, config: LstmConfig, rng: np.random.Generator,
           validation: Windows | None) -> tuple[SequenceModel, TrainingLog]:
    if len(windows) == 0:
        raise TrainingError("no training windows")
    log = TrainingLog([], [], [], [])

    def record(epoch: int) -> None:
        loss = model.loss(windows.X, windows.distance, windows.angle)
        if not math.isfinite(loss):
            raise TrainingError(f"training diverged at epoch {epoch} (loss={loss})", epoch=epoch)
        log.epoch.append(epoch)
        log.train_loss.append(loss)
        if validation is not None and len(validation):
            da, aa = _accuracy(model, validation)
        else:
            da = aa = None
        log.val_distance_acc.append(da)
        log.val_angle_acc.append(aa)

    opt = _Adam(model.params, config)
    record(0)
    n = len(windows)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch):
            idx = order[start:start + config.batch]
            _, grads = model.loss_and_grads(windows.X[idx], windows.distance[idx], windows.angle[idx])
            opt.step(model.params, grads)
        record(epoch)
    return model, log


def train_multiclass(windows: Windows, config: LstmConfig = LstmConfig(),
                     validation: Windows | None = None) -> tuple[MulticlassModel, TrainingLog]:
    rng = np.random.default_rng(config.seed)
    model = MulticlassModel(windows.X.shape[2], config.hidden, rng)
    return _train(model, windows, config, rng, validation)


def train_multihead(windows: Windows, config: LstmConfig = LstmConfig(),
                    validation: Windows | None = None) -> tuple[MultiheadModel, TrainingLog]:
    rng = np.random.default_rng(config.seed)
    model = MultiheadModel(windows.X.shape[2], config.hidden, rng)
    return _train(model, windows, config, rng, validation)


def train(arch: str, windows: Windows, config: LstmConfig = LstmConfig(),
          validation: Windows | None = None) -> tuple[SequenceModel, TrainingLog]:
    if arch == "multiclass":
        return train_multiclass(windows, config, validation)
    if arch == "multihead":
        return train_multihead(windows, config, validation)
    raise ParameterError(f"unknown architecture {arch!r}")


def config_dict(config: LstmConfig) -> dict:
    return asdict(config)


def save_model(model: SequenceModel, path: str | Path, extra: dict | None = None) -> None:
    d = model.to_dict()
    if extra:
        d.update(extra)
    Path(path).write_text(json.dumps(d, sort_keys=True) + "\n")


def parameter_vector(model: SequenceModel, names: Sequence[str] | None = None) -> np.ndarray:
    names = sorted(model.params) if names is None else names
    return np.concatenate([model.params[k].ravel() for k in names])
