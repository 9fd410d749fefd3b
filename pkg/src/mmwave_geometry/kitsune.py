"""Online hierarchy-of-autoencoders scoring and per-class ensembles.

A :class:`KitsuneModel` maps features into small correlated clusters, trains
one tiny autoencoder per cluster and an output autoencoder over the vector
of cluster reconstruction errors. Everything is learned one sample at a
time. A :class:`KitsuneEnsemble` holds one model per class and predicts the
class whose model reconstructs the sample best.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.cluster.hierarchy import linkage, to_tree
from scipy.spatial.distance import squareform

from .errors import FitError, InputError, ParameterError, TrainingError

MODEL_FORMAT = "mmwave-geometry/kitsune"
MODEL_VERSION = 1


def _sigmoid(a: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * a))


@dataclass(frozen=True)
class KitsuneConfig:
    max_cluster_size: int = 10
    learning_rate: float = 0.1
    lr_decay: bool = True
    hidden_ratio: float = 0.75
    fm_prefix: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.max_cluster_size < 1:
            raise ParameterError("max_cluster_size must be >= 1")
        if self.learning_rate < 0:
            raise ParameterError("learning_rate must be >= 0")
        if not 0 < self.hidden_ratio <= 1:
            raise ParameterError("hidden_ratio must be in (0, 1]")
        if self.fm_prefix < 2:
            raise ParameterError("fm_prefix must be >= 2")


class Autoencoder:
    """Tied-weight sigmoid autoencoder with running 0-1 input scaling.

    A feature whose observed range is still empty (or zero) scales to 0.5;
    values outside the observed range clamp to [0, 1].
    """

    def __init__(self, n_visible: int, hidden_ratio: float = 0.75, learning_rate: float = 0.1,
                 lr_decay: bool = True, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_visible = n_visible
        self.n_hidden = max(1, math.ceil(hidden_ratio * n_visible))
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        bound = 1.0 / math.sqrt(n_visible)
        self.W = rng.uniform(-bound, bound, size=(n_visible, self.n_hidden))
        self.hbias = np.zeros(self.n_hidden)
        self.vbias = np.zeros(n_visible)
        self.norm_min = np.full(n_visible, np.inf)
        self.norm_max = np.full(n_visible, -np.inf)
        self.n_trained = 0

    def scale(self, X: np.ndarray) -> np.ndarray:
        span = self.norm_max - self.norm_min
        ok = span > 0
        safe = np.where(ok, span, 1.0)
        lo = np.where(ok, self.norm_min, 0.0)
        out = np.where(ok, (X - lo) / safe, 0.5)
        return np.clip(out, 0.0, 1.0)

    def _forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        y = _sigmoid(x @ self.W + self.hbias)
        z = _sigmoid(y @ self.W.T + self.vbias)
        return y, z

    def current_lr(self) -> float:
        if self.lr_decay:
            return self.learning_rate / math.sqrt(self.n_trained)
        return self.learning_rate

    def train(self, x: np.ndarray) -> float:
        """One SGD step on ``x``; returns the RMSE measured before the step."""
        self.norm_min = np.minimum(self.norm_min, x)
        self.norm_max = np.maximum(self.norm_max, x)
        self.n_trained += 1
        x = self.scale(x)
        y, z = self._forward(x)
        err = x - z
        # descent direction of the Bernoulli cross-entropy through the sigmoid output
        d_hidden = (err @ self.W) * y * (1.0 - y)
        lr = self.current_lr()
        self.W += lr * (np.outer(x, d_hidden) + np.outer(err, y))
        self.hbias += lr * d_hidden
        self.vbias += lr * err
        return float(np.sqrt(np.mean(err * err)))

    def execute(self, X: np.ndarray) -> np.ndarray:
        """Reconstruction RMSE per row of ``X`` (rows x n_visible)."""
        Xs = self.scale(X)
        _, Z = self._forward(Xs)
        return np.sqrt(np.mean((Xs - Z) ** 2, axis=-1))

    def parameters(self) -> list[np.ndarray]:
        return [self.W, self.hbias, self.vbias]

    def to_dict(self) -> dict:
        return {
            "n_visible": self.n_visible,
            "n_hidden": self.n_hidden,
            "learning_rate": self.learning_rate,
            "lr_decay": self.lr_decay,
            "W": self.W.tolist(),
            "hbias": self.hbias.tolist(),
            "vbias": self.vbias.tolist(),
            "norm_min": [None if not np.isfinite(v) else float(v) for v in self.norm_min],
            "norm_max": [None if not np.isfinite(v) else float(v) for v in self.norm_max],
            "n_trained": self.n_trained,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Autoencoder":
        ae = cls.__new__(cls)
        ae.n_visible = d["n_visible"]
        ae.n_hidden = d["n_hidden"]
        ae.learning_rate = d["learning_rate"]
        ae.lr_decay = d["lr_decay"]
        ae.W = np.array(d["W"], dtype=np.float64).reshape(ae.n_visible, ae.n_hidden)
        ae.hbias = np.array(d["hbias"], dtype=np.float64)
        ae.vbias = np.array(d["vbias"], dtype=np.float64)
        ae.norm_min = np.array([np.inf if v is None else v for v in d["norm_min"]], dtype=np.float64)
        ae.norm_max = np.array([-np.inf if v is None else v for v in d["norm_max"]], dtype=np.float64)
        ae.n_trained = d["n_trained"]
        return ae


def correlation_distance(prefix: np.ndarray) -> np.ndarray:
    """1 - |Pearson correlation|; constant features are uncorrelated with all others."""
    X = np.asarray(prefix, dtype=np.float64)
    Xc = X - X.mean(axis=0)
    std = np.sqrt(np.mean(Xc * Xc, axis=0))
    ok = std > 0
    denom = np.outer(np.where(ok, std, 1.0), np.where(ok, std, 1.0))
    rho = (Xc.T @ Xc) / X.shape[0] / denom
    rho[~ok, :] = 0.0
    rho[:, ~ok] = 0.0
    D = 1.0 - np.abs(np.clip(rho, -1.0, 1.0))
    np.fill_diagonal(D, 0.0)
    return np.clip((D + D.T) / 2.0, 0.0, 1.0)


def feature_map_fit(prefix: np.ndarray, m: int) -> list[list[int]]:
    """Partition feature indices by single-linkage clustering on correlation distance.

    The dendrogram is cut top-down: any cluster larger than ``m`` is replaced
    by its two children. Clusters are returned sorted, ordered by their
    smallest index.
    """
    prefix = np.asarray(prefix, dtype=np.float64)
    if prefix.ndim != 2 or prefix.shape[0] < 2:
        raise FitError("feature map needs a prefix of at least 2 samples")
    if m < 1:
        raise ParameterError("m must be >= 1")
    n = prefix.shape[1]
    if n == 1:
        return [[0]]
    D = correlation_distance(prefix)
    root = to_tree(linkage(squareform(D, checks=False), method="single"))

    clusters: list[list[int]] = []
    stack = [root]
    while stack:
        node = stack.pop()
        if node.get_count() <= m:
            clusters.append(sorted(node.pre_order()))
        else:
            stack.extend([node.get_right(), node.get_left()])
    return sorted(clusters, key=lambda c: c[0])


class KitsuneModel:
    """Feature-mapped autoencoder ensemble plus output autoencoder."""

    def __init__(self, clusters: Sequence[Sequence[int]], n_features: int,
                 config: KitsuneConfig = KitsuneConfig(), rng: np.random.Generator | None = None):
        flat = sorted(i for c in clusters for i in c)
        if flat != list(range(n_features)):
            raise ParameterError("clusters must partition all feature indices exactly once")
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.n_features = n_features
        self.config = config
        self.clusters = [list(c) for c in clusters]
        self._cluster_idx = [np.array(c, dtype=np.intp) for c in self.clusters]
        make = lambda n: Autoencoder(n, config.hidden_ratio, config.learning_rate, config.lr_decay, rng)  # noqa: E731
        self.ensemble_layer = [make(len(c)) for c in self.clusters]
        self.output_layer = make(len(self.clusters))
        self.n_trained = 0

    @classmethod
    def from_prefix(cls, prefix: np.ndarray, config: KitsuneConfig = KitsuneConfig(),
                    rng: np.random.Generator | None = None) -> "KitsuneModel":
        prefix = np.asarray(prefix, dtype=np.float64)
        clusters = feature_map_fit(prefix, config.max_cluster_size)
        return cls(clusters, prefix.shape[1], config, rng)

    @property
    def autoencoders(self) -> list[Autoencoder]:
        return [*self.ensemble_layer, self.output_layer]

    def set_learning_rate(self, lr: float) -> None:
        for ae in self.autoencoders:
            ae.learning_rate = lr

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_features:
            raise InputError(f"expected {self.n_features} features, got {x.shape[-1]}")
        if not np.all(np.isfinite(x)):
            raise InputError("non-finite value in input")
        return x

    def train_instance(self, x: np.ndarray) -> float:
        x = self._check(x)
        if x.ndim != 1:
            raise InputError("train_instance takes a single feature vector")
        errors = np.array([ae.train(x[idx]) for ae, idx in zip(self.ensemble_layer, self._cluster_idx)])
        rmse = self.output_layer.train(errors)
        self.n_trained += 1
        return rmse

    def score_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(self._check(X))
        errors = np.column_stack([ae.execute(X[:, idx]) for ae, idx in zip(self.ensemble_layer, self._cluster_idx)])
        return self.output_layer.execute(errors)

    def execute(self, x: np.ndarray) -> float:
        """Anomaly score of one sample: RMSE of the output autoencoder. Pure."""
        x = self._check(x)
        if x.ndim != 1:
            raise InputError("execute takes a single feature vector")
        return float(self.score_batch(x[None, :])[0])

    def to_dict(self) -> dict:
        return {
            "n_features": self.n_features,
            "config": asdict(self.config),
            "clusters": self.clusters,
            "ensemble_layer": [ae.to_dict() for ae in self.ensemble_layer],
            "output_layer": self.output_layer.to_dict(),
            "n_trained": self.n_trained,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KitsuneModel":
        m = cls.__new__(cls)
        m.n_features = d["n_features"]
        m.config = KitsuneConfig(**d["config"])
        m.clusters = [list(c) for c in d["clusters"]]
        m._cluster_idx = [np.array(c, dtype=np.intp) for c in m.clusters]
        m.ensemble_layer = [Autoencoder.from_dict(a) for a in d["ensemble_layer"]]
        m.output_layer = Autoencoder.from_dict(d["output_layer"])
        m.n_trained = d["n_trained"]
        return m


def train_model(X: np.ndarray, config: KitsuneConfig = KitsuneConfig(), seed: int | None = None) -> KitsuneModel:
    """Map features on the first ``fm_prefix`` rows, then train once on every row in order."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < config.fm_prefix:
        raise TrainingError(f"need at least fm_prefix={config.fm_prefix} rows, got {X.shape[0]}")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    model = KitsuneModel.from_prefix(X[:config.fm_prefix], config, rng)
    for x in X:
        model.train_instance(x)
    return model


def _train_class(args) -> KitsuneModel:
    X, config, seed_seq = args
    return train_model(X, config, seed=np.random.default_rng(seed_seq).integers(2**63))


class KitsuneEnsemble:
    """One model per class; prediction is the class with the lowest score."""

    def __init__(self, classes: Sequence[int], class_names: Sequence[str], models: Sequence[KitsuneModel],
                 target: str = "joint"):
        if not classes:
            raise ParameterError("ensemble needs at least one class")
        if len(classes) != len(models) or len(class_names) != len(classes):
            raise ParameterError("classes, class_names and models must align")
        dims = {m.n_features for m in models}
        if len(dims) != 1:
            raise ParameterError("all models must share an input dimension")
        self.classes = list(classes)
        self.class_names = list(class_names)
        self.models = list(models)
        self.target = target

    @property
    def n_features(self) -> int:
        return self.models[0].n_features

    @property
    def samples_consumed(self) -> int:
        return sum(m.n_trained for m in self.models)

    def scores(self, X: np.ndarray) -> np.ndarray:
        """(rows, classes) matrix of per-class scores."""
        return np.column_stack([m.score_batch(X) for m in self.models])

    def classify_batch(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        S = self.scores(X)
        return np.asarray(self.classes)[np.argmin(S, axis=1)], S

    def classify(self, x: np.ndarray) -> tuple[int, np.ndarray]:
        labels, S = self.classify_batch(np.asarray(x, dtype=np.float64)[None, :])
        return int(labels[0]), S[0]

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "target": self.target,
            "classes": self.classes,
            "class_names": self.class_names,
            "models": [m.to_dict() for m in self.models],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KitsuneEnsemble":
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise InputError(f"not a version-{MODEL_VERSION} Kitsune model")
        return cls(d["classes"], d["class_names"], [KitsuneModel.from_dict(m) for m in d["models"]], d["target"])


def ensemble_train(X: np.ndarray, labels: np.ndarray, config: KitsuneConfig = KitsuneConfig(),
                   classes: Sequence[int] | None = None, class_names: Sequence[str] | None = None,
                   target: str = "joint", jobs: int = 1) -> KitsuneEnsemble:
    """Train one model per class on that class's rows, in dataset order.

    Per-class models are independent, so ``jobs > 1`` trains them in worker
    processes without changing the result.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    if classes is None:
        classes = sorted(np.unique(labels).tolist())
    if class_names is None:
        class_names = [str(c) for c in classes]
    tasks = []
    for i, c in enumerate(classes):
        rows = X[labels == c]
        if rows.shape[0] < config.fm_prefix:
            raise TrainingError(f"class {class_names[i]} has {rows.shape[0]} rows, fewer than fm_prefix={config.fm_prefix}")
        tasks.append((rows, config, np.random.SeedSequence([config.seed, i])))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            models = list(pool.map(_train_class, tasks))
    else:
        models = [_train_class(t) for t in tasks]
    return KitsuneEnsemble(list(classes), list(class_names), models, target)


class AngleByDistanceEnsemble:
    """Angle ensembles trained separately inside each distance stratum.

    Angle signatures differ between distances, so each sample is scored only
    by the angle models of its own (known) distance class.
    """

    target = "angle"

    def __init__(self, ensembles: dict[int, KitsuneEnsemble]):
        self.ensembles = dict(sorted(ensembles.items()))

    @property
    def n_features(self) -> int:
        return next(iter(self.ensembles.values())).n_features

    @property
    def samples_consumed(self) -> int:
        return sum(e.samples_consumed for e in self.ensembles.values())

    def classify_batch(self, X: np.ndarray, distance: np.ndarray) -> np.ndarray:
        out = np.full(X.shape[0], -1, dtype=np.int64)
        for d, ens in self.ensembles.items():
            rows = np.flatnonzero(distance == d)
            if len(rows):
                out[rows] = ens.classify_batch(X[rows])[0]
        if np.any(out < 0):
            raise InputError("sample from a distance stratum with no trained ensemble")
        return out

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "target": "angle",
            "strata": {str(d): e.to_dict() for d, e in self.ensembles.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AngleByDistanceEnsemble":
        return cls({int(k): KitsuneEnsemble.from_dict(v) for k, v in d["strata"].items()})


def train_angle_by_distance(X: np.ndarray, distance: np.ndarray, angle: np.ndarray,
                            config: KitsuneConfig = KitsuneConfig(), angle_names: Sequence[str] | None = None,
                            jobs: int = 1) -> AngleByDistanceEnsemble:
    out = {}
    for d in sorted(np.unique(distance).tolist()):
        rows = distance == d
        cfg = KitsuneConfig(**{**asdict(config), "seed": config.seed * 1000 + d})
        classes = sorted(np.unique(angle[rows]).tolist())
        names = [angle_names[a] for a in classes] if angle_names else None
        out[d] = ensemble_train(X[rows], angle[rows], cfg, classes, names, target="angle", jobs=jobs)
    return AngleByDistanceEnsemble(out)


def load_kitsune(d: dict):
    if d.get("target") == "angle" and "strata" in d:
        return AngleByDistanceEnsemble.from_dict(d)
    return KitsuneEnsemble.from_dict(d)


def save_json(obj: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# Reconstruction error vs distance


@dataclass(frozen=True)
class DistanceRegression:
    """distance_ft = slope * rmse + intercept."""

    slope: float
    intercept: float
    r2: float

    def predict(self, rmse: np.ndarray | float) -> np.ndarray | float:
        return self.slope * np.asarray(rmse) + self.intercept


def fit_distance_regression(calib: Sequence[tuple[float, float]]) -> DistanceRegression:
    """Least squares of distance (feet) on mean RMSE, from (distance_ft, mean_rmse) pairs."""
    pts = np.asarray(calib, dtype=np.float64).reshape(-1, 2)
    dist, rmse = pts[:, 0], pts[:, 1]
    if len(np.unique(dist)) < 2:
        raise FitError("distance regression needs at least 2 distinct distances")
    r_c = rmse - rmse.mean()
    sxx = float(r_c @ r_c)
    if sxx <= 0:
        raise FitError("degenerate calibration: mean RMSE identical at every distance")
    slope = float(r_c @ (dist - dist.mean())) / sxx
    intercept = float(dist.mean() - slope * rmse.mean())
    resid = dist - (slope * rmse + intercept)
    sst = float(np.sum((dist - dist.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / sst
    return DistanceRegression(slope, intercept, r2)


def distance_calibration(model: KitsuneModel, X: np.ndarray, distance_ft: np.ndarray) -> list[tuple[float, float]]:
    """Mean score of ``model`` per distance, as (distance_ft, mean_rmse) pairs."""
    s = model.score_batch(X)
    return [(float(d), float(s[distance_ft == d].mean())) for d in np.unique(distance_ft)]
