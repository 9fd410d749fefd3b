"""Feature pipelines: empirical subset, MRMR selection and PCA extraction.

All three standardize with statistics fitted on the training split only.
MRMR ranks features on raw (counter-differenced) values, since mutual
information over rank-based bins does not depend on scale.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .dataset import EMPIRICAL_FEATURES, N_ANGLES, LabeledDataset, LinkStatsSchema, UnlabeledDataset
from .errors import FitError, ParameterError, SchemaMismatchError

PIPELINE_FORMAT = "mmwave-geometry/pipeline"
PIPELINE_VERSION = 1


class PipelineKind(str, Enum):
    EMPIRICAL = "empirical"
    MRMR = "mrmr"
    PCA = "pca"
    FULL = "full"


@dataclass(frozen=True)
class Standardizer:
    means: np.ndarray
    stddevs: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.means) / self.stddevs


def fit_standardizer_array(X: np.ndarray) -> Standardizer:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise FitError(f"standardizer needs at least 2 rows, got {X.shape[0] if X.ndim else 0}")
    means = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return Standardizer(means, std)


def fit_standardizer(train: LabeledDataset) -> Standardizer:
    """Per-feature mean and population standard deviation (n divisor).

    Zero deviations are stored as 1 so constant columns map to 0.
    """
    return fit_standardizer_array(train.values)


@dataclass(frozen=True)
class FeatureMatrix:
    """Pipeline output with row labels and capture ids carried through.

    ``distance``/``angle`` are class indices for labelled data and ``None``
    for held-out captures, which carry ``distance_ft`` instead.
    """

    X: np.ndarray
    capture_ids: np.ndarray
    column_names: tuple[str, ...]
    distance: np.ndarray | None = None
    angle: np.ndarray | None = None
    distance_ft: np.ndarray | None = None

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def joint(self) -> np.ndarray:
        return self.distance * N_ANGLES + self.angle

    def take(self, idx) -> "FeatureMatrix":
        idx = np.asarray(idx)
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return FeatureMatrix(self.X[idx], self.capture_ids[idx], self.column_names,
                             pick(self.distance), pick(self.angle), pick(self.distance_ft))


@dataclass(frozen=True)
class FeaturePipeline:
    kind: PipelineKind
    schema: LinkStatsSchema
    standardizer: Standardizer
    k: int
    selected_indices: tuple[int, ...] | None = None
    projection: np.ndarray | None = None
    component_variances: np.ndarray | None = None
    mrmr_scores: tuple[float, ...] | None = field(default=None, compare=False)

    @property
    def output_names(self) -> tuple[str, ...]:
        if self.kind is PipelineKind.PCA:
            return tuple(f"PC{i + 1}" for i in range(self.k))
        return tuple(self.schema.feature_names[i] for i in self.selected_indices)

    def to_dict(self) -> dict:
        d = {
            "format": PIPELINE_FORMAT,
            "version": PIPELINE_VERSION,
            "kind": self.kind.value,
            "k": self.k,
            "schema": self.schema.to_dict(),
            "means": self.standardizer.means.tolist(),
            "stddevs": self.standardizer.stddevs.tolist(),
        }
        if self.kind is PipelineKind.PCA:
            d["projection"] = self.projection.tolist()
            d["component_variances"] = self.component_variances.tolist()
        else:
            d["selected_indices"] = list(self.selected_indices)
            d["selected_names"] = list(self.output_names)
        if self.mrmr_scores is not None:
            d["mrmr_scores"] = list(self.mrmr_scores)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FeaturePipeline":
        if d.get("format") != PIPELINE_FORMAT or d.get("version") != PIPELINE_VERSION:
            raise SchemaMismatchError(f"not a version-{PIPELINE_VERSION} pipeline file")
        kind = PipelineKind(d["kind"])
        std = Standardizer(np.array(d["means"], dtype=np.float64), np.array(d["stddevs"], dtype=np.float64))
        schema = LinkStatsSchema.from_dict(d["schema"])
        if kind is PipelineKind.PCA:
            return cls(kind, schema, std, d["k"], projection=np.array(d["projection"], dtype=np.float64).reshape(-1, d["k"]),
                       component_variances=np.array(d["component_variances"], dtype=np.float64))
        scores = tuple(d["mrmr_scores"]) if "mrmr_scores" in d else None
        return cls(kind, schema, std, d["k"], selected_indices=tuple(d["selected_indices"]), mrmr_scores=scores)


def save_pipeline(pipeline: FeaturePipeline, path: str | Path, extra: dict | None = None) -> None:
    d = pipeline.to_dict()
    if extra:
        d["provenance"] = extra
    Path(path).write_text(json.dumps(d, sort_keys=True, indent=1) + "\n")


def load_pipeline(path: str | Path) -> FeaturePipeline:
    return FeaturePipeline.from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# Empirical subset


def empirical_pipeline(train: LabeledDataset, standardizer: Standardizer | None = None) -> FeaturePipeline:
    idx = tuple(train.schema.index(n) for n in EMPIRICAL_FEATURES)
    std = standardizer or fit_standardizer(train)
    return FeaturePipeline(PipelineKind.EMPIRICAL, train.schema, std, len(idx), selected_indices=idx)


def full_pipeline(train: LabeledDataset, standardizer: Standardizer | None = None) -> FeaturePipeline:
    """Every schema column, standardized. The baseline input for the autoencoder ensemble."""
    idx = tuple(range(len(train.schema.feature_names)))
    std = standardizer or fit_standardizer(train)
    return FeaturePipeline(PipelineKind.FULL, train.schema, std, len(idx), selected_indices=idx)


# --------------------------------------------------------------------------
# MRMR


def equal_frequency_bins(x: np.ndarray, bins: int) -> np.ndarray:
    """Discretize into ``bins`` equally populated bins by rank.

    Tied values share an average rank and therefore a bin.
    """
    x = np.asarray(x)
    n = x.shape[0]
    ranks = rankdata(x, method="average")
    codes = np.floor((ranks - 1.0) * bins / n).astype(np.int64)
    return np.clip(codes, 0, bins - 1)


def mutual_information(a: np.ndarray, b: np.ndarray) -> float:
    """Plug-in mutual information (nats) between two integer code vectors."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    _, a = np.unique(a, return_inverse=True)
    _, b = np.unique(b, return_inverse=True)
    na, nb = a.max() + 1, b.max() + 1
    joint = np.bincount(a * nb + b, minlength=na * nb).reshape(na, nb).astype(np.float64)
    n = joint.sum()
    pxy = joint / n
    px = pxy.sum(axis=1, keepdims=True)
    py = pxy.sum(axis=0, keepdims=True)
    nz = pxy > 0
    return float(np.sum(pxy[nz] * np.log(pxy[nz] / (px @ py)[nz])))


def mrmr_rank(X: np.ndarray, y: np.ndarray, k: int, bins: int = 10) -> tuple[list[int], list[float]]:
    """Greedy MID selection. Returns indices in selection order and their scores."""
    X = np.asarray(X)
    n_features = X.shape[1]
    if not 1 <= k <= n_features:
        raise ParameterError(f"k must be in [1, {n_features}], got {k}")
    if bins < 2:
        raise ParameterError(f"bins must be >= 2, got {bins}")
    codes = [equal_frequency_bins(X[:, j], bins) for j in range(n_features)]
    relevance = np.array([mutual_information(c, y) for c in codes])
    redundancy_sum = np.zeros(n_features)
    selected: list[int] = []
    scores: list[float] = []
    remaining = np.ones(n_features, dtype=bool)
    for step in range(k):
        score = relevance if step == 0 else relevance - redundancy_sum / step
        masked = np.where(remaining, score, -np.inf)
        best = int(np.argmax(masked))
        selected.append(best)
        scores.append(float(score[best]))
        remaining[best] = False
        for j in np.flatnonzero(remaining):
            redundancy_sum[j] += mutual_information(codes[j], codes[best])
    return selected, scores


def mrmr_select(train: LabeledDataset, k: int = 10, bins: int = 10,
                standardizer: Standardizer | None = None) -> FeaturePipeline:
    """Maximum-relevance minimum-redundancy selection against the 20 joint classes."""
    idx, scores = mrmr_rank(train.values, train.joint, k, bins)
    std = standardizer or fit_standardizer(train)
    return FeaturePipeline(PipelineKind.MRMR, train.schema, std, k, selected_indices=tuple(idx),
                           mrmr_scores=tuple(scores))


# --------------------------------------------------------------------------
# PCA


def _covariance(Z: np.ndarray) -> np.ndarray:
    Zc = Z - Z.mean(axis=0)
    return Zc.T @ Zc / Z.shape[0]


def _sorted_eigh(C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    vals, vecs = np.linalg.eigh(C)
    order = np.argsort(-vals, kind="stable")
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    # largest-magnitude entry of each component is positive
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vals, vecs * signs


def pca_components(Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All eigenpairs of the covariance of ``Z``, variances nonincreasing."""
    return _sorted_eigh(_covariance(np.asarray(Z, dtype=np.float64)))


def pca_fit(train: LabeledDataset, k: int = 10, standardizer: Standardizer | None = None) -> FeaturePipeline:
    std = standardizer or fit_standardizer(train)
    Z = std.transform(train.values)
    d = Z.shape[1]
    if not 1 <= k <= d:
        raise ParameterError(f"k must be in [1, {d}], got {k}")
    if Z.shape[0] <= k:
        raise FitError(f"PCA with k={k} needs more than {k} rows, got {Z.shape[0]}")
    vals, vecs = pca_components(Z)
    tol = vals[0] * d * np.finfo(float).eps if vals[0] > 0 else 0.0
    rank = int(np.sum(vals > tol))
    if k > rank:
        warnings.warn(f"PCA k={k} exceeds data rank {rank}; trailing components have zero variance",
                      RuntimeWarning, stacklevel=2)
    vals = np.where(vals > tol, vals, 0.0)
    return FeaturePipeline(PipelineKind.PCA, train.schema, std, k,
                           projection=np.ascontiguousarray(vecs[:, :k]), component_variances=vals[:k].copy())


def explained_variance_curve(train: LabeledDataset, standardizer: Standardizer | None = None) -> list[tuple[int, float]]:
    std = standardizer or fit_standardizer(train)
    vals, _ = pca_components(std.transform(train.values))
    total = vals.sum()
    if total <= 0:
        return [(i + 1, 1.0) for i in range(len(vals))]
    cum = np.cumsum(vals) / total
    cum = np.minimum(np.maximum.accumulate(cum), 1.0)
    cum[-1] = 1.0
    return [(i + 1, float(c)) for i, c in enumerate(cum)]


def write_curve_csv(curve: Sequence[tuple[int, float]], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "cumulative_ratio"])
        for k, r in curve:
            w.writerow([k, repr(float(r))])


# --------------------------------------------------------------------------


def fit_pipeline(kind: PipelineKind | str, train: LabeledDataset, k: int = 10, bins: int = 10) -> FeaturePipeline:
    kind = PipelineKind(kind)
    if kind is PipelineKind.EMPIRICAL:
        return empirical_pipeline(train)
    if kind is PipelineKind.MRMR:
        return mrmr_select(train, k, bins)
    if kind is PipelineKind.FULL:
        return full_pipeline(train)
    return pca_fit(train, k)


def apply(pipeline: FeaturePipeline, dataset: LabeledDataset | UnlabeledDataset) -> FeatureMatrix:
    if dataset.schema.feature_names != pipeline.schema.feature_names:
        raise SchemaMismatchError("dataset schema does not match the pipeline's fit schema")
    Z = pipeline.standardizer.transform(dataset.values)
    if pipeline.kind is PipelineKind.PCA:
        X = Z @ pipeline.projection
    else:
        X = Z[:, list(pipeline.selected_indices)]
    X = np.ascontiguousarray(X)
    if isinstance(dataset, LabeledDataset):
        return FeatureMatrix(X, dataset.capture_ids, pipeline.output_names,
                             np.asarray(dataset.distance), np.asarray(dataset.angle))
    return FeatureMatrix(X, dataset.capture_ids, pipeline.output_names, distance_ft=np.asarray(dataset.distance_ft))
