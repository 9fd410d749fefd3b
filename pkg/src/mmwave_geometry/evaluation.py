"""Scoring: confusion matrices, the model x feature-set accuracy table,
per-distance angle matrices and the held-out distance probe.

Accuracies are kept as integer (correct, total) pairs so that a reported
accuracy is exactly the trace over the total of its confusion matrix.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Hashable, Sequence

import numpy as np

from .dataset import ANGLES, DISTANCES, N_ANGLES, N_DISTANCES
from .errors import InputError, LabelError
from .features import FeatureMatrix
from .kitsune import AngleByDistanceEnsemble, DistanceRegression, KitsuneEnsemble, KitsuneModel
from .lstm import SequenceModel, make_windows

DISTANCE_NAMES = tuple(f"{d.feet}ft" for d in DISTANCES)
ANGLE_NAMES = tuple(f"{a.degrees}deg" for a in ANGLES)

MODEL_ORDER = ("Kitsune", "Multiclass", "Multihead")
FEATURE_ORDER = ("Empirical", "MRMR", "PCA")

# distance %, angle % for each (model, feature set) cell, as published for the real dataset
REFERENCE_ACCURACY = {
    ("Kitsune", "Empirical"): (31.5, 49.2),
    ("Kitsune", "MRMR"): (43.0, 56.9),
    ("Kitsune", "PCA"): (33.5, 59.0),
    ("Multiclass", "Empirical"): (70.9, 88.0),
    ("Multiclass", "MRMR"): (97.8, 99.0),
    ("Multiclass", "PCA"): (80.9, 87.1),
    ("Multihead", "Empirical"): (93.0, 98.6),
    ("Multihead", "MRMR"): (88.5, 92.4),
    ("Multihead", "PCA"): (98.7, 98.9),
}

MISSING = "—"

UNIT_SAMPLE = "sample"
UNIT_WINDOW = "window"


# --------------------------------------------------------------------------
# Confusion matrices


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows indexed by the true class and columns by the prediction."""

    classes: tuple
    counts: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        n = len(self.classes)
        if counts.shape != (n, n):
            raise InputError(f"counts must be {n}x{n}, got {counts.shape}")
        if np.any(counts < 0):
            raise InputError("confusion counts must be nonnegative")
        counts.setflags(write=False)
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "counts", counts)
        if not self.names:
            object.__setattr__(self, "names", tuple(str(c) for c in self.classes))
        elif len(self.names) != n:
            raise InputError("names must align with classes")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def correct(self) -> int:
        return int(np.trace(self.counts))

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else float("nan")

    @property
    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def embed(self, classes: Sequence[Hashable]) -> "ConfusionMatrix":
        """The same counts laid out over a superset of classes."""
        pos = {c: i for i, c in enumerate(classes)}
        missing = [c for c in self.classes if c not in pos]
        if missing:
            raise LabelError(f"classes {missing} not in the target class list")
        out = np.zeros((len(classes), len(classes)), dtype=np.int64)
        ix = [pos[c] for c in self.classes]
        out[np.ix_(ix, ix)] = self.counts
        return ConfusionMatrix(tuple(classes), out)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["truth\\predicted", *self.names])
        for name, row in zip(self.names, self.counts):
            w.writerow([name, *(int(v) for v in row)])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    def to_dict(self) -> dict:
        return {"classes": list(self.classes), "names": list(self.names), "counts": self.counts.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ConfusionMatrix":
        return cls(tuple(d["classes"]), np.array(d["counts"], dtype=np.int64).reshape(len(d["classes"]), -1),
                   tuple(d.get("names", ())))


def read_confusion_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Class names and counts from a grid written by ``ConfusionMatrix.write_csv``."""
    rows = list(csv.reader(Path(path).read_text(encoding="utf-8").splitlines()))
    names = rows[0][1:]
    counts = np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64)
    return names, counts


def confusion(preds: Sequence[Hashable], truth: Sequence[Hashable], classes: Sequence[Hashable],
              names: Sequence[str] = ()) -> ConfusionMatrix:
    """``counts[i][j]`` is the number of items with truth ``classes[i]`` predicted as ``classes[j]``."""
    preds = list(np.asarray(preds).tolist())
    truth = list(np.asarray(truth).tolist())
    if len(preds) != len(truth):
        raise InputError(f"{len(preds)} predictions for {len(truth)} labels")
    pos = {c: i for i, c in enumerate(classes)}
    if len(pos) != len(classes):
        raise InputError("duplicate class in class list")
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for p, t in zip(preds, truth):
        if t not in pos:
            raise LabelError(f"unknown true label {t!r}")
        if p not in pos:
            raise LabelError(f"unknown predicted label {p!r}")
        counts[pos[t], pos[p]] += 1
    return ConfusionMatrix(tuple(classes), counts, tuple(names))


def distance_confusion(preds, truth) -> ConfusionMatrix:
    return confusion(preds, truth, range(N_DISTANCES), DISTANCE_NAMES)


def angle_confusion(preds, truth) -> ConfusionMatrix:
    return confusion(preds, truth, range(N_ANGLES), ANGLE_NAMES)


# --------------------------------------------------------------------------
# Predictions


@dataclass(frozen=True)
class Predictions:
    """Class-index predictions next to the truth they are scored against.

    Either prediction array may be None when the model does not address that
    task (a distance-only ensemble has no angle output).
    """

    distance: np.ndarray
    angle: np.ndarray
    pred_distance: np.ndarray | None
    pred_angle: np.ndarray | None
    unit: str


def predict_kitsune(model: KitsuneEnsemble | AngleByDistanceEnsemble, features: FeatureMatrix) -> Predictions:
    """Per-sample predictions. The angle-by-distance form uses the true distance to pick its stratum."""
    if features.distance is None:
        raise InputError("evaluation needs labeled features")
    X, d, a = features.X, np.asarray(features.distance), np.asarray(features.angle)
    if isinstance(model, AngleByDistanceEnsemble):
        return Predictions(d, a, None, model.classify_batch(X, d), UNIT_SAMPLE)
    pred = model.classify_batch(X)[0]
    if model.target == "distance":
        return Predictions(d, a, pred, None, UNIT_SAMPLE)
    if model.target == "angle":
        return Predictions(d, a, None, pred, UNIT_SAMPLE)
    return Predictions(d, a, pred // N_ANGLES, pred % N_ANGLES, UNIT_SAMPLE)


def predict_lstm(model: SequenceModel, features: FeatureMatrix, window: int, stride: int) -> Predictions:
    """Per-window predictions; each window carries its capture's labels."""
    if features.distance is None:
        raise InputError("evaluation needs labeled features")
    w = make_windows(features, window, stride)
    if len(w) == 0:
        raise InputError(f"no test capture is at least {window} rows long")
    pd_, pa, _ = model.predict(w.X)
    return Predictions(np.asarray(w.distance), np.asarray(w.angle), pd_, pa, UNIT_WINDOW)


# --------------------------------------------------------------------------
# Reports


@dataclass
class EvalReport:
    """Scores of one model family on one feature set."""

    model: str
    features: str
    unit: str
    distance: ConfusionMatrix | None = None
    angle: ConfusionMatrix | None = None
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, model: str, features: str, preds: Predictions, metadata: dict | None = None) -> "EvalReport":
        dist = None if preds.pred_distance is None else distance_confusion(preds.pred_distance, preds.distance)
        ang = None if preds.pred_angle is None else angle_confusion(preds.pred_angle, preds.angle)
        return cls(model, features, preds.unit, dist, ang, dict(metadata or {}))

    @property
    def key(self) -> tuple[str, str]:
        return self.model, self.features

    def merge(self, other: "EvalReport") -> "EvalReport":
        """Combine reports of the same cell that cover different tasks."""
        if other.key != self.key:
            raise InputError(f"cannot merge {other.key} into {self.key}")
        if other.unit != self.unit:
            raise InputError(f"accuracy units differ for {self.key}")
        if (self.distance is not None and other.distance is not None) or (self.angle is not None and other.angle is not None):
            raise InputError(f"more than one model scores the same task for {self.model}/{self.features}")
        meta = {"parts": [self.metadata, other.metadata]} if self.metadata and other.metadata else (self.metadata or other.metadata)
        return EvalReport(self.model, self.features, self.unit, self.distance or other.distance,
                          self.angle or other.angle, meta)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "features": self.features,
            "unit": self.unit,
            "distance": None if self.distance is None else self.distance.to_dict(),
            "angle": None if self.angle is None else self.angle.to_dict(),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        load = lambda m: None if m is None else ConfusionMatrix.from_dict(m)  # noqa: E731
        return cls(d["model"], d["features"], d["unit"], load(d["distance"]), load(d["angle"]), d.get("metadata", {}))


def merge_reports(reports: Sequence[EvalReport]) -> list[EvalReport]:
    """One report per (model, features) cell, in first-seen order."""
    cells: dict[tuple[str, str], EvalReport] = {}
    for r in reports:
        cells[r.key] = cells[r.key].merge(r) if r.key in cells else r
    return list(cells.values())


def percent(cm: ConfusionMatrix | None) -> str:
    """Accuracy in percent to one decimal, rounded half up from the exact ratio."""
    if cm is None or cm.total == 0:
        return MISSING
    q = Decimal(100 * cm.correct) / Decimal(cm.total)
    return str(q.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class TableRow:
    model: str
    features: str
    distance_pct: str
    angle_pct: str
    ref_distance_pct: str
    ref_angle_pct: str
    unit: str
    distance_correct: str
    distance_total: str
    angle_correct: str
    angle_total: str


TABLE_FIELDS = tuple(TableRow.__dataclass_fields__)


def table_rows(reports: Sequence[EvalReport]) -> list[TableRow]:
    """The 9 model x feature-set rows in fixed order, then any other cells."""
    cells = {r.key: r for r in merge_reports(reports)}
    keys = [(m, f) for m in MODEL_ORDER for f in FEATURE_ORDER]
    keys += [k for k in cells if k not in keys]
    rows = []
    for key in keys:
        r = cells.get(key)
        ref = REFERENCE_ACCURACY.get(key)
        dist = r.distance if r else None
        ang = r.angle if r else None
        count = lambda cm, attr: MISSING if cm is None else str(getattr(cm, attr))  # noqa: E731
        rows.append(TableRow(
            key[0], key[1], percent(dist), percent(ang),
            f"{ref[0]:.1f}" if ref else MISSING, f"{ref[1]:.1f}" if ref else MISSING,
            r.unit if r else MISSING,
            count(dist, "correct"), count(dist, "total"), count(ang, "correct"), count(ang, "total"),
        ))
    return rows


def table_csv(rows: Sequence[TableRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_FIELDS)
    for row in rows:
        w.writerow([getattr(row, f) for f in TABLE_FIELDS])
    return buf.getvalue()


def read_table_csv(text: str) -> list[TableRow]:
    reader = csv.DictReader(io.StringIO(text))
    return [TableRow(**rec) for rec in reader]


def table_markdown(rows: Sequence[TableRow], header: dict | None = None) -> str:
    lines = ["# Classification accuracy", ""]
    for k, v in (header or {}).items():
        lines.append(f"- {k}: {v}")
    lines += [
        "- accuracy unit: per sample for Kitsune, per window for the LSTM models",
        "- reference columns: accuracies published for the real dataset, shown for comparison only",
        "",
        "| Model | Features | Distance % | Angle % | Ref distance % | Ref angle % | Unit |",
        "|---|---|---|---|---|---|---|",
    ]
    for r in rows:
        lines.append(f"| {r.model} | {r.features} | {r.distance_pct} | {r.angle_pct} | "
                     f"{r.ref_distance_pct} | {r.ref_angle_pct} | {r.unit} |")
    return "\n".join(lines) + "\n"


def table_report(reports: Sequence[EvalReport], header: dict | None = None) -> tuple[str, str]:
    """(Markdown, CSV) renderings of the accuracy table."""
    rows = table_rows(reports)
    return table_markdown(rows, header), table_csv(rows)


# --------------------------------------------------------------------------
# Angle within each distance


def per_distance_angle_eval(preds: Predictions) -> dict[int, ConfusionMatrix]:
    """Angle confusion inside each true-distance stratum.

    A stratum's classes are the angles that occur in its truth or its
    predictions, so a stratum holding one angle predicted perfectly gives a
    1x1 matrix. Strata with no test rows are left out with a warning.
    """
    if preds.pred_angle is None:
        raise InputError("model makes no angle predictions")
    out = {}
    for d in range(N_DISTANCES):
        rows = preds.distance == d
        if not rows.any():
            warnings.warn(f"no test rows at {DISTANCE_NAMES[d]}; stratum omitted", RuntimeWarning, stacklevel=2)
            continue
        t, p = preds.angle[rows], preds.pred_angle[rows]
        classes = sorted(set(t.tolist()) | set(p.tolist()))
        out[d] = confusion(p, t, classes, [ANGLE_NAMES[c] for c in classes])
    return out


def sum_strata(strata: dict[int, ConfusionMatrix]) -> ConfusionMatrix:
    """Cell-wise sum of per-distance angle matrices over the full angle class list."""
    total = np.zeros((N_ANGLES, N_ANGLES), dtype=np.int64)
    for cm in strata.values():
        total += cm.embed(range(N_ANGLES)).counts
    return ConfusionMatrix(tuple(range(N_ANGLES)), total, ANGLE_NAMES)


# --------------------------------------------------------------------------
# Held-out distances


@dataclass(frozen=True)
class ProbeResult:
    distance_ft: float
    n: int
    histogram: dict[str, int]
    mean_rmse: float
    regression_distance_ft: float | None

    def to_dict(self) -> dict:
        return {
            "distance_ft": self.distance_ft,
            "n": self.n,
            "histogram": self.histogram,
            "mean_rmse": self.mean_rmse,
            "regression_distance_ft": self.regression_distance_ft,
        }


def heldout_probe(ensemble: KitsuneEnsemble, features: FeatureMatrix, reference: KitsuneModel | None = None,
                  regression: DistanceRegression | None = None) -> list[ProbeResult]:
    """Where a distance classifier puts captures from distances it never saw.

    For each held-out distance: a histogram of predicted distance classes,
    the mean score of ``reference`` (by default the ensemble's first model,
    the nearest distance) and the distance read off ``regression`` at that
    mean. Diagnostic only.
    """
    if features.distance_ft is None:
        raise InputError("held-out probe needs per-row distances in feet")
    if ensemble.target not in ("distance", "joint"):
        raise InputError(f"probe needs a distance or joint ensemble, not {ensemble.target!r}")
    reference = reference or ensemble.models[0]
    pred = ensemble.classify_batch(features.X)[0]
    if ensemble.target == "joint":
        pred = pred // N_ANGLES
    scores = reference.score_batch(features.X)
    dist_ft = np.asarray(features.distance_ft, dtype=np.float64)
    out = []
    for ft in np.unique(dist_ft):
        rows = dist_ft == ft
        counts = np.bincount(pred[rows], minlength=N_DISTANCES)
        mean = float(scores[rows].mean())
        est = None if regression is None else float(regression.predict(mean))
        out.append(ProbeResult(float(ft), int(rows.sum()),
                               {DISTANCE_NAMES[i]: int(c) for i, c in enumerate(counts)}, mean, est))
    return out
