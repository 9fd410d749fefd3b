"""Link-statistics data model, CSV ingestion, counter differencing, splitting
and the synthetic capture generator.

A capture is a contiguous run of telemetry samples taken with one fixed
radio geometry. Every row belongs to exactly one capture; labels are
constant inside a capture.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import re
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateCaptureError,
    LabelError,
    ParameterError,
    ParseError,
    SchemaMismatchError,
    StratificationError,
)

N_FEATURES = 31
LABEL_COLUMNS = ("distance_ft", "angle_deg", "capture_id")

EMPIRICAL_FEATURES = (
    "Rx Power",
    "Rx Power Average",
    "Rx Power OTA",
    "Rx Power Average OTA",
    "Rx Signal to Noise Ratio",
    "Rx Average SNR",
)

# Published MRMR ranking on the captured data, in reported order.
REFERENCE_MRMR_FEATURES = (
    "Tx MCS",
    "Best RXSS sector",
    "Rx average AGC attenuation",
    "Ethernet Packets Sent",
    "Rx SNR over Gi64",
    "Local Device Rx sector",
    "Rx Power OTA",
    "Rx Power Average",
    "Rx Average SNR over Gi64",
    "TXSS periods SSW frame recv",
)

PER_FEATURE = "Average PER"

REQUIRED_FEATURES = tuple(
    dict.fromkeys(EMPIRICAL_FEATURES + REFERENCE_MRMR_FEATURES + (PER_FEATURE,))
)

_AUX_GAUGES = tuple(f"Aux Gauge {i:02d}" for i in range(1, 13))
_AUX_COUNTERS = tuple(f"Aux Counter {i:02d}" for i in range(1, 5))

DEFAULT_FEATURES = REQUIRED_FEATURES + _AUX_GAUGES + _AUX_COUNTERS

_COUNTER_PATTERN = re.compile(r"packets|frame|periods|counter", re.IGNORECASE)


def is_counter_name(name: str) -> bool:
    return bool(_COUNTER_PATTERN.search(name))


class Distance(Enum):
    D10 = 10
    D20 = 20
    D30 = 30
    D40 = 40
    D50 = 50

    @property
    def feet(self) -> int:
        return self.value

    @property
    def index(self) -> int:
        return _DISTANCE_ORDER.index(self)

    @classmethod
    def from_feet(cls, feet: float) -> "Distance":
        for d in cls:
            if d.value == feet:
                return d
        raise LabelError(
            f"distance {feet:g} ft is not a training class "
            f"(valid: {[d.value for d in cls]}); held-out captures load via parse_unlabeled"
        )


class Angle(Enum):
    A0 = 0
    A45 = 45
    A90 = 90
    A180 = 180

    @property
    def degrees(self) -> int:
        return self.value

    @property
    def index(self) -> int:
        return _ANGLE_ORDER.index(self)

    @classmethod
    def from_degrees(cls, degrees: float) -> "Angle":
        for a in cls:
            if a.value == degrees:
                return a
        raise LabelError(f"angle {degrees:g} deg is not a training class (valid: {[a.value for a in cls]})")


_DISTANCE_ORDER = tuple(Distance)
_ANGLE_ORDER = tuple(Angle)
DISTANCES = _DISTANCE_ORDER
ANGLES = _ANGLE_ORDER
N_DISTANCES = len(DISTANCES)
N_ANGLES = len(ANGLES)
N_JOINT = N_DISTANCES * N_ANGLES


@dataclass(frozen=True)
class ClassLabel:
    distance: Distance
    angle: Angle

    @property
    def joint_index(self) -> int:
        return self.distance.index * N_ANGLES + self.angle.index

    @classmethod
    def from_joint_index(cls, j: int) -> "ClassLabel":
        return cls(DISTANCES[j // N_ANGLES], ANGLES[j % N_ANGLES])

    def __str__(self) -> str:
        return f"{self.distance.feet}ft/{self.angle.degrees}deg"


def joint_class_names() -> list[str]:
    return [str(ClassLabel.from_joint_index(j)) for j in range(N_JOINT)]


@dataclass(frozen=True)
class LinkStatsSchema:
    feature_names: tuple[str, ...]
    counter_flags: tuple[bool, ...]
    version: str

    def __post_init__(self):
        if len(self.feature_names) != N_FEATURES:
            raise SchemaMismatchError(
                f"schema needs exactly {N_FEATURES} features, got {len(self.feature_names)}"
            )
        if len(set(self.feature_names)) != len(self.feature_names):
            dup = next(n for n in self.feature_names if self.feature_names.count(n) > 1)
            raise SchemaMismatchError(f"duplicate feature name {dup!r}", column=dup)
        if len(self.counter_flags) != len(self.feature_names):
            raise SchemaMismatchError("counter_flags length differs from feature_names")
        for name in REQUIRED_FEATURES:
            if name not in self.feature_names:
                raise SchemaMismatchError(f"required feature {name!r} missing from schema", column=name)

    @classmethod
    def from_names(cls, names: Sequence[str], counter_flags: Sequence[bool] | None = None,
                   version: str | None = None) -> "LinkStatsSchema":
        names = tuple(names)
        if counter_flags is None:
            counter_flags = tuple(is_counter_name(n) for n in names)
        if version is None:
            digest = hashlib.sha256("\x1f".join(names).encode()).hexdigest()[:12]
            version = f"header-{digest}"
        return cls(names, tuple(bool(f) for f in counter_flags), version)

    @classmethod
    def default(cls) -> "LinkStatsSchema":
        return cls.from_names(DEFAULT_FEATURES, version="synth-v1")

    def index(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise SchemaMismatchError(f"feature {name!r} not in schema", column=name) from None

    @property
    def counter_indices(self) -> np.ndarray:
        return np.flatnonzero(self.counter_flags)

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "counter_flags": list(self.counter_flags),
            "version": self.version,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinkStatsSchema":
        return cls(tuple(d["feature_names"]), tuple(bool(f) for f in d["counter_flags"]), d["version"])


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class _CaptureTable:
    """Rows of telemetry grouped into captures. Arrays are read-only."""

    schema: LinkStatsSchema
    values: np.ndarray
    capture_ids: np.ndarray
    timestamps: np.ndarray

    _label_fields: tuple[str, ...] = field(default=(), init=False, repr=False)

    def _check_common(self):
        n = self.values.shape[0]
        if self.values.ndim != 2 or self.values.shape[1] != len(self.schema.feature_names):
            raise SchemaMismatchError(
                f"values must be (rows, {len(self.schema.feature_names)}), got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ParseError("non-finite feature value")
        for name in ("capture_ids", "timestamps", *self._label_fields):
            if len(getattr(self, name)) != n:
                raise ParameterError(f"{name} length {len(getattr(self, name))} != {n} rows")

    def __len__(self) -> int:
        return self.values.shape[0]

    def capture_groups(self) -> list[tuple[str, np.ndarray]]:
        """(capture_id, row indices) in order of first appearance."""
        ids, first, inverse = np.unique(self.capture_ids, return_index=True, return_inverse=True)
        order = np.argsort(first, kind="stable")
        rows_by_group = np.argsort(inverse, kind="stable")
        bounds = np.cumsum(np.bincount(inverse, minlength=len(ids)))
        starts = np.concatenate([[0], bounds[:-1]])
        return [(str(ids[g]), rows_by_group[starts[g]:bounds[g]]) for g in order]

    def take(self, idx: np.ndarray, **overrides):
        idx = np.asarray(idx, dtype=np.intp)
        fields = {
            "values": self.values[idx],
            "capture_ids": self.capture_ids[idx],
            "timestamps": self.timestamps[idx],
        }
        for name in self._label_fields:
            fields[name] = getattr(self, name)[idx]
        fields.update(overrides)
        return replace(self, **fields)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.schema.to_dict(), sort_keys=True).encode())
        h.update(np.ascontiguousarray(self.values, dtype="<f8").tobytes())
        for name in self._label_fields:
            h.update(np.ascontiguousarray(getattr(self, name), dtype="<f8").tobytes())
        h.update("\x1f".join(map(str, self.capture_ids)).encode())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class LabeledDataset(_CaptureTable):
    distance: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    angle: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    _label_fields: tuple[str, ...] = field(default=("distance", "angle"), init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(np.asarray(self.values, dtype=np.float64).reshape(-1, len(self.schema.feature_names))))
        object.__setattr__(self, "capture_ids", _frozen(np.asarray(self.capture_ids, dtype=object)))
        object.__setattr__(self, "timestamps", _frozen(np.asarray(self.timestamps, dtype=np.float64)))
        object.__setattr__(self, "distance", _frozen(np.asarray(self.distance, dtype=np.int64)))
        object.__setattr__(self, "angle", _frozen(np.asarray(self.angle, dtype=np.int64)))
        self._check_common()
        if len(self) and (self.distance.min() < 0 or self.distance.max() >= N_DISTANCES
                          or self.angle.min() < 0 or self.angle.max() >= N_ANGLES):
            raise LabelError("label index out of range")
        for cid, rows in self.capture_groups():
            if np.any(self.distance[rows] != self.distance[rows[0]]) or np.any(self.angle[rows] != self.angle[rows[0]]):
                raise LabelError(f"capture {cid!r} mixes labels")
            if np.any(np.diff(self.timestamps[rows]) < 0):
                raise ParseError(f"capture {cid!r} has decreasing timestamps")

    @property
    def joint(self) -> np.ndarray:
        return self.distance * N_ANGLES + self.angle

    @property
    def labels(self) -> list[ClassLabel]:
        return [ClassLabel(DISTANCES[d], ANGLES[a]) for d, a in zip(self.distance, self.angle)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            self.schema == other.schema
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.distance, other.distance)
            and np.array_equal(self.angle, other.angle)
            and np.array_equal(self.capture_ids, other.capture_ids)
        )

    @classmethod
    def empty(cls, schema: LinkStatsSchema) -> "LabeledDataset":
        return cls(schema, np.zeros((0, len(schema.feature_names))), np.zeros(0, dtype=object), np.zeros(0))


@dataclass(frozen=True, eq=False)
class UnlabeledDataset(_CaptureTable):
    """Captures at geometries outside the training label space (e.g. 25/35 ft).

    ``distance_ft`` and ``angle_deg`` keep the nominal setup values for
    diagnostics; they are never converted to class labels.
    """

    distance_ft: np.ndarray = field(default_factory=lambda: np.zeros(0))
    angle_deg: np.ndarray = field(default_factory=lambda: np.zeros(0))

    _label_fields: tuple[str, ...] = field(default=("distance_ft", "angle_deg"), init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(np.asarray(self.values, dtype=np.float64).reshape(-1, len(self.schema.feature_names))))
        object.__setattr__(self, "capture_ids", _frozen(np.asarray(self.capture_ids, dtype=object)))
        object.__setattr__(self, "timestamps", _frozen(np.asarray(self.timestamps, dtype=np.float64)))
        object.__setattr__(self, "distance_ft", _frozen(np.asarray(self.distance_ft, dtype=np.float64)))
        object.__setattr__(self, "angle_deg", _frozen(np.asarray(self.angle_deg, dtype=np.float64)))
        self._check_common()


# --------------------------------------------------------------------------
# CSV


def _read_rows(path: str | Path, schema: LinkStatsSchema | None):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatchError(f"{path}: empty file") from None
        for col in LABEL_COLUMNS:
            if col not in header:
                raise SchemaMismatchError(f"{path}: missing column {col!r}", column=col)
        feature_cols = [c for c in header if c not in LABEL_COLUMNS]
        if schema is None:
            schema = LinkStatsSchema.from_names(feature_cols)
        for col in schema.feature_names:
            if col not in header:
                raise SchemaMismatchError(f"{path}: missing column {col!r}", column=col)
        for col in header:
            if col not in schema.feature_names and col not in LABEL_COLUMNS:
                raise SchemaMismatchError(f"{path}: unexpected column {col!r}", column=col)
        if len(set(header)) != len(header):
            raise SchemaMismatchError(f"{path}: duplicate column in header")
        pos = {c: i for i, c in enumerate(header)}
        feat_pos = [pos[c] for c in schema.feature_names]
        values, dist, ang, caps = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}", row=lineno)
            vals = []
            for name, p in zip(schema.feature_names, feat_pos):
                vals.append(_parse_float(row[p], path, lineno, name))
            values.append(vals)
            dist.append(_parse_float(row[pos["distance_ft"]], path, lineno, "distance_ft"))
            ang.append(_parse_float(row[pos["angle_deg"]], path, lineno, "angle_deg"))
            caps.append(row[pos["capture_id"]])
    values = np.array(values, dtype=np.float64).reshape(-1, N_FEATURES)
    return schema, values, dist, ang, caps


def _parse_float(cell: str, path, lineno: int, column: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(f"{path}:{lineno}: column {column!r}: not a number: {cell!r}",
                         row=lineno, column=column) from None
    if not math.isfinite(v):
        raise ParseError(f"{path}:{lineno}: column {column!r}: non-finite value {cell!r}",
                         row=lineno, column=column)
    return v


def _capture_timestamps(capture_ids: Sequence[str]) -> np.ndarray:
    seen: dict[str, int] = {}
    ts = np.empty(len(capture_ids))
    for i, c in enumerate(capture_ids):
        ts[i] = seen.get(c, 0)
        seen[c] = int(ts[i]) + 1
    return ts


def parse_csv(path: str | Path, schema: LinkStatsSchema | None = None) -> LabeledDataset:
    """Load a labelled capture file.

    When ``schema`` is omitted it is built from the header, with counter
    flags inferred from the feature names. Timestamps are the per-capture
    sample index in file order.
    """
    schema, values, dist, ang, caps = _read_rows(path, schema)
    d_idx = np.array([Distance.from_feet(v).index for v in dist], dtype=np.int64)
    a_idx = np.array([Angle.from_degrees(v).index for v in ang], dtype=np.int64)
    return LabeledDataset(schema, values, np.array(caps, dtype=object), _capture_timestamps(caps), d_idx, a_idx)


def parse_unlabeled(path: str | Path, schema: LinkStatsSchema | None = None) -> UnlabeledDataset:
    schema, values, dist, ang, caps = _read_rows(path, schema)
    return UnlabeledDataset(schema, values, np.array(caps, dtype=object), _capture_timestamps(caps),
                            np.array(dist), np.array(ang))


def _write(path: str | Path, table: _CaptureTable, dist_text: list[str], angle_text: list[str]) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(list(table.schema.feature_names) + list(LABEL_COLUMNS))
            for i in range(len(table)):
                writer.writerow([repr(float(v)) for v in table.values[i]]
                                + [dist_text[i], angle_text[i], str(table.capture_ids[i])])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_csv(dataset: LabeledDataset, path: str | Path) -> None:
    dist = [str(DISTANCES[d].feet) for d in dataset.distance]
    ang = [str(ANGLES[a].degrees) for a in dataset.angle]
    _write(path, dataset, dist, ang)


def write_unlabeled_csv(dataset: UnlabeledDataset, path: str | Path) -> None:
    _write(path, dataset, [f"{v:g}" for v in dataset.distance_ft], [f"{v:g}" for v in dataset.angle_deg])


# --------------------------------------------------------------------------
# Transformations


def normalize_counters(dataset: _CaptureTable):
    """Replace lifetime counters by per-sample increments.

    Within each capture, counter columns become ``raw[i] - raw[i-1]`` and the
    first row is dropped. Gauge columns pass through unchanged.
    """
    counters = dataset.schema.counter_indices
    values = np.array(dataset.values, copy=True)
    keep = np.ones(len(dataset), dtype=bool)
    for cid, rows in dataset.capture_groups():
        if len(rows) < 2:
            raise DegenerateCaptureError(f"capture {cid!r} has {len(rows)} record(s); need at least 2")
        if len(counters):
            prev = dataset.values[rows[:-1]][:, counters]
            cur = dataset.values[rows[1:]][:, counters]
            values[np.ix_(rows[1:], counters)] = cur - prev
        keep[rows[0]] = False
    idx = np.flatnonzero(keep)
    return dataset.take(idx, values=values[idx])


def split(dataset: LabeledDataset, test_fraction: float, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Stratified, leakage-free train/test split.

    Each capture contributes one contiguous test segment of
    ``round(test_fraction * len(capture))`` rows at a seeded offset; the
    rows before and after it stay in train as separate sub-captures
    (``<id>/0`` and ``<id>/1``), so no window can bridge the gap.
    Per-class counts do not depend on the seed.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ParameterError(f"test_fraction must be in (0, 1), got {test_fraction}")
    present = set(np.unique(dataset.joint).tolist())
    missing = [joint_class_names()[j] for j in range(N_JOINT) if j not in present]
    if missing:
        raise StratificationError(f"joint classes absent from dataset: {missing}")

    rng = np.random.default_rng(seed)
    train_rows, train_caps, test_rows, test_caps = [], [], [], []
    for cid, rows in dataset.capture_groups():
        n = len(rows)
        n_test = int(math.floor(test_fraction * n + 0.5))
        offset = int(rng.integers(0, n - n_test + 1))
        head, mid, tail = rows[:offset], rows[offset:offset + n_test], rows[offset + n_test:]
        test_rows.append(mid)
        test_caps += [f"{cid}/test"] * len(mid)
        for part, piece in ((0, head), (1, tail)):
            train_rows.append(piece)
            train_caps += [f"{cid}/{part}"] * len(piece)

    train_idx = np.concatenate(train_rows) if train_rows else np.zeros(0, dtype=np.intp)
    test_idx = np.concatenate(test_rows) if test_rows else np.zeros(0, dtype=np.intp)
    train = dataset.take(train_idx, capture_ids=np.array(train_caps, dtype=object))
    test = dataset.take(test_idx, capture_ids=np.array(test_caps, dtype=object))
    for part, name in ((train, "train"), (test, "test")):
        counts = np.bincount(part.joint, minlength=N_JOINT)
        if np.any(counts == 0):
            bad = [joint_class_names()[j] for j in np.flatnonzero(counts == 0)]
            raise StratificationError(f"too few rows for test_fraction={test_fraction}: {name} lacks {bad}")
    return train, test


# --------------------------------------------------------------------------
# Synthetic captures


@dataclass(frozen=True)
class SynthConfig:
    rows_per_class: int = 250
    noise_sigma: float = 1.0
    separation: float = 6.0
    counter_rate: float = 20.0
    captures_per_class: int = 1
    fading_correlation: float = 0.8

    def __post_init__(self):
        if self.rows_per_class < 2 * self.captures_per_class:
            raise ParameterError("rows_per_class must allow at least 2 rows per capture")
        if self.captures_per_class < 1:
            raise ParameterError("captures_per_class must be >= 1")
        if not self.noise_sigma >= 0:
            raise ParameterError("noise_sigma must be >= 0")
        if not self.separation > 0:
            raise ParameterError("separation must be > 0")
        if not self.counter_rate >= 0:
            raise ParameterError("counter_rate must be >= 0")
        if not 0 <= self.fading_correlation <= 1:
            raise ParameterError("fading_correlation must be in [0, 1]")

    @classmethod
    def from_json(cls, path: str | Path) -> "SynthConfig":
        data = json.loads(Path(path).read_text())
        unknown = set(data) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ParameterError(f"unknown SynthConfig keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


# A0, A45, A90, A180: the 45 and 90 degree setups diverge most from boresight.
_ANGLE_OFFSET = np.array([0.0, 2.0, 3.0, 1.0])


def class_means(schema: LinkStatsSchema, separation: float, distance_step: float,
                angle_index: int) -> np.ndarray:
    """Noise-free gauge means for one geometry; counter columns are zero.

    ``distance_step`` is (feet - 10) / 10, so 0..4 for the training classes
    and fractional for intermediate distances.
    """
    s = separation
    di = distance_step
    ao = _ANGLE_OFFSET[angle_index]
    mu = np.zeros(len(schema.feature_names))
    table = {
        "Rx Power": -45.0 - s * di - 0.1 * s * ao,
        "Rx Power Average": -44.5 - s * di - 0.1 * s * ao,
        "Rx Power OTA": -43.0 - s * di - 0.1 * s * ao,
        "Rx Power Average OTA": -42.5 - s * di - 0.1 * s * ao,
        "Rx Signal to Noise Ratio": 25.0 - 0.8 * s * di - 0.1 * s * ao,
        "Rx Average SNR": 25.5 - 0.8 * s * di - 0.1 * s * ao,
        "Rx SNR over Gi64": 24.0 - 0.8 * s * di - 0.1 * s * ao,
        "Rx Average SNR over Gi64": 24.5 - 0.8 * s * di - 0.1 * s * ao,
        "Tx MCS": 12.0 - 0.5 * s * di,
        "Best RXSS sector": 10.0 + s * ao * (1.0 + 0.2 * di),
        "Local Device Rx sector": 20.0 - s * ao,
        "Rx average AGC attenuation": 5.0 + 0.5 * s * di + 0.3 * s * ao,
        PER_FEATURE: 0.5 + 0.25 * s * di,
    }
    for name, value in table.items():
        if name in schema.feature_names:
            mu[schema.index(name)] = value
    mu[schema.counter_indices] = 0.0
    return mu


_FADING_FEATURES = (
    "Rx Power", "Rx Power Average", "Rx Power OTA", "Rx Power Average OTA",
    "Rx Signal to Noise Ratio", "Rx Average SNR", "Rx SNR over Gi64", "Rx Average SNR over Gi64",
)


def _synth_block(rng: np.random.Generator, schema: LinkStatsSchema, config: SynthConfig,
                 distance_step: float, angle_index: int, n: int) -> np.ndarray:
    mu = class_means(schema, config.separation, distance_step, angle_index)
    noise = rng.standard_normal((n, len(mu)))
    # received-power and SNR readings share one per-sample fading term;
    # the mix keeps each column's marginal variance at noise_sigma**2
    fading = rng.standard_normal(n)
    rho = config.fading_correlation
    shared = [schema.index(f) for f in _FADING_FEATURES if f in schema.feature_names]
    noise[:, shared] = math.sqrt(rho) * fading[:, None] + math.sqrt(1.0 - rho) * noise[:, shared]
    block = mu + config.noise_sigma * noise
    counters = schema.counter_indices
    rate = config.counter_rate * (1.0 + 0.25 * distance_step + 0.1 * _ANGLE_OFFSET[angle_index])
    for c in counters:
        start = float(rng.integers(0, 1_000_000))
        increments = rng.poisson(rate, size=n).astype(np.float64)
        block[:, c] = start + np.cumsum(increments)
    return block


def _capture_sizes(total: int, k: int) -> list[int]:
    base, extra = divmod(total, k)
    return [base + (1 if i < extra else 0) for i in range(k)]


def synth_generate(config: SynthConfig, seed: int, schema: LinkStatsSchema | None = None) -> LabeledDataset:
    """Desk-scale stand-in for a 20-class capture campaign.

    Rows come out class by class (distance-major), each class split into
    ``captures_per_class`` contiguous captures. Counter columns are raw
    lifetime counters; run :func:`normalize_counters` before modelling.
    """
    schema = schema or LinkStatsSchema.default()
    rng = np.random.default_rng(seed)
    blocks, dist, ang, caps, ts = [], [], [], [], []
    for d in DISTANCES:
        for a in ANGLES:
            for c, n in enumerate(_capture_sizes(config.rows_per_class, config.captures_per_class)):
                blocks.append(_synth_block(rng, schema, config, d.index, a.index, n))
                dist += [d.index] * n
                ang += [a.index] * n
                caps += [f"D{d.feet}_A{a.degrees}_c{c}"] * n
                ts.extend(range(n))
    return LabeledDataset(schema, np.vstack(blocks), np.array(caps, dtype=object), np.array(ts, dtype=float),
                          np.array(dist), np.array(ang))


def synth_heldout(config: SynthConfig, seed: int, distances_ft: Iterable[float] = (25.0, 35.0),
                  schema: LinkStatsSchema | None = None) -> UnlabeledDataset:
    """Captures at intermediate distances, all four angles each."""
    schema = schema or LinkStatsSchema.default()
    rng = np.random.default_rng(seed)
    blocks, dist, ang, caps, ts = [], [], [], [], []
    for ft in distances_ft:
        step = (float(ft) - 10.0) / 10.0
        for a in ANGLES:
            n = config.rows_per_class
            blocks.append(_synth_block(rng, schema, config, step, a.index, n))
            dist += [float(ft)] * n
            ang += [float(a.degrees)] * n
            caps += [f"D{ft:g}_A{a.degrees}_c0"] * n
            ts.extend(range(n))
    return UnlabeledDataset(schema, np.vstack(blocks), np.array(caps, dtype=object), np.array(ts, dtype=float),
                            np.array(dist), np.array(ang))
