"""Command-line entry point.

    mmwave-geometry synth --rows-per-class 250 --seed 7 -o synth.csv
    mmwave-geometry ingest synth.csv --train train.csv --test test.csv
    mmwave-geometry featurize train.csv --kind pca --k 10 -o pca.json
    mmwave-geometry train kitsune --pipeline pca.json --train train.csv --target joint -o kit.json
    mmwave-geometry train lstm --pipeline pca.json --train train.csv --arch multihead -o mh.json
    mmwave-geometry eval --test test.csv kit.json mh.json -o report/ --per-distance-angle

Every JSON output carries a ``provenance`` block (command, parameters and
sha256 of each input file); CSV outputs get a ``<file>.meta.json`` sidecar
with the same block. Exit codes: 0 success, 2 usage, 3 data, 4 numeric.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    DISTANCES, N_DISTANCES, SynthConfig, joint_class_names, normalize_counters, parse_csv, parse_unlabeled, split,
    synth_generate, synth_heldout, write_csv, write_unlabeled_csv,
)
from .errors import DataError, FitError, InputError, NumericError, ParameterError, TrainingError
from .evaluation import (
    ANGLE_NAMES, DISTANCE_NAMES, ConfusionMatrix, EvalReport, ProbeResult, heldout_probe, merge_reports, per_distance_angle_eval,
    predict_kitsune, predict_lstm, table_report,
)
from .features import FeaturePipeline, PipelineKind, apply, explained_variance_curve, fit_pipeline, write_curve_csv
from .kitsune import (
    DistanceRegression, KitsuneConfig, distance_calibration, ensemble_train, fit_distance_regression, load_kitsune,
    train_angle_by_distance,
)
from .kitsune import MODEL_FORMAT as KITSUNE_FORMAT
from .lstm import MODEL_FORMAT as LSTM_FORMAT
from .lstm import LstmConfig, SequenceModel, make_windows, train

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

FEATURE_LABELS = {"empirical": "Empirical", "mrmr": "MRMR", "pca": "PCA", "full": "Full"}
MODEL_LABELS = {"kitsune": "Kitsune", "multiclass": "Multiclass", "multihead": "Multihead"}


# --------------------------------------------------------------------------
# Provenance and output helpers


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _plain(value):
    if isinstance(value, Path):
        return value.name
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def provenance(args: argparse.Namespace, inputs: dict[str, Path | list[Path]]) -> dict:
    """Command, its parameters and hashes of its inputs. Paths are reduced to file names."""
    params = {k: _plain(v) for k, v in sorted(vars(args).items()) if not k.startswith("_") and k != "config"}
    hashed = {}
    for label, p in sorted(inputs.items()):
        if isinstance(p, list):
            hashed[label] = [{"file": q.name, "sha256": file_sha256(q)} for q in p]
        else:
            hashed[label] = {"file": p.name, "sha256": file_sha256(p)}
    return {"tool": "mmwave-geometry", "version": __version__, "command": args._command,
            "parameters": params, "inputs": hashed}


def write_json(obj: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def write_sidecar(path: Path, prov: dict, extra: dict | None = None) -> None:
    write_json({"provenance": prov, **(extra or {})}, path.with_name(path.name + ".meta.json"))


def read_sidecar(path: Path) -> dict:
    side = path.with_name(path.name + ".meta.json")
    return json.loads(side.read_text(encoding="utf-8")) if side.exists() else {}


def read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc})") from exc


def _out(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


# --------------------------------------------------------------------------
# Commands


def cmd_synth(args) -> None:
    cfg = SynthConfig(args.rows_per_class, args.noise_sigma, args.separation, args.counter_rate,
                      args.captures_per_class, args.fading_correlation)
    prov = provenance(args, {})
    ds = synth_generate(cfg, args.seed)
    write_csv(ds, _out(args.output))
    write_sidecar(args.output, prov, {"synth_config": cfg.to_dict(), "rows": len(ds.values),
                                      "dataset_hash": ds.content_hash()})
    if args.heldout:
        seed = int(np.random.SeedSequence([args.seed, 1]).generate_state(1)[0])
        held = synth_heldout(cfg, seed, args.heldout_distances)
        write_unlabeled_csv(held, _out(args.heldout))
        write_sidecar(args.heldout, prov, {"synth_config": cfg.to_dict(), "rows": len(held.values),
                                           "dataset_hash": held.content_hash()})


def cmd_ingest(args) -> None:
    prov = provenance(args, {"input": args.input})
    if args.unlabeled:
        if args.output is None:
            raise ParameterError("--unlabeled needs -o/--output")
        ds = normalize_counters(parse_unlabeled(args.input))
        write_unlabeled_csv(ds, _out(args.output))
        write_sidecar(args.output, prov, {"rows": len(ds.values), "dataset_hash": ds.content_hash()})
        return
    ds = normalize_counters(parse_csv(args.input))
    if args.output is not None:
        write_csv(ds, _out(args.output))
        write_sidecar(args.output, prov, {"rows": len(ds.values), "dataset_hash": ds.content_hash()})
    if args.train is None and args.test is None:
        if args.output is None:
            raise ParameterError("give --train and --test, or -o/--output")
        return
    if args.train is None or args.test is None:
        raise ParameterError("--train and --test go together")
    tr, te = split(ds, args.test_fraction, args.seed)
    info = {"test_fraction": args.test_fraction, "seed": args.seed, "protocol": "contiguous per-capture test segment",
            "train_rows": len(tr.values), "test_rows": len(te.values), "source_hash": ds.content_hash()}
    write_csv(tr, _out(args.train))
    write_csv(te, _out(args.test))
    write_sidecar(args.train, prov, {"split": info, "dataset_hash": tr.content_hash()})
    write_sidecar(args.test, prov, {"split": info, "dataset_hash": te.content_hash()})


def cmd_featurize(args) -> None:
    prov = provenance(args, {"train": args.train})
    tr = parse_csv(args.train)
    pipe = fit_pipeline(args.kind, tr, args.k, args.bins)
    write_json({**pipe.to_dict(), "provenance": prov, "train_hash": tr.content_hash()}, args.output)
    if pipe.kind is PipelineKind.PCA:
        curve_path = args.curve or args.output.with_name(args.output.stem + ".curve.csv")
        write_curve_csv(explained_variance_curve(tr, pipe.standardizer), _out(curve_path))
        write_sidecar(curve_path, prov)


def _load_train_features(args):
    pipe_doc = read_json(args.pipeline)
    pipe = FeaturePipeline.from_dict(pipe_doc)
    tr = parse_csv(args.train, pipe.schema)
    return pipe, tr, apply(pipe, tr)


def cmd_train_kitsune(args) -> None:
    prov = provenance(args, {"pipeline": args.pipeline, "train": args.train})
    pipe, tr, F = _load_train_features(args)
    cfg = KitsuneConfig(args.max_cluster_size, args.learning_rate, args.lr_decay, args.hidden_ratio,
                        args.fm_prefix, args.seed)
    extra = {}
    if args.target == "distance":
        model = ensemble_train(F.X, F.distance, cfg, list(range(N_DISTANCES)), list(DISTANCE_NAMES),
                               target="distance", jobs=args.jobs)
        ft = np.array([DISTANCES[d].feet for d in F.distance], dtype=np.float64)
        calib = distance_calibration(model.models[0], F.X, ft)
        try:
            reg = fit_distance_regression(calib)
            extra["distance_regression"] = {**asdict(reg), "calibration": calib}
        except FitError as exc:
            print(f"warning: no distance regression: {exc}", file=sys.stderr)
            extra["distance_regression"] = None
    elif args.target == "joint":
        names = joint_class_names()
        model = ensemble_train(F.X, F.joint, cfg, list(range(len(names))), names, target="joint", jobs=args.jobs)
    else:
        model = train_angle_by_distance(F.X, F.distance, F.angle, cfg, list(ANGLE_NAMES), jobs=args.jobs)
    if model.samples_consumed != len(F):
        msg = f"single-pass check failed: consumed {model.samples_consumed} of {len(F)} samples"
        if args.single_pass:
            raise TrainingError(msg)
        print(f"warning: {msg}", file=sys.stderr)
    doc = {**model.to_dict(), **extra, "family": "kitsune", "config": asdict(cfg), "pipeline": pipe.to_dict(),
           "samples_consumed": model.samples_consumed, "train_hash": tr.content_hash(), "provenance": prov}
    write_json(doc, args.output)


def cmd_train_lstm(args) -> None:
    inputs = {"pipeline": args.pipeline, "train": args.train}
    if args.validation:
        inputs["validation"] = args.validation
    prov = provenance(args, inputs)
    pipe, tr, F = _load_train_features(args)
    cfg = LstmConfig(args.hidden, args.window, args.stride, args.epochs, args.batch, args.learning_rate,
                     seed=args.seed)
    windows = make_windows(F, cfg.window, cfg.stride)
    val = None
    if args.validation:
        val = make_windows(apply(pipe, parse_csv(args.validation, pipe.schema)), cfg.window, cfg.stride)
    model, log = train(args.arch, windows, cfg, val)
    doc = {**model.to_dict(), "family": "lstm", "config": asdict(cfg), "pipeline": pipe.to_dict(),
           "train_windows": len(windows), "train_hash": tr.content_hash(), "provenance": prov}
    write_json(doc, args.output)
    log_path = args.log or args.output.with_name(args.output.stem + ".log.csv")
    log.write_csv(_out(log_path))
    write_sidecar(log_path, prov)


def _evaluate_model(path: Path, test) -> tuple[EvalReport, object]:
    doc = read_json(path)
    pipe = FeaturePipeline.from_dict(doc["pipeline"])
    F = apply(pipe, test)
    meta = {"model_file": path.name, "model_sha256": file_sha256(path), "pipeline": pipe.kind.value,
            "config": doc.get("config"), "train_hash": doc.get("train_hash")}
    if doc.get("format") == KITSUNE_FORMAT:
        model = load_kitsune(doc)
        preds = predict_kitsune(model, F)
        meta["target"] = model.target
        label = "Kitsune"
    elif doc.get("format") == LSTM_FORMAT:
        model = SequenceModel.from_dict(doc)
        cfg = doc["config"]
        preds = predict_lstm(model, F, cfg["window"], cfg["stride"])
        meta["arch"] = doc["arch"]
        label = MODEL_LABELS[doc["arch"]]
    else:
        raise InputError(f"{path}: unrecognised model file")
    return EvalReport.from_predictions(label, FEATURE_LABELS[pipe.kind.value], preds, meta), preds


def _slug(*parts: str) -> str:
    return "_".join(p.lower() for p in parts)


def _write_report(outdir: Path, reports: list[EvalReport], header: dict, strata: dict) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    md, table = table_report(reports, header)
    (outdir / "report.md").write_text(md, encoding="utf-8")
    (outdir / "report.csv").write_text(table, encoding="utf-8")
    for r in reports:
        if r.distance is not None:
            r.distance.write_csv(outdir / f"{_slug(r.model, r.features)}_distance.csv")
        if r.angle is not None:
            r.angle.write_csv(outdir / f"{_slug(r.model, r.features)}_angle.csv")
    for key, mats in strata.items():
        for name, cm in mats.items():
            cm.write_csv(outdir / f"{_slug(*key.split('/'))}_angle_at_{name}.csv")
    doc = {"header": header, "cells": [r.to_dict() for r in reports],
           "per_distance_angle": {k: {n: cm.to_dict() for n, cm in v.items()} for k, v in strata.items()}}
    write_json(doc, outdir / "report.json")


def cmd_eval(args) -> None:
    prov = provenance(args, {"test": args.test, "models": list(args.models)})
    test = parse_csv(args.test)
    parts, strata = [], {}
    for path in args.models:
        report, preds = _evaluate_model(path, test)
        parts.append(report)
        if args.per_distance_angle and preds.pred_angle is not None:
            mats = per_distance_angle_eval(preds)
            key = f"{report.model}/{report.features}"
            if key in strata:
                raise InputError(f"two models give angle predictions for {key}")
            strata[key] = {DISTANCE_NAMES[d]: cm for d, cm in mats.items()}
    reports = merge_reports(parts)
    side = read_sidecar(args.test)
    header = {"test data": f"{args.test.name} (sha256 {file_sha256(args.test)[:16]}, content {test.content_hash()[:16]})",
              "split": json.dumps(side.get("split"), sort_keys=True) if side.get("split") else "not recorded",
              "seed": args.seed}
    _write_report(args.output, reports, header, strata)
    write_json({"provenance": prov}, args.output / "provenance.json")


def cmd_report(args) -> None:
    prov = provenance(args, {"reports": list(args.reports)})
    cells, strata, headers = [], {}, []
    for path in args.reports:
        doc = read_json(path)
        cells += [EvalReport.from_dict(c) for c in doc["cells"]]
        headers.append(doc.get("header", {}))
        for k, v in doc.get("per_distance_angle", {}).items():
            strata[k] = {n: ConfusionMatrix.from_dict(m) for n, m in v.items()}
    header = headers[0] if len(headers) == 1 else {f"source {i + 1}": json.dumps(h, sort_keys=True)
                                                   for i, h in enumerate(headers)}
    _write_report(args.output, merge_reports(cells), header, strata)
    write_json({"provenance": prov}, args.output / "provenance.json")


def cmd_probe(args) -> None:
    prov = provenance(args, {"model": args.model, "heldout": args.heldout})
    doc = read_json(args.model)
    if doc.get("format") != KITSUNE_FORMAT:
        raise InputError("probe-heldout needs a Kitsune distance or joint model")
    model = load_kitsune(doc)
    pipe = FeaturePipeline.from_dict(doc["pipeline"])
    held = parse_unlabeled(args.heldout, pipe.schema)
    reg_doc = doc.get("distance_regression")
    reg = None if not reg_doc else DistanceRegression(reg_doc["slope"], reg_doc["intercept"], reg_doc["r2"])
    results: list[ProbeResult] = heldout_probe(model, apply(pipe, held), regression=reg)
    write_json({"provenance": prov, "results": [r.to_dict() for r in results],
                "regression": reg_doc}, args.output)


# --------------------------------------------------------------------------
# Parser


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
    p.add_argument("--config", type=Path, help="JSON file of parameter defaults, keyed by option name")
    return p


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    common = _common()
    parser = argparse.ArgumentParser(prog="mmwave-geometry",
                                     description="Distance and angle classification from mmWave link statistics.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    leaves = {}

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic labeled capture set")
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--rows-per-class", type=int, default=250)
    p.add_argument("--noise-sigma", type=float, default=1.0)
    p.add_argument("--separation", type=float, default=6.0)
    p.add_argument("--counter-rate", type=float, default=20.0)
    p.add_argument("--captures-per-class", type=int, default=1)
    p.add_argument("--fading-correlation", type=float, default=0.8)
    p.add_argument("--heldout", type=Path, help="also write unlabeled captures at intermediate distances")
    p.add_argument("--heldout-distances", type=float, nargs="+", default=[25.0, 35.0])
    p.set_defaults(_func=cmd_synth, _command="synth")
    leaves["synth"] = p

    p = sub.add_parser("ingest", parents=[common], help="difference counters and split into train/test")
    p.add_argument("input", type=Path)
    p.add_argument("--train", type=Path)
    p.add_argument("--test", type=Path)
    p.add_argument("-o", "--output", type=Path, help="write the normalized table without splitting")
    p.add_argument("--test-fraction", type=float, default=0.3)
    p.add_argument("--unlabeled", action="store_true", help="input has no labels (held-out distances)")
    p.set_defaults(_func=cmd_ingest, _command="ingest")
    leaves["ingest"] = p

    p = sub.add_parser("featurize", parents=[common], help="fit a feature pipeline on training data")
    p.add_argument("train", type=Path)
    p.add_argument("--kind", choices=[k.value for k in PipelineKind], default="pca")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--bins", type=int, default=10, help="equal-frequency bins for mutual information")
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--curve", type=Path, help="explained-variance CSV (PCA only)")
    p.set_defaults(_func=cmd_featurize, _command="featurize")
    leaves["featurize"] = p

    p_train = sub.add_parser("train", help="train a model")
    tsub = p_train.add_subparsers(dest="family", required=True)

    p = tsub.add_parser("kitsune", parents=[common], help="autoencoder ensemble, one model per class")
    p.add_argument("--pipeline", type=Path, required=True)
    p.add_argument("--train", type=Path, required=True)
    p.add_argument("--target", choices=["distance", "angle", "joint"], default="joint")
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--jobs", type=int, default=1, help="worker processes for per-class training")
    p.add_argument("--single-pass", action=argparse.BooleanOptionalAction, default=True,
                   help="fail unless every training row was consumed exactly once (default on)")
    p.add_argument("--max-cluster-size", type=int, default=10)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--lr-decay", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--hidden-ratio", type=float, default=0.75)
    p.add_argument("--fm-prefix", type=int, default=200, help="rows used to fit the feature map")
    p.set_defaults(_func=cmd_train_kitsune, _command="train kitsune")
    leaves["train kitsune"] = p

    p = tsub.add_parser("lstm", parents=[common], help="LSTM over sliding windows")
    p.add_argument("--pipeline", type=Path, required=True)
    p.add_argument("--train", type=Path, required=True)
    p.add_argument("--arch", choices=["multiclass", "multihead"], default="multihead")
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--validation", type=Path, help="labeled CSV scored after every epoch")
    p.add_argument("--log", type=Path, help="training log CSV (default <output>.log.csv)")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--window", type=int, default=20)
    p.add_argument("--stride", type=int, default=5)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.set_defaults(_func=cmd_train_lstm, _command="train lstm")
    leaves["train lstm"] = p

    p = sub.add_parser("eval", parents=[common], help="score models on labeled test data")
    p.add_argument("models", type=Path, nargs="+")
    p.add_argument("--test", type=Path, required=True)
    p.add_argument("-o", "--output", type=Path, required=True, help="report directory")
    p.add_argument("--per-distance-angle", action="store_true", help="angle matrices within each distance")
    p.set_defaults(_func=cmd_eval, _command="eval")
    leaves["eval"] = p

    p = sub.add_parser("report", parents=[common], help="merge report.json files into one table")
    p.add_argument("reports", type=Path, nargs="+")
    p.add_argument("-o", "--output", type=Path, required=True, help="report directory")
    p.set_defaults(_func=cmd_report, _command="report")
    leaves["report"] = p

    p = sub.add_parser("probe-heldout", parents=[common], help="classify captures from unseen distances")
    p.add_argument("--model", type=Path, required=True, help="Kitsune distance or joint model")
    p.add_argument("--heldout", type=Path, required=True, help="normalized unlabeled CSV")
    p.add_argument("-o", "--output", type=Path, required=True)
    p.set_defaults(_func=cmd_probe, _command="probe-heldout")
    leaves["probe-heldout"] = p
    return parser, leaves


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser, leaves = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        try:
            cfg = json.loads(args.config.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read --config {args.config}: {exc}")
        if not isinstance(cfg, dict):
            parser.error("--config must hold a JSON object")
        leaf = leaves[args._command]
        known = {a.dest for a in leaf._actions}
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = sorted(set(cfg) - known)
        if unknown:
            parser.error(f"unknown keys in --config: {unknown}")
        for a in leaf._actions:
            if a.dest in cfg and a.type is Path and cfg[a.dest] is not None:
                cfg[a.dest] = [Path(v) for v in cfg[a.dest]] if isinstance(cfg[a.dest], list) else Path(cfg[a.dest])
        # command-line flags still win over the file
        leaf.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def main(argv: list[str] | None = None) -> int:
    args = parse_args(argv)
    try:
        args._func(args)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
