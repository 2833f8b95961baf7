"""Command-line entry point: train, eval, hist, compare, encode."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import modelfile
from .config import ConfigError, load_config
from .dataio import DataError, Dataset, FeatureStats, feature_stats, load_idx, load_image_manifest
from .dataio import IDX_IMAGES_MAGIC
from .metrics import mcnemar, param_histogram
from .simulate import DeploymentImage, EvalReport, evaluate, rate_encode
from .topology import TopologyError, build_plan
from .trainer import TrainingError, train

EXIT_OK = 0
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_MODEL = 5

DEFAULT_TICKS = (1, 2, 4, 8, 16, 32, 64)

log = logging.getLogger("crossbarnet")


def _emit(rec: dict, stream=None):
    print(json.dumps(rec), file=stream or sys.stdout, flush=True)


def load_dataset(kind: str, paths: dict, limit: int | None = None) -> Dataset:
    if kind == "idx":
        data = load_idx(paths["images"], paths["labels"])
    else:
        data = load_image_manifest(paths["manifest"])
    return data.subset(limit) if limit else data


def preprocess_train(data: Dataset, normalization: dict):
    """Normalize the training split; returns (data, preprocess record)."""
    if normalization["kind"] == "feature_standardize":
        stats = feature_stats(data, normalization["eps"])
        record = {"kind": "feature_standardize", "eps": stats.eps,
                  "mean": stats.mean.ravel().tolist(), "var": stats.var.ravel().tolist()}
        return stats.apply(data), record
    return data, {"kind": "divide255"}


def apply_preprocess(data: Dataset, preprocess: dict) -> Dataset:
    if preprocess.get("kind") == "feature_standardize":
        shape = data.images.shape[1:]
        stats = FeatureStats(np.array(preprocess["mean"]).reshape(shape),
                             np.array(preprocess["var"]).reshape(shape), preprocess["eps"])
        return stats.apply(data)
    return data


def _check_shape(data: Dataset, spec):
    want = (spec.input_height, spec.input_width, spec.channels)
    if data.shape != want:
        raise DataError(f"data instances are {data.shape}, model expects {want}")
    if data.labels.min() < 0 or data.labels.max() >= spec.categories:
        raise DataError(f"labels outside [0, {spec.categories})")


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    data = load_dataset(cfg.data.kind, cfg.data.train, cfg.data.train_limit)
    _check_shape(data, cfg.network)
    data, preprocess = preprocess_train(data, cfg.normalization)
    plan = build_plan(cfg.network, cfg.seed)
    log_path = Path(cfg.output["log"])
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with open(log_path, "w", encoding="utf-8") as logf:
        def on_record(rec):
            logf.write(json.dumps(rec) + "\n")
            if rec["type"] == "epoch" and not args.quiet:
                _emit(rec, sys.stderr)
        model, _ = train(plan, data, cfg.training, on_record=on_record)
    model.preprocess = preprocess
    modelfile.save_checkpoint(cfg.output["checkpoint"], model)
    modelfile.save_deployment(cfg.output["deployment"], DeploymentImage.from_plan(model.plan),
                              preprocess, cfg.seed)
    _emit({"type": "train", "cores": model.plan.n_cores, "checkpoint": cfg.output["checkpoint"],
           "deployment": cfg.output["deployment"], "log": str(log_path)})
    return EXIT_OK


def _read_eval_data(args) -> Dataset:
    path = Path(args.data)
    try:
        with open(path, "rb") as f:
            head = f.read(4)
    except OSError as e:
        raise DataError(str(e)) from None
    if int.from_bytes(head, "big") == IDX_IMAGES_MAGIC:
        if not args.labels:
            raise DataError("IDX image data needs --labels")
        return load_dataset("idx", {"images": path, "labels": args.labels}, args.limit)
    return load_dataset("image-manifest", {"manifest": path}, args.limit)


def _parse_ticks(text: str) -> tuple[int, ...]:
    try:
        ticks = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad tick list {text!r}") from None
    if not ticks or min(ticks) < 1:
        raise argparse.ArgumentTypeError("ticks must be positive integers")
    return ticks


def cmd_eval(args) -> int:
    loaded = modelfile.load(args.model)
    data = _read_eval_data(args)
    _check_shape(data, loaded.image.spec)
    data = apply_preprocess(data, loaded.preprocess)
    out_dir = Path(args.out_dir) if args.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    for T in args.ticks:
        report = evaluate(loaded.image, data, T)
        rec = {"type": "summary", "ticks": T, "instances": len(data),
               "accuracy": report.accuracy}
        if out_dir:
            path = out_dir / f"report_T{T}.jsonl"
            report.to_jsonl(path)
            rec["report"] = str(path)
        _emit(rec)
    return EXIT_OK


def cmd_hist(args) -> int:
    loaded = modelfile.load(args.model)
    hist = param_histogram(loaded.image)
    hist.to_csv(args.out)
    for li in range(len(hist.weight_counts)):
        _emit({"type": "layer", "layer": li + 1, "zero_fraction": hist.zero_fraction(li)})
    return EXIT_OK


def cmd_compare(args) -> int:
    a = EvalReport.from_jsonl(args.report_a)
    b = EvalReport.from_jsonl(args.report_b)
    if not np.array_equal(np.sort(a.ids), np.sort(b.ids)) or len(set(a.ids.tolist())) != len(a.ids):
        raise DataError("reports do not cover the same instance ids")
    order_a, order_b = np.argsort(a.ids), np.argsort(b.ids)
    res = mcnemar(a.correct[order_a], b.correct[order_b], exact=args.exact)
    _emit({"type": "mcnemar", "b": res.outcomes.b, "c": res.outcomes.c,
           "statistic": res.statistic, "p_value": res.p_value})
    return EXIT_OK


def cmd_encode(args) -> int:
    train_ = rate_encode(args.value, args.ticks)
    _emit({"type": "spike_train", "value": args.value, "ticks": args.ticks,
           "count": train_.count, "spikes": "".join("1" if s else "0" for s in train_.spikes)})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crossbarnet", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a network from a run configuration")
    t.add_argument("--config", required=True)
    t.add_argument("--quiet", action="store_true", help="no per-epoch records on stderr")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="rate-coded spiking evaluation of a model file")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True, help="IDX image file or image manifest")
    e.add_argument("--labels", help="IDX label file (with IDX --data)")
    e.add_argument("--ticks", type=_parse_ticks, default=DEFAULT_TICKS)
    e.add_argument("--limit", type=int, help="evaluate only the first N instances")
    e.add_argument("--out-dir", help="write one report_T<T>.jsonl per tick count")
    e.set_defaults(func=cmd_eval)

    h = sub.add_parser("hist", help="export effective weight / bias histograms as CSV")
    h.add_argument("--model", required=True)
    h.add_argument("--out", required=True)
    h.set_defaults(func=cmd_hist)

    c = sub.add_parser("compare", help="McNemar test between two eval reports")
    c.add_argument("report_a")
    c.add_argument("report_b")
    c.add_argument("--exact", action="store_true", help="exact binomial p-value")
    c.set_defaults(func=cmd_compare)

    r = sub.add_parser("encode", help="show the rate-code spike train of a value")
    r.add_argument("--value", type=float, required=True)
    r.add_argument("--ticks", type=int, required=True)
    r.set_defaults(func=cmd_encode)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (TopologyError, TrainingError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except modelfile.ModelFileError as e:
        print(f"model error: {e}", file=sys.stderr)
        return EXIT_MODEL
    except (DataError, ValueError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
