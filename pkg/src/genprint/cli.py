"""Command-line entry point for the full lifecycle.

Exit codes: 0 success, 1 usage, 2 data or schema error, 3 numeric failure.
stdout carries machine-readable JSON only; progress lines go to stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from . import dataio, datagen, pipeline
from . import store as hstore
from .errors import DataError, FormatError, GenprintError, NumericError
from .pipeline import DatasetSplit, PipelineConfig

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _note(message: str) -> None:
    print(message, file=sys.stderr)


def _load_pipeline_config(path: str | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    cfg = dataio.load_config(path)
    return cfg.pipeline if cfg.pipeline is not None else PipelineConfig()


def cmd_gen_data(args) -> int:
    cfg = dataio.load_config(args.config)
    if cfg.synthetic is None:
        raise DataError("config has no 'synthetic' section")
    split = datagen.generate_split(cfg.synthetic)
    os.makedirs(args.out_dir, exist_ok=True)
    paths = {
        "train": os.path.join(args.out_dir, "train.jsonl"),
        "test1": os.path.join(args.out_dir, "test1.jsonl"),
        "test2": os.path.join(args.out_dir, "test2.jsonl"),
        "pool": os.path.join(args.out_dir, "pool.jsonl"),
    }
    dataio.write_samples(paths["train"], split.train_labeled)
    dataio.write_samples(paths["test1"], split.test_clean)
    dataio.write_samples(paths["test2"], split.test_augmented)
    dataio.write_samples(paths["pool"], split.unlabeled_pool, include_labels=False)
    _emit(
        {
            "counts": {
                "train": len(split.train_labeled),
                "test1": len(split.test_clean),
                "test2": len(split.test_augmented),
                "pool": len(split.unlabeled_pool),
            },
            "paths": paths,
        }
    )
    return 0


def cmd_train(args) -> int:
    cfg = _load_pipeline_config(args.config)
    train = dataio.read_samples(args.train)
    pool = dataio.read_samples(args.pool) if args.pool else []
    data = DatasetSplit(
        train_labeled=train, test_clean=[], test_augmented=[], unlabeled_pool=pool
    )
    model, store, log = pipeline.run_training_stage(data, cfg)
    for row in log:
        _note(
            f"epoch {row['epoch']:3d}  loss {row['mean_loss']:.6f}  "
            f"acc {row['train_accuracy']:.4f}  pseudo {row['pseudo_count']}"
        )
    dataio.save_model(args.model_out, model)
    hstore.save(store, args.store_out)
    _emit(
        {
            "model": args.model_out,
            "store": args.store_out,
            "labels": store.labels,
            "entries": store.entry_count,
            "size_bits": hstore.size_bits(store),
            "epochs_run": len(log),
            "final_loss": log[-1]["mean_loss"],
        }
    )
    return 0


def cmd_adapt(args) -> int:
    checksum_before = dataio.file_sha256(args.model)
    model = dataio.load_model(args.model)
    store = hstore.load(args.store)
    exemplars = dataio.read_samples(args.exemplars)
    if not exemplars:
        raise DataError("exemplar file contains no records")
    store = pipeline.run_adaptation_stage(model, store, args.class_name, exemplars)
    hstore.save(store, args.store_out)
    checksum_after = dataio.file_sha256(args.model)
    _emit(
        {
            "store": args.store_out,
            "class_added": args.class_name,
            "exemplars": len(exemplars),
            "entries": store.entry_count,
            "labels": store.labels,
            "model_sha256_before": checksum_before,
            "model_sha256_after": checksum_after,
        }
    )
    return 0


def cmd_infer(args) -> int:
    model = dataio.load_model(args.model)
    store = hstore.load(args.store)
    samples = dataio.read_samples(args.input)
    preds = pipeline.run_inference_stage(model, store, samples) if samples else []
    dataio.write_predictions(args.out, preds)
    _emit({"predictions": args.out, "count": len(preds)})
    return 0


def cmd_eval(args) -> int:
    preds = dataio.read_labeled_ids(args.predictions)
    truths = dataio.read_labeled_ids(args.truth)
    if set(preds) != set(truths):
        raise DataError("prediction and truth id sets differ")
    ids = sorted(preds)
    metrics = pipeline.evaluate(
        [preds[i] for i in ids], [truths[i] for i in ids], args.human_label
    )
    _emit(metrics.as_dict())
    return 0


def cmd_experiment(args) -> int:
    cfg = _load_pipeline_config(args.config)
    data = DatasetSplit(
        train_labeled=dataio.read_samples(args.train),
        test_clean=dataio.read_samples(args.test1),
        test_augmented=dataio.read_samples(args.test2) if args.test2 else [],
        unlabeled_pool=dataio.read_samples(args.pool) if args.pool else [],
    )
    excluded = [c for c in (args.exclude or "").split(",") if c]
    report = pipeline.leave_k_out_experiment(
        data, cfg, excluded, adaptation_exemplars=args.exemplars
    )
    _emit(report.as_dict())
    return 0


def cmd_inspect(args) -> int:
    store = hstore.load(args.store)
    per_label = {
        name: int((store.label_ids == i).sum()) for i, name in enumerate(store.labels)
    }
    _emit(
        {
            "dim": store.dim,
            "labels": store.labels,
            "entries": store.entry_count,
            "entries_per_label": per_label,
            "size_bits": hstore.size_bits(store),
        }
    )
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="genprint", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the embedder and build the store")
    p.add_argument("--config")
    p.add_argument("--train", required=True)
    p.add_argument("--pool")
    p.add_argument("--model-out", required=True)
    p.add_argument("--store-out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("adapt", help="add a class to the store without retraining")
    p.add_argument("--model", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--class-name", required=True)
    p.add_argument("--exemplars", required=True)
    p.add_argument("--store-out", required=True)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("infer", help="classify samples against a store")
    p.add_argument("--model", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against truth labels")
    p.add_argument("--predictions", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--human-label", default="human")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="leave-class-out adaptation experiment")
    p.add_argument("--config")
    p.add_argument("--train", required=True)
    p.add_argument("--test1", required=True)
    p.add_argument("--test2")
    p.add_argument("--pool")
    p.add_argument("--exclude", default="", help="comma-separated class names")
    p.add_argument("--exemplars", type=int, default=50)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("inspect", help="print store contents summary")
    p.add_argument("--store", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit:
        raise
    except NumericError as exc:
        _note(f"numeric failure: {exc}")
        return EXIT_NUMERIC
    except (DataError, FormatError, GenprintError, OSError) as exc:
        _note(f"error: {exc}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
