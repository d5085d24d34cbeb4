"""
train / predict / gradcheck - classifiers and their self-checks.
"""
import logging
from pathlib import Path

import db as database
from commands.common import Settings, emit, read_source, write_manifest
from services.ensemble import checkpoint_path, load_models, predict_function
from services.ggnn import Variant, Vocabulary
from services.orchestrator import load_graph_records
from services.records import DatasetSplit, parse_cwe, parse_ops
from services.synthetic import edge_type_dataset
from services.trainer import (
    TrainConfig,
    encode_records,
    evaluate_graphs,
    gradient_check,
    load_train_config,
    train_records,
)

logger = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-4


def load_training_sets(data_dir, config: TrainConfig) -> tuple[list[dict], list[dict]]:
    """Train and validation graph records of one CWE; mutants filtered by augment_ops."""
    root = Path(data_dir)
    split = DatasetSplit.model_validate(database.read_document("split.json", root))
    mutation_of = {f["id"]: f.get("mutation") for f in database.functions_collection(root).find_many()}
    allowed = {op.value for op in parse_ops(config.augment_ops)}
    graphs = load_graph_records(root, {"cwe": config.cwe.value})
    train_ids, val_ids = set(split.train), set(split.validation)

    def keep(g: dict) -> bool:
        op = mutation_of.get(g["function_id"])
        return op is None or op in allowed

    train_set = [g for g in graphs if g["function_id"] in train_ids and keep(g)]
    val_set = [g for g in graphs if g["function_id"] in val_ids]
    logger.info(f"{config.cwe.value}: {len(train_set)} train / {len(val_set)} validation graphs")
    return train_set, val_set


def cmd_train(args, settings: Settings) -> int:
    overrides = {
        "cwe": parse_cwe(args.cwe), "hops": args.hops, "seed": args.seed, "epochs": args.epochs,
        "lr": args.lr, "batch": args.batch, "variant": args.variant, "augment_ops": args.augment_ops,
        "d": args.d, "d_edge": args.d_edge, "dropout": args.dropout,
    }
    config = load_train_config(args.config, overrides, {"seed": settings.seed, "workers": settings.workers})
    train_set, val_set = load_training_sets(args.data_dir, config)
    result = train_records(train_set, val_set, config)
    result.model.meta["augment_ops"] = [op.value for op in parse_ops(config.augment_ops)]

    out_dir = Path(args.out_dir)
    ckpt = checkpoint_path(out_dir, config.cwe)
    result.model.save(ckpt)
    history = database.write_document(
        f"{config.cwe.value}.history.json",
        {"best_epoch": result.best_epoch, "best_val_f1": result.best_val_f1, "epochs": result.history},
        out_dir)
    write_manifest(out_dir, "train", config.seed, config.model_dump(mode="json"), [ckpt, history],
                   name=f"{config.cwe.value}.manifest.json")
    emit({"checkpoint": str(ckpt), "best_epoch": result.best_epoch, "best_val_f1": result.best_val_f1})
    return 0


def cmd_predict(args, settings: Settings) -> int:
    models = load_models(args.models)
    verdict = predict_function(read_source(args.function), models,
                               max_nodes=args.max_nodes or settings.max_nodes, workers=settings.workers)
    emit(verdict.model_dump(mode="json"))
    return 0


def synthetic_accuracy(seed: int, epochs: int) -> float:
    """Short edge-aware run on the edge-type dataset; held-out accuracy."""
    train_set, held_out = edge_type_dataset(400, seed)
    config = TrainConfig(d=16, d_edge=16, hops=1, dropout=0.0, lr=0.01, batch=32, epochs=epochs,
                         seed=seed, min_freq=1)
    result = train_records(train_set, held_out, config)
    graphs = encode_records(held_out, Vocabulary(result.model.vocabulary))
    return evaluate_graphs(result.model, graphs)["accuracy"]


def cmd_gradcheck(args, settings: Settings) -> int:
    seed = settings.seed if args.seed is None else args.seed
    error = gradient_check(seed=seed, samples=args.samples)
    out = {"max_relative_error": error, "samples": args.samples, "seed": seed}
    if args.synthetic:
        out["synthetic_accuracy"] = synthetic_accuracy(seed, args.epochs)
    emit(out)
    if error > GRADCHECK_TOLERANCE:
        logger.error(f"Gradient check failed: {error:.3e} > {GRADCHECK_TOLERANCE}")
        return 1
    return 0


def register(subparsers, settings: Settings) -> None:
    p = subparsers.add_parser("train", help="Train one per-CWE classifier")
    p.add_argument("--data-dir", default=settings.data_dir)
    p.add_argument("--cwe", required=True)
    p.add_argument("--out-dir", required=True, help="Models directory")
    p.add_argument("--config", default=None, help="key=value training config file")
    p.add_argument("--hops", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--d-edge", type=int, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--variant", choices=[v.value for v in Variant], default=None)
    p.add_argument("--augment-ops", default=None, help="Mutant families joining train: all, none, rn,ai, ...")
    p.set_defaults(handler=cmd_train)

    p = subparsers.add_parser("predict", help="Vote the five classifiers on one C function")
    p.add_argument("--models", required=True)
    p.add_argument("--function", required=True)
    p.add_argument("--max-nodes", type=int, default=None)
    p.set_defaults(handler=cmd_predict)

    p = subparsers.add_parser("gradcheck", help="Check model gradients against central differences")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--synthetic", action="store_true", help="Also train briefly on the edge-type dataset")
    p.add_argument("--epochs", type=int, default=30, help="Epochs for --synthetic")
    p.set_defaults(handler=cmd_gradcheck)
