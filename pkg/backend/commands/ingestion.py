"""
ingest / slice / augment - dataset construction over a data directory.
"""
import argparse
import logging
from pathlib import Path

from commands.common import Settings, emit, write_manifest
from integrations.clients import open_commit_source
from services.orchestrator import DatasetPipeline, PipelineOptions, augment_existing, reslice_existing
from services.records import parse_cwe, parse_ops

logger = logging.getLogger(__name__)


def parse_ratios(text: str) -> tuple[int, int, int]:
    try:
        parts = tuple(int(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected train:validation:test integers, got {text!r}")
    if len(parts) != 3 or any(x <= 0 for x in parts):
        raise argparse.ArgumentTypeError(f"expected three positive integers, got {text!r}")
    return parts


def cmd_ingest(args, settings: Settings) -> int:
    seed = settings.seed if args.seed is None else args.seed
    options = PipelineOptions(
        seed=seed,
        max_nodes=args.max_nodes or settings.max_nodes,
        ratios=args.split,
        ops=parse_ops(args.ops),
        per_op_target=args.per_op_target,
        augment=not args.no_augment,
        cwe=parse_cwe(args.cwe) if args.cwe else None,
        workers=settings.workers,
    )
    out_dir = Path(args.out_dir)
    result = DatasetPipeline(out_dir, options).run(open_commit_source(args.input))
    config = {
        "input": Path(args.input).name, "max_nodes": options.max_nodes, "split": list(options.ratios),
        "ops": [op.value for op in options.ops], "per_op_target": options.per_op_target,
        "augment": options.augment, "cwe": options.cwe.value if options.cwe else None,
    }
    manifest = write_manifest(out_dir, "ingest", seed, config, result["outputs"])
    emit({"out_dir": str(out_dir), "outputs": sorted(result["outputs"] + [manifest.name])})
    return 0


def cmd_slice(args, settings: Settings) -> int:
    slices = reslice_existing(args.data_dir, settings.workers)
    write_manifest(args.data_dir, "slice", settings.seed, {}, ["slices.jsonl"], name="manifest.slice.json")
    emit({"slices": len(slices)})
    return 0


def cmd_augment(args, settings: Settings) -> int:
    seed = settings.seed if args.seed is None else args.seed
    ops = parse_ops(args.ops)
    fresh, stats = augment_existing(args.data_dir, ops, args.per_op_target, seed,
                                    args.max_nodes or settings.max_nodes)
    config = {"ops": [op.value for op in ops], "per_op_target": args.per_op_target}
    write_manifest(args.data_dir, "augment", seed, config, ["functions.jsonl", "graphs.jsonl", "split.json"],
                   name="manifest.augment.json")
    emit({"mutants": len(fresh), "per_op": stats.to_dict()})
    return 0


def register(subparsers, settings: Settings) -> None:
    p = subparsers.add_parser("ingest", help="Build the labeled dataset from commits")
    p.add_argument("--input", required=True, help="Commit dump (JSON lines) or local git repository")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--cwe", default=None, help="Keep only this CWE")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-nodes", type=int, default=None)
    p.add_argument("--split", type=parse_ratios, default=(6, 2, 2), help="train:validation:test ratios")
    p.add_argument("--ops", default=None, help="Mutation operators, e.g. rn,ai (default all)")
    p.add_argument("--per-op-target", type=int, default=None)
    p.add_argument("--no-augment", action="store_true")
    p.set_defaults(handler=cmd_ingest)

    p = subparsers.add_parser("slice", help="Recompute vulnerability-related slices")
    p.add_argument("--data-dir", default=settings.data_dir)
    p.set_defaults(handler=cmd_slice)

    p = subparsers.add_parser("augment", help="Add mutants of train-split vulnerable functions")
    p.add_argument("--data-dir", default=settings.data_dir)
    p.add_argument("--ops", default=None)
    p.add_argument("--per-op-target", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-nodes", type=int, default=None)
    p.set_defaults(handler=cmd_augment)
