"""
evaluate - per-CWE and ensemble precision / recall / F1 on the test split.
"""
import json
import logging
from pathlib import Path

import db as database
from commands.common import Settings, emit, write_manifest
from services.ensemble import evaluate_report, load_models, write_report
from services.orchestrator import load_graph_records
from services.records import DatasetSplit

logger = logging.getLogger(__name__)


def cmd_evaluate(args, settings: Settings) -> int:
    root = Path(args.data_dir)
    split = DatasetSplit.model_validate(database.read_document("split.json", root))
    test = load_graph_records(root, {"function_id": {"$in": set(split.test)}})
    test.sort(key=lambda g: g["function_id"])
    models = load_models(args.models)
    report = evaluate_report(test, models)
    outputs = write_report(report, args.out)
    write_manifest(args.out, "evaluate", settings.seed, {"test_graphs": len(test)}, outputs)
    emit(json.loads(report.to_json(orient="records")))
    return 0


def register(subparsers, settings: Settings) -> None:
    p = subparsers.add_parser("evaluate", help="Write the evaluation report for trained classifiers")
    p.add_argument("--data-dir", default=settings.data_dir)
    p.add_argument("--models", required=True)
    p.add_argument("--out", required=True, help="Report directory")
    p.set_defaults(handler=cmd_evaluate)
