"""
Per-CWE classifier ensemble: threshold, majority vote, metrics and the
evaluation report.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from services.cfront import parse_source
from services.cpg import build_cpg, graph_record
from services.errors import DatasetError, LengthMismatch, MissingCheckpoint, SizeExceeded, WrongArity
from services.ggnn import ModelState, Vocabulary, encode_graph, predict
from services.records import CWE_ORDER, CweLabel

logger = logging.getLogger(__name__)

THRESHOLD = 0.5
MAJORITY = len(CWE_ORDER) // 2 + 1
DEFAULT_MAX_NODES = 800
REPORT_COLUMNS = ["classifier", "n", "tp", "fp", "fn", "tn", "precision", "recall", "f1"]


# Pydantic Models
class Verdict(BaseModel):
    """Outcome of the five-way vote for one function."""
    per_cwe_logits: list[float] = Field(..., description="Classifier outputs in CWE_ORDER")
    per_cwe_labels: list[int] = Field(..., description="1 where the output is strictly above 0.5")
    final: int = Field(..., ge=0, le=1)
    attributed_cwe: Optional[CweLabel] = Field(None, description="Highest-scoring positive classifier")
    cwes: list[CweLabel] = Field(default_factory=lambda: list(CWE_ORDER))


class Metrics(BaseModel):
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    precision_undefined: bool = False
    recall_undefined: bool = False
    f1_undefined: bool = False


def vote(logits: Sequence[float]) -> Verdict:
    logits = [float(x) for x in logits]
    if len(logits) != len(CWE_ORDER):
        raise WrongArity(f"expected {len(CWE_ORDER)} classifier outputs, got {len(logits)}")
    labels = [int(x > THRESHOLD) for x in logits]
    final = int(sum(labels) >= MAJORITY)
    attributed = None
    if final:
        best = max((i for i, bit in enumerate(labels) if bit), key=lambda i: (logits[i], -i))
        attributed = CWE_ORDER[best]
    return Verdict(per_cwe_logits=logits, per_cwe_labels=labels, final=final, attributed_cwe=attributed)


def metrics(predictions: Sequence[int], labels: Sequence[int]) -> Metrics:
    """Precision, recall and F1; a zero denominator yields 0 and sets the flag."""
    if len(predictions) != len(labels):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(labels)} labels")
    pairs = [(int(p), int(y)) for p, y in zip(predictions, labels)]
    tp = sum(1 for p, y in pairs if p == 1 and y == 1)
    fp = sum(1 for p, y in pairs if p == 1 and y == 0)
    fn = sum(1 for p, y in pairs if p == 0 and y == 1)
    tn = len(pairs) - tp - fp - fn
    m = Metrics(tp=tp, fp=fp, fn=fn, tn=tn)
    if tp + fp:
        m.precision = tp / (tp + fp)
    else:
        m.precision_undefined = True
    if tp + fn:
        m.recall = tp / (tp + fn)
    else:
        m.recall_undefined = True
    if m.precision + m.recall > 0:
        m.f1 = 2 * m.precision * m.recall / (m.precision + m.recall)
    else:
        m.f1_undefined = True
    return m


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

Scorer = Callable[[dict, ModelState], float]


def score_graph(record: dict, model: ModelState) -> float:
    graph = encode_graph(record, Vocabulary(model.vocabulary))
    return float(predict([graph], model)[0])


def score_records(records: Sequence[dict], model: ModelState, batch: int = 64) -> np.ndarray:
    vocab = Vocabulary(model.vocabulary)
    graphs = [encode_graph(r, vocab) for r in records]
    chunks = [predict(graphs[i:i + batch], model) for i in range(0, len(graphs), batch)]
    return np.concatenate(chunks) if chunks else np.zeros(0)


def checkpoint_path(models_dir, cwe: CweLabel) -> Path:
    return Path(models_dir) / f"{cwe.value}.ckpt"


def load_models(models_dir, cwes: Sequence[CweLabel] = CWE_ORDER) -> dict[CweLabel, ModelState]:
    models = {}
    for cwe in cwes:
        path = checkpoint_path(models_dir, cwe)
        if not path.is_file():
            raise MissingCheckpoint(f"no checkpoint for {cwe.value} at {path}")
        models[cwe] = ModelState.load(path)
    logger.info(f"Loaded {len(models)} classifiers from {models_dir}")
    return models


def _require_all(models: Mapping[CweLabel, ModelState]) -> list[ModelState]:
    missing = [c.value for c in CWE_ORDER if c not in models]
    if missing:
        raise MissingCheckpoint(f"ensemble needs all five classifiers, missing {missing}")
    return [models[c] for c in CWE_ORDER]


def predict_function(code: str, models: Mapping[CweLabel, ModelState], max_nodes: int = DEFAULT_MAX_NODES,
                     workers: int = 1, scorer: Scorer = score_graph) -> Verdict:
    """Build the Cpg once and run every classifier with its own hop count."""
    ordered = _require_all(models)
    cpg = build_cpg(parse_source(code))
    if cpg.num_nodes > max_nodes:
        raise SizeExceeded(f"function has {cpg.num_nodes} graph nodes (limit {max_nodes})")
    record = graph_record(cpg)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            logits = list(pool.map(lambda m: scorer(record, m), ordered))
    else:
        logits = [scorer(record, m) for m in ordered]
    return vote(logits)


# ---------------------------------------------------------------------------
# Evaluation report
# ---------------------------------------------------------------------------

def _row(name: str, preds: Sequence[int], labels: Sequence[int]) -> dict:
    m = metrics(preds, labels)
    return {"classifier": name, "n": len(labels), "tp": m.tp, "fp": m.fp, "fn": m.fn, "tn": m.tn,
            "precision": m.precision, "recall": m.recall, "f1": m.f1}


def evaluate_report(test_records: Sequence[dict], models: Mapping[CweLabel, ModelState]) -> pd.DataFrame:
    """One row per CWE (scored by its own classifier) plus the ensemble vote over everything."""
    if not test_records:
        raise DatasetError("test split is empty; nothing to evaluate")
    ordered = _require_all(models)
    labels = [int(r.get("label") or 0) for r in test_records]
    scores = np.stack([score_records(test_records, m) for m in ordered], axis=1)

    rows = []
    for k, cwe in enumerate(CWE_ORDER):
        idx = [i for i, r in enumerate(test_records) if r.get("cwe") == cwe.value]
        if not idx:
            continue
        rows.append(_row(cwe.value, [int(scores[i, k] > THRESHOLD) for i in idx], [labels[i] for i in idx]))
    verdicts = [vote(scores[i]) for i in range(len(test_records))]
    rows.append(_row("ensemble", [v.final for v in verdicts], labels))
    report = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    logger.info(f"Evaluated {len(test_records)} test graphs:\n{format_report(report)}")
    return report


def format_report(report: pd.DataFrame) -> str:
    return report.to_string(index=False, float_format=lambda x: f"{x:.4f}")


def write_report(report: pd.DataFrame, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, txt_path = out_dir / "report.csv", out_dir / "report.txt"
    report.to_csv(csv_path, index=False, float_format="%.4f", lineterminator="\n")
    txt_path.write_text(format_report(report) + "\n", encoding="utf-8")
    return [csv_path, txt_path]
