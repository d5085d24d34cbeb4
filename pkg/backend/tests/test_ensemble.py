import itertools

import numpy as np
import pandas as pd
import pytest

from services.cfront import parse_source
from services.cpg import build_cpg, graph_record
from services.ensemble import (
    REPORT_COLUMNS,
    checkpoint_path,
    evaluate_report,
    load_models,
    metrics,
    predict_function,
    score_graph,
    score_records,
    vote,
    write_report,
)
from services.errors import DatasetError, LengthMismatch, MissingCheckpoint, SizeExceeded, WrongArity
from services.ggnn import Hyperparameters, ModelState, Variant
from services.records import CWE_ORDER, CweLabel
from tests.fixtures.corpus import READ_REQUEST


def constant_model(positive: bool) -> ModelState:
    """Bag-of-tokens model that scores every non-empty graph above or below 0.5."""
    hyper = Hyperparameters(d=2, d_edge=2, hops=0, dropout=0.0, variant=Variant.GCN, vocab_size=2)
    params = {"E_token": np.ones((2, 2)), "W_out": np.full((2, 1), 1.0 if positive else -1.0)}
    return ModelState(params=params, hyper=hyper, vocabulary=["<pad>", "<unk>"])


def ensemble(positives: set[CweLabel]) -> dict[CweLabel, ModelState]:
    return {cwe: constant_model(cwe in positives) for cwe in CWE_ORDER}


def labelled_records() -> list[dict]:
    records = []
    for cwe in CWE_ORDER:
        for label in (1, 0):
            record = graph_record(build_cpg(parse_source(READ_REQUEST.vulnerable), f"{cwe.value}:{label}"),
                                  label, cwe.value)
            records.append(record)
    return records


# ---- voting ----

@pytest.mark.parametrize("bits", list(itertools.product([0, 1], repeat=5)))
def test_vote_table(bits):
    logits = [0.6 + 0.01 * i if b else 0.1 for i, b in enumerate(bits)]
    verdict = vote(logits)
    assert verdict.per_cwe_labels == list(bits)
    assert verdict.final == int(sum(bits) >= 3)
    if verdict.final:
        highest = max(i for i, b in enumerate(bits) if b)
        assert verdict.attributed_cwe == CWE_ORDER[highest]
    else:
        assert verdict.attributed_cwe is None


def test_threshold_is_strict():
    assert vote([0.5] * 5).final == 0
    assert vote([0.5] * 5).per_cwe_labels == [0] * 5


def test_attribution_ties_go_to_the_first_cwe():
    verdict = vote([0.7, 0.9, 0.9, 0.2, 0.9])
    assert verdict.final == 1
    assert verdict.attributed_cwe == CweLabel.CWE835


@pytest.mark.parametrize("logits", [[0.9] * 4, [0.9] * 6, []])
def test_vote_needs_five_outputs(logits):
    with pytest.raises(WrongArity):
        vote(logits)


# ---- metrics ----

def test_metrics_balanced_confusion():
    m = metrics([1, 1, 0, 0], [1, 0, 1, 0])
    assert (m.tp, m.fp, m.fn, m.tn) == (1, 1, 1, 1)
    assert (m.precision, m.recall, m.f1) == (0.5, 0.5, 0.5)
    assert not (m.precision_undefined or m.recall_undefined or m.f1_undefined)


def test_metrics_without_positive_predictions():
    m = metrics([0, 0], [1, 1])
    assert m.precision == 0.0 and m.precision_undefined
    assert m.recall == 0.0 and not m.recall_undefined
    assert m.f1 == 0.0 and m.f1_undefined


def test_metrics_without_any_positives():
    m = metrics([0, 0, 0], [0, 0, 0])
    assert m.tn == 3
    assert m.precision_undefined and m.recall_undefined and m.f1_undefined


def test_metrics_perfect():
    m = metrics([1, 0, 1], [1, 0, 1])
    assert (m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0)


def test_metrics_length_mismatch():
    with pytest.raises(LengthMismatch):
        metrics([1, 0], [1])


# ---- prediction ----

SCORES = {CweLabel.CWE404: 0.9, CweLabel.CWE835: 0.7, CweLabel.CWE120: 0.2, CweLabel.CWE672: 0.6,
          CweLabel.CWE362: 0.1}


def scripted_models() -> dict[CweLabel, ModelState]:
    models = {}
    for cwe, score in SCORES.items():
        model = constant_model(True)
        model.meta = {"score": score}
        models[cwe] = model
    return models


def scripted_scorer(record: dict, model: ModelState) -> float:
    assert record["nodes"]
    return model.meta["score"]


@pytest.mark.parametrize("workers", [1, 3])
def test_predict_function_votes(workers):
    verdict = predict_function(READ_REQUEST.vulnerable, scripted_models(), workers=workers,
                               scorer=scripted_scorer)
    assert verdict.per_cwe_logits == [0.9, 0.7, 0.2, 0.6, 0.1]
    assert verdict.per_cwe_labels == [1, 1, 0, 1, 0]
    assert verdict.final == 1
    assert verdict.attributed_cwe == CweLabel.CWE404


def test_predict_function_size_limit():
    with pytest.raises(SizeExceeded):
        predict_function(READ_REQUEST.vulnerable, scripted_models(), max_nodes=5, scorer=scripted_scorer)


def test_predict_function_needs_every_classifier():
    models = scripted_models()
    del models[CweLabel.CWE672]
    with pytest.raises(MissingCheckpoint):
        predict_function(READ_REQUEST.vulnerable, models, scorer=scripted_scorer)


def test_predict_with_real_models():
    verdict = predict_function(READ_REQUEST.vulnerable, ensemble({CweLabel.CWE120, CweLabel.CWE362,
                                                                  CweLabel.CWE404}))
    assert verdict.per_cwe_labels == [1, 0, 1, 0, 1]
    assert verdict.final == 1


def test_score_graph_matches_batched_scores():
    model = constant_model(True)
    records = labelled_records()[:3]
    batched = score_records(records, model, batch=2)
    assert batched.shape == (3,)
    assert [score_graph(r, model) for r in records] == pytest.approx(batched.tolist(), abs=1e-12)


# ---- checkpoints on disk ----

def test_load_models(tmp_path):
    for cwe, model in ensemble({CweLabel.CWE120}).items():
        model.save(checkpoint_path(tmp_path, cwe))
    models = load_models(tmp_path)
    assert list(models) == list(CWE_ORDER)
    assert models[CweLabel.CWE120].params["W_out"][0, 0] == 1.0


def test_load_models_missing(tmp_path):
    constant_model(True).save(checkpoint_path(tmp_path, CweLabel.CWE404))
    with pytest.raises(MissingCheckpoint):
        load_models(tmp_path)


# ---- report ----

def test_report_rows():
    report = evaluate_report(labelled_records(), ensemble({CweLabel.CWE120}))
    assert list(report.columns) == REPORT_COLUMNS
    assert report["classifier"].tolist() == [c.value for c in CWE_ORDER] + ["ensemble"]
    row = report.set_index("classifier").loc["CWE-120"]
    assert (row.tp, row.fp, row.fn, row.tn) == (1, 1, 0, 0)
    assert row.precision == 0.5 and row.recall == 1.0
    other = report.set_index("classifier").loc["CWE-404"]
    assert (other.tp, other.fn, other.tn) == (0, 1, 1)
    overall = report.set_index("classifier").loc["ensemble"]
    assert (overall.n, overall.tp, overall.fn, overall.tn) == (10, 0, 5, 5)


def test_report_majority():
    report = evaluate_report(labelled_records(), ensemble({CweLabel.CWE120, CweLabel.CWE835, CweLabel.CWE672}))
    overall = report.set_index("classifier").loc["ensemble"]
    assert (overall.tp, overall.fp) == (5, 5)
    assert overall.recall == 1.0


def test_report_skips_cwes_without_test_graphs():
    records = [r for r in labelled_records() if r["cwe"] == "CWE-362"]
    report = evaluate_report(records, ensemble(set()))
    assert report["classifier"].tolist() == ["CWE-362", "ensemble"]


def test_report_needs_test_graphs():
    with pytest.raises(DatasetError):
        evaluate_report([], ensemble(set()))


def test_write_report(tmp_path):
    report = evaluate_report(labelled_records(), ensemble({CweLabel.CWE120}))
    csv_path, txt_path = write_report(report, tmp_path / "out")
    again = pd.read_csv(csv_path)
    assert list(again.columns) == REPORT_COLUMNS
    assert again["classifier"].tolist()[-1] == "ensemble"
    assert "ensemble" in txt_path.read_text(encoding="utf-8")
