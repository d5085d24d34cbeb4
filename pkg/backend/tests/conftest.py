"""
Shared fixtures: the C pair corpus, extracted pairs and a small built dataset.
"""
import pytest

import db as database
from services.ingest import extract_pair, filter_commits
from services.orchestrator import DatasetPipeline, PipelineOptions
from tests.fixtures.corpus import PAIRS, corpus_commits, write_dump


@pytest.fixture(autouse=True)
def _isolated_store(tmp_path, monkeypatch):
    monkeypatch.setenv("PATCHGRAPH_DATA_DIR", str(tmp_path / "data"))
    database.close_connection()
    yield
    database.close_connection()


@pytest.fixture(scope="session")
def corpus():
    return PAIRS


@pytest.fixture(scope="session")
def extracted_pairs():
    """Every corpus commit through filtering and pair extraction."""
    return [extract_pair(commit, label) for commit, label in filter_commits(corpus_commits())]


@pytest.fixture
def commit_dump(tmp_path):
    return write_dump(tmp_path / "commits.jsonl", corpus_commits())


@pytest.fixture(scope="session")
def built_dataset(tmp_path_factory):
    """Dataset directory from the whole corpus, 1:1:1 split so every CWE fills all three parts."""
    out = tmp_path_factory.mktemp("dataset")
    DatasetPipeline(out, PipelineOptions(seed=7, ratios=(1, 1, 1))).run(corpus_commits())
    return out
