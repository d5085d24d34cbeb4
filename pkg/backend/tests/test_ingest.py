import json
import shutil
import subprocess

import pytest

from integrations.clients import CommitDumpReader, GitClient, open_commit_source
from services.errors import DatasetError, MalformedDiff, TooFewPairs
from services.ingest import (
    EXCLUSION_REASONS,
    FilterStats,
    analyze_diff,
    attach_mutants,
    classify_commit,
    extract_pair,
    filter_commits,
    find_functions,
    match_keywords,
    parse_diff,
    preprocess_filter,
    split_dataset,
    split_sizes,
)
from services.records import CWE_ORDER, CommitRecord, CweLabel, FunctionRecord, MutationOp, Role
from tests.fixtures.corpus import PAIRS, READ_REQUEST, file_diff, pair_commit, sha_for, write_dump


# ---- keyword table ----

@pytest.mark.parametrize("message, expected", [
    ("Fix buffer overflow in parser", {CweLabel.CWE120}),
    ("plug a Memory Leak", {CweLabel.CWE404}),
    ("avoid info leak to userspace", {CweLabel.CWE404}),
    ("stop infinite recursion", {CweLabel.CWE835}),
    ("fix endless loop on EOF", {CweLabel.CWE835}),
    ("Fix use-after-free in close", {CweLabel.CWE672}),
    ("fix DF in cleanup", {CweLabel.CWE672}),
    ("prevent UAF", {CweLabel.CWE672}),
    ("fix race conditions in queue", {CweLabel.CWE362}),
    ("use dfs for traversal", set()),
    ("fix a race condition", set()),
    ("Refactor", set()),
    ("memory leak and buffer overflow", {CweLabel.CWE404, CweLabel.CWE120}),
    ("buffer\n  overflow", {CweLabel.CWE120}),
])
def test_match_keywords(message, expected):
    assert match_keywords(message) == expected


# ---- diff parsing ----

def test_parse_whole_function_diff():
    files = parse_diff(file_diff("src/read_request.c", READ_REQUEST.vulnerable, READ_REQUEST.patched))
    assert len(files) == 1
    fd = files[0]
    assert fd.path == "src/read_request.c" and fd.is_c_source
    assert len(fd.hunks) == 1
    old, deleted = fd.hunks[0].old_image()
    new, added = fd.hunks[0].new_image()
    assert old == READ_REQUEST.vulnerable.splitlines()
    assert new == READ_REQUEST.patched.splitlines()
    assert deleted == {3, 4} and added == {3, 4}


@pytest.mark.parametrize("diff", [
    "@@ -1,1 +1,1 @@\n-a\n+b\n",
    "--- a/x.c\n+++ b/x.c\n@@ -1,3 +1,3 @@\n int f() {\n",
    "--- a/x.c\n+++ b/x.c\n@@ -1,1 +1,1 @@\n-a\n-b\n+c\n",
])
def test_malformed_diffs(diff):
    with pytest.raises(MalformedDiff):
        parse_diff(diff)


def test_find_functions_in_a_fragment():
    lines = (PAIRS[1].vulnerable + "\n" + PAIRS[2].vulnerable).splitlines()
    spans = find_functions(lines)
    assert [s.name for s in spans] == [PAIRS[1].name, PAIRS[2].name]
    assert spans[0].start == 1
    assert all(s.complete for s in spans)


def test_find_functions_ignores_initializers():
    assert find_functions(["int table[] = { 1, 2 };", "struct ops o = { .f = g };"]) == []


def test_analyze_two_functions():
    old = PAIRS[1].vulnerable + "\n" + PAIRS[2].vulnerable
    new = PAIRS[1].patched + "\n" + PAIRS[2].patched
    analysis = analyze_diff(file_diff("src/two.c", old, new))
    assert not analysis.ambiguous
    assert sorted(c.name for c in analysis.changes) == sorted([PAIRS[1].name, PAIRS[2].name])


# ---- commit filtering ----

GLOBAL_ONLY = "--- a/x.c\n+++ b/x.c\n@@ -1,1 +1,1 @@\n-int limit = 4;\n+int limit = 8;\n"
OUTSIDE_VISIBLE_FUNCTION = ("--- a/x.c\n+++ b/x.c\n@@ -10,2 +10,2 @@ int f(int a)\n"
                            "     a = 1;\n-    b = 2;\n+    b = 3;\n")


def commit(message: str, diff: str, index: int = 99) -> CommitRecord:
    return CommitRecord(project="fixture", sha=sha_for(index), message=message, diff=diff)


@pytest.mark.parametrize("message, diff, reason", [
    ("Refactor", file_diff("a.c", READ_REQUEST.vulnerable, READ_REQUEST.patched), "no-keyword"),
    ("memory leak and buffer overflow", file_diff("a.c", READ_REQUEST.vulnerable, READ_REQUEST.patched),
     "ambiguous-type"),
    ("buffer overflow", "--- a/x.c\n+++ b/x.c\n@@ -1,3 +1,3 @@\n int f() {\n", "malformed-diff"),
    ("buffer overflow", OUTSIDE_VISIBLE_FUNCTION, "ambiguous-context"),
    ("buffer overflow", GLOBAL_ONLY, "no-function"),
    ("buffer overflow", file_diff("notes.txt", "a\n", "b\n"), "no-function"),
])
def test_classify_exclusions(message, diff, reason):
    assert classify_commit(commit(message, diff)) == (None, reason)


def accounting_dump() -> list[CommitRecord]:
    clean = []
    for cwe in CWE_ORDER:
        pair = next(p for p in PAIRS if p.cwe == cwe)
        clean.append(pair_commit(pair, len(clean) + 1))
    two_old = PAIRS[1].vulnerable + "\n" + PAIRS[2].vulnerable
    two_new = PAIRS[1].patched + "\n" + PAIRS[2].patched
    return clean + [
        commit("Fix memory leak and buffer overflow in reader",
               file_diff("src/reader.c", READ_REQUEST.vulnerable, READ_REQUEST.patched), 10),
        commit("Fix double free in helpers", file_diff("src/helpers.c", two_old, two_new), 11),
        commit("Tidy up request parsing", file_diff("src/tidy.c", PAIRS[3].vulnerable, PAIRS[3].patched), 12),
    ]


def test_filter_accounting():
    stats = FilterStats()
    kept = list(filter_commits(accounting_dump(), stats))
    assert len(kept) == 5
    assert [label for _, label in kept] == list(CWE_ORDER)
    summary = stats.to_dict()
    assert summary["seen"] == 8
    assert summary["emitted"] == 5
    assert summary["excluded"]["ambiguous-type"] == 1
    assert summary["excluded"]["multi-function"] == 1
    assert summary["excluded"]["no-keyword"] == 1
    assert sum(summary["excluded"].values()) + summary["emitted"] == summary["seen"]
    assert list(summary["excluded"]) == list(EXCLUSION_REASONS)
    assert summary["per_cwe"] == {c.value: 1 for c in CWE_ORDER}


def test_filter_accounting_counts_unreadable_dump_lines(tmp_path):
    path = write_dump(tmp_path / "dump.jsonl", accounting_dump())
    with path.open("a", encoding="utf-8") as fh:
        fh.write("{not json\n")
        fh.write(json.dumps({"sha": "1"}) + "\n")
    stats = FilterStats()
    kept = list(filter_commits(CommitDumpReader(str(path)), stats))
    assert len(kept) == 5
    summary = stats.to_dict()
    assert summary["seen"] == 10
    assert summary["excluded"]["malformed-record"] == 2
    assert sum(summary["excluded"].values()) + summary["emitted"] == summary["seen"]


def test_whole_corpus_passes_the_filter():
    stats = FilterStats()
    kept = list(filter_commits([pair_commit(p, i + 1) for i, p in enumerate(PAIRS)], stats))
    assert len(kept) == len(PAIRS)
    assert [label for _, label in kept] == [p.cwe for p in PAIRS]


# ---- pair extraction ----

def test_extract_read_request():
    pair = extract_pair(pair_commit(READ_REQUEST, 1), CweLabel.CWE120)
    f_v, f_p = pair.patch.f_v, pair.patch.f_p
    assert f_v.id == f"fixture:{sha_for(1)[:12]}:read_request:v"
    assert f_p.id.endswith(":read_request:p")
    assert (f_v.role, f_v.label, f_p.role, f_p.label) == (Role.VULNERABLE, 1, Role.PATCHED, 0)
    assert f_v.code == READ_REQUEST.vulnerable
    assert f_p.code == READ_REQUEST.patched
    assert pair.patch.s_del == {1, 2}
    assert pair.patch.s_add == {1, 2}
    assert pair.alignment == {0: 0, 3: 3}
    assert f_v.pair_key == f_p.pair_key


def test_extract_pure_addition():
    pair = next(p for p in PAIRS if p.name == "queue_push")
    extracted = extract_pair(pair_commit(pair, 5), pair.cwe)
    assert extracted.patch.s_del == frozenset()
    assert len(extracted.patch.s_add) == 2


def test_extract_pure_deletion():
    pair = next(p for p in PAIRS if p.name == "put_buffer")
    extracted = extract_pair(pair_commit(pair, 6), pair.cwe)
    assert extracted.patch.s_add == frozenset()
    assert len(extracted.patch.s_del) == 2


# ---- preprocessing and splitting ----

def record(i: int, role: Role, cwe: CweLabel = CweLabel.CWE120) -> FunctionRecord:
    side = {Role.VULNERABLE: "v", Role.PATCHED: "p"}.get(role, "m")
    return FunctionRecord(id=f"p:{sha_for(i)[:12]}:f:{side}", project="p", sha=sha_for(i), cwe=cwe, role=role,
                          label=0 if role == Role.PATCHED else 1, name="f", code="int f() { return 0; }")


def pairs_of(n: int, cwe: CweLabel = CweLabel.CWE120) -> list[FunctionRecord]:
    return [r for i in range(n) for r in (record(i, Role.VULNERABLE, cwe), record(i, Role.PATCHED, cwe))]


def test_node_limit_drops_the_partner():
    records = pairs_of(3)
    counts = {r.id: 10 for r in records}
    counts[records[3].id] = 900
    kept = preprocess_filter(records, max_nodes=800, node_counts=counts)
    assert [r.id for r in kept] == [r.id for r in records[:2] + records[4:]]


def test_node_limit_drops_only_the_mutant():
    records = pairs_of(1)
    mutant = FunctionRecord(id=records[0].id + ":rn:1", project="p", sha=records[0].sha, cwe=CweLabel.CWE120,
                            role=Role.MUTATED, label=1, code="int f() { return 1; }",
                            parent_id=records[0].id, mutation=MutationOp.RN, seed=1)
    counts = {records[0].id: 5, records[1].id: 5, mutant.id: 801}
    assert preprocess_filter(records + [mutant], 800, counts) == records


def test_split_sizes():
    assert split_sizes(10) == (6, 2, 2)
    assert split_sizes(4, (1, 1, 1)) == (2, 1, 1)
    assert split_sizes(7) == (5, 1, 1)


def test_split_is_pair_level_and_deterministic():
    records = pairs_of(10)
    split = split_dataset(records, seed=3)
    assert (len(split.train), len(split.validation), len(split.test)) == (12, 4, 4)
    for name in ("train", "validation", "test"):
        keys = {rid.rsplit(":", 1)[0] for rid in getattr(split, name)}
        assert len(keys) * 2 == len(getattr(split, name))
    assert split_dataset(records, seed=3) == split
    assert split_dataset(list(reversed(records)), seed=3) == split
    assert set(split.train) | set(split.validation) | set(split.test) == {r.id for r in records}


def test_split_per_cwe():
    records = pairs_of(5) + [r.model_copy(update={"id": "x" + r.id, "sha": "x" + r.sha, "cwe": CweLabel.CWE835})
                             for r in pairs_of(5)]
    split = split_dataset(records, (3, 1, 1), seed=0)
    assert len(split.test) == 4
    assert sum(rid.startswith("x") for rid in split.test) == 2


def test_split_too_few_pairs():
    with pytest.raises(TooFewPairs):
        split_dataset(pairs_of(2), seed=0)


def test_mutants_only_join_train():
    records = pairs_of(10)
    split = split_dataset(records, seed=1)
    parent_train = next(rid for rid in split.train if rid.endswith(":v"))
    parent_test = next(rid for rid in split.test if rid.endswith(":v"))

    def mutant(parent: str) -> FunctionRecord:
        base = next(r for r in records if r.id == parent)
        return FunctionRecord(id=f"{parent}:ai:0", project="p", sha=base.sha, cwe=base.cwe, role=Role.MUTATED,
                              label=1, code=base.code, parent_id=parent, mutation=MutationOp.AI, seed=0)

    attached = attach_mutants(split, [mutant(parent_train), mutant(parent_test)])
    assert f"{parent_train}:ai:0" in attached.train
    assert f"{parent_test}:ai:0" not in attached.train + attached.validation + attached.test
    assert attached.validation == split.validation and attached.test == split.test


# ---- commit sources ----

def test_commit_dump_reader_skips_bad_lines(tmp_path):
    path = write_dump(tmp_path / "dump.jsonl", [pair_commit(READ_REQUEST, 1)])
    with path.open("a", encoding="utf-8") as fh:
        fh.write("{not json\n")
        fh.write(json.dumps({"project": "p"}) + "\n")
        fh.write("\n")
    reader = CommitDumpReader(str(path))
    commits = list(reader.iter_commits())
    assert [c.sha for c in commits] == [sha_for(1)]
    assert reader.skipped == 2


def test_open_commit_source_for_a_dump(commit_dump):
    commits = list(open_commit_source(str(commit_dump)))
    assert len(commits) == len(PAIRS)


def test_missing_dump(tmp_path):
    with pytest.raises(DatasetError):
        CommitDumpReader(str(tmp_path / "missing.jsonl"))


needs_git = pytest.mark.skipif(shutil.which("git") is None, reason="git not on PATH")


def git(repo, *args):
    subprocess.run(["git", "-C", str(repo), "-c", "user.name=dev", "-c", "user.email=dev@localhost",
                    "-c", "commit.gpgsign=false", *args], check=True, capture_output=True)


@needs_git
def test_git_repository_source(tmp_path):
    repo = tmp_path / "project"
    (repo / "src").mkdir(parents=True)
    git(repo, "init", "-q")
    source = repo / "src" / "read_request.c"
    source.write_text(READ_REQUEST.vulnerable, encoding="utf-8")
    (repo / "NOTES").write_text("not c\n", encoding="utf-8")
    git(repo, "add", ".")
    git(repo, "commit", "-q", "-m", "Add request reader")
    source.write_text(READ_REQUEST.patched, encoding="utf-8")
    git(repo, "commit", "-q", "-am", READ_REQUEST.message)

    commits = list(open_commit_source(str(repo)))
    assert [c.project for c in commits] == ["project", "project"]
    assert commits[0].message == "Add request reader"
    fix = commits[1]
    assert len(fix.sha) == 40
    assert fix.message == READ_REQUEST.message.strip()
    assert "static int read_request" in fix.diff
    assert classify_commit(fix) == (CweLabel.CWE120, None)


@needs_git
def test_git_client_rejects_plain_directories(tmp_path):
    with pytest.raises(DatasetError):
        GitClient(str(tmp_path))
