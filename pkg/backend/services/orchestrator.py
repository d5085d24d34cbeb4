"""
Dataset pipeline orchestration.

8-stage dependency ordering:
  1. Filter commits (keywords, diff shape)
  2. Extract (f_v, f_p) pairs and their statement changes
  3. Preprocess: node limit on the built Cpgs
  4. Split pairs per CWE into train / validation / test
  5. Slice every pair and carry relatedness onto f_v
  6. Augment train-split vulnerable functions
  7. Serialize graph records
  8. Dataset statistics

Per-record failures are counted and logged, never fatal. Every output is
written in a canonical order so equal inputs and seed give equal bytes.
"""
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import pandas as pd

import db as database
from services.augment import AugmentStats, MutatedFunction, augment_dataset
from services.cfront import parse_source
from services.cpg import Cpg, build_cpg, graph_record, project_pdg
from services.errors import EmptyChange, MalformedDiff, ParseFailure, TooFewPairs
from services.ingest import (
    DEFAULT_MAX_NODES,
    DEFAULT_RATIOS,
    ExtractedPair,
    FilterStats,
    attach_mutants,
    extract_pair,
    filter_commits,
    preprocess_filter,
    split_dataset,
)
from services.records import (
    CWE_ORDER,
    MUTATION_OPS,
    CommitRecord,
    CweLabel,
    DatasetSplit,
    FunctionRecord,
    GraphRecord,
    MutationOp,
    Role,
    SliceRecord,
)
from services.slicer import align_statements, related_in_vulnerable, slice_related

logger = logging.getLogger(__name__)

SPLIT_DOCUMENT = "split.json"
STATS_DOCUMENT = "stats.json"
DATASET_STATS_CSV = "dataset_stats.csv"


class PipelineStage:
    """Tracks a single pipeline stage."""

    def __init__(self, name: str, order: int):
        self.name = name
        self.order = order
        self.status = "pending"  # pending → running → completed → failed
        self.error = None

    def start(self):
        self.status = "running"

    def complete(self):
        self.status = "completed"

    def fail(self, error: str):
        self.status = "failed"
        self.error = error

    def to_dict(self) -> dict:
        return {"name": self.name, "order": self.order, "status": self.status, "error": self.error}


@dataclass
class PipelineOptions:
    seed: int = 0
    max_nodes: int = DEFAULT_MAX_NODES
    ratios: Sequence[int] = DEFAULT_RATIOS
    ops: Sequence[MutationOp] = MUTATION_OPS
    per_op_target: Optional[int] = None
    augment: bool = True
    cwe: Optional[CweLabel] = None
    workers: int = 1


@dataclass
class PipelineState:
    pairs: list[ExtractedPair] = field(default_factory=list)
    commits_per_cwe: Counter = field(default_factory=Counter)
    records: list[FunctionRecord] = field(default_factory=list)
    cpgs: dict[str, Cpg] = field(default_factory=dict)
    split: DatasetSplit = field(default_factory=DatasetSplit)
    slices: list[SliceRecord] = field(default_factory=list)
    mutants: list[FunctionRecord] = field(default_factory=list)
    filter_stats: FilterStats = field(default_factory=FilterStats)
    extract_errors: Counter = field(default_factory=Counter)
    augment_stats: AugmentStats = field(default_factory=AugmentStats)
    skipped_cwes: list[str] = field(default_factory=list)


def _map(fn: Callable, items: list, workers: int) -> list:
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def build_slice(f_v: FunctionRecord, f_p: FunctionRecord, cpg_v: Cpg, cpg_p: Cpg,
                s_del: Optional[Iterable[int]] = None, s_add: Optional[Iterable[int]] = None) -> SliceRecord:
    """Slice one pair; without explicit change sets, unaligned statements are the changes."""
    ast_v, ast_p = parse_source(f_v.code), parse_source(f_p.code)
    alignment = align_statements(ast_v, ast_p)
    if s_del is None:
        s_del = {n.stmt_id for n in ast_v.statements()} - set(alignment.values())
    if s_add is None:
        s_add = {n.stmt_id for n in ast_p.statements()} - set(alignment)
    rel = slice_related(project_pdg(cpg_v), project_pdg(cpg_p), s_del, s_add)
    return SliceRecord(
        pair_key=f_v.pair_key, vulnerable_id=f_v.id, patched_id=f_p.id, cwe=f_v.cwe,
        s_del=sorted(s_del), s_add=sorted(s_add),
        related_v=sorted(rel.related_v), related_p=sorted(rel.related_p),
        frozen=sorted(related_in_vulnerable(rel, alignment)),
        alignment=sorted(alignment.items()),
    )


def mutant_record(mutant: MutatedFunction, parent: FunctionRecord) -> FunctionRecord:
    return FunctionRecord(id=mutant.id, project=parent.project, sha=parent.sha, cwe=parent.cwe,
                          role=Role.MUTATED, label=1, name=parent.name, code=mutant.code,
                          parent_id=parent.id, mutation=mutant.op, seed=mutant.seed)


class DatasetPipeline:
    """
    Runs the dataset stages in order against one output directory.

    Stages 1-3 need a commit source; `augment_existing` and `reslice_existing`
    rerun the later stages over records already on disk.
    """

    STAGES = ("filter", "extract", "preprocess", "split", "slice", "augment", "graphs", "stats")

    def __init__(self, out_dir, options: Optional[PipelineOptions] = None):
        self.out_dir = Path(out_dir)
        self.options = options or PipelineOptions()
        self.stages = {name: PipelineStage(name, i + 1) for i, name in enumerate(self.STAGES)}
        self.state = PipelineState()

    def _run_stage(self, name: str, fn: Callable, *args):
        stage = self.stages[name]
        logger.info(f"Step {stage.order}/{len(self.STAGES)}: {name}")
        stage.start()
        try:
            result = fn(*args)
        except Exception as e:
            stage.fail(str(e))
            logger.error(f"Stage {name} failed: {e}")
            raise
        stage.complete()
        return result

    # ━━━ full run ━━━
    def run(self, commits: Iterable[CommitRecord]) -> dict:
        logger.info("=" * 60)
        logger.info(f"Dataset pipeline → {self.out_dir} (seed={self.options.seed})")
        logger.info("=" * 60)
        self.out_dir.mkdir(parents=True, exist_ok=True)

        kept = self._run_stage("filter", self._stage_filter, commits)
        self._run_stage("extract", self._stage_extract, kept)
        self._run_stage("preprocess", self._stage_preprocess)
        self._run_stage("split", self._stage_split)
        self._run_stage("slice", self._stage_slice)
        self._run_stage("augment", self._stage_augment)
        outputs = self._run_stage("graphs", self._stage_graphs)
        outputs += self._run_stage("stats", self._stage_stats)
        logger.info(f"✓ Dataset ready: {len(self.state.records)} functions, {len(self.state.mutants)} mutants")
        return {"outputs": [p.name for p in outputs], "stages": [s.to_dict() for s in self.stages.values()]}

    # ━━━ STAGE 1 ━━━
    def _stage_filter(self, commits: Iterable[CommitRecord]) -> list[tuple[CommitRecord, CweLabel]]:
        kept = [(c, label) for c, label in filter_commits(commits, self.state.filter_stats)
                if self.options.cwe is None or label == self.options.cwe]
        fs = self.state.filter_stats
        logger.info(f"Filter: {fs.emitted}/{fs.seen} commits kept; excluded {dict(sorted(fs.excluded.items()))}")
        return kept

    # ━━━ STAGE 2 ━━━
    def _stage_extract(self, kept: list[tuple[CommitRecord, CweLabel]]) -> int:
        def attempt(item):
            commit, label = item
            try:
                return extract_pair(commit, label), None
            except ParseFailure as e:
                return None, ("parse-failure", str(e))
            except EmptyChange as e:
                return None, ("empty-change", str(e))
            except MalformedDiff as e:
                return None, ("malformed-diff", str(e))

        for pair, error in _map(attempt, kept, self.options.workers):
            if error is not None:
                self.state.extract_errors[error[0]] += 1
                logger.debug(f"extract skipped: {error[1]}")
                continue
            self.state.pairs.append(pair)
            self.state.commits_per_cwe[pair.patch.f_v.cwe.value] += 1
        if self.state.extract_errors:
            logger.info(f"Extract: skipped {dict(sorted(self.state.extract_errors.items()))}")
        return len(self.state.pairs)

    # ━━━ STAGE 3 ━━━
    def _stage_preprocess(self) -> int:
        records, counts = [], {}
        for pair in self.state.pairs:
            for rec, ast in ((pair.patch.f_v, pair.ast_v), (pair.patch.f_p, pair.ast_p)):
                cpg = build_cpg(ast, rec.id)
                self.state.cpgs[rec.id] = cpg
                counts[rec.id] = cpg.num_nodes
                records.append(rec)
        self.state.records = preprocess_filter(records, self.options.max_nodes, counts)
        kept_keys = {r.pair_key for r in self.state.records}
        self.state.pairs = [p for p in self.state.pairs if p.patch.f_v.pair_key in kept_keys]
        return len(self.state.records)

    # ━━━ STAGE 4 ━━━
    def _stage_split(self) -> DatasetSplit:
        split = DatasetSplit()
        kept: list[FunctionRecord] = []
        for cwe in CWE_ORDER:
            group = [r for r in self.state.records if r.cwe == cwe]
            if not group:
                continue
            try:
                part = split_dataset(group, self.options.ratios, self.options.seed)
            except TooFewPairs as e:
                logger.warning(f"Skipping {cwe.value}: {e}")
                self.state.skipped_cwes.append(cwe.value)
                continue
            kept.extend(group)
            for name in ("train", "validation", "test"):
                getattr(split, name).extend(getattr(part, name))
        if not kept:
            ratios = ":".join(map(str, self.options.ratios))
            raise TooFewPairs(f"no CWE has enough pairs for a {ratios} split "
                              f"({len(self.state.pairs)} pair(s) after filtering)")
        for name in ("train", "validation", "test"):
            setattr(split, name, sorted(getattr(split, name)))
        self.state.records = sorted(kept, key=lambda r: r.id)
        self.state.split = split
        return split

    # ━━━ STAGE 5 ━━━
    def _stage_slice(self) -> int:
        live = {r.id for r in self.state.records}
        pairs = sorted((p for p in self.state.pairs if p.patch.f_v.id in live), key=lambda p: p.patch.f_v.id)

        def attempt(pair: ExtractedPair):
            f_v, f_p = pair.patch.f_v, pair.patch.f_p
            try:
                return build_slice(f_v, f_p, self.state.cpgs[f_v.id], self.state.cpgs[f_p.id],
                                   pair.patch.s_del, pair.patch.s_add)
            except EmptyChange as e:
                logger.debug(f"no related statements for {f_v.pair_key}: {e}")
                return None

        results = _map(attempt, pairs, self.options.workers)
        self.state.slices = [s for s in results if s is not None]
        if len(self.state.slices) != len(pairs):
            logger.info(f"Slice: {len(pairs) - len(self.state.slices)} pair(s) without changed statements")
        return len(self.state.slices)

    # ━━━ STAGE 6 ━━━
    def _stage_augment(self) -> int:
        if not self.options.augment or not self.options.ops:
            logger.info("Augmentation disabled")
            return 0
        by_id = {r.id: r for r in self.state.records}
        train = set(self.state.split.train)
        items = [(by_id[s.vulnerable_id], frozenset(s.frozen)) for s in self.state.slices
                 if s.vulnerable_id in train]
        mutants, self.state.augment_stats = augment_dataset(
            items, self.options.ops, self.options.per_op_target, self.options.seed)

        records, counts = [], {}
        for m in mutants:
            rec = mutant_record(m, by_id[m.parent_id])
            cpg = build_cpg(parse_source(rec.code), rec.id)
            self.state.cpgs[rec.id] = cpg
            counts[rec.id] = cpg.num_nodes
            records.append(rec)
        self.state.mutants = sorted(preprocess_filter(records, self.options.max_nodes, counts), key=lambda r: r.id)
        self.state.split = attach_mutants(self.state.split, self.state.mutants)
        return len(self.state.mutants)

    # ━━━ STAGE 7 ━━━
    def _stage_graphs(self) -> list[Path]:
        root = self.out_dir
        functions, graphs, slices = (database.functions_collection(root), database.graphs_collection(root),
                                     database.slices_collection(root))
        for table in (functions, graphs, slices):
            table.reset()
        everything = self.state.records + self.state.mutants
        functions.insert_many(r.model_dump(mode="json") for r in everything)
        graphs.insert_many(graph_record(self.state.cpgs[r.id], r.label, r.cwe.value) for r in everything)
        slices.insert_many(s.model_dump(mode="json") for s in self.state.slices)
        split_path = database.write_document(SPLIT_DOCUMENT, self.state.split.model_dump(mode="json"), root)
        return [functions.path, graphs.path, slices.path, split_path]

    # ━━━ STAGE 8 ━━━
    def _stage_stats(self) -> list[Path]:
        stats = {
            "filter": self.state.filter_stats.to_dict(),
            "extract": dict(sorted(self.state.extract_errors.items())),
            "augment": self.state.augment_stats.to_dict(),
            "skipped_cwes": self.state.skipped_cwes,
            "functions": len(self.state.records),
            "mutants": len(self.state.mutants),
        }
        stats_path = database.write_document(STATS_DOCUMENT, stats, self.out_dir)
        table = dataset_stats_table(self.state.records + self.state.mutants, self.state.split,
                                    self.state.commits_per_cwe)
        csv_path = self.out_dir / DATASET_STATS_CSV
        table.to_csv(csv_path, index=False, lineterminator="\n")
        logger.info(f"Dataset statistics:\n{table.to_string(index=False)}")
        return [stats_path, csv_path]


def dataset_stats_table(records: Sequence[FunctionRecord], split: DatasetSplit,
                        commits_per_cwe: Optional[Counter] = None) -> pd.DataFrame:
    """One row per CWE: commits, functions by role, mutants per operator, split sizes."""
    commits_per_cwe = commits_per_cwe or Counter()
    where = {rid: name for name in ("train", "validation", "test") for rid in getattr(split, name)}
    rows = []
    for cwe in CWE_ORDER:
        group = [r for r in records if r.cwe == cwe]
        row = {
            "cwe": cwe.value,
            "commits": commits_per_cwe.get(cwe.value, len({r.pair_key for r in group if r.role != Role.MUTATED})),
            "vulnerable": sum(r.role == Role.VULNERABLE for r in group),
            "patched": sum(r.role == Role.PATCHED for r in group),
        }
        for op in MUTATION_OPS:
            row[f"mutants_{op.value}"] = sum(r.mutation == op for r in group)
        for name in ("train", "validation", "test"):
            row[name] = sum(where.get(r.id) == name for r in group)
        rows.append(row)
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# Reruns over an existing data directory
# ---------------------------------------------------------------------------

def _load_records(root: Path) -> list[FunctionRecord]:
    return [FunctionRecord.model_validate(r) for r in database.functions_collection(root).find_many()]


def load_graph_records(data_dir, filters: Optional[dict] = None) -> list[dict]:
    """Graph records from graphs.jsonl, validated against GraphRecord."""
    rows = database.graphs_collection(Path(data_dir)).find_many(filters)
    return [GraphRecord.model_validate(g).model_dump(mode="json") for g in rows]


def _cpg_of(record: FunctionRecord) -> Cpg:
    return build_cpg(parse_source(record.code), record.id)


def reslice_existing(data_dir, workers: int = 1) -> list[SliceRecord]:
    """Recompute slices.jsonl from the function records already on disk."""
    root = Path(data_dir)
    records = [r for r in _load_records(root) if r.role != Role.MUTATED]
    previous = {s["pair_key"]: s for s in database.slices_collection(root).find_many()}
    by_pair: dict[str, dict[Role, FunctionRecord]] = {}
    for r in records:
        by_pair.setdefault(r.pair_key, {})[r.role] = r

    def attempt(key: str) -> Optional[SliceRecord]:
        sides = by_pair[key]
        f_v, f_p = sides.get(Role.VULNERABLE), sides.get(Role.PATCHED)
        if f_v is None or f_p is None:
            return None
        old = previous.get(key)
        try:
            return build_slice(f_v, f_p, _cpg_of(f_v), _cpg_of(f_p),
                               old["s_del"] if old else None, old["s_add"] if old else None)
        except EmptyChange:
            return None

    slices = [s for s in _map(attempt, sorted(by_pair), workers) if s is not None]
    table = database.slices_collection(root)
    table.reset()
    table.insert_many(s.model_dump(mode="json") for s in slices)
    logger.info(f"Resliced {len(slices)} pair(s) in {root}")
    return slices


def augment_existing(data_dir, ops: Sequence[MutationOp] = MUTATION_OPS, per_op_target: Optional[int] = None,
                     seed: int = 0, max_nodes: int = DEFAULT_MAX_NODES) -> tuple[list[FunctionRecord], AugmentStats]:
    """Mutate train-split vulnerable functions on disk; appends records and updates the split."""
    root = Path(data_dir)
    records = _load_records(root)
    split = DatasetSplit.model_validate(database.read_document(SPLIT_DOCUMENT, root))
    slices = [SliceRecord.model_validate(s) for s in database.slices_collection(root).find_many()]
    by_id = {r.id: r for r in records}
    existing = {r.id for r in records if r.role == Role.MUTATED}
    train = set(split.train)

    items = [(by_id[s.vulnerable_id], frozenset(s.frozen)) for s in sorted(slices, key=lambda s: s.vulnerable_id)
             if s.vulnerable_id in train and s.vulnerable_id in by_id]
    mutants, stats = augment_dataset(items, ops, per_op_target, seed)
    fresh, cpgs, counts = [], {}, {}
    for m in mutants:
        if m.id in existing:
            continue
        rec = mutant_record(m, by_id[m.parent_id])
        cpgs[rec.id] = _cpg_of(rec)
        counts[rec.id] = cpgs[rec.id].num_nodes
        fresh.append(rec)
    fresh = sorted(preprocess_filter(fresh, max_nodes, counts), key=lambda r: r.id)

    database.functions_collection(root).insert_many(r.model_dump(mode="json") for r in fresh)
    database.graphs_collection(root).insert_many(graph_record(cpgs[r.id], r.label, r.cwe.value) for r in fresh)
    database.write_document(SPLIT_DOCUMENT, attach_mutants(split, fresh).model_dump(mode="json"), root)
    logger.info(f"Appended {len(fresh)} mutant(s) to {root}")
    return fresh, stats
