"""
Commit mining: from commit streams to a labeled, split dataset of function pairs.

  1. Commit filtering   keyword match on the message (five CWE keyword lists)
  2. Type matching      exactly one CWE label, otherwise excluded
  3. Commit pruning     the diff must touch exactly one C function
  4. Pair extraction    pre-image = vulnerable, post-image = patched
  5. Preprocessing      drop pairs whose Cpg exceeds the node limit
  6. Splitting          pair-level 6:2:2 per CWE, mutants confined to train

Diffs are expected with whole-function context (`git log -p -W`), so each
touched function can be rebuilt from the hunk alone.
"""
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from services.cfront import Ast, TokenKind, parse_source, statement_tokens, tokenize
from services.cpg import build_cpg
from services.errors import (
    EmptyChange,
    MalformedDiff,
    ParseError,
    ParseFailure,
    TooFewPairs,
    UnterminatedLiteral,
)
from services.records import (
    CWE_ORDER,
    CommitRecord,
    CweLabel,
    DatasetSplit,
    FunctionRecord,
    Role,
)
from services.slicer import PatchTuple, align_statements

logger = logging.getLogger(__name__)

DEFAULT_MAX_NODES = 800
DEFAULT_RATIOS = (6, 2, 2)
C_SUFFIXES = (".c", ".h")

CWE_KEYWORDS: dict[CweLabel, tuple[str, ...]] = {
    CweLabel.CWE404: (
        "memory leak", "information leak", "info leak", "leak info",
        "memory disclosure", "leak memory", "leak information",
    ),
    CweLabel.CWE835: (
        "infinite loop", "endless loop", "long loop", "infinite recursion", "deep recursion",
    ),
    CweLabel.CWE120: ("buffer overflow",),
    CweLabel.CWE672: (
        "double free", "double-free", "df", "use after free", "use-after-free", "uaf",
    ),
    CweLabel.CWE362: ("race conditions",),
}

# abbreviations only count as whole words ("DF" must not fire on "dfs")
_WHOLE_WORD_MAX = 3
_KEYWORD_PATTERNS: dict[CweLabel, list[re.Pattern]] = {
    label: [
        re.compile(rf"(?<![a-z0-9_]){re.escape(k)}(?![a-z0-9_])") if len(k) <= _WHOLE_WORD_MAX
        else re.compile(re.escape(k))
        for k in keywords
    ]
    for label, keywords in CWE_KEYWORDS.items()
}

EXCLUSION_REASONS = (
    "malformed-record", "no-keyword", "ambiguous-type", "malformed-diff", "ambiguous-context", "no-function",
    "multi-function",
)


def match_keywords(message: str) -> set[CweLabel]:
    """CWE labels whose keywords occur in the message (case-insensitive)."""
    text = re.sub(r"\s+", " ", message.lower())
    return {label for label, patterns in _KEYWORD_PATTERNS.items() if any(p.search(text) for p in patterns)}


# ---------------------------------------------------------------------------
# Unified diff parsing
# ---------------------------------------------------------------------------

_HUNK_RE = re.compile(r"^@@\s+-(\d+)(?:,(\d+))?\s+\+(\d+)(?:,(\d+))?\s+@@(.*)$")
_FILE_NEW_RE = re.compile(r"^\+\+\+\s+(?:b/)?(.+?)\s*$")
_FILE_OLD_RE = re.compile(r"^---\s+(?:a/)?(.+?)\s*$")
_SIGNATURE_RE = re.compile(r"\b([A-Za-z_]\w*)\s*\(")


@dataclass
class Hunk:
    old_start: int
    old_count: int
    new_start: int
    new_count: int
    section: str
    lines: list[tuple[str, str]] = field(default_factory=list)  # (tag, text), tag in ' ', '-', '+'

    def old_image(self) -> tuple[list[str], set[int]]:
        """Pre-image lines and the 1-based indices of deleted lines."""
        lines, deleted = [], set()
        for tag, text in self.lines:
            if tag in (" ", "-"):
                lines.append(text)
                if tag == "-":
                    deleted.add(len(lines))
        return lines, deleted

    def new_image(self) -> tuple[list[str], set[int]]:
        lines, added = [], set()
        for tag, text in self.lines:
            if tag in (" ", "+"):
                lines.append(text)
                if tag == "+":
                    added.add(len(lines))
        return lines, added


@dataclass
class FileDiff:
    path: str
    hunks: list[Hunk] = field(default_factory=list)

    @property
    def is_c_source(self) -> bool:
        return self.path.endswith(C_SUFFIXES)


def parse_diff(diff: str) -> list[FileDiff]:
    """Parse a multi-file unified diff; hunk line counts are enforced."""
    files: list[FileDiff] = []
    lines = diff.splitlines()
    old_path: Optional[str] = None
    i = 0
    while i < len(lines):
        line = lines[i]
        if line.startswith("--- "):
            m = _FILE_OLD_RE.match(line)
            old_path = m.group(1) if m else None
            i += 1
            continue
        if line.startswith("+++ "):
            m = _FILE_NEW_RE.match(line)
            path = m.group(1) if m else ""
            if path == "/dev/null" and old_path:
                path = old_path
            files.append(FileDiff(path=path))
            i += 1
            continue
        m = _HUNK_RE.match(line)
        if m:
            if not files:
                raise MalformedDiff(f"hunk before any file header (line {i + 1})")
            hunk = Hunk(
                old_start=int(m.group(1)),
                old_count=int(m.group(2)) if m.group(2) is not None else 1,
                new_start=int(m.group(3)),
                new_count=int(m.group(4)) if m.group(4) is not None else 1,
                section=m.group(5).strip(),
            )
            old_left, new_left = hunk.old_count, hunk.new_count
            i += 1
            while old_left > 0 or new_left > 0:
                if i >= len(lines):
                    raise MalformedDiff(f"hunk at {hunk.old_start} ends early")
                body = lines[i]
                if body.startswith("\\"):
                    i += 1
                    continue
                tag, text = (body[0], body[1:]) if body else (" ", "")
                if tag == " " and old_left > 0 and new_left > 0:
                    old_left -= 1
                    new_left -= 1
                elif tag == "-" and old_left > 0:
                    old_left -= 1
                elif tag == "+" and new_left > 0:
                    new_left -= 1
                else:
                    raise MalformedDiff(f"hunk at {hunk.old_start}: line counts disagree with header")
                hunk.lines.append((tag, text))
                i += 1
            files[-1].hunks.append(hunk)
            continue
        if (line.startswith("+") or line.startswith("-")) and files and files[-1].hunks:
            raise MalformedDiff(f"stray change line outside any hunk (line {i + 1})")
        i += 1
    return files


# ---------------------------------------------------------------------------
# Function boundaries inside hunk images
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FunctionSpan:
    name: str
    start: int  # 1-based line, inclusive
    end: int
    complete: bool = True


def find_functions(lines: Sequence[str]) -> list[FunctionSpan]:
    """Function definitions in a text fragment by brace-depth signature scan."""
    toks = tokenize("\n".join(lines))
    spans: list[FunctionSpan] = []
    decl_start = 0
    i = 0
    while i < len(toks):
        t = toks[i].text
        if t in (";", "}"):
            decl_start = i + 1
        elif t == "{":
            close = _matching_brace(toks, i)
            name = _signature_name(toks, decl_start, i)
            if name is not None:
                end_line = toks[close].line if close >= 0 else len(lines)
                spans.append(FunctionSpan(name=name, start=toks[decl_start].line, end=end_line,
                                          complete=close >= 0))
            if close < 0:
                break
            i = close
            decl_start = close + 1
        i += 1
    return spans


def _matching_brace(toks, i: int) -> int:
    depth = 0
    for j in range(i, len(toks)):
        if toks[j].text == "{":
            depth += 1
        elif toks[j].text == "}":
            depth -= 1
            if depth == 0:
                return j
    return -1


def _signature_name(toks, start: int, brace: int) -> Optional[str]:
    """Name of `type name(params) {` between start and the brace, if any."""
    if brace - 1 < start or toks[brace - 1].text != ")":
        return None
    depth = 0
    for j in range(brace - 1, start - 1, -1):
        if toks[j].text == ")":
            depth += 1
        elif toks[j].text == "(":
            depth -= 1
            if depth == 0:
                if j - 1 >= start and toks[j - 1].kind == TokenKind.IDENTIFIER:
                    if any(tok.text == "=" for tok in toks[start:j]):
                        return None
                    return toks[j - 1].text
                return None
    return None


@dataclass
class FunctionChange:
    path: str
    name: str
    old_code: str
    new_code: str
    deleted: set[int]  # 1-based lines relative to old_code
    added: set[int]


@dataclass
class DiffAnalysis:
    changes: list[FunctionChange]
    ambiguous: bool = False


def _locate(spans: list[FunctionSpan], line: int) -> Optional[FunctionSpan]:
    for span in spans:
        if span.start <= line <= span.end:
            return span
    return None


def analyze_diff(diff: str) -> DiffAnalysis:
    """Functions touched by a diff, rebuilt from whole-function hunks."""
    touched: dict[tuple[str, str], FunctionChange] = {}
    ambiguous = False
    for fd in parse_diff(diff):
        if not fd.is_c_source:
            continue
        for hunk in fd.hunks:
            old_lines, deleted = hunk.old_image()
            new_lines, added = hunk.new_image()
            try:
                old_spans = find_functions(old_lines)
                new_spans = find_functions(new_lines)
            except UnterminatedLiteral:
                ambiguous = True
                continue

            names: set[str] = set()
            for image, spans, changed in ((old_lines, old_spans, deleted), (new_lines, new_spans, added)):
                for ln in sorted(changed):
                    span = _locate(spans, ln)
                    if span is None:
                        # a change outside any visible function: fine for globals,
                        # ambiguous when the hunk header says we are inside a function
                        if _SIGNATURE_RE.search(hunk.section) and image[ln - 1].strip():
                            ambiguous = True
                        continue
                    if not span.complete:
                        ambiguous = True
                    names.add(span.name)

            for name in sorted(names):
                old_span = next((s for s in old_spans if s.name == name), None)
                new_span = next((s for s in new_spans if s.name == name), None)
                change = FunctionChange(path=fd.path, name=name, old_code="", new_code="",
                                        deleted=set(), added=set())
                if old_span is not None:
                    change.old_code = "\n".join(old_lines[old_span.start - 1:old_span.end]) + "\n"
                    change.deleted = {ln - old_span.start + 1 for ln in deleted
                                      if old_span.start <= ln <= old_span.end}
                if new_span is not None:
                    change.new_code = "\n".join(new_lines[new_span.start - 1:new_span.end]) + "\n"
                    change.added = {ln - new_span.start + 1 for ln in added
                                    if new_span.start <= ln <= new_span.end}
                if (fd.path, name) in touched:
                    ambiguous = True
                touched[(fd.path, name)] = change
    return DiffAnalysis(changes=[touched[k] for k in sorted(touched)], ambiguous=ambiguous)


# ---------------------------------------------------------------------------
# Filtering
# ---------------------------------------------------------------------------

@dataclass
class FilterStats:
    seen: int = 0
    emitted: int = 0
    excluded: Counter = field(default_factory=Counter)
    per_cwe: Counter = field(default_factory=Counter)

    def to_dict(self) -> dict:
        return {
            "seen": self.seen,
            "emitted": self.emitted,
            "excluded": {r: self.excluded.get(r, 0) for r in EXCLUSION_REASONS},
            "per_cwe": {c.value: self.per_cwe.get(c.value, 0) for c in CWE_ORDER},
        }

    def record_malformed(self, count: int):
        """Input records that never became a CommitRecord."""
        self.seen += count
        self.excluded["malformed-record"] += count


def classify_commit(commit: CommitRecord) -> tuple[Optional[CweLabel], Optional[str]]:
    """(label, None) when the commit is kept, (None, reason) when excluded."""
    labels = match_keywords(commit.message)
    if not labels:
        return None, "no-keyword"
    if len(labels) > 1:
        return None, "ambiguous-type"
    try:
        analysis = analyze_diff(commit.diff)
    except MalformedDiff as e:
        logger.debug(f"{commit.project}@{commit.sha[:12]}: {e}")
        return None, "malformed-diff"
    if analysis.ambiguous:
        return None, "ambiguous-context"
    if not analysis.changes:
        return None, "no-function"
    if len(analysis.changes) > 1:
        return None, "multi-function"
    return next(iter(labels)), None


def filter_commits(commits: Iterable[CommitRecord],
                   stats: Optional[FilterStats] = None) -> Iterator[tuple[CommitRecord, CweLabel]]:
    """
    Keep single-label, single-function commits.

    `commits` may also be a commit source (anything with `iter_commits()`);
    its `skipped` count is folded into the stats once the stream is drained.
    """
    stats = stats if stats is not None else FilterStats()
    source = commits if hasattr(commits, "iter_commits") else None
    if source is not None:
        commits = source.iter_commits()
    for commit in commits:
        stats.seen += 1
        label, reason = classify_commit(commit)
        if reason is not None:
            stats.excluded[reason] += 1
            logger.debug(f"excluded {commit.project}@{commit.sha[:12]}: {reason}")
            continue
        stats.emitted += 1
        stats.per_cwe[label.value] += 1
        yield commit, label
    if source is not None and getattr(source, "skipped", 0):
        stats.record_malformed(source.skipped)


# ---------------------------------------------------------------------------
# Pair extraction
# ---------------------------------------------------------------------------

@dataclass
class ExtractedPair:
    patch: PatchTuple
    ast_v: Ast
    ast_p: Ast
    alignment: dict[int, int]


def record_id(project: str, sha: str, name: str, side: str) -> str:
    return f"{project}:{sha[:12]}:{name}:{side}"


def _statements_on_lines(ast: Ast, lines: set[int]) -> set[int]:
    hit = set()
    for node in ast.statements():
        if any(t.line in lines for t in statement_tokens(ast, node)):
            hit.add(node.stmt_id)
    return hit


def extract_pair(commit: CommitRecord, label: CweLabel) -> ExtractedPair:
    analysis = analyze_diff(commit.diff)
    if len(analysis.changes) != 1:
        raise MalformedDiff(f"expected one touched function, found {len(analysis.changes)}")
    change = analysis.changes[0]
    try:
        ast_v = parse_source(change.old_code)
        ast_p = parse_source(change.new_code)
    except ParseError as e:
        raise ParseFailure(f"{commit.project}@{commit.sha[:12]} {change.name}: {e}") from e

    alignment = align_statements(ast_v, ast_p)
    matched_v = set(alignment.values())
    s_del = _statements_on_lines(ast_v, change.deleted) - matched_v
    s_add = _statements_on_lines(ast_p, change.added) - set(alignment)

    common = dict(project=commit.project, sha=commit.sha, cwe=label, name=change.name)
    f_v = FunctionRecord(id=record_id(commit.project, commit.sha, change.name, "v"),
                         role=Role.VULNERABLE, label=1, code=change.old_code, **common)
    f_p = FunctionRecord(id=record_id(commit.project, commit.sha, change.name, "p"),
                         role=Role.PATCHED, label=0, code=change.new_code, **common)
    try:
        patch = PatchTuple(f_v=f_v, f_p=f_p, s_del=frozenset(s_del), s_add=frozenset(s_add))
    except ValidationError as e:
        raise EmptyChange(f"{commit.project}@{commit.sha[:12]}: function text unchanged") from e
    return ExtractedPair(patch=patch, ast_v=ast_v, ast_p=ast_p, alignment=alignment)


# ---------------------------------------------------------------------------
# Preprocessing and splitting
# ---------------------------------------------------------------------------

def cpg_node_count(record: FunctionRecord) -> int:
    return build_cpg(parse_source(record.code)).num_nodes


def preprocess_filter(records: Iterable[FunctionRecord], max_nodes: int = DEFAULT_MAX_NODES,
                      node_counts: Optional[dict[str, int]] = None) -> list[FunctionRecord]:
    """Drop records above `max_nodes` Cpg nodes together with their pair partner."""
    records = list(records)
    node_counts = node_counts or {}
    dropped_pairs: set[str] = set()
    dropped_mutants: set[str] = set()
    for r in records:
        count = node_counts.get(r.id)
        if count is None:
            count = cpg_node_count(r)
        if count > max_nodes:
            if r.role == Role.MUTATED:
                dropped_mutants.add(r.id)
            else:
                dropped_pairs.add(r.pair_key)
    kept = [r for r in records if r.pair_key not in dropped_pairs and r.id not in dropped_mutants]
    if len(kept) != len(records):
        logger.info(f"Node limit {max_nodes}: dropped {len(records) - len(kept)} of {len(records)} records")
    return kept


def split_sizes(n_pairs: int, ratios: Sequence[int] = DEFAULT_RATIOS) -> tuple[int, int, int]:
    total = sum(ratios)
    n_val = n_pairs * ratios[1] // total
    n_test = n_pairs * ratios[2] // total
    return n_pairs - n_val - n_test, n_val, n_test


def split_dataset(records: Iterable[FunctionRecord], ratios: Sequence[int] = DEFAULT_RATIOS,
                  seed: int = 0) -> DatasetSplit:
    """Pair-level shuffled split per CWE; mutants are not placed here."""
    pairs_by_cwe: dict[CweLabel, dict[str, list[str]]] = {}
    for r in records:
        if r.role == Role.MUTATED:
            continue
        pairs_by_cwe.setdefault(r.cwe, {}).setdefault(r.pair_key, []).append(r.id)

    split = DatasetSplit()
    for cwe in CWE_ORDER:
        pairs = pairs_by_cwe.get(cwe)
        if not pairs:
            continue
        keys = sorted(pairs)
        n_train, n_val, n_test = split_sizes(len(keys), ratios)
        if min(n_train, n_val, n_test) <= 0:
            raise TooFewPairs(f"{cwe.value}: {len(keys)} pair(s) cannot fill a {':'.join(map(str, ratios))} split")
        rng = np.random.default_rng([seed, CWE_ORDER.index(cwe)])
        order = [keys[i] for i in rng.permutation(len(keys))]
        parts = {
            "train": order[:n_train],
            "validation": order[n_train:n_train + n_val],
            "test": order[n_train + n_val:],
        }
        for name, part in parts.items():
            getattr(split, name).extend(rid for key in part for rid in pairs[key])
        logger.info(f"{cwe.value}: {n_train}/{n_val}/{n_test} pairs (train/validation/test)")
    for name in ("train", "validation", "test"):
        setattr(split, name, sorted(getattr(split, name)))
    return split


def attach_mutants(split: DatasetSplit, mutant_records: Iterable[FunctionRecord]) -> DatasetSplit:
    """Add mutants to train; a mutant whose parent is not in train is refused."""
    train = set(split.train)
    extra = []
    for m in mutant_records:
        if m.parent_id not in train:
            logger.warning(f"Refusing mutant {m.id}: parent {m.parent_id} is not in train")
            continue
        extra.append(m.id)
    return DatasetSplit(train=sorted(set(split.train) | set(extra)),
                        validation=list(split.validation), test=list(split.test))
