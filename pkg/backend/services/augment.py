"""
Vulnerability-preserving mutation of vulnerable functions.

Five operators, one per mutant:
  rn   rename a random non-empty subset of parameters/locals (may touch frozen statements)
  ai   wrap one unrelated assignment as `if (1) { s }`
  del  delete a random non-empty subset of unrelated, dependency-free statements
  add  copy one unrelated assignment with fresh names right after itself
  ro   swap one adjacent pair of independent unrelated assignments

Mutations are text splices at token offsets, so everything outside the touched
spans stays byte-identical. Each mutant is re-parsed and checked against the
frozen statement set before it is emitted.
"""
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Union

import numpy as np
from pydantic import BaseModel, Field

from services.cfront import (
    C_KEYWORDS,
    Ast,
    AstNode,
    NodeKind,
    Token,
    TokenKind,
    declared_names,
    defs_uses,
    local_names,
    parse_source,
    statement_tokens,
    tokenize,
    variable_refs,
)
from services.errors import NoCandidates, ParseError
from services.records import CweLabel, FunctionRecord, MutationOp, MUTATION_OPS

logger = logging.getLogger(__name__)

_TAG_KEYWORDS = ("struct", "union", "enum")


class MutatedFunction(BaseModel):
    code: str
    parent_id: str = ""
    op: MutationOp
    seed: int
    label: int = 1
    cwe: Optional[CweLabel] = None
    renaming: dict[str, str] = Field(default_factory=dict, description="rn only: old -> new name")

    @property
    def id(self) -> str:
        return f"{self.parent_id}:{self.op.value}:{self.seed}"


# ---------------------------------------------------------------------------
# Text plumbing
# ---------------------------------------------------------------------------

class _Source:
    def __init__(self, code: str):
        self.code = code
        self.ast = parse_source(code)
        self.line_starts = [0] + [i + 1 for i, ch in enumerate(code) if ch == "\n"]

    def offset(self, tok: Token) -> int:
        return self.line_starts[tok.line - 1] + tok.col - 1

    def span(self, node: AstNode) -> tuple[int, int]:
        toks = sorted(node.tokens, key=lambda t: t.pos)
        return self.offset(toks[0]), self.offset(toks[-1]) + len(toks[-1].text)

    def text(self, node: AstNode) -> str:
        start, end = self.span(node)
        return self.code[start:end]

    def identifiers(self) -> set[str]:
        return {t.text for n in self.ast.nodes for t in n.tokens if t.kind == TokenKind.IDENTIFIER}


def _splice(code: str, edits: list[tuple[int, int, str]]) -> str:
    """Apply non-overlapping (start, end, replacement) edits."""
    out = []
    cursor = 0
    for start, end, repl in sorted(edits):
        out.append(code[cursor:start])
        out.append(repl)
        cursor = end
    out.append(code[cursor:])
    return "".join(out)


def _fresh_names(taken: Iterable[str]):
    taken = set(taken) | C_KEYWORDS
    i = 0
    while True:
        name = f"v{i}"
        if name not in taken:
            yield name
        i += 1


def _renamable(tokens: list[Token], i: int) -> bool:
    tok = tokens[i]
    if tok.kind != TokenKind.IDENTIFIER:
        return False
    if i > 0 and tokens[i - 1].text in (".", "->", *_TAG_KEYWORDS):
        return False
    return True


def rename_tokens(tokens: list[Token], mapping: dict[str, str]) -> list[str]:
    """Token texts with variables renamed; field names and struct tags kept."""
    return [mapping.get(t.text, t.text) if _renamable(tokens, i) else t.text
            for i, t in enumerate(tokens)]


def _in_block(src: _Source, node: AstNode) -> bool:
    parent = src.ast.parent(node.id)
    return parent is not None and parent.kind == NodeKind.BLOCK


def _is_assignment_like(node: AstNode) -> bool:
    if node.kind == NodeKind.ASSIGN:
        return True
    return node.kind == NodeKind.DECL and any(t.text == "=" for t in node.tokens)


def _movable(src: _Source, node: AstNode, frozen: frozenset[int]) -> bool:
    return (node.stmt_id not in frozen and not node.opaque and node.slot is None
            and _in_block(src, node))


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------

def _rn(src: _Source, frozen: frozenset[int], rng: np.random.Generator) -> tuple[str, dict[str, str]]:
    candidates = local_names(src.ast)
    if not candidates:
        raise NoCandidates("rn: function declares no parameters or locals")
    k = int(rng.integers(1, len(candidates) + 1))
    picked = sorted(int(i) for i in rng.choice(len(candidates), size=k, replace=False))
    fresh = _fresh_names(src.identifiers())
    mapping = {candidates[i]: next(fresh) for i in picked}

    all_tokens = tokenize(src.code)
    edits = []
    for i, tok in enumerate(all_tokens):
        if tok.text in mapping and _renamable(all_tokens, i):
            start = src.offset(tok)
            edits.append((start, start + len(tok.text), mapping[tok.text]))
    return _splice(src.code, edits), mapping


def _ai(src: _Source, frozen: frozenset[int], rng: np.random.Generator) -> str:
    candidates = [n for n in src.ast.statements() if _movable(src, n, frozen) and _is_assignment_like(n)]
    if not candidates:
        raise NoCandidates("ai: no unrelated assignment")
    target = candidates[int(rng.integers(len(candidates)))]
    start, end = src.span(target)
    return _splice(src.code, [(start, end, f"if (1) {{ {src.code[start:end]} }}")])


def _line_extent(code: str, start: int, end: int) -> tuple[int, int]:
    """Widen a span to whole lines when nothing else shares them."""
    line_start = code.rfind("\n", 0, start) + 1
    line_end = code.find("\n", end)
    line_end = len(code) if line_end < 0 else line_end
    if code[line_start:start].strip() or code[end:line_end].strip():
        return start, end
    return line_start, min(line_end + 1, len(code))


def _del(src: _Source, frozen: frozenset[int], rng: np.random.Generator) -> str:
    ast = src.ast
    stmts = ast.statements()
    refs = {n.stmt_id: defs_uses(ast, n) for n in stmts}
    deletable_kinds = (NodeKind.DECL, NodeKind.ASSIGN, NodeKind.CALL, NodeKind.EXPR)
    candidates = []
    for n in stmts:
        if not _movable(src, n, frozen) or n.kind not in deletable_kinds:
            continue
        if n.tokens and n.tokens[0].text in ("break", "continue", "goto"):
            continue
        defs = set(refs[n.stmt_id][0])
        if n.kind == NodeKind.DECL:
            defs |= {t.text for t in declared_names(n)}
        touched = any(defs & (set(d) | set(u)) for sid, (d, u) in refs.items() if sid != n.stmt_id)
        if not touched:
            candidates.append(n)
    if not candidates:
        raise NoCandidates("del: every unrelated statement feeds another statement")
    k = int(rng.integers(1, len(candidates) + 1))
    picked = sorted(int(i) for i in rng.choice(len(candidates), size=k, replace=False))
    edits = [(*_line_extent(src.code, *src.span(candidates[i])), "") for i in picked]
    return _splice(src.code, edits)


def _add(src: _Source, frozen: frozenset[int], rng: np.random.Generator) -> str:
    candidates = [n for n in src.ast.statements() if _movable(src, n, frozen) and _is_assignment_like(n)]
    if not candidates:
        raise NoCandidates("add: no unrelated assignment")
    target = candidates[int(rng.integers(len(candidates)))]
    toks = sorted(target.tokens, key=lambda t: t.pos)
    names = {t.text for t in variable_refs(toks)}
    if target.kind == NodeKind.DECL:
        names |= {t.text for t in declared_names(target)}
    fresh = _fresh_names(src.identifiers())
    mapping = {name: next(fresh) for name in sorted(names, key=lambda s: [t.text for t in toks].index(s))}

    start, end = src.span(target)
    base = start
    edits = []
    for i, tok in enumerate(toks):
        if tok.text in mapping and _renamable(toks, i) and not (i + 1 < len(toks) and toks[i + 1].text == "("):
            off = src.offset(tok) - base
            edits.append((off, off + len(tok.text), mapping[tok.text]))
    copy = _splice(src.code[start:end], edits)
    return _splice(src.code, [(end, end, f" {copy}")])


def _independent(a: tuple[list[str], list[str]], b: tuple[list[str], list[str]]) -> bool:
    da, ua = set(a[0]), set(a[1])
    db, ub = set(b[0]), set(b[1])
    return not (da & (db | ub)) and not (db & ua)


def _ro(src: _Source, frozen: frozenset[int], rng: np.random.Generator) -> str:
    ast = src.ast
    pairs = []
    for block in ast.nodes:
        if block.kind != NodeKind.BLOCK:
            continue
        kids = [ast.node(c) for c in block.children]
        for a, b in zip(kids, kids[1:]):
            if not (a.is_statement and b.is_statement):
                continue
            if not (_movable(src, a, frozen) and _movable(src, b, frozen)):
                continue
            if not (_is_assignment_like(a) and _is_assignment_like(b)):
                continue
            if _independent(defs_uses(ast, a), defs_uses(ast, b)):
                pairs.append((a, b))
    if not pairs:
        raise NoCandidates("ro: no adjacent pair of independent unrelated assignments")
    pairs.sort(key=lambda p: p[0].stmt_id)
    a, b = pairs[int(rng.integers(len(pairs)))]
    (sa, ea), (sb, eb) = src.span(a), src.span(b)
    return _splice(src.code, [(sa, ea, src.code[sb:eb]), (sb, eb, src.code[sa:ea])])


def _code_of(f_v: Union[FunctionRecord, str]) -> tuple[str, str, Optional[CweLabel]]:
    if isinstance(f_v, FunctionRecord):
        return f_v.code, f_v.id, f_v.cwe
    return f_v, "", None


def _mutate(op: MutationOp, f_v, frozen, seed: int) -> MutatedFunction:
    code, parent_id, cwe = _code_of(f_v)
    src = _Source(code)
    frozen = frozenset(frozen)
    rng = np.random.default_rng(seed)
    renaming: dict[str, str] = {}
    if op == MutationOp.RN:
        mutant, renaming = _rn(src, frozen, rng)
    else:
        mutant = _OPERATORS[op](src, frozen, rng)
    return MutatedFunction(code=mutant, parent_id=parent_id, op=op, seed=seed, cwe=cwe, renaming=renaming)


def mutate_rn(f_v, frozen, seed: int) -> MutatedFunction:
    return _mutate(MutationOp.RN, f_v, frozen, seed)


def mutate_ai(f_v, frozen, seed: int) -> MutatedFunction:
    return _mutate(MutationOp.AI, f_v, frozen, seed)


def mutate_del(f_v, frozen, seed: int) -> MutatedFunction:
    return _mutate(MutationOp.DEL, f_v, frozen, seed)


def mutate_add(f_v, frozen, seed: int) -> MutatedFunction:
    return _mutate(MutationOp.ADD, f_v, frozen, seed)


def mutate_ro(f_v, frozen, seed: int) -> MutatedFunction:
    return _mutate(MutationOp.RO, f_v, frozen, seed)


_OPERATORS: dict[MutationOp, Callable] = {
    MutationOp.AI: _ai,
    MutationOp.DEL: _del,
    MutationOp.ADD: _add,
    MutationOp.RO: _ro,
}
MUTATORS: dict[MutationOp, Callable[..., MutatedFunction]] = {
    MutationOp.RN: mutate_rn,
    MutationOp.AI: mutate_ai,
    MutationOp.DEL: mutate_del,
    MutationOp.ADD: mutate_add,
    MutationOp.RO: mutate_ro,
}


# ---------------------------------------------------------------------------
# Preservation
# ---------------------------------------------------------------------------

def _frozen_texts(ast: Ast, frozen: Iterable[int], renaming: dict[str, str]) -> Counter:
    texts = Counter()
    for sid in frozen:
        toks = statement_tokens(ast, ast.statement(sid))
        texts[" ".join(rename_tokens(toks, renaming))] += 1
    return texts


def check_preservation(original: str, mutant: Union[MutatedFunction, str], frozen: Iterable[int],
                       renaming: Optional[dict[str, str]] = None) -> bool:
    """True iff every frozen statement survives token-identically (modulo renaming)
    and the mutant parses without extra opaque statements."""
    if isinstance(mutant, MutatedFunction):
        renaming = mutant.renaming if renaming is None else renaming
        mutant = mutant.code
    renaming = renaming or {}
    orig_ast = parse_source(original)
    try:
        mut_ast = parse_source(mutant)
    except ParseError as e:
        logger.debug(f"mutant does not parse: {e}")
        return False
    if sum(n.opaque for n in mut_ast.nodes) > sum(n.opaque for n in orig_ast.nodes):
        return False
    want = _frozen_texts(orig_ast, frozen, renaming)
    have = Counter(" ".join(t.text for t in statement_tokens(mut_ast, n)) for n in mut_ast.statements())
    return all(have[text] >= count for text, count in want.items())


# ---------------------------------------------------------------------------
# Dataset-level augmentation
# ---------------------------------------------------------------------------

@dataclass
class OpCounter:
    attempted: int = 0
    produced: int = 0
    no_candidates: int = 0
    rejected: int = 0

    def to_dict(self) -> dict:
        return {"attempted": self.attempted, "produced": self.produced,
                "no_candidates": self.no_candidates, "rejected": self.rejected}


@dataclass
class AugmentStats:
    per_op: dict[str, OpCounter] = field(default_factory=dict)

    def counter(self, op: MutationOp) -> OpCounter:
        return self.per_op.setdefault(op.value, OpCounter())

    def to_dict(self) -> dict:
        return {op: c.to_dict() for op, c in sorted(self.per_op.items())}


def attempt_seed(seed: int, op_index: int, item_index: int, round_index: int = 0) -> int:
    """Per-attempt seed, stable regardless of how many attempts ran before."""
    ss = np.random.SeedSequence([seed, op_index, item_index, round_index])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def augment_dataset(
    items: list[tuple[FunctionRecord, frozenset[int]]],
    ops: Iterable[MutationOp] = MUTATION_OPS,
    per_op_target: Optional[int] = None,
    seed: int = 0,
) -> tuple[list[MutatedFunction], AugmentStats]:
    """Up to per_op_target mutants per operator (default: one per vulnerable function).

    `items` pairs each vulnerable function with its frozen statement set.
    """
    stats = AugmentStats()
    mutants: list[MutatedFunction] = []
    if not items:
        return mutants, stats
    items = sorted(items, key=lambda it: it[0].id)
    target = len(items) if per_op_target is None else per_op_target
    max_rounds = max(1, -(-target // len(items)))
    wanted = set(ops)

    for op_index, op in enumerate(MUTATION_OPS):
        if op not in wanted:
            continue
        counter = stats.counter(op)
        produced: list[MutatedFunction] = []
        seen: set[str] = set()
        for round_index in range(max_rounds):
            for item_index, (f_v, frozen) in enumerate(items):
                if len(produced) >= target:
                    break
                s = attempt_seed(seed, op_index, item_index, round_index)
                counter.attempted += 1
                try:
                    mutant = MUTATORS[op](f_v, frozen, s)
                except NoCandidates as e:
                    counter.no_candidates += 1
                    logger.debug(f"{f_v.id} {op.value}: {e}")
                    continue
                if mutant.code in seen or not check_preservation(f_v.code, mutant, frozen):
                    counter.rejected += 1
                    continue
                seen.add(mutant.code)
                produced.append(mutant)
        counter.produced = len(produced)
        mutants.extend(produced)
        logger.info(f"augment {op.value}: {counter.produced}/{target} mutants "
                    f"({counter.no_candidates} without candidates, {counter.rejected} rejected)")
    return mutants, stats
