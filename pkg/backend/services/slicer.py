"""
Vulnerability-related slicing over the statement PDGs of a patch pair.

For every changed statement a forward slice is taken, and every statement in
it seeds a backward slice; the union is the related set of that function.
Relatedness found on the patched side is carried back onto the vulnerable
function through an LCS alignment of statement texts, giving the frozen set
that mutation must leave intact.
"""
import logging
from collections import deque
from typing import Iterable

from pydantic import BaseModel, ConfigDict, field_serializer, model_validator

from services.cfront import Ast, statement_text
from services.cpg import Pdg
from services.errors import EmptyChange, UnknownStatement
from services.records import FunctionRecord

logger = logging.getLogger(__name__)

FORWARD = "forward"
BACKWARD = "backward"


class PatchTuple(BaseModel):
    """(f_v, f_p, s_del, s_add) extracted from one commit."""
    model_config = ConfigDict(frozen=True)

    f_v: FunctionRecord
    f_p: FunctionRecord
    s_del: frozenset[int] = frozenset()
    s_add: frozenset[int] = frozenset()

    @model_validator(mode="after")
    def _sides_differ(self):
        if self.f_v.code == self.f_p.code:
            raise ValueError("vulnerable and patched functions are textually identical")
        return self

    @field_serializer("s_del", "s_add")
    def _sorted(self, value: frozenset[int]) -> list[int]:
        return sorted(value)


class RelatedSet(BaseModel):
    model_config = ConfigDict(frozen=True)

    related_v: frozenset[int] = frozenset()
    related_p: frozenset[int] = frozenset()

    @field_serializer("related_v", "related_p")
    def _sorted(self, value: frozenset[int]) -> list[int]:
        return sorted(value)


def traverse(start: int, pdg: Pdg, direction: str) -> set[int]:
    """BFS closure from `start` over data and control edges."""
    if start not in pdg.stmts:
        raise UnknownStatement(f"statement {start} is not in the PDG (have {len(pdg.stmts)} statements)")
    step = pdg.successors if direction == FORWARD else pdg.predecessors
    visited = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for w in step(u):
            if w not in visited:
                visited.add(w)
                queue.append(w)
    return visited


def _closure(pdg: Pdg, seeds: Iterable[int]) -> frozenset[int]:
    related: set[int] = set()
    for s in sorted(seeds):
        for t in sorted(traverse(s, pdg, FORWARD)):
            if t not in related:
                related |= traverse(t, pdg, BACKWARD)
    return frozenset(related)


def slice_related(pdg_v: Pdg, pdg_p: Pdg, s_del: Iterable[int], s_add: Iterable[int]) -> RelatedSet:
    s_del, s_add = set(s_del), set(s_add)
    if not s_del and not s_add:
        raise EmptyChange("both change sets are empty")
    return RelatedSet(related_v=_closure(pdg_v, s_del), related_p=_closure(pdg_p, s_add))


def _lcs_pairs(a: list[str], b: list[str]) -> list[tuple[int, int]]:
    n, m = len(a), len(b)
    # suffix table: lcs[i][j] = LCS length of a[i:] and b[j:]
    lcs = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        row, below = lcs[i], lcs[i + 1]
        for j in range(m - 1, -1, -1):
            row[j] = below[j + 1] + 1 if a[i] == b[j] else max(below[j], row[j + 1])
    pairs = []
    i = j = 0
    while i < n and j < m:
        if a[i] == b[j]:
            pairs.append((i, j))
            i += 1
            j += 1
        elif lcs[i + 1][j] >= lcs[i][j + 1]:
            i += 1
        else:
            j += 1
    return pairs


def align_statements(ast_v: Ast, ast_p: Ast) -> dict[int, int]:
    """Map stmt_id(f_p) -> stmt_id(f_v) over the LCS of statement texts."""
    texts_v = [statement_text(ast_v, n) for n in ast_v.statements()]
    texts_p = [statement_text(ast_p, n) for n in ast_p.statements()]
    return {j: i for i, j in _lcs_pairs(texts_v, texts_p)}


def related_in_vulnerable(rel: RelatedSet, alignment: dict[int, int]) -> frozenset[int]:
    carried = {alignment[t] for t in rel.related_p if t in alignment}
    return frozenset(rel.related_v | carried)
