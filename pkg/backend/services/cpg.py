"""
Code Property Graph construction.

A Cpg joins the AST backbone of one function with four analysis layers:
  - FlowTo     statement execution order (intra-procedural CFG)
  - DefineUse  def -> use, landing on the condition node for uses in conditions
  - Reach      the same def/use pairs joined at statement nodes
  - Control    nearest governing if/while/for -> governed statement

Every non-Ast edge (u, v, k) is mirrored as (v, u, k + 5) so message passing
sees both directions while the direction stays readable from the type code.
Reaching definitions are solved with a worklist to a fixed point, so
loop-carried dependencies exist. Aliasing is ignored: a dereference or field
write counts against the base identifier.
"""
import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Optional

from services.cfront import (
    BRANCHING_KINDS,
    Ast,
    NodeKind,
    defs_uses,
)
from services.records import GraphRecord

logger = logging.getLogger(__name__)


class EdgeKind(IntEnum):
    AST = 0
    FLOW_TO = 1
    DEFINE_USE = 2
    REACH = 3
    CONTROL = 4


REVERSE_OFFSET = 5
NUM_EDGE_TYPES = 10

# human-readable names of the ten type codes, in code order
EDGE_TYPE_NAMES = (
    "Ast", "FlowTo", "DefineUse", "Reach", "Control",
    "AstReverse", "FlowToReverse", "DefineUseReverse", "ReachReverse", "ControlReverse",
)


def reverse_code(code: int) -> int:
    return code + REVERSE_OFFSET if code < REVERSE_OFFSET else code - REVERSE_OFFSET


Edge = tuple[int, int, int]  # (src, dst, type code)


@dataclass(slots=True)
class CpgNode:
    id: int
    kind: str
    code: list[str]


@dataclass(slots=True)
class Cpg:
    nodes: list[CpgNode]
    edges: list[Edge]
    stmt_of: dict[int, int]
    function_id: str = ""

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)


@dataclass(slots=True)
class Pdg:
    """Statement-level dependence graph; edge kinds are 'data' or 'control'."""
    stmts: tuple[int, ...]
    edges: tuple[tuple[int, int, str], ...]
    _succ: Optional[dict[int, list[int]]] = field(default=None, repr=False)
    _pred: Optional[dict[int, list[int]]] = field(default=None, repr=False)

    @classmethod
    def from_edges(cls, stmts: Iterable[int], edges: Iterable[tuple]) -> "Pdg":
        norm = []
        for e in edges:
            src, dst = e[0], e[1]
            kind = e[2] if len(e) > 2 else "data"
            norm.append((src, dst, kind))
        return cls(stmts=tuple(sorted(set(stmts))), edges=tuple(sorted(set(norm))))

    def _index(self) -> None:
        succ: dict[int, list[int]] = {s: [] for s in self.stmts}
        pred: dict[int, list[int]] = {s: [] for s in self.stmts}
        for src, dst, _ in self.edges:
            succ.setdefault(src, []).append(dst)
            pred.setdefault(dst, []).append(src)
        self._succ, self._pred = succ, pred

    def successors(self, stmt: int) -> list[int]:
        if self._succ is None:
            self._index()
        return self._succ.get(stmt, [])

    def predecessors(self, stmt: int) -> list[int]:
        if self._pred is None:
            self._index()
        return self._pred.get(stmt, [])


# ---------------------------------------------------------------------------
# Control flow
# ---------------------------------------------------------------------------

class _FlowBuilder:
    def __init__(self, ast: Ast):
        self.ast = ast
        self.edges: set[tuple[int, int]] = set()
        self.loops: list[dict[str, list[int]]] = []

    def link(self, preds: list[int], target: int) -> None:
        for p in preds:
            self.edges.add((p, target))

    def walk(self, nid: int, preds: list[int]) -> list[int]:
        """Wire `preds` into node `nid`; return the nodes that fall through."""
        node = self.ast.node(nid)
        kind = node.kind
        if kind == NodeKind.BLOCK:
            out = preds
            for c in node.children:
                out = self.walk(c, out)
            return out
        if kind == NodeKind.IF:
            self.link(preds, nid)
            branches = [c for c in node.children if self.ast.node(c).kind != NodeKind.CONDITION]
            then_out = self.walk(branches[0], [nid])
            else_out = self.walk(branches[1], [nid]) if len(branches) > 1 else [nid]
            return then_out + else_out
        if kind == NodeKind.WHILE:
            self.link(preds, nid)
            body = [c for c in node.children if self.ast.node(c).kind != NodeKind.CONDITION][0]
            self.loops.append({"break": [], "continue": []})
            body_out = self.walk(body, [nid])
            loop = self.loops.pop()
            self.link(body_out + loop["continue"], nid)
            return [nid] + loop["break"]
        if kind == NodeKind.FOR:
            init = step = body = None
            for c in node.children:
                child = self.ast.node(c)
                if child.slot == "init":
                    init = c
                elif child.slot == "step":
                    step = c
                elif child.kind != NodeKind.CONDITION:
                    body = c
            out = self.walk(init, preds) if init is not None else preds
            self.link(out, nid)
            self.loops.append({"break": [], "continue": []})
            body_out = self.walk(body, [nid])
            loop = self.loops.pop()
            tail = body_out + loop["continue"]
            if step is not None:
                tail = self.walk(step, tail)
            self.link(tail, nid)
            return [nid] + loop["break"]

        self.link(preds, nid)
        if kind == NodeKind.RETURN:
            return []
        head = node.tokens[0].text if node.tokens else ""
        if head in ("break", "continue") and not node.opaque and self.loops:
            self.loops[-1][head].append(nid)
            return []
        return [nid]


def build_cfg(ast: Ast) -> list[tuple[int, int]]:
    """FlowTo edges between statement nodes, sorted."""
    builder = _FlowBuilder(ast)
    body = [c for c in ast.root.children if ast.node(c).kind == NodeKind.BLOCK]
    if body:
        builder.walk(body[0], [])
    return sorted(builder.edges)


# ---------------------------------------------------------------------------
# Data flow
# ---------------------------------------------------------------------------

def reaching_definitions(ast: Ast, flow: list[tuple[int, int]]) -> dict[int, frozenset]:
    """IN sets of (def node, variable) pairs per statement node."""
    stmts = [n.id for n in ast.statements()]
    defs = {nid: defs_uses(ast, ast.node(nid))[0] for nid in stmts}
    gen = {nid: frozenset((nid, v) for v in defs[nid]) for nid in stmts}
    by_var: dict[str, set] = {}
    for nid in stmts:
        for v in defs[nid]:
            by_var.setdefault(v, set()).add((nid, v))
    kill = {
        nid: frozenset().union(*(by_var[v] for v in defs[nid])) - gen[nid] if defs[nid] else frozenset()
        for nid in stmts
    }
    preds: dict[int, list[int]] = {nid: [] for nid in stmts}
    succs: dict[int, list[int]] = {nid: [] for nid in stmts}
    for src, dst in flow:
        preds[dst].append(src)
        succs[src].append(dst)

    in_sets = {nid: frozenset() for nid in stmts}
    out_sets = {nid: gen[nid] for nid in stmts}
    worklist = list(stmts)
    queued = set(stmts)
    while worklist:
        nid = worklist.pop(0)
        queued.discard(nid)
        new_in = frozenset().union(*(out_sets[p] for p in preds[nid])) if preds[nid] else frozenset()
        new_out = gen[nid] | (new_in - kill[nid])
        in_sets[nid] = new_in
        if new_out != out_sets[nid]:
            out_sets[nid] = new_out
            for s in succs[nid]:
                if s not in queued:
                    worklist.append(s)
                    queued.add(s)
    return in_sets


def build_dataflow(ast: Ast, flow: list[tuple[int, int]]) -> list[Edge]:
    """DefineUse and Reach edges from classic reaching definitions."""
    in_sets = reaching_definitions(ast, flow)
    edges: set[Edge] = set()
    for node in ast.statements():
        _, uses = defs_uses(ast, node)
        if not uses:
            continue
        target = node.id
        if node.kind in BRANCHING_KINDS:
            cond = ast.condition_of(node)
            if cond is not None:
                target = cond.id
        used = set(uses)
        for def_node, var in in_sets[node.id]:
            if var in used:
                edges.add((def_node, target, EdgeKind.DEFINE_USE.value))
                edges.add((def_node, node.id, EdgeKind.REACH.value))
    return sorted(edges)


# ---------------------------------------------------------------------------
# Control dependence
# ---------------------------------------------------------------------------

def build_control_dep(ast: Ast) -> list[tuple[int, int]]:
    """Nearest governing branch statement -> statement."""
    edges: list[tuple[int, int]] = []

    def visit(nid: int, governor: Optional[int]) -> None:
        node = ast.node(nid)
        if node.is_statement and governor is not None:
            edges.append((governor, nid))
        if node.kind in BRANCHING_KINDS:
            for c in node.children:
                child = ast.node(c)
                if child.kind == NodeKind.CONDITION:
                    continue
                # a for-init runs once, before the loop decides anything
                visit(c, governor if child.slot == "init" else nid)
        else:
            for c in node.children:
                visit(c, governor)

    visit(ast.root.id, None)
    return sorted(edges)


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def _statement_map(ast: Ast) -> dict[int, int]:
    stmt_of: dict[int, int] = {}
    for node in ast.nodes:
        if node.stmt_id is not None:
            stmt_of[node.id] = node.stmt_id
            cond = ast.condition_of(node)
            if cond is not None:
                stmt_of[cond.id] = node.stmt_id
    return stmt_of


def build_cpg(ast: Ast, function_id: str = "") -> Cpg:
    nodes = [CpgNode(id=n.id, kind=n.kind.value, code=[t.text for t in n.tokens]) for n in ast.nodes]
    edges: set[Edge] = set()
    for n in ast.nodes:
        for c in n.children:
            edges.add((n.id, c, EdgeKind.AST.value))

    flow = build_cfg(ast)
    layered: list[Edge] = [(s, d, EdgeKind.FLOW_TO.value) for s, d in flow]
    layered += build_dataflow(ast, flow)
    layered += [(s, d, EdgeKind.CONTROL.value) for s, d in build_control_dep(ast)]
    for src, dst, code in layered:
        edges.add((src, dst, code))
        edges.add((dst, src, reverse_code(code)))

    cpg = Cpg(nodes=nodes, edges=sorted(edges), stmt_of=_statement_map(ast),
              function_id=function_id or ast.name)
    logger.debug(f"cpg {cpg.function_id}: {cpg.num_nodes} nodes, {len(cpg.edges)} edges")
    return cpg


def project_pdg(cpg: Cpg) -> Pdg:
    """Forward DefineUse/Reach -> data, Control -> control, at statement ids."""
    kinds = {
        EdgeKind.DEFINE_USE.value: "data",
        EdgeKind.REACH.value: "data",
        EdgeKind.CONTROL.value: "control",
    }
    edges = set()
    for src, dst, code in cpg.edges:
        kind = kinds.get(code)
        if kind is None or src not in cpg.stmt_of or dst not in cpg.stmt_of:
            continue
        edges.add((cpg.stmt_of[src], cpg.stmt_of[dst], kind))
    return Pdg.from_edges(sorted(set(cpg.stmt_of.values())), edges)


def graph_record(cpg: Cpg, label: Optional[int] = None, cwe: Optional[str] = None) -> dict:
    """Serializable graph record: nodes, typed edges, label, cwe, function id."""
    record = GraphRecord(
        function_id=cpg.function_id,
        label=label,
        cwe=cwe,
        nodes=[{"id": n.id, "kind": n.kind, "code": " ".join(n.code)} for n in cpg.nodes],
        edges=[{"src": s, "dst": d, "type": int(t)} for s, d, t in cpg.edges],
    )
    return record.model_dump(mode="json")
