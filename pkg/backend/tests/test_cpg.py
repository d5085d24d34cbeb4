import numpy as np
import pytest

from services.cfront import defs_uses, parse_source
from services.cpg import (
    EDGE_TYPE_NAMES,
    NUM_EDGE_TYPES,
    EdgeKind,
    build_cfg,
    build_control_dep,
    build_cpg,
    build_dataflow,
    graph_record,
    project_pdg,
    reverse_code,
)
from tests.fixtures.corpus import PAIRS, READ_REQUEST


def fn(body: str, params: str = "int c"):
    return parse_source(f"void f({params}) {{ {body} }}")


def stmt_edges(ast, edges):
    """AST-node edges -> statement-id edges."""
    sid = {n.id: n.stmt_id for n in ast.statements()}
    for n in ast.statements():
        cond = ast.condition_of(n)
        if cond is not None:
            sid[cond.id] = n.stmt_id
    return {(sid[e[0]], sid[e[1]]) for e in edges}


# ---- control flow ----

def test_straight_line_flow():
    ast = fn("a = 1; b = 2; d = 3;")
    assert stmt_edges(ast, build_cfg(ast)) == {(0, 1), (1, 2)}


def test_while_loop_flow():
    ast = fn("while (c) { s = 1; } t = 2;")
    assert stmt_edges(ast, build_cfg(ast)) == {(0, 1), (1, 0), (0, 2)}


def test_return_has_no_successor():
    ast = fn("return;")
    assert build_cfg(ast) == []
    ast = fn("if (c) return; a = 1;")
    assert stmt_edges(ast, build_cfg(ast)) == {(0, 1), (0, 2)}


def test_if_else_join():
    ast = fn("if (c) a = 1; else a = 2; b = a;")
    assert stmt_edges(ast, build_cfg(ast)) == {(0, 1), (0, 2), (1, 3), (2, 3)}


def test_for_loop_flow_runs_step_before_the_test():
    ast = fn("for (i = 0; i < c; i++) s = s + i; return;")
    # 0 for, 1 init, 2 step, 3 body, 4 return
    assert stmt_edges(ast, build_cfg(ast)) == {(1, 0), (0, 3), (3, 2), (2, 0), (0, 4)}


def test_break_and_continue():
    ast = fn("while (c) { if (x) break; if (y) continue; z = 1; } w = 2;")
    # 0 while, 1 if, 2 break, 3 if, 4 continue, 5 z, 6 w
    edges = stmt_edges(ast, build_cfg(ast))
    assert (2, 6) in edges
    assert (4, 0) in edges
    assert (5, 0) in edges
    assert (2, 3) not in edges


# ---- data flow ----

def define_use(ast):
    flow = build_cfg(ast)
    return stmt_edges(ast, [e for e in build_dataflow(ast, flow) if e[2] == EdgeKind.DEFINE_USE])


def test_single_def_use():
    assert define_use(fn("int a = 1; b = a;")) == {(0, 1)}


def test_redefinition_kills():
    assert define_use(fn("a = 1; a = 2; b = a;")) == {(1, 2)}


def test_both_branch_definitions_reach_the_join():
    assert define_use(fn("a = 1; if (c) { a = 2; } b = a;")) == {(0, 3), (2, 3)}


def test_loop_carried_definition():
    ast = fn("int i = 0; while (i < c) { i = i + 1; }")
    assert define_use(ast) == {(0, 1), (0, 2), (2, 1), (2, 2)}


def test_compound_assignments_define_and_use():
    ast = fn("int x = c; x >>= 1; x += 1; x <<= 2; return x;")
    assert define_use(ast) == {(0, 1), (1, 2), (2, 3), (3, 4)}


def test_define_use_lands_on_condition_and_reach_on_statement():
    ast = fn("int a = c; if (a) b = 1;")
    flow = build_cfg(ast)
    edges = build_dataflow(ast, flow)
    cond = ast.condition_of(ast.statement(1))
    decl = ast.statement(0).id
    assert (decl, cond.id, EdgeKind.DEFINE_USE.value) in edges
    assert (decl, ast.statement(1).id, EdgeKind.REACH.value) in edges


# ---- control dependence ----

def test_direct_nesting():
    ast = fn("if (c) { a = 1; b = 2; }")
    assert stmt_edges(ast, build_control_dep(ast)) == {(0, 1), (0, 2)}


def test_nearest_governor():
    ast = fn("if (c) { if (d) { s = 1; } }")
    assert stmt_edges(ast, build_control_dep(ast)) == {(0, 1), (1, 2)}


def test_straight_line_has_no_control():
    assert build_control_dep(fn("a = 1; b = 2;")) == []


def test_for_init_is_not_governed_by_its_loop():
    ast = fn("for (i = 0; i < c; i++) s = 1;")
    assert stmt_edges(ast, build_control_dep(ast)) == {(0, 2), (0, 3)}


# ---- assembly ----

def test_small_function_cpg():
    ast = parse_source("void f() { int a = 1; return a; }")
    cpg = build_cpg(ast)
    decl, ret = ast.statement(0).id, ast.statement(1).id
    assert (decl, ret, EdgeKind.FLOW_TO.value) in cpg.edges
    assert (decl, ret, EdgeKind.DEFINE_USE.value) in cpg.edges
    assert (ret, decl, reverse_code(EdgeKind.FLOW_TO.value)) in cpg.edges
    assert {n.id for n in cpg.nodes} == {n.id for n in ast.nodes}


def test_empty_body_has_ast_edges_only():
    cpg = build_cpg(parse_source("void f() { }"))
    assert cpg.edges
    assert {code for _, _, code in cpg.edges} == {EdgeKind.AST.value}


@pytest.mark.parametrize("pair", PAIRS, ids=lambda p: p.name)
def test_mirror_symmetry(pair):
    cpg = build_cpg(parse_source(pair.vulnerable))
    edges = set(cpg.edges)
    for u, v, k in cpg.edges:
        if k in (EdgeKind.AST.value, reverse_code(EdgeKind.AST.value)):
            continue
        assert (v, u, reverse_code(k)) in edges
    assert all(0 <= k < NUM_EDGE_TYPES for _, _, k in cpg.edges)
    assert len(EDGE_TYPE_NAMES) == NUM_EDGE_TYPES


def test_read_request_condition_governs_the_copy():
    pdg = project_pdg(build_cpg(parse_source(READ_REQUEST.vulnerable)))
    assert (1, 2, "control") in pdg.edges
    assert {(0, 1, "data"), (0, 2, "data"), (0, 3, "data")} <= set(pdg.edges)
    assert pdg.stmts == (0, 1, 2, 3)


def test_projection_drops_mirrors_and_flow():
    ast = fn("a = 1; b = a;")
    pdg = project_pdg(build_cpg(ast))
    assert pdg.edges == ((0, 1, "data"),)


def test_projection_of_independent_statements():
    pdg = project_pdg(build_cpg(fn("a = 1; b = 2; d = 3;")))
    assert pdg.stmts == (0, 1, 2)
    assert pdg.edges == ()


def test_projection_of_nested_ifs():
    pdg = project_pdg(build_cpg(fn("if (c) { if (d) { s = 1; } }")))
    assert {e for e in pdg.edges if e[2] == "control"} == {(0, 1, "control"), (1, 2, "control")}


@pytest.mark.parametrize("pair", PAIRS, ids=lambda p: p.name)
def test_projection_soundness(pair):
    cpg = build_cpg(parse_source(pair.patched))
    pdg = project_pdg(cpg)
    by_stmt = {}
    for u, v, k in cpg.edges:
        if u in cpg.stmt_of and v in cpg.stmt_of:
            by_stmt.setdefault((cpg.stmt_of[u], cpg.stmt_of[v]), set()).add(k)
    for u, v, kind in pdg.edges:
        wanted = {EdgeKind.CONTROL.value} if kind == "control" else {EdgeKind.DEFINE_USE.value,
                                                                      EdgeKind.REACH.value}
        assert by_stmt[(u, v)] & wanted


def test_graph_record_shape():
    cpg = build_cpg(parse_source(READ_REQUEST.vulnerable), "fixture:read_request:v")
    record = graph_record(cpg, 1, "CWE-120")
    assert record["function_id"] == "fixture:read_request:v"
    assert record["label"] == 1 and record["cwe"] == "CWE-120"
    assert [n["id"] for n in record["nodes"]] == list(range(cpg.num_nodes))
    assert record["nodes"][0]["kind"] == "function"
    assert len(record["edges"]) == len(cpg.edges)


# ---- reaching definitions against path enumeration ----

def _random_program(rng) -> str:
    names = ["a", "b", "x"]
    parts = []
    n = int(rng.integers(2, 9))
    branch_at = int(rng.integers(0, n))
    for i in range(n):
        lhs, rhs = rng.choice(names), rng.choice(names)
        stmt = f"{lhs} = {rhs} + 1;"
        if i == branch_at:
            other = f"{rng.choice(names)} = {rng.choice(names)};"
            if rng.random() < 0.5:
                stmt = f"if ({rng.choice(names)}) {{ {stmt} }} else {{ {other} }}"
            else:
                stmt = f"if ({rng.choice(names)}) {{ {stmt} }}"
        parts.append(stmt)
    return " ".join(parts)


def _path_oracle(ast) -> set[tuple[int, int]]:
    """Def-use pairs from enumerating every acyclic path through the CFG."""
    flow = stmt_edges(ast, build_cfg(ast))
    stmts = [n.stmt_id for n in ast.statements()]
    succ = {s: sorted(d for u, d in flow if u == s) for s in stmts}
    preds = {d for _, d in flow}
    node = {n.stmt_id: n for n in ast.statements()}
    du = {s: defs_uses(ast, node[s]) for s in stmts}
    entry = [s for s in stmts if s not in preds][0]

    pairs = set()

    def walk(s, live: dict):
        defs, uses = du[s]
        for v in uses:
            if v in live:
                pairs.add((live[v], s))
        live = dict(live)
        for v in defs:
            live[v] = s
        for t in succ[s]:
            walk(t, live)

    walk(entry, {})
    return pairs


def test_reaching_definitions_match_path_enumeration():
    rng = np.random.default_rng(11)
    for _ in range(200):
        ast = fn(_random_program(rng), params="int c")
        assert define_use(ast) == _path_oracle(ast)


def test_every_edge_kind_is_named():
    assert [reverse_code(k) for k in range(5)] == [5, 6, 7, 8, 9]
    assert all(reverse_code(reverse_code(k)) == k for k in range(NUM_EDGE_TYPES))
    assert list(EDGE_TYPE_NAMES[:5]) == ["Ast", "FlowTo", "DefineUse", "Reach", "Control"]
