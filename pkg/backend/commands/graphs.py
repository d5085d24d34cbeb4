"""
parse / graph - front end and Cpg for a single C function.
"""
import logging
from pathlib import Path

from commands.common import Settings, emit, read_source
from services.cfront import parse_source
from services.cpg import build_cpg, graph_record
from services.records import parse_cwe

logger = logging.getLogger(__name__)


def cmd_parse(args, settings: Settings) -> int:
    ast = parse_source(read_source(args.function))
    emit(ast.to_dict())
    return 0


def cmd_graph(args, settings: Settings) -> int:
    ast = parse_source(read_source(args.function))
    cpg = build_cpg(ast, Path(args.function).stem)
    cwe = parse_cwe(args.cwe).value if args.cwe else None
    logger.info(f"{ast.name}: {cpg.num_nodes} nodes, {len(cpg.edges)} edges")
    emit(graph_record(cpg, args.label, cwe))
    return 0


def register(subparsers, settings: Settings) -> None:
    p = subparsers.add_parser("parse", help="Print the AST of one C function as JSON")
    p.add_argument("--function", required=True, help="C source file holding one function")
    p.set_defaults(handler=cmd_parse)

    p = subparsers.add_parser("graph", help="Print the code property graph record of one C function")
    p.add_argument("--function", required=True, help="C source file holding one function")
    p.add_argument("--cwe", default=None, help="CWE label to attach, e.g. CWE-120")
    p.add_argument("--label", type=int, choices=(0, 1), default=None, help="Vulnerability label to attach")
    p.set_defaults(handler=cmd_graph)
