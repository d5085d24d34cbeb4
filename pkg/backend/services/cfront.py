"""
C front end: lexer and statement-granular parser for a C subset.

Supported subset: one function definition per input; declarations with optional
initializers; assignments (plain, compound, ++/--); calls; if/else; while;
for; return; break/continue. Address-of and dereference stay as opaque
expression tokens. Comments and preprocessor directive lines are dropped by
the lexer. Statements the parser does not understand (switch, do/while, goto,
labels, stray else) become opaque `expr` statements that keep their token span,
so real-world functions degrade gracefully instead of aborting ingestion.
"""
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from services.errors import NotAFunction, UnbalancedBraces, UnterminatedLiteral

logger = logging.getLogger(__name__)


class TokenKind(str, Enum):
    IDENTIFIER = "identifier"
    KEYWORD = "keyword"
    NUMBER = "number"
    STRING = "string-literal"
    PUNCT = "punctuation"


class NodeKind(str, Enum):
    FUNCTION = "function"
    PARAM = "param"
    BLOCK = "block"
    DECL = "decl"
    ASSIGN = "assign"
    CALL = "call"
    IF = "if"
    WHILE = "while"
    FOR = "for"
    RETURN = "return"
    EXPR = "expr"
    CONDITION = "condition"


STATEMENT_KINDS = frozenset({
    NodeKind.DECL, NodeKind.ASSIGN, NodeKind.CALL, NodeKind.IF,
    NodeKind.WHILE, NodeKind.FOR, NodeKind.RETURN, NodeKind.EXPR,
})
BRANCHING_KINDS = frozenset({NodeKind.IF, NodeKind.WHILE, NodeKind.FOR})

C_KEYWORDS = frozenset({
    "auto", "break", "case", "char", "const", "continue", "default", "do",
    "double", "else", "enum", "extern", "float", "for", "goto", "if", "inline",
    "int", "long", "register", "restrict", "return", "short", "signed",
    "sizeof", "static", "struct", "switch", "typedef", "union", "unsigned",
    "void", "volatile", "while", "_Bool",
})
TYPE_KEYWORDS = frozenset({
    "char", "short", "int", "long", "float", "double", "signed", "unsigned",
    "void", "struct", "union", "enum", "const", "volatile", "static", "extern",
    "register", "auto", "inline", "restrict", "_Bool",
})
MULTI_CHAR_OPS = ("<<=", ">>=", "==", "!=", "<=", ">=", "->", "&&", "||", "++", "--", "+=", "-=")
COMPOUND_ASSIGN_OPS = frozenset({"+=", "-=", "<<=", ">>="})
ASSIGN_OPS = COMPOUND_ASSIGN_OPS | {"="}
ASSIGN_SUFFIX_CHARS = frozenset("*/%&|^<>")

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\f\v]+)
    | (?P<nl>\n)
    | (?P<lcomment>//[^\n]*)
    | (?P<bcomment>/\*.*?\*/)
    | (?P<directive>\#[^\n]*(?:\\\n[^\n]*)*)
    | (?P<ident>[A-Za-z_]\w*)
    | (?P<number>0[xX][0-9a-fA-F]+[uUlL]*|(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?[fFuUlL]*)
    | (?P<string>"(?:\\.|[^"\\\n])*"|'(?:\\.|[^'\\\n])*')
    | (?P<op><<=|>>=|==|!=|<=|>=|->|&&|\|\||\+\+|--|\+=|-=)
    | (?P<punct>[^\s\w])
    """,
    re.VERBOSE | re.DOTALL,
)


@dataclass(frozen=True, slots=True)
class Token:
    text: str
    kind: TokenKind
    line: int
    col: int

    @property
    def pos(self) -> tuple[int, int]:
        return (self.line, self.col)


@dataclass(slots=True)
class AstNode:
    id: int
    kind: NodeKind
    children: list[int] = field(default_factory=list)
    tokens: list[Token] = field(default_factory=list)
    stmt_id: Optional[int] = None
    opaque: bool = False
    slot: Optional[str] = None

    @property
    def is_statement(self) -> bool:
        return self.stmt_id is not None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "children": list(self.children),
            "tokens": [t.text for t in self.tokens],
            "stmt_id": self.stmt_id,
            "opaque": self.opaque,
            "slot": self.slot,
        }


@dataclass(slots=True)
class Ast:
    nodes: list[AstNode]
    name: str
    _parents: Optional[dict[int, int]] = None

    @property
    def root(self) -> AstNode:
        return self.nodes[0]

    def node(self, node_id: int) -> AstNode:
        return self.nodes[node_id]

    def parent(self, node_id: int) -> Optional[AstNode]:
        if self._parents is None:
            self._parents = {c: n.id for n in self.nodes for c in n.children}
        pid = self._parents.get(node_id)
        return None if pid is None else self.nodes[pid]

    def statements(self) -> list[AstNode]:
        """Statement nodes ordered by stmt_id."""
        stmts = [n for n in self.nodes if n.stmt_id is not None]
        return sorted(stmts, key=lambda n: n.stmt_id)

    def statement(self, stmt_id: int) -> AstNode:
        for n in self.nodes:
            if n.stmt_id == stmt_id:
                return n
        raise KeyError(stmt_id)

    def condition_of(self, node: AstNode) -> Optional[AstNode]:
        for c in node.children:
            if self.nodes[c].kind == NodeKind.CONDITION:
                return self.nodes[c]
        return None

    def to_dict(self) -> dict:
        return {"name": self.name, "nodes": [n.to_dict() for n in self.nodes]}


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

def tokenize(source: str) -> list[Token]:
    """Lex C source into tokens; comments and directive lines are dropped."""
    tokens: list[Token] = []
    line, line_start, pos = 1, 0, 0
    n = len(source)
    while pos < n:
        m = _TOKEN_RE.match(source, pos)
        if m is None:  # pragma: no cover - punct group matches any non-space char
            raise UnterminatedLiteral(f"unexpected character at {line}:{pos - line_start + 1}")
        group = m.lastgroup
        text = m.group()
        col = pos - line_start + 1

        if group == "punct" and text in ('"', "'"):
            raise UnterminatedLiteral(f"unterminated literal starting at {line}:{col}")
        if group == "punct" and source.startswith("/*", pos):
            raise UnterminatedLiteral(f"unterminated comment starting at {line}:{col}")
        if group == "directive" and source[line_start:pos].strip():
            # '#' in the middle of a line is an ordinary punctuation token
            tokens.append(Token("#", TokenKind.PUNCT, line, col))
            pos += 1
            continue

        if group == "ident":
            kind = TokenKind.KEYWORD if text in C_KEYWORDS else TokenKind.IDENTIFIER
            tokens.append(Token(text, kind, line, col))
        elif group == "number":
            tokens.append(Token(text, TokenKind.NUMBER, line, col))
        elif group == "string":
            tokens.append(Token(text, TokenKind.STRING, line, col))
        elif group in ("op", "punct"):
            tokens.append(Token(text, TokenKind.PUNCT, line, col))

        newlines = text.count("\n")
        if newlines:
            line += newlines
            line_start = pos + text.rfind("\n") + 1
        pos = m.end()
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

class _Parser:
    def __init__(self, tokens: list[Token]):
        self.toks = tokens
        self.nodes: list[AstNode] = []
        self.next_stmt = 0

    # -- node helpers --
    def new_node(self, kind: NodeKind, tokens=None, statement: bool = False, **attrs) -> AstNode:
        node = AstNode(id=len(self.nodes), kind=kind, tokens=list(tokens or []), **attrs)
        if statement:
            node.stmt_id = self.next_stmt
            self.next_stmt += 1
        self.nodes.append(node)
        return node

    def text(self, i: int) -> Optional[str]:
        return self.toks[i].text if i < len(self.toks) else None

    def match_close(self, i: int, opener: str, closer: str, limit: Optional[int] = None) -> int:
        """Index of the token closing the group opened at i, or -1."""
        depth = 0
        end = len(self.toks) if limit is None else limit
        for j in range(i, end):
            t = self.toks[j].text
            if t == opener:
                depth += 1
            elif t == closer:
                depth -= 1
                if depth == 0:
                    return j
        return -1

    # -- top level --
    def parse(self) -> Ast:
        toks = self.toks
        if not toks:
            raise NotAFunction("empty input")

        depth = 0
        for t in toks:
            if t.text == "{":
                depth += 1
            elif t.text == "}":
                depth -= 1
                if depth < 0:
                    raise UnbalancedBraces(f"unexpected '}}' at {t.line}:{t.col}")

        open_paren = -1
        for i, t in enumerate(toks):
            if t.text in (";", "{", "="):
                break
            if t.text == "(" and i > 0 and toks[i - 1].kind == TokenKind.IDENTIFIER:
                open_paren = i
                break
        if open_paren < 0:
            raise NotAFunction("no function signature found")
        close_paren = self.match_close(open_paren, "(", ")")
        if close_paren < 0 or self.text(close_paren + 1) != "{":
            raise NotAFunction("function signature is not followed by a body")
        body_end = self.match_close(close_paren + 1, "{", "}")
        if body_end < 0:
            raise UnbalancedBraces("function body is never closed")
        if body_end != len(toks) - 1:
            extra = toks[body_end + 1]
            raise NotAFunction(f"trailing tokens after function body at {extra.line}:{extra.col}")

        name = toks[open_paren - 1].text
        fn = self.new_node(NodeKind.FUNCTION, toks[:open_paren + 1] + [toks[close_paren]])
        self._params(fn, open_paren + 1, close_paren)
        block = self._block(close_paren + 1, body_end)
        fn.children.append(block.id)
        return Ast(nodes=self.nodes, name=name)

    def _params(self, fn: AstNode, start: int, end: int) -> None:
        if start >= end:
            return
        if end - start == 1 and self.toks[start].text == "void":
            fn.tokens.append(self.toks[start])
            return
        depth = 0
        current: list[Token] = []
        for t in self.toks[start:end]:
            if t.text in ("(", "["):
                depth += 1
            elif t.text in (")", "]"):
                depth -= 1
            if t.text == "," and depth == 0:
                fn.tokens.append(t)
                param = self.new_node(NodeKind.PARAM, current)
                fn.children.append(param.id)
                current = []
            else:
                current.append(t)
        if current:
            param = self.new_node(NodeKind.PARAM, current)
            fn.children.append(param.id)

    def _block(self, open_idx: int, close_idx: int) -> AstNode:
        block = self.new_node(NodeKind.BLOCK, [self.toks[open_idx], self.toks[close_idx]])
        i = open_idx + 1
        while i < close_idx:
            child, i = self._statement(i, close_idx)
            block.children.append(child.id)
        return block

    # -- statements --
    def _statement(self, i: int, limit: int) -> tuple[AstNode, int]:
        """Parse one statement starting at i; returns (node, next index)."""
        head = self.toks[i].text
        if head == "{":
            close = self.match_close(i, "{", "}", limit)
            return self._block(i, close), close + 1
        if head == "if":
            return self._if(i, limit)
        if head == "while":
            return self._while(i, limit)
        if head == "for":
            return self._for(i, limit)
        if head in ("switch", "do", "case", "default", "else", "goto"):
            return self._opaque(i, limit)
        if (self.toks[i].kind == TokenKind.IDENTIFIER and self.text(i + 1) == ":"
                and i + 1 < limit):
            node = self.new_node(NodeKind.EXPR, self.toks[i:i + 2], statement=True, opaque=True)
            return node, i + 2
        return self._simple(i, limit)

    def _paren_group(self, i: int, limit: int) -> int:
        if self.text(i) != "(":
            return -1
        return self.match_close(i, "(", ")", limit)

    def _if(self, i: int, limit: int) -> tuple[AstNode, int]:
        close = self._paren_group(i + 1, limit)
        if close < 0 or close + 1 >= limit:
            return self._opaque(i, limit)
        node = self.new_node(NodeKind.IF, [self.toks[i], self.toks[i + 1], self.toks[close]], statement=True)
        cond = self.new_node(NodeKind.CONDITION, self.toks[i + 2:close])
        node.children.append(cond.id)
        then, j = self._statement(close + 1, limit)
        node.children.append(then.id)
        if j < limit and self.text(j) == "else" and j + 1 < limit:
            node.tokens.append(self.toks[j])
            other, j = self._statement(j + 1, limit)
            node.children.append(other.id)
        return node, j

    def _while(self, i: int, limit: int) -> tuple[AstNode, int]:
        close = self._paren_group(i + 1, limit)
        if close < 0 or close + 1 >= limit:
            return self._opaque(i, limit)
        node = self.new_node(NodeKind.WHILE, [self.toks[i], self.toks[i + 1], self.toks[close]], statement=True)
        cond = self.new_node(NodeKind.CONDITION, self.toks[i + 2:close])
        node.children.append(cond.id)
        body, j = self._statement(close + 1, limit)
        node.children.append(body.id)
        return node, j

    def _for(self, i: int, limit: int) -> tuple[AstNode, int]:
        close = self._paren_group(i + 1, limit)
        if close < 0 or close + 1 >= limit:
            return self._opaque(i, limit)
        semis = [j for j in range(i + 2, close)
                 if self.toks[j].text == ";" and self._depth_between(i + 2, j) == 0]
        if len(semis) != 2:
            return self._opaque(i, limit)
        s1, s2 = semis
        node = self.new_node(NodeKind.FOR, [self.toks[i], self.toks[i + 1], self.toks[s2], self.toks[close]],
                             statement=True)
        if s1 > i + 2:
            init = self._classified(self.toks[i + 2:s1 + 1], slot="init")
            node.children.append(init.id)
        else:
            node.tokens.append(self.toks[s1])
        if s2 > s1 + 1:
            cond = self.new_node(NodeKind.CONDITION, self.toks[s1 + 1:s2])
            node.children.append(cond.id)
        if close > s2 + 1:
            step = self._classified(self.toks[s2 + 1:close], slot="step")
            node.children.append(step.id)
        body, j = self._statement(close + 1, limit)
        node.children.append(body.id)
        node.tokens.sort(key=lambda t: t.pos)
        return node, j

    def _depth_between(self, start: int, end: int) -> int:
        depth = 0
        for t in self.toks[start:end]:
            if t.text in ("(", "[", "{"):
                depth += 1
            elif t.text in (")", "]", "}"):
                depth -= 1
        return depth

    def _simple(self, i: int, limit: int) -> tuple[AstNode, int]:
        depth = 0
        j = i
        while j < limit:
            t = self.toks[j].text
            if t in ("(", "[", "{"):
                depth += 1
            elif t in (")", "]", "}"):
                depth -= 1
                if depth < 0:
                    break
            elif t == ";" and depth == 0:
                node = self._classified(self.toks[i:j + 1])
                return node, j + 1
            j += 1
        # ran into the end of the enclosing block without a ';'
        end = max(j, i + 1)
        node = self.new_node(NodeKind.EXPR, self.toks[i:end], statement=True, opaque=True)
        return node, end

    def _opaque(self, i: int, limit: int) -> tuple[AstNode, int]:
        """Swallow an unsupported construct up to its ';' or its closing brace."""
        depth = 0
        j = i
        end = limit
        while j < limit:
            t = self.toks[j].text
            if t in ("(", "["):
                depth += 1
            elif t in (")", "]"):
                depth -= 1
            elif t == ";" and depth == 0:
                end = j + 1
                break
            elif t == "{" and depth == 0:
                close = self.match_close(j, "{", "}", limit)
                end = close + 1 if close >= 0 else limit
                if self.toks[i].text == "do" and self.text(end) == "while":
                    k = end
                    while k < limit and self.toks[k].text != ";":
                        k += 1
                    end = min(k + 1, limit)
                elif self.text(end) == "else":
                    # absorb the else branch of a recovered if
                    _, end2 = self._skip_statement(end + 1, limit)
                    end = end2
                break
            j += 1
        node = self.new_node(NodeKind.EXPR, self.toks[i:end], statement=True, opaque=True)
        return node, end

    def _skip_statement(self, i: int, limit: int) -> tuple[None, int]:
        depth = 0
        j = i
        while j < limit:
            t = self.toks[j].text
            if t in ("(", "[", "{"):
                depth += 1
            elif t in (")", "]", "}"):
                depth -= 1
                if depth == 0 and t == "}":
                    return None, j + 1
            elif t == ";" and depth == 0:
                return None, j + 1
            j += 1
        return None, limit

    def _classified(self, toks: list[Token], slot: Optional[str] = None) -> AstNode:
        kind = classify_statement(toks)
        return self.new_node(kind, toks, statement=True, slot=slot)


def classify_statement(toks: list[Token]) -> NodeKind:
    """Kind of a simple statement given its tokens (trailing ';' optional)."""
    body = toks[:-1] if toks and toks[-1].text == ";" else toks
    if not body:
        return NodeKind.EXPR
    head = body[0].text
    if head == "return":
        return NodeKind.RETURN
    if head in ("break", "continue", "goto"):
        return NodeKind.EXPR
    if _assignment_index(body) >= 0:
        return NodeKind.DECL if _is_declaration(body) else NodeKind.ASSIGN
    if _is_declaration(body):
        return NodeKind.DECL
    if body[0].text in ("++", "--") or body[-1].text in ("++", "--"):
        return NodeKind.ASSIGN
    if (len(body) >= 3 and body[0].kind == TokenKind.IDENTIFIER and body[1].text == "("
            and _matching(body, 1) == len(body) - 1):
        return NodeKind.CALL
    return NodeKind.EXPR


def _matching(toks: list[Token], i: int) -> int:
    opener = toks[i].text
    closer = {"(": ")", "[": "]", "{": "}"}[opener]
    depth = 0
    for j in range(i, len(toks)):
        if toks[j].text == opener:
            depth += 1
        elif toks[j].text == closer:
            depth -= 1
            if depth == 0:
                return j
    return -1


def _assignment_index(body: list[Token]) -> int:
    """Index of the first top-level assignment operator (plain or compound)."""
    depth = 0
    for i, t in enumerate(body):
        if t.text in ("(", "[", "{"):
            depth += 1
        elif t.text in (")", "]", "}"):
            depth -= 1
        elif depth == 0 and t.text in ASSIGN_OPS:
            return i
    return -1


def _declarator_start(body: list[Token]) -> int:
    """Index of the first declared name if body looks like a declaration, else -1."""
    j = 0
    saw_type = False
    n = len(body)
    while j < n and body[j].kind == TokenKind.KEYWORD and body[j].text in TYPE_KEYWORDS:
        if body[j].text in ("struct", "union", "enum"):
            j += 1
        saw_type = True
        j += 1
    if not saw_type:
        if n >= 2 and body[0].kind == TokenKind.IDENTIFIER:
            k = 1
            while k < n and body[k].text == "*":
                k += 1
            if k < n and body[k].kind == TokenKind.IDENTIFIER and (
                    k + 1 == n or body[k + 1].text in ("=", ";", "[", ",")):
                return k
        return -1
    while j < n and (body[j].text == "*" or body[j].text in ("const", "volatile", "restrict")):
        j += 1
    if j < n and body[j].kind == TokenKind.IDENTIFIER:
        if j + 1 == n or body[j + 1].text in ("=", "[", ",", ";"):
            return j
    return -1


def _is_declaration(body: list[Token]) -> bool:
    return _declarator_start(body) >= 0


def parse_function(tokens: list[Token]) -> Ast:
    """Parse exactly one function definition into a statement-granular Ast."""
    ast = _Parser(tokens).parse()
    opaque = sum(1 for n in ast.nodes if n.opaque)
    if opaque:
        logger.debug(f"{ast.name}: {opaque} statement(s) recovered as opaque")
    return ast


def parse_source(source: str) -> Ast:
    return parse_function(tokenize(source))


# ---------------------------------------------------------------------------
# Statement helpers shared by the graph builder and the mutators
# ---------------------------------------------------------------------------

def serialize_tokens(ast: Ast) -> list[Token]:
    """All tokens owned by the tree, in source order."""
    return sorted((t for n in ast.nodes for t in n.tokens), key=lambda t: t.pos)


def statement_tokens(ast: Ast, node: AstNode) -> list[Token]:
    """A statement's own tokens plus its condition; bodies excluded."""
    toks = list(node.tokens)
    cond = ast.condition_of(node)
    if cond is not None:
        toks.extend(cond.tokens)
    return sorted(toks, key=lambda t: t.pos)


def statement_text(ast: Ast, node: AstNode) -> str:
    return " ".join(t.text for t in statement_tokens(ast, node))


def variable_refs(tokens: list[Token]) -> list[Token]:
    """Identifier tokens naming variables: no callees, no field names."""
    refs = []
    for i, t in enumerate(tokens):
        if t.kind != TokenKind.IDENTIFIER:
            continue
        if i > 0 and tokens[i - 1].text in (".", "->"):
            continue
        if i + 1 < len(tokens) and tokens[i + 1].text == "(":
            continue
        refs.append(t)
    return refs


def _unique(names) -> list[str]:
    seen: dict[str, None] = {}
    for name in names:
        seen.setdefault(name, None)
    return list(seen)


def _split_top_level(body: list[Token], sep: str = ",") -> list[list[Token]]:
    parts: list[list[Token]] = [[]]
    depth = 0
    for t in body:
        if t.text in ("(", "[", "{"):
            depth += 1
        elif t.text in (")", "]", "}"):
            depth -= 1
        if t.text == sep and depth == 0:
            parts.append([])
        else:
            parts[-1].append(t)
    return parts


def declared_names(node: AstNode) -> list[Token]:
    """Name tokens introduced by a declaration statement."""
    body = node.tokens[:-1] if node.tokens and node.tokens[-1].text == ";" else node.tokens
    start = _declarator_start(body)
    if start < 0:
        return []
    names = [body[start]]
    # only the first declarator carries the type prefix; later ones start after a comma
    for part in _split_top_level(body[start + 1:])[1:]:
        k = 0
        while k < len(part) and part[k].text in ("*", "const"):
            k += 1
        if k < len(part) and part[k].kind == TokenKind.IDENTIFIER:
            names.append(part[k])
    return names


def is_compound_assignment(body: list[Token], idx: int) -> bool:
    t = body[idx]
    if t.text in COMPOUND_ASSIGN_OPS:
        return True
    if idx > 0:
        prev = body[idx - 1]
        return (prev.text in ASSIGN_SUFFIX_CHARS and prev.line == t.line
                and prev.col + len(prev.text) == t.col)
    return False


def defs_uses(ast: Ast, node: AstNode) -> tuple[list[str], list[str]]:
    """Variables a statement defines and uses (base identifiers only)."""
    kind = node.kind
    if kind in BRANCHING_KINDS:
        cond = ast.condition_of(node)
        uses = [t.text for t in variable_refs(cond.tokens)] if cond is not None else []
        return [], _unique(uses)

    body = node.tokens[:-1] if node.tokens and node.tokens[-1].text == ";" else list(node.tokens)
    if not body or node.opaque:
        return [], _unique(t.text for t in variable_refs(body))
    if body[0].text in ("break", "continue", "goto"):
        return [], []

    if kind == NodeKind.DECL:
        names = declared_names(node)
        name_ids = {id(t) for t in names}
        start = _declarator_start(body)
        tail = [t for t in body[start:] if id(t) not in name_ids]
        return _unique(t.text for t in names), _unique(t.text for t in variable_refs(tail))

    if kind == NodeKind.ASSIGN:
        idx = _assignment_index(body)
        if idx < 0:  # x++ / --x
            refs = variable_refs([t for t in body if t.text not in ("++", "--")])
            if not refs:
                return [], []
            base = refs[0].text
            return [base], _unique([base] + [t.text for t in refs[1:]])
        lhs, rhs = body[:idx], body[idx + 1:]
        lhs_refs = variable_refs(lhs)
        if not lhs_refs:
            return [], _unique(t.text for t in variable_refs(rhs))
        base = lhs_refs[0].text
        uses = [t.text for t in lhs_refs[1:]] + [t.text for t in variable_refs(rhs)]
        if is_compound_assignment(body, idx):
            uses.insert(0, base)
        return [base], _unique(uses)

    return [], _unique(t.text for t in variable_refs(body))


def local_names(ast: Ast) -> list[str]:
    """Parameters and body declarations, in first-declaration order."""
    names: list[str] = []
    for n in ast.nodes:
        if n.kind == NodeKind.PARAM:
            refs = [t for t in n.tokens if t.kind == TokenKind.IDENTIFIER]
            # the last identifier of a parameter is its name ("struct pkt *req")
            if refs:
                names.append(refs[-1].text)
        elif n.kind == NodeKind.DECL:
            names.extend(t.text for t in declared_names(n))
    return _unique(names)

