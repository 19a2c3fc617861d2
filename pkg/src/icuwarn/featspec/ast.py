"""Feature-spec syntax tree, parser and canonical printer.

Grammar (``#`` starts a comment; whitespace and newlines are free inside
braces and parentheses)::

    spec     := base (block | expr)*
    base     := "base" NAME "alias" NAME "key" "(" NAME ("," NAME)* ")" selectors
    block    := "table" NAME "alias" NAME "join" "(" cond ("," cond)* ")" selectors
    cond     := NAME "." NAME "=" NAME           # earlier_alias.column = this_table_column
    selectors:= "{" [sel ("," sel)*] "}"
    sel      := NAME ["as" NAME]                 # column, optionally renamed
              | PATTERN ["suffix" NAME]          # wildcard, e.g. * or lab_*
    expr     := "expr" NAME "=" arith
    arith    := term (("+" | "-") term)*
    term     := factor (("*" | "/") factor)*
    factor   := NUMBER | "-" factor | NAME "." NAME | "(" arith ")"
              | "round" "(" arith "," INTEGER ")"
              | "hours_between" "(" arith "," arith ")"
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field


# -- nodes -------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    text: str

    @property
    def value(self) -> float:
        return float(self.text)


@dataclass(frozen=True)
class Ref:
    alias: str
    column: str


@dataclass(frozen=True)
class Neg:
    operand: object


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


@dataclass(frozen=True)
class Column:
    name: str


@dataclass(frozen=True)
class Renamed:
    name: str
    out_name: str


@dataclass(frozen=True)
class Wildcard:
    pattern: str
    suffix: str = ""


@dataclass(frozen=True)
class BaseTable:
    table: str
    alias: str
    key: tuple[str, ...]
    selectors: tuple


@dataclass(frozen=True)
class TableBlock:
    table: str
    alias: str
    join_map: tuple[tuple[str, str, str], ...]   # (left_alias, left_column, right_column)
    selectors: tuple
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ExprDef:
    out_name: str
    expr: object
    after_block: int        # number of blocks declared before this expr
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class SpecAst:
    base: BaseTable
    blocks: tuple[TableBlock, ...]
    exprs: tuple[ExprDef, ...]

    @property
    def aliases(self) -> dict[str, str]:
        out = {self.base.alias: self.base.table}
        out.update({b.alias: b.table for b in self.blocks})
        return out

    def items(self):
        """Select-list items in output order: (alias_or_None, selector_or_exprdef)."""
        yield from ((self.base.alias, s) for s in self.base.selectors)
        for i in range(len(self.blocks) + 1):
            yield from ((None, e) for e in self.exprs if e.after_block == i)
            if i < len(self.blocks):
                b = self.blocks[i]
                yield from ((b.alias, s) for s in b.selectors)


@dataclass(frozen=True)
class Diagnostic:
    line: int
    col: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line}, col {self.col}: {self.message}"


class SpecError(ValueError):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(map(str, diagnostics)))


# -- lexer -------------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r]+) | (?P<nl>\n) | (?P<comment>\#[^\n]*)
  | (?P<number>\d+(\.\d*)?([eE][+-]?\d+)?|\.\d+([eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<punct>[{}(),.=+\-*/])
""", re.VERBOSE)


@dataclass(frozen=True)
class Tok:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Tok]:
    toks, line, line_start, pos = [], 1, 0, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise SpecError([Diagnostic(line, pos - line_start + 1,
                                        f"unexpected character {text[pos]!r}")])
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            toks.append(Tok(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    toks.append(Tok("eof", "", line, pos - line_start + 1))
    return toks


# -- parser ------------------------------------------------------------------

KEYWORDS = {"base", "table", "alias", "key", "join", "expr", "as", "suffix"}
FUNCTIONS = {"round": 2, "hours_between": 2}


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    @property
    def cur(self) -> Tok:
        return self.toks[self.i]

    def fail(self, msg: str, tok: Tok | None = None):
        tok = tok or self.cur
        raise SpecError([Diagnostic(tok.line, tok.col, msg)])

    def take(self, kind: str | None = None, text: str | None = None) -> Tok:
        tok = self.cur
        if (kind and tok.kind != kind) or (text is not None and tok.text != text):
            want = repr(text) if text is not None else kind
            self.fail(f"expected {want}, found {tok.text or 'end of input'!r}")
        self.i += 1
        return tok

    def accept(self, text: str) -> bool:
        if self.cur.text == text and self.cur.kind in ("name", "punct"):
            self.i += 1
            return True
        return False

    def ident(self) -> Tok:
        tok = self.take("name")
        if tok.text in KEYWORDS:
            self.fail(f"keyword {tok.text!r} used as a name", tok)
        return tok

    def name_list(self) -> tuple[str, ...]:
        self.take("punct", "(")
        names = [self.ident().text]
        while self.accept(","):
            names.append(self.ident().text)
        self.take("punct", ")")
        return tuple(names)

    def selectors(self) -> tuple:
        self.take("punct", "{")
        out = []
        if not self.accept("}"):
            while True:
                out.append(self.selector())
                if self.accept("}"):
                    break
                self.take("punct", ",")
        return tuple(out)

    def _adjacent(self, j: int) -> bool:
        a, b = self.toks[j], self.toks[j + 1]
        return a.line == b.line and a.col + len(a.text) == b.col and b.kind != "eof"

    def selector(self):
        # a wildcard is a run of touching name/number/'*' tokens containing '*'
        j = self.i
        while self._adjacent(j) and self.toks[j + 1].text not in ",}" and \
                self.toks[j + 1].kind in ("name", "number", "punct") and \
                (self.toks[j + 1].kind != "punct" or self.toks[j + 1].text == "*"):
            j += 1
        run = self.toks[self.i:j + 1]
        if any(t.text == "*" for t in run):
            if any(t.kind == "punct" and t.text != "*" for t in run):
                self.fail("malformed wildcard")
            self.i = j + 1
            pattern = "".join(t.text for t in run)
            suffix = self.ident().text if self.accept("suffix") else ""
            return Wildcard(pattern, suffix)
        name = self.ident().text
        if self.accept("as"):
            return Renamed(name, self.ident().text)
        return Column(name)

    def parse(self) -> tuple[SpecAst, list[tuple[object, Tok]]]:
        refs: list[tuple[object, Tok]] = []   # things to resolve after parsing
        start = self.take("name", "base")
        table = self.ident().text
        self.take("name", "alias")
        alias = self.ident().text
        self.take("name", "key")
        key = self.name_list()
        base = BaseTable(table, alias, key, self.selectors())
        blocks, exprs = [], []
        while self.cur.kind != "eof":
            tok = self.cur
            if self.accept("table"):
                table = self.ident().text
                self.take("name", "alias")
                alias_tok = self.ident()
                self.take("name", "join")
                self.take("punct", "(")
                conds = []
                while True:
                    la = self.ident()
                    self.take("punct", ".")
                    lc = self.ident().text
                    self.take("punct", "=")
                    rc = self.ident().text
                    conds.append((la.text, lc, rc))
                    refs.append((("join", la.text, len(blocks)), la))
                    if not self.accept(","):
                        break
                self.take("punct", ")")
                blocks.append(TableBlock(table, alias_tok.text, tuple(conds), self.selectors(),
                                         tok.line))
                refs.append((("alias", alias_tok.text), alias_tok))
            elif self.accept("expr"):
                name = self.ident().text
                self.take("punct", "=")
                expr = self.arith(refs)
                exprs.append(ExprDef(name, expr, len(blocks), tok.line))
            else:
                self.fail(f"expected 'table' or 'expr', found {tok.text!r}")
        del start
        return SpecAst(base, tuple(blocks), tuple(exprs)), refs

    # expressions
    def arith(self, refs):
        node = self.term(refs)
        while self.cur.kind == "punct" and self.cur.text in "+-":
            op = self.take().text
            node = BinOp(op, node, self.term(refs))
        return node

    def term(self, refs):
        node = self.factor(refs)
        while self.cur.kind == "punct" and self.cur.text in "*/":
            op = self.take().text
            node = BinOp(op, node, self.factor(refs))
        return node

    def factor(self, refs):
        tok = self.cur
        if tok.kind == "number":
            self.i += 1
            return Num(tok.text)
        if self.accept("-"):
            return Neg(self.factor(refs))
        if self.accept("("):
            node = self.arith(refs)
            self.take("punct", ")")
            return node
        name = self.ident()
        if name.text in FUNCTIONS and self.cur.text == "(":
            self.take("punct", "(")
            args = [self.arith(refs)]
            while self.accept(","):
                args.append(self.arith(refs))
            self.take("punct", ")")
            if len(args) != FUNCTIONS[name.text]:
                self.fail(f"{name.text} takes {FUNCTIONS[name.text]} arguments", name)
            if name.text == "round" and not (isinstance(args[1], Num) and args[1].text.isdigit()):
                self.fail("round() digits must be an integer literal", name)
            return Call(name.text, tuple(args))
        self.take("punct", ".")
        col = self.ident().text
        refs.append((("ref", name.text), name))
        return Ref(name.text, col)


def parse_spec(text: str) -> SpecAst:
    """Parse spec text; raises SpecError carrying line/column diagnostics."""
    ast, refs = _Parser(text).parse()
    diags: list[Diagnostic] = []
    declared = {ast.base.alias: -1}
    for i, b in enumerate(ast.blocks):
        if b.alias in declared:
            tok = next(t for r, t in refs if r == ("alias", b.alias))
            diags.append(Diagnostic(tok.line, tok.col, f"duplicate alias {b.alias}"))
        declared.setdefault(b.alias, i)
    for what, tok in refs:
        if what[0] == "join":
            _, alias, block_index = what
            if alias not in declared or declared[alias] >= block_index:
                diags.append(Diagnostic(tok.line, tok.col,
                                        f"unknown alias {alias} in join (must be declared earlier)"))
        elif what[0] == "ref" and what[1] not in declared:
            diags.append(Diagnostic(tok.line, tok.col, f"unknown alias {what[1]}"))
    seen: dict[str, int] = {}
    for alias, item in ast.items():
        name = explicit_name(item)
        if name is None:
            continue
        if name in seen:
            line = getattr(item, "line", 0) or seen[name]
            diags.append(Diagnostic(line, 1, f"duplicate output name {name}"))
        seen.setdefault(name, getattr(item, "line", 0))
    if diags:
        raise SpecError(sorted(diags, key=lambda d: (d.line, d.col)))
    return ast


def explicit_name(item) -> str | None:
    if isinstance(item, Column):
        return item.name
    if isinstance(item, Renamed):
        return item.out_name
    if isinstance(item, ExprDef):
        return item.out_name
    return None


# -- canonical printer -------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def print_expr(node, parent_prec: int = 0, right: bool = False) -> str:
    if isinstance(node, Num):
        return node.text
    if isinstance(node, Ref):
        return f"{node.alias}.{node.column}"
    if isinstance(node, Neg):
        return "-" + print_expr(node.operand, 3)
    if isinstance(node, Call):
        return f"{node.name}({', '.join(print_expr(a) for a in node.args)})"
    prec = _PREC[node.op]
    text = f"{print_expr(node.left, prec)} {node.op} {print_expr(node.right, prec, True)}"
    if prec < parent_prec or (right and prec == parent_prec):
        return f"({text})"
    return text


def _print_selector(s) -> str:
    if isinstance(s, Column):
        return s.name
    if isinstance(s, Renamed):
        return f"{s.name} as {s.out_name}"
    return s.pattern + (f" suffix {s.suffix}" if s.suffix else "")


def _print_selectors(sels) -> str:
    if not sels:
        return "{ }"
    return "{\n" + ",\n".join("    " + _print_selector(s) for s in sels) + "\n}"


def print_spec(ast: SpecAst) -> str:
    b = ast.base
    out = [f"base {b.table} alias {b.alias} key ({', '.join(b.key)}) {_print_selectors(b.selectors)}"]
    for i in range(len(ast.blocks) + 1):
        out += [f"expr {e.out_name} = {print_expr(e.expr)}" for e in ast.exprs
                if e.after_block == i]
        if i < len(ast.blocks):
            blk = ast.blocks[i]
            conds = ", ".join(f"{la}.{lc} = {rc}" for la, lc, rc in blk.join_map)
            out.append(f"table {blk.table} alias {blk.alias} join ({conds}) "
                       f"{_print_selectors(blk.selectors)}")
    return "\n".join(out) + "\n"
