"""SQL generation and in-process execution of a parsed feature spec."""
from __future__ import annotations

import fnmatch
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..features.windows import sql_round
from .ast import BinOp, Call, Column, ExprDef, Neg, Num, Ref, Renamed, SpecAst, Wildcard
from .relational import QueryError, RelTable, gather, match_rows

Catalog = Mapping[str, Sequence[str]]


@dataclass(frozen=True)
class OutputColumn:
    name: str
    alias: str | None        # None for expressions
    source: object           # column name, or expression node


def catalog_of(tables: Mapping[str, RelTable] | Sequence[RelTable]) -> dict[str, list[str]]:
    if not isinstance(tables, Mapping):
        tables = {t.name: t for t in tables}
    return {name: t.column_names for name, t in tables.items()}


def _join_columns(ast: SpecAst, alias: str) -> set[str]:
    if alias == ast.base.alias:
        return set()
    blk = next(b for b in ast.blocks if b.alias == alias)
    return {rc for _, _, rc in blk.join_map}


def _expr_refs(node):
    if isinstance(node, Ref):
        yield node
    elif isinstance(node, Neg):
        yield from _expr_refs(node.operand)
    elif isinstance(node, BinOp):
        yield from _expr_refs(node.left)
        yield from _expr_refs(node.right)
    elif isinstance(node, Call):
        for a in node.args:
            yield from _expr_refs(a)


def resolve(ast: SpecAst, catalog: Catalog) -> list[list[OutputColumn]]:
    """Expand wildcards against the catalog; one group per select-list item.

    Wildcards skip the table's own join columns and keep catalog order.
    """
    aliases = ast.aliases
    for alias, table in aliases.items():
        if table not in catalog:
            raise QueryError(f"catalog has no table {table}")

    def need(alias, col):
        if col not in catalog[aliases[alias]]:
            raise QueryError(f"table {aliases[alias]} has no column {col}")

    for k in ast.base.key:
        need(ast.base.alias, k)
    for b in ast.blocks:
        for la, lc, rc in b.join_map:
            need(la, lc)
            need(b.alias, rc)
    groups: list[list[OutputColumn]] = []
    for alias, item in ast.items():
        if isinstance(item, ExprDef):
            for r in _expr_refs(item.expr):
                need(r.alias, r.column)
            groups.append([OutputColumn(item.out_name, None, item.expr)])
        elif isinstance(item, Column):
            need(alias, item.name)
            groups.append([OutputColumn(item.name, alias, item.name)])
        elif isinstance(item, Renamed):
            need(alias, item.name)
            groups.append([OutputColumn(item.out_name, alias, item.name)])
        else:
            skip = _join_columns(ast, alias)
            cols = [c for c in catalog[aliases[alias]]
                    if fnmatch.fnmatchcase(c, item.pattern) and c not in skip]
            if not cols:
                raise QueryError(f"wildcard {item.pattern} matches no column of {aliases[alias]}")
            groups.append([OutputColumn(c + item.suffix, alias, c) for c in cols])
    seen = set()
    for g in groups:
        for oc in g:
            if oc.name in seen:
                raise QueryError(f"duplicate output column {oc.name}")
            seen.add(oc.name)
    return groups


# -- SQL text ------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _sql_expr(node, parent: int = 0, right: bool = False) -> str:
    if isinstance(node, Num):
        return node.text
    if isinstance(node, Ref):
        return f"{node.alias}.{node.column}"
    if isinstance(node, Neg):
        return "-" + _sql_expr(node.operand, 3)
    if isinstance(node, Call):
        if node.name == "round":
            return f"round(cast({_sql_expr(node.args[0])} AS numeric), {node.args[1].text})"
        a, b = (_sql_expr(x, 1, True) for x in node.args)
        text = f"extract(epoch FROM {a} - {b})/3600.0"
        prec = 2
    else:
        prec = _PREC[node.op]
        text = f"{_sql_expr(node.left, prec)}{node.op}{_sql_expr(node.right, prec, True)}"
    if prec < parent or (right and prec == parent):
        return f"({text})"
    return text


def generate_sql(ast: SpecAst, catalog: Catalog) -> str:
    groups = resolve(ast, catalog)
    items = list(ast.items())
    lines: list[str] = []
    pending: list[str] = []   # consecutive plain columns of one alias share a line
    pending_alias = None

    def flush():
        nonlocal pending, pending_alias
        if pending:
            lines.append(", ".join(pending))
        pending, pending_alias = [], None

    for (alias, item), group in zip(items, groups):
        if isinstance(item, Column):
            if pending_alias != alias:
                flush()
            pending.append(f"{alias}.{item.name}")
            pending_alias = alias
            continue
        flush()
        if isinstance(item, ExprDef):
            lines.append(f"{_sql_expr(item.expr)} AS {item.out_name}")
        else:
            lines.append(", ".join(
                f"{oc.alias}.{oc.source}" + (f" AS {oc.name}" if oc.name != oc.source else "")
                for oc in group))
    flush()
    out = ["SELECT " + ",\n       ".join(lines)]
    out.append(f"FROM {ast.base.table} {ast.base.alias}")
    for b in ast.blocks:
        conds = " AND ".join(f"{la}.{lc} = {b.alias}.{rc}" for la, lc, rc in b.join_map)
        out.append(f"    LEFT OUTER JOIN {b.table} {b.alias} ON {conds}")
    return "\n".join(out) + "\n"


# -- execution -----------------------------------------------------------------

def _eval(node, col):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Ref):
        v = col(node.alias, node.column)
        if v.dtype == object:
            raise QueryError(f"non-numeric column {node.alias}.{node.column} in expression")
        return v
    if isinstance(node, Neg):
        return -_as_float(_eval(node.operand, col))
    if isinstance(node, Call):
        if node.name == "round":
            return sql_round(_as_float(_eval(node.args[0], col)), int(node.args[1].text))
        a, b = (_eval(x, col) for x in node.args)
        return _as_float(np.subtract(a, b)) / 3600.0
    a, b = _eval(node.left, col), _eval(node.right, col)
    with np.errstate(divide="ignore", invalid="ignore"):
        if node.op == "+":
            return np.add(a, b)
        if node.op == "-":
            return np.subtract(a, b)
        if node.op == "*":
            return np.multiply(a, b)
        out = np.divide(_as_float(a), b)
        # SQL division by zero has no value; treat it as null
        return np.where(np.isfinite(out) | np.isnan(out), out, np.nan)


def _as_float(x):
    return np.asarray(x, dtype=float)


def execute_query(ast: SpecAst, tables: Mapping[str, RelTable] | Sequence[RelTable],
                  name: str = "result") -> RelTable:
    """Evaluate the spec's left-outer-join merge. Row order follows the base table."""
    if not isinstance(tables, Mapping):
        tables = {t.name: t for t in tables}
    groups = resolve(ast, catalog_of(tables))
    aliases = ast.aliases
    base = tables[ast.base.table]
    n = len(base)
    rows: dict[str, np.ndarray] = {ast.base.alias: np.arange(n, dtype=np.int64)}

    def col(alias, column):
        return gather(tables[aliases[alias]], column, rows[alias])

    for b in ast.blocks:
        t = tables[b.table]
        left = [col(la, lc) for la, lc, _ in b.join_map]
        right = [t.columns[rc] for _, _, rc in b.join_map]
        rows[b.alias] = match_rows(left, right, b.table)
    out: dict[str, np.ndarray] = {}
    for group in groups:
        for oc in group:
            if oc.alias is None:
                v = _eval(oc.source, col)
                out[oc.name] = np.broadcast_to(np.asarray(v, dtype=float), (n,)).copy()
            else:
                out[oc.name] = col(oc.alias, oc.source)
    key = tuple(k for k in ast.base.key if k in out)
    return RelTable(name, key, out, check_key=False)
