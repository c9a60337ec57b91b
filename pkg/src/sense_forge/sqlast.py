"""Thin helpers over sqlglot's SQLite dialect."""

from __future__ import annotations

import re
from collections.abc import Iterator

import sqlglot
from sqlglot import exp
from sqlglot.errors import SqlglotError

from .errors import UnparsableSqlError

SET_OPERATIONS = (exp.Union, exp.Except, exp.Intersect)


def parse_query(sql: str) -> exp.Expression:
    """Parse a single SQLite query statement or raise :class:`UnparsableSqlError`."""
    text = sql.strip().rstrip(";").strip()
    if not text:
        raise UnparsableSqlError(sql, "empty")
    try:
        statements = [s for s in sqlglot.parse(text, read="sqlite") if s is not None]
    except (SqlglotError, ValueError, RecursionError) as exc:
        raise UnparsableSqlError(sql, type(exc).__name__) from exc
    if len(statements) != 1:
        raise UnparsableSqlError(sql, f"expected one statement, got {len(statements)}")
    tree = statements[0]
    while isinstance(tree, exp.Subquery):
        tree = tree.this
    if not isinstance(tree, (exp.Select, *SET_OPERATIONS)):
        raise UnparsableSqlError(sql, f"not a query ({type(tree).__name__})")
    return tree


def is_scope_boundary(node: exp.Expression) -> bool:
    return isinstance(node, (exp.Select, exp.Subquery, *SET_OPERATIONS))


def walk_scope(node: exp.Expression | None) -> Iterator[exp.Expression]:
    """Yield ``node`` and its descendants without entering nested queries."""
    if node is None:
        return
    stack = [node]
    while stack:
        current = stack.pop()
        yield current
        for child in current.iter_expressions():
            if not is_scope_boundary(child):
                stack.append(child)


def nested_queries(node: exp.Expression | None) -> Iterator[exp.Expression]:
    """Yield the outermost queries nested directly under ``node``'s scope."""
    if node is None:
        return
    stack = list(node.iter_expressions())
    while stack:
        current = stack.pop()
        if is_scope_boundary(current):
            yield current
            continue
        stack.extend(current.iter_expressions())


def count_joins(sql: str) -> int:
    """Number of JOIN operators anywhere in the query, comma joins included."""
    return sum(1 for _ in parse_query(sql).find_all(exp.Join))


def first_statement_end(sql: str) -> int | None:
    """Index of the first semicolon outside quotes and comments."""
    quote: str | None = None
    i = 0
    while i < len(sql):
        ch = sql[i]
        if quote:
            if ch == quote:
                if i + 1 < len(sql) and sql[i + 1] == quote:
                    i += 1
                else:
                    quote = None
        elif ch in "'\"`[":
            quote = "]" if ch == "[" else ch
        elif sql.startswith("--", i):
            nl = sql.find("\n", i)
            i = len(sql) if nl < 0 else nl
        elif sql.startswith("/*", i):
            end = sql.find("*/", i + 2)
            i = len(sql) if end < 0 else end + 1
        elif ch == ";":
            return i
        i += 1
    return None


_STRING = re.compile(r"'(?:[^']|'')*'|\"(?:[^\"]|\"\")*\"")


def _strip_parens(text: str) -> str:
    out, depth = [], 0
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth = max(0, depth - 1)
        elif depth == 0:
            out.append(ch)
    return "".join(out)


def has_top_level_order_by(sql: str) -> bool:
    """True iff the outermost statement carries an ORDER BY.

    ORDER BY inside subqueries or window specifications does not count. SQL the
    parser rejects falls back to a lexical scan with literals and parenthesized
    spans removed.
    """
    try:
        tree = parse_query(sql)
    except UnparsableSqlError:
        flat = _strip_parens(_STRING.sub("''", sql))
        return re.search(r"\border\s+by\b", flat, re.I) is not None
    return tree.args.get("order") is not None
