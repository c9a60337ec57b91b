"""Easy/Medium/Hard/ExtraHard classification from SQL component counts.

The rule set follows the long-standing Spider evaluator convention. Counts are
taken on the parsed tree of the outermost query: keywords inside string
literals or nested queries do not contribute to the top-level counts.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import total_ordering

from sqlglot import exp

from .sqlast import (
    SET_OPERATIONS,
    is_scope_boundary,
    nested_queries,
    parse_query,
    walk_scope,
)

HARDNESS_RULES_VERSION = "hardness-spider-v1"

_AGGREGATES = (exp.Count, exp.Sum, exp.Avg, exp.Min, exp.Max)


@total_ordering
class HardnessLevel(Enum):
    EASY = "easy"
    MEDIUM = "medium"
    HARD = "hard"
    EXTRA_HARD = "extra"

    @property
    def rank(self) -> int:
        return _RANK[self]

    @property
    def label(self) -> str:
        return _LABEL[self]

    def __lt__(self, other: object) -> bool:
        if not isinstance(other, HardnessLevel):
            return NotImplemented
        return self.rank < other.rank


_RANK = {HardnessLevel.EASY: 0, HardnessLevel.MEDIUM: 1, HardnessLevel.HARD: 2, HardnessLevel.EXTRA_HARD: 3}
_LABEL = {HardnessLevel.EASY: "Easy", HardnessLevel.MEDIUM: "Medium",
          HardnessLevel.HARD: "Hard", HardnessLevel.EXTRA_HARD: "Extra Hard"}
LEVELS = tuple(HardnessLevel)


@dataclass(frozen=True)
class Components:
    comp1: int
    comp2: int
    others: int


def _leftmost_select(tree: exp.Expression) -> exp.Select:
    node = tree
    while isinstance(node, SET_OPERATIONS):
        node = node.this
        while isinstance(node, exp.Subquery):
            node = node.this
    assert isinstance(node, exp.Select)
    return node


def _count_set_operations(tree: exp.Expression) -> int:
    if isinstance(tree, exp.Subquery):
        return _count_set_operations(tree.this)
    if isinstance(tree, SET_OPERATIONS):
        return 1 + _count_set_operations(tree.this) + _count_set_operations(tree.expression)
    return 0


def _count(nodes, kinds) -> int:
    return sum(1 for root in nodes if root is not None for n in walk_scope(root) if isinstance(n, kinds))


def _condition_leaves(cond: exp.Expression | None) -> int:
    if cond is None:
        return 0
    if isinstance(cond, exp.Paren):
        return _condition_leaves(cond.this)
    if isinstance(cond, (exp.And, exp.Or)):
        return _condition_leaves(cond.this) + _condition_leaves(cond.expression)
    return 1


def nested_queries_including(node: exp.Expression):
    if is_scope_boundary(node):
        yield node
    else:
        yield from nested_queries(node)


def components(sql: str) -> Components:
    tree = parse_query(sql)
    core = _leftmost_select(tree)
    where = core.args.get("where")
    group = core.args.get("group")
    having = core.args.get("having")
    joins = core.args.get("joins") or []
    order = core.args.get("order") or tree.args.get("order")
    limit = core.args.get("limit") or tree.args.get("limit")

    condition_roots = [where, having] + [j.args.get("on") for j in joins]
    comp1 = (
        int(where is not None and _condition_leaves(where.this) > 0)
        + int(group is not None and len(group.expressions) > 0)
        + int(order is not None)
        + int(limit is not None)
        + len(joins)
        + _count(condition_roots, exp.Or)
        + _count(condition_roots, (exp.Like, exp.ILike))
    )

    nested = sum(
        1
        for key, value in core.args.items()
        if key not in ("with", "with_")
        for item in (value if isinstance(value, list) else [value])
        if isinstance(item, exp.Expression)
        for _ in (nested_queries_including(item))
    )
    with_ = tree.args.get("with_") or tree.args.get("with")
    ctes = len(with_.expressions) if with_ is not None else 0
    comp2 = _count_set_operations(tree) + nested + ctes

    agg_roots = [*core.expressions, where, group, having, order]
    n_agg = _count(agg_roots, _AGGREGATES)
    others = (
        int(n_agg > 1)
        + int(len(core.expressions) > 1)
        + int(_condition_leaves(where.this if where is not None else None) > 1)
        + int(group is not None and len(group.expressions) > 1)
    )
    return Components(comp1, comp2, others)


def level_from_components(c: Components) -> HardnessLevel:
    comp1, comp2, others = c.comp1, c.comp2, c.others
    if comp1 <= 1 and comp2 == 0 and others == 0:
        return HardnessLevel.EASY
    if comp2 == 0 and ((others <= 2 and comp1 <= 1) or (comp1 <= 2 and others < 2)):
        return HardnessLevel.MEDIUM
    if (comp2 == 0 and ((others > 2 and comp1 <= 2) or (2 < comp1 <= 3 and others <= 2))) or (
        comp2 <= 1 and comp1 <= 1 and others == 0
    ):
        return HardnessLevel.HARD
    return HardnessLevel.EXTRA_HARD


def classify_hardness(sql: str) -> HardnessLevel:
    """Classify a single (possibly compound) SELECT statement."""
    return level_from_components(components(sql))
