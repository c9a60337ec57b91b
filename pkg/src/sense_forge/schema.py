"""Relational schema model, SQLite introspection and cross-database similarity."""

from __future__ import annotations

import logging
import re
import sqlite3
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from .errors import NoSuchTableError, NotADatabaseError

log = logging.getLogger(__name__)

COLUMN_TYPES = ("TEXT", "INTEGER", "REAL", "BLOB", "NUMERIC")
DEFAULT_MERGE_THRESHOLD = 0.75

_BARE_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def affinity(declared: str | None) -> str:
    """Map a declared column type to its SQLite type affinity."""
    t = (declared or "").upper()
    if "INT" in t:
        return "INTEGER"
    if "CHAR" in t or "CLOB" in t or "TEXT" in t:
        return "TEXT"
    if "BLOB" in t or not t:
        return "BLOB"
    if "REAL" in t or "FLOA" in t or "DOUB" in t:
        return "REAL"
    return "NUMERIC"


def quote_ident(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


def bare_ident(name: str) -> str:
    """Leave simple identifiers unquoted, quote anything else."""
    return name if _BARE_IDENT.match(name) else quote_ident(name)


@dataclass(frozen=True)
class Column:
    name: str
    type: str = "TEXT"

    def __post_init__(self) -> None:
        if self.type not in COLUMN_TYPES:
            raise ValueError(f"column {self.name!r}: type must be one of {COLUMN_TYPES}, got {self.type!r}")


@dataclass(frozen=True)
class ForeignKey:
    column: str
    ref_table: str
    ref_column: str


@dataclass(frozen=True)
class Table:
    name: str
    columns: tuple[Column, ...]
    primary_key: tuple[str, ...] = ()
    foreign_keys: tuple[ForeignKey, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "primary_key", tuple(self.primary_key))
        object.__setattr__(self, "foreign_keys", tuple(self.foreign_keys))
        seen: set[str] = set()
        for col in self.columns:
            key = col.name.lower()
            if key in seen:
                raise ValueError(f"table {self.name!r}: duplicate column {col.name!r}")
            seen.add(key)
        for pk in self.primary_key:
            if pk.lower() not in seen:
                raise ValueError(f"table {self.name!r}: primary key column {pk!r} not in columns")

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def column(self, name: str) -> Column | None:
        lowered = name.lower()
        for col in self.columns:
            if col.name.lower() == lowered:
                return col
        return None

    def to_ddl(self) -> str:
        """Render as a ``CREATE TABLE`` statement in the prompt layout."""
        lines = [f"  {quote_ident(c.name)} {c.type}" for c in self.columns]
        if self.primary_key:
            lines.append(f"  PRIMARY KEY({', '.join(bare_ident(c) for c in self.primary_key)})")
        for fk in self.foreign_keys:
            lines.append(
                f"  FOREIGN KEY({bare_ident(fk.column)}) "
                f"REFERENCES {bare_ident(fk.ref_table)}({bare_ident(fk.ref_column)})"
            )
        return f"CREATE TABLE {quote_ident(self.name)} (\n" + ",\n".join(lines) + "\n);"


@dataclass(frozen=True)
class Schema:
    db_id: str
    tables: tuple[Table, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "tables", tuple(self.tables))
        by_name: dict[str, Table] = {}
        for t in self.tables:
            key = t.name.lower()
            if key in by_name:
                raise ValueError(f"schema {self.db_id!r}: duplicate table {t.name!r}")
            by_name[key] = t
        for t in self.tables:
            for fk in t.foreign_keys:
                ref = by_name.get(fk.ref_table.lower())
                if ref is None or ref.column(fk.ref_column) is None:
                    raise ValueError(
                        f"schema {self.db_id!r}: foreign key {t.name}.{fk.column} -> "
                        f"{fk.ref_table}.{fk.ref_column} references a missing table or column"
                    )

    def table(self, name: str) -> Table | None:
        lowered = name.lower()
        for t in self.tables:
            if t.name.lower() == lowered:
                return t
        return None

    @property
    def table_names(self) -> list[str]:
        return [t.name for t in self.tables]

    def to_ddl(self) -> str:
        return "\n".join(t.to_ddl() for t in self.tables)

    def name_bag(self) -> frozenset[str]:
        names: set[str] = set()
        for t in self.tables:
            tname = t.name.lower()
            names.add(tname)
            names.update(f"{tname}.{c.name.lower()}" for c in t.columns)
        return frozenset(names)


@dataclass(frozen=True)
class RowSample:
    table_name: str
    header: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "header", tuple(self.header))
        object.__setattr__(self, "rows", tuple(tuple(r) for r in self.rows))
        for row in self.rows:
            if len(row) != len(self.header):
                raise ValueError(f"row sample for {self.table_name!r}: row width {len(row)} != {len(self.header)}")


def database_path(db_root: str | Path, db_id: str) -> Path:
    """``<db_root>/<db_id>/<db_id>.sqlite``"""
    return Path(db_root) / db_id / f"{db_id}.sqlite"


def connect_readonly(db_file: str | Path) -> sqlite3.Connection:
    path = Path(db_file)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    conn = sqlite3.connect(path.resolve().as_uri() + "?mode=ro", uri=True, check_same_thread=False)
    conn.text_factory = lambda b: b.decode("utf-8", errors="replace")
    return conn


def _user_tables(conn: sqlite3.Connection) -> list[str]:
    rows = conn.execute(
        "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite\\_%' ESCAPE '\\' ORDER BY rowid"
    ).fetchall()
    return [r[0] for r in rows]


def schema_from_connection(conn: sqlite3.Connection, db_id: str) -> Schema:
    names = _user_tables(conn)
    raw: list[tuple[str, list[Column], list[str], list[tuple[str, str, str | None]]]] = []
    for name in names:
        info = conn.execute(f"PRAGMA table_info({quote_ident(name)})").fetchall()
        columns = [Column(r[1], affinity(r[2])) for r in info]
        pk = [r[1] for r in sorted((r for r in info if r[5]), key=lambda r: r[5])]
        fks = [(r[3], r[2], r[4]) for r in conn.execute(f"PRAGMA foreign_key_list({quote_ident(name)})").fetchall()]
        raw.append((name, columns, pk, fks))

    by_name = {name.lower(): (name, cols, pk) for name, cols, pk, _ in raw}
    tables = []
    for name, cols, pk, fks in raw:
        resolved = []
        for local, ref_table, ref_col in fks:
            target = by_name.get(ref_table.lower())
            if target is not None and ref_col is None and len(target[2]) == 1:
                ref_col = target[2][0]
            if target is None or ref_col is None or not any(c.name.lower() == ref_col.lower() for c in target[1]):
                log.warning("%s: dropping dangling foreign key %s.%s -> %s.%s", db_id, name, local, ref_table, ref_col)
                continue
            ref_name = target[0]
            ref_col = next(c.name for c in target[1] if c.name.lower() == ref_col.lower())
            resolved.append(ForeignKey(local, ref_name, ref_col))
        tables.append(Table(name, tuple(cols), tuple(pk), tuple(resolved)))
    return Schema(db_id, tuple(tables))


def introspect_schema(db_file: str | Path, db_id: str | None = None) -> Schema:
    """Read tables, columns, primary and foreign keys from a SQLite file.

    Tables come back in catalog order; ``sqlite_*`` internals are skipped.
    Foreign keys pointing at tables or columns that do not exist are dropped
    with a warning (real benchmark databases contain a few).
    """
    path = Path(db_file)
    conn = connect_readonly(path)
    try:
        return schema_from_connection(conn, db_id or path.stem)
    except sqlite3.DatabaseError as exc:
        raise NotADatabaseError(f"{path}: {exc}") from exc
    finally:
        conn.close()


def render_cell(value: object) -> str:
    if value is None:
        return "None"
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, bytes):
        return value.hex()
    return str(value)


def sample_rows(db_file: str | Path, table: str, k: int = 3) -> RowSample:
    """Return the first ``k`` rows of ``table`` with cells rendered as text."""
    if k < 1:
        raise ValueError("k must be positive")
    conn = connect_readonly(db_file)
    try:
        try:
            names = _user_tables(conn)
        except sqlite3.DatabaseError as exc:
            raise NotADatabaseError(f"{db_file}: {exc}") from exc
        actual = next((n for n in names if n.lower() == table.lower()), None)
        if actual is None:
            raise NoSuchTableError(table)
        cur = conn.execute(f"SELECT * FROM {quote_ident(actual)} LIMIT ?", (k,))
        header = tuple(d[0] for d in cur.description)
        rows = tuple(tuple(render_cell(v) for v in row) for row in cur.fetchall())
        return RowSample(actual, header, rows)
    finally:
        conn.close()


def schema_similarity(a: Schema, b: Schema) -> float:
    """Jaccard similarity of lowercased table and ``table.column`` names."""
    bag_a, bag_b = a.name_bag(), b.name_bag()
    union = bag_a | bag_b
    if not union:
        return 1.0
    return len(bag_a & bag_b) / len(union)


def merge_similar_databases(
    schemas: Sequence[Schema],
    threshold: float = DEFAULT_MERGE_THRESHOLD,
    similarity: Callable[[Schema, Schema], float] = schema_similarity,
) -> list[list[str]]:
    """Single-linkage grouping of schemas whose similarity reaches ``threshold``.

    Each group lists db_ids with the lexicographically smallest first; groups
    are sorted by that representative.
    """
    if not 0 < threshold <= 1:
        raise ValueError("threshold must be in (0, 1]")
    parent = list(range(len(schemas)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(schemas)):
        for j in range(i + 1, len(schemas)):
            if find(i) != find(j) and similarity(schemas[i], schemas[j]) >= threshold:
                parent[find(j)] = find(i)

    groups: dict[int, list[str]] = {}
    for i, s in enumerate(schemas):
        groups.setdefault(find(i), []).append(s.db_id)
    return sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])
