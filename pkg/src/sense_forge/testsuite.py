"""Schema-preserving database augmentation for test-suite accuracy.

Each variant copies the original catalog verbatim and re-inserts the rows with
seeded perturbations: non-key cells are replaced with probability 0.5 by a
type-consistent value, foreign-key cells are drawn from the referenced
column's surviving values, and key columns are never rewritten. An optional
row-resampling mode drops or duplicates rows (keys kept unique) so that
count-style queries are stressed too.
"""

from __future__ import annotations

import logging
import os
import random
import sqlite3
import string
import tempfile
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .executor import row_sort_key
from .schema import Schema, Table, connect_readonly, quote_ident, schema_from_connection

log = logging.getLogger(__name__)

DEFAULT_N_VARIANTS = 8
REPLACE_PROB = 0.5
DROP_PROB = 0.2
DUPLICATE_PROB = 0.2
INT_RANGE = (-100, 100)
RANDOM_TEXT_LEN = 8


@dataclass(frozen=True)
class TestSuite:
    db_id: str
    variants: tuple[Path, ...]

    __test__ = False  # not a pytest class

    def __post_init__(self) -> None:
        object.__setattr__(self, "variants", tuple(Path(p) for p in self.variants))
        if not self.variants:
            raise ValueError("a test suite needs at least the original database")

    @property
    def original(self) -> Path:
        return self.variants[0]


@dataclass
class _TableData:
    table: Table
    rows: list[list[Any]]
    keys: set[str]          # lowercased column names never rewritten


def _catalog(conn: sqlite3.Connection) -> list[tuple[str, str, str]]:
    return conn.execute(
        "SELECT type, name, sql FROM sqlite_master "
        "WHERE sql IS NOT NULL AND name NOT LIKE 'sqlite\\_%' ESCAPE '\\' ORDER BY rowid"
    ).fetchall()


def _unique_columns(conn: sqlite3.Connection, table: str) -> set[str]:
    cols: set[str] = set()
    for idx in conn.execute(f"PRAGMA index_list({quote_ident(table)})").fetchall():
        if idx[2]:
            for info in conn.execute(f"PRAGMA index_info({quote_ident(idx[1])})").fetchall():
                if info[2] is not None:
                    cols.add(info[2].lower())
    return cols


def _dependency_order(schema: Schema) -> list[Table]:
    """Referenced tables before referencing ones; catalog order breaks ties and cycles."""
    remaining = list(schema.tables)
    done: set[str] = set()
    ordered: list[Table] = []
    while remaining:
        for t in remaining:
            deps = {fk.ref_table.lower() for fk in t.foreign_keys} - {t.name.lower()}
            if deps <= done:
                break
        else:
            t = remaining[0]
        remaining.remove(t)
        done.add(t.name.lower())
        ordered.append(t)
    return ordered


def _sorted_pool(values: Any) -> list[Any]:
    return sorted(set(values), key=lambda v: row_sort_key((v,)))


class _Perturber:
    def __init__(self, rng: random.Random, resample_rows: bool, original: dict[str, _TableData]) -> None:
        self.rng = rng
        self.original = original
        self.resample_rows = resample_rows
        self.final: dict[tuple[str, str], list[Any]] = {}

    def random_text(self) -> str:
        return "".join(self.rng.choice(string.ascii_lowercase) for _ in range(RANDOM_TEXT_LEN))

    def fresh_value(self, col_type: str, existing: list[Any]) -> Any:
        rng = self.rng
        ints = [v for v in existing if isinstance(v, int)]
        nums = [v for v in existing if isinstance(v, (int, float))]
        if col_type == "NUMERIC":
            col_type = "INTEGER" if nums and len(ints) == len(nums) else ("REAL" if nums else "TEXT")
        if col_type == "INTEGER":
            pool = _sorted_pool(list(range(INT_RANGE[0], INT_RANGE[1] + 1)) + ints)
            return rng.choice(pool)
        if col_type == "REAL":
            if nums:
                lo, hi = float(min(nums)), float(max(nums))
            else:
                lo, hi = float(INT_RANGE[0]), float(INT_RANGE[1])
            span = hi - lo or max(abs(lo), 1.0)
            return rng.uniform(lo - 0.25 * span, hi + 0.25 * span)
        if col_type == "TEXT":
            texts = _sorted_pool(v for v in existing if isinstance(v, str))
            if texts and rng.random() < 0.5:
                return rng.choice(texts)
            return self.random_text()
        pool = _sorted_pool(v for v in existing if v is not None)
        return rng.choice(pool) if pool else None

    def _resample(self, data: _TableData) -> list[list[Any]]:
        table = data.table
        pk_cols = [c.lower() for c in table.primary_key]
        int_pk = (
            len(pk_cols) == 1
            and table.column(pk_cols[0]) is not None
            and table.column(pk_cols[0]).type == "INTEGER"
            and data.keys == {pk_cols[0]}
        )
        can_duplicate = not data.keys or int_pk
        names = [c.name.lower() for c in table.columns]
        pk_index = names.index(pk_cols[0]) if int_pk else -1
        next_id = max((r[pk_index] for r in data.rows if isinstance(r[pk_index], int)), default=0) + 1
        out: list[list[Any]] = []
        for row in data.rows:
            roll = self.rng.random()
            if roll < DROP_PROB:
                continue
            out.append(list(row))
            if roll < DROP_PROB + DUPLICATE_PROB and can_duplicate:
                dup = list(row)
                if int_pk:
                    dup[pk_index] = next_id
                    next_id += 1
                out.append(dup)
        return out

    def perturb(self, data: _TableData) -> list[list[Any]]:
        table = data.table
        names = [c.name.lower() for c in table.columns]
        rows = self._resample(data) if self.resample_rows else [list(r) for r in data.rows]
        columns_existing = {n: [r[i] for r in data.rows] for i, n in enumerate(names)}
        fk_pools: dict[str, list[Any]] = {}
        for fk in table.foreign_keys:
            ref = self.final.get((fk.ref_table.lower(), fk.ref_column.lower()))
            if ref is None:
                # cycle or self reference: the referenced table is not final yet
                src = self.original[fk.ref_table.lower()]
                idx = [c.name.lower() for c in src.table.columns].index(fk.ref_column.lower())
                ref = [r[idx] for r in src.rows]
            fk_pools[fk.column.lower()] = _sorted_pool(v for v in ref if v is not None)
        fk_sets = {k: set(v) for k, v in fk_pools.items()}

        out: list[list[Any]] = []
        for row in rows:
            broken = False
            for i, name in enumerate(names):
                value = row[i]
                pool = fk_pools.get(name)
                if name in data.keys:
                    # only rows dropped by resampling can orphan a key that is also a foreign key
                    if self.resample_rows and pool is not None and value is not None and value not in fk_sets[name]:
                        broken = True
                    continue
                if pool is not None:
                    dangling = value is not None and value not in fk_sets[name]
                    if dangling or self.rng.random() < REPLACE_PROB:
                        row[i] = self.rng.choice(pool) if pool else None
                elif self.rng.random() < REPLACE_PROB:
                    col = table.columns[i]
                    row[i] = self.fresh_value(col.type, columns_existing[name])
            if not broken:
                out.append(row)
        for i, name in enumerate(names):
            self.final[(table.name.lower(), name)] = [r[i] for r in out]
        return out


def _load(conn: sqlite3.Connection, schema: Schema) -> dict[str, _TableData]:
    referenced: dict[str, set[str]] = {}
    for t in schema.tables:
        for fk in t.foreign_keys:
            referenced.setdefault(fk.ref_table.lower(), set()).add(fk.ref_column.lower())
    data: dict[str, _TableData] = {}
    for t in schema.tables:
        rows = [list(r) for r in conn.execute(f"SELECT * FROM {quote_ident(t.name)}").fetchall()]
        keys = {c.lower() for c in t.primary_key} | _unique_columns(conn, t.name)
        keys |= referenced.get(t.name.lower(), set())
        data[t.name.lower()] = _TableData(t, rows, keys)
    return data


def _write_variant(path: Path, catalog: Sequence[tuple[str, str, str]], schema: Schema,
                   rows: dict[str, list[list[Any]]]) -> None:
    tmp = path.with_name(path.name + ".partial")
    if tmp.exists():
        tmp.unlink()
    conn = sqlite3.connect(tmp)
    try:
        conn.execute("PRAGMA foreign_keys = OFF")
        for kind, _name, sql in catalog:
            if kind == "table":
                conn.execute(sql)
        for t in schema.tables:
            placeholders = ", ".join("?" * len(t.columns))
            insert = f"INSERT INTO {quote_ident(t.name)} VALUES ({placeholders})"
            for row in rows[t.name.lower()]:
                try:
                    conn.execute(insert, row)
                except sqlite3.IntegrityError as exc:
                    log.debug("%s: skipped perturbed row (%s)", t.name, exc)
        for kind, _name, sql in catalog:
            if kind != "table":
                conn.execute(sql)
        conn.commit()
    finally:
        conn.close()
    os.replace(tmp, path)


def generate_test_suite(
    db_file: str | Path,
    n_variants: int = DEFAULT_N_VARIANTS,
    seed: int = 0,
    out_dir: str | Path | None = None,
    *,
    resample_rows: bool = False,
    db_id: str | None = None,
) -> TestSuite:
    """Build ``n_variants`` perturbed copies of ``db_file``.

    ``variants[0]`` is always the untouched original. Output is a pure function
    of (file contents, n_variants, seed, resample_rows).
    """
    if n_variants < 0:
        raise ValueError("n_variants must be non-negative")
    db_file = Path(db_file)
    db_id = db_id or db_file.stem
    if n_variants == 0:
        return TestSuite(db_id, (db_file,))
    out = Path(out_dir) if out_dir is not None else Path(tempfile.mkdtemp(prefix="sense-forge-suite-"))
    out.mkdir(parents=True, exist_ok=True)

    conn = connect_readonly(db_file)
    try:
        catalog = _catalog(conn)
        schema = schema_from_connection(conn, db_id)
        original = _load(conn, schema)
    finally:
        conn.close()
    order = _dependency_order(schema)

    tag = "r" if resample_rows else "c"
    variants: list[Path] = [db_file]
    for i in range(1, n_variants + 1):
        rng = random.Random(f"{seed}:{db_id}:{i}:{tag}")
        perturber = _Perturber(rng, resample_rows, original)
        rows = {t.name.lower(): perturber.perturb(original[t.name.lower()]) for t in order}
        path = out / f"{db_id}.s{seed}{tag}.v{i:02d}.sqlite"
        _write_variant(path, catalog, schema, rows)
        variants.append(path)
    return TestSuite(db_id, tuple(variants))
