import sqlite3

import pytest
from hypothesis import given
from hypothesis import strategies as st

from sense_forge.errors import NoSuchTableError, NotADatabaseError
from sense_forge.schema import (
    Column,
    ForeignKey,
    Schema,
    Table,
    affinity,
    database_path,
    introspect_schema,
    merge_similar_databases,
    sample_rows,
    schema_similarity,
)


def test_introspects_list_table(school_db):
    schema = introspect_schema(school_db)
    assert schema.db_id == "school"
    assert schema.table_names == ["list"]
    table = schema.tables[0]
    assert table.columns == (
        Column("LastName", "TEXT"), Column("FirstName", "TEXT"),
        Column("Grade", "INTEGER"), Column("Classroom", "INTEGER"),
    )
    assert table.primary_key == ("LastName", "FirstName")
    assert table.foreign_keys == ()


def test_empty_database_has_no_tables(tmp_path):
    path = tmp_path / "empty.sqlite"
    sqlite3.connect(path).close()
    assert introspect_schema(path).tables == ()


def test_foreign_keys_follow_the_ddl(concert_db):
    schema = introspect_schema(concert_db)
    assert schema.table_names == ["venue", "concert"]
    assert schema.table("concert").foreign_keys == (ForeignKey("venue_id", "venue", "venue_id"),)
    assert schema.table("venue").primary_key == ("venue_id",)
    assert schema.table("concert").column("ticket_price").type == "REAL"


def test_missing_and_corrupt_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        introspect_schema(tmp_path / "nope.sqlite")
    junk = tmp_path / "junk.sqlite"
    junk.write_bytes(b"definitely not sqlite" * 100)
    with pytest.raises(NotADatabaseError):
        introspect_schema(junk)


def test_dangling_foreign_key_is_dropped(tmp_path):
    path = tmp_path / "d.sqlite"
    conn = sqlite3.connect(path)
    conn.execute("CREATE TABLE a (id INTEGER PRIMARY KEY, ghost_id INTEGER REFERENCES ghost(id))")
    conn.close()
    assert introspect_schema(path).table("a").foreign_keys == ()


def test_fk_without_column_resolves_to_primary_key(tmp_path):
    path = tmp_path / "d.sqlite"
    conn = sqlite3.connect(path)
    conn.executescript("CREATE TABLE p (pid INTEGER PRIMARY KEY); CREATE TABLE c (x INTEGER REFERENCES p);")
    conn.close()
    assert introspect_schema(path).table("c").foreign_keys == (ForeignKey("x", "p", "pid"),)


@pytest.mark.parametrize("declared, expected", [
    ("INTEGER", "INTEGER"), ("BIGINT", "INTEGER"), ("VARCHAR(20)", "TEXT"), ("CLOB", "TEXT"),
    ("BLOB", "BLOB"), ("", "BLOB"), (None, "BLOB"), ("DOUBLE PRECISION", "REAL"), ("FLOAT", "REAL"),
    ("DECIMAL(10,5)", "NUMERIC"), ("BOOLEAN", "NUMERIC"), ("FOO", "NUMERIC"), ("POINT", "INTEGER"),
])
def test_affinity_rules(declared, expected):
    assert affinity(declared) == expected


def test_sample_rows_matches_figure(school_db):
    sample = sample_rows(school_db, "list", 3)
    assert sample.header == ("LastName", "FirstName", "Grade", "Classroom")
    assert sample.rows == (
        ("CAR", "MAUDE", "2", "101"),
        ("KRISTENSEN", "STORMY", "6", "112"),
        ("VANDERWOUDE", "SHERWOOD", "3", "107"),
    )


def test_sample_rows_short_and_empty_tables(tmp_path):
    path = tmp_path / "s.sqlite"
    conn = sqlite3.connect(path)
    conn.executescript(
        "CREATE TABLE two (a INTEGER, b REAL, c TEXT, d BLOB);"
        "INSERT INTO two VALUES (1, 2.5, NULL, x'00ff');"
        "INSERT INTO two VALUES (NULL, 0.1, 'hi', NULL);"
        "CREATE TABLE none_here (z TEXT);"
    )
    conn.commit()
    conn.close()
    two = sample_rows(path, "TWO", 3)
    assert two.table_name == "two"
    assert two.rows == (("1", "2.5", "None", "00ff"), ("None", "0.1", "hi", "None"))
    empty = sample_rows(path, "none_here", 3)
    assert empty.header == ("z",) and empty.rows == ()
    with pytest.raises(NoSuchTableError):
        sample_rows(path, "missing", 3)


def test_table_invariants():
    with pytest.raises(ValueError):
        Table("t", (Column("a"), Column("A")))
    with pytest.raises(ValueError):
        Table("t", (Column("a"),), primary_key=("b",))
    with pytest.raises(ValueError):
        Column("a", "VARCHAR")
    with pytest.raises(ValueError):
        Schema("s", (Table("t", (Column("a"),)), Table("T", (Column("b"),))))
    with pytest.raises(ValueError):
        Schema("s", (Table("t", (Column("a"),), foreign_keys=(ForeignKey("a", "u", "id"),)),))


def _schema(db_id, layout):
    return Schema(db_id, tuple(Table(t, tuple(Column(c) for c in cols)) for t, cols in layout.items()))


def test_similarity_examples():
    a = _schema("a", {"t1": ["x", "y"]})
    b = _schema("b", {"t1": ["x", "z"]})
    assert schema_similarity(a, a) == 1.0
    assert schema_similarity(a, _schema("c", {"other": ["q"]})) == 0.0
    # {t1, t1.x} / {t1, t1.x, t1.y, t1.z}
    assert schema_similarity(a, b) == 2 / 4


def test_similarity_is_case_insensitive():
    assert schema_similarity(_schema("a", {"T1": ["X"]}), _schema("b", {"t1": ["x"]})) == 1.0


def test_merge_examples():
    distinct = [_schema(n, {n: ["c"]}) for n in ("b", "a", "c")]
    assert merge_similar_databases(distinct, 1.0) == [["a"], ["b"], ["c"]]
    same = [_schema("y", {"t": ["c"]}), _schema("x", {"t": ["c"]})]
    assert merge_similar_databases(same, 0.8) == [["x", "y"]]


def test_merge_chains_through_intermediate():
    table = {("a", "b"): 0.9, ("b", "c"): 0.9, ("a", "c"): 0.2}
    schemas = [Schema(n) for n in "abc"]

    def sim(x, y):
        return table[tuple(sorted((x.db_id, y.db_id)))]

    groups = merge_similar_databases(schemas, 0.8, sim)
    # brute-force connected components over edges with sim >= 0.8
    edges = {frozenset(k) for k, v in table.items() if v >= 0.8}
    assert edges == {frozenset("ab"), frozenset("bc")}
    assert groups == [["a", "b", "c"]]


names = st.text(alphabet="abcdefgh", min_size=1, max_size=3)
schemas = st.dictionaries(names, st.lists(names, min_size=1, max_size=4, unique=True), max_size=4).map(
    lambda layout: _schema("s", layout)
)


@given(schemas, schemas)
def test_similarity_symmetric_and_bounded(a, b):
    s = schema_similarity(a, b)
    assert s == schema_similarity(b, a)
    assert 0.0 <= s <= 1.0


@given(schemas)
def test_self_similarity_is_one(a):
    assert schema_similarity(a, a) == 1.0


@given(st.lists(schemas, max_size=6), st.floats(min_value=0.05, max_value=1.0))
def test_merge_partitions_input(items, threshold):
    named = [Schema(f"db{i}", s.tables) for i, s in enumerate(items)]
    groups = merge_similar_databases(named, threshold)
    flat = [d for g in groups for d in g]
    assert sorted(flat) == sorted(s.db_id for s in named)
    assert all(g[0] == min(g) for g in groups)
    assert [g[0] for g in groups] == sorted(g[0] for g in groups)


def test_ddl_round_trip(tmp_path, db_root):
    for db_id in ("school", "concert_hall"):
        original = introspect_schema(database_path(db_root, db_id))
        copy = tmp_path / f"{db_id}.sqlite"
        conn = sqlite3.connect(copy)
        conn.executescript(original.to_ddl())
        conn.close()
        again = introspect_schema(copy, db_id)
        assert again == original
