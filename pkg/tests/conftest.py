import json
import sqlite3
import sys
from pathlib import Path

import pytest

TESTS = Path(__file__).parent
FIXTURES = TESTS / "fixtures"
GOLDEN = TESTS / "golden"
DB_IDS = ("school", "concert_hall")

sys.path.insert(0, str(TESTS))


def build_database(path: Path, script: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    conn = sqlite3.connect(path)
    conn.executescript(script.read_text())
    conn.close()
    return path


def build_db_root(root: Path) -> Path:
    for db_id in DB_IDS:
        build_database(root / db_id / f"{db_id}.sqlite", FIXTURES / "databases" / f"{db_id}.sql")
    return root


def load_jsonl(path: Path) -> list[dict]:
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


@pytest.fixture(scope="session")
def db_root(tmp_path_factory) -> Path:
    """Fixture databases, built once; tests must treat them as read-only."""
    return build_db_root(tmp_path_factory.mktemp("db_root"))


@pytest.fixture
def fresh_db_root(tmp_path) -> Path:
    """A private copy for tests that check the files are left untouched."""
    return build_db_root(tmp_path / "db_root")


@pytest.fixture(scope="session")
def school_db(db_root) -> Path:
    return db_root / "school" / "school.sqlite"


@pytest.fixture(scope="session")
def concert_db(db_root) -> Path:
    return db_root / "concert_hall" / "concert_hall.sqlite"
