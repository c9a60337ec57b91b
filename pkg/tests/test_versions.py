"""Golden files and the version identifiers embedded in reports move together.

VERSIONS.json records, per identifier, the hashes of the golden files that
pin its behaviour. Editing a golden file without bumping the identifier (or
the reverse) fails here; update VERSIONS.json in the same change.
"""

import hashlib
import json

import pytest
from conftest import FIXTURES, GOLDEN

from sense_forge import version_info, versions

RECORD = json.loads((GOLDEN / "VERSIONS.json").read_text())


def locate(name):
    return GOLDEN / name if (GOLDEN / name).exists() else FIXTURES / name


@pytest.mark.parametrize("key", sorted(RECORD))
def test_golden_hashes_match_recorded_version(key):
    entry = RECORD[key]
    current = {name: hashlib.sha256(locate(name).read_bytes()).hexdigest() for name in entry["golden"]}
    changed = sorted(n for n in current if current[n] != entry["golden"][n])
    same_version = versions()[key] == entry["version"]
    assert not (changed and same_version), f"{changed} changed but {key} is still {entry['version']}"
    assert same_version, f"{key} is now {versions()[key]}; refresh VERSIONS.json and review the golden files"


def test_version_info_mentions_every_identifier():
    info = version_info()
    assert all(v in info for k, v in versions().items() if k != "sense_forge")
