"""Canonical RTSL corpus shared by the test suites.

Each fixture is an ``.rtsl`` file plus a manifest entry describing where it
came from and what outcome is expected of it (clean parse, a specific parse
error, clean compilation, or specific diagnostics).  Listing transcriptions
are verbatim except for the errata called out in their descriptions; the
``*-raw`` variants keep the original typos so the parser's error reporting is
exercised against them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

__all__ = ["Fixture", "UnknownFixture", "load_fixture", "fixture_ids"]


class UnknownFixture(KeyError):
    pass


@dataclass(frozen=True)
class Fixture:
    id: str
    description: str
    text: str
    expected: dict


def _data_root():
    return resources.files(__package__) / "data"


def _manifest() -> dict:
    with (_data_root() / "manifest.json").open(encoding="utf-8") as fh:
        return json.load(fh)


def fixture_ids() -> list[str]:
    return sorted(_manifest())


def load_fixture(fixture_id: str) -> Fixture:
    entry = _manifest().get(fixture_id)
    if entry is None:
        raise UnknownFixture(fixture_id)
    text = (_data_root() / entry["file"]).read_text(encoding="utf-8")
    return Fixture(
        id=fixture_id,
        description=entry["description"],
        text=text,
        expected=entry.get("expected", {"kind": "parse"}),
    )
