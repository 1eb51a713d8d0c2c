import json
import os
import re
import sys

import pytest

# Add parent directory to path for imports
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.timeline.annotation import build_document  # noqa: E402
from src.timeline.templates import TemplateRegistry  # noqa: E402


def standoff(text, mentions, after=(), coex=(), args=(), search_from=None):
    """
    Build .ann content by locating each mention (whole word) in the text.

    mentions: [(tid, surface, label)] in textual order; label defaults to Event
    after:    [(later, earlier)]  -> R AFTER Arg1:later Arg2:earlier
    coex:     [(a, b)]
    args:     [(role, event_tid, entity_tid)]
    """
    cursor = text.find("\n") + 1 if search_from is None else search_from
    lines = []
    for item in mentions:
        tid, surface = item[0], item[1]
        label = item[2] if len(item) > 2 else "Event"
        m = re.compile(rf"(?<!\w){re.escape(surface)}(?!\w)").search(text, cursor)
        assert m is not None, f"{surface!r} not found after offset {cursor}"
        lines.append(f"{tid}\t{label} {m.start()} {m.end()}\t{surface}")
        cursor = m.end()
    n = 1
    for later, earlier in after:
        lines.append(f"R{n}\tAFTER Arg1:{later} Arg2:{earlier}")
        n += 1
    for a, b in coex:
        lines.append(f"R{n}\tCOEX Arg1:{a} Arg2:{b}")
        n += 1
    for role, event, entity in args:
        lines.append(f"R{n}\t{role} Arg1:{event} Arg2:{entity}")
        n += 1
    return "\n".join(lines) + "\n"


MONKEYPOX_TEXT = (
    "Monkeypox death reported in Texas\n"
    "Health officials have identified the first monkeypox death in the state. "
    "The adult patient had been diagnosed with the virus weeks earlier, "
    "and officials are investigating the role of other illnesses."
)
MONKEYPOX = dict(
    id="monkeypox",
    text=MONKEYPOX_TEXT,
    meta={"title": "Monkeypox death reported in Texas", "dct": "2022-08-30",
          "topic": "infectious disease", "split": "dev"},
    mentions=[("T2", "Health officials", "Entity"), ("T1", "identified"), ("T3", "death"),
              ("T4", "diagnosed"), ("T5", "investigating")],
    # diagnosed < death < {identified ~ investigating}
    after=[("T3", "T4"), ("T1", "T3")],
    coex=[("T1", "T5")],
    args=[("ARG0", "T1", "T2")],
)

BOOKSTORE_TEXT = (
    "Bookstore reopens after repairs\n"
    "The bookstore closed in March after a pipe burst. Builders renovated the shop over the summer, "
    "and the owners reopened it in October."
)
BOOKSTORE = dict(
    id="bookstore",
    text=BOOKSTORE_TEXT,
    meta={"title": "Bookstore reopens after repairs", "dct": "2023-01-12",
          "topic": "economy and business - strikes", "split": "dev"},
    mentions=[("T1", "closed"), ("T2", "burst"), ("T3", "renovated"), ("T4", "reopened")],
    after=[("T1", "T2"), ("T3", "T1"), ("T4", "T3")],
)

OUTING_TEXT = (
    "A day in town\n"
    "In the morning I visited my aunt. After lunch I went to the market and bought fresh bread."
)
OUTING = dict(
    id="outing",
    text=OUTING_TEXT,
    meta={"title": "A day in town", "dct": "2023-03-01", "topic": "culture and entertainment", "split": "test"},
    mentions=[("T1", "visited"), ("T2", "went"), ("T3", "bought")],
    after=[("T2", "T1"), ("T3", "T2")],
)

TESTING_TEXT = (
    "Sprinter retires after doping case\n"
    "The sprinter tested positive in May. She retired from competition in June, "
    "and the federation announced a ban on her records."
)
TESTING = dict(
    id="testing",
    text=TESTING_TEXT,
    meta={"title": "Sprinter retires after doping case", "dct": "2022-10-04", "topic": "sports", "split": "test"},
    mentions=[("T1", "tested"), ("T2", "retired"), ("T3", "ban")],
    after=[("T2", "T1"), ("T3", "T1")],
)

STORM_TEXT = (
    "Storm batters the coast\n"
    "Forecasters warned residents on Monday. The storm flooded streets and toppled trees on Tuesday, "
    "and crews restored power on Friday."
)
STORM = dict(
    id="storm",
    text=STORM_TEXT,
    meta={"title": "Storm batters the coast", "dct": "2021-11-20", "topic": "weather - storms", "split": "test"},
    mentions=[("T1", "warned"), ("T2", "flooded"), ("T3", "toppled"), ("T4", "restored")],
    after=[("T2", "T1"), ("T3", "T1"), ("T4", "T2"), ("T4", "T3")],
)

FIXTURE_DOCS = (MONKEYPOX, BOOKSTORE, OUTING, TESTING, STORM)

ORPHAN_TEXT = (
    "Council meeting\n"
    "The council met on Tuesday and voted on the budget. Separately, a bridge collapsed."
)
ORPHAN = dict(
    id="orphan",
    text=ORPHAN_TEXT,
    meta={"title": "Council meeting", "dct": "2022-05-02", "topic": "politics and conflicts", "split": "test"},
    mentions=[("T1", "met"), ("T2", "voted"), ("T3", "collapsed")],
    after=[("T2", "T1")],
)

CYCLIC_TEXT = (
    "Clinic update\n"
    "The clinic opened a ward and hired nurses."
)
CYCLIC = dict(
    id="cyclic",
    text=CYCLIC_TEXT,
    meta={"title": "Clinic update", "dct": "2022-05-02", "topic": "health", "split": "test"},
    mentions=[("T1", "opened"), ("T2", "hired")],
    after=[("T2", "T1"), ("T1", "T2")],
)


def annotation_of(sample):
    return standoff(sample["text"], sample["mentions"], sample.get("after", ()),
                    sample.get("coex", ()), sample.get("args", ()))


def record_of(sample):
    return build_document(sample["id"], sample["text"], annotation_of(sample), sample["meta"])


def write_corpus(root, samples):
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "manifest.jsonl", "w", encoding="utf-8") as f:
        for sample in samples:
            (root / f"{sample['id']}.txt").write_text(sample["text"], encoding="utf-8")
            (root / f"{sample['id']}.ann").write_text(annotation_of(sample), encoding="utf-8")
            f.write(json.dumps({"id": sample["id"], **sample["meta"]}) + "\n")
    return root


@pytest.fixture(scope="session")
def registry():
    return TemplateRegistry.load()


@pytest.fixture
def monkeypox():
    return record_of(MONKEYPOX)


@pytest.fixture
def bookstore():
    return record_of(BOOKSTORE)


@pytest.fixture
def outing():
    return record_of(OUTING)


@pytest.fixture
def testing_doc():
    return record_of(TESTING)


@pytest.fixture
def storm():
    return record_of(STORM)


@pytest.fixture
def fixture_docs():
    return [record_of(sample) for sample in FIXTURE_DOCS]


@pytest.fixture
def corpus_dir(tmp_path):
    return write_corpus(tmp_path / "corpus", FIXTURE_DOCS)


@pytest.fixture
def faulty_corpus_dir(tmp_path):
    return write_corpus(tmp_path / "faulty", (OUTING, ORPHAN, CYCLIC))
