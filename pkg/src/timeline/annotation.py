"""
Standoff annotation ingestion and event-marker rendering.

A corpus directory holds `<id>.txt` (document text, first line is the title),
`<id>.ann` (brat standoff subset) and one `manifest.jsonl` with a JSON object
per document: {id, title, dct, topic, split}.

Annotation lines:
    T<n>\t<Label> <start> <end>\t<surface>      Event (label "Event") or entity
    R<n>\tAFTER Arg1:T<i> Arg2:T<j>             T<i> starts after T<j>
    R<n>\tCOEX Arg1:T<i> Arg2:T<j>              T<i>, T<j> around the same time
    R<n>\tARG0..ARG5 Arg1:T<event> Arg2:T<entity>
"""

from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple
import json
import logging
import re

from .errors import (
    AmbiguousMarkers,
    AnnotationError,
    DanglingReference,
    ManifestError,
    MissingPair,
    OffsetMismatch,
    OverlappingSpans,
    UnknownLabel,
)
from .graph import ARGUMENT_ROLES, Argument, Event, TimelineGraph

logger = logging.getLogger(__name__)

# Documents created on or after this date are "new" (after September 2022)
ERA_BOUNDARY = date(2022, 10, 1)

SPLITS = ("dev", "test")
MARKER_STYLES = ("eid", "star", "structured")
TEMPORAL_LABELS = ("AFTER", "COEX")
EVENT_LABEL = "Event"

TOPICS = (
    "computers",
    "crime and law - accuse",
    "culture and entertainment",
    "disasters and accidents - road crash",
    "disasters and accidents - shipwreck",
    "disasters and accidents - volcanoes",
    "economy and business - financial crisis",
    "economy and business - strikes",
    "environment",
    "government and politics - protests",
    "government and politics - riots",
    "health",
    "infectious disease",
    "internet",
    "mining",
    "politics and conflicts",
    "politics and conflicts - armed conflict",
    "politics and conflicts - drones",
    "politics and conflicts - elections",
    "politics and conflicts - policy change",
    "politics and conflicts - resign",
    "rail transport",
    "space",
    "sports",
    "weather - earthquakes",
    "weather - floods",
    "weather - storms",
)

# Hint shown to the model for each marker style
MARKER_HINTS = {"eid": "[e]", "star": "**", "structured": "[EVENT]"}

_TEXTBOUND = re.compile(r"^(T\d+)\t(\S+) (\d+) (\d+)\t(.*)$")
_RELATION = re.compile(r"^(R\d+)\t(\S+) Arg1:(\S+) Arg2:(\S+)\s*$")
_SENTENCE_BREAK = re.compile(r"(?<=[.!?])[\"')\]]*\s+|\n+")

_STRIP_PATTERNS = {
    "eid": re.compile(r"\[e(\d+)\](.*?)\[/e\1\]", re.DOTALL),
    "star": re.compile(r"\*\*(.*?)\*\*", re.DOTALL),
    "structured": re.compile(r"\[EVENT\](.*?)\[/EVENT\]", re.DOTALL),
}
_ARG_TAG = re.compile(r"\[ARG[0-5]\]")


@dataclass(frozen=True)
class StandoffEntry:
    kind: str  # TextBound | Relation | ArgLink
    id: str
    label: str
    start: int = -1
    end: int = -1
    surface: str = ""
    arg1: str = ""
    arg2: str = ""


@dataclass(frozen=True)
class StandoffParse:
    graph: TimelineGraph
    entries: Tuple[StandoffEntry, ...]
    n_relations: int
    n_arguments: int


@dataclass(frozen=True)
class DocumentRecord:
    doc_id: str
    title: str
    text: str
    dct: date
    topic: str
    split: str
    graph: TimelineGraph
    n_relations: int = 0
    n_arguments: int = 0
    word_count: int = field(default=0)
    sentence_count: int = field(default=0)

    @property
    def era(self) -> str:
        return era_of(self.dct)

    @property
    def events(self) -> Tuple[Event, ...]:
        return self.graph.events

    @property
    def n_events(self) -> int:
        return len(self.graph.events)

    @property
    def title_span(self) -> Tuple[int, int]:
        end = self.text.find("\n")
        return (0, len(self.text) if end < 0 else end)


def era_of(dct: date) -> str:
    return "new" if dct >= ERA_BOUNDARY else "old"


def count_words(text: str) -> int:
    return len(text.split())


def count_sentences(text: str) -> int:
    return sum(1 for chunk in _SENTENCE_BREAK.split(text) if chunk and chunk.strip())


def parse_standoff(annotation_text: str, document_text: str, doc_id: str = "") -> StandoffParse:
    """
    Parse brat standoff lines over the document text.

    Line order does not matter: all entries are collected first and
    references are resolved afterwards.
    """
    if not annotation_text.strip() or not document_text:
        raise AnnotationError(f"{doc_id}: empty annotation or document text")

    textbounds: Dict[str, StandoffEntry] = {}
    relations: List[StandoffEntry] = []
    for lineno, raw in enumerate(annotation_text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        if line.startswith("T"):
            m = _TEXTBOUND.match(line)
            if m is None:
                raise AnnotationError(f"{doc_id}:{lineno}: unsupported text-bound line {line!r}")
            tid, label, start, end, surface = m.groups()
            start, end = int(start), int(end)
            if not 0 <= start < end <= len(document_text):
                raise OffsetMismatch(f"{doc_id}: {tid} offsets {start}-{end} outside the document",
                                     {"doc_id": doc_id, "id": tid})
            if document_text[start:end] != surface:
                raise OffsetMismatch(
                    f"{doc_id}: {tid} surface {surface!r} does not match text {document_text[start:end]!r}",
                    {"doc_id": doc_id, "id": tid, "span": [start, end]},
                )
            textbounds[tid] = StandoffEntry("TextBound", tid, label, start, end, surface)
        elif line.startswith("R"):
            m = _RELATION.match(line)
            if m is None:
                raise AnnotationError(f"{doc_id}:{lineno}: unsupported relation line {line!r}")
            rid, label, arg1, arg2 = m.groups()
            if label in TEMPORAL_LABELS:
                kind = "Relation"
            elif label in ARGUMENT_ROLES:
                kind = "ArgLink"
            else:
                raise UnknownLabel(f"{doc_id}: {rid} has unknown label {label}",
                                   {"doc_id": doc_id, "id": rid, "label": label})
            relations.append(StandoffEntry(kind, rid, label, arg1=arg1, arg2=arg2))
        else:
            logger.debug("%s: skipping unsupported standoff line %r", doc_id, line)

    event_entries = sorted(
        (e for e in textbounds.values() if e.label == EVENT_LABEL),
        key=lambda e: (e.start, e.end, e.id),
    )
    event_ids = {e.id for e in event_entries}

    edges = set()
    coex = set()
    arguments: Dict[str, List[Argument]] = {e.id: [] for e in event_entries}
    n_relations = n_arguments = 0
    for rel in sorted(relations, key=lambda r: r.id):
        for ref in (rel.arg1, rel.arg2):
            if ref not in textbounds:
                raise DanglingReference(f"{doc_id}: {rel.id} cites unknown id {ref}",
                                        {"doc_id": doc_id, "id": rel.id, "ref": ref})
        if rel.kind == "Relation":
            for ref in (rel.arg1, rel.arg2):
                if ref not in event_ids:
                    raise DanglingReference(f"{doc_id}: {rel.id} links non-event {ref}",
                                            {"doc_id": doc_id, "id": rel.id, "ref": ref})
            if rel.label == "AFTER":
                # Arg1 starts after Arg2: stored as Arg2 -> Arg1
                edges.add((rel.arg2, rel.arg1))
            else:
                coex.add(frozenset((rel.arg1, rel.arg2)))
            n_relations += 1
        else:
            event_ref, entity_ref = rel.arg1, rel.arg2
            if event_ref not in event_ids and entity_ref in event_ids:
                event_ref, entity_ref = entity_ref, event_ref
            if event_ref not in event_ids:
                raise DanglingReference(f"{doc_id}: {rel.id} attaches an argument to non-event {event_ref}",
                                        {"doc_id": doc_id, "id": rel.id, "ref": event_ref})
            entity = textbounds[entity_ref]
            arguments[event_ref].append(Argument(rel.label, entity.surface, (entity.start, entity.end)))
            n_arguments += 1

    events = tuple(
        Event(
            id=e.id,
            mention=e.surface,
            span=(e.start, e.end),
            index=i,
            arguments=tuple(sorted(arguments[e.id], key=lambda a: (a.role, a.span))),
        )
        for i, e in enumerate(event_entries, start=1)
    )
    graph = TimelineGraph(events=events, precedence_edges=frozenset(edges), coex_links=frozenset(coex))
    entries = tuple(sorted(textbounds.values(), key=lambda e: e.id)) + tuple(relations)
    return StandoffParse(graph=graph, entries=entries, n_relations=n_relations, n_arguments=n_arguments)


def event_reference(event: Event, number: int, style: str) -> str:
    """The marked form of one event mention"""
    if style == "eid":
        return f"[e{number}]{event.mention}[/e{number}]"
    if style == "star":
        return f"**{event.mention}**"
    if style == "structured":
        args = "".join(f"[{a.role}]{a.text}" for a in event.arguments)
        return f"[EVENT]{event.mention}{args}[/EVENT]"
    raise ValueError(f"unknown marker style {style!r}")


def mark_text(text: str, events: Sequence[Event], style: str,
              numbering: Optional[Dict[str, int]] = None) -> str:
    """Wrap each given event span in markers; everything else is copied as is"""
    if style not in MARKER_STYLES:
        raise ValueError(f"unknown marker style {style!r}")
    if style == "star" and "**" in text:
        raise AmbiguousMarkers('text already contains "**"; use another marker style')
    ordered = sorted(events, key=lambda e: e.span)
    for prev, cur in zip(ordered, ordered[1:]):
        if cur.span[0] < prev.span[1]:
            raise OverlappingSpans(f"events {prev.id} and {cur.id} overlap",
                                   {"events": [prev.id, cur.id]})
    numbering = numbering or {e.id: e.index for e in ordered}

    pieces = []
    cursor = 0
    for event in ordered:
        start, end = event.span
        pieces.append(text[cursor:start])
        pieces.append(event_reference(event, numbering[event.id], style))
        cursor = end
    pieces.append(text[cursor:])
    return "".join(pieces)


def local_numbering(events: Sequence[Event]) -> Dict[str, int]:
    """Number a subset of events 1..k by their textual order"""
    return {e.id: i for i, e in enumerate(sorted(events, key=lambda e: e.span), start=1)}


def render_markers(doc: DocumentRecord, style: str, events: Optional[Sequence[Event]] = None) -> str:
    """
    Marked document text.

    With `events` only that subset is marked and numbered 1..k in textual
    order; otherwise every event is marked with its document index.
    """
    if events is None:
        return mark_text(doc.text, doc.events, style)
    return mark_text(doc.text, events, style, local_numbering(events))


def strip_markers(text: str, style: str) -> str:
    pattern = _STRIP_PATTERNS[style]
    if style == "eid":
        return pattern.sub(lambda m: m.group(2), text)
    if style == "star":
        return pattern.sub(lambda m: m.group(1), text)
    return pattern.sub(lambda m: _ARG_TAG.split(m.group(1), 1)[0], text)


def title_zone_events(doc: DocumentRecord) -> List[Event]:
    _, title_end = doc.title_span
    return [e for e in doc.events if e.span[0] < title_end]


def build_document(doc_id: str, text: str, annotation_text: str, meta: Dict) -> DocumentRecord:
    parsed = parse_standoff(annotation_text, text, doc_id)
    try:
        dct = date.fromisoformat(str(meta["dct"])[:10])
    except (KeyError, ValueError) as e:
        raise ManifestError(f"{doc_id}: bad or missing dct ({e})", {"doc_id": doc_id}) from None
    split = meta.get("split")
    if split not in SPLITS:
        raise ManifestError(f"{doc_id}: split must be one of {SPLITS}, got {split!r}", {"doc_id": doc_id})
    topic = meta.get("topic", "")
    if topic not in TOPICS:
        logger.warning("%s: topic %r is not one of the known topics", doc_id, topic)
    return DocumentRecord(
        doc_id=doc_id,
        title=meta.get("title") or text.split("\n", 1)[0],
        text=text,
        dct=dct,
        topic=topic,
        split=split,
        graph=parsed.graph,
        n_relations=parsed.n_relations,
        n_arguments=parsed.n_arguments,
        word_count=count_words(text),
        sentence_count=count_sentences(text),
    )


def read_manifest(root: Path) -> List[Dict]:
    path = root / "manifest.jsonl"
    if not path.exists():
        raise ManifestError(f"missing manifest {path}")
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as e:
            raise ManifestError(f"{path}:{lineno}: invalid JSON ({e})") from None
        missing = [k for k in ("id", "title", "dct", "topic", "split") if k not in row]
        if missing:
            raise ManifestError(f"{path}:{lineno}: missing fields {missing}")
        rows.append(row)
    return rows


def iter_document_pairs(root) -> Iterator[Tuple[Dict, str, str]]:
    """Yield (manifest row, text, annotation) for every document under root"""
    root = Path(root)
    texts = {p.stem for p in root.glob("*.txt")}
    anns = {p.stem for p in root.glob("*.ann")}
    if not texts and not anns:
        raise MissingPair(f"no text/annotation pairs under {root}")
    unpaired = sorted(texts ^ anns)
    if unpaired:
        raise MissingPair(f"unpaired files under {root}: {unpaired}", {"ids": unpaired})

    rows = read_manifest(root)
    listed = [row["id"] for row in rows]
    if len(set(listed)) != len(listed):
        raise ManifestError("duplicate ids in manifest")
    absent = sorted(set(listed) - texts)
    if absent:
        raise MissingPair(f"manifest lists documents without files: {absent}", {"ids": absent})
    unlisted = sorted(texts - set(listed))
    if unlisted:
        raise ManifestError(f"documents missing from manifest: {unlisted}", {"ids": unlisted})

    for row in rows:
        doc_id = row["id"]
        text = (root / f"{doc_id}.txt").read_text(encoding="utf-8")
        ann = (root / f"{doc_id}.ann").read_text(encoding="utf-8")
        yield row, text, ann


def load_corpus(root) -> List[DocumentRecord]:
    docs = [build_document(row["id"], text, ann, row) for row, text, ann in iter_document_pairs(root)]
    logger.info("Loaded %d documents from %s", len(docs), root)
    return docs


def corpus_statistics(docs: Sequence[DocumentRecord]) -> Dict[str, Dict[str, float]]:
    """Counts and per-document averages for each split and for all documents"""
    groups = {split: [d for d in docs if d.split == split] for split in SPLITS}
    groups["all"] = list(docs)
    stats = {}
    for name, group in groups.items():
        n = len(group)
        row = {"docs": n}
        for key, attr in (("words", "word_count"), ("sentences", "sentence_count"),
                          ("events", "n_events"), ("relations", "n_relations"),
                          ("arguments", "n_arguments")):
            total = sum(getattr(d, attr) for d in group)
            row[key] = total
            row[f"{key}_avg"] = total / n if n else 0.0
        stats[name] = row
    return stats
