"""
Read model completions back into relations and assemble predicted timelines.

Parsers never raise on model output: anything they cannot read becomes an
abstain record.
"""

from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple
import logging
import random
import re

from .annotation import strip_markers
from .errors import InterpretationError, MixedFormulations
from .graph import RelationLabel, TimelineGraph
from .schemas import PredictionRecord, PromptInstance
from .templates import PromptTemplate

logger = logging.getLogger(__name__)

VOTE_LABELS = (RelationLabel.BEFORE, RelationLabel.AFTER, RelationLabel.COEX)

_EVENT_ID = re.compile(r"\[e(\d+)\]")
_CODE_EVENT = re.compile(r"self\.event(\d+)")
_LAYER = re.compile(r"^\s*T(\d+)\s*[:=]\s*(.*)$")
_BULLET = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+(.*)$")
_ITEM_SPLIT = re.compile(r",|\n|;|\band\b")


def answer_text(completion: str, template: Optional[PromptTemplate]) -> str:
    """Text after the last answer prefix when the template declares one"""
    prefix = template.answer_prefix if template is not None else ""
    if prefix and prefix in completion:
        return completion.rsplit(prefix, 1)[1]
    return completion


def _vocabulary_pattern(words: Iterable[str]) -> Optional[re.Pattern]:
    words = sorted({w for w in words if w}, key=len, reverse=True)
    if not words:
        return None
    alternation = "|".join(re.escape(w) for w in words)
    return re.compile(rf"(?<!\w)({alternation})(?!\w)", re.IGNORECASE)


def parse_nli(completion: str, template: PromptTemplate) -> Optional[bool]:
    """True for entailment, False for not entailment, None to abstain"""
    text = answer_text(completion or "", template)
    affirmative = set(w.lower() for w in template.affirmative) | {template.answers.get("entail", "").lower()}
    negative = set(w.lower() for w in template.negative) | {template.answers.get("not_entail", "").lower()}
    pattern = _vocabulary_pattern(affirmative | negative)
    if pattern is None:
        return None
    m = pattern.search(text)
    if m is None:
        return None
    word = m.group(1).lower()
    return word not in negative


def parse_pairwise(completion: str, template: PromptTemplate,
                   vocabulary: Optional[Dict[str, str]] = None) -> Optional[str]:
    """
    Canonical label of the first vocabulary word in the completion.

    `vocabulary` maps lowercased surface words to labels; it defaults to the
    template's relation words and lets benchmark label sets reuse the parser.
    """
    text = answer_text(completion or "", template)
    vocab = vocabulary if vocabulary is not None else template.canonical_vocabulary()
    pattern = _vocabulary_pattern(vocab)
    if pattern is None:
        return None
    m = pattern.search(text)
    if m is None:
        return None
    return vocab[m.group(1).lower()]


class EventLookup:
    """Resolves the ways a completion can name an event"""

    def __init__(self, events: Sequence):
        self._by_number: Dict[int, str] = {}
        self._by_mention: Dict[str, List[str]] = {}
        for e in sorted(events, key=lambda e: e.index):
            self._by_number[e.index] = e.id
            self._by_mention.setdefault(e.mention.strip().lower(), []).append(e.id)
        self.ids = [self._by_number[k] for k in sorted(self._by_number)]

    def number(self, n: int) -> Optional[str]:
        return self._by_number.get(n)

    def mention(self, text: str) -> Optional[str]:
        item = _clean_item(text)
        matches = self._by_mention.get(item.lower())
        if not matches:
            return None
        if len(matches) > 1:
            logger.warning("Mention %r names %d events; using the first", item, len(matches))
        return matches[0]

    def resolve(self, text: str) -> List[str]:
        """Events named in a fragment: [eN] markers, self.eventN references, else surface mentions"""
        numbers = [int(n) for n in _EVENT_ID.findall(text)] or [int(n) for n in _CODE_EVENT.findall(text)]
        if numbers:
            return [eid for eid in (self.number(n) for n in numbers) if eid is not None]
        for style in ("eid", "structured", "star"):
            text = strip_markers(text, style)
        found = []
        for item in _ITEM_SPLIT.split(text):
            eid = self.mention(item)
            if eid is not None:
                found.append(eid)
        return found


def _clean_item(text: str) -> str:
    for style in ("eid", "structured", "star"):
        text = strip_markers(text, style)
    text = text.strip()
    m = _BULLET.match(text)
    if m:
        text = m.group(1)
    return text.strip().strip("[]\"'`.").strip()


def _lookup(events) -> EventLookup:
    if isinstance(events, EventLookup):
        return events
    return EventLookup(getattr(events, "events", events))


def parse_mrc(completion: str, events, template: Optional[PromptTemplate] = None) -> List[str]:
    """Event ids named in an MRC answer, in order of first mention"""
    lookup = _lookup(events)
    text = answer_text(completion or "", template)
    ids = []
    for eid in lookup.resolve(text):
        if eid not in ids:
            ids.append(eid)
    return ids


@dataclass
class TimelineParse:
    layers: List[List[str]] = field(default_factory=list)
    unplaced: List[str] = field(default_factory=list)


def parse_timeline(completion: str, events, template: Optional[PromptTemplate] = None) -> Optional[TimelineParse]:
    """
    Layers named by `T<k>:` (or `T<k> = [...]`) lines, each followed by
    inline items and/or bullet lines. None when no layer line is found.
    """
    lookup = _lookup(events)
    text = answer_text(completion or "", template)
    layers: Dict[int, List[str]] = {}
    current = None
    for line in text.splitlines():
        m = _LAYER.match(line)
        if m:
            current = int(m.group(1))
            layers.setdefault(current, [])
            if m.group(2).strip():
                layers[current].extend(lookup.resolve(m.group(2)))
            continue
        if current is None:
            continue
        b = _BULLET.match(line)
        if b:
            layers[current].extend(lookup.resolve(b.group(1)))
        elif line.strip():
            current = None

    if not layers:
        return None
    placed = set()
    ordered = []
    for k in sorted(layers):
        layer = []
        for eid in layers[k]:
            if eid not in placed:
                placed.add(eid)
                layer.append(eid)
        if layer:
            ordered.append(layer)
    return TimelineParse(layers=ordered, unplaced=[eid for eid in lookup.ids if eid not in placed])


def interpret(instance: PromptInstance, completion: str, template: PromptTemplate) -> PredictionRecord:
    """Parse one completion into a prediction record"""
    base = dict(instance_id=instance.instance_id, doc_id=instance.doc_id,
                formulation=instance.formulation, raw=completion or "")
    if instance.formulation == "nli":
        payload = parse_nli(completion, template)
    elif instance.formulation == "pairwise":
        payload = parse_pairwise(completion, template)
    elif instance.formulation == "mrc":
        # an empty answer list is a valid answer; an empty completion is not
        text = answer_text(completion or "", template)
        payload = parse_mrc(text, instance.events) if text.strip() else None
    else:
        parsed = parse_timeline(completion, instance.events, template)
        if parsed is None:
            return PredictionRecord(**base, status="abstain")
        return PredictionRecord(**base, status="ok", payload=parsed.layers, unplaced=parsed.unplaced)
    if payload is None:
        return PredictionRecord(**base, status="abstain")
    return PredictionRecord(**base, status="ok", payload=payload)


class PairVoteTable:
    """Votes per unordered event pair; keys hold the lower-index event first"""

    def __init__(self, graph: TimelineGraph):
        self.graph = graph
        self.votes: Dict[Tuple[str, str], Counter] = {}

    def add(self, x: str, y: str, label: RelationLabel):
        if label not in VOTE_LABELS or x == y:
            return
        if not (self.graph.has_event(x) and self.graph.has_event(y)):
            logger.warning("Vote on unknown events %s, %s ignored", x, y)
            return
        if self.graph.index_of(x) > self.graph.index_of(y):
            x, y, label = y, x, label.inverse()
        self.votes.setdefault((x, y), Counter())[label] += 1

    def decide(self, rng: random.Random) -> Dict[Tuple[str, str], RelationLabel]:
        decisions = {}
        for pair in sorted(self.votes, key=lambda p: (self.graph.index_of(p[0]), self.graph.index_of(p[1]))):
            counts = self.votes[pair]
            top = max(counts.values())
            tied = sorted(label.value for label, n in counts.items() if n == top)
            if len(tied) == 1:
                decisions[pair] = RelationLabel(tied[0])
            else:
                decisions[pair] = RelationLabel(rng.choice(tied))
        return decisions


_NLI_VOTES = {"AFTER": RelationLabel.BEFORE, "BEFORE": RelationLabel.AFTER, "COEX": RelationLabel.COEX}


def _votes_for(instance: PromptInstance, record: PredictionRecord, table: PairVoteTable):
    if not record.ok:
        return
    q = instance.query
    if instance.formulation == "nli":
        # "y started after x" entailed means x before y; not entailed says nothing
        if record.payload is True:
            table.add(q["x"], q["y"], _NLI_VOTES[q["relation"]])
    elif instance.formulation == "pairwise":
        label = RelationLabel(record.payload)
        if label is not RelationLabel.NONE:
            table.add(q["x"], q["y"], label)
    elif instance.formulation == "mrc":
        label = RelationLabel(q["relation"])
        for eid in record.payload:
            table.add(eid, q["anchor"], label)
    else:
        layers = record.payload
        for i, layer in enumerate(layers):
            for a_pos, a in enumerate(layer):
                for b in layer[a_pos + 1:]:
                    table.add(a, b, RelationLabel.COEX)
                for later in layers[i + 1:]:
                    for b in later:
                        table.add(a, b, RelationLabel.BEFORE)


def assemble_graph(gold: TimelineGraph, pairs: Sequence[Tuple[PromptInstance, PredictionRecord]],
                   seed: int = 0, doc_id: str = "") -> TimelineGraph:
    """
    Majority vote per event pair over the records of one document and one
    formulation; ties are broken by a seeded draw among the tied labels.
    """
    formulations = {inst.formulation for inst, _ in pairs}
    if len(formulations) > 1:
        raise MixedFormulations(f"records mix formulations {sorted(formulations)}",
                                {"formulations": sorted(formulations)})
    docs = {inst.doc_id for inst, _ in pairs}
    if len(docs) > 1:
        raise InterpretationError(f"records span documents {sorted(docs)}")
    for inst, rec in pairs:
        if inst.instance_id != rec.instance_id:
            raise InterpretationError(f"record {rec.instance_id} paired with instance {inst.instance_id}")

    table = PairVoteTable(gold)
    for inst, rec in pairs:
        _votes_for(inst, rec, table)

    doc_key = doc_id or (next(iter(docs)) if docs else "")
    rng = random.Random(f"{seed}:{doc_key}")
    edges = set()
    coex = set()
    for (a, b), label in table.decide(rng).items():
        if label is RelationLabel.BEFORE:
            edges.add((a, b))
        elif label is RelationLabel.AFTER:
            edges.add((b, a))
        else:
            coex.add(frozenset((a, b)))
    return gold.with_relations(edges, coex)
