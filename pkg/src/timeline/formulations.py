"""
Turn annotated documents into prompt instances.

NLI      one instance per ordered event pair and relation statement: n(n-1)*3
Pairwise one instance per ordered event pair: n(n-1)
MRC      one question per event and relation: 3n
Timeline one instance per document
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import logging
import math
import random

from .annotation import (
    DocumentRecord,
    MARKER_HINTS,
    event_reference,
    local_numbering,
    mark_text,
)
from .errors import BudgetExceeded, CyclicGraph, FormulationError, InsufficientDevDocs, TooFewEvents
from .graph import Event, RelationLabel, layering, relation_table
from .schemas import EventRef, PromptInstance
from .templates import PromptTemplate, fill

logger = logging.getLogger(__name__)

DEFAULT_BUDGET = 4096
# AFTER, BEFORE and COEX statements or questions per pair / anchor
QUERY_RELATIONS = ("AFTER", "BEFORE", "COEX")
DEFAULT_MAX_NEW_TOKENS = {"nli": 16, "pairwise": 16, "mrc": 128, "timeline": 512}
COT_MAX_NEW_TOKENS = 512
DEMO_SEPARATOR = "\n\n"

CODE_INDENT = " " * 8


def approx_tokens(text: str) -> int:
    """Token-count proxy: four characters per token"""
    return math.ceil(len(text) / 4)


@dataclass(frozen=True)
class GenerationSettings:
    representation: str = "eid"
    n_demos: int = 0
    seed: int = 0
    budget: int = DEFAULT_BUDGET
    length_fn: Callable[[str], int] = approx_tokens
    max_new_tokens: Optional[int] = None
    skip_overflow: bool = False


def max_new_tokens_for(template: PromptTemplate, settings: GenerationSettings) -> int:
    if settings.max_new_tokens:
        return settings.max_new_tokens
    if template.flavor == "cot":
        return COT_MAX_NEW_TOKENS
    return DEFAULT_MAX_NEW_TOKENS[template.formulation]


def select_demonstrations(dev_corpus: Sequence, n_demos: int, seed: int, query_id: str = "") -> List[str]:
    """Seeded sample without replacement from the dev documents, never the query itself"""
    if n_demos < 0:
        raise ValueError("n_demos must be non-negative")
    if n_demos == 0:
        return []
    pool = sorted({getattr(d, "doc_id", d) for d in dev_corpus} - {query_id})
    if len(pool) < n_demos:
        raise InsufficientDevDocs(
            f"need {n_demos} demonstration documents, only {len(pool)} available",
            {"n_demos": n_demos, "available": len(pool)},
        )
    rng = random.Random(f"{seed}:{query_id}:{n_demos}")
    return rng.sample(pool, n_demos)


def render_prompt(
    template: PromptTemplate,
    query: Dict[str, str],
    demos: Sequence[Dict[str, str]] = (),
    budget: int = DEFAULT_BUDGET,
    length_fn: Callable[[str], int] = approx_tokens,
) -> str:
    """
    Demonstrations filled completely, then the query up to its first answer slot.

    Raises:
        MissingSlot: a slot in the template has no value
        BudgetExceeded: the prompt is longer than the budget under length_fn
    """
    blocks = [fill(template.text, demo, template.id) for demo in demos]
    blocks.append(fill(template.query_part, query, template.id).rstrip())
    prompt = DEMO_SEPARATOR.join(blocks)
    length = length_fn(prompt)
    if length > budget:
        raise BudgetExceeded(
            f"prompt for template {template.id} is {length} units, budget {budget}",
            {"template": template.id, "length": length, "budget": budget},
        )
    return prompt


def render_answer(template: PromptTemplate, values: Dict[str, str]) -> str:
    """What a model that knows the gold answer writes after the query prompt"""
    return fill(template.answer_part, values, template.id)


def event_lines(events: Sequence[Event], numbering: Dict[str, int], style: str, flavor: str = "plain") -> str:
    ordered = sorted(events, key=lambda e: numbering[e.id])
    if flavor == "code":
        return "\n".join(
            f"{CODE_INDENT}self.event{numbering[e.id]} = events[{numbering[e.id]}] # "
            f"{event_reference(e, numbering[e.id], style)}"
            for e in ordered
        )
    return "\n".join(f"- {event_reference(e, numbering[e.id], style)}" for e in ordered)


def timeline_target(doc: DocumentRecord, layers: Sequence[Sequence[str]], style: str,
                    flavor: str = "plain") -> str:
    lines = []
    for k, layer in enumerate(layers, start=1):
        members = [doc.graph.event(eid) for eid in layer]
        if flavor == "code":
            refs = ", ".join(f"self.event{e.index}" for e in members)
            lines.append(f"{CODE_INDENT}T{k} = [{refs}]")
        else:
            lines.append(f"T{k}:")
            lines.extend(f"- {event_reference(e, e.index, style)}" for e in members)
    return "\n".join(lines)


def generate_cot_rationale(doc: DocumentRecord, style: str = "timeline", representation: str = "eid") -> str:
    """
    One sentence per annotated edge or COEX link, ordered by the textual
    index of the later of its two events, then of the earlier one.

    style "timeline" phrases edges as "Y started after X."; style "mrc" as
    "X happened before Y.".
    """
    graph = doc.graph

    def ref(eid):
        e = graph.event(eid)
        return event_reference(e, e.index, representation)

    items = []
    for x, y in graph.precedence_edges:
        key = tuple(sorted((graph.index_of(x), graph.index_of(y)), reverse=True))
        if style == "mrc":
            sentence = f"{ref(x)} happened before {ref(y)}."
        else:
            sentence = f"{ref(y)} started after {ref(x)}."
        items.append((key, 0, sentence))
    for link in graph.coex_links:
        a, b = sorted(link, key=graph.index_of)
        key = (graph.index_of(b), graph.index_of(a))
        if style == "mrc":
            sentence = f"{ref(a)} does not have a clear temporal relation with {ref(b)}."
        else:
            sentence = f"{ref(a)} started around the same time as {ref(b)}."
        items.append((key, 1, sentence))
    return " ".join(sentence for _, _, sentence in sorted(items))


def _nli_gold(relation: str, label: RelationLabel) -> bool:
    # statement "y started after x" holds when x is before y, and so on
    if relation == "AFTER":
        return label is RelationLabel.BEFORE
    if relation == "BEFORE":
        return label is RelationLabel.AFTER
    return label is RelationLabel.COEX


class InstanceBuilder:
    """
    Builds the instances of one template for any number of query documents.

    Demonstrations are drawn per query document; NLI, Pairwise and MRC
    demonstrations show one seeded query from the demonstration document,
    Timeline demonstrations show the whole document.
    """

    def __init__(self, template: PromptTemplate, dev_docs: Sequence[DocumentRecord] = (),
                 settings: Optional[GenerationSettings] = None):
        self.template = template
        self.settings = settings or GenerationSettings()
        self.dev_docs = {d.doc_id: d for d in dev_docs}
        self.skipped = 0
        self._demo_blocks: Dict[str, Dict[str, str]] = {}

    @property
    def formulation(self) -> str:
        return self.template.formulation

    def build(self, doc: DocumentRecord) -> List[PromptInstance]:
        if self.formulation == "nli":
            return self.nli(doc)
        if self.formulation == "pairwise":
            return self.pairwise(doc)
        if self.formulation == "mrc":
            return self.mrc(doc)
        instance = self.timeline(doc)
        return [instance] if instance is not None else []

    # Per-formulation slot values

    def _nli_values(self, doc: DocumentRecord, x: Event, y: Event, relation: str,
                    table) -> Tuple[Dict[str, str], bool, Dict[str, int]]:
        style = self.settings.representation
        numbering = local_numbering((x, y))
        premise = mark_text(doc.text, (x, y), style, numbering)
        hypothesis = (self.template.hypotheses[relation]
                      .replace("{x}", event_reference(x, numbering[x.id], style))
                      .replace("{y}", event_reference(y, numbering[y.id], style)))
        gold = _nli_gold(relation, table[(x.id, y.id)])
        values = {
            "premise": premise,
            "context": premise,
            "hypothesis": hypothesis,
            "marker": MARKER_HINTS[style],
            "target": self.template.answers["entail" if gold else "not_entail"],
        }
        return values, gold, numbering

    def _pairwise_values(self, doc: DocumentRecord, x: Event, y: Event,
                         table) -> Tuple[Dict[str, str], RelationLabel, Dict[str, int]]:
        style = self.settings.representation
        numbering = local_numbering((x, y))
        label = table[(x.id, y.id)]
        values = {
            "context": mark_text(doc.text, (x, y), style, numbering),
            "arg1": event_reference(x, numbering[x.id], style),
            "arg2": event_reference(y, numbering[y.id], style),
            "choices": self.template.choice_lines(),
            "marker": MARKER_HINTS[style],
            "target": self.template.surface(label.value),
        }
        return values, label, numbering

    def _mrc_values(self, doc: DocumentRecord, anchor: Event, relation: str,
                    table) -> Tuple[Dict[str, str], List[str]]:
        style = self.settings.representation
        numbering = {e.id: e.index for e in doc.events}
        answer = [e for e in doc.events
                  if e.id != anchor.id and table[(e.id, anchor.id)].value == relation]
        question = self.template.questions[relation].replace(
            "{anchor}", event_reference(anchor, anchor.index, style))
        target = ", ".join(event_reference(e, e.index, style) for e in answer) or self.template.empty_answer
        values = {
            "context": mark_text(doc.text, doc.events, style),
            "question": question,
            "events": event_lines(doc.events, numbering, style),
            "marker": MARKER_HINTS[style],
            "cot": generate_cot_rationale(doc, "mrc", style),
            "target": target,
        }
        return values, [e.id for e in answer]

    def _timeline_values(self, doc: DocumentRecord) -> Tuple[Dict[str, str], List[List[str]]]:
        style = self.settings.representation
        flavor = self.template.flavor
        layers = layering(doc.graph)
        numbering = {e.id: e.index for e in doc.events}
        values = {
            "context": mark_text(doc.text, doc.events, style),
            "events": event_lines(doc.events, numbering, style, flavor),
            "marker": MARKER_HINTS[style],
            "cot": generate_cot_rationale(doc, "timeline", style),
            "target": timeline_target(doc, layers, style, flavor),
        }
        return values, layers

    # Demonstrations

    def _eligible(self, doc: DocumentRecord) -> bool:
        if self.formulation in ("nli", "pairwise"):
            return doc.n_events >= 2
        if self.formulation == "mrc":
            return doc.n_events >= 1
        try:
            layering(doc.graph)
        except CyclicGraph:
            return False
        return True

    def _demo_block(self, doc: DocumentRecord) -> Dict[str, str]:
        if doc.doc_id in self._demo_blocks:
            return self._demo_blocks[doc.doc_id]
        rng = random.Random(f"{self.settings.seed}:{doc.doc_id}:{self.formulation}")
        if self.formulation == "timeline":
            values, _ = self._timeline_values(doc)
        else:
            table = relation_table(doc.graph)
            if self.formulation == "mrc":
                anchor = rng.choice(doc.events)
                values, _ = self._mrc_values(doc, anchor, rng.choice(QUERY_RELATIONS), table)
            else:
                x, y = rng.sample(list(doc.events), 2)
                if self.formulation == "nli":
                    values, _, _ = self._nli_values(doc, x, y, rng.choice(QUERY_RELATIONS), table)
                else:
                    values, _, _ = self._pairwise_values(doc, x, y, table)
        self._demo_blocks[doc.doc_id] = values
        return values

    def demonstrations(self, doc: DocumentRecord) -> Tuple[List[str], List[Dict[str, str]]]:
        n = self.settings.n_demos
        if n == 0:
            return [], []
        pool = [d for d in self.dev_docs.values() if self._eligible(d)]
        ids = select_demonstrations(pool, n, self.settings.seed, doc.doc_id)
        return ids, [self._demo_block(self.dev_docs[i]) for i in ids]

    # Instances

    def _emit(self, doc: DocumentRecord, k: int, query: Dict, values: Dict[str, str], gold,
              events: Sequence[EventRef], demos: Tuple[List[str], List[Dict[str, str]]]) -> Optional[PromptInstance]:
        s = self.settings
        demo_ids, demo_blocks = demos
        try:
            prompt = render_prompt(self.template, values, demo_blocks, s.budget, s.length_fn)
        except BudgetExceeded as e:
            if not s.skip_overflow:
                raise
            self.skipped += 1
            logger.warning("Skipping %s instance %d of %s: %s", self.template.id, k, doc.doc_id, e.message)
            return None
        return PromptInstance(
            instance_id=f"{doc.doc_id}:{self.formulation}:{self.template.id}:{s.representation}:{s.n_demos}:{s.seed}:{k}",
            doc_id=doc.doc_id,
            formulation=self.formulation,
            template_id=self.template.id,
            flavor=self.template.flavor,
            representation=s.representation,
            n_demos=s.n_demos,
            demo_ids=demo_ids,
            query=query,
            prompt=prompt,
            gold=gold,
            reference=render_answer(self.template, values),
            seed=s.seed,
            max_new_tokens=max_new_tokens_for(self.template, s),
            events=list(events),
        )

    def _pair_refs(self, x: Event, y: Event, numbering: Dict[str, int]) -> List[EventRef]:
        return sorted((EventRef(index=numbering[e.id], id=e.id, mention=e.mention) for e in (x, y)),
                      key=lambda r: r.index)

    def _doc_refs(self, doc: DocumentRecord) -> List[EventRef]:
        return [EventRef(index=e.index, id=e.id, mention=e.mention) for e in doc.events]

    def nli(self, doc: DocumentRecord) -> List[PromptInstance]:
        self._require("nli")
        if doc.n_events < 2:
            raise TooFewEvents(f"{doc.doc_id}: NLI needs at least two events", {"doc_id": doc.doc_id})
        table = relation_table(doc.graph)
        demos = self.demonstrations(doc)
        instances = []
        k = 0
        for x in doc.events:
            for y in doc.events:
                if x.id == y.id:
                    continue
                for relation in QUERY_RELATIONS:
                    values, gold, numbering = self._nli_values(doc, x, y, relation, table)
                    instance = self._emit(doc, k, {"x": x.id, "y": y.id, "relation": relation},
                                          values, gold, self._pair_refs(x, y, numbering), demos)
                    k += 1
                    if instance is not None:
                        instances.append(instance)
        return instances

    def pairwise(self, doc: DocumentRecord) -> List[PromptInstance]:
        self._require("pairwise")
        if doc.n_events < 2:
            raise TooFewEvents(f"{doc.doc_id}: Pairwise needs at least two events", {"doc_id": doc.doc_id})
        table = relation_table(doc.graph)
        demos = self.demonstrations(doc)
        instances = []
        k = 0
        for x in doc.events:
            for y in doc.events:
                if x.id == y.id:
                    continue
                values, label, numbering = self._pairwise_values(doc, x, y, table)
                instance = self._emit(doc, k, {"x": x.id, "y": y.id}, values, label.value,
                                      self._pair_refs(x, y, numbering), demos)
                k += 1
                if instance is not None:
                    instances.append(instance)
        return instances

    def mrc(self, doc: DocumentRecord) -> List[PromptInstance]:
        self._require("mrc")
        if doc.n_events == 0:
            return []
        table = relation_table(doc.graph)
        demos = self.demonstrations(doc)
        refs = self._doc_refs(doc)
        instances = []
        k = 0
        for anchor in doc.events:
            for relation in QUERY_RELATIONS:
                values, answer = self._mrc_values(doc, anchor, relation, table)
                instance = self._emit(doc, k, {"anchor": anchor.id, "relation": relation},
                                      values, answer, refs, demos)
                k += 1
                if instance is not None:
                    instances.append(instance)
        return instances

    def timeline(self, doc: DocumentRecord) -> Optional[PromptInstance]:
        self._require("timeline")
        values, layers = self._timeline_values(doc)
        demos = self.demonstrations(doc)
        return self._emit(doc, 0, {}, values, layers, self._doc_refs(doc), demos)

    def _require(self, formulation: str):
        if self.formulation != formulation:
            raise FormulationError(
                f"template {self.template.id} is a {self.formulation} template, not {formulation}")


def generate_nli(doc: DocumentRecord, template: PromptTemplate, dev_docs: Sequence[DocumentRecord] = (),
                 settings: Optional[GenerationSettings] = None) -> List[PromptInstance]:
    return InstanceBuilder(template, dev_docs, settings).nli(doc)


def generate_pairwise(doc: DocumentRecord, template: PromptTemplate, dev_docs: Sequence[DocumentRecord] = (),
                      settings: Optional[GenerationSettings] = None) -> List[PromptInstance]:
    return InstanceBuilder(template, dev_docs, settings).pairwise(doc)


def generate_mrc(doc: DocumentRecord, template: PromptTemplate, dev_docs: Sequence[DocumentRecord] = (),
                 settings: Optional[GenerationSettings] = None) -> List[PromptInstance]:
    return InstanceBuilder(template, dev_docs, settings).mrc(doc)


def generate_timeline(doc: DocumentRecord, template: PromptTemplate, dev_docs: Sequence[DocumentRecord] = (),
                      settings: Optional[GenerationSettings] = None) -> PromptInstance:
    instance = InstanceBuilder(template, dev_docs, settings).timeline(doc)
    if instance is None:
        raise BudgetExceeded(f"{doc.doc_id}: timeline prompt exceeds the budget", {"doc_id": doc.doc_id})
    return instance
