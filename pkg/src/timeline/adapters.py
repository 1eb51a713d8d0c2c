"""
Loaders for the external temporal-ordering benchmarks.

Upstream layouts accepted:

MATRES
    <root>/aquaint.txt, timebank.txt, platinum.txt
        tab-separated: doc_id, verb1, verb2, eiid1, eiid2, relation
    <root>/timeml/<doc_id>.tml   TimeML source documents
    aquaint + timebank form the training split (a seeded 20% of their
    documents becomes dev); platinum is test.

TDDiscourse (manual part only)
    <root>/TDDManTrain.tsv, TDDManDev.tsv, TDDManTest.tsv
        tab-separated: doc_id, eid1, eid2, label in {b, a, s, i, ii}
    <root>/timeml/<doc_id>.tml
    TDDAuto files are ignored.

TemporalNLI (recast TempEval3)
    <root>/*.json (list) or *.jsonl rows {context, hypothesis, label, split}

TORQUE
    <root>/train.json, <root>/dev.json: documents with "passages", each
    passage {passage, question_answer_pairs: [{question, answer: {spans},
    individual_answers: [{spans}]}]}
    train is split 80/20 into train/dev by seeded document sampling; the
    original dev file is the reporting (test) split.

Every loader returns BenchmarkInstance records, which is also the JSON-lines
interchange schema: {dataset, id, doc_id, context, query, gold, split}.
"""

from bisect import bisect_right
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple
import json
import logging
import random
import re
import xml.etree.ElementTree as ET

from .annotation import MARKER_HINTS
from .errors import FormatError, MissingSource
from .formulations import (
    GenerationSettings,
    max_new_tokens_for,
    render_answer,
    render_prompt,
    select_demonstrations,
)
from .interpretation import answer_text, parse_nli, parse_pairwise
from .metrics import accuracy, exact_match_best, micro_f1
from .schemas import BENCHMARK_SPLITS, BenchmarkInstance, PredictionRecord, PromptInstance
from .templates import PromptTemplate

logger = logging.getLogger(__name__)

DEV_FRACTION = 0.2

MATRES_LABELS = ("BEFORE", "AFTER", "EQUAL", "VAGUE")
TDD_LABELS = ("BEFORE", "AFTER", "SIMULTANEOUS", "INCLUDE", "INCLUDED")
TDD_CODES = {"b": "BEFORE", "a": "AFTER", "s": "SIMULTANEOUS", "i": "INCLUDE", "ii": "INCLUDED"}

LABEL_DESCRIPTIONS = {
    "BEFORE": "The first event happened before the second event.",
    "AFTER": "The first event happened after the second event.",
    "EQUAL": "The two events happened at the same time.",
    "VAGUE": "The temporal relationship between the two events is unclear.",
    "SIMULTANEOUS": "The two events happened at the same time.",
    "INCLUDE": "The first event includes the second event.",
    "INCLUDED": "The first event is included in the second event.",
}

# Formulation each benchmark is evaluated with, and its metric
FORMULATION_OF = {
    "temporal_nli": "nli",
    "matres": "pairwise",
    "tddiscourse": "pairwise",
    "torque": "mrc",
}
METRIC_OF = {
    "temporal_nli": "accuracy",
    "matres": "micro_f1",
    "tddiscourse": "micro_f1",
    "torque": "exact_match_best",
}
LABELS_OF = {"matres": MATRES_LABELS, "tddiscourse": TDD_LABELS}

_NLI_POSITIVE = {"entailment", "entailed", "entails", "true", "1", "yes"}
_NLI_NEGATIVE = {"not entailment", "not-entailment", "not_entailment", "not-entailed",
                 "not entailed", "non-entailment", "false", "0", "no"}

_SENTENCE_BOUNDARY = re.compile(r"[.!?][\"')\]]*\s+|\n\s*\n")
_ANSWER_SPLIT = re.compile(r",|\n|;")


def carve_dev(doc_ids: Iterable[str], seed: int, fraction: float = DEV_FRACTION, salt: str = "") -> set:
    """Seeded document-level sample that moves to the dev split"""
    ids = sorted(set(doc_ids))
    k = round(len(ids) * fraction)
    rng = random.Random(f"{seed}:{salt}:dev")
    return set(rng.sample(ids, k))


# TimeML sources

class TimemlDocument:
    """Plain text of a TimeML file with character spans of its EVENT tags"""

    def __init__(self, path: Path):
        try:
            root = ET.parse(path).getroot()
        except ET.ParseError as e:
            raise FormatError(f"{path}: invalid TimeML ({e})") from None
        text_el = root.find(".//TEXT")
        if text_el is None:
            raise FormatError(f"{path}: no TEXT element")
        self.pieces: List[str] = []
        self.events: Dict[str, Tuple[int, int]] = {}
        self._pos = 0
        self._visit(text_el)
        self.text = "".join(self.pieces)
        self.instances = {mi.get("eiid"): mi.get("eventID") for mi in root.iter("MAKEINSTANCE")}
        self.boundaries = [0] + [m.end() for m in _SENTENCE_BOUNDARY.finditer(self.text)] + [len(self.text)]

    def _visit(self, el):
        if el.text:
            self.pieces.append(el.text)
            self._pos += len(el.text)
        for child in el:
            start = self._pos
            self._visit(child)
            if child.tag == "EVENT" and child.get("eid"):
                self.events[child.get("eid")] = (start, self._pos)
            if child.tail:
                self.pieces.append(child.tail)
                self._pos += len(child.tail)

    def resolve(self, ref: str) -> Optional[str]:
        """Event id for an eid ("e12"), an eiid ("ei40") or a bare instance number"""
        ref = str(ref)
        if ref in self.events:
            return ref
        if ref in self.instances:
            return self.instances[ref]
        if ref.isdigit():
            for candidate in (self.instances.get(f"ei{ref}"), f"e{ref}"):
                if candidate in self.events:
                    return candidate
        return None

    def window(self, eid1: str, eid2: str) -> Tuple[str, Dict, Dict]:
        """The sentences from the first to the last of the two events, with spans relative to it"""
        spans = [self.events[eid1], self.events[eid2]]
        first = bisect_right(self.boundaries, min(s[0] for s in spans)) - 1
        last = bisect_right(self.boundaries, max(s[0] for s in spans)) - 1
        start, end = self.boundaries[first], self.boundaries[min(last + 1, len(self.boundaries) - 1)]
        raw = self.text[start:end]
        lead = len(raw) - len(raw.lstrip())
        context = raw.strip()
        offset = start + lead

        def arg(span):
            s, e = span[0] - offset, span[1] - offset
            return {"mention": context[s:e], "span": [s, e]}
        return context, arg(spans[0]), arg(spans[1])


def _timeml(root: Path, doc_id: str, cache: Dict[str, TimemlDocument]) -> TimemlDocument:
    if doc_id not in cache:
        path = root / "timeml" / f"{doc_id}.tml"
        if not path.exists():
            raise MissingSource(f"source document {doc_id} not found under {root / 'timeml'}",
                                {"doc_id": doc_id})
        cache[doc_id] = TimemlDocument(path)
    return cache[doc_id]


def _pair_instance(dataset: str, root: Path, cache, doc_id: str, ref1: str, ref2: str,
                   label: str, split: str, n: int) -> BenchmarkInstance:
    doc = _timeml(root, doc_id, cache)
    eid1, eid2 = doc.resolve(ref1), doc.resolve(ref2)
    if eid1 is None or eid2 is None:
        raise FormatError(f"{dataset}: {doc_id} has no event {ref1 if eid1 is None else ref2}",
                          {"doc_id": doc_id})
    context, arg1, arg2 = doc.window(eid1, eid2)
    return BenchmarkInstance(
        dataset=dataset,
        id=f"{dataset}:{doc_id}:{eid1}:{eid2}:{n}",
        doc_id=doc_id,
        context=context,
        query={"arg1": arg1, "arg2": arg2},
        gold=label,
        split=split,
    )


def load_matres(root, seed: int = 0) -> List[BenchmarkInstance]:
    root = Path(root)
    sources = {"aquaint": "train", "timebank": "train", "platinum": "test"}
    missing = [name for name in sources if not (root / f"{name}.txt").exists()]
    if missing:
        raise MissingSource(f"MATRES annotation files missing: {missing}", {"missing": missing})

    cache: Dict[str, TimemlDocument] = {}
    instances = []
    for name, split in sources.items():
        for lineno, line in enumerate((root / f"{name}.txt").read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 6:
                raise FormatError(f"{name}.txt:{lineno}: expected 6 tab-separated fields")
            doc_id, _, _, ref1, ref2, label = (f.strip() for f in fields)
            if label not in MATRES_LABELS:
                raise FormatError(f"{name}.txt:{lineno}: unknown relation {label!r}", {"label": label})
            instances.append(_pair_instance("matres", root, cache, doc_id, ref1, ref2, label, split, len(instances)))

    dev_docs = carve_dev((i.doc_id for i in instances if i.split == "train"), seed, salt="matres")
    instances = [i.model_copy(update={"split": "dev"}) if i.split == "train" and i.doc_id in dev_docs else i
                 for i in instances]
    logger.info("Loaded %d MATRES pairs", len(instances))
    return instances


def load_tddiscourse(root) -> List[BenchmarkInstance]:
    root = Path(root)
    sources = {"TDDManTrain.tsv": "train", "TDDManDev.tsv": "dev", "TDDManTest.tsv": "test"}
    present = [name for name in sources if (root / name).exists()]
    if not present:
        raise MissingSource(f"no TDDMan files under {root}")
    for ignored in sorted(root.glob("TDDAuto*")):
        logger.info("Ignoring automatically induced annotation %s", ignored.name)

    cache: Dict[str, TimemlDocument] = {}
    instances = []
    for name in present:
        for lineno, line in enumerate((root / name).read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise FormatError(f"{name}:{lineno}: expected 4 tab-separated fields")
            doc_id, ref1, ref2, code = (f.strip() for f in fields)
            if code not in TDD_CODES:
                raise FormatError(f"{name}:{lineno}: unknown relation {code!r}", {"label": code})
            instances.append(_pair_instance("tddiscourse", root, cache, doc_id, ref1, ref2,
                                            TDD_CODES[code], sources[name], len(instances)))
    logger.info("Loaded %d TDDMan pairs", len(instances))
    return instances


def _nli_label(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in _NLI_POSITIVE:
        return True
    if text in _NLI_NEGATIVE:
        return False
    raise FormatError(f"unknown entailment label {value!r}")


def load_temporal_nli(root) -> List[BenchmarkInstance]:
    root = Path(root)
    files = sorted(root.glob("*.json")) + sorted(root.glob("*.jsonl"))
    if not files:
        raise MissingSource(f"no TemporalNLI files under {root}")

    seen = set()
    instances = []
    for path in files:
        if path.suffix == ".jsonl":
            rows = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
        else:
            rows = json.loads(path.read_text(encoding="utf-8"))
        for n, row in enumerate(rows):
            try:
                context, hypothesis = row["context"], row["hypothesis"]
                label = _nli_label(row["label"])
                split = row.get("split") or path.stem
            except (KeyError, TypeError):
                raise FormatError(f"{path.name}: row {n} lacks context, hypothesis or label") from None
            if split not in BENCHMARK_SPLITS:
                raise FormatError(f"{path.name}: row {n} has unknown split {split!r}",
                                  {"path": str(path), "row": n, "split": split})
            key = (context, hypothesis)
            if key in seen:
                continue
            seen.add(key)
            instances.append(BenchmarkInstance(
                dataset="temporal_nli",
                id=f"temporal_nli:{row.get('id', len(instances))}",
                doc_id=str(row.get("doc_id", "")),
                context=context,
                query={"hypothesis": hypothesis},
                gold=label,
                split=split,
            ))
    logger.info("Loaded %d TemporalNLI rows", len(instances))
    return instances


def _answer_sets(pair: Dict) -> List[List[str]]:
    sets = []
    if isinstance(pair.get("answer"), dict):
        sets.append(list(pair["answer"].get("spans", [])))
    for individual in pair.get("individual_answers", []) or []:
        sets.append(list(individual.get("spans", [])))
    return sets


def _torque_file(path: Path, split: str, doc_prefix: str) -> List[BenchmarkInstance]:
    data = json.loads(path.read_text(encoding="utf-8"))
    instances = []
    for d, doc in enumerate(data):
        passages = doc.get("passages", [doc])
        doc_id = str(doc.get("doc_id", f"{doc_prefix}{d}"))
        for p, passage in enumerate(passages):
            for q, pair in enumerate(passage.get("question_answer_pairs", [])):
                sets = _answer_sets(pair)
                if not sets:
                    raise FormatError(f"{path.name}: question {q} of passage {p} in document {d} has no answers")
                instances.append(BenchmarkInstance(
                    dataset="torque",
                    id=f"torque:{doc_id}:{p}:{q}",
                    doc_id=doc_id,
                    context=passage["passage"],
                    query={"question": pair["question"]},
                    gold=sets,
                    split=split,
                ))
    return instances


def load_torque(root, seed: int = 0) -> List[BenchmarkInstance]:
    root = Path(root)
    for name in ("train.json", "dev.json"):
        if not (root / name).exists():
            raise MissingSource(f"TORQUE file {name} missing under {root}")
    train = _torque_file(root / "train.json", "train", "train-")
    test = _torque_file(root / "dev.json", "test", "dev-")
    dev_docs = carve_dev((i.doc_id for i in train), seed, salt="torque")
    train = [i.model_copy(update={"split": "dev"}) if i.doc_id in dev_docs else i for i in train]
    logger.info("Loaded %d TORQUE questions", len(train) + len(test))
    return train + test


LOADERS = {
    "temporal_nli": lambda root, seed: load_temporal_nli(root),
    "matres": load_matres,
    "tddiscourse": lambda root, seed: load_tddiscourse(root),
    "torque": load_torque,
}


def load_benchmark(dataset: str, root, seed: int = 0) -> List[BenchmarkInstance]:
    try:
        loader = LOADERS[dataset]
    except KeyError:
        raise FormatError(f"unknown benchmark {dataset!r}") from None
    return loader(root, seed)


def write_interchange(instances: Sequence[BenchmarkInstance], path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for instance in instances:
            f.write(instance.model_dump_json() + "\n")


def read_interchange(path) -> List[BenchmarkInstance]:
    path = Path(path)
    if not path.exists():
        raise MissingSource(f"interchange file {path} not found")
    return [BenchmarkInstance.model_validate_json(line)
            for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


# Prompts and scoring

def _mark_pair(context: str, arg1: Dict, arg2: Dict, style: str) -> Tuple[str, str, str]:
    """Mark both query events in the context; numbers follow textual order"""
    ordered = sorted((("arg1", arg1), ("arg2", arg2)), key=lambda a: a[1]["span"][0])
    refs = {}
    text = context
    for number, (name, arg) in reversed(list(enumerate(ordered, start=1))):
        s, e = arg["span"]
        mention = context[s:e]
        ref = f"**{mention}**" if style == "star" else f"[e{number}]{mention}[/e{number}]"
        refs[name] = ref
        text = text[:s] + ref + text[e:]
    return text, refs["arg1"], refs["arg2"]


def _choices(dataset: str) -> str:
    return "\n".join(f"- {label}: {LABEL_DESCRIPTIONS[label]}" for label in LABELS_OF[dataset])


def benchmark_values(instance: BenchmarkInstance, template: PromptTemplate, representation: str = "eid") -> Dict[str, str]:
    formulation = FORMULATION_OF[instance.dataset]
    if template.formulation != formulation:
        raise FormatError(f"{instance.dataset} needs a {formulation} template, got {template.id}")
    if formulation == "nli":
        return {
            "premise": instance.context,
            "context": instance.context,
            "hypothesis": instance.query["hypothesis"],
            "marker": "",
            "target": template.answers["entail" if instance.gold else "not_entail"],
        }
    if formulation == "pairwise":
        context, arg1, arg2 = _mark_pair(instance.context, instance.query["arg1"], instance.query["arg2"],
                                         representation)
        return {
            "context": context,
            "arg1": arg1,
            "arg2": arg2,
            "choices": _choices(instance.dataset),
            "marker": MARKER_HINTS.get(representation, "[e]"),
            "target": instance.gold,
        }
    first = instance.gold[0] if instance.gold else []
    return {
        "context": instance.context,
        "question": instance.query["question"],
        "events": "",
        "marker": "",
        "cot": "",
        "target": ", ".join(first) or template.empty_answer,
    }


def benchmark_prompt(instance: BenchmarkInstance, template: PromptTemplate,
                     train: Sequence[BenchmarkInstance] = (),
                     settings: Optional[GenerationSettings] = None) -> PromptInstance:
    """Prompt for one benchmark instance with demonstrations from the training split"""
    s = settings or GenerationSettings()
    by_id = {t.id: t for t in train}
    demo_ids = select_demonstrations(sorted(by_id), s.n_demos, s.seed, instance.id)
    demos = [benchmark_values(by_id[i], template, s.representation) for i in demo_ids]
    values = benchmark_values(instance, template, s.representation)
    prompt = render_prompt(template, values, demos, s.budget, s.length_fn)
    return PromptInstance(
        instance_id=f"{instance.id}:{template.id}:{s.representation}:{s.n_demos}:{s.seed}",
        doc_id=instance.doc_id or instance.id,
        dataset=instance.dataset,
        formulation=template.formulation,
        template_id=template.id,
        flavor=template.flavor,
        representation=s.representation,
        n_demos=s.n_demos,
        demo_ids=demo_ids,
        query=instance.query,
        prompt=prompt,
        gold=instance.gold,
        reference=render_answer(template, values),
        seed=s.seed,
        max_new_tokens=max_new_tokens_for(template, s),
    )


def parse_answer_spans(completion: str, template: Optional[PromptTemplate] = None) -> List[str]:
    text = answer_text(completion or "", template)
    spans = []
    for item in _ANSWER_SPLIT.split(text):
        item = item.strip().lstrip("-*").strip().strip(".")
        if item and item.lower() != (template.empty_answer if template else "none"):
            spans.append(item)
    return spans


def interpret_benchmark(instance: PromptInstance, completion: str, template: PromptTemplate) -> PredictionRecord:
    base = dict(instance_id=instance.instance_id, doc_id=instance.doc_id,
                formulation=instance.formulation, raw=completion or "")
    if instance.dataset == "temporal_nli":
        payload = parse_nli(completion, template)
    elif instance.dataset in LABELS_OF:
        vocab = {label.lower(): label for label in LABELS_OF[instance.dataset]}
        payload = parse_pairwise(completion, template, vocab)
    else:
        payload = parse_answer_spans(completion, template) if (completion or "").strip() else None
    if payload is None:
        return PredictionRecord(**base, status="abstain")
    return PredictionRecord(**base, status="ok", payload=payload)


def score_benchmark(dataset: str, pairs: Sequence[Tuple[PromptInstance, PredictionRecord]]) -> float:
    predictions = [rec.payload if rec.ok else None for _, rec in pairs]
    golds = [inst.gold for inst, _ in pairs]
    metric = METRIC_OF[dataset]
    if metric == "accuracy":
        return accuracy(predictions, golds)
    if metric == "micro_f1":
        return micro_f1(predictions, golds, LABELS_OF[dataset])
    return exact_match_best(predictions, golds)
