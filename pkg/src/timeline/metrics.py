"""
Scoring: closure-based temporal awareness, agreement between annotations,
benchmark metrics and median/IQR aggregation.
"""

from collections import defaultdict
from pathlib import Path
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple
import csv
import json
import logging
import re
import string

import networkx as nx
import numpy as np

from .annotation import DocumentRecord
from .errors import CyclicGraph
from .graph import ClosurePairSet, TimelineGraph, detect_cycles, expand_coex, gold_closure
from .schemas import AggregateStats, MetricReport, ScoreRow

logger = logging.getLogger(__name__)

PRF = Tuple[float, float, float]

STATS_COLUMNS = ("count", "median", "q1", "q3", "iqr", "mean",
                 "whisker_low", "whisker_high", "minimum", "maximum")


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def prf(gold_items: FrozenSet, pred_items: FrozenSet) -> PRF:
    """Precision, recall and F1 of two item sets; both empty counts as perfect"""
    if not gold_items and not pred_items:
        return (1.0, 1.0, 1.0)
    overlap = len(gold_items & pred_items)
    precision = overlap / len(pred_items) if pred_items else 0.0
    recall = overlap / len(gold_items) if gold_items else 0.0
    return (precision, recall, f1_score(precision, recall))


def closure_items(closure: ClosurePairSet, include_coex: bool = True) -> FrozenSet[tuple]:
    items = closure.items()
    if include_coex:
        return items
    return frozenset(i for i in items if i[0] == "BEFORE")


def temporal_awareness(gold: TimelineGraph, pred: TimelineGraph, include_coex: bool = True) -> PRF:
    """
    Overlap of the transitive closures of gold and predicted graphs.

    Predicted relations on events outside the gold event set are dropped.
    The prediction is not reduced; a cyclic prediction contributes both
    directions of every pair on the cycle.
    """
    universe = set(gold.event_ids)
    extra = [eid for eid in pred.event_ids if eid not in universe]
    if extra:
        logger.warning("Ignoring %d predicted events outside the gold timeline: %s", len(extra), extra)
    gold_set = closure_items(gold_closure(gold), include_coex)
    pred_set = closure_items(gold_closure(pred).restricted(universe), include_coex)
    return prf(gold_set, pred_set)


def corpus_pairwise_f1(pairs: Sequence[Tuple[TimelineGraph, TimelineGraph]],
                       doc_ids: Optional[Sequence[str]] = None,
                       include_coex: bool = True) -> MetricReport:
    """Per-document temporal awareness and its unweighted mean over documents"""
    if not pairs:
        raise ValueError("corpus_pairwise_f1 needs at least one document")
    doc_ids = list(doc_ids) if doc_ids is not None else [str(i) for i in range(len(pairs))]
    rows = []
    for doc_id, (gold, pred) in zip(doc_ids, pairs):
        p, r, f = temporal_awareness(gold, pred, include_coex)
        rows.append(ScoreRow(doc_id=doc_id, precision=p, recall=r, f1=f, score=f))
    n = len(rows)
    return MetricReport(
        rows=rows,
        precision=sum(r.precision for r in rows) / n,
        recall=sum(r.recall for r in rows) / n,
        f1=sum(r.f1 for r in rows) / n,
    )


def _reduced_items(graph: TimelineGraph) -> Tuple[FrozenSet[tuple], FrozenSet[tuple]]:
    expanded = expand_coex(graph)
    dg = expanded.to_digraph()
    if not nx.is_directed_acyclic_graph(dg):
        raise CyclicGraph(detect_cycles(expanded))
    reduction = nx.transitive_reduction(dg)
    closure = gold_closure(graph)
    reduced = {("BEFORE", x, y) for x, y in reduction.edges}
    reduced |= {i for i in closure.items() if i[0] == "COEX"}
    return frozenset(reduced), closure.items()


def reduction_temporal_awareness(gold: TimelineGraph, pred: TimelineGraph) -> PRF:
    """
    Older scorer kept for comparison: each side's transitive reduction is
    checked against the other side's closure. Both graphs must be acyclic.
    """
    gold_reduced, gold_closed = _reduced_items(gold)
    pred_reduced, pred_closed = _reduced_items(pred)
    if not gold_reduced and not pred_reduced:
        return (1.0, 1.0, 1.0)
    precision = len(pred_reduced & gold_closed) / len(pred_reduced) if pred_reduced else 0.0
    recall = len(gold_reduced & pred_closed) / len(gold_reduced) if gold_reduced else 0.0
    return (precision, recall, f1_score(precision, recall))


# Agreement between annotators

def span_key(event) -> str:
    return f"{event.span[0]}-{event.span[1]}"


def dice_span_f1(events_a: Iterable[str], events_b: Iterable[str],
                 coref_map: Optional[Mapping[str, str]] = None) -> float:
    coref_map = coref_map or {}
    a = {coref_map.get(e, e) for e in events_a}
    b = {coref_map.get(e, e) for e in events_b}
    if not a and not b:
        return 1.0
    return 2 * len(a & b) / (len(a) + len(b))


def _keyed_closure(doc: DocumentRecord, coref_map: Mapping[str, str]) -> Tuple[List[str], FrozenSet[tuple]]:
    key_of = {e.id: coref_map.get(span_key(e), span_key(e)) for e in doc.events}
    keys = []
    for e in doc.events:
        if key_of[e.id] not in keys:
            keys.append(key_of[e.id])
    closure = gold_closure(doc.graph)
    items = set()
    for x, y in closure.before_pairs:
        if key_of[x] != key_of[y]:
            items.add(("BEFORE", key_of[x], key_of[y]))
    for pair in closure.coex_pairs:
        a, b = sorted(key_of[e] for e in pair)
        if a != b:
            items.add(("COEX", a, b))
    return keys, frozenset(items)


def iaa(doc_a: DocumentRecord, doc_b: DocumentRecord,
        coref_map: Optional[Mapping[str, str]] = None) -> Dict[str, float]:
    """
    Agreement between two annotations of one document.

    Events are keyed by their "start-end" span, remapped through `coref_map`
    when given. ta_common keeps only relations between events both
    annotators marked.
    """
    coref_map = coref_map or {}
    keys_a, items_a = _keyed_closure(doc_a, coref_map)
    keys_b, items_b = _keyed_closure(doc_b, coref_map)
    common = set(keys_a) & set(keys_b)

    def on_common(items):
        return frozenset(i for i in items if i[1] in common and i[2] in common)

    _, _, ta_all = prf(items_a, items_b)
    _, _, ta_common = prf(on_common(items_a), on_common(items_b))
    return {
        "dice": dice_span_f1(keys_a, keys_b),
        "ta_all": ta_all,
        "ta_common": ta_common,
        "n_events_a": len(keys_a),
        "n_events_b": len(keys_b),
        "n_common": len(common),
    }


# Benchmark metrics

def accuracy(predictions: Sequence, golds: Sequence) -> float:
    if len(predictions) != len(golds):
        raise ValueError("predictions and gold labels differ in length")
    if not golds:
        return 0.0
    return sum(1 for p, g in zip(predictions, golds) if p is not None and p == g) / len(golds)


def micro_f1(predictions: Sequence[Optional[str]], golds: Sequence[str],
             labels: Optional[Iterable[str]] = None) -> float:
    """
    Micro-averaged F1 over `labels` (every label seen when omitted).
    An abstention (None) is a missed gold label and no false positive.
    """
    if len(predictions) != len(golds):
        raise ValueError("predictions and gold labels differ in length")
    scored = set(labels) if labels is not None else set(golds) | {p for p in predictions if p is not None}
    tp = fp = fn = 0
    for p, g in zip(predictions, golds):
        if p is not None and p == g:
            if g in scored:
                tp += 1
            continue
        if p is not None and p in scored:
            fp += 1
        if g in scored:
            fn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return f1_score(precision, recall)


def normalize_answer(s: str) -> str:
    """Lower text and remove punctuation, articles and extra whitespace."""
    def remove_articles(text):
        return re.sub(r'\b(a|an|the)\b', ' ', text)

    def white_space_fix(text):
        return ' '.join(text.split())

    def remove_punc(text):
        exclude = set(string.punctuation)
        return ''.join(ch for ch in text if ch not in exclude)

    return white_space_fix(remove_articles(remove_punc(s.lower())))


def _answer_set(answers: Iterable[str]) -> FrozenSet[str]:
    return frozenset(a for a in (normalize_answer(x) for x in answers) if a)


def metric_max_over_ground_truths(metric_fn: Callable, prediction, ground_truths: Sequence) -> float:
    return max(metric_fn(prediction, gt) for gt in ground_truths)


def exact_match_best(predictions: Sequence[Optional[Iterable[str]]],
                     gold_answer_sets: Sequence[Sequence[Iterable[str]]]) -> float:
    """Per instance, 1 when the predicted set equals any annotator's set; averaged"""
    if len(predictions) != len(gold_answer_sets):
        raise ValueError("predictions and gold answers differ in length")
    if not predictions:
        return 0.0

    def exact(prediction, truth):
        return 1.0 if _answer_set(prediction) == _answer_set(truth) else 0.0

    total = 0.0
    for prediction, truths in zip(predictions, gold_answer_sets):
        if prediction is None or not truths:
            continue
        total += metric_max_over_ground_truths(exact, prediction, truths)
    return total / len(predictions)


# Aggregation

def summarize(values: Sequence[float], group: Optional[Dict] = None) -> AggregateStats:
    """Median and quartiles by linear interpolation, with Tukey whiskers"""
    if len(values) == 0:
        raise ValueError("cannot summarize an empty group")
    data = np.asarray(sorted(values), dtype=float)
    q1, median, q3 = (float(v) for v in np.percentile(data, [25, 50, 75]))
    iqr = q3 - q1
    inside = data[(data >= q1 - 1.5 * iqr) & (data <= q3 + 1.5 * iqr)]
    return AggregateStats(
        group=dict(group or {}),
        count=int(data.size),
        median=median,
        q1=q1,
        q3=q3,
        iqr=iqr,
        mean=float(data.mean()),
        whisker_low=float(inside.min()),
        whisker_high=float(inside.max()),
        minimum=float(data.min()),
        maximum=float(data.max()),
    )


def aggregate(rows: Sequence[ScoreRow], group_by: Sequence[str], value: str = "f1") -> List[AggregateStats]:
    """
    One data point per (template, n_demos) combination inside each group:
    the mean of `value` over that combination's rows (documents, seeds).
    Groups come out sorted by their key values.
    """
    points: Dict[tuple, Dict[tuple, List[float]]] = defaultdict(lambda: defaultdict(list))
    for row in rows:
        key = tuple(getattr(row, g) for g in group_by)
        points[key][(row.template_id, row.n_demos)].append(getattr(row, value))

    stats = []
    for key in sorted(points, key=lambda k: tuple(str(v) for v in k)):
        combos = points[key]
        values = [sum(v) / len(v) for _, v in sorted(combos.items())]
        stats.append(summarize(values, dict(zip(group_by, key))))
    return stats


def quartile_bins(values: Sequence[float]) -> List[float]:
    """Bin edges at the quartiles of the values"""
    if len(values) == 0:
        return []
    return [float(v) for v in np.percentile(np.asarray(values, dtype=float), [25, 50, 75])]


def assign_bin(value: float, edges: Sequence[float]) -> str:
    """bin1 holds values up to the first edge, bin2 up to the second, and so on"""
    for i, edge in enumerate(edges, start=1):
        if value <= edge:
            return f"bin{i}"
    return f"bin{len(edges) + 1}"


def _cell(value) -> str:
    if isinstance(value, float):
        return format(value, ".10g")
    return "" if value is None else str(value)


def write_report_csv(stats: Sequence[AggregateStats], path: Path, group_by: Sequence[str]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(list(group_by) + list(STATS_COLUMNS))
        for s in stats:
            writer.writerow([_cell(s.group.get(g)) for g in group_by] +
                            [_cell(getattr(s, c)) for c in STATS_COLUMNS])


def write_report_json(stats: Sequence[AggregateStats], path: Path, group_by: Sequence[str]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"group_by": list(group_by), "groups": [s.model_dump() for s in stats]}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
