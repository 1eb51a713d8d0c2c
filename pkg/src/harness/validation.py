"""
Corpus checks and per-document timeline figures.

Each document is parsed on its own so one bad file yields a diagnostic
instead of aborting the whole corpus.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import networkx as nx  # noqa: E402
from pydantic import BaseModel, Field  # noqa: E402

from src.timeline.annotation import (  # noqa: E402
    DocumentRecord,
    build_document,
    corpus_statistics,
    iter_document_pairs,
    title_zone_events,
)
from src.timeline.errors import AnnotationError, TimelineEvalError  # noqa: E402
from src.timeline.graph import CYCLE_REPORT_LIMIT, TimelineGraph, detect_cycles, expand_coex, weak_components  # noqa: E402

logger = logging.getLogger(__name__)

SVG_SALT = "timeline-eval"
matplotlib.rcParams["svg.hashsalt"] = SVG_SALT


class Diagnostic(BaseModel):
    severity: str  # error | warning
    code: str
    doc_id: str = ""
    message: str
    details: Dict[str, Any] = Field(default_factory=dict)

    @classmethod
    def from_error(cls, error: TimelineEvalError, doc_id: str = "") -> "Diagnostic":
        return cls(severity="error", code=error.code, doc_id=doc_id,
                   message=error.message, details=error.details)


@dataclass
class ValidationReport:
    diagnostics: List[Diagnostic] = field(default_factory=list)
    documents: List[DocumentRecord] = field(default_factory=list)
    statistics: Dict[str, Dict[str, float]] = field(default_factory=dict)
    figures: List[str] = field(default_factory=list)

    @property
    def has_errors(self) -> bool:
        return any(d.severity == "error" for d in self.diagnostics)

    def counts(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for d in self.diagnostics:
            counts[d.code] = counts.get(d.code, 0) + 1
        return dict(sorted(counts.items()))


def check_document(doc: DocumentRecord) -> List[Diagnostic]:
    diagnostics = []
    components = weak_components(doc.graph)
    if len(components) > 1:
        detached = components[1:]
        diagnostics.append(Diagnostic(
            severity="warning",
            code="disconnected_events",
            doc_id=doc.doc_id,
            message=f"{sum(len(c) for c in detached)} events are not connected to the main timeline",
            details={"components": detached},
        ))

    cycles = detect_cycles(expand_coex(doc.graph))
    if cycles:
        diagnostics.append(Diagnostic(
            severity="error",
            code="cyclic_graph",
            doc_id=doc.doc_id,
            message=f"{len(cycles)}{'+' if len(cycles) >= CYCLE_REPORT_LIMIT else ''} cycles after COEX expansion",
            details={"cycles": cycles},
        ))

    in_title = title_zone_events(doc)
    if in_title:
        diagnostics.append(Diagnostic(
            severity="warning",
            code="title_zone_event",
            doc_id=doc.doc_id,
            message="events annotated in the title zone",
            details={"events": [e.id for e in in_title]},
        ))
    return diagnostics


def display_layers(graph: TimelineGraph) -> List[List[str]]:
    """
    Left-to-right columns for drawing. Events on a cycle share a column so
    invalid graphs can still be looked at.
    """
    dg = expand_coex(graph).to_digraph()
    condensed = nx.condensation(dg)
    members = condensed.graph["mapping"]
    columns: Dict[int, List[str]] = {}
    for depth, generation in enumerate(nx.topological_generations(condensed)):
        columns[depth] = sorted((eid for eid, comp in members.items() if comp in generation),
                                key=graph.index_of)
    return [columns[d] for d in sorted(columns)]


def _label(graph: TimelineGraph, eid: str, width: int = 18) -> str:
    mention = graph.event(eid).mention
    if len(mention) > width:
        mention = mention[:width - 3] + "..."
    return f"{eid}\n{mention}"


def render_timeline_svg(doc: DocumentRecord, path: Path) -> Path:
    """Layered drawing of the annotated graph: AFTER links solid, COEX links dashed"""
    graph = doc.graph
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    dg = nx.DiGraph()
    for layer, ids in enumerate(display_layers(graph)):
        for eid in ids:
            dg.add_node(eid, layer=layer)
    dg.add_edges_from(sorted(graph.precedence_edges))
    pos = nx.multipartite_layout(dg, subset_key="layer", align="vertical") if len(dg) else {}

    n_layers = max((d["layer"] for _, d in dg.nodes(data=True)), default=0) + 1
    fig, ax = plt.subplots(figsize=(max(4.0, 2.2 * n_layers), 4.5))
    if len(dg):
        nx.draw_networkx_nodes(dg, pos, ax=ax, node_size=900, node_color="#dde7f3", edgecolors="#3b5b82")
        nx.draw_networkx_labels(dg, pos, ax=ax, labels={e: _label(graph, e) for e in dg.nodes}, font_size=6)
        nx.draw_networkx_edges(dg, pos, ax=ax, arrows=True, arrowstyle="-|>", node_size=900, edge_color="#3b5b82")
        coex = nx.Graph()
        coex.add_nodes_from(dg.nodes)
        coex.add_edges_from(sorted(tuple(sorted(link)) for link in graph.coex_links))
        nx.draw_networkx_edges(coex, pos, ax=ax, style="dashed", edge_color="#b0603a")
    ax.set_title(f"{doc.doc_id}: {doc.title}"[:80], fontsize=8)
    ax.set_axis_off()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def validate_corpus(root, figure_dir: Optional[Path] = None) -> ValidationReport:
    report = ValidationReport()
    try:
        pairs = list(iter_document_pairs(root))
    except AnnotationError as e:
        report.diagnostics.append(Diagnostic.from_error(e))
        return report

    for row, text, ann in pairs:
        doc_id = row["id"]
        try:
            doc = build_document(doc_id, text, ann, row)
        except TimelineEvalError as e:
            report.diagnostics.append(Diagnostic.from_error(e, doc_id))
            continue
        report.documents.append(doc)
        report.diagnostics.extend(check_document(doc))
        if figure_dir is not None:
            svg = render_timeline_svg(doc, Path(figure_dir) / f"{doc_id}.svg")
            report.figures.append(str(svg))

    report.statistics = corpus_statistics(report.documents)
    logger.info("Validated %d documents: %s", len(report.documents), report.counts() or "no findings")
    return report
