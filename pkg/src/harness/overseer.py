"""
Stage pipeline: validate -> generate -> run -> score -> aggregate -> report.

Every stage reads and writes files under the run's output directory and
records {inputs_hash, outputs_hash, count} in manifest.json.
"""

import hashlib
import json
import logging
from collections import defaultdict
from os import getenv
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel, Field, ValidationError

from src.model_agents.client import ModelClient
from src.model_agents.types import GenerationRequest
from src.timeline.adapters import (
    FORMULATION_OF,
    benchmark_prompt,
    interpret_benchmark,
    load_benchmark,
    read_interchange,
    score_benchmark,
)
from src.timeline.annotation import DocumentRecord, load_corpus
from src.timeline.errors import (
    BudgetExceeded,
    ConfigError,
    CyclicGraph,
    FormatError,
    TimelineEvalError,
    TooFewEvents,
)
from src.timeline.formulations import GenerationSettings, InstanceBuilder
from src.timeline.interpretation import assemble_graph, interpret
from src.timeline.metrics import (
    aggregate,
    assign_bin,
    corpus_pairwise_f1,
    quartile_bins,
    write_report_csv,
    write_report_json,
)
from src.timeline.schemas import (
    AggregateStats,
    BenchmarkInstance,
    MetricReport,
    PredictionRecord,
    PromptInstance,
    ScoreRow,
)
from src.timeline.templates import DEFAULT_TEMPLATE_DIR, PromptTemplate, TemplateRegistry
from . import __version__
from .config import RunConfig
from .figures import boxplot_svg
from .validation import ValidationReport, validate_corpus

logger = logging.getLogger(__name__)

STAGES = ("validate", "generate", "run", "score", "aggregate", "report")
RUN_CHUNK = 64

INSTANCES_FILE = "instances.jsonl"
PREDICTIONS_FILE = "predictions.jsonl"
SCORES_FILE = "scores.jsonl"
CORPUS_SCORES_FILE = "corpus_scores.jsonl"
MANIFEST_FILE = "manifest.json"


def _sha256(chunks) -> str:
    h = hashlib.sha256()
    for chunk in chunks:
        h.update(chunk if isinstance(chunk, bytes) else str(chunk).encode("utf-8"))
        h.update(b"\0")
    return h.hexdigest()


def hash_json(obj) -> str:
    return _sha256([json.dumps(obj, sort_keys=True, separators=(",", ":"))])


def hash_paths(paths: Sequence[Path]) -> str:
    """Content hash over files (directories are walked), independent of mtime"""
    files = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            files.extend(sorted((f for f in p.rglob("*") if f.is_file()), key=lambda f: f.relative_to(p).as_posix()))
        elif p.exists():
            files.append(p)
    chunks = []
    for f in files:
        chunks.append(f.name)
        chunks.append(f.read_bytes())
    return _sha256(chunks)


def write_jsonl(path: Path, records: Sequence[BaseModel]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(r.model_dump_json() + "\n")


def read_jsonl(path: Path, model, skip_invalid: bool = False):
    """
    Records of one JSONL file. With skip_invalid, lines that fail to decode
    (a run killed mid-append leaves a partial last line) are dropped with a
    warning instead of failing the stage.
    """
    if not path.exists():
        raise ConfigError(f"{path} does not exist; run the earlier stage first")
    records = []
    text = path.read_text(encoding="utf-8", errors="replace" if skip_invalid else "strict")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(model.model_validate_json(line))
        except ValidationError as e:
            if not skip_invalid:
                raise FormatError(f"{path.name}:{lineno}: not a valid {model.__name__} record",
                                  {"path": str(path), "line": lineno, "errors": e.error_count()}) from None
            logger.warning("%s:%d: skipping undecodable record (%d errors)", path, lineno, e.error_count())
    return records


class StageRecord(BaseModel):
    inputs_hash: str
    outputs_hash: str
    count: int


class RunManifest(BaseModel):
    config: Dict = Field(default_factory=dict)
    code_version: str = __version__
    stages: Dict[str, StageRecord] = Field(default_factory=dict)

    @classmethod
    def load(cls, path: Path) -> "RunManifest":
        if path.exists():
            return cls.model_validate_json(path.read_text(encoding="utf-8"))
        return cls()

    def write(self, path: Path):
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")


# Overseer class to manage the stage workflow
class Overseer:
    def __init__(self, config: RunConfig, client: Optional[ModelClient] = None):
        self.config = config
        self.out = config.out
        self.template_root = Path(config.template_dir) if config.template_dir else DEFAULT_TEMPLATE_DIR
        self.registry = TemplateRegistry.load(self.template_root)
        self.client = client
        self.workflow_log: List[str] = []
        self.manifest = RunManifest.load(self.out / MANIFEST_FILE)
        self.manifest.config = config.snapshot()
        self.manifest.code_version = __version__
        self._docs: Optional[List[DocumentRecord]] = None
        self._benchmark: Optional[List[BenchmarkInstance]] = None

    @property
    def is_benchmark(self) -> bool:
        return self.config.dataset != "timeset"

    # Inputs

    def documents(self) -> List[DocumentRecord]:
        if self._docs is None:
            self._docs = load_corpus(self.config.corpus)
        return self._docs

    def benchmark_instances(self) -> List[BenchmarkInstance]:
        if self._benchmark is None:
            path = Path(self.config.dataset_path)
            if path.is_file() and path.suffix == ".jsonl":
                self._benchmark = [i for i in read_interchange(path) if i.dataset == self.config.dataset]
            else:
                self._benchmark = load_benchmark(self.config.dataset, path, self.config.seeds[0])
        return self._benchmark

    def source_paths(self) -> List[Path]:
        return [Path(self.config.dataset_path if self.is_benchmark else self.config.corpus)]

    def templates_for(self, formulation: str) -> List[PromptTemplate]:
        if self.config.template_ids:
            chosen = self.registry.select(formulation, flavor=None, ids=self.config.template_ids)
        else:
            chosen = self.registry.select(formulation, self.config.flavor)
        if not chosen:
            logger.warning("No %s templates for flavor %s", formulation, self.config.flavor)
        return chosen

    def settings(self, n_demos: int, seed: int) -> GenerationSettings:
        return GenerationSettings(
            representation=self.config.representation,
            n_demos=n_demos,
            seed=seed,
            budget=self.config.budget,
            skip_overflow=self.config.skip_overflow,
        )

    def _record(self, stage: str, inputs_hash: str, outputs: Sequence[Path], count: int):
        self.manifest.stages[stage] = StageRecord(
            inputs_hash=inputs_hash,
            outputs_hash=hash_paths(outputs),
            count=count,
        )
        self.manifest.write(self.out / MANIFEST_FILE)

    # Stages

    def validate(self) -> ValidationReport:
        self.config.check_paths()
        if self.is_benchmark:
            report = ValidationReport()
            report.statistics = {"all": {"instances": len(self.benchmark_instances())}}
            return report
        report = validate_corpus(self.config.corpus, self.out / "figures" / "graphs")
        diagnostics_path = self.out / "diagnostics.jsonl"
        write_jsonl(diagnostics_path, report.diagnostics)
        stats_path = self.out / "statistics.json"
        stats_path.write_text(json.dumps(report.statistics, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        self._record("validate", hash_paths(self.source_paths()),
                     [diagnostics_path, stats_path, self.out / "figures" / "graphs"], len(report.documents))
        return report

    def generate(self) -> List[PromptInstance]:
        self.config.check_paths()
        instances = self._generate_benchmark() if self.is_benchmark else self._generate_timeset()
        path = self.out / INSTANCES_FILE
        write_jsonl(path, instances)
        c = self.config
        inputs = hash_json({
            "sources": hash_paths(self.source_paths()),
            "templates": hash_paths([self.template_root]),
            "params": [c.dataset, c.formulations, c.template_ids, c.representation, c.flavor,
                       c.shots, c.seeds, c.budget, c.skip_overflow, c.query_split],
        })
        self._record("generate", inputs, [path], len(instances))
        logger.info("Generated %d instances", len(instances))
        return instances

    def _generate_timeset(self) -> List[PromptInstance]:
        docs = self.documents()
        dev_docs = [d for d in docs if d.split == "dev"]
        queries = [d for d in docs if d.split == self.config.query_split]
        instances = []
        for formulation in self.config.formulations:
            for template in self.templates_for(formulation):
                for n_demos in self.config.shots:
                    for seed in self.config.seeds:
                        builder = InstanceBuilder(template, dev_docs, self.settings(n_demos, seed))
                        for doc in queries:
                            try:
                                instances.extend(builder.build(doc))
                            except (TooFewEvents, CyclicGraph) as e:
                                logger.warning("Skipping %s for %s: %s", doc.doc_id, template.id, e.message)
                        if builder.skipped:
                            self.workflow_log.append(
                                f"generate: {builder.skipped} {template.id} instances over budget")
        return instances

    def _generate_benchmark(self) -> List[PromptInstance]:
        data = self.benchmark_instances()
        train = [i for i in data if i.split == "train"]
        queries = [i for i in data if i.split == self.config.query_split]
        formulation = FORMULATION_OF[self.config.dataset]
        instances = []
        for template in self.templates_for(formulation):
            for n_demos in self.config.shots:
                for seed in self.config.seeds:
                    settings = self.settings(n_demos, seed)
                    for query in queries:
                        try:
                            instances.append(benchmark_prompt(query, template, train, settings))
                        except BudgetExceeded as e:
                            if not self.config.skip_overflow:
                                raise
                            logger.warning("Skipping %s: %s", query.id, e.message)
        return instances

    def _client(self, instances: Sequence[PromptInstance]) -> ModelClient:
        if self.client is None:
            self.client = ModelClient(self.config.backend, instances=instances)
        return self.client

    def _interpret(self, instance: PromptInstance, completion: str) -> PredictionRecord:
        template = self.registry.get(instance.template_id)
        if instance.dataset != "timeset":
            return interpret_benchmark(instance, completion, template)
        return interpret(instance, completion, template)

    def run(self) -> Dict[str, int]:
        """
        Send every instance without a stored prediction to the backend.

        Predictions are appended chunk by chunk, so an interrupted run resumes
        where it stopped; the final file is rewritten in instance order.
        """
        instances = read_jsonl(self.out / INSTANCES_FILE, PromptInstance)
        path = self.out / PREDICTIONS_FILE
        done: Dict[str, PredictionRecord] = {}
        if path.exists():
            wanted = {i.instance_id for i in instances}
            for record in read_jsonl(path, PredictionRecord, skip_invalid=True):
                if record.instance_id in wanted:
                    done.setdefault(record.instance_id, record)
            # drop any partial tail so appends start on a fresh line
            write_jsonl(path, [done[i.instance_id] for i in instances if i.instance_id in done])
        pending = [i for i in instances if i.instance_id not in done]
        if done:
            logger.info("Resuming: %d predictions stored, %d pending", len(done), len(pending))

        client = self._client(instances)
        failures: Dict[str, str] = {}
        path.parent.mkdir(parents=True, exist_ok=True)
        for start in range(0, len(pending), RUN_CHUNK):
            chunk = pending[start:start + RUN_CHUNK]
            requests = [GenerationRequest(request_id=i.instance_id, prompt=i.prompt,
                                          max_new_tokens=i.max_new_tokens) for i in chunk]
            result = client.generate_batch(requests)
            by_id = {r.request_id: r for r in result.responses}
            failures.update(result.failures)
            with open(path, "a", encoding="utf-8") as f:
                for instance in chunk:
                    if instance.instance_id not in by_id:
                        continue
                    record = self._interpret(instance, by_id[instance.instance_id].completion)
                    done[instance.instance_id] = record
                    f.write(record.model_dump_json() + "\n")

        ordered = [done[i.instance_id] for i in instances if i.instance_id in done]
        write_jsonl(path, ordered)
        if failures:
            self.workflow_log.append(f"run: {len(failures)} requests failed: {sorted(failures)[:5]}")

        backend = self.config.backend.model_dump(mode="json", exclude={"max_in_flight", "timeout", "retry"})
        self._record("run", hash_json({"instances": hash_paths([self.out / INSTANCES_FILE]), "backend": backend}),
                     [path], len(ordered))
        counts = {
            "instances": len(instances),
            "predictions": len(ordered),
            "ok": sum(1 for r in ordered if r.ok),
            "abstain": sum(1 for r in ordered if not r.ok),
            "failed": len(failures),
            "backend_calls": client.backend_calls,
        }
        logger.info("Run finished: %s", counts)
        return counts

    def _model_name(self) -> str:
        return self.config.backend.model or getenv("MODEL") or self.config.backend.kind

    def _paired(self) -> List[Tuple[PromptInstance, PredictionRecord]]:
        instances = read_jsonl(self.out / INSTANCES_FILE, PromptInstance)
        predictions = {r.instance_id: r for r in read_jsonl(self.out / PREDICTIONS_FILE, PredictionRecord)}
        pairs = []
        for instance in instances:
            record = predictions.get(instance.instance_id)
            if record is None:
                # never answered: counts as an abstention
                record = PredictionRecord(instance_id=instance.instance_id, doc_id=instance.doc_id,
                                          formulation=instance.formulation)
            pairs.append((instance, record))
        return pairs

    def score(self) -> List[ScoreRow]:
        pairs = self._paired()
        if self.is_benchmark:
            rows, reports = self._score_benchmark(pairs), []
        else:
            rows, reports = self._score_timeset(pairs)
        scores_path = self.out / SCORES_FILE
        corpus_path = self.out / CORPUS_SCORES_FILE
        write_jsonl(scores_path, rows)
        write_jsonl(corpus_path, reports)
        inputs = hash_json({
            "runs": hash_paths([self.out / INSTANCES_FILE, self.out / PREDICTIONS_FILE]),
            "sources": hash_paths(self.source_paths()),
            "params": [self.config.model_size, self.config.word_bin_edges, self.config.event_bin_edges],
        })
        self._record("score", inputs, [scores_path, corpus_path], len(rows))
        return rows

    def _score_timeset(self, pairs) -> Tuple[List[ScoreRow], List[MetricReport]]:
        docs = {d.doc_id: d for d in self.documents()}
        queries = [d for d in docs.values() if d.split == self.config.query_split]
        word_edges = self.config.word_bin_edges or quartile_bins([d.word_count for d in queries])
        event_edges = self.config.event_bin_edges or quartile_bins([d.n_events for d in queries])

        runs = defaultdict(list)
        for instance, record in pairs:
            key = (instance.formulation, instance.template_id, instance.flavor, instance.representation,
                   instance.n_demos, instance.seed)
            runs[key].append((instance, record))

        rows, reports = [], []
        model = self._model_name()
        for key in sorted(runs, key=lambda k: tuple(str(v) for v in k)):
            formulation, template_id, flavor, representation, n_demos, seed = key
            per_doc = defaultdict(list)
            for instance, record in runs[key]:
                per_doc[instance.doc_id].append((instance, record))
            doc_ids = sorted(per_doc)
            graphs = [(docs[d].graph, assemble_graph(docs[d].graph, per_doc[d], seed, d)) for d in doc_ids]
            report = corpus_pairwise_f1(graphs, doc_ids)
            run_rows = []
            for row in report.rows:
                doc = docs[row.doc_id]
                run_rows.append(row.model_copy(update={
                    "model": model,
                    "model_size": self.config.model_size,
                    "formulation": formulation,
                    "template_id": template_id,
                    "flavor": flavor,
                    "representation": representation,
                    "n_demos": n_demos,
                    "seed": seed,
                    "era": doc.era,
                    "topic": doc.topic,
                    "word_bin": assign_bin(doc.word_count, word_edges),
                    "event_bin": assign_bin(doc.n_events, event_edges),
                }))
            rows.extend(run_rows)
            report.rows = run_rows
            report.group = {"model": model, "formulation": formulation, "template_id": template_id,
                            "flavor": flavor, "representation": representation,
                            "n_demos": n_demos, "seed": seed}
            reports.append(report)
        return rows, reports

    def _score_benchmark(self, pairs) -> List[ScoreRow]:
        runs = defaultdict(list)
        for instance, record in pairs:
            runs[(instance.template_id, instance.flavor, instance.n_demos, instance.seed)].append((instance, record))
        rows = []
        model = self._model_name()
        for key in sorted(runs, key=lambda k: tuple(str(v) for v in k)):
            template_id, flavor, n_demos, seed = key
            value = score_benchmark(self.config.dataset, runs[key])
            rows.append(ScoreRow(
                model=model,
                model_size=self.config.model_size,
                dataset=self.config.dataset,
                formulation=FORMULATION_OF[self.config.dataset],
                template_id=template_id,
                flavor=flavor,
                representation=self.config.representation,
                n_demos=n_demos,
                seed=seed,
                f1=value,
                score=value,
            ))
        return rows

    def _report_name(self, group_by: Sequence[str]) -> str:
        return "report_" + ("-".join(group_by) if group_by else "all")

    def aggregate(self, group_by: Optional[Sequence[str]] = None) -> List[AggregateStats]:
        group_by = list(group_by if group_by is not None else self.config.group_by)
        rows = read_jsonl(self.out / SCORES_FILE, ScoreRow)
        stats = aggregate(rows, group_by) if rows else []
        name = self._report_name(group_by)
        csv_path = self.out / f"{name}.csv"
        json_path = self.out / f"{name}.json"
        write_report_csv(stats, csv_path, group_by)
        write_report_json(stats, json_path, group_by)
        self._record("aggregate", hash_json({"scores": hash_paths([self.out / SCORES_FILE]), "group_by": group_by}),
                     [csv_path, json_path], len(stats))
        return stats

    def report(self, group_by: Optional[Sequence[str]] = None) -> Path:
        group_by = list(group_by if group_by is not None else self.config.group_by)
        stats = self.aggregate(group_by)
        svg = boxplot_svg(stats, group_by, self.out / "figures" / f"{self._report_name(group_by)}.svg")
        self._record("report", hash_json({"scores": hash_paths([self.out / SCORES_FILE]), "group_by": group_by}),
                     [svg], len(stats))
        return svg

    def process(self, stages: Sequence[str] = STAGES) -> Dict:
        """Run stages in order; the first failure stops the pipeline"""
        self.workflow_log = []
        results = {}
        for stage in stages:
            if stage not in STAGES:
                return {"error": f"unknown stage {stage}", "workflow_log": self.workflow_log}
            try:
                outcome = getattr(self, stage)()
            except TimelineEvalError as e:
                self.workflow_log.append(f"{stage}: failed ({e.code})")
                return {"error": e.to_diagnostic(), "workflow_log": self.workflow_log}
            if stage == "validate":
                results[stage] = outcome.counts()
                if outcome.has_errors:
                    self.workflow_log.append(f"validate: errors {outcome.counts()}")
                    return {"error": "validation found errors", "validation": results[stage],
                            "workflow_log": self.workflow_log}
            elif stage == "run":
                results[stage] = outcome
            elif stage == "report":
                results[stage] = str(outcome)
            else:
                results[stage] = len(outcome)
            self.workflow_log.append(f"{stage}: done")
        return {"results": results, "workflow_log": self.workflow_log, "status": "complete"}
