"""
Command line entry point.

    python -m src.harness.cli validate --corpus data/timeset
    python -m src.harness.cli generate --config run.json
    python -m src.harness.cli run --config run.json
    python -m src.harness.cli score --config run.json
    python -m src.harness.cli report --config run.json --group-by era

Exit codes: 0 success, 1 validation errors, 2 any other failure (a JSON
diagnostic is written to stderr).
"""

import argparse
import json
import logging
import sys
from os import getenv
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from src.model_agents.types import BACKEND_KINDS
from src.timeline.annotation import load_corpus
from src.timeline.errors import ConfigError, TimelineEvalError
from src.timeline.metrics import iaa
from src.timeline.schemas import DATASETS, FLAVORS, FORMULATIONS, REPRESENTATIONS
from .config import GROUP_KEYS, load_config
from .overseer import Overseer

logger = logging.getLogger(__name__)

# flag dest -> RunConfig field
CONFIG_FLAGS = {
    "corpus": "corpus",
    "dataset": "dataset",
    "dataset_path": "dataset_path",
    "formulations": "formulations",
    "template_dir": "template_dir",
    "templates": "template_ids",
    "representation": "representation",
    "flavor": "flavor",
    "shots": "shots",
    "seeds": "seeds",
    "budget": "budget",
    "query_split": "query_split",
    "model_size": "model_size",
    "group_by": "group_by",
    "word_bins": "word_bin_edges",
    "event_bins": "event_bin_edges",
    "output_dir": "output_dir",
    "backend": "backend.kind",
    "endpoint": "backend.endpoint",
    "model": "backend.model",
    "auth_env": "backend.auth_env",
    "api_style": "backend.api_style",
    "cache": "backend.cache_path",
    "cache_backend": "backend.cache_backend",
    "max_in_flight": "backend.max_in_flight",
    "fixed_completion": "backend.fixed_completion",
}


def _emit_json(obj, stream=None):
    (stream or sys.stdout).write(json.dumps(obj, sort_keys=True) + "\n")


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="run configuration JSON")
    p.add_argument("--corpus", help="TimeSET directory (.txt/.ann pairs + manifest.jsonl)")
    p.add_argument("--dataset", choices=DATASETS)
    p.add_argument("--dataset-path", dest="dataset_path", help="benchmark files or interchange JSONL")
    p.add_argument("--formulations", nargs="+", choices=FORMULATIONS)
    p.add_argument("--template-dir", dest="template_dir")
    p.add_argument("--templates", nargs="+", help="template ids to use")
    p.add_argument("--representation", choices=REPRESENTATIONS)
    p.add_argument("--flavor", choices=FLAVORS)
    p.add_argument("--shots", nargs="+", type=int)
    p.add_argument("--seeds", nargs="+", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--query-split", dest="query_split")
    p.add_argument("--model-size", dest="model_size")
    p.add_argument("--group-by", dest="group_by", nargs="*", choices=GROUP_KEYS)
    p.add_argument("--word-bins", dest="word_bins", nargs="+", type=float)
    p.add_argument("--event-bins", dest="event_bins", nargs="+", type=float)
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--backend", choices=BACKEND_KINDS)
    p.add_argument("--endpoint")
    p.add_argument("--model")
    p.add_argument("--auth-env", dest="auth_env", help="name of the env var holding the API token")
    p.add_argument("--api-style", dest="api_style", choices=("chat", "completions"))
    p.add_argument("--cache", help="response cache JSONL")
    p.add_argument("--cache-backend", dest="cache_backend", choices=("jsonl", "redis"))
    p.add_argument("--max-in-flight", dest="max_in_flight", type=int)
    p.add_argument("--fixed-completion", dest="fixed_completion")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="timeline-eval",
                                     description="Timeline construction evaluation with prompted language models")
    parser.add_argument("--log-level", dest="log_level", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("validate", "Check the corpus and draw one graph per document"),
        ("generate", "Build prompt instances"),
        ("run", "Send prompts to the backend and parse the answers"),
        ("score", "Assemble predicted timelines and score them"),
        ("aggregate", "Median/IQR statistics per group (CSV and JSON)"),
        ("report", "Aggregate and draw boxplots"),
        ("all", "Every stage in order"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_run_flags(p)

    agreement = sub.add_parser("iaa", help="Agreement between two annotations of the same documents")
    agreement.add_argument("--a", required=True, help="corpus directory of the first annotator")
    agreement.add_argument("--b", required=True, help="corpus directory of the second annotator")
    agreement.add_argument("--coref", help="JSON {doc_id: {span: canonical span}}")
    return parser


def overrides_from(args: argparse.Namespace) -> Dict[str, Any]:
    return {field: getattr(args, flag, None) for flag, field in CONFIG_FLAGS.items()}


def cmd_validate(overseer: Overseer) -> int:
    report = overseer.validate()
    for diagnostic in report.diagnostics:
        _emit_json(diagnostic.model_dump(), sys.stderr)
    _emit_json({"documents": len(report.documents), "diagnostics": report.counts(),
                "statistics": report.statistics, "figures": len(report.figures)})
    return 1 if report.has_errors else 0


def cmd_iaa(args: argparse.Namespace) -> int:
    docs_a = {d.doc_id: d for d in load_corpus(args.a)}
    docs_b = {d.doc_id: d for d in load_corpus(args.b)}
    coref: Dict[str, Dict[str, str]] = {}
    if args.coref:
        try:
            coref = json.loads(Path(args.coref).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read coreference map {args.coref} ({e})") from None
    shared = sorted(set(docs_a) & set(docs_b))
    if not shared:
        raise ConfigError("the two annotation sets share no document ids")
    per_doc = {doc_id: iaa(docs_a[doc_id], docs_b[doc_id], coref.get(doc_id)) for doc_id in shared}
    mean = {k: sum(r[k] for r in per_doc.values()) / len(per_doc) for k in ("dice", "ta_all", "ta_common")}
    _emit_json({"documents": per_doc, "mean": mean})
    return 0


def dispatch(args: argparse.Namespace) -> int:
    if args.command == "iaa":
        return cmd_iaa(args)
    config = load_config(args.config, overrides_from(args))
    overseer = Overseer(config)
    if args.command == "validate":
        return cmd_validate(overseer)
    if args.command == "all":
        result = overseer.process()
        _emit_json(result)
        return 0 if result.get("status") == "complete" else (1 if "validation" in result else 2)
    if args.command == "generate":
        _emit_json({"instances": len(overseer.generate())})
    elif args.command == "run":
        _emit_json(overseer.run())
    elif args.command == "score":
        _emit_json({"rows": len(overseer.score())})
    elif args.command == "aggregate":
        _emit_json({"groups": [s.model_dump() for s in overseer.aggregate()]})
    elif args.command == "report":
        _emit_json({"figure": str(overseer.report())})
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    level = (args.log_level or getenv("TIMELINE_EVAL_LOG_LEVEL") or "INFO").upper()
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except TimelineEvalError as e:
        _emit_json(e.to_diagnostic(), sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
