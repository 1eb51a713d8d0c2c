"""
Exception hierarchy for the timeline evaluation harness.

Every error carries a short machine-readable code and a details dict so the
CLI can emit it as a JSON diagnostic.
"""

from typing import Any, Dict, Optional


class TimelineEvalError(Exception):
    """Base class for all harness errors"""

    code = "error"

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_diagnostic(self) -> Dict[str, Any]:
        return {
            "severity": "error",
            "code": self.code,
            "message": self.message,
            **({"details": self.details} if self.details else {}),
        }


class ConfigError(TimelineEvalError):
    code = "config_error"


# Graph errors
class GraphError(TimelineEvalError):
    code = "graph_error"


class CyclicGraph(GraphError):
    code = "cyclic_graph"

    def __init__(self, cycles, message: str = "graph contains a cycle"):
        super().__init__(message, {"cycles": [list(c) for c in cycles]})
        self.cycles = cycles


class UnknownEvent(GraphError):
    code = "unknown_event"


# Annotation errors
class AnnotationError(TimelineEvalError):
    code = "annotation_error"


class OffsetMismatch(AnnotationError):
    code = "offset_mismatch"


class DanglingReference(AnnotationError):
    code = "dangling_reference"


class UnknownLabel(AnnotationError):
    code = "unknown_label"


class OverlappingSpans(AnnotationError):
    code = "overlapping_spans"


class AmbiguousMarkers(AnnotationError):
    code = "ambiguous_markers"


class MissingPair(AnnotationError):
    code = "missing_pair"


class ManifestError(AnnotationError):
    code = "manifest_error"


# Formulation errors
class FormulationError(TimelineEvalError):
    code = "formulation_error"


class TooFewEvents(FormulationError):
    code = "too_few_events"


class InsufficientDevDocs(FormulationError):
    code = "insufficient_dev_docs"


class BudgetExceeded(FormulationError):
    code = "budget_exceeded"


class MissingSlot(FormulationError):
    code = "missing_slot"


class TemplateError(FormulationError):
    code = "template_error"


# Interpretation errors
class InterpretationError(TimelineEvalError):
    code = "interpretation_error"


class MixedFormulations(InterpretationError):
    code = "mixed_formulations"


# Backend errors
class BackendError(TimelineEvalError):
    code = "backend_error"


class TransientError(BackendError):
    """Retryable failure: connection refused, 5xx, rate limiting"""
    code = "transient"


class PermanentError(BackendError):
    """Non-retryable failure: auth or other 4xx"""
    code = "permanent"


class CacheMiss(BackendError):
    code = "cache_miss"


class GenerationTimeout(TransientError):
    code = "timeout"


# Adapter errors
class AdapterError(TimelineEvalError):
    code = "adapter_error"


class MissingSource(AdapterError):
    code = "missing_source"


class FormatError(AdapterError):
    code = "format_error"
