"""
Records exchanged between pipeline stages.

Each record is a pydantic model persisted as one JSON line.
"""

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

FORMULATIONS = ("nli", "pairwise", "mrc", "timeline")
FLAVORS = ("plain", "cot", "code")
REPRESENTATIONS = ("eid", "star", "structured")
DATASETS = ("timeset", "temporal_nli", "matres", "tddiscourse", "torque")
BENCHMARK_SPLITS = ("train", "dev", "test")


class EventRef(BaseModel):
    """Event as shown in one prompt: the number it carries there, its id and mention"""
    index: int
    id: str
    mention: str


class PromptInstance(BaseModel):
    instance_id: str
    doc_id: str
    dataset: str = "timeset"
    formulation: str
    template_id: str
    flavor: str = "plain"
    representation: str = "eid"
    n_demos: int = 0
    demo_ids: List[str] = Field(default_factory=list)
    query: Dict[str, Any] = Field(default_factory=dict)
    prompt: str
    gold: Any = None
    # gold answer written the way the template expects the model to continue
    reference: str = ""
    seed: int = 0
    max_new_tokens: int = 16
    events: List[EventRef] = Field(default_factory=list)

    @field_validator("formulation")
    @classmethod
    def _known_formulation(cls, v: str) -> str:
        if v not in FORMULATIONS:
            raise ValueError(f"formulation must be one of {FORMULATIONS}")
        return v

    @model_validator(mode="after")
    def _gold_matches_formulation(self) -> "PromptInstance":
        if self.dataset != "timeset" or self.gold is None:
            return self
        expected = {"nli": bool, "pairwise": str, "mrc": list, "timeline": list}[self.formulation]
        if not isinstance(self.gold, expected):
            raise ValueError(f"{self.formulation} gold must be {expected.__name__}")
        return self


class PredictionRecord(BaseModel):
    instance_id: str
    doc_id: str = ""
    formulation: str = ""
    raw: str = ""
    status: str = "abstain"  # ok | abstain
    payload: Any = None
    unplaced: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _abstain_has_no_payload(self) -> "PredictionRecord":
        if self.status not in ("ok", "abstain"):
            raise ValueError("status must be ok or abstain")
        if self.status == "abstain" and self.payload is not None:
            raise ValueError("abstained record cannot carry a payload")
        return self

    @property
    def ok(self) -> bool:
        return self.status == "ok"


class BenchmarkInstance(BaseModel):
    dataset: str
    id: str
    doc_id: str = ""
    context: str
    query: Dict[str, Any] = Field(default_factory=dict)
    gold: Any = None
    split: str

    @field_validator("split")
    @classmethod
    def _known_split(cls, v: str) -> str:
        if v not in BENCHMARK_SPLITS:
            raise ValueError("split must be train, dev or test")
        return v


class ScoreRow(BaseModel):
    """Score of one document (or one benchmark run) under one configuration"""
    model: str = ""
    model_size: str = ""
    dataset: str = "timeset"
    formulation: str = ""
    template_id: str = ""
    flavor: str = "plain"
    representation: str = "eid"
    n_demos: int = 0
    seed: int = 0
    doc_id: str = ""
    era: str = ""
    topic: str = ""
    word_bin: str = ""
    event_bin: str = ""
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    score: float = 0.0


class MetricReport(BaseModel):
    rows: List[ScoreRow] = Field(default_factory=list)
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    group: Dict[str, Any] = Field(default_factory=dict)


class AggregateStats(BaseModel):
    group: Dict[str, Any] = Field(default_factory=dict)
    count: int
    median: float
    q1: float
    q3: float
    iqr: float
    mean: float = 0.0
    whisker_low: float = 0.0
    whisker_high: float = 0.0
    minimum: Optional[float] = None
    maximum: Optional[float] = None

    @model_validator(mode="after")
    def _ordered_quartiles(self) -> "AggregateStats":
        if not (self.q1 <= self.median <= self.q3):
            raise ValueError("quartiles out of order")
        return self
