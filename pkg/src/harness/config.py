"""
Run configuration: one JSON file, every field overridable from the command line.

Secrets never live here; BackendConfig.auth_env names the environment
variable that holds the token.
"""

import json
import logging
from os import getenv
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator

from src.model_agents.types import BackendConfig
from src.timeline.errors import ConfigError
from src.timeline.formulations import DEFAULT_BUDGET
from src.timeline.schemas import DATASETS, FLAVORS, FORMULATIONS, REPRESENTATIONS

logger = logging.getLogger(__name__)

GROUP_KEYS = ("model", "model_size", "dataset", "formulation", "template_id", "flavor",
              "representation", "n_demos", "seed", "era", "topic", "word_bin", "event_bin")


class RunConfig(BaseModel):
    corpus: Optional[str] = None
    dataset: str = "timeset"
    # upstream files of a benchmark dataset, or an interchange JSONL
    dataset_path: Optional[str] = None
    backend: BackendConfig = Field(default_factory=BackendConfig)
    formulations: List[str] = Field(default_factory=lambda: list(FORMULATIONS))
    template_dir: Optional[str] = None
    template_ids: List[str] = Field(default_factory=list)
    representation: str = "eid"
    flavor: str = "plain"
    shots: List[int] = Field(default_factory=lambda: [0])
    seeds: List[int] = Field(default_factory=lambda: [0])
    budget: int = DEFAULT_BUDGET
    skip_overflow: bool = True
    query_split: str = "test"
    model_size: str = ""
    group_by: List[str] = Field(default_factory=lambda: ["formulation"])
    word_bin_edges: Optional[List[float]] = None
    event_bin_edges: Optional[List[float]] = None
    output_dir: str = "runs/default"

    @field_validator("dataset")
    @classmethod
    def _known_dataset(cls, v: str) -> str:
        if v not in DATASETS:
            raise ValueError(f"dataset must be one of {DATASETS}")
        return v

    @field_validator("formulations")
    @classmethod
    def _known_formulations(cls, v: List[str]) -> List[str]:
        unknown = sorted(set(v) - set(FORMULATIONS))
        if unknown:
            raise ValueError(f"unknown formulations {unknown}")
        return v

    @field_validator("representation")
    @classmethod
    def _known_representation(cls, v: str) -> str:
        if v not in REPRESENTATIONS:
            raise ValueError(f"representation must be one of {REPRESENTATIONS}")
        return v

    @field_validator("flavor")
    @classmethod
    def _known_flavor(cls, v: str) -> str:
        if v not in FLAVORS:
            raise ValueError(f"flavor must be one of {FLAVORS}")
        return v

    @field_validator("shots")
    @classmethod
    def _non_negative_shots(cls, v: List[int]) -> List[int]:
        if not v or any(n < 0 for n in v):
            raise ValueError("shots must be a non-empty list of non-negative counts")
        return v

    @field_validator("seeds")
    @classmethod
    def _explicit_seeds(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("at least one seed is required")
        return v

    @field_validator("group_by")
    @classmethod
    def _known_group_keys(cls, v: List[str]) -> List[str]:
        unknown = sorted(set(v) - set(GROUP_KEYS))
        if unknown:
            raise ValueError(f"unknown grouping keys {unknown}; choose from {GROUP_KEYS}")
        return v

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def check_paths(self):
        """Referenced inputs must exist before any stage runs"""
        missing = []
        if self.dataset == "timeset":
            if not self.corpus:
                raise ConfigError("timeset runs need a corpus directory")
            if not Path(self.corpus).is_dir():
                missing.append(self.corpus)
        elif not self.dataset_path or not Path(self.dataset_path).exists():
            missing.append(self.dataset_path or "<dataset_path>")
        if self.template_dir and not Path(self.template_dir).is_dir():
            missing.append(self.template_dir)
        if missing:
            raise ConfigError(f"paths do not exist: {missing}", {"paths": missing})

    def snapshot(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Read a RunConfig from JSON and apply overrides (unset values are ignored)

    Raises:
        ConfigError: unreadable file or invalid field values
    """
    load_dotenv()
    data: Dict[str, Any] = {}
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON ({e})") from None

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key.startswith("backend."):
            data.setdefault("backend", {})[key.split(".", 1)[1]] = value
        else:
            data[key] = value

    backend = data.setdefault("backend", {})
    if not backend.get("model") and getenv("MODEL"):
        backend["model"] = getenv("MODEL")

    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        errors = [{"loc": [str(p) for p in err["loc"]], "msg": err["msg"]} for err in e.errors()]
        raise ConfigError("invalid run configuration", {"errors": errors}) from None
    logger.debug("Loaded run configuration for %s", config.dataset)
    return config
