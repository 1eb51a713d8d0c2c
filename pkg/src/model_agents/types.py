"""
Request, response and backend configuration types for text generation
"""

from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

BACKEND_KINDS = ("http", "replay", "oracle", "stub-fixed")


class RetryPolicy(BaseModel):
    max_attempts: int = 3
    backoff_base: float = 1.0

    @field_validator("max_attempts")
    @classmethod
    def _at_least_one(cls, v: int) -> int:
        if v < 1:
            raise ValueError("max_attempts must be at least 1")
        return v

    def delay(self, attempt: int) -> float:
        """Seconds to wait after the given (0-based) failed attempt"""
        return self.backoff_base * (2 ** attempt)


class BackendConfig(BaseModel):
    kind: Literal["http", "replay", "oracle", "stub-fixed"] = "oracle"
    endpoint: Optional[str] = None
    model: Optional[str] = None
    # name of the env var that holds the token; the value itself is never stored
    auth_env: Optional[str] = "INFERENCE_API_TOKEN"
    api_style: Literal["chat", "completions"] = "chat"
    timeout: float = 60.0
    max_in_flight: int = 4
    retry: RetryPolicy = Field(default_factory=RetryPolicy)
    cache_path: Optional[str] = None
    cache_backend: Literal["jsonl", "redis"] = "jsonl"
    fixed_completion: str = ""

    @field_validator("max_in_flight")
    @classmethod
    def _positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("max_in_flight must be at least 1")
        return v

    @model_validator(mode="after")
    def _kind_requirements(self) -> "BackendConfig":
        if self.kind == "http" and not self.endpoint:
            raise ValueError("http backend requires an endpoint")
        if self.kind == "replay" and not self.cache_path and self.cache_backend == "jsonl":
            raise ValueError("replay backend requires a cache path")
        return self


class GenerationRequest(BaseModel):
    request_id: str
    prompt: str
    max_new_tokens: int = 16
    decoding: Literal["greedy", "sample"] = "greedy"
    temperature: float = 0.0
    stop: List[str] = Field(default_factory=list)

    @field_validator("prompt")
    @classmethod
    def _non_empty(cls, v: str) -> str:
        if not v:
            raise ValueError("prompt must not be empty")
        return v

    @field_validator("max_new_tokens")
    @classmethod
    def _positive_tokens(cls, v: int) -> int:
        if v <= 0:
            raise ValueError("max_new_tokens must be positive")
        return v

    def params(self, model: Optional[str] = None) -> Dict:
        """Decoding parameters that, with the prompt, identify a completion"""
        return {
            "model": model or "",
            "max_new_tokens": self.max_new_tokens,
            "decoding": self.decoding,
            "temperature": 0.0 if self.decoding == "greedy" else self.temperature,
            "stop": list(self.stop),
        }


class GenerationResponse(BaseModel):
    request_id: str
    completion: str
    latency_ms: float = 0.0
    backend_id: str = ""
    cache_hit: bool = False


class BatchResult(BaseModel):
    responses: List[GenerationResponse] = Field(default_factory=list)
    failures: Dict[str, str] = Field(default_factory=dict)

    @property
    def failed_ids(self) -> List[str]:
        return sorted(self.failures)
