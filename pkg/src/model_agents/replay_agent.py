from typing import Optional

from src.timeline.errors import CacheMiss
from .base_agent import BaseAgent
from .response_cache import cache_key
from .types import GenerationRequest, GenerationResponse


class ReplayAgent(BaseAgent):
    """Answers only from a completion cache; never contacts a server"""

    def __init__(self, cache, model: Optional[str] = None):
        super().__init__("ReplayAgent")
        self.cache = cache
        self.model = model or ""

    @property
    def backend_id(self) -> str:
        return f"replay:{self.model}" if self.model else "replay"

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        key = cache_key(request.prompt, request.params(self.model))
        completion = self.cache.get(key)
        if completion is None:
            raise CacheMiss(
                f"{request.request_id}: no cached completion",
                {"request_id": request.request_id, "key": key},
            )
        return GenerationResponse(
            request_id=request.request_id,
            completion=completion,
            backend_id=self.backend_id,
            cache_hit=True,
        )
