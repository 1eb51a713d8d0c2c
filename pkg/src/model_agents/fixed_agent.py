from .base_agent import BaseAgent
from .types import GenerationRequest, GenerationResponse


class FixedAgent(BaseAgent):
    """Same completion for every prompt"""

    def __init__(self, completion: str = ""):
        super().__init__("FixedAgent")
        self.completion = completion

    @property
    def backend_id(self) -> str:
        return "stub-fixed"

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        return GenerationResponse(
            request_id=request.request_id,
            completion=self.completion,
            backend_id=self.backend_id,
        )
