from typing import Dict, Iterable

from src.timeline.errors import PermanentError
from src.timeline.schemas import PromptInstance
from .base_agent import BaseAgent
from .types import GenerationRequest, GenerationResponse


class OracleAgent(BaseAgent):
    """
    Returns the gold answer of each instance, rendered through its template.

    Requests are matched to instances by id, so request_id must equal the
    instance_id the request was built from.
    """

    def __init__(self, instances: Iterable[PromptInstance]):
        super().__init__("OracleAgent")
        self.references: Dict[str, str] = {i.instance_id: i.reference for i in instances}

    @property
    def backend_id(self) -> str:
        return "oracle"

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        if request.request_id not in self.references:
            raise PermanentError(f"{request.request_id}: unknown instance for oracle backend")
        return GenerationResponse(
            request_id=request.request_id,
            completion=self.references[request.request_id],
            backend_id=self.backend_id,
        )
