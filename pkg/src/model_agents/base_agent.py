import logging
import time
from typing import Callable

from src.timeline.errors import TransientError
from .types import GenerationRequest, GenerationResponse, RetryPolicy

logger = logging.getLogger(__name__)


class BaseAgent:
    def __init__(self, name: str = "BaseAgent"):
        self.name = name

    @property
    def backend_id(self) -> str:
        return self.name

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        """Must be implemented by subclasses"""
        raise NotImplementedError(f"{self.name} must implement generate()")

    def generate_with_retry(
        self,
        request: GenerationRequest,
        policy: RetryPolicy,
        sleep: Callable[[float], None] = time.sleep,
    ) -> GenerationResponse:
        """
        Call generate() and retry transient failures with exponential backoff

        Args:
            request: The request to send
            policy: Attempt limit and backoff base
            sleep: Waiting function, replaceable in tests

        Returns:
            The first successful response

        Raises:
            TransientError: when every attempt failed transiently
            PermanentError: immediately, without retrying
        """
        for attempt in range(policy.max_attempts):
            try:
                return self.generate(request)
            except TransientError as e:
                if attempt + 1 == policy.max_attempts:
                    self.log_action(f"{request.request_id} failed after {policy.max_attempts} attempts: {e}")
                    raise
                delay = policy.delay(attempt)
                self.log_action(f"{request.request_id} attempt {attempt + 1} failed ({e}); retrying in {delay:.1f}s")
                sleep(delay)

    def log_action(self, action: str):
        """Log agent actions"""
        logger.info("[%s] %s", self.name, action)
