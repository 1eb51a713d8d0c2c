"""
Uniform entry point over the generation backends.

ModelClient owns one agent, an optional response cache and the retry policy.
Live backends consult the cache before calling out and append on a miss, so a
rerun over the same prompts makes no backend calls.
"""

import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from os import getenv
from typing import Callable, Iterable, List, Optional

from tqdm import tqdm

from src.timeline.errors import BackendError, ConfigError
from src.timeline.schemas import PromptInstance
from .base_agent import BaseAgent
from .fixed_agent import FixedAgent
from .http_agent import HttpAgent
from .oracle_agent import OracleAgent
from .replay_agent import ReplayAgent
from .response_cache import RedisResponseCache, ResponseCache, cache_key
from .types import BackendConfig, BatchResult, GenerationRequest, GenerationResponse

logger = logging.getLogger(__name__)


def open_cache(config: BackendConfig):
    """Cache store named by the config, or None when caching is off"""
    if config.cache_backend == "redis":
        url = getenv("TIMELINE_EVAL_REDIS_URL")
        if not url:
            raise ConfigError("cache_backend 'redis' needs TIMELINE_EVAL_REDIS_URL")
        return RedisResponseCache(url)
    if config.cache_path:
        return ResponseCache(config.cache_path)
    return None


def build_agent(config: BackendConfig, cache=None,
                instances: Optional[Iterable[PromptInstance]] = None) -> BaseAgent:
    if config.kind == "http":
        return HttpAgent(config)
    if config.kind == "replay":
        if cache is None:
            raise ConfigError("replay backend has no cache to read from")
        return ReplayAgent(cache, config.model or getenv("MODEL"))
    if config.kind == "oracle":
        if instances is None:
            raise ConfigError("oracle backend needs the prompt instances")
        return OracleAgent(instances)
    return FixedAgent(config.fixed_completion)


class ModelClient:
    def __init__(
        self,
        config: BackendConfig,
        cache=None,
        instances: Optional[Iterable[PromptInstance]] = None,
        agent: Optional[BaseAgent] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self.cache = cache if cache is not None else open_cache(config)
        self.agent = agent or build_agent(config, self.cache, instances)
        self.sleep = sleep
        self.backend_calls = 0
        self._in_flight = 0
        self.peak_in_flight = 0
        self._counter_lock = threading.Lock()

    @property
    def model(self) -> str:
        return getattr(self.agent, "model", "") or ""

    @property
    def caches_live_calls(self) -> bool:
        return self.cache is not None and self.config.kind in ("http", "stub-fixed")

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        """
        One completion, from the cache when possible

        Raises:
            TransientError: retries exhausted
            PermanentError: auth failures and other 4xx answers
            CacheMiss: replay backend without a stored completion
        """
        key = None
        if self.caches_live_calls:
            params = request.params(self.model)
            key = cache_key(request.prompt, params)
            cached = self.cache.get(key)
            if cached is not None:
                return GenerationResponse(
                    request_id=request.request_id,
                    completion=cached,
                    backend_id=self.agent.backend_id,
                    cache_hit=True,
                )

        with self._counter_lock:
            self.backend_calls += 1
            self._in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self._in_flight)
        try:
            response = self.agent.generate_with_retry(request, self.config.retry, self.sleep)
        finally:
            with self._counter_lock:
                self._in_flight -= 1

        if key is not None:
            self.cache.put(key, request.prompt, response.completion, request.params(self.model))
        return response

    def generate_batch(self, requests: List[GenerationRequest], progress: bool = True) -> BatchResult:
        """
        Run requests with at most max_in_flight outstanding at once

        Responses come back in input order; failed requests are reported by id
        instead of aborting the batch.
        """
        ids = [r.request_id for r in requests]
        if len(set(ids)) != len(ids):
            raise ConfigError("request ids in a batch must be unique")

        slots: List[Optional[GenerationResponse]] = [None] * len(requests)
        failures = {}

        def work(position: int):
            request = requests[position]
            try:
                slots[position] = self.generate(request)
            except BackendError as e:
                failures[request.request_id] = f"{e.code}: {e.message}"

        with ThreadPoolExecutor(max_workers=self.config.max_in_flight) as pool:
            futures = [pool.submit(work, i) for i in range(len(requests))]
            for future in tqdm(futures, total=len(futures), desc="generate",
                               disable=None if progress else True, leave=False):
                future.result()

        if failures:
            logger.warning("%d of %d requests failed", len(failures), len(requests))
        return BatchResult(
            responses=[r for r in slots if r is not None],
            failures=dict(sorted(failures.items())),
        )


def generate(config: BackendConfig, request: GenerationRequest, **kwargs) -> GenerationResponse:
    return ModelClient(config, **kwargs).generate(request)


def generate_batch(config: BackendConfig, requests: List[GenerationRequest], **kwargs) -> BatchResult:
    return ModelClient(config, **kwargs).generate_batch(requests)
