import logging
import time
from os import getenv
from typing import Dict, Optional

import requests

from src.timeline.errors import GenerationTimeout, PermanentError, TransientError
from .base_agent import BaseAgent
from .types import BackendConfig, GenerationRequest, GenerationResponse

logger = logging.getLogger(__name__)


class HttpAgent(BaseAgent):
    """Client for any server speaking the chat/completions JSON protocol"""

    def __init__(self, config: BackendConfig, session: Optional[requests.Session] = None):
        super().__init__("HttpAgent")
        self.config = config
        self.session = session or requests.Session()
        self.model = config.model or getenv("MODEL") or ""

    @property
    def backend_id(self) -> str:
        return f"http:{self.model}" if self.model else "http"

    def _auth_headers(self) -> Dict[str, str]:
        headers = {"Content-Type": "application/json"}
        token = getenv(self.config.auth_env) if self.config.auth_env else None
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def payload(self, request: GenerationRequest) -> Dict:
        params = request.params(self.model)
        body = {
            "model": self.model,
            "max_tokens": request.max_new_tokens,
            "temperature": params["temperature"],
        }
        if request.stop:
            body["stop"] = list(request.stop)
        if self.config.api_style == "chat":
            body["messages"] = [{"role": "user", "content": request.prompt}]
        else:
            body["prompt"] = request.prompt
        return body

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        start = time.perf_counter()
        try:
            response = self.session.post(
                self.config.endpoint,
                json=self.payload(request),
                headers=self._auth_headers(),
                timeout=self.config.timeout,
            )
        except requests.exceptions.Timeout as e:
            raise GenerationTimeout(f"{request.request_id}: request timed out ({e})") from None
        except requests.exceptions.ConnectionError as e:
            raise TransientError(f"{request.request_id}: cannot reach {self.config.endpoint} ({e})") from None
        except (requests.exceptions.ChunkedEncodingError, requests.exceptions.ContentDecodingError) as e:
            raise TransientError(f"{request.request_id}: response body was cut off ({e})") from None
        except requests.exceptions.RequestException as e:
            raise PermanentError(f"{request.request_id}: request failed ({type(e).__name__}: {e})") from None

        status = response.status_code
        if status == 429 or status >= 500:
            raise TransientError(f"{request.request_id}: server answered {status}", {"status": status})
        if status >= 400:
            raise PermanentError(f"{request.request_id}: server answered {status}", {"status": status})

        try:
            completion = self.extract(response.json())
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise PermanentError(f"{request.request_id}: unexpected response body ({e})") from None
        return GenerationResponse(
            request_id=request.request_id,
            completion=completion,
            latency_ms=(time.perf_counter() - start) * 1000,
            backend_id=self.backend_id,
        )

    @staticmethod
    def extract(body: Dict) -> str:
        """First completion of a chat or plain completions response"""
        choice = body["choices"][0]
        if isinstance(choice.get("message"), dict):
            return choice["message"].get("content") or ""
        return choice.get("text") or ""
