"""
Completion cache keyed by a content hash of (prompt, decoding params).

The default store is an append-only JSON-lines file; a Redis store is
available for runs shared between machines.
"""

import hashlib
import json
import logging
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Optional

import redis
from pydantic import BaseModel, ValidationError

logger = logging.getLogger(__name__)


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def cache_key(prompt: str, params: Dict) -> str:
    """Stable across runs and platforms: sha256 of canonical JSON"""
    return hashlib.sha256(_canonical({"prompt": prompt, "params": params}).encode("utf-8")).hexdigest()


class CacheEntry(BaseModel):
    key: str
    prompt_hash: str
    completion: str
    params: Dict
    timestamp: str = ""


class ResponseCache:
    """JSON-lines store; reads are lock-free, appends are serialized"""

    def __init__(self, path):
        self.path = Path(path)
        self._entries: Dict[str, CacheEntry] = {}
        self._lock = threading.Lock()
        self.load()

    def load(self):
        if not self.path.exists():
            return
        for lineno, line in enumerate(self.path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                entry = CacheEntry.model_validate_json(line)
            except ValidationError as e:
                logger.warning("%s:%d: skipping undecodable cache line (%s)", self.path, lineno, e.error_count())
                continue
            # first writer wins
            self._entries.setdefault(entry.key, entry)
        logger.info("Loaded %d cached completions from %s", len(self._entries), self.path)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def get(self, key: str) -> Optional[str]:
        entry = self._entries.get(key)
        return entry.completion if entry is not None else None

    def put(self, key: str, prompt: str, completion: str, params: Dict) -> bool:
        with self._lock:
            if key in self._entries:
                return False
            entry = CacheEntry(
                key=key,
                prompt_hash=prompt_hash(prompt),
                completion=completion,
                params=params,
                timestamp=datetime.now(timezone.utc).isoformat(),
            )
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(entry.model_dump_json() + "\n")
            self._entries[key] = entry
            return True


class RedisResponseCache:
    """Same interface as ResponseCache, one Redis hash per completion"""

    KEY_PREFIX = "completion:"

    # Default TTL: 90 days (in seconds)
    DEFAULT_TTL = 90 * 24 * 60 * 60

    def __init__(self, connection_url: str, ttl: int = DEFAULT_TTL, client=None):
        self.ttl = ttl
        try:
            self.client = client or redis.from_url(
                connection_url,
                decode_responses=True,
                socket_connect_timeout=5
            )
            self.client.ping()
            logger.info("Connected to Redis cache")
        except redis.ConnectionError as e:
            logger.error("Failed to connect to Redis: %s", e)
            raise

    def __contains__(self, key: str) -> bool:
        return self.get(key) is not None

    def get(self, key: str) -> Optional[str]:
        try:
            data = self.client.hgetall(f"{self.KEY_PREFIX}{key}")
        except redis.RedisError as e:
            logger.warning("Error reading cached completion %s: %s", key, e)
            return None
        return data.get("completion") if data else None

    def put(self, key: str, prompt: str, completion: str, params: Dict) -> bool:
        """
        Store a completion with expiration

        Returns:
            bool: True if stored, False on Redis errors or an existing entry
        """
        redis_key = f"{self.KEY_PREFIX}{key}"
        try:
            if self.client.exists(redis_key):
                return False
            pipe = self.client.pipeline()
            pipe.hset(redis_key, mapping={
                "key": key,
                "prompt_hash": prompt_hash(prompt),
                "completion": completion,
                "params": _canonical(params),
                "timestamp": datetime.now(timezone.utc).isoformat(),
            })
            pipe.expire(redis_key, self.ttl)
            pipe.execute()
            return True
        except redis.RedisError as e:
            logger.warning("Error storing completion %s: %s", key, e)
            return False
