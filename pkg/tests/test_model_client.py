import json
import os
import threading
import time

import pytest
import requests
from pydantic import ValidationError

from src.model_agents.base_agent import BaseAgent
from src.model_agents.client import ModelClient, build_agent, generate_batch, open_cache
from src.model_agents.http_agent import HttpAgent
from src.model_agents.oracle_agent import OracleAgent
from src.model_agents.replay_agent import ReplayAgent
from src.model_agents.response_cache import RedisResponseCache, ResponseCache, cache_key
from src.model_agents.types import BackendConfig, GenerationRequest, GenerationResponse, RetryPolicy
from src.timeline.errors import CacheMiss, ConfigError, GenerationTimeout, PermanentError, TransientError
from src.timeline.schemas import PromptInstance

ENDPOINT = "http://localhost:9999/v1/chat/completions"


class FakeResponse:
    def __init__(self, status_code, body=None):
        self.status_code = status_code
        self._body = body

    def json(self):
        if self._body is None:
            raise ValueError("no JSON body")
        return self._body


def chat_body(text):
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


@pytest.fixture
def scripted_post(monkeypatch):
    """Replace Session.post with a queue of canned answers; records every call"""
    calls = []
    script = []

    def fake_post(self, url, json=None, headers=None, timeout=None):
        calls.append({"url": url, "json": json, "headers": headers, "timeout": timeout})
        outcome = script.pop(0) if len(script) > 1 else script[0]
        if isinstance(outcome, Exception):
            raise outcome
        return outcome

    monkeypatch.setattr(requests.Session, "post", fake_post)
    return script, calls


def http_config(**kw):
    return BackendConfig(kind="http", endpoint=ENDPOINT, model="tiny-model", **kw)


def request(rid="r1", prompt="Passage:\nThe dam burst.\nAnswer:", **kw):
    return GenerationRequest(request_id=rid, prompt=prompt, **kw)


def instance(k):
    return PromptInstance(instance_id=f"doc:mrc:{k:03d}", doc_id="doc", formulation="mrc",
                          template_id="mrc_01", prompt=f"question {k}", reference=f"answer {k}")


class SlowAgent(BaseAgent):
    def __init__(self, delay=0.01):
        super().__init__("SlowAgent")
        self.delay = delay
        self.active = 0
        self.peak = 0
        self._lock = threading.Lock()

    def generate(self, req):
        with self._lock:
            self.active += 1
            self.peak = max(self.peak, self.active)
        time.sleep(self.delay)
        with self._lock:
            self.active -= 1
        return GenerationResponse(request_id=req.request_id, completion=req.prompt.upper(), backend_id="slow")


class FakeRedis:
    """Just the commands RedisResponseCache uses"""

    def __init__(self):
        self.hashes = {}
        self.ttls = {}

    def ping(self):
        return True

    def hgetall(self, key):
        return dict(self.hashes.get(key, {}))

    def exists(self, key):
        return int(key in self.hashes)

    def pipeline(self):
        return FakePipeline(self)


class FakePipeline:
    def __init__(self, store):
        self.store = store
        self.ops = []

    def hset(self, key, mapping):
        self.ops.append(lambda: self.store.hashes.setdefault(key, {}).update(mapping))

    def expire(self, key, ttl):
        self.ops.append(lambda: self.store.ttls.__setitem__(key, ttl))

    def execute(self):
        for op in self.ops:
            op()


class TestHttpAgent:
    def test_chat_payload(self, scripted_post, monkeypatch):
        script, calls = scripted_post
        script.append(FakeResponse(200, chat_body("BEFORE")))
        monkeypatch.setenv("INFERENCE_API_TOKEN", "secret-token")
        response = HttpAgent(http_config()).generate(request(stop=["\n\n"]))
        assert response.completion == "BEFORE"
        assert response.backend_id == "http:tiny-model"
        sent = calls[0]
        assert sent["url"] == ENDPOINT
        assert sent["json"]["messages"] == [{"role": "user", "content": "Passage:\nThe dam burst.\nAnswer:"}]
        assert sent["json"]["temperature"] == 0.0
        assert sent["json"]["stop"] == ["\n\n"]
        assert sent["headers"]["Authorization"] == "Bearer secret-token"

    def test_completions_style(self, scripted_post, monkeypatch):
        script, calls = scripted_post
        script.append(FakeResponse(200, {"choices": [{"text": " AFTER"}]}))
        monkeypatch.delenv("INFERENCE_API_TOKEN", raising=False)
        response = HttpAgent(http_config(api_style="completions")).generate(request())
        assert response.completion == " AFTER"
        assert calls[0]["json"]["prompt"].startswith("Passage:")
        assert "Authorization" not in calls[0]["headers"]

    def test_model_from_environment(self, monkeypatch):
        monkeypatch.setenv("MODEL", "env-model")
        agent = HttpAgent(BackendConfig(kind="http", endpoint=ENDPOINT))
        assert agent.model == "env-model"

    @pytest.mark.parametrize("status", [429, 500, 503])
    def test_transient_status(self, scripted_post, status):
        script, _ = scripted_post
        script.append(FakeResponse(status))
        with pytest.raises(TransientError):
            HttpAgent(http_config()).generate(request())

    @pytest.mark.parametrize("status", [400, 401, 404])
    def test_permanent_status(self, scripted_post, status):
        script, _ = scripted_post
        script.append(FakeResponse(status))
        with pytest.raises(PermanentError) as info:
            HttpAgent(http_config()).generate(request())
        assert info.value.details["status"] == status

    def test_timeout(self, scripted_post):
        script, _ = scripted_post
        script.append(requests.exceptions.Timeout("read timed out"))
        with pytest.raises(GenerationTimeout):
            HttpAgent(http_config()).generate(request())

    @pytest.mark.parametrize("error", [requests.exceptions.ChunkedEncodingError("stream ended early"),
                                       requests.exceptions.ContentDecodingError("bad gzip")])
    def test_broken_body_is_transient(self, scripted_post, error):
        script, _ = scripted_post
        script.append(error)
        with pytest.raises(TransientError):
            HttpAgent(http_config()).generate(request())

    @pytest.mark.parametrize("error", [requests.exceptions.TooManyRedirects("30 redirects"),
                                       requests.exceptions.MissingSchema("no scheme"),
                                       requests.exceptions.InvalidURL("bad url")])
    def test_other_request_errors_are_permanent(self, scripted_post, error):
        script, _ = scripted_post
        script.append(error)
        with pytest.raises(PermanentError):
            HttpAgent(http_config()).generate(request())

    def test_unexpected_body(self, scripted_post):
        script, _ = scripted_post
        script.append(FakeResponse(200, {"result": "BEFORE"}))
        with pytest.raises(PermanentError):
            HttpAgent(http_config()).generate(request())


class TestRetry:
    def test_recovers_after_transient_failures(self, scripted_post):
        script, calls = scripted_post
        script.extend([FakeResponse(503), requests.exceptions.ConnectionError("refused"),
                       FakeResponse(200, chat_body("VAGUE"))])
        waits = []
        policy = RetryPolicy(max_attempts=3, backoff_base=0.5)
        response = HttpAgent(http_config()).generate_with_retry(request(), policy, waits.append)
        assert response.completion == "VAGUE"
        assert len(calls) == 3
        assert waits == [0.5, 1.0]

    def test_gives_up(self, scripted_post):
        script, calls = scripted_post
        script.append(FakeResponse(502))
        waits = []
        with pytest.raises(TransientError):
            HttpAgent(http_config()).generate_with_retry(request(), RetryPolicy(max_attempts=4), waits.append)
        assert len(calls) == 4
        assert waits == [1.0, 2.0, 4.0]

    def test_permanent_is_not_retried(self, scripted_post):
        script, calls = scripted_post
        script.append(FakeResponse(401))
        with pytest.raises(PermanentError):
            HttpAgent(http_config()).generate_with_retry(request(), RetryPolicy(), lambda s: None)
        assert len(calls) == 1

    def test_policy_bounds(self):
        with pytest.raises(ValidationError):
            RetryPolicy(max_attempts=0)


class TestConfigValidation:
    def test_http_needs_endpoint(self):
        with pytest.raises(ValidationError):
            BackendConfig(kind="http")

    def test_replay_needs_cache(self):
        with pytest.raises(ValidationError):
            BackendConfig(kind="replay")

    def test_request_bounds(self):
        with pytest.raises(ValidationError):
            GenerationRequest(request_id="r", prompt="")
        with pytest.raises(ValidationError):
            GenerationRequest(request_id="r", prompt="p", max_new_tokens=0)

    def test_greedy_ignores_temperature(self):
        assert request(temperature=0.7).params("m")["temperature"] == 0.0
        assert request(decoding="sample", temperature=0.7).params("m")["temperature"] == 0.7

    def test_redis_cache_needs_url(self, monkeypatch):
        monkeypatch.delenv("TIMELINE_EVAL_REDIS_URL", raising=False)
        with pytest.raises(ConfigError):
            open_cache(BackendConfig(kind="oracle", cache_backend="redis"))

    def test_replay_agent_needs_cache(self):
        with pytest.raises(ConfigError):
            build_agent(BackendConfig(kind="replay", cache_backend="redis"), cache=None)


class TestResponseCache:
    def test_key_ignores_param_order(self):
        a = cache_key("prompt", {"model": "m", "max_new_tokens": 16})
        b = cache_key("prompt", {"max_new_tokens": 16, "model": "m"})
        assert a == b
        assert len(a) == 64
        assert a != cache_key("prompt", {"model": "m", "max_new_tokens": 17})
        assert a != cache_key("prompt ", {"model": "m", "max_new_tokens": 16})

    def test_first_writer_wins(self, tmp_path):
        cache = ResponseCache(tmp_path / "cache.jsonl")
        assert cache.put("k", "p", "first", {}) is True
        assert cache.put("k", "p", "second", {}) is False
        assert cache.get("k") == "first"
        assert len((tmp_path / "cache.jsonl").read_text().splitlines()) == 1

    def test_reload_skips_bad_lines(self, tmp_path):
        path = tmp_path / "cache.jsonl"
        ResponseCache(path).put("k1", "p", "one", {"model": "m"})
        with open(path, "a") as f:
            f.write("{not json\n")
            f.write(json.dumps({"key": "k1", "prompt_hash": "x", "completion": "late", "params": {}}) + "\n")
        reloaded = ResponseCache(path)
        assert len(reloaded) == 1
        assert "k1" in reloaded
        assert reloaded.get("k1") == "one"
        assert reloaded.get("k2") is None

    def test_redis_store(self):
        fake = FakeRedis()
        cache = RedisResponseCache("redis://unused", ttl=60, client=fake)
        assert cache.get("k") is None
        assert cache.put("k", "p", "BEFORE", {"model": "m"}) is True
        assert cache.put("k", "p", "AFTER", {"model": "m"}) is False
        assert cache.get("k") == "BEFORE"
        assert "k" in cache
        assert fake.ttls["completion:k"] == 60

    @pytest.mark.skipif(not os.getenv("TIMELINE_EVAL_REDIS_URL"), reason="needs a Redis server")
    def test_live_redis(self):
        cache = RedisResponseCache(os.environ["TIMELINE_EVAL_REDIS_URL"], ttl=60)
        key = cache_key("live redis check", {"model": "test"})
        cache.put(key, "live redis check", "ok", {"model": "test"})
        assert cache.get(key) == "ok"


class TestReplay:
    def test_hit_and_miss(self, tmp_path):
        cache = ResponseCache(tmp_path / "cache.jsonl")
        req = request()
        cache.put(cache_key(req.prompt, req.params("m")), req.prompt, "BEFORE", req.params("m"))
        agent = ReplayAgent(cache, "m")
        response = agent.generate(req)
        assert response.completion == "BEFORE"
        assert response.cache_hit is True
        assert response.backend_id == "replay:m"
        with pytest.raises(CacheMiss) as info:
            agent.generate(request(rid="r2", prompt="another prompt"))
        assert info.value.details["request_id"] == "r2"

    def test_model_is_part_of_the_key(self, tmp_path):
        cache = ResponseCache(tmp_path / "cache.jsonl")
        req = request()
        cache.put(cache_key(req.prompt, req.params("m")), req.prompt, "BEFORE", req.params("m"))
        with pytest.raises(CacheMiss):
            ReplayAgent(cache, "other").generate(req)


class TestModelClient:
    def test_oracle_batch_keeps_input_order(self):
        instances = [instance(k) for k in range(100)]
        config = BackendConfig(kind="oracle", max_in_flight=8)
        requests_ = [GenerationRequest(request_id=i.instance_id, prompt=i.prompt) for i in instances]
        result = ModelClient(config, instances=instances).generate_batch(requests_, progress=False)
        assert [r.request_id for r in result.responses] == [i.instance_id for i in instances]
        assert [r.completion for r in result.responses] == [f"answer {k}" for k in range(100)]
        assert result.failures == {}

    def test_one_failure_does_not_abort(self):
        instances = [instance(k) for k in range(5)]
        requests_ = [GenerationRequest(request_id=i.instance_id, prompt=i.prompt) for i in instances]
        requests_.insert(2, GenerationRequest(request_id="doc:mrc:unknown", prompt="?"))
        result = ModelClient(BackendConfig(kind="oracle"), instances=instances).generate_batch(requests_, progress=False)
        assert len(result.responses) == 5
        assert result.failed_ids == ["doc:mrc:unknown"]
        assert result.failures["doc:mrc:unknown"].startswith("permanent:")

    def test_duplicate_ids(self):
        client = ModelClient(BackendConfig(kind="stub-fixed"))
        with pytest.raises(ConfigError):
            client.generate_batch([request("a"), request("a")], progress=False)

    def test_serial_when_one_in_flight(self):
        agent = SlowAgent()
        client = ModelClient(BackendConfig(kind="stub-fixed", max_in_flight=1), agent=agent)
        client.generate_batch([request(str(k), f"p{k}") for k in range(10)], progress=False)
        assert client.peak_in_flight == 1
        assert agent.peak == 1

    def test_concurrency_bound(self):
        agent = SlowAgent(delay=0.02)
        client = ModelClient(BackendConfig(kind="stub-fixed", max_in_flight=3), agent=agent)
        result = client.generate_batch([request(str(k), f"p{k}") for k in range(12)], progress=False)
        assert client.peak_in_flight <= 3
        assert [r.completion for r in result.responses] == [f"P{k}" for k in range(12)]

    def test_warm_cache_makes_no_backend_calls(self, tmp_path):
        config = BackendConfig(kind="stub-fixed", fixed_completion="BEFORE",
                               cache_path=str(tmp_path / "cache.jsonl"))
        batch = [request(str(k), f"prompt {k}") for k in range(6)]
        cold = ModelClient(config)
        cold.generate_batch(batch, progress=False)
        assert cold.backend_calls == 6
        warm = ModelClient(config)
        result = warm.generate_batch(batch, progress=False)
        assert warm.backend_calls == 0
        assert all(r.cache_hit for r in result.responses)

    def test_retries_use_injected_sleep(self, scripted_post):
        script, _ = scripted_post
        script.extend([FakeResponse(500), FakeResponse(200, chat_body("BEFORE"))])
        waits = []
        client = ModelClient(http_config(), sleep=waits.append)
        assert client.generate(request()).completion == "BEFORE"
        assert waits == [1.0]
        assert client.backend_calls == 1

    def test_cut_off_stream_is_retried_in_a_batch(self, scripted_post):
        script, calls = scripted_post
        script.extend([requests.exceptions.ChunkedEncodingError("connection broken"),
                       FakeResponse(200, chat_body("AFTER"))])
        client = ModelClient(http_config(max_in_flight=1), sleep=lambda s: None)
        result = client.generate_batch([request("a")], progress=False)
        assert [r.completion for r in result.responses] == ["AFTER"]
        assert result.failures == {}
        assert len(calls) == 2

    def test_bad_url_is_recorded_not_raised(self, scripted_post):
        script, _ = scripted_post
        script.append(requests.exceptions.MissingSchema("no scheme supplied"))
        client = ModelClient(http_config(), sleep=lambda s: None)
        result = client.generate_batch([request("a"), request("b")], progress=False)
        assert result.responses == []
        assert sorted(result.failures) == ["a", "b"]
        assert all(msg.startswith("permanent:") for msg in result.failures.values())

    def test_module_level_batch(self):
        config = BackendConfig(kind="stub-fixed", fixed_completion="AFTER")
        result = generate_batch(config, [request("a"), request("b")])
        assert [r.completion for r in result.responses] == ["AFTER", "AFTER"]
