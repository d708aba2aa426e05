"""Gateway, providers, rate limiting, call log, and replay."""

from __future__ import annotations

import json
import time

import pytest

from mootcourt.clock import SimulatedClock
from mootcourt.errors import (
    ProtocolError,
    RetriesExhaustedError,
    ScriptExhaustedError,
    StructuredReplyError,
)
from mootcourt.gateway import (
    FREE_TEXT,
    STRUCTURED_OBJECT,
    CallLog,
    ChatMessage,
    ChatRequest,
    EmbeddingRequest,
    Gateway,
    HttpProvider,
    MockProvider,
    ProviderConfig,
    RateLimiter,
    ReplayProvider,
    TransportError,
    extract_object,
    id_tag,
    render_output_shape,
)


def make_request(text: str = "hello", fmt: str = FREE_TEXT, **kw) -> ChatRequest:
    return ChatRequest(model_id="m", messages=[ChatMessage("user", text)],
                       response_format=fmt, **kw)


def make_gateway(provider, **kw) -> Gateway:
    kw.setdefault("clock", SimulatedClock())
    return Gateway(provider, **kw)


class TestRequestValidation:
    def test_empty_messages_rejected(self):
        req = ChatRequest(model_id="m", messages=[])
        with pytest.raises(ValueError, match="non-empty"):
            req.validate()

    def test_first_role_must_open_the_conversation(self):
        req = ChatRequest(model_id="m", messages=[ChatMessage("assistant", "hi")])
        with pytest.raises(ValueError, match="first message role"):
            req.validate()

    def test_unknown_role_rejected(self):
        req = ChatRequest(model_id="m", messages=[ChatMessage("tool", "hi")])
        with pytest.raises(ValueError, match="invalid message role"):
            req.validate()

    @pytest.mark.parametrize("temp", [-0.1, 2.1])
    def test_temperature_bounds(self, temp):
        req = make_request(temperature=temp)
        with pytest.raises(ValueError, match="temperature"):
            req.validate()

    def test_temperature_endpoints_allowed(self):
        make_request(temperature=0.0).validate()
        make_request(temperature=2.0).validate()

    def test_nonpositive_max_tokens_rejected(self):
        with pytest.raises(ValueError, match="max_output_tokens"):
            make_request(max_output_tokens=0).validate()

    def test_bad_response_format_rejected(self):
        with pytest.raises(ValueError, match="response_format"):
            make_request(fmt="xml").validate()

    def test_gateway_refuses_invalid_request(self):
        gw = make_gateway(MockProvider.scripted(["x"]))
        with pytest.raises(ValueError):
            gw.chat(ChatRequest(model_id="m", messages=[]))

    def test_embedding_request_rejects_blank_text(self):
        req = EmbeddingRequest(model_id="e", texts=["ok", "   "])
        with pytest.raises(ValueError, match=r"texts\[1\]"):
            req.validate()

    def test_embedding_request_rejects_empty_list(self):
        with pytest.raises(ValueError, match="non-empty"):
            EmbeddingRequest(model_id="e", texts=[]).validate()


class TestProviderConfig:
    def test_valid_config_passes(self):
        ProviderConfig(endpoint_url="https://api.example.com/v1",
                       api_key_env_var="API_KEY").validate()

    @pytest.mark.parametrize("url", ["", "not-a-url", "/relative/path", "example.com"])
    def test_relative_endpoint_rejected(self, url):
        with pytest.raises(ValueError, match="endpoint_url"):
            ProviderConfig(endpoint_url=url).validate()

    def test_bad_env_var_name_rejected(self):
        cfg = ProviderConfig(endpoint_url="https://x.test", api_key_env_var="2BAD")
        with pytest.raises(ValueError, match="api_key_env_var"):
            cfg.validate()

    def test_negative_retries_rejected(self):
        cfg = ProviderConfig(endpoint_url="https://x.test", max_retries=-1)
        with pytest.raises(ValueError, match="max_retries"):
            cfg.validate()

    def test_zero_rpm_rejected(self):
        cfg = ProviderConfig(endpoint_url="https://x.test", requests_per_minute=0)
        with pytest.raises(ValueError, match="requests_per_minute"):
            cfg.validate()


class TestScriptedMock:
    def test_replies_in_order_then_exhausts(self):
        gw = make_gateway(MockProvider.scripted(["first", "second"]))
        assert gw.chat(make_request()).text == "first"
        assert gw.chat(make_request()).text == "second"
        with pytest.raises(ScriptExhaustedError):
            gw.chat(make_request())

    def test_scripted_reply_is_logged_with_index(self):
        gw = make_gateway(MockProvider.scripted(["pong"]), role="tester")
        gw.chat(make_request("ping"))
        entries = gw.call_log.entries
        assert len(entries) == 1
        e = entries[0]
        assert e["call_index"] == 0
        assert e["kind"] == "chat"
        assert e["role"] == "tester"
        assert e["request"]["messages"][0]["text"] == "ping"
        assert e["response"]["text"] == "pong"
        assert e["latency_ms"] >= 0

    def test_empty_script_rejected(self):
        with pytest.raises(ValueError):
            MockProvider.scripted([])


class TestPureMock:
    def test_same_request_same_reply(self):
        provider = MockProvider.pure()
        a = provider.complete(make_request("alpha"))
        b = provider.complete(make_request("alpha"))
        assert a.text == b.text

    def test_different_prompt_different_reply(self):
        provider = MockProvider.pure()
        a = provider.complete(make_request("alpha"))
        b = provider.complete(make_request("beta"))
        assert a.text != b.text

    def test_structured_reply_fills_shape(self):
        shape = {"verdict": "<text>", "score": "<int 0-5>", "ok": "<bool>"}
        prompt = "Judge this.\n" + render_output_shape(shape)
        provider = MockProvider.pure()
        reply = provider.complete(make_request(prompt, fmt=STRUCTURED_OBJECT))
        obj = json.loads(reply.text)
        assert set(obj) == {"verdict", "score", "ok"}
        assert isinstance(obj["verdict"], str) and obj["verdict"]
        assert 0 <= obj["score"] <= 5
        assert obj["ok"] is True

    def test_int_marker_covers_range_deterministically(self):
        shape = {"score": "<int 0-5>"}
        provider = MockProvider.pure()
        seen = set()
        for i in range(64):
            prompt = f"case {i}\n" + render_output_shape(shape)
            obj = json.loads(provider.complete(
                make_request(prompt, fmt=STRUCTURED_OBJECT)).text)
            assert 0 <= obj["score"] <= 5
            seen.add(obj["score"])
        assert len(seen) > 1

    def test_id_fields_echo_tagged_ids_from_prompt(self):
        shape = {"pick": "<id>", "all": ["<id>"]}
        prompt = (f"Candidates: {id_tag('art-3')} and {id_tag('art-7')}.\n"
                  + render_output_shape(shape))
        provider = MockProvider.pure()
        obj = json.loads(provider.complete(
            make_request(prompt, fmt=STRUCTURED_OBJECT)).text)
        assert obj["pick"] == "art-3"
        assert obj["all"]
        assert set(obj["all"]) <= {"art-3", "art-7"}

    def test_structured_without_shape_falls_back_to_text(self):
        provider = MockProvider.pure()
        reply = provider.complete(make_request("no shape", fmt=STRUCTURED_OBJECT))
        assert reply.text

    def test_prefixed_id_marker_filters_harvested_ids(self):
        shape = {"articles": ["<id art->"], "precedents": ["<id case->"]}
        prompt = (f"Sources: {id_tag('art-1')} {id_tag('case-9')} {id_tag('art-2')}\n"
                  + render_output_shape(shape))
        provider = MockProvider.pure()
        obj = json.loads(provider.complete(
            make_request(prompt, fmt=STRUCTURED_OBJECT)).text)
        assert set(obj["articles"]) <= {"art-1", "art-2"}
        assert set(obj["precedents"]) <= {"case-9"}

    def test_result_list_header_gets_contiguous_numbered_results(self):
        prompt = "Organize the text.\nCurrent text: some judgment\nOutput List:"
        provider = MockProvider.pure()
        obj = json.loads(provider.complete(
            make_request(prompt, fmt=STRUCTURED_OBJECT)).text)
        keys = sorted(obj)
        assert keys == [f"Result {i}" for i in range(1, len(keys) + 1)]
        assert all(isinstance(v, str) and v for v in obj.values())

    def test_result_verdict_skeleton_keys_follow_reference(self):
        prompt = (
            "Compare answers.\n"
            'Current text: Reference answers: {"Result 1": "a", "Result 2": "b", '
            '"Result 3": "c"}\n'
            'Candidate answers: {"Result 1": "x"}\n'
            'Output list: {"Result 1":<>, "Result 2":<>,...}'
        )
        provider = MockProvider.pure()
        obj = json.loads(provider.complete(
            make_request(prompt, fmt=STRUCTURED_OBJECT)).text)
        assert sorted(obj) == ["Result 1", "Result 2", "Result 3"]
        assert all(v in (0, 1) for v in obj.values())


class TestEmbeddings:
    def test_one_vector_per_text_same_dimension(self):
        gw = make_gateway(MockProvider.pure(embedding_dim=16))
        vectors = gw.embed(EmbeddingRequest(model_id="e", texts=["a", "b", "c"]))
        assert len(vectors) == 3
        assert {len(v) for v in vectors} == {16}

    def test_same_text_same_vector(self):
        provider = MockProvider.pure()
        req = EmbeddingRequest(model_id="e", texts=["合同", "合同", "other"])
        out = provider.embed(req)
        assert out[0] == out[1]
        assert out[0] != out[2]

    def test_override_map_takes_precedence(self):
        provider = MockProvider.pure(embedding_dim=2,
                                     embeddings={"pinned": [1.0, 0.0]})
        out = provider.embed(EmbeddingRequest(model_id="e", texts=["pinned", "free"]))
        assert out[0] == [1.0, 0.0]
        assert len(out[1]) == 2

    def test_embed_logged(self):
        gw = make_gateway(MockProvider.pure(), role="embedder")
        gw.embed(EmbeddingRequest(model_id="e", texts=["x"]))
        e = gw.call_log.entries[0]
        assert e["kind"] == "embed"
        assert e["request"]["texts"] == ["x"]
        assert len(e["response"]["vectors"]) == 1

    def test_count_mismatch_is_protocol_error(self):
        class BadProvider(MockProvider):
            def embed(self, req):
                return [[0.0]]

        gw = make_gateway(BadProvider.pure())
        with pytest.raises(ProtocolError, match="count mismatch"):
            gw.embed(EmbeddingRequest(model_id="e", texts=["a", "b"]))


class TestRateLimiter:
    def test_third_call_waits_for_window(self):
        clock = SimulatedClock()
        gw = Gateway(MockProvider.pure(), requests_per_minute=2, clock=clock)
        wall_start = time.monotonic()
        gw.chat(make_request("one"))
        gw.chat(make_request("two"))
        assert clock.now() < 60.0
        gw.chat(make_request("three"))
        wall_elapsed = time.monotonic() - wall_start
        assert clock.now() >= 60.0
        assert wall_elapsed < 1.0  # simulated waiting must not block

    def test_no_sixty_second_window_ever_exceeds_limit(self):
        clock = SimulatedClock()
        limiter = RateLimiter(per_minute=3, clock=clock)
        admits = []
        for i in range(20):
            admits.append(limiter.admit())
            if i % 4 == 0:
                clock.sleep(7.0)
        for t in admits:
            in_window = [u for u in admits if t <= u < t + 60.0]
            assert len(in_window) <= 3

    def test_window_frees_after_sixty_seconds(self):
        clock = SimulatedClock()
        limiter = RateLimiter(per_minute=1, clock=clock)
        t0 = limiter.admit()
        t1 = limiter.admit()
        assert t1 >= t0 + 60.0


class TestStructuredRetries:
    def test_parse_failure_retries_with_repair_instruction(self):
        provider = MockProvider.scripted(["not json at all", '{"score": 4}'])
        gw = make_gateway(provider, max_retries=2)
        obj = gw.chat_object(make_request("rate it", fmt=STRUCTURED_OBJECT))
        assert obj == {"score": 4}
        entries = gw.call_log.entries
        assert len(entries) == 2
        retry_messages = entries[1]["request"]["messages"]
        assert retry_messages[-1]["text"] == "Output only the object."
        assert len(retry_messages) == 2

    def test_validation_failure_also_retries(self):
        provider = MockProvider.scripted(['{"score": 9}', '{"score": 3}'])
        gw = make_gateway(provider, max_retries=1)

        def within_band(obj):
            if not 0 <= obj.get("score", -1) <= 5:
                raise ValueError("score outside 0..5")

        obj = gw.chat_object(make_request("rate", fmt=STRUCTURED_OBJECT),
                             validate=within_band)
        assert obj == {"score": 3}

    def test_exhaustion_raises_structured_reply_error(self):
        provider = MockProvider.scripted(["junk", "more junk"])
        gw = make_gateway(provider, max_retries=1)
        with pytest.raises(StructuredReplyError, match="2 attempts"):
            gw.chat_object(make_request("rate", fmt=STRUCTURED_OBJECT))

    def test_chat_on_structured_request_returns_validated_text(self):
        provider = MockProvider.scripted(["garbage", 'prefix {"a": 1} suffix'])
        gw = make_gateway(provider, max_retries=1)
        reply = gw.chat(make_request("go", fmt=STRUCTURED_OBJECT))
        assert '{"a": 1}' in reply.text

    def test_chat_object_requires_structured_format(self):
        gw = make_gateway(MockProvider.pure())
        with pytest.raises(ValueError, match="structured_object"):
            gw.chat_object(make_request("x", fmt=FREE_TEXT))


class TestExtractObject:
    def test_bare_object(self):
        assert extract_object('{"a": 1}') == {"a": 1}

    def test_object_with_surrounding_prose(self):
        text = 'Sure, here it is:\n{"a": {"b": 2}}\nHope that helps.'
        assert extract_object(text) == {"a": {"b": 2}}

    def test_braces_inside_strings_do_not_confuse_the_scanner(self):
        text = '{"note": "uses { and } inside", "n": 1}'
        assert extract_object(text) == {"note": "uses { and } inside", "n": 1}

    def test_escaped_quote_inside_string(self):
        text = '{"q": "she said \\"hi\\"", "n": 2}'
        assert extract_object(text) == {"q": 'she said "hi"', "n": 2}

    def test_no_object_returns_none(self):
        assert extract_object("nothing here") is None

    def test_top_level_array_is_not_an_object(self):
        assert extract_object('[1, 2, 3]') is None

    def test_skips_unbalanced_prefix(self):
        assert extract_object('{oops {"a": 1}') == {"a": 1}


class TestTransportRetries:
    def test_transport_failure_then_success(self):
        provider = MockProvider.scripted(["ok"], fail_times=1)
        gw = make_gateway(provider, max_retries=2)
        assert gw.chat(make_request()).text == "ok"
        assert len(gw.call_log.entries) == 1  # failed attempt not logged

    def test_transport_exhaustion(self):
        provider = MockProvider.scripted(["ok"], fail_times=3)
        gw = make_gateway(provider, max_retries=2)
        with pytest.raises(RetriesExhaustedError):
            gw.chat(make_request())


class TestCallLog:
    def test_indexes_are_monotonic_across_kinds(self, tmp_path):
        log = CallLog(tmp_path / "calls.jsonl")
        gw = make_gateway(MockProvider.pure(), call_log=log)
        gw.chat(make_request("a"))
        gw.embed(EmbeddingRequest(model_id="e", texts=["b"]))
        gw.chat(make_request("c"))
        assert [e["call_index"] for e in log.entries] == [0, 1, 2]

    def test_reopening_continues_the_sequence(self, tmp_path):
        path = tmp_path / "calls.jsonl"
        gw = make_gateway(MockProvider.pure(), call_log=CallLog(path))
        gw.chat(make_request("first"))
        log2 = CallLog(path)
        gw2 = make_gateway(MockProvider.pure(), call_log=log2)
        gw2.chat(make_request("second"))
        indexes = [e["call_index"] for e in CallLog(path).entries]
        assert indexes == [0, 1]

    def test_file_lines_are_valid_json_with_required_fields(self, tmp_path):
        path = tmp_path / "calls.jsonl"
        gw = make_gateway(MockProvider.pure(), call_log=CallLog(path))
        gw.chat(make_request("x"))
        line = path.read_text(encoding="utf-8").strip()
        entry = json.loads(line)
        assert set(entry) == {"call_index", "timestamp", "kind", "role",
                              "request", "response", "latency_ms"}


class TestReplay:
    def test_replay_reproduces_a_logged_session(self, tmp_path):
        path = tmp_path / "calls.jsonl"
        gw = make_gateway(MockProvider.pure(), call_log=CallLog(path))
        r1 = gw.chat(make_request("question one"))
        v1 = gw.embed(EmbeddingRequest(model_id="e", texts=["doc"]))

        replay = Gateway(ReplayProvider.from_log(path), clock=SimulatedClock())
        assert replay.chat(make_request("question one")).text == r1.text
        assert replay.embed(EmbeddingRequest(model_id="e", texts=["doc"])) == v1

    def test_repeated_identical_requests_replay_in_order(self, tmp_path):
        path = tmp_path / "calls.jsonl"
        gw = make_gateway(MockProvider.scripted(["one", "two"]), call_log=CallLog(path))
        gw.chat(make_request("same"))
        gw.chat(make_request("same"))
        replay = Gateway(ReplayProvider.from_log(path), clock=SimulatedClock())
        assert replay.chat(make_request("same")).text == "one"
        assert replay.chat(make_request("same")).text == "two"

    def test_unlogged_request_fails(self, tmp_path):
        path = tmp_path / "calls.jsonl"
        gw = make_gateway(MockProvider.pure(), call_log=CallLog(path))
        gw.chat(make_request("logged"))
        replay = Gateway(ReplayProvider.from_log(path), clock=SimulatedClock())
        with pytest.raises(ProtocolError, match="no logged response"):
            replay.chat(make_request("never sent"))


class FakeSession:
    """Minimal stand-in for requests.Session recording posted bodies."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.posts = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.posts.append({"url": url, "json": json, "headers": headers})
        status, body = self.responses.pop(0)
        return FakeResponse(status, body)


class FakeResponse:
    def __init__(self, status_code, body):
        self.status_code = status_code
        self._body = body
        self.text = str(body)

    def json(self):
        if isinstance(self._body, Exception):
            raise self._body
        return self._body


class TestHttpProvider:
    def make_provider(self, responses, **cfg):
        config = ProviderConfig(endpoint_url="https://api.test/v1",
                                api_key_env_var="", **cfg)
        session = FakeSession(responses)
        return HttpProvider(config, session=session), session

    def test_chat_wire_format(self):
        body = {"choices": [{"message": {"content": "answer"}}],
                "usage": {"prompt_tokens": 7, "completion_tokens": 3}}
        provider, session = self.make_provider([(200, body)])
        reply = provider.complete(make_request("q", temperature=0.5))
        assert reply.text == "answer"
        assert reply.input_tokens == 7
        assert reply.output_tokens == 3
        post = session.posts[0]
        assert post["url"] == "https://api.test/v1/chat/completions"
        assert post["json"]["messages"] == [{"role": "user", "content": "q"}]
        assert post["json"]["temperature"] == 0.5

    def test_embedding_wire_format(self):
        body = {"data": [{"embedding": [0.1, 0.2]}, {"embedding": [0.3, 0.4]}]}
        provider, session = self.make_provider([(200, body)])
        out = provider.embed(EmbeddingRequest(model_id="e", texts=["a", "b"]))
        assert out == [[0.1, 0.2], [0.3, 0.4]]
        assert session.posts[0]["url"] == "https://api.test/v1/embeddings"
        assert session.posts[0]["json"]["input"] == ["a", "b"]

    def test_server_error_is_retriable_transport_error(self):
        provider, _ = self.make_provider([(503, {})])
        with pytest.raises(TransportError):
            provider.complete(make_request())

    def test_client_error_is_protocol_error(self):
        provider, _ = self.make_provider([(401, {"error": "bad key"})])
        with pytest.raises(ProtocolError):
            provider.complete(make_request())

    def test_bearer_token_read_from_environment(self, monkeypatch):
        monkeypatch.setenv("TEST_GATEWAY_KEY", "sk-secret")
        config = ProviderConfig(endpoint_url="https://api.test/v1",
                                api_key_env_var="TEST_GATEWAY_KEY")
        session = FakeSession([(200, {"choices": [{"message": {"content": "x"}}]})])
        HttpProvider(config, session=session).complete(make_request())
        assert session.posts[0]["headers"]["Authorization"] == "Bearer sk-secret"

    def test_malformed_body_is_protocol_error(self):
        provider, _ = self.make_provider([(200, {"unexpected": True})])
        with pytest.raises(ProtocolError, match="malformed chat"):
            provider.complete(make_request())
