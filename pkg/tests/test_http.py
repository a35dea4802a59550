"""HTTP backends against a local mock endpoint: parsing, retries, errors."""

import json
import math
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from latts.backends import (
    BackendError,
    CriticVerifier,
    HttpEndpointConfig,
    OpenAICompletionsGenerator,
    PrmVerifier,
)
from latts.core import Chain, GenerationParams, Problem, Step


class _MockServer(ThreadingHTTPServer):
    daemon_threads = True
    block_on_close = False

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.script = []  # response descriptors, consumed one per request
        self.requests = []  # (path, parsed body, headers) per request

    def handle_error(self, request, client_address):
        pass  # clients time out on purpose; a broken pipe here is expected


class _MockHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length)
        try:
            parsed = json.loads(body)
        except ValueError:
            parsed = None
        self.server.requests.append(
            {"path": self.path, "body": parsed, "headers": dict(self.headers)}
        )
        action = (
            self.server.script.pop(0)
            if self.server.script
            else {"status": 500, "body": {"error": "mock script exhausted"}}
        )
        if action.get("delay"):
            time.sleep(action["delay"])
        raw = action.get("raw")
        if raw is None:
            raw = json.dumps(action.get("body", {})).encode()
        self.send_response(action.get("status", 200))
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        try:
            self.wfile.write(raw)
        except BrokenPipeError:
            pass

    def log_message(self, *args):
        pass


@pytest.fixture()
def server():
    srv = _MockServer(("127.0.0.1", 0), _MockHandler)
    thread = threading.Thread(
        target=lambda: srv.serve_forever(poll_interval=0.02), daemon=True
    )
    thread.start()
    try:
        yield srv
    finally:
        srv.shutdown()
        srv.server_close()


def _config(server, **overrides):
    settings = {
        "base_url": f"http://127.0.0.1:{server.server_address[1]}",
        "model": "test-model",
        "api_key_env": "LATTS_TEST_KEY",
        "timeout": 5.0,
        "retries": 3,
        "retry_backoff": 0.01,
    }
    settings.update(overrides)
    return HttpEndpointConfig(**settings)


def _completion_body(texts, tokens, scramble=False):
    choices = [{"index": i, "text": t} for i, t in enumerate(texts)]
    if scramble:
        choices = choices[::-1]
    return {"choices": choices, "usage": {"completion_tokens": tokens}}


_PROBLEM = Problem(id="http-test", prompt="What is 2+2?")
_PARAMS = GenerationParams()
_RNG = np.random.default_rng(0)


class TestEndpointConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            HttpEndpointConfig(base_url="")
        with pytest.raises(ValueError):
            HttpEndpointConfig(base_url="http://x", timeout=0)
        with pytest.raises(ValueError):
            HttpEndpointConfig(base_url="http://x", retries=-1)

    def test_url_joins_without_double_slash(self):
        config = HttpEndpointConfig(base_url="http://x:1/")
        assert config.url("/v1/score") == "http://x:1/v1/score"

    def test_generator_requires_a_model(self):
        with pytest.raises(ValueError, match="model"):
            OpenAICompletionsGenerator(HttpEndpointConfig(base_url="http://x", model=""))

    def test_critic_requires_a_model(self):
        with pytest.raises(ValueError, match="model"):
            CriticVerifier(HttpEndpointConfig(base_url="http://x", model=""))


class TestGenerator:
    def test_prompt_joins_prefix_with_the_step_delimiter(self, server):
        server.script.append({"body": _completion_body(["next step"], 4)})
        generator = OpenAICompletionsGenerator(_config(server))
        prefix = Chain().with_step(Step("s1", 3)).with_step(Step("s2", 2))
        [step] = generator.sample_step(_PROBLEM, prefix, 1, _PARAMS, _RNG)
        [request] = server.requests
        assert request["path"] == "/v1/completions"
        assert request["body"]["prompt"] == "What is 2+2?\n\ns1\n\ns2\n\n"
        assert request["body"]["stop"] == ["\n\n"]
        assert request["body"]["n"] == 1
        assert request["body"]["model"] == "test-model"
        assert request["body"]["temperature"] == _PARAMS.temperature
        assert request["body"]["top_p"] == _PARAMS.nucleus_p
        assert request["body"]["max_tokens"] == _PARAMS.max_tokens_per_step
        assert step.text == "next step"
        assert step.token_count == 4

    def test_reported_tokens_split_evenly_with_remainder_to_earliest(self, server):
        server.script.append({"body": _completion_body(["a", "b", "c"], 7)})
        generator = OpenAICompletionsGenerator(_config(server))
        steps = generator.sample_step(_PROBLEM, Chain(), 3, _PARAMS, _RNG)
        assert [s.token_count for s in steps] == [3, 2, 2]

    def test_choices_are_ordered_by_index(self, server):
        server.script.append({"body": _completion_body(["a", "b", "c"], 3, scramble=True)})
        generator = OpenAICompletionsGenerator(_config(server))
        steps = generator.sample_step(_PROBLEM, Chain(), 3, _PARAMS, _RNG)
        assert [s.text for s in steps] == ["a", "b", "c"]

    def test_echoed_delimiter_is_trimmed(self, server):
        server.script.append({"body": _completion_body(["step one\n\nleak"], 5)})
        generator = OpenAICompletionsGenerator(_config(server))
        [step] = generator.sample_step(_PROBLEM, Chain(), 1, _PARAMS, _RNG)
        assert step.text == "step one"

    def test_boxed_answers_mark_the_step_final(self, server):
        server.script.append(
            {"body": _completion_body(["Thus \\boxed{4}", "keep going"], 6)}
        )
        generator = OpenAICompletionsGenerator(_config(server))
        steps = generator.sample_step(_PROBLEM, Chain(), 2, _PARAMS, _RNG)
        assert steps[0].is_final
        assert not steps[1].is_final

    def test_wrong_choice_count_is_an_error(self, server):
        server.script.append({"body": _completion_body(["only one"], 2)})
        generator = OpenAICompletionsGenerator(_config(server))
        with pytest.raises(BackendError, match="expected 2 choices"):
            generator.sample_step(_PROBLEM, Chain(), 2, _PARAMS, _RNG)

    def test_missing_usage_is_an_error(self, server):
        server.script.append({"body": {"choices": [{"index": 0, "text": "a"}]}})
        generator = OpenAICompletionsGenerator(_config(server))
        with pytest.raises(BackendError, match="completion_tokens"):
            generator.sample_step(_PROBLEM, Chain(), 1, _PARAMS, _RNG)

    def test_api_key_is_read_from_the_environment(self, server, monkeypatch):
        monkeypatch.setenv("LATTS_TEST_KEY", "sk-test")
        server.script.append({"body": _completion_body(["a"], 1)})
        OpenAICompletionsGenerator(_config(server)).sample_step(
            _PROBLEM, Chain(), 1, _PARAMS, _RNG
        )
        assert server.requests[0]["headers"]["Authorization"] == "Bearer sk-test"

    def test_no_key_sends_no_auth_header(self, server, monkeypatch):
        monkeypatch.delenv("LATTS_TEST_KEY", raising=False)
        server.script.append({"body": _completion_body(["a"], 1)})
        OpenAICompletionsGenerator(_config(server)).sample_step(
            _PROBLEM, Chain(), 1, _PARAMS, _RNG
        )
        assert "Authorization" not in server.requests[0]["headers"]


class TestRetries:
    def test_timeout_is_retried(self, server):
        server.script.append({"delay": 1.0, "body": {}})
        server.script.append({"body": _completion_body(["recovered"], 2)})
        generator = OpenAICompletionsGenerator(_config(server, timeout=0.2))
        [step] = generator.sample_step(_PROBLEM, Chain(), 1, _PARAMS, _RNG)
        assert step.text == "recovered"
        assert len(server.requests) == 2

    def test_server_errors_and_rate_limits_are_retried(self, server):
        server.script.append({"status": 500, "body": {"error": "boom"}})
        server.script.append({"status": 429, "body": {"error": "slow down"}})
        server.script.append({"body": _completion_body(["third time"], 2)})
        generator = OpenAICompletionsGenerator(_config(server))
        [step] = generator.sample_step(_PROBLEM, Chain(), 1, _PARAMS, _RNG)
        assert step.text == "third time"
        assert len(server.requests) == 3

    def test_retry_budget_is_retries_after_the_first_attempt(self, server):
        server.script.extend({"status": 500, "body": {}} for _ in range(10))
        generator = OpenAICompletionsGenerator(_config(server, retries=2))
        with pytest.raises(BackendError, match="after 3 attempts"):
            generator.sample_step(_PROBLEM, Chain(), 1, _PARAMS, _RNG)
        assert len(server.requests) == 3

    def test_client_errors_are_not_retried(self, server):
        server.script.append({"status": 400, "body": {"error": "bad request"}})
        generator = OpenAICompletionsGenerator(_config(server))
        with pytest.raises(BackendError, match="HTTP 400"):
            generator.sample_step(_PROBLEM, Chain(), 1, _PARAMS, _RNG)
        assert len(server.requests) == 1

    def test_non_json_body_is_an_error(self, server):
        server.script.append({"raw": b"<html>oops</html>"})
        generator = OpenAICompletionsGenerator(_config(server))
        with pytest.raises(BackendError, match="non-JSON"):
            generator.sample_step(_PROBLEM, Chain(), 1, _PARAMS, _RNG)


class TestPrmVerifier:
    def test_sends_problem_steps_and_candidate(self, server):
        server.script.append({"body": {"score": 0.73}})
        verifier = PrmVerifier(_config(server, model=""))
        prefix = Chain().with_step(Step("s1", 1))
        score = verifier.score(_PROBLEM, prefix, Step("cand", 1))
        assert score == pytest.approx(0.73)
        [request] = server.requests
        assert request["path"] == "/v1/score"
        assert request["body"] == {
            "problem": "What is 2+2?",
            "steps": ["s1"],
            "candidate": "cand",
        }

    def test_integer_scores_are_accepted(self, server):
        server.script.append({"body": {"score": 1}})
        verifier = PrmVerifier(_config(server))
        assert verifier.score(_PROBLEM, Chain(), Step("c", 1)) == 1.0

    @pytest.mark.parametrize("body", [{}, {"score": "high"}, {"score": True}, {"score": 1.5}])
    def test_bad_scores_are_errors(self, server, body):
        server.script.append({"body": body})
        verifier = PrmVerifier(_config(server))
        with pytest.raises(BackendError):
            verifier.score(_PROBLEM, Chain(), Step("c", 1))


def _critic_body(top_logprobs):
    return {
        "choices": [
            {"index": 0, "text": " Yes", "logprobs": {"top_logprobs": [top_logprobs]}}
        ],
        "usage": {"completion_tokens": 1},
    }


class TestCriticVerifier:
    def test_two_way_softmax_over_yes_and_no(self, server):
        server.script.append({"body": _critic_body({" Yes": -0.3, " No": -1.3})})
        verifier = CriticVerifier(_config(server))
        score = verifier.score(_PROBLEM, Chain(), Step("cand", 1))
        # softmax gap of 1.0 nat: 1 / (1 + e^-1) = 0.7310585786300049
        assert score == pytest.approx(1.0 / (1.0 + math.exp(-1.0)))

    def test_case_and_whitespace_variants_merge_by_max(self, server):
        server.script.append(
            {"body": _critic_body({" Yes": -0.5, "yes": -0.2, " NO": -3.0, "no": -4.0})}
        )
        verifier = CriticVerifier(_config(server))
        score = verifier.score(_PROBLEM, Chain(), Step("cand", 1))
        assert score == pytest.approx(1.0 / (1.0 + math.exp(-3.0 - (-0.2))))

    def test_equal_logprobs_score_one_half(self, server):
        server.script.append({"body": _critic_body({"Yes": -0.7, "No": -0.7})})
        verifier = CriticVerifier(_config(server))
        assert verifier.score(_PROBLEM, Chain(), Step("c", 1)) == pytest.approx(0.5)

    def test_asks_a_single_deterministic_token(self, server):
        server.script.append({"body": _critic_body({"Yes": -0.1, "No": -2.0})})
        verifier = CriticVerifier(_config(server))
        prefix = Chain().with_step(Step("earlier step", 1))
        verifier.score(_PROBLEM, prefix, Step("the candidate", 1))
        [request] = server.requests
        assert request["body"]["max_tokens"] == 1
        assert request["body"]["temperature"] == 0
        assert request["body"]["logprobs"] == 5
        prompt = request["body"]["prompt"]
        assert "What is 2+2?" in prompt
        assert "earlier step" in prompt
        assert "the candidate" in prompt

    def test_missing_option_token_is_an_error(self, server):
        server.script.append({"body": _critic_body({"Yes": -0.1, "Maybe": -2.0})})
        verifier = CriticVerifier(_config(server))
        with pytest.raises(BackendError, match="yes or no"):
            verifier.score(_PROBLEM, Chain(), Step("c", 1))

    def test_missing_logprobs_is_an_error(self, server):
        server.script.append(
            {"body": {"choices": [{"index": 0, "text": " Yes"}]}}
        )
        verifier = CriticVerifier(_config(server))
        with pytest.raises(BackendError, match="top_logprobs"):
            verifier.score(_PROBLEM, Chain(), Step("c", 1))

    def test_custom_template(self, server):
        server.script.append({"body": _critic_body({"Yes": -0.1, "No": -2.0})})
        verifier = CriticVerifier(
            _config(server), template="Q: {problem} | {prefix} | {candidate}?"
        )
        verifier.score(_PROBLEM, Chain(), Step("cand", 1))
        assert server.requests[0]["body"]["prompt"] == "Q: What is 2+2? |  | cand?"
