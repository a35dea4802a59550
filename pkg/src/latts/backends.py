"""Generation and verification backends.

Two families live here:

* A fully synthetic process backed by explicit probability and score
  tables, used for exact oracle computations and deterministic tests.
* HTTP clients for an OpenAI-style completions endpoint (generation and
  the yes/no critic verifier) and for a score endpoint (process reward
  model verifier).

All backends speak the same two small interfaces, so the sampling loop
and every baseline are backend-agnostic.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np
import requests

from .core import (
    DEFAULT_ANSWER_PATTERN,
    AnswerPattern,
    Chain,
    GenerationParams,
    Problem,
    Step,
    detect_final_answer,
)

__all__ = [
    "BackendConfigError",
    "BackendError",
    "CriticVerifier",
    "GeneratorBackend",
    "HttpEndpointConfig",
    "OpenAICompletionsGenerator",
    "PrmVerifier",
    "SyntheticGenerator",
    "SyntheticProcess",
    "SyntheticVerifier",
    "VerifierBackend",
    "exact_next_step_distribution",
    "load_synthetic_process",
]

_PROB_SUM_TOLERANCE = 1e-12


class BackendError(RuntimeError):
    """A backend call failed (network, protocol, or malformed response)."""


class BackendConfigError(BackendError):
    """A backend was asked about a state its configuration does not cover."""


class GeneratorBackend:
    """Interface for sampling candidate next steps.

    ``supports_batch`` advertises that one call with ``n > 1`` costs a
    single model invocation; ``supports_greedy`` that temperature 0 yields
    deterministic argmax decoding (required for lookahead rollouts).
    """

    supports_batch: bool = False
    supports_greedy: bool = False

    def sample_step(
        self,
        problem: Problem,
        prefix: Chain,
        n: int,
        params: GenerationParams,
        rng: np.random.Generator,
    ) -> list[Step]:
        raise NotImplementedError


class VerifierBackend:
    """Interface for scoring a candidate step given the accepted prefix.

    Scores are reals in [0, 1].  ``is_exact`` marks table-backed verifiers
    whose scores can be enumerated for oracle computations.
    """

    is_exact: bool = False

    def score(self, problem: Problem, prefix: Chain, candidate: Step) -> float:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Synthetic process
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticProcess:
    """A finite next-step process defined by explicit tables.

    States are strings; the state reached by a chain is the problem prompt
    with every accepted step text appended in order.  ``transitions`` maps
    a state to a probability row over symbols, ``scores`` maps a state to
    the verifier score of each symbol proposed from it, and
    ``final_markers`` lists symbols that end a chain.
    """

    alphabet: tuple[str, ...]
    transitions: Mapping[str, Mapping[str, float]]
    scores: Mapping[str, Mapping[str, float]]
    final_markers: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if not self.alphabet:
            raise ValueError("alphabet must be non-empty")
        if len(set(self.alphabet)) != len(self.alphabet):
            raise ValueError("alphabet symbols must be unique")
        symbols = set(self.alphabet)
        for state, row in self.transitions.items():
            unknown = set(row) - symbols
            if unknown:
                raise ValueError(f"state {state!r}: symbols {sorted(unknown)} not in alphabet")
            probs = list(row.values())
            if any(p < 0 for p in probs):
                raise ValueError(f"state {state!r}: negative probability")
            total = math.fsum(probs)
            if abs(total - 1.0) > _PROB_SUM_TOLERANCE:
                raise ValueError(f"state {state!r}: probabilities sum to {total!r}, not 1")
        for state, row in self.scores.items():
            unknown = set(row) - symbols
            if unknown:
                raise ValueError(f"state {state!r}: scored symbols {sorted(unknown)} not in alphabet")
            for symbol, value in row.items():
                if not 0 <= value <= 1:
                    raise ValueError(
                        f"state {state!r}, symbol {symbol!r}: score {value!r} outside [0, 1]"
                    )
        unknown_markers = set(self.final_markers) - symbols
        if unknown_markers:
            raise ValueError(f"final markers {sorted(unknown_markers)} not in alphabet")

    @staticmethod
    def state_key(problem: Problem, prefix: Chain) -> str:
        return problem.prompt + prefix.text

    def transition_row(self, state: str) -> Mapping[str, float]:
        row = self.transitions.get(state)
        if row is None:
            raise BackendConfigError(f"no transition row for state {state!r}")
        return row

    def score_row(self, state: str) -> Mapping[str, float]:
        row = self.scores.get(state)
        if row is None:
            raise BackendConfigError(f"no score row for state {state!r}")
        return row

    def symbol_score(self, state: str, symbol: str) -> float:
        row = self.score_row(state)
        if symbol not in row:
            raise BackendConfigError(f"no score for symbol {symbol!r} in state {state!r}")
        return row[symbol]

    def to_dict(self) -> dict[str, Any]:
        return {
            "alphabet": list(self.alphabet),
            "transitions": {s: dict(r) for s, r in self.transitions.items()},
            "verifier": {s: dict(r) for s, r in self.scores.items()},
            "final_markers": sorted(self.final_markers),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SyntheticProcess":
        required = {"alphabet", "transitions", "verifier"}
        missing = required - set(data)
        if missing:
            raise ValueError(f"process definition missing fields: {sorted(missing)}")
        return cls(
            alphabet=tuple(data["alphabet"]),
            transitions={s: dict(r) for s, r in data["transitions"].items()},
            scores={s: dict(r) for s, r in data["verifier"].items()},
            final_markers=frozenset(data.get("final_markers", ())),
        )


def load_synthetic_process(path: str) -> SyntheticProcess:
    """Load a process definition from a JSON file."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ValueError(f"{path}: process definition must be a JSON object")
    return SyntheticProcess.from_dict(data)


def exact_next_step_distribution(process: SyntheticProcess, state: str) -> dict[str, float]:
    """The exact next-symbol distribution at ``state``, over the full alphabet."""
    row = process.transition_row(state)
    return {symbol: float(row.get(symbol, 0.0)) for symbol in process.alphabet}


class SyntheticGenerator(GeneratorBackend):
    """Samples next symbols from a :class:`SyntheticProcess` table.

    Each sampled symbol costs one token.  Temperature 0 selects the
    highest-probability symbol (first in alphabet order on ties); any
    other temperature samples the table exactly as written, ignoring
    temperature and nucleus settings.
    """

    supports_batch = True
    supports_greedy = True

    def __init__(
        self,
        process: SyntheticProcess,
        answer_pattern: AnswerPattern = DEFAULT_ANSWER_PATTERN,
    ) -> None:
        self.process = process
        self.answer_pattern = answer_pattern
        self._rows: dict[str, tuple[list[str], np.ndarray]] = {}

    def _prepared_row(self, state: str) -> tuple[list[str], np.ndarray]:
        cached = self._rows.get(state)
        if cached is not None:
            return cached
        row = self.process.transition_row(state)
        symbols = [s for s in self.process.alphabet if row.get(s, 0.0) > 0.0]
        cumulative = np.cumsum([row[s] for s in symbols])
        prepared = (symbols, cumulative)
        self._rows[state] = prepared
        return prepared

    def _make_step(self, symbol: str) -> Step:
        is_final = symbol in self.process.final_markers or (
            detect_final_answer(symbol, self.answer_pattern) is not None
        )
        return Step(text=symbol, token_count=1, is_final=is_final)

    def sample_step(
        self,
        problem: Problem,
        prefix: Chain,
        n: int,
        params: GenerationParams,
        rng: np.random.Generator,
    ) -> list[Step]:
        if n < 1:
            raise ValueError("n must be >= 1")
        state = SyntheticProcess.state_key(problem, prefix)
        symbols, cumulative = self._prepared_row(state)
        if params.greedy:
            row = self.process.transition_row(state)
            best = max(symbols, key=lambda s: row[s])  # first symbol wins ties
            return [self._make_step(best) for _ in range(n)]
        draws = rng.random(n)
        indices = np.searchsorted(cumulative, draws, side="right")
        indices = np.minimum(indices, len(symbols) - 1)  # guard float cumsum short of 1.0
        return [self._make_step(symbols[int(i)]) for i in indices]


class SyntheticVerifier(VerifierBackend):
    """Looks up candidate scores in the process's score table."""

    is_exact = True

    def __init__(self, process: SyntheticProcess) -> None:
        self.process = process

    def score(self, problem: Problem, prefix: Chain, candidate: Step) -> float:
        state = SyntheticProcess.state_key(problem, prefix)
        return float(self.process.symbol_score(state, candidate.text))


# ---------------------------------------------------------------------------
# HTTP backends
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HttpEndpointConfig:
    """Connection settings for an HTTP backend.

    The API key is read from the environment variable named by
    ``api_key_env`` at call time and sent as a bearer token; it is never
    stored in config files or logged.
    """

    base_url: str
    model: str = ""
    api_key_env: str = "LATTS_API_KEY"
    timeout: float = 120.0
    retries: int = 3
    retry_backoff: float = 0.25

    def __post_init__(self) -> None:
        if not self.base_url:
            raise ValueError("base_url must be non-empty")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")
        if self.retry_backoff < 0:
            raise ValueError("retry_backoff must be >= 0")

    def url(self, path: str) -> str:
        return self.base_url.rstrip("/") + path

    def headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers


def _post_json(config: HttpEndpointConfig, path: str, payload: Mapping[str, Any]) -> dict[str, Any]:
    """POST with bounded retries on timeouts, connection errors, 429, and 5xx."""
    url = config.url(path)
    attempts = config.retries + 1
    last_error = "no attempt made"
    for attempt in range(attempts):
        if attempt > 0 and config.retry_backoff > 0:
            time.sleep(config.retry_backoff * attempt)
        try:
            response = requests.post(
                url, json=dict(payload), headers=config.headers(), timeout=config.timeout
            )
        except (requests.Timeout, requests.ConnectionError) as exc:
            last_error = f"{type(exc).__name__}: {exc}"
            continue
        if response.status_code == 429 or response.status_code >= 500:
            last_error = f"HTTP {response.status_code}: {response.text[:200]}"
            continue
        if response.status_code >= 400:
            raise BackendError(f"{url} returned HTTP {response.status_code}: {response.text[:200]}")
        try:
            data = response.json()
        except ValueError:
            raise BackendError(f"{url} returned a non-JSON body") from None
        if not isinstance(data, dict):
            raise BackendError(f"{url} returned a non-object JSON body")
        return data
    raise BackendError(f"{url} failed after {attempts} attempts; last error: {last_error}")


def _choice_texts(data: Mapping[str, Any], n: int, url: str) -> list[str]:
    choices = data.get("choices")
    if not isinstance(choices, list) or len(choices) != n:
        got = len(choices) if isinstance(choices, list) else type(choices).__name__
        raise BackendError(f"{url}: expected {n} choices, got {got}")
    ordered = sorted(
        choices, key=lambda c: c.get("index", 0) if isinstance(c, Mapping) else 0
    )
    texts = []
    for choice in ordered:
        if not isinstance(choice, Mapping) or not isinstance(choice.get("text"), str):
            raise BackendError(f"{url}: malformed choice entry")
        texts.append(choice["text"])
    return texts


def _completion_tokens(data: Mapping[str, Any], url: str) -> int:
    usage = data.get("usage")
    if not isinstance(usage, Mapping) or "completion_tokens" not in usage:
        raise BackendError(f"{url}: response lacks usage.completion_tokens")
    tokens = usage["completion_tokens"]
    if not isinstance(tokens, int) or tokens < 0:
        raise BackendError(f"{url}: bad usage.completion_tokens value {tokens!r}")
    return tokens


class OpenAICompletionsGenerator(GeneratorBackend):
    """Samples steps from an OpenAI-style ``/v1/completions`` endpoint.

    The prompt is the problem statement followed by each accepted step,
    joined and terminated by the step delimiter; the delimiter doubles as
    the stop sequence so each request yields one step per choice.  Token
    accounting uses the backend-reported ``usage.completion_tokens``,
    split evenly across the batch (totals stay exact; the remainder goes
    to the earliest choices).
    """

    supports_batch = True
    supports_greedy = True

    def __init__(
        self,
        config: HttpEndpointConfig,
        answer_pattern: AnswerPattern = DEFAULT_ANSWER_PATTERN,
    ) -> None:
        if not config.model:
            raise ValueError("generator config requires a model name")
        self.config = config
        self.answer_pattern = answer_pattern

    def _prompt(self, problem: Problem, prefix: Chain, delimiter: str) -> str:
        parts = [problem.prompt] + [s.text for s in prefix.steps]
        return delimiter.join(parts) + delimiter

    def sample_step(
        self,
        problem: Problem,
        prefix: Chain,
        n: int,
        params: GenerationParams,
        rng: np.random.Generator,
    ) -> list[Step]:
        if n < 1:
            raise ValueError("n must be >= 1")
        del rng  # randomness lives server-side for HTTP generation
        payload = {
            "model": self.config.model,
            "prompt": self._prompt(problem, prefix, params.step_delimiter),
            "n": n,
            "max_tokens": params.max_tokens_per_step,
            "temperature": params.temperature,
            "top_p": params.nucleus_p,
            "stop": [params.step_delimiter],
        }
        url = self.config.url("/v1/completions")
        data = _post_json(self.config, "/v1/completions", payload)
        texts = _choice_texts(data, n, url)
        total_tokens = _completion_tokens(data, url)
        per, remainder = divmod(total_tokens, n)
        steps = []
        for i, text in enumerate(texts):
            # Stop sequences normally strip the delimiter; split defensively
            # in case the backend echoed it anyway.
            if params.step_delimiter in text:
                text = text.split(params.step_delimiter, 1)[0]
            steps.append(
                Step(
                    text=text,
                    token_count=per + (1 if i < remainder else 0),
                    is_final=detect_final_answer(text, self.answer_pattern) is not None,
                )
            )
        return steps


class PrmVerifier(VerifierBackend):
    """Scores steps via a process-reward-model endpoint.

    Sends ``{"problem", "steps", "candidate"}`` to ``/v1/score`` and
    expects ``{"score": s}`` with ``s`` in [0, 1].
    """

    def __init__(self, config: HttpEndpointConfig) -> None:
        self.config = config

    def score(self, problem: Problem, prefix: Chain, candidate: Step) -> float:
        payload = {
            "problem": problem.prompt,
            "steps": [s.text for s in prefix.steps],
            "candidate": candidate.text,
        }
        url = self.config.url("/v1/score")
        data = _post_json(self.config, "/v1/score", payload)
        value = data.get("score")
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise BackendError(f"{url}: missing or non-numeric score")
        if not 0 <= value <= 1:
            raise BackendError(f"{url}: score {value!r} outside [0, 1]")
        return float(value)


DEFAULT_CRITIC_TEMPLATE = (
    "Problem:\n{problem}\n\n"
    "Reasoning so far:\n{prefix}\n\n"
    "Proposed next step:\n{candidate}\n\n"
    "Is this step correct? Yes/No\n"
    "Answer:"
)


class CriticVerifier(VerifierBackend):
    """Scores steps by asking a completion model a yes/no question.

    The score is the probability of the affirmative token under a two-way
    softmax over the yes and no log-probabilities reported for the first
    generated token.  Token case and leading whitespace are ignored when
    matching the two options.
    """

    def __init__(
        self,
        config: HttpEndpointConfig,
        template: str = DEFAULT_CRITIC_TEMPLATE,
        prefix_joiner: str = "\n",
    ) -> None:
        if not config.model:
            raise ValueError("critic config requires a model name")
        self.config = config
        self.template = template
        self.prefix_joiner = prefix_joiner

    def score(self, problem: Problem, prefix: Chain, candidate: Step) -> float:
        prompt = self.template.format(
            problem=problem.prompt,
            prefix=self.prefix_joiner.join(s.text for s in prefix.steps),
            candidate=candidate.text,
        )
        payload = {
            "model": self.config.model,
            "prompt": prompt,
            "max_tokens": 1,
            "temperature": 0,
            "logprobs": 5,
        }
        url = self.config.url("/v1/completions")
        data = _post_json(self.config, "/v1/completions", payload)
        choices = data.get("choices")
        if not isinstance(choices, list) or not choices:
            raise BackendError(f"{url}: critic response has no choices")
        logprobs = choices[0].get("logprobs") if isinstance(choices[0], Mapping) else None
        top = None
        if isinstance(logprobs, Mapping):
            entries = logprobs.get("top_logprobs")
            if isinstance(entries, list) and entries and isinstance(entries[0], Mapping):
                top = entries[0]
        if top is None:
            raise BackendError(f"{url}: critic response lacks top_logprobs for the first token")
        yes_lp: float | None = None
        no_lp: float | None = None
        for token, lp in top.items():
            if not isinstance(lp, (int, float)):
                continue
            norm = str(token).strip().lower()
            if norm == "yes":
                yes_lp = lp if yes_lp is None else max(yes_lp, lp)
            elif norm == "no":
                no_lp = lp if no_lp is None else max(no_lp, lp)
        if yes_lp is None or no_lp is None:
            raise BackendError(f"{url}: critic logprobs lack a yes or no token")
        # Two-way softmax, numerically stable for large gaps.
        return 1.0 / (1.0 + math.exp(no_lp - yes_lp))
