"""Core value objects shared by the sampler, baselines, and harness.

Everything in this module is an immutable dataclass (or a thin pure
function over them).  Mutation happens by constructing new values, which
keeps chains hashable, safe to share across threads, and easy to freeze
into test fixtures.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterable, Mapping

import numpy as np

from .modulators import Modulator

__all__ = [
    "AnswerPattern",
    "Chain",
    "ChainStatus",
    "CompletionRecord",
    "DEFAULT_ANSWER_PATTERN",
    "DEFAULT_FALLBACK_ANSWER",
    "FallbackEvent",
    "FallbackPolicy",
    "GenerationParams",
    "LattsConfig",
    "Problem",
    "RngPair",
    "Step",
    "completion_rng",
    "detect_final_answer",
]

DEFAULT_FALLBACK_ANSWER = "I don't know"


class ChainStatus(str, Enum):
    """Lifecycle of a reasoning chain.

    ``IN_PROGRESS`` is the only non-terminal status.  Terminal statuses are
    never left once entered; operations that would extend or rewrite a
    terminal chain raise ``ValueError`` instead.
    """

    IN_PROGRESS = "in_progress"
    FINAL_ANSWER_FOUND = "final_answer_found"
    STOPPED_BY_FALLBACK = "stopped_by_fallback"
    STEP_CAP_REACHED = "step_cap_reached"

    @property
    def terminal(self) -> bool:
        return self is not ChainStatus.IN_PROGRESS


class FallbackPolicy(str, Enum):
    """What to do when every trial for a step was rejected."""

    STOP = "stop"
    MAX = "max"
    BACKTRACK = "backtrack"
    RESTART = "restart"


@dataclass(frozen=True)
class Problem:
    """A single task instance: an id, a prompt, and optionally a gold answer."""

    id: str
    prompt: str
    gold_answer: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("problem id must be non-empty")
        if not self.prompt:
            raise ValueError(f"problem {self.id!r}: prompt must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"id": self.id, "prompt": self.prompt}
        if self.gold_answer is not None:
            out["gold_answer"] = self.gold_answer
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Problem":
        unknown = set(data) - {"id", "prompt", "gold_answer"}
        if unknown:
            raise ValueError(f"unknown problem fields: {sorted(unknown)}")
        try:
            pid = data["id"]
            prompt = data["prompt"]
        except KeyError as exc:
            raise ValueError(f"problem record missing required field {exc.args[0]!r}") from None
        if not isinstance(pid, str) or not isinstance(prompt, str):
            raise ValueError("problem id and prompt must be strings")
        gold = data.get("gold_answer")
        if gold is not None and not isinstance(gold, str):
            raise ValueError("gold_answer must be a string when present")
        return cls(id=pid, prompt=prompt, gold_answer=gold)


@dataclass(frozen=True)
class Step:
    """One generated reasoning step.

    ``token_count`` is the number of tokens the backend spent producing the
    step text.  ``is_final`` marks a step that carries the final answer.
    """

    text: str
    token_count: int
    is_final: bool = False

    def __post_init__(self) -> None:
        if self.token_count < 0:
            raise ValueError("token_count must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        return {"text": self.text, "token_count": self.token_count, "is_final": self.is_final}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Step":
        return cls(
            text=data["text"],
            token_count=int(data["token_count"]),
            is_final=bool(data.get("is_final", False)),
        )


@dataclass(frozen=True)
class Chain:
    """An ordered tuple of accepted steps plus a lifecycle status."""

    steps: tuple[Step, ...] = ()
    status: ChainStatus = ChainStatus.IN_PROGRESS

    def __post_init__(self) -> None:
        if self.status is ChainStatus.FINAL_ANSWER_FOUND:
            if not self.steps or not self.steps[-1].is_final:
                raise ValueError("a chain marked final must end with a final step")

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def terminal(self) -> bool:
        return self.status.terminal

    @property
    def text(self) -> str:
        """All accepted step texts, concatenated in order."""
        return "".join(s.text for s in self.steps)

    def with_step(self, step: Step, status: ChainStatus = ChainStatus.IN_PROGRESS) -> "Chain":
        """A new chain with ``step`` appended; only valid on in-progress chains."""
        if self.terminal:
            raise ValueError(f"cannot extend a terminal chain (status={self.status.value})")
        return Chain(steps=self.steps + (step,), status=status)

    def with_status(self, status: ChainStatus) -> "Chain":
        if self.terminal and status is not self.status:
            raise ValueError(f"cannot change status of a terminal chain (status={self.status.value})")
        return replace(self, status=status)

    def truncated(self, length: int) -> "Chain":
        """A new in-progress chain keeping only the first ``length`` steps."""
        if self.terminal:
            raise ValueError(f"cannot truncate a terminal chain (status={self.status.value})")
        if not 0 <= length <= len(self.steps):
            raise ValueError(f"truncation length {length} out of range [0, {len(self.steps)}]")
        return Chain(steps=self.steps[:length], status=ChainStatus.IN_PROGRESS)

    def to_dict(self) -> dict[str, Any]:
        return {"steps": [s.to_dict() for s in self.steps], "status": self.status.value}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Chain":
        return cls(
            steps=tuple(Step.from_dict(s) for s in data["steps"]),
            status=ChainStatus(data["status"]),
        )


@dataclass(frozen=True)
class GenerationParams:
    """Decoding settings shared by the sampler and every baseline.

    ``temperature == 0`` selects greedy decoding on backends that support
    it.  ``step_delimiter`` separates steps in prompts sent to text
    backends; generated step text never contains it.
    """

    temperature: float = 0.8
    nucleus_p: float = 0.9
    step_delimiter: str = "\n\n"
    max_steps: int = 40
    max_tokens_per_step: int = 512

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.nucleus_p <= 1:
            raise ValueError("nucleus_p must be in (0, 1]")
        if not self.step_delimiter:
            raise ValueError("step_delimiter must be non-empty")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.max_tokens_per_step < 1:
            raise ValueError("max_tokens_per_step must be >= 1")

    @property
    def greedy(self) -> bool:
        return self.temperature == 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "temperature": self.temperature,
            "nucleus_p": self.nucleus_p,
            "step_delimiter": self.step_delimiter,
            "max_steps": self.max_steps,
            "max_tokens_per_step": self.max_tokens_per_step,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GenerationParams":
        known = {f: data[f] for f in (
            "temperature", "nucleus_p", "step_delimiter", "max_steps", "max_tokens_per_step",
        ) if f in data}
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown generation fields: {sorted(unknown)}")
        return cls(**known)


@dataclass(frozen=True)
class AnswerPattern:
    """Rule for locating a final answer inside step text.

    With ``regex`` unset, the rule looks for the last ``\\boxed{...}``
    marker and extracts its brace-balanced payload.  A custom ``regex``
    must contain one capture group; the last match wins.
    """

    regex: str | None = None

    def __post_init__(self) -> None:
        if self.regex is not None:
            try:
                compiled = re.compile(self.regex)
            except re.error as exc:
                raise ValueError(f"invalid answer regex: {exc}") from None
            if compiled.groups < 1:
                raise ValueError("answer regex must contain a capture group")


DEFAULT_ANSWER_PATTERN = AnswerPattern()

_BOXED_MARKER = "\\boxed{"


def _balanced_payload(text: str, open_index: int) -> str | None:
    """Payload of a brace group opening at ``open_index`` (the ``{``), or None."""
    depth = 0
    i = open_index
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text) and text[i + 1] in "{}":
            i += 2  # escaped brace, not a group boundary
            continue
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[open_index + 1 : i]
        i += 1
    return None


def last_boxed_payload(text: str) -> str | None:
    """Payload of the last well-formed ``\\boxed{...}`` in ``text``, or None."""
    start = text.rfind(_BOXED_MARKER)
    while start != -1:
        payload = _balanced_payload(text, start + len(_BOXED_MARKER) - 1)
        if payload is not None:
            return payload
        start = text.rfind(_BOXED_MARKER, 0, start)
    return None


def detect_final_answer(step_text: str, pattern: AnswerPattern = DEFAULT_ANSWER_PATTERN) -> str | None:
    """Extract the final answer from ``step_text``, or None when absent.

    Deterministic: the same text and pattern always yield the same result.
    When the text contains several candidate answers, the last one wins.
    """
    if pattern.regex is not None:
        matches = list(re.finditer(pattern.regex, step_text, re.DOTALL))
        if not matches:
            return None
        return matches[-1].group(1)
    return last_boxed_payload(step_text)


@dataclass(frozen=True)
class LattsConfig:
    """Settings for the acceptance-rejection sampling loop.

    ``max_trials`` caps candidate draws per step attempt, ``max_fallbacks``
    caps fallback actions per completion (a single global budget), and
    ``chunk_size`` batches candidate draws; it must divide ``max_trials``.
    """

    max_trials: int = 32
    max_fallbacks: int = 8
    chunk_size: int = 1
    fallback: FallbackPolicy = FallbackPolicy.BACKTRACK
    modulator: Modulator = field(default_factory=Modulator.identity)
    generation: GenerationParams = field(default_factory=GenerationParams)
    answer_pattern: AnswerPattern = DEFAULT_ANSWER_PATTERN
    fallback_answer: str = DEFAULT_FALLBACK_ANSWER
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.max_trials < 1:
            raise ValueError("max_trials must be >= 1")
        if self.max_fallbacks < 0:
            raise ValueError("max_fallbacks must be >= 0")
        if not 1 <= self.chunk_size <= self.max_trials:
            raise ValueError("chunk_size must be in [1, max_trials]")
        if self.max_trials % self.chunk_size != 0:
            raise ValueError("chunk_size must divide max_trials")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must fit in an unsigned 64-bit integer")


@dataclass(frozen=True)
class FallbackEvent:
    """One fallback action, recorded at the 0-based index of the failed step."""

    step_index: int
    action: FallbackPolicy

    def to_dict(self) -> dict[str, Any]:
        return {"step_index": self.step_index, "action": self.action.value}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FallbackEvent":
        return cls(step_index=int(data["step_index"]), action=FallbackPolicy(data["action"]))


@dataclass(frozen=True)
class CompletionRecord:
    """Everything one completion run produced, including cost accounting.

    ``trials_per_step`` logs candidate draws per step attempt in
    chronological order, failed attempts included.  ``model_calls`` counts
    batched generator invocations, ``tokens_generated`` counts tokens over
    all candidates (rejected ones included), and ``verifier_calls`` counts
    individual candidate scorings.  ``final_score`` is the raw verifier
    score of the last accepted step; it is absent for completions stopped
    by fallback and for unscored baseline runs.
    """

    chain: Chain
    trials_per_step: tuple[int, ...] = ()
    fallback_events: tuple[FallbackEvent, ...] = ()
    tokens_generated: int = 0
    verifier_calls: int = 0
    model_calls: int = 0
    final_score: float | None = None
    extracted_answer: str | None = None
    error: str | None = None

    def __post_init__(self) -> None:
        if self.tokens_generated < 0 or self.verifier_calls < 0 or self.model_calls < 0:
            raise ValueError("accounting counters must be non-negative")
        if self.final_score is not None and not 0 <= self.final_score <= 1:
            raise ValueError("final_score must be in [0, 1]")

    @property
    def status(self) -> ChainStatus:
        return self.chain.status

    def to_dict(self) -> dict[str, Any]:
        return {
            "chain": self.chain.to_dict(),
            "trials_per_step": list(self.trials_per_step),
            "fallback_events": [e.to_dict() for e in self.fallback_events],
            "tokens_generated": self.tokens_generated,
            "verifier_calls": self.verifier_calls,
            "model_calls": self.model_calls,
            "final_score": self.final_score,
            "extracted_answer": self.extracted_answer,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CompletionRecord":
        return cls(
            chain=Chain.from_dict(data["chain"]),
            trials_per_step=tuple(int(t) for t in data.get("trials_per_step", ())),
            fallback_events=tuple(
                FallbackEvent.from_dict(e) for e in data.get("fallback_events", ())
            ),
            tokens_generated=int(data.get("tokens_generated", 0)),
            verifier_calls=int(data.get("verifier_calls", 0)),
            model_calls=int(data.get("model_calls", 0)),
            final_score=data.get("final_score"),
            extracted_answer=data.get("extracted_answer"),
            error=data.get("error"),
        )


@dataclass(frozen=True)
class RngPair:
    """Two independent random streams backing one completion.

    Candidate sampling draws from ``generation`` and accept/reject
    uniforms draw from ``acceptance``.  Keeping the streams separate means
    a run that rejects candidates consumes exactly the same generation
    draws as one that keeps everything, which makes batched sampling
    reproducible and comparable across methods.
    """

    generation: np.random.Generator
    acceptance: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int, problem_id: str = "", completion_index: int = 0) -> "RngPair":
        return completion_rng(seed, problem_id, completion_index)


def _stable_id_key(problem_id: str) -> int:
    """A platform-stable 64-bit integer derived from a problem id."""
    digest = hashlib.sha256(problem_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def completion_rng(seed: int, problem_id: str, completion_index: int) -> RngPair:
    """Derive the (generation, acceptance) streams for one completion.

    The derivation depends only on the experiment seed, a stable hash of
    the problem id, and the completion index, so any completion can be
    re-run in isolation and reproduce the full experiment's draws.
    """
    if completion_index < 0:
        raise ValueError("completion_index must be >= 0")
    root = np.random.SeedSequence([seed, _stable_id_key(problem_id), completion_index])
    gen_seq, accept_seq = root.spawn(2)
    return RngPair(
        generation=np.random.default_rng(gen_seq),
        acceptance=np.random.default_rng(accept_seq),
    )


def ensure_unique_ids(problems: Iterable[Problem]) -> None:
    """Raise ``ValueError`` naming the first duplicated problem id, if any."""
    seen: set[str] = set()
    for p in problems:
        if p.id in seen:
            raise ValueError(f"duplicate problem id: {p.id!r}")
        seen.add(p.id)
