"""Answer canonicalization and cross-completion voting.

Canonicalization maps surface answer variants onto one comparison key so
that voting and accuracy checks agree on what counts as the same answer.
Rule sets are versioned: records aggregated under ``default-v1`` stay
comparable forever, and future rule changes get a new id instead of
silently changing old results.

``default-v1`` applies, in order and to a fixed point:

* trim surrounding whitespace and collapse internal runs to one space
* replace the string with the payload of its last ``\\boxed{...}``
* strip ``$ ... $``, ``\\( ... \\)``, ``\\[ ... \\]`` math wrappers and
  redundant outer braces
* drop a leading "final answer:" / "answer:" style prefix
* rewrite ``\\frac{a}{b}`` (and ``\\dfrac``/``\\tfrac``) as ``a/b``,
  innermost first
* remove ``\\left``/``\\right`` and thin-space macros, tighten spaces
  around ``/``
* strip a redundant leading ``+`` and normalize negative zero to ``0``
* lowercase words that contain no digits and no backslash commands
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any, Callable, Sequence

from .core import DEFAULT_FALLBACK_ANSWER, CompletionRecord, last_boxed_payload

__all__ = [
    "AggregationConfig",
    "AnswerTotal",
    "VoteReport",
    "canonicalize",
    "canonicalizer_ids",
    "weighted_majority",
]

_Rule = Callable[[str], str]


def _trim(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip()


def _unwrap_boxed(text: str) -> str:
    payload = last_boxed_payload(text)
    return payload if payload is not None else text


_WRAPPERS = (("$", "$"), ("\\(", "\\)"), ("\\[", "\\]"))


def _strip_math_wrappers(text: str) -> str:
    stripped = text.strip()
    for left, right in _WRAPPERS:
        if (
            stripped.startswith(left)
            and stripped.endswith(right)
            and len(stripped) > len(left) + len(right)
        ):
            return stripped[len(left) : -len(right)]
    return stripped


def _strip_outer_braces(text: str) -> str:
    if len(text) >= 2 and text[0] == "{" and text[-1] == "}":
        depth = 0
        for i, ch in enumerate(text):
            if ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0 and i < len(text) - 1:
                    return text  # closes early: braces are not one outer group
        if depth == 0:
            return text[1:-1]
    return text


_ANSWER_PREFIX = re.compile(r"^(?:the\s+)?(?:final\s+)?answer\s*(?::|is\b)\s*", re.IGNORECASE)


def _strip_answer_prefix(text: str) -> str:
    return _ANSWER_PREFIX.sub("", text, count=1)


_FRAC = re.compile(r"\\[dt]?frac\{([^{}]*)\}\{([^{}]*)\}")


def _rewrite_fractions(text: str) -> str:
    while True:
        rewritten = _FRAC.sub(r"\1/\2", text)
        if rewritten == text:
            return rewritten
        text = rewritten


_LATEX_NOISE = re.compile(r"\\left|\\right|\\[,;!]")


def _drop_latex_noise(text: str) -> str:
    text = _LATEX_NOISE.sub("", text)
    return re.sub(r"\s*/\s*", "/", text)


_NEGATIVE_ZERO = re.compile(r"^-(0+(?:\.0+)?)$")


def _normalize_sign(text: str) -> str:
    if text.startswith("+") and len(text) > 1 and (text[1].isdigit() or text[1] == "."):
        text = text[1:]
    match = _NEGATIVE_ZERO.match(text)
    if match:
        return match.group(1)
    return text


def _lowercase_words(text: str) -> str:
    tokens = text.split(" ")
    out = []
    for token in tokens:
        if token and not any(ch.isdigit() for ch in token) and "\\" not in token:
            out.append(token.lower())
        else:
            out.append(token)
    return " ".join(out)


_DEFAULT_V1: tuple[_Rule, ...] = (
    _trim,
    _unwrap_boxed,
    _strip_math_wrappers,
    _strip_outer_braces,
    _strip_answer_prefix,
    _rewrite_fractions,
    _drop_latex_noise,
    _normalize_sign,
    _lowercase_words,
)

_RULE_SETS: dict[str, tuple[_Rule, ...]] = {
    "default-v1": _DEFAULT_V1,
}


def canonicalizer_ids() -> tuple[str, ...]:
    return tuple(sorted(_RULE_SETS))


def canonicalize(raw: str, rule_set: str = "default-v1") -> str:
    """Map an answer string to its canonical comparison form.

    Deterministic and idempotent: re-canonicalizing an output returns it
    unchanged.  Unknown rule-set ids raise ``ValueError``.
    """
    rules = _RULE_SETS.get(rule_set)
    if rules is None:
        raise ValueError(
            f"unknown canonicalizer {rule_set!r}; available: {', '.join(canonicalizer_ids())}"
        )
    text = raw
    # Every pass that changes the text either shrinks it or only lowercases
    # letters, so a fixed point is always reached; the cap is pure defense.
    for _ in range(2 * len(raw) + 16):
        previous = text
        for rule in rules:
            text = rule(text)
        if text == previous:
            break
    return text


@dataclass(frozen=True)
class AggregationConfig:
    """How completions of one problem combine into a single answer."""

    num_completions: int = 1
    canonicalizer: str = "default-v1"
    fallback_answer: str = DEFAULT_FALLBACK_ANSWER

    def __post_init__(self) -> None:
        if self.num_completions < 1:
            raise ValueError("num_completions must be >= 1")
        if self.canonicalizer not in _RULE_SETS:
            raise ValueError(
                f"unknown canonicalizer {self.canonicalizer!r}; "
                f"available: {', '.join(canonicalizer_ids())}"
            )


@dataclass(frozen=True)
class AnswerTotal:
    """A canonical answer with its summed weight and completion count."""

    answer: str
    total_score: float
    count: int

    def to_dict(self) -> dict[str, Any]:
        return {"answer": self.answer, "total_score": self.total_score, "count": self.count}


@dataclass(frozen=True)
class VoteReport:
    """Outcome of weighted voting over one problem's completions."""

    winner: str
    totals: tuple[AnswerTotal, ...]

    def to_dict(self) -> dict[str, Any]:
        return {"winner": self.winner, "totals": [t.to_dict() for t in self.totals]}


def weighted_majority(
    records: Sequence[CompletionRecord],
    config: AggregationConfig = AggregationConfig(),
) -> VoteReport:
    """Pick the canonical answer with the greatest summed final score.

    Only completions that produced both an answer and a final score carry
    weight; completions stopped by fallback are ignored whenever at least
    one scored completion exists.  Ties break toward the answer seen
    first.  Scaling every weight by the same positive constant leaves the
    winner unchanged.
    """
    if not records:
        raise ValueError("weighted_majority requires at least one record")
    totals: dict[str, AnswerTotal] = {}
    scored = [
        r for r in records if r.extracted_answer is not None and r.final_score is not None
    ]
    if scored:
        for record in scored:
            assert record.extracted_answer is not None and record.final_score is not None
            key = canonicalize(record.extracted_answer, config.canonicalizer)
            existing = totals.get(key)
            if existing is None:
                totals[key] = AnswerTotal(key, record.final_score, 1)
            else:
                totals[key] = AnswerTotal(
                    key, existing.total_score + record.final_score, existing.count + 1
                )
        winner = max(totals.values(), key=lambda t: t.total_score).answer
        return VoteReport(winner=winner, totals=tuple(totals.values()))
    # No completion earned a score: fall back to unweighted answers, and to
    # the configured default when not even an answer exists.
    answered = [r.extracted_answer for r in records if r.extracted_answer is not None]
    if answered:
        for answer in answered:
            key = canonicalize(answer, config.canonicalizer)
            existing = totals.get(key)
            if existing is None:
                totals[key] = AnswerTotal(key, 0.0, 1)
            else:
                totals[key] = AnswerTotal(key, 0.0, existing.count + 1)
        winner = max(totals.values(), key=lambda t: t.count).answer
        return VoteReport(winner=winner, totals=tuple(totals.values()))
    return VoteReport(winner=canonicalize(config.fallback_answer, config.canonicalizer), totals=())
