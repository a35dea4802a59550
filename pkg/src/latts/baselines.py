"""Standard test-time scaling baselines sharing the backend interfaces.

All baselines account for every token and verifier call they spend, so
compute-accuracy comparisons against the acceptance-rejection sampler are
like for like.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .backends import BackendError, GeneratorBackend, VerifierBackend
from .core import (
    DEFAULT_ANSWER_PATTERN,
    AnswerPattern,
    Chain,
    ChainStatus,
    CompletionRecord,
    GenerationParams,
    Problem,
    detect_final_answer,
)
from .engine import RunTally
from .modulators import Modulator, score_candidate

__all__ = [
    "BeamConfig",
    "BeamSearchOutcome",
    "beam_search",
    "beam_search_lookahead",
    "best_of_n",
    "majority_vote",
    "sample_completion",
    "step_level_bon",
]

_IDENTITY = Modulator.identity()


def majority_vote(answers: Sequence[str]) -> str:
    """The most frequent answer; the earliest-seen answer wins ties."""
    if not answers:
        raise ValueError("majority_vote requires at least one answer")
    counts: dict[str, int] = {}
    for answer in answers:
        counts[answer] = counts.get(answer, 0) + 1
    return max(counts.items(), key=lambda item: item[1])[0]


def best_of_n(scored_answers: Sequence[tuple[str, float]]) -> str:
    """The answer with the highest summed score; earliest-seen wins ties."""
    if not scored_answers:
        raise ValueError("best_of_n requires at least one scored answer")
    totals: dict[str, float] = {}
    for answer, score in scored_answers:
        if not 0 <= score <= 1:
            raise ValueError(f"score {score!r} for answer {answer!r} outside [0, 1]")
        totals[answer] = totals.get(answer, 0.0) + score
    return max(totals.items(), key=lambda item: item[1])[0]


def _terminal_status(step_is_final: bool, length: int, params: GenerationParams) -> ChainStatus | None:
    if step_is_final:
        return ChainStatus.FINAL_ANSWER_FOUND
    if length >= params.max_steps:
        return ChainStatus.STEP_CAP_REACHED
    return None


def sample_completion(
    generator: GeneratorBackend,
    problem: Problem,
    params: GenerationParams,
    rng: np.random.Generator,
    verifier: VerifierBackend | None = None,
    answer_pattern: AnswerPattern = DEFAULT_ANSWER_PATTERN,
) -> CompletionRecord:
    """One plain completion: a single candidate per step, no filtering.

    This is the unit of the majority-voting and best-of-n baselines.  When
    a verifier is given, the final step is scored once so the completion
    can participate in weighted selection.
    """
    tally = RunTally()
    chain = Chain()
    while True:
        batch = generator.sample_step(problem, chain, 1, params, rng)
        if len(batch) != 1:
            raise BackendError(f"generator returned {len(batch)} candidates for n=1")
        tally.add_model_call(generator, batch)
        step = batch[0]
        prefix = chain
        chain = chain.with_step(step)
        status = _terminal_status(step.is_final, len(chain), params)
        if status is not None:
            chain = chain.with_status(status)
            break
    final_score: float | None = None
    if verifier is not None:
        raw, _ = score_candidate(verifier, _IDENTITY, problem, prefix, step)
        tally.verifier_calls += 1
        final_score = raw
    return CompletionRecord(
        chain=chain,
        trials_per_step=(1,) * len(chain),
        tokens_generated=tally.tokens_generated,
        verifier_calls=tally.verifier_calls,
        model_calls=tally.model_calls,
        final_score=final_score,
        extracted_answer=detect_final_answer(chain.steps[-1].text, answer_pattern),
    )


def step_level_bon(
    num_candidates: int,
    generator: GeneratorBackend,
    verifier: VerifierBackend,
    problem: Problem,
    params: GenerationParams,
    rng: np.random.Generator,
    answer_pattern: AnswerPattern = DEFAULT_ANSWER_PATTERN,
) -> CompletionRecord:
    """Greedy step-wise selection: sample a batch per step, keep the best.

    Each step draws ``num_candidates`` candidates in one batched call and
    appends the highest raw-scoring one (earliest on ties).  Every
    candidate is scored, so verifier calls grow with the batch size.
    """
    if num_candidates < 1:
        raise ValueError("num_candidates must be >= 1")
    tally = RunTally()
    chain = Chain()
    trials: list[int] = []
    last_score = 0.0
    while True:
        batch = generator.sample_step(problem, chain, num_candidates, params, rng)
        if len(batch) != num_candidates:
            raise BackendError(
                f"generator returned {len(batch)} candidates for n={num_candidates}"
            )
        tally.add_model_call(generator, batch)
        raws = []
        for candidate in batch:
            raw, _ = score_candidate(verifier, _IDENTITY, problem, chain, candidate)
            raws.append(raw)
        tally.verifier_calls += num_candidates
        best = max(range(num_candidates), key=lambda i: (raws[i], -i))
        step = batch[best]
        last_score = raws[best]
        chain = chain.with_step(step)
        trials.append(num_candidates)
        status = _terminal_status(step.is_final, len(chain), params)
        if status is not None:
            chain = chain.with_status(status)
            break
    return CompletionRecord(
        chain=chain,
        trials_per_step=tuple(trials),
        tokens_generated=tally.tokens_generated,
        verifier_calls=tally.verifier_calls,
        model_calls=tally.model_calls,
        final_score=last_score,
        extracted_answer=detect_final_answer(chain.steps[-1].text, answer_pattern),
    )


@dataclass(frozen=True)
class BeamConfig:
    """Beam search shape: total beams kept per round and expansion width.

    ``num_beams`` candidates are scored each round; the top
    ``num_beams / beam_width`` survive and each expands into
    ``beam_width`` continuations.  ``lookahead_k`` extends scoring with a
    greedy rollout of up to that many steps.
    """

    num_beams: int
    beam_width: int
    lookahead_k: int = 0

    def __post_init__(self) -> None:
        if self.num_beams < 1:
            raise ValueError("num_beams must be >= 1")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.num_beams % self.beam_width != 0:
            raise ValueError("beam_width must divide num_beams")
        if self.lookahead_k < 0:
            raise ValueError("lookahead_k must be >= 0")


@dataclass(frozen=True)
class BeamSearchOutcome:
    """Completed beams plus the aggregate cost of the whole search.

    Per-record counters cover only each beam's own surviving path (its
    step tokens and the one scoring of each of its steps); the totals here
    cover everything the search spent, discarded branches and lookahead
    rollouts included.
    """

    records: tuple[CompletionRecord, ...]
    tokens_generated: int
    verifier_calls: int
    model_calls: int


def _lookahead_score(
    generator: GeneratorBackend,
    verifier: VerifierBackend,
    problem: Problem,
    chain: Chain,
    k: int,
    params: GenerationParams,
    rng: np.random.Generator,
    tally: RunTally,
) -> float:
    """Score the newest step of ``chain``, optionally after a greedy rollout.

    With ``k > 0`` and a non-final newest step, up to ``k`` steps are
    rolled out greedily and the verifier scores the furthest rolled step
    in its own context.  Exactly one verifier call either way.
    """
    newest = chain.steps[-1]
    if k > 0 and not newest.is_final:
        greedy = replace(params, temperature=0.0)
        rolled = chain
        for _ in range(k):
            if rolled.steps[-1].is_final or len(rolled) >= params.max_steps:
                break
            batch = generator.sample_step(problem, rolled, 1, greedy, rng)
            if len(batch) != 1:
                raise BackendError(f"generator returned {len(batch)} candidates for n=1")
            tally.add_model_call(generator, batch)
            rolled = rolled.with_step(batch[0])
        chain = rolled
    prefix = Chain(steps=chain.steps[:-1])
    raw, _ = score_candidate(verifier, _IDENTITY, problem, prefix, chain.steps[-1])
    tally.verifier_calls += 1
    return raw


def _run_beam_search(
    config: BeamConfig,
    generator: GeneratorBackend,
    verifier: VerifierBackend,
    problem: Problem,
    params: GenerationParams,
    rng: np.random.Generator,
    answer_pattern: AnswerPattern,
) -> BeamSearchOutcome:
    if config.lookahead_k > 0 and not generator.supports_greedy:
        raise ValueError("lookahead requires a generator with greedy decoding support")
    keep = config.num_beams // config.beam_width
    tally = RunTally()
    completed: list[tuple[Chain, float]] = []

    batch = generator.sample_step(problem, Chain(), config.num_beams, params, rng)
    tally.add_model_call(generator, batch)
    frontier = [Chain().with_step(step) for step in batch]

    while frontier:
        scored: list[tuple[Chain, float]] = []
        for chain in frontier:
            score = _lookahead_score(
                generator, verifier, problem, chain, config.lookahead_k, params, rng, tally
            )
            scored.append((chain, score))
        live: list[tuple[Chain, float]] = []
        for chain, score in scored:
            status = _terminal_status(chain.steps[-1].is_final, len(chain), params)
            if status is not None:
                completed.append((chain.with_status(status), score))
            else:
                live.append((chain, score))
        if not live:
            break
        order = sorted(range(len(live)), key=lambda i: (-live[i][1], i))
        retained = [live[i][0] for i in order[:keep]]
        frontier = []
        for chain in retained:
            batch = generator.sample_step(problem, chain, config.beam_width, params, rng)
            tally.add_model_call(generator, batch)
            frontier.extend(chain.with_step(step) for step in batch)

    records = []
    for chain, score in completed:
        records.append(
            CompletionRecord(
                chain=chain,
                trials_per_step=(1,) * len(chain),
                tokens_generated=sum(s.token_count for s in chain.steps),
                verifier_calls=len(chain),
                model_calls=len(chain),
                final_score=score,
                extracted_answer=detect_final_answer(chain.steps[-1].text, answer_pattern),
            )
        )
    return BeamSearchOutcome(
        records=tuple(records),
        tokens_generated=tally.tokens_generated,
        verifier_calls=tally.verifier_calls,
        model_calls=tally.model_calls,
    )


def beam_search(
    config: BeamConfig,
    generator: GeneratorBackend,
    verifier: VerifierBackend,
    problem: Problem,
    params: GenerationParams,
    rng: np.random.Generator,
    answer_pattern: AnswerPattern = DEFAULT_ANSWER_PATTERN,
) -> BeamSearchOutcome:
    """Verifier-ranked beam search over steps.

    Beams whose newest step carries a final answer freeze and keep their
    score for selection; the rest compete for the retained slots.
    """
    if config.lookahead_k != 0:
        raise ValueError("beam_search requires lookahead_k == 0; use beam_search_lookahead")
    return _run_beam_search(config, generator, verifier, problem, params, rng, answer_pattern)


def beam_search_lookahead(
    config: BeamConfig,
    generator: GeneratorBackend,
    verifier: VerifierBackend,
    problem: Problem,
    params: GenerationParams,
    rng: np.random.Generator,
    answer_pattern: AnswerPattern = DEFAULT_ANSWER_PATTERN,
) -> BeamSearchOutcome:
    """Beam search whose ranking scores come from short greedy rollouts.

    With ``lookahead_k == 0`` this is exactly :func:`beam_search`.
    """
    return _run_beam_search(config, generator, verifier, problem, params, rng, answer_pattern)
