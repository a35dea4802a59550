"""The acceptance-rejection sampling loop over reasoning steps.

One step attempt draws up to ``max_trials`` candidate steps from the
generator.  Each candidate is scored by the verifier, the score is passed
through the modulator, and a uniform draw on [0, 1) decides acceptance.
Accepted steps extend the chain; a fully rejected attempt triggers one of
the fallback policies, drawing on a single budget shared across the whole
completion.

Candidates can be drawn in chunks: a chunk is one batched generator call,
its candidates get independent uniforms, and if any candidate passes, the
highest raw-scoring candidate of the chunk is accepted.  A chunk size of
1 reproduces the sequential loop draw for draw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Sequence

from .backends import BackendError, GeneratorBackend, SyntheticProcess, VerifierBackend
from .core import (
    Chain,
    ChainStatus,
    CompletionRecord,
    FallbackEvent,
    FallbackPolicy,
    LattsConfig,
    Problem,
    RngPair,
    Step,
    completion_rng,
    detect_final_answer,
)
from .modulators import Modulator, apply_modulator, score_candidate

__all__ = [
    "DifficultyReport",
    "FallbackOutcome",
    "RunTally",
    "ScoredCandidate",
    "StepOutcome",
    "TraceEvent",
    "apply_fallback",
    "ar_sample_step",
    "chunked_ar_sample_step",
    "fadm",
    "local_difficulty_exact",
    "run_latts",
    "sample_accepted_steps",
    "sample_step_outcome",
]

TraceSink = Callable[["TraceEvent"], None]


@dataclass(frozen=True)
class ScoredCandidate:
    """A drawn candidate with its raw score and its accept-test result."""

    step: Step
    raw_score: float
    passed: bool


@dataclass(frozen=True)
class StepOutcome:
    """Result of one step attempt.

    ``step`` is the accepted candidate, or None when every trial was
    rejected; in the rejected case ``candidates`` holds exactly
    ``max_trials`` entries for fallback handling.  ``accepted_score`` is
    the raw verifier score of the accepted candidate.
    """

    step: Step | None
    trials: int
    candidates: tuple[ScoredCandidate, ...]
    accepted_score: float | None = None

    @property
    def accepted(self) -> bool:
        return self.step is not None


@dataclass(frozen=True)
class TraceEvent:
    """One candidate evaluation, for per-step diagnostics."""

    step_index: int
    trial_index: int
    raw_score: float
    modulated_pass: bool
    accepted: bool
    tokens: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "step_index": self.step_index,
            "trial_index": self.trial_index,
            "raw_score": self.raw_score,
            "modulated_pass": self.modulated_pass,
            "accepted": self.accepted,
            "tokens": self.tokens,
        }


@dataclass
class RunTally:
    """Mutable cost counters threaded through one run."""

    tokens_generated: int = 0
    verifier_calls: int = 0
    model_calls: int = 0

    def add_model_call(self, generator: GeneratorBackend, batch: Sequence[Step]) -> None:
        self.model_calls += 1 if generator.supports_batch else len(batch)
        self.tokens_generated += sum(s.token_count for s in batch)


@dataclass(frozen=True)
class FallbackOutcome:
    """Chain after a fallback action; ``terminal`` means the run must stop.

    ``appended_score`` is set only by the max policy: the raw score of the
    rejected candidate it promoted onto the chain.
    """

    chain: Chain
    terminal: bool
    appended_score: float | None = None


@dataclass(frozen=True)
class DifficultyReport:
    """Exact local difficulty of a state and the implied expected trials.

    ``difficulty`` is one minus the expected modulated score of the next
    step under the process distribution; ``expected_trials`` is its
    reciprocal complement and is infinite when nothing can be accepted.
    """

    difficulty: float
    expected_trials: float


def _emit(trace: TraceSink | None, event: TraceEvent) -> None:
    if trace is not None:
        trace(event)


def ar_sample_step(
    config: LattsConfig,
    generator: GeneratorBackend,
    verifier: VerifierBackend,
    problem: Problem,
    prefix: Chain,
    rng: RngPair,
    tally: RunTally | None = None,
    trace: TraceSink | None = None,
) -> StepOutcome:
    """Sequentially draw, score, and accept/reject up to ``max_trials`` candidates.

    A candidate passes when its modulated score strictly exceeds a fresh
    uniform draw on [0, 1), so a modulated score of 0 can never pass and a
    score of 1 always does.
    """
    if prefix.terminal:
        raise ValueError(f"cannot sample a step after a terminal chain (status={prefix.status.value})")
    if tally is None:
        tally = RunTally()
    step_index = len(prefix.steps)
    candidates: list[ScoredCandidate] = []
    for trial in range(config.max_trials):
        batch = generator.sample_step(problem, prefix, 1, config.generation, rng.generation)
        if len(batch) != 1:
            raise BackendError(f"generator returned {len(batch)} candidates for n=1")
        candidate = batch[0]
        tally.add_model_call(generator, batch)
        raw, modulated = score_candidate(verifier, config.modulator, problem, prefix, candidate)
        tally.verifier_calls += 1
        u = rng.acceptance.random()
        passed = bool(u < modulated)
        candidates.append(ScoredCandidate(step=candidate, raw_score=raw, passed=passed))
        _emit(trace, TraceEvent(step_index, trial, raw, passed, passed, candidate.token_count))
        if passed:
            return StepOutcome(
                step=candidate,
                trials=trial + 1,
                candidates=tuple(candidates),
                accepted_score=raw,
            )
    return StepOutcome(step=None, trials=config.max_trials, candidates=tuple(candidates))


def chunked_ar_sample_step(
    config: LattsConfig,
    generator: GeneratorBackend,
    verifier: VerifierBackend,
    problem: Problem,
    prefix: Chain,
    rng: RngPair,
    tally: RunTally | None = None,
    trace: TraceSink | None = None,
) -> StepOutcome:
    """Chunked variant: draw ``chunk_size`` candidates per generator call.

    Every candidate in a chunk gets its own uniform; if at least one
    passes, the chunk's highest raw-scoring candidate (earliest on ties)
    is accepted.  With a chunk size of 1 this consumes random draws and
    produces outcomes identical to :func:`ar_sample_step`.
    """
    if prefix.terminal:
        raise ValueError(f"cannot sample a step after a terminal chain (status={prefix.status.value})")
    if tally is None:
        tally = RunTally()
    size = config.chunk_size
    step_index = len(prefix.steps)
    candidates: list[ScoredCandidate] = []
    for chunk in range(config.max_trials // size):
        batch = generator.sample_step(problem, prefix, size, config.generation, rng.generation)
        if len(batch) != size:
            raise BackendError(f"generator returned {len(batch)} candidates for n={size}")
        tally.add_model_call(generator, batch)
        raws = []
        modulated = []
        for candidate in batch:
            raw, mod = score_candidate(verifier, config.modulator, problem, prefix, candidate)
            raws.append(raw)
            modulated.append(mod)
        tally.verifier_calls += size
        draws = rng.acceptance.random(size)
        passed = [bool(draws[h] < modulated[h]) for h in range(size)]
        chosen: int | None = None
        if any(passed):
            chosen = max(range(size), key=lambda h: (raws[h], -h))
        for h, candidate in enumerate(batch):
            candidates.append(ScoredCandidate(step=candidate, raw_score=raws[h], passed=passed[h]))
            _emit(
                trace,
                TraceEvent(
                    step_index,
                    chunk * size + h,
                    raws[h],
                    passed[h],
                    chosen == h,
                    candidate.token_count,
                ),
            )
        if chosen is not None:
            return StepOutcome(
                step=batch[chosen],
                trials=(chunk + 1) * size,
                candidates=tuple(candidates),
                accepted_score=raws[chosen],
            )
    return StepOutcome(step=None, trials=config.max_trials, candidates=tuple(candidates))


def sample_step_outcome(
    config: LattsConfig,
    generator: GeneratorBackend,
    verifier: VerifierBackend,
    problem: Problem,
    prefix: Chain,
    rng: RngPair,
    tally: RunTally | None = None,
    trace: TraceSink | None = None,
) -> StepOutcome:
    """Dispatch to the sequential or chunked sampler based on the config."""
    sampler = ar_sample_step if config.chunk_size == 1 else chunked_ar_sample_step
    return sampler(config, generator, verifier, problem, prefix, rng, tally, trace)


def apply_fallback(
    policy: FallbackPolicy,
    chain: Chain,
    rejected: Sequence[ScoredCandidate],
) -> FallbackOutcome:
    """Apply one fallback action to a chain whose last step attempt failed.

    ``stop`` terminates the run; ``max`` promotes the highest raw-scoring
    rejected candidate (earliest on ties); ``backtrack`` removes the most
    recent accepted step (a no-op at an empty chain, which simply retries
    the first step); ``restart`` clears the chain.
    """
    if chain.terminal:
        raise ValueError(f"cannot apply a fallback to a terminal chain (status={chain.status.value})")
    if policy is FallbackPolicy.STOP:
        return FallbackOutcome(
            chain=chain.with_status(ChainStatus.STOPPED_BY_FALLBACK), terminal=True
        )
    if policy is FallbackPolicy.MAX:
        if not rejected:
            raise ValueError("max fallback requires the rejected candidates")
        best = max(range(len(rejected)), key=lambda i: (rejected[i].raw_score, -i))
        promoted = rejected[best]
        return FallbackOutcome(
            chain=chain.with_step(promoted.step),
            terminal=False,
            appended_score=promoted.raw_score,
        )
    if policy is FallbackPolicy.BACKTRACK:
        return FallbackOutcome(chain=chain.truncated(max(len(chain) - 1, 0)), terminal=False)
    if policy is FallbackPolicy.RESTART:
        return FallbackOutcome(chain=Chain(), terminal=False)
    raise ValueError(f"unknown fallback policy: {policy!r}")


def run_latts(
    config: LattsConfig,
    generator: GeneratorBackend,
    verifier: VerifierBackend,
    problem: Problem,
    completion_index: int = 0,
    trace: TraceSink | None = None,
) -> CompletionRecord:
    """Run one full completion and return its record.

    The loop attempts steps until a final answer appears, the step cap is
    reached, or the fallback budget runs out.  Random draws derive from
    the config seed, the problem id, and ``completion_index``, so any
    completion is reproducible in isolation.

    Backend failures do not raise; they produce a partial record with
    ``error`` set and whatever accounting had accrued.
    """
    rng = completion_rng(config.rng_seed, problem.id, completion_index)
    tally = RunTally()
    chain = Chain()
    accepted_scores: list[float] = []  # raw score per accepted step, aligned with chain
    trials_log: list[int] = []
    events: list[FallbackEvent] = []
    fallbacks_used = 0

    def record(error: str | None = None) -> CompletionRecord:
        status = chain.status
        final_score: float | None = None
        if accepted_scores and status not in (
            ChainStatus.STOPPED_BY_FALLBACK,
            ChainStatus.IN_PROGRESS,
        ):
            final_score = accepted_scores[-1]
        extracted: str | None = None
        if status is ChainStatus.STOPPED_BY_FALLBACK:
            extracted = config.fallback_answer
        elif chain.steps:
            extracted = detect_final_answer(chain.steps[-1].text, config.answer_pattern)
        return CompletionRecord(
            chain=chain,
            trials_per_step=tuple(trials_log),
            fallback_events=tuple(events),
            tokens_generated=tally.tokens_generated,
            verifier_calls=tally.verifier_calls,
            model_calls=tally.model_calls,
            final_score=final_score,
            extracted_answer=extracted,
            error=error,
        )

    while True:
        try:
            outcome = sample_step_outcome(config, generator, verifier, problem, chain, rng, tally, trace)
        except BackendError as exc:
            return record(error=str(exc))
        trials_log.append(outcome.trials)
        if outcome.accepted:
            assert outcome.step is not None and outcome.accepted_score is not None
            chain = chain.with_step(outcome.step)
            accepted_scores.append(outcome.accepted_score)
            if outcome.step.is_final:
                chain = chain.with_status(ChainStatus.FINAL_ANSWER_FOUND)
                return record()
            if len(chain) >= config.generation.max_steps:
                chain = chain.with_status(ChainStatus.STEP_CAP_REACHED)
                return record()
            continue
        # Every trial of the attempt was rejected.
        if fallbacks_used >= config.max_fallbacks:
            chain = chain.with_status(ChainStatus.STOPPED_BY_FALLBACK)
            return record()
        events.append(FallbackEvent(step_index=len(chain), action=config.fallback))
        fallbacks_used += 1
        result = apply_fallback(config.fallback, chain, outcome.candidates)
        if config.fallback is FallbackPolicy.BACKTRACK and len(chain) > 0:
            accepted_scores.pop()
        elif config.fallback is FallbackPolicy.RESTART:
            accepted_scores.clear()
        chain = result.chain
        if result.terminal:
            return record()
        if config.fallback is FallbackPolicy.MAX:
            assert result.appended_score is not None
            accepted_scores.append(result.appended_score)
            if chain.steps[-1].is_final:
                chain = chain.with_status(ChainStatus.FINAL_ANSWER_FOUND)
                return record()
            if len(chain) >= config.generation.max_steps:
                chain = chain.with_status(ChainStatus.STEP_CAP_REACHED)
                return record()


def local_difficulty_exact(
    process: SyntheticProcess,
    modulator: Modulator,
    state: str,
) -> DifficultyReport:
    """Enumerate a synthetic state's exact difficulty.

    Difficulty is one minus the expected modulated score of the next step;
    the expected number of trials per accepted step is its reciprocal
    complement, infinite when no candidate can ever be accepted.
    """
    row = process.transition_row(state)
    expected_acceptance = 0.0
    for symbol, prob in row.items():
        if prob <= 0:
            continue
        raw = process.symbol_score(state, symbol)
        expected_acceptance += prob * apply_modulator(modulator, raw)
    difficulty = min(max(1.0 - expected_acceptance, 0.0), 1.0)
    if difficulty >= 1.0:
        return DifficultyReport(difficulty=1.0, expected_trials=math.inf)
    return DifficultyReport(difficulty=difficulty, expected_trials=1.0 / (1.0 - difficulty))


def fadm(record: CompletionRecord) -> float:
    """First-answer decoding multiplier: model calls per step of the final chain.

    With batched chunks this is the number of batched generator calls the
    run spent divided by the length of the chain it ended with; 1.0 means
    every call contributed a kept step.  Undefined for empty chains.
    """
    steps = len(record.chain.steps)
    if steps == 0:
        raise ValueError("fadm is undefined for an empty chain")
    return record.model_calls / steps


def sample_accepted_steps(
    config: LattsConfig,
    generator: GeneratorBackend,
    verifier: VerifierBackend,
    problem: Problem,
    num_samples: int,
    prefix: Chain | None = None,
    rng: RngPair | None = None,
) -> tuple[list[str], list[int], RunTally]:
    """Repeatedly run one step attempt from a fixed prefix.

    Returns the accepted step texts, the trial count of each acceptance,
    and the accumulated tally.  Used for distribution-level checks where
    each acceptance must be an independent draw from the same state.
    Raises if an attempt exhausts ``max_trials``; size the trial cap so
    that rejection is impossible or negligible for the process at hand.
    """
    if prefix is None:
        prefix = Chain()
    if rng is None:
        rng = completion_rng(config.rng_seed, problem.id, 0)
    tally = RunTally()
    texts: list[str] = []
    trials: list[int] = []
    for _ in range(num_samples):
        outcome = sample_step_outcome(config, generator, verifier, problem, prefix, rng, tally)
        if not outcome.accepted:
            raise RuntimeError(
                f"step attempt exhausted max_trials={config.max_trials} during oracle sampling"
            )
        assert outcome.step is not None
        texts.append(outcome.step.text)
        trials.append(outcome.trials)
    return texts, trials, tally
