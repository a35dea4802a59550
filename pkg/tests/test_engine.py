"""Acceptance-rejection step sampling, fallbacks, and the full run loop."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latts.backends import (
    GeneratorBackend,
    SyntheticGenerator,
    SyntheticProcess,
    SyntheticVerifier,
    VerifierBackend,
)
from latts.core import (
    Chain,
    ChainStatus,
    FallbackEvent,
    FallbackPolicy,
    GenerationParams,
    LattsConfig,
    Problem,
    RngPair,
    Step,
    completion_rng,
)
from latts.engine import (
    RunTally,
    ScoredCandidate,
    apply_fallback,
    ar_sample_step,
    chunked_ar_sample_step,
    fadm,
    local_difficulty_exact,
    run_latts,
    sample_accepted_steps,
)
from latts.modulators import Modulator
from synthproc import (
    branching_tree,
    difficulty_levels,
    step_two_always_fails,
    two_symbol,
)


def _backends(process):
    return SyntheticGenerator(process), SyntheticVerifier(process)


class ScriptedGenerator(GeneratorBackend):
    """Returns pre-written batches in order; for deterministic chunk tests."""

    supports_batch = True

    def __init__(self, batches):
        self.batches = [list(b) for b in batches]

    def sample_step(self, problem, prefix, n, params, rng):
        batch = self.batches.pop(0)
        assert len(batch) == n, "script does not match requested batch size"
        return batch


class TableVerifier(VerifierBackend):
    def __init__(self, table):
        self.table = dict(table)

    def score(self, problem, prefix, candidate):
        return self.table[candidate.text]


class FixedUniforms:
    """Stands in for the acceptance stream with a scripted draw sequence."""

    def __init__(self, values):
        self.values = list(values)

    def random(self, size=None):
        if size is None:
            return self.values.pop(0)
        return np.array([self.values.pop(0) for _ in range(size)])


def _scripted_rng(uniforms):
    return RngPair(generation=np.random.default_rng(0), acceptance=FixedUniforms(uniforms))


_PROBLEM = Problem(id="scripted", prompt="s")


class TestSequentialSampling:
    def test_score_one_accepts_on_first_trial(self):
        process, problems = difficulty_levels()
        config = LattsConfig()
        rng = completion_rng(0, "d0", 0)
        outcome = ar_sample_step(config, *_backends(process), problems[0.0], Chain(), rng)
        assert outcome.accepted
        assert outcome.trials == 1
        assert outcome.accepted_score == 1.0

    def test_score_zero_never_accepts(self):
        process, problem = step_two_always_fails()
        config = LattsConfig(max_trials=8)
        prefix = Chain().with_step(Step("s1", 1))
        rng = completion_rng(0, problem.id, 0)
        outcome = ar_sample_step(config, *_backends(process), problem, prefix, rng)
        assert not outcome.accepted
        assert outcome.step is None
        assert outcome.trials == 8
        assert len(outcome.candidates) == 8
        assert all(not c.passed for c in outcome.candidates)
        assert all(c.raw_score == 0.0 for c in outcome.candidates)

    def test_accepted_outcome_shape(self):
        process, problem = two_symbol()
        config = LattsConfig(rng_seed=5)
        rng = completion_rng(5, problem.id, 0)
        outcome = ar_sample_step(config, *_backends(process), problem, Chain(), rng)
        assert outcome.accepted
        assert 1 <= outcome.trials <= config.max_trials
        assert len(outcome.candidates) == outcome.trials
        assert outcome.candidates[-1].step == outcome.step
        assert outcome.candidates[-1].passed
        assert all(not c.passed for c in outcome.candidates[:-1])
        assert outcome.accepted_score == outcome.candidates[-1].raw_score

    def test_terminal_prefix_rejected(self):
        process, problem = two_symbol()
        done = (
            Chain()
            .with_step(Step("a", 1, is_final=True))
            .with_status(ChainStatus.FINAL_ANSWER_FOUND)
        )
        rng = completion_rng(0, problem.id, 0)
        with pytest.raises(ValueError, match="terminal"):
            ar_sample_step(LattsConfig(), *_backends(process), problem, done, rng)

    def test_tally_counts_every_trial(self):
        process, problem = two_symbol()
        config = LattsConfig(rng_seed=5)
        rng = completion_rng(5, problem.id, 0)
        tally = RunTally()
        outcome = ar_sample_step(config, *_backends(process), problem, Chain(), rng, tally)
        assert tally.model_calls == outcome.trials
        assert tally.verifier_calls == outcome.trials
        assert tally.tokens_generated == outcome.trials  # one token per symbol

    def test_mean_trials_tracks_difficulty(self):
        """Harder states need more trials per acceptance, on average."""
        process, problems = difficulty_levels()
        config = LattsConfig(max_trials=256, rng_seed=17)
        means = {}
        for level in (0.6, 0.8):
            _, trials, _ = sample_accepted_steps(
                config, *_backends(process), problems[level], num_samples=300
            )
            means[level] = sum(trials) / len(trials)
        # Expected trials are 2.5 and 5.0; allow 3 standard errors.
        assert abs(means[0.6] - 2.5) <= 3 * np.sqrt(3.75 / 300)
        assert abs(means[0.8] - 5.0) <= 3 * np.sqrt(20.0 / 300)
        assert means[0.8] > means[0.6]


class TestChunkedSampling:
    def test_chunk_accepts_highest_raw_score_even_if_it_failed_its_draw(self):
        """The accept test gates the chunk; the raw argmax picks the winner."""
        config = LattsConfig(max_trials=2, chunk_size=2)
        generator = ScriptedGenerator([[Step("hi", 1), Step("lo", 1)]])
        verifier = TableVerifier({"hi": 0.9, "lo": 0.4})
        # "hi" fails its own draw (0.95 >= 0.9); "lo" passes (0.3 < 0.4).
        rng = _scripted_rng([0.95, 0.3])
        outcome = chunked_ar_sample_step(config, generator, verifier, _PROBLEM, Chain(), rng)
        assert outcome.accepted
        assert outcome.step.text == "hi"
        assert outcome.accepted_score == 0.9
        assert [c.passed for c in outcome.candidates] == [False, True]

    def test_raw_score_tie_takes_earliest_candidate(self):
        config = LattsConfig(max_trials=2, chunk_size=2)
        generator = ScriptedGenerator([[Step("first", 1), Step("second", 1)]])
        verifier = TableVerifier({"first": 0.5, "second": 0.5})
        rng = _scripted_rng([0.1, 0.1])
        outcome = chunked_ar_sample_step(config, generator, verifier, _PROBLEM, Chain(), rng)
        assert outcome.step.text == "first"

    def test_trials_count_whole_chunks(self):
        config = LattsConfig(max_trials=4, chunk_size=2)
        generator = ScriptedGenerator(
            [[Step("a", 1), Step("b", 1)], [Step("c", 1), Step("d", 1)]]
        )
        verifier = TableVerifier({"a": 0.0, "b": 0.0, "c": 1.0, "d": 0.3})
        rng = _scripted_rng([0.5, 0.5, 0.5, 0.5])
        trace_events = []
        outcome = chunked_ar_sample_step(
            config, generator, verifier, _PROBLEM, Chain(), rng, trace=trace_events.append
        )
        assert outcome.step.text == "c"
        assert outcome.trials == 4  # two chunks of two, counted in candidates
        assert len(outcome.candidates) == 4
        assert [e.trial_index for e in trace_events] == [0, 1, 2, 3]
        assert [e.accepted for e in trace_events] == [False, False, True, False]
        assert all(e.step_index == 0 for e in trace_events)

    def test_rejected_attempt_reports_max_trials(self):
        config = LattsConfig(max_trials=4, chunk_size=2)
        generator = ScriptedGenerator(
            [[Step("a", 1), Step("b", 1)], [Step("a", 1), Step("b", 1)]]
        )
        verifier = TableVerifier({"a": 0.0, "b": 0.0})
        rng = _scripted_rng([0.5] * 4)
        outcome = chunked_ar_sample_step(config, generator, verifier, _PROBLEM, Chain(), rng)
        assert not outcome.accepted
        assert outcome.trials == 4
        assert len(outcome.candidates) == 4

    def test_chunk_size_one_matches_sequential_sampler(self):
        """Draw for draw, chunk size 1 is the sequential loop."""
        process, problem = branching_tree(depth=3, seed=2)
        config = LattsConfig(chunk_size=1, rng_seed=9)
        for index in range(30):
            seq = ar_sample_step(
                config,
                *_backends(process),
                problem,
                Chain(),
                completion_rng(9, problem.id, index),
            )
            chunked = chunked_ar_sample_step(
                config,
                *_backends(process),
                problem,
                Chain(),
                completion_rng(9, problem.id, index),
            )
            assert chunked.step == seq.step
            assert chunked.trials == seq.trials
            assert chunked.candidates == seq.candidates

    def test_batched_backend_counts_one_model_call_per_chunk(self):
        process, problem = branching_tree(depth=3, seed=2)
        config = LattsConfig(max_trials=8, chunk_size=4, rng_seed=1)
        tally = RunTally()
        outcome = chunked_ar_sample_step(
            config,
            *_backends(process),
            problem,
            Chain(),
            completion_rng(1, problem.id, 0),
            tally,
        )
        assert tally.model_calls == outcome.trials // 4
        assert tally.verifier_calls == outcome.trials


class TestApplyFallback:
    def _rejected(self, *scores):
        return [
            ScoredCandidate(step=Step(f"c{i}", 1), raw_score=s, passed=False)
            for i, s in enumerate(scores)
        ]

    def test_stop_terminates_with_status(self):
        chain = Chain().with_step(Step("a", 1))
        result = apply_fallback(FallbackPolicy.STOP, chain, self._rejected(0.1))
        assert result.terminal
        assert result.chain.status is ChainStatus.STOPPED_BY_FALLBACK
        assert len(result.chain) == 1  # accepted work is kept

    def test_max_promotes_highest_raw_score(self):
        chain = Chain()
        result = apply_fallback(FallbackPolicy.MAX, chain, self._rejected(0.2, 0.7, 0.4))
        assert not result.terminal
        assert result.chain.steps[-1].text == "c1"
        assert result.appended_score == 0.7

    def test_max_tie_takes_earliest(self):
        result = apply_fallback(FallbackPolicy.MAX, Chain(), self._rejected(0.4, 0.4))
        assert result.chain.steps[-1].text == "c0"

    def test_max_requires_candidates(self):
        with pytest.raises(ValueError, match="candidates"):
            apply_fallback(FallbackPolicy.MAX, Chain(), [])

    def test_backtrack_removes_last_step(self):
        chain = Chain().with_step(Step("a", 1)).with_step(Step("b", 1))
        result = apply_fallback(FallbackPolicy.BACKTRACK, chain, self._rejected(0.1))
        assert [s.text for s in result.chain.steps] == ["a"]
        assert not result.terminal

    def test_backtrack_on_empty_chain_is_a_retry(self):
        result = apply_fallback(FallbackPolicy.BACKTRACK, Chain(), self._rejected(0.1))
        assert len(result.chain) == 0
        assert not result.terminal

    def test_restart_clears_the_chain(self):
        chain = Chain().with_step(Step("a", 1)).with_step(Step("b", 1))
        result = apply_fallback(FallbackPolicy.RESTART, chain, self._rejected(0.1))
        assert len(result.chain) == 0

    def test_terminal_chain_rejected(self):
        chain = Chain().with_status(ChainStatus.STOPPED_BY_FALLBACK)
        with pytest.raises(ValueError, match="terminal"):
            apply_fallback(FallbackPolicy.BACKTRACK, chain, self._rejected(0.1))


class TestRunLatts:
    def test_finds_final_answer(self):
        process, problem = branching_tree(depth=2, seed=3)
        config = LattsConfig(rng_seed=7)
        record = run_latts(config, *_backends(process), problem)
        assert record.error is None
        assert record.chain.status is ChainStatus.FINAL_ANSWER_FOUND
        assert record.chain.steps[-1].is_final
        assert record.extracted_answer == "1"
        assert len(record.trials_per_step) >= len(record.chain.steps)
        assert record.final_score is not None

    def test_step_cap(self):
        transitions = {}
        scores = {}
        state = "p"
        for _ in range(5):
            transitions[state] = {"x": 1.0}
            scores[state] = {"x": 1.0}
            state += "x"
        process = SyntheticProcess(alphabet=("x",), transitions=transitions, scores=scores)
        problem = Problem(id="line", prompt="p")
        config = LattsConfig(generation=GenerationParams(max_steps=3))
        record = run_latts(config, *_backends(process), problem)
        assert record.chain.status is ChainStatus.STEP_CAP_REACHED
        assert len(record.chain) == 3
        assert record.trials_per_step == (1, 1, 1)
        assert record.model_calls == 3
        assert record.tokens_generated == 3
        assert record.final_score == 1.0
        assert record.extracted_answer is None
        assert fadm(record) == 1.0

    def test_backtrack_until_budget_exhausted(self):
        process, problem = step_two_always_fails()
        config = LattsConfig(
            max_trials=4, max_fallbacks=2, fallback=FallbackPolicy.BACKTRACK
        )
        record = run_latts(config, *_backends(process), problem)
        assert record.chain.status is ChainStatus.STOPPED_BY_FALLBACK
        # Accept step 1, fail step 2, backtrack; twice; then stop on the
        # third failed attempt with the budget spent.
        assert record.trials_per_step == (1, 4, 1, 4, 1, 4)
        assert [s.text for s in record.chain.steps] == ["s1"]
        assert len(record.fallback_events) == 2
        assert all(e.action is FallbackPolicy.BACKTRACK for e in record.fallback_events)
        assert all(e.step_index == 1 for e in record.fallback_events)
        assert record.extracted_answer == config.fallback_answer
        assert record.final_score is None
        assert record.model_calls == 15
        assert record.verifier_calls == 15

    def test_stop_policy_halts_on_first_failure(self):
        process, problem = step_two_always_fails()
        config = LattsConfig(max_trials=3, fallback=FallbackPolicy.STOP)
        record = run_latts(config, *_backends(process), problem)
        assert record.chain.status is ChainStatus.STOPPED_BY_FALLBACK
        assert record.trials_per_step == (1, 3)
        assert len(record.fallback_events) == 1
        assert record.fallback_events[0].action is FallbackPolicy.STOP
        assert record.extracted_answer == config.fallback_answer

    def test_max_policy_pushes_through_the_hard_step(self):
        process, problem = step_two_always_fails()
        config = LattsConfig(max_trials=3, fallback=FallbackPolicy.MAX)
        record = run_latts(config, *_backends(process), problem)
        assert record.chain.status is ChainStatus.FINAL_ANSWER_FOUND
        assert record.trials_per_step == (1, 3, 1)
        assert len(record.chain) == 3
        assert record.chain.steps[1].text in ("x", "y")  # the promoted reject
        assert record.fallback_events == (
            FallbackEvent(step_index=1, action=FallbackPolicy.MAX),
        )
        assert record.extracted_answer == "1"
        assert record.final_score == 1.0

    def test_restart_clears_progress_and_scores(self):
        process, problem = step_two_always_fails()
        config = LattsConfig(
            max_trials=3, max_fallbacks=1, fallback=FallbackPolicy.RESTART
        )
        record = run_latts(config, *_backends(process), problem)
        assert record.chain.status is ChainStatus.STOPPED_BY_FALLBACK
        assert record.trials_per_step == (1, 3, 1, 3)
        assert [s.text for s in record.chain.steps] == ["s1"]
        # The chain holds an accepted step, but a stopped run reports no
        # final score: the answer it returns is the fallback answer.
        assert record.final_score is None
        assert record.extracted_answer == config.fallback_answer

    def test_custom_fallback_answer(self):
        process, problem = step_two_always_fails()
        config = LattsConfig(
            max_trials=2, max_fallbacks=0, fallback=FallbackPolicy.BACKTRACK,
            fallback_answer="unsure",
        )
        record = run_latts(config, *_backends(process), problem)
        assert record.extracted_answer == "unsure"

    def test_backend_failure_yields_partial_record(self):
        process, problem = two_symbol()  # only the first step is in the tables
        config = LattsConfig(rng_seed=3)
        record = run_latts(config, *_backends(process), problem)
        assert record.error is not None
        assert "no transition row" in record.error
        assert record.chain.status is ChainStatus.IN_PROGRESS
        assert len(record.chain) == 1
        assert record.final_score is None
        assert record.model_calls > 0  # accounting up to the failure is kept

    def test_same_seed_same_record(self):
        process, problem = branching_tree(depth=3, seed=5)
        config = LattsConfig(rng_seed=11, chunk_size=2, max_trials=8)
        first = run_latts(config, *_backends(process), problem, completion_index=4)
        second = run_latts(config, *_backends(process), problem, completion_index=4)
        assert first.to_dict() == second.to_dict()

    def test_trace_step_indices_follow_the_chain(self):
        process, problem = branching_tree(depth=2, seed=3)
        config = LattsConfig(rng_seed=7)
        events = []
        record = run_latts(config, *_backends(process), problem, trace=events.append)
        assert len(events) == sum(record.trials_per_step)
        accepted = sum(1 for e in events if e.accepted)
        assert accepted >= len(record.chain.steps)
        if not record.fallback_events:
            assert accepted == len(record.chain.steps)

    @given(
        policy=st.sampled_from(list(FallbackPolicy)),
        chunk=st.sampled_from([1, 2, 4]),
        max_fallbacks=st.integers(min_value=0, max_value=3),
        max_steps=st.integers(min_value=1, max_value=6),
        seed=st.integers(min_value=0, max_value=2**32 - 1),
    )
    @settings(max_examples=50, deadline=None)
    def test_candidate_budget_is_bounded(self, policy, chunk, max_fallbacks, max_steps, seed):
        """Total candidates never exceed (fallbacks+1) * trials * step cap."""
        process, problem = branching_tree(depth=4, seed=11)
        config = LattsConfig(
            max_trials=4,
            max_fallbacks=max_fallbacks,
            chunk_size=chunk,
            fallback=policy,
            generation=GenerationParams(max_steps=max_steps),
            rng_seed=seed,
        )
        record = run_latts(config, *_backends(process), problem)
        assert record.error is None
        assert record.chain.status is not ChainStatus.IN_PROGRESS
        total = sum(record.trials_per_step)
        assert total <= (max_fallbacks + 1) * config.max_trials * max_steps
        assert all(1 <= t <= config.max_trials for t in record.trials_per_step)
        if chunk > 1:
            assert all(t % chunk == 0 for t in record.trials_per_step)
        if record.chain.status is ChainStatus.FINAL_ANSWER_FOUND:
            assert record.chain.steps[-1].is_final


class TestDifficulty:
    def test_exact_difficulty_levels(self):
        process, _ = difficulty_levels()
        identity = Modulator.identity()
        d0 = local_difficulty_exact(process, identity, "d0")
        d6 = local_difficulty_exact(process, identity, "d6")
        d8 = local_difficulty_exact(process, identity, "d8")
        assert d0.difficulty == pytest.approx(0.0)
        assert d0.expected_trials == pytest.approx(1.0)
        assert d6.difficulty == pytest.approx(0.6)
        assert d6.expected_trials == pytest.approx(2.5)
        assert d8.difficulty == pytest.approx(0.8)
        assert d8.expected_trials == pytest.approx(5.0)

    def test_threshold_modulator_raises_difficulty(self):
        process, _ = two_symbol(p_a=0.8, score_a=0.25, score_b=1.0)
        report = local_difficulty_exact(process, Modulator.with_threshold(0.5), "s")
        # Only "b" survives the threshold: acceptance 0.2 * 1.0.
        assert report.difficulty == pytest.approx(0.8)
        assert report.expected_trials == pytest.approx(5.0)

    def test_impossible_state_has_infinite_expected_trials(self):
        process, _ = step_two_always_fails()
        report = local_difficulty_exact(process, Modulator.identity(), "qs1")
        assert report.difficulty == 1.0
        assert report.expected_trials == float("inf")


class TestFadm:
    def test_ratio_of_calls_to_kept_steps(self):
        process, problem = branching_tree(depth=2, seed=3)
        record = run_latts(LattsConfig(rng_seed=7), *_backends(process), problem)
        assert fadm(record) == record.model_calls / len(record.chain.steps)
        assert fadm(record) >= 1.0  # sequential sampling: one call per candidate

    def test_empty_chain_is_undefined(self):
        process, problem = step_two_always_fails()
        config = LattsConfig(
            max_trials=2, max_fallbacks=0, fallback=FallbackPolicy.RESTART
        )
        # Make the very first step impossible by starting one level in.
        hard = Problem(id="hard", prompt="qs1")
        record = run_latts(config, *_backends(process), hard)
        assert len(record.chain) == 0
        with pytest.raises(ValueError, match="empty"):
            fadm(record)


class TestSampleAcceptedSteps:
    def test_raises_when_an_attempt_exhausts_trials(self):
        process, problem = step_two_always_fails()
        config = LattsConfig(max_trials=4)
        prefix = Chain().with_step(Step("s1", 1))
        with pytest.raises(RuntimeError, match="max_trials"):
            sample_accepted_steps(
                config, *_backends(process), problem, num_samples=1, prefix=prefix
            )

    def test_fixed_prefix_is_never_modified(self):
        process, problem = two_symbol()
        config = LattsConfig(rng_seed=2)
        prefix = Chain()
        texts, trials, tally = sample_accepted_steps(
            config, *_backends(process), problem, num_samples=50, prefix=prefix
        )
        assert len(texts) == 50
        assert len(prefix) == 0
        assert set(texts) <= {"a", "b"}
        assert tally.verifier_calls == sum(trials)
