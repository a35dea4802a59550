"""Experiment harness: datasets, method sweeps, and tradeoff outputs.

An experiment runs a set of methods over a problem dataset at several
completion budgets, votes each problem's completions into one answer, and
reports accuracy against cost per budget.  Runs are deterministic for a
fixed spec and seed: every completion derives its own random streams from
the experiment seed, the problem id, and the completion index, so thread
scheduling cannot change any result.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

from .aggregation import AggregationConfig, canonicalize, canonicalizer_ids, weighted_majority
from .backends import (
    BackendError,
    GeneratorBackend,
    SyntheticGenerator,
    SyntheticProcess,
    SyntheticVerifier,
    VerifierBackend,
)
from .baselines import (
    BeamConfig,
    BeamSearchOutcome,
    beam_search,
    beam_search_lookahead,
    majority_vote,
    sample_completion,
    step_level_bon,
)
from .core import (
    DEFAULT_ANSWER_PATTERN,
    DEFAULT_FALLBACK_ANSWER,
    AnswerPattern,
    Chain,
    CompletionRecord,
    FallbackPolicy,
    GenerationParams,
    LattsConfig,
    Problem,
    completion_rng,
)
from .engine import (
    ar_sample_step,
    chunked_ar_sample_step,
    fadm,
    local_difficulty_exact,
    run_latts,
    sample_accepted_steps,
)
from .modulators import Modulator, parse_modulator
from .svgplot import line_plot

__all__ = [
    "DatasetError",
    "ExperimentResult",
    "ExperimentSpec",
    "MethodSpec",
    "OracleCheck",
    "RecordEnvelope",
    "TradeoffPoint",
    "emit_outputs",
    "load_problems",
    "points_from_csv",
    "points_to_csv",
    "run_experiment",
    "run_oracle_suite",
]

METHOD_KINDS = ("majority", "bon", "step-bon", "beam", "beam-lookahead", "latts")

# Method kinds that run one completion per (problem, index) unit and can
# reuse a single max-budget batch of completions across every sweep point.
_PER_COMPLETION_KINDS = ("majority", "bon", "latts")


class DatasetError(ValueError):
    """A problem dataset failed validation; the message names the line."""


def load_problems(path: str) -> list[Problem]:
    """Load a JSON-lines dataset of problems.

    Each non-blank line must be an object with ``id`` and ``prompt`` and
    an optional ``gold_answer``.  Ids must be unique.  Errors carry the
    offending line number.
    """
    problems: list[Problem] = []
    seen: dict[str, int] = {}
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot open dataset {path}: {exc}") from None
    with handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON: {exc}") from None
            if not isinstance(data, dict):
                raise DatasetError(f"{path}:{lineno}: expected a JSON object")
            try:
                problem = Problem.from_dict(data)
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            if problem.id in seen:
                raise DatasetError(
                    f"{path}:{lineno}: duplicate problem id {problem.id!r} "
                    f"(first seen on line {seen[problem.id]})"
                )
            seen[problem.id] = lineno
            problems.append(problem)
    if not problems:
        raise DatasetError(f"{path}: dataset contains no problems")
    return problems


@dataclass(frozen=True)
class MethodSpec:
    """One method entry in an experiment.

    ``name`` labels rows in outputs; ``kind`` selects the algorithm.  The
    sampler fields apply to ``latts``; ``beam_width`` and ``lookahead_k``
    apply to the beam kinds.
    """

    name: str
    kind: str
    modulator: Modulator = field(default_factory=Modulator.identity)
    fallback: FallbackPolicy = FallbackPolicy.BACKTRACK
    max_trials: int = 32
    max_fallbacks: int = 8
    chunk_size: int = 1
    beam_width: int = 2
    lookahead_k: int = 0

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("method name must be non-empty")
        if self.kind not in METHOD_KINDS:
            raise ValueError(f"unknown method kind {self.kind!r}; expected one of {METHOD_KINDS}")
        if self.kind == "beam" and self.lookahead_k != 0:
            raise ValueError("method kind 'beam' requires lookahead_k == 0")

    @property
    def needs_verifier(self) -> bool:
        return self.kind != "majority"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MethodSpec":
        known = {
            "name",
            "kind",
            "modulator",
            "fallback",
            "max_trials",
            "max_fallbacks",
            "chunk_size",
            "beam_width",
            "lookahead_k",
        }
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown method fields: {sorted(unknown)}")
        kwargs: dict[str, Any] = {k: data[k] for k in known & set(data)}
        if "modulator" in kwargs:
            kwargs["modulator"] = parse_modulator(str(kwargs["modulator"]))
        if "fallback" in kwargs:
            kwargs["fallback"] = FallbackPolicy(str(kwargs["fallback"]))
        for int_field in ("max_trials", "max_fallbacks", "chunk_size", "beam_width", "lookahead_k"):
            if int_field in kwargs:
                kwargs[int_field] = int(kwargs[int_field])
        return cls(**kwargs)


@dataclass(frozen=True)
class ExperimentSpec:
    """A full experiment: dataset, methods, budgets, and run settings."""

    dataset: str
    methods: tuple[MethodSpec, ...]
    completions: tuple[int, ...] = (1,)
    seed: int = 0
    concurrency: int = 8
    output_dir: str = "out"
    generation: GenerationParams = field(default_factory=GenerationParams)
    canonicalizer: str = "default-v1"
    fallback_answer: str = DEFAULT_FALLBACK_ANSWER
    answer_pattern: AnswerPattern = DEFAULT_ANSWER_PATTERN
    strict: bool = True

    def __post_init__(self) -> None:
        if not self.methods:
            raise ValueError("experiment needs at least one method")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise ValueError("method names must be unique")
        if not self.completions:
            raise ValueError("experiment needs at least one completion budget")
        if any(n < 1 for n in self.completions):
            raise ValueError("completion budgets must be >= 1")
        if list(self.completions) != sorted(set(self.completions)):
            raise ValueError("completion budgets must be strictly increasing")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")
        if self.canonicalizer not in canonicalizer_ids():
            raise ValueError(f"unknown canonicalizer {self.canonicalizer!r}")
        for method in self.methods:
            if method.kind in ("beam", "beam-lookahead"):
                bad = [n for n in self.completions if n % method.beam_width != 0]
                if bad:
                    raise ValueError(
                        f"method {method.name!r}: beam_width {method.beam_width} must divide "
                        f"every completion budget (violated by {bad})"
                    )


@dataclass(frozen=True)
class TradeoffPoint:
    """One (method, budget) cell of the compute-accuracy tradeoff.

    Cost fields are means over problems of that problem's total spend at
    the budget.  ``avg_fadm`` is the mean decoding multiplier (model calls
    per kept step); it is None when no completion had a non-empty chain.
    """

    method: str
    num_completions: int
    accuracy: float
    avg_tokens: float
    avg_verifier_calls: float
    avg_fadm: float | None

    def to_csv_row(self) -> str:
        fadm_text = "" if self.avg_fadm is None else repr(self.avg_fadm)
        return ",".join(
            [
                self.method,
                str(self.num_completions),
                repr(self.accuracy),
                repr(self.avg_tokens),
                repr(self.avg_verifier_calls),
                fadm_text,
            ]
        )


_CSV_HEADER = "method,num_completions,accuracy,avg_tokens,avg_verifier_calls,avg_fadm"


def points_to_csv(points: Sequence[TradeoffPoint]) -> str:
    lines = [_CSV_HEADER]
    lines.extend(p.to_csv_row() for p in points)
    return "\n".join(lines) + "\n"


def points_from_csv(text: str) -> tuple[TradeoffPoint, ...]:
    lines = [line for line in text.splitlines() if line]
    if not lines or lines[0] != _CSV_HEADER:
        raise ValueError(f"bad tradeoff CSV header; expected {_CSV_HEADER!r}")
    points = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != 6:
            raise ValueError(f"bad tradeoff CSV row: {line!r}")
        points.append(
            TradeoffPoint(
                method=parts[0],
                num_completions=int(parts[1]),
                accuracy=float(parts[2]),
                avg_tokens=float(parts[3]),
                avg_verifier_calls=float(parts[4]),
                avg_fadm=float(parts[5]) if parts[5] else None,
            )
        )
    return tuple(points)


@dataclass(frozen=True)
class RecordEnvelope:
    """One completion record tagged with its place in the experiment."""

    method: str
    problem_id: str
    num_completions: int
    completion_index: int
    record: CompletionRecord

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "problem_id": self.problem_id,
            "num_completions": self.num_completions,
            "completion_index": self.completion_index,
            "record": self.record.to_dict(),
        }


@dataclass(frozen=True)
class ExperimentResult:
    points: tuple[TradeoffPoint, ...]
    envelopes: tuple[RecordEnvelope, ...]


def _latts_config(method: MethodSpec, spec: ExperimentSpec) -> LattsConfig:
    return LattsConfig(
        max_trials=method.max_trials,
        max_fallbacks=method.max_fallbacks,
        chunk_size=method.chunk_size,
        fallback=method.fallback,
        modulator=method.modulator,
        generation=spec.generation,
        answer_pattern=spec.answer_pattern,
        fallback_answer=spec.fallback_answer,
        rng_seed=spec.seed,
    )


def _errored_record(exc: BackendError) -> CompletionRecord:
    return CompletionRecord(chain=Chain(), error=str(exc))


def _run_unit(
    method: MethodSpec,
    spec: ExperimentSpec,
    generator: GeneratorBackend,
    verifier: VerifierBackend | None,
    problem: Problem,
    index: int,
) -> CompletionRecord:
    """One completion of one problem for a per-completion method."""
    if method.kind == "latts":
        assert verifier is not None
        return run_latts(
            _latts_config(method, spec), generator, verifier, problem, completion_index=index
        )
    rng = completion_rng(spec.seed, problem.id, index).generation
    try:
        if method.kind == "majority":
            return sample_completion(
                generator, problem, spec.generation, rng, answer_pattern=spec.answer_pattern
            )
        if method.kind == "bon":
            assert verifier is not None
            return sample_completion(
                generator,
                problem,
                spec.generation,
                rng,
                verifier=verifier,
                answer_pattern=spec.answer_pattern,
            )
    except BackendError as exc:
        return _errored_record(exc)
    raise ValueError(f"not a per-completion method kind: {method.kind!r}")


def _vote(
    method: MethodSpec, records: Sequence[CompletionRecord], spec: ExperimentSpec
) -> str:
    """Combine one problem's completions into a single canonical answer."""
    config = AggregationConfig(
        num_completions=max(len(records), 1),
        canonicalizer=spec.canonicalizer,
        fallback_answer=spec.fallback_answer,
    )
    if method.kind == "majority":
        answers = [
            canonicalize(r.extracted_answer, spec.canonicalizer)
            for r in records
            if r.extracted_answer is not None and r.error is None
        ]
        if not answers:
            return canonicalize(spec.fallback_answer, spec.canonicalizer)
        return majority_vote(answers)
    usable = [r for r in records if r.error is None]
    if not usable:
        return canonicalize(spec.fallback_answer, spec.canonicalizer)
    return weighted_majority(usable, config).winner


def _fadm_values(records: Sequence[CompletionRecord]) -> list[float]:
    return [fadm(r) for r in records if len(r.chain.steps) > 0 and r.error is None]


@dataclass
class _Cell:
    """Accumulates one problem's contribution to one tradeoff point."""

    answer: str
    tokens: int
    verifier_calls: int
    fadm_values: list[float]
    errored: bool


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values) if values else 0.0


def _point_from_cells(
    method: MethodSpec,
    n: int,
    cells: Sequence[_Cell],
    problems: Sequence[Problem],
    canonicalizer: str,
) -> TradeoffPoint:
    graded = [
        (cell, problem)
        for cell, problem in zip(cells, problems)
        if problem.gold_answer is not None and not cell.errored
    ]
    correct = sum(
        1
        for cell, problem in graded
        if cell.answer == canonicalize(problem.gold_answer or "", canonicalizer)
    )
    accuracy = correct / len(graded) if graded else 0.0
    usable = [c for c in cells if not c.errored]
    fadm_values = [v for cell in usable for v in cell.fadm_values]
    return TradeoffPoint(
        method=method.name,
        num_completions=n,
        accuracy=accuracy,
        avg_tokens=_mean([float(c.tokens) for c in usable]),
        avg_verifier_calls=_mean([float(c.verifier_calls) for c in usable]),
        avg_fadm=_mean(fadm_values) if fadm_values else None,
    )


def run_experiment(
    spec: ExperimentSpec,
    generator: GeneratorBackend,
    verifier: VerifierBackend | None,
) -> ExperimentResult:
    """Run every method over the dataset at every completion budget.

    Per-completion methods (latts, majority, bon) run ``max(completions)``
    completions per problem once and reuse prefixes of that batch for the
    smaller budgets.  Step-level best-of-n uses the budget as its per-step
    candidate count, and the beam kinds use it as the beam count; both run
    separately per budget.

    In strict mode any backend failure aborts the experiment; otherwise
    errored completions are kept in the record log and excluded from the
    accuracy denominator.
    """
    problems = load_problems(spec.dataset)
    missing = [m.name for m in spec.methods if m.needs_verifier and verifier is None]
    if missing:
        raise ValueError(f"methods {missing} need a verifier backend, but none was given")

    points: list[TradeoffPoint] = []
    envelopes: list[RecordEnvelope] = []
    with ThreadPoolExecutor(max_workers=spec.concurrency) as pool:
        for method in spec.methods:
            if method.kind in _PER_COMPLETION_KINDS:
                cells_by_n = _run_per_completion_method(
                    method, spec, generator, verifier, problems, pool, envelopes
                )
            elif method.kind == "step-bon":
                cells_by_n = _run_step_bon_method(
                    method, spec, generator, verifier, problems, pool, envelopes
                )
            else:
                cells_by_n = _run_beam_method(
                    method, spec, generator, verifier, problems, pool, envelopes
                )
            for n in spec.completions:
                points.append(
                    _point_from_cells(method, n, cells_by_n[n], problems, spec.canonicalizer)
                )

    if spec.strict:
        failures = [e for e in envelopes if e.record.error is not None]
        if failures:
            first = failures[0]
            raise BackendError(
                f"{len(failures)} completion(s) failed; first: method {first.method!r}, "
                f"problem {first.problem_id!r}: {first.record.error}"
            )
    return ExperimentResult(points=tuple(points), envelopes=tuple(envelopes))


def _collect(
    pool: ThreadPoolExecutor,
    jobs: Sequence[tuple[Any, Callable[[], CompletionRecord]]],
) -> dict[Any, CompletionRecord]:
    """Run jobs on the pool and key results; collection order is fixed."""
    futures = [(key, pool.submit(fn)) for key, fn in jobs]
    return {key: future.result() for key, future in futures}


def _run_per_completion_method(
    method: MethodSpec,
    spec: ExperimentSpec,
    generator: GeneratorBackend,
    verifier: VerifierBackend | None,
    problems: Sequence[Problem],
    pool: ThreadPoolExecutor,
    envelopes: list[RecordEnvelope],
) -> dict[int, list[_Cell]]:
    max_n = max(spec.completions)
    jobs = []
    for problem in problems:
        for index in range(max_n):
            jobs.append(
                (
                    (problem.id, index),
                    (lambda p=problem, i=index: _run_unit(method, spec, generator, verifier, p, i)),
                )
            )
    results = _collect(pool, jobs)
    for problem in problems:
        for index in range(max_n):
            envelopes.append(
                RecordEnvelope(
                    method=method.name,
                    problem_id=problem.id,
                    num_completions=max_n,
                    completion_index=index,
                    record=results[(problem.id, index)],
                )
            )
    cells_by_n: dict[int, list[_Cell]] = {}
    for n in spec.completions:
        cells: list[_Cell] = []
        for problem in problems:
            records = [results[(problem.id, index)] for index in range(n)]
            usable = [r for r in records if r.error is None]
            cells.append(
                _Cell(
                    answer=_vote(method, records, spec),
                    tokens=sum(r.tokens_generated for r in usable),
                    verifier_calls=sum(r.verifier_calls for r in usable),
                    fadm_values=_fadm_values(records),
                    errored=not usable,
                )
            )
        cells_by_n[n] = cells
    return cells_by_n


def _run_step_bon_method(
    method: MethodSpec,
    spec: ExperimentSpec,
    generator: GeneratorBackend,
    verifier: VerifierBackend | None,
    problems: Sequence[Problem],
    pool: ThreadPoolExecutor,
    envelopes: list[RecordEnvelope],
) -> dict[int, list[_Cell]]:
    assert verifier is not None

    def unit(problem: Problem, n: int) -> CompletionRecord:
        rng = completion_rng(spec.seed, problem.id, n).generation
        try:
            return step_level_bon(
                n, generator, verifier, problem, spec.generation, rng, spec.answer_pattern
            )
        except BackendError as exc:
            return _errored_record(exc)

    jobs = []
    for n in spec.completions:
        for problem in problems:
            jobs.append(((problem.id, n), (lambda p=problem, m=n: unit(p, m))))
    results = _collect(pool, jobs)
    cells_by_n: dict[int, list[_Cell]] = {}
    for n in spec.completions:
        cells = []
        for problem in problems:
            record = results[(problem.id, n)]
            envelopes.append(
                RecordEnvelope(
                    method=method.name,
                    problem_id=problem.id,
                    num_completions=n,
                    completion_index=0,
                    record=record,
                )
            )
            cells.append(
                _Cell(
                    answer=_vote(method, [record], spec),
                    tokens=record.tokens_generated if record.error is None else 0,
                    verifier_calls=record.verifier_calls if record.error is None else 0,
                    fadm_values=_fadm_values([record]),
                    errored=record.error is not None,
                )
            )
        cells_by_n[n] = cells
    return cells_by_n


def _run_beam_method(
    method: MethodSpec,
    spec: ExperimentSpec,
    generator: GeneratorBackend,
    verifier: VerifierBackend | None,
    problems: Sequence[Problem],
    pool: ThreadPoolExecutor,
    envelopes: list[RecordEnvelope],
) -> dict[int, list[_Cell]]:
    assert verifier is not None
    search = beam_search if method.kind == "beam" else beam_search_lookahead

    def unit(problem: Problem, n: int) -> "BeamSearchOutcome | BackendError":
        config = BeamConfig(
            num_beams=n, beam_width=method.beam_width, lookahead_k=method.lookahead_k
        )
        rng = completion_rng(spec.seed, problem.id, n).generation
        try:
            return search(
                config,
                generator,
                verifier,
                problem,
                spec.generation,
                rng,
                spec.answer_pattern,
            )
        except BackendError as exc:
            return exc

    jobs = []
    for n in spec.completions:
        for problem in problems:
            jobs.append(((problem.id, n), (lambda p=problem, m=n: unit(p, m))))
    futures = [(key, pool.submit(fn)) for key, fn in jobs]
    results = {key: future.result() for key, future in futures}

    cells_by_n: dict[int, list[_Cell]] = {}
    for n in spec.completions:
        cells = []
        for problem in problems:
            outcome = results[(problem.id, n)]
            if isinstance(outcome, BackendError):
                envelopes.append(
                    RecordEnvelope(
                        method=method.name,
                        problem_id=problem.id,
                        num_completions=n,
                        completion_index=0,
                        record=_errored_record(outcome),
                    )
                )
                cells.append(_Cell(answer="", tokens=0, verifier_calls=0, fadm_values=[], errored=True))
                continue
            for index, record in enumerate(outcome.records):
                envelopes.append(
                    RecordEnvelope(
                        method=method.name,
                        problem_id=problem.id,
                        num_completions=n,
                        completion_index=index,
                        record=record,
                    )
                )
            total_steps = sum(len(r.chain.steps) for r in outcome.records)
            cells.append(
                _Cell(
                    answer=_vote(method, list(outcome.records), spec),
                    tokens=outcome.tokens_generated,
                    verifier_calls=outcome.verifier_calls,
                    fadm_values=[outcome.model_calls / total_steps] if total_steps else [],
                    errored=False,
                )
            )
        cells_by_n[n] = cells
    return cells_by_n


def emit_outputs(result: ExperimentResult, output_dir: str) -> dict[str, str]:
    """Write tradeoff.csv, records.jsonl, and tradeoff.svg; returns paths."""
    if not result.points:
        raise ValueError("cannot emit outputs for an experiment with no points")
    os.makedirs(output_dir, exist_ok=True)
    paths = {
        "csv": os.path.join(output_dir, "tradeoff.csv"),
        "records": os.path.join(output_dir, "records.jsonl"),
        "svg": os.path.join(output_dir, "tradeoff.svg"),
    }
    with open(paths["csv"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write(points_to_csv(result.points))
    with open(paths["records"], "w", encoding="utf-8", newline="\n") as fh:
        for envelope in result.envelopes:
            fh.write(json.dumps(envelope.to_dict(), sort_keys=True) + "\n")
    with open(paths["svg"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write(tradeoff_svg(result.points))
    return paths


def tradeoff_svg(points: Sequence[TradeoffPoint]) -> str:
    """Accuracy versus tokens (log x), one series per method."""
    by_method: dict[str, list[TradeoffPoint]] = {}
    for point in points:
        by_method.setdefault(point.method, []).append(point)
    series = []
    for name, method_points in by_method.items():
        ordered = sorted(method_points, key=lambda p: p.num_completions)
        series.append((name, [(p.avg_tokens, p.accuracy) for p in ordered]))
    return line_plot(
        series,
        x_label="average tokens per problem",
        y_label="accuracy",
        title="compute-accuracy tradeoff",
        log_x=True,
    )


# ---------------------------------------------------------------------------
# Built-in verification suite
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleCheck:
    """One verification check: sampled behavior against an exact value."""

    name: str
    passed: bool
    detail: str


def _two_symbol_process(p_a: float = 0.8, score_a: float = 0.25, score_b: float = 1.0) -> SyntheticProcess:
    return SyntheticProcess(
        alphabet=("a", "b"),
        transitions={"s": {"a": p_a, "b": 1.0 - p_a}},
        scores={"s": {"a": score_a, "b": score_b}},
    )


def _tv_distance(observed: Mapping[str, float], expected: Mapping[str, float]) -> float:
    keys = set(observed) | set(expected)
    return 0.5 * sum(abs(observed.get(k, 0.0) - expected.get(k, 0.0)) for k in keys)


def _exact_acceptance_target(
    process: SyntheticProcess, modulator: Modulator, state: str
) -> dict[str, float]:
    """Enumerate the normalized accepted-step distribution for a state."""
    row = process.transition_row(state)
    weights = {}
    for symbol, prob in row.items():
        if prob <= 0:
            continue
        weights[symbol] = prob * modulator(process.symbol_score(state, symbol))
    total = sum(weights.values())
    if total <= 0:
        raise ValueError(f"state {state!r}: no symbol can ever be accepted")
    return {symbol: weight / total for symbol, weight in weights.items()}


def run_oracle_suite(samples: int = 20000, seed: int = 7) -> list[OracleCheck]:
    """Check sampled behavior against exact enumeration on a tiny process.

    Covers the accepted-step distribution for both modulator shapes, mean
    trial counts against the difficulty identity, the geometric shape of
    trial counts, and the chunked sampler's degeneracy to the sequential
    one at chunk size 1.
    """
    from scipy import stats

    process = _two_symbol_process()
    generator = SyntheticGenerator(process)
    verifier = SyntheticVerifier(process)
    problem = Problem(id="oracle", prompt="s")
    checks: list[OracleCheck] = []

    def check_distribution(name: str, modulator: Modulator) -> None:
        config = LattsConfig(max_trials=10**6, modulator=modulator, rng_seed=seed)
        texts, _, _ = sample_accepted_steps(config, generator, verifier, problem, samples)
        observed = {s: texts.count(s) / samples for s in process.alphabet}
        expected = _exact_acceptance_target(process, modulator, "s")
        tv = _tv_distance(observed, expected)
        tolerance = 0.02 if samples >= 10**5 else 0.03
        checks.append(
            OracleCheck(
                name=name,
                passed=tv <= tolerance,
                detail=f"total variation {tv:.4f} vs exact target (tolerance {tolerance})",
            )
        )

    check_distribution("accepted-distribution-tilted", Modulator.identity())
    check_distribution("accepted-distribution-truncated-0.5", Modulator.with_threshold(0.5))

    config = LattsConfig(max_trials=10**6, rng_seed=seed + 1)
    _, trials, _ = sample_accepted_steps(config, generator, verifier, problem, samples)
    report = local_difficulty_exact(process, Modulator.identity(), "s")
    mean = sum(trials) / len(trials)
    accept_rate = 1.0 - report.difficulty
    se = math.sqrt((1.0 - accept_rate) / accept_rate**2 / len(trials))
    deviation = abs(mean - report.expected_trials)
    checks.append(
        OracleCheck(
            name="mean-trials-vs-difficulty",
            passed=deviation <= 3 * se,
            detail=(
                f"mean {mean:.4f} vs exact {report.expected_trials:.4f} "
                f"(|diff| {deviation:.4f} <= 3se {3 * se:.4f})"
            ),
        )
    )

    counts: dict[int, int] = {}
    for t in trials:
        counts[t] = counts.get(t, 0) + 1
    max_bin = 1
    while (1 - accept_rate) ** (max_bin - 1) * len(trials) >= 20:
        max_bin += 1
    observed_bins = [counts.get(k, 0) for k in range(1, max_bin)]
    observed_bins.append(len(trials) - sum(observed_bins))
    expected_bins = [
        len(trials) * accept_rate * (1 - accept_rate) ** (k - 1) for k in range(1, max_bin)
    ]
    expected_bins.append(len(trials) * (1 - accept_rate) ** (max_bin - 1))
    result = stats.chisquare(observed_bins, expected_bins)
    checks.append(
        OracleCheck(
            name="trial-counts-geometric",
            passed=result.pvalue > 0.001,
            detail=f"chi-square p={result.pvalue:.4f} over {len(observed_bins)} bins",
        )
    )

    seq_config = LattsConfig(max_trials=32, chunk_size=1, rng_seed=seed + 2)
    agree = True
    for i in range(200):
        rng_a = completion_rng(seed + 2, "oracle-degenerate", i)
        rng_b = completion_rng(seed + 2, "oracle-degenerate", i)
        a = ar_sample_step(seq_config, generator, verifier, problem, Chain(), rng_a)
        b = chunked_ar_sample_step(seq_config, generator, verifier, problem, Chain(), rng_b)
        if (a.step, a.trials) != (b.step, b.trials):
            agree = False
            break
    checks.append(
        OracleCheck(
            name="chunk-size-one-degeneracy",
            passed=agree,
            detail="chunked sampler with chunk_size=1 matches the sequential sampler",
        )
    )
    return checks
