"""Locally adaptive test-time scaling for step-wise reasoning.

A verifier-guided acceptance-rejection sampler over chain-of-thought
steps, plus standard test-time scaling baselines and an experiment
harness for measuring the compute-accuracy tradeoff.
"""

from .aggregation import AggregationConfig, AnswerTotal, VoteReport, canonicalize, weighted_majority
from .backends import (
    BackendConfigError,
    BackendError,
    CriticVerifier,
    GeneratorBackend,
    HttpEndpointConfig,
    OpenAICompletionsGenerator,
    PrmVerifier,
    SyntheticGenerator,
    SyntheticProcess,
    SyntheticVerifier,
    VerifierBackend,
    exact_next_step_distribution,
    load_synthetic_process,
)
from .baselines import (
    BeamConfig,
    BeamSearchOutcome,
    beam_search,
    beam_search_lookahead,
    best_of_n,
    majority_vote,
    sample_completion,
    step_level_bon,
)
from .core import (
    DEFAULT_ANSWER_PATTERN,
    DEFAULT_FALLBACK_ANSWER,
    AnswerPattern,
    Chain,
    ChainStatus,
    CompletionRecord,
    FallbackEvent,
    FallbackPolicy,
    GenerationParams,
    LattsConfig,
    Problem,
    RngPair,
    Step,
    completion_rng,
    detect_final_answer,
)
from .engine import (
    DifficultyReport,
    FallbackOutcome,
    ScoredCandidate,
    StepOutcome,
    TraceEvent,
    apply_fallback,
    ar_sample_step,
    chunked_ar_sample_step,
    fadm,
    local_difficulty_exact,
    run_latts,
    sample_accepted_steps,
)
from .harness import (
    DatasetError,
    ExperimentResult,
    ExperimentSpec,
    MethodSpec,
    RecordEnvelope,
    TradeoffPoint,
    emit_outputs,
    load_problems,
    run_experiment,
    run_oracle_suite,
)
from .modulators import Modulator, ModulatorKind, apply_modulator, modulated_score, parse_modulator

__version__ = "0.1.0"

__all__ = [
    "AggregationConfig",
    "AnswerPattern",
    "AnswerTotal",
    "BackendConfigError",
    "BackendError",
    "BeamConfig",
    "BeamSearchOutcome",
    "Chain",
    "ChainStatus",
    "CompletionRecord",
    "CriticVerifier",
    "DEFAULT_ANSWER_PATTERN",
    "DEFAULT_FALLBACK_ANSWER",
    "DatasetError",
    "DifficultyReport",
    "ExperimentResult",
    "ExperimentSpec",
    "FallbackEvent",
    "FallbackOutcome",
    "FallbackPolicy",
    "GenerationParams",
    "GeneratorBackend",
    "HttpEndpointConfig",
    "LattsConfig",
    "MethodSpec",
    "Modulator",
    "ModulatorKind",
    "OpenAICompletionsGenerator",
    "Problem",
    "PrmVerifier",
    "RecordEnvelope",
    "RngPair",
    "ScoredCandidate",
    "Step",
    "StepOutcome",
    "SyntheticGenerator",
    "SyntheticProcess",
    "SyntheticVerifier",
    "TraceEvent",
    "TradeoffPoint",
    "VerifierBackend",
    "VoteReport",
    "apply_fallback",
    "apply_modulator",
    "ar_sample_step",
    "beam_search",
    "beam_search_lookahead",
    "best_of_n",
    "canonicalize",
    "chunked_ar_sample_step",
    "completion_rng",
    "detect_final_answer",
    "emit_outputs",
    "exact_next_step_distribution",
    "fadm",
    "load_problems",
    "load_synthetic_process",
    "local_difficulty_exact",
    "majority_vote",
    "modulated_score",
    "parse_modulator",
    "run_experiment",
    "run_latts",
    "run_oracle_suite",
    "sample_accepted_steps",
    "sample_completion",
    "step_level_bon",
    "weighted_majority",
]
