"""Command-line interface.

Subcommands:

* ``run``    execute an experiment spec over a dataset and emit outputs
* ``solve``  run one method on a single prompt and print the result
* ``oracle`` check the sampler against exact enumeration on a built-in process
* ``plot``   re-render the tradeoff plot from an existing tradeoff.csv

Exit codes: 0 on success, 1 for validation or configuration errors
(including bad command lines and failed oracle checks), 2 for backend
failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from typing import Any, Mapping

from .aggregation import AggregationConfig, canonicalize, weighted_majority
from .backends import (
    BackendError,
    CriticVerifier,
    GeneratorBackend,
    HttpEndpointConfig,
    OpenAICompletionsGenerator,
    PrmVerifier,
    SyntheticGenerator,
    SyntheticVerifier,
    VerifierBackend,
    load_synthetic_process,
)
from .baselines import (
    BeamConfig,
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
    FallbackPolicy,
    GenerationParams,
    LattsConfig,
    Problem,
    completion_rng,
)
from .engine import run_latts
from .harness import (
    DatasetError,
    ExperimentSpec,
    MethodSpec,
    emit_outputs,
    points_from_csv,
    run_experiment,
    run_oracle_suite,
    tradeoff_svg,
)
from .modulators import parse_modulator

__all__ = ["main"]

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_BACKEND = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors map to the validation exit code."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise _UsageError(f"{self.prog}: {message}")


def _load_config_data(path: str) -> dict[str, Any]:
    if path.endswith(".toml"):
        try:
            import tomllib  # Python 3.11+
        except ModuleNotFoundError:
            import tomli as tomllib  # type: ignore[no-redef]
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    if path.endswith(".json"):
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValueError(f"{path}: spec must be a JSON object")
        return data
    raise ValueError(f"{path}: experiment spec must be a .toml or .json file")


def _resolve(base_dir: str, path: str) -> str:
    return path if os.path.isabs(path) else os.path.join(base_dir, path)


def load_experiment_file(path: str) -> tuple[ExperimentSpec, dict[str, Any]]:
    """Parse an experiment spec file into a spec plus its backend section.

    Relative paths inside the file (dataset, synthetic process) resolve
    against the file's own directory.
    """
    data = _load_config_data(path)
    base_dir = os.path.dirname(os.path.abspath(path))
    known = {
        "dataset",
        "output_dir",
        "seed",
        "completions",
        "concurrency",
        "canonicalizer",
        "fallback_answer",
        "strict",
        "answer_regex",
        "generation",
        "backend",
        "methods",
    }
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"{path}: unknown spec fields: {sorted(unknown)}")
    for required in ("dataset", "methods", "backend"):
        if required not in data:
            raise ValueError(f"{path}: spec is missing the {required!r} field")
    methods_data = data["methods"]
    if not isinstance(methods_data, list) or not methods_data:
        raise ValueError(f"{path}: methods must be a non-empty list")
    methods = tuple(MethodSpec.from_dict(m) for m in methods_data)
    generation = GenerationParams.from_dict(data.get("generation", {}))
    pattern = DEFAULT_ANSWER_PATTERN
    if "answer_regex" in data:
        pattern = AnswerPattern(regex=str(data["answer_regex"]))
    backend = data["backend"]
    if not isinstance(backend, dict):
        raise ValueError(f"{path}: backend must be a table/object")
    backend = dict(backend)
    if "process" in backend:
        backend["process"] = _resolve(base_dir, str(backend["process"]))
    spec = ExperimentSpec(
        dataset=_resolve(base_dir, str(data["dataset"])),
        methods=methods,
        completions=tuple(int(n) for n in data.get("completions", [1])),
        seed=int(data.get("seed", 0)),
        concurrency=int(data.get("concurrency", 8)),
        output_dir=_resolve(base_dir, str(data.get("output_dir", "out"))),
        generation=generation,
        canonicalizer=str(data.get("canonicalizer", "default-v1")),
        fallback_answer=str(data.get("fallback_answer", DEFAULT_FALLBACK_ANSWER)),
        answer_pattern=pattern,
        strict=bool(data.get("strict", True)),
    )
    return spec, backend


def build_backends(
    config: Mapping[str, Any], answer_pattern: AnswerPattern
) -> tuple[GeneratorBackend, VerifierBackend | None]:
    """Construct backends from a backend config section.

    A ``process`` entry selects the synthetic backend; otherwise
    ``generator_url`` and ``model`` select the HTTP generator, with an
    optional ``verifier_url`` plus ``verifier_mode`` (``prm`` or
    ``critic``).
    """
    if "process" in config:
        process = load_synthetic_process(str(config["process"]))
        return SyntheticGenerator(process, answer_pattern), SyntheticVerifier(process)
    generator_url = config.get("generator_url")
    model = config.get("model")
    if not generator_url or not model:
        raise ValueError("backend config needs either 'process' or 'generator_url' plus 'model'")
    common = {
        "api_key_env": str(config.get("api_key_env", "LATTS_API_KEY")),
        "timeout": float(config.get("timeout", 120.0)),
        "retries": int(config.get("retries", 3)),
        "retry_backoff": float(config.get("retry_backoff", 0.25)),
    }
    generator = OpenAICompletionsGenerator(
        HttpEndpointConfig(base_url=str(generator_url), model=str(model), **common),
        answer_pattern,
    )
    verifier: VerifierBackend | None = None
    verifier_url = config.get("verifier_url")
    if verifier_url:
        mode = str(config.get("verifier_mode", "prm"))
        verifier_config = HttpEndpointConfig(
            base_url=str(verifier_url),
            model=str(config.get("verifier_model", model)),
            **common,
        )
        if mode == "prm":
            verifier = PrmVerifier(verifier_config)
        elif mode == "critic":
            verifier = CriticVerifier(verifier_config)
        else:
            raise ValueError(f"unknown verifier_mode {mode!r}; expected 'prm' or 'critic'")
    return generator, verifier


def _cmd_run(args: argparse.Namespace) -> int:
    spec, backend_config = load_experiment_file(args.spec)
    if args.output_dir is not None:
        spec = replace(spec, output_dir=args.output_dir)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    generator, verifier = build_backends(backend_config, spec.answer_pattern)
    result = run_experiment(spec, generator, verifier)
    paths = emit_outputs(result, spec.output_dir)
    header = f"{'method':<20} {'n':>4} {'accuracy':>9} {'avg_tokens':>12} {'avg_verifier':>13} {'avg_fadm':>9}"
    print(header)
    for point in result.points:
        fadm_text = "-" if point.avg_fadm is None else f"{point.avg_fadm:.3f}"
        print(
            f"{point.method:<20} {point.num_completions:>4} {point.accuracy:>9.3f} "
            f"{point.avg_tokens:>12.1f} {point.avg_verifier_calls:>13.1f} {fadm_text:>9}"
        )
    for name in ("csv", "records", "svg"):
        print(f"wrote {paths[name]}")
    return EXIT_OK


def _solve_backends(args: argparse.Namespace) -> tuple[GeneratorBackend, VerifierBackend | None]:
    pattern = AnswerPattern(regex=args.answer_regex) if args.answer_regex else DEFAULT_ANSWER_PATTERN
    config: dict[str, Any] = {}
    if args.process:
        config["process"] = args.process
    else:
        config["generator_url"] = args.generator_url
        config["model"] = args.model
        if args.verifier_url:
            config["verifier_url"] = args.verifier_url
            config["verifier_mode"] = args.verifier_mode
            if args.verifier_model:
                config["verifier_model"] = args.verifier_model
        if args.timeout is not None:
            config["timeout"] = args.timeout
        if args.retries is not None:
            config["retries"] = args.retries
    return build_backends(config, pattern)


def _cmd_solve(args: argparse.Namespace) -> int:
    problem = Problem(id=args.id, prompt=args.prompt, gold_answer=args.gold)
    params = GenerationParams(
        temperature=args.temperature,
        nucleus_p=args.nucleus_p,
        step_delimiter=args.step_delimiter,
        max_steps=args.max_steps,
        max_tokens_per_step=args.max_tokens_per_step,
    )
    pattern = AnswerPattern(regex=args.answer_regex) if args.answer_regex else DEFAULT_ANSWER_PATTERN
    generator, verifier = _solve_backends(args)
    if args.method != "majority" and verifier is None:
        raise ValueError(f"method {args.method!r} needs a verifier backend")

    records = []
    answer: str | None
    if args.method == "latts":
        config = LattsConfig(
            max_trials=args.max_trials,
            max_fallbacks=args.max_fallbacks,
            chunk_size=args.chunk_size,
            fallback=FallbackPolicy(args.fallback),
            modulator=parse_modulator(args.modulator),
            generation=params,
            answer_pattern=pattern,
            rng_seed=args.seed,
        )
        trace = None
        if args.trace:
            trace = lambda event: print(json.dumps(event.to_dict()))  # noqa: E731
        assert verifier is not None
        for index in range(args.n):
            record = run_latts(
                config, generator, verifier, problem, completion_index=index, trace=trace
            )
            if record.error is not None:
                raise BackendError(record.error)
            records.append(record)
        answer = weighted_majority(records, AggregationConfig(num_completions=args.n)).winner
    elif args.method in ("majority", "bon"):
        for index in range(args.n):
            rng = completion_rng(args.seed, problem.id, index).generation
            records.append(
                sample_completion(
                    generator,
                    problem,
                    params,
                    rng,
                    verifier=verifier if args.method == "bon" else None,
                    answer_pattern=pattern,
                )
            )
        if args.method == "majority":
            answers = [
                canonicalize(r.extracted_answer)
                for r in records
                if r.extracted_answer is not None
            ]
            answer = majority_vote(answers) if answers else canonicalize(DEFAULT_FALLBACK_ANSWER)
        else:
            answer = weighted_majority(records, AggregationConfig(num_completions=args.n)).winner
    elif args.method == "step-bon":
        assert verifier is not None
        rng = completion_rng(args.seed, problem.id, 0).generation
        record = step_level_bon(args.n, generator, verifier, problem, params, rng, pattern)
        records.append(record)
        answer = (
            canonicalize(record.extracted_answer)
            if record.extracted_answer is not None
            else canonicalize(DEFAULT_FALLBACK_ANSWER)
        )
    else:  # beam, beam-lookahead
        assert verifier is not None
        config = BeamConfig(
            num_beams=args.n, beam_width=args.beam_width, lookahead_k=args.lookahead_k
        )
        rng = completion_rng(args.seed, problem.id, args.n).generation
        search = beam_search if args.method == "beam" else beam_search_lookahead
        outcome = search(config, generator, verifier, problem, params, rng, pattern)
        records.extend(outcome.records)
        answer = weighted_majority(list(outcome.records), AggregationConfig()).winner

    output = {
        "answer": answer,
        "records": [r.to_dict() for r in records],
    }
    if problem.gold_answer is not None:
        output["correct"] = canonicalize(answer or "") == canonicalize(problem.gold_answer)
    print(json.dumps(output, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_oracle(args: argparse.Namespace) -> int:
    checks = run_oracle_suite(samples=args.samples, seed=args.seed)
    failed = 0
    for check in checks:
        status = "PASS" if check.passed else "FAIL"
        if not check.passed:
            failed += 1
        print(f"{status} {check.name}: {check.detail}")
    print(f"{len(checks) - failed}/{len(checks)} oracle checks passed")
    return EXIT_OK if failed == 0 else EXIT_VALIDATION


def _cmd_plot(args: argparse.Namespace) -> int:
    with open(args.csv, "r", encoding="utf-8") as fh:
        points = points_from_csv(fh.read())
    svg = tradeoff_svg(points)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(svg)
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="latts", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment spec over a dataset")
    run_p.add_argument("--spec", required=True, help="experiment spec file (.toml or .json)")
    run_p.add_argument("--output-dir", default=None, help="override the spec's output directory")
    run_p.add_argument("--seed", type=int, default=None, help="override the spec's seed")
    run_p.set_defaults(func=_cmd_run)

    solve_p = sub.add_parser("solve", help="solve a single prompt")
    solve_p.add_argument("--prompt", required=True)
    solve_p.add_argument("--id", default="cli")
    solve_p.add_argument("--gold", default=None, help="gold answer for a correctness check")
    solve_p.add_argument(
        "--method",
        default="latts",
        choices=["majority", "bon", "step-bon", "beam", "beam-lookahead", "latts"],
    )
    solve_p.add_argument("--process", default=None, help="synthetic process JSON file")
    solve_p.add_argument("--generator-url", default=None)
    solve_p.add_argument("--model", default=None)
    solve_p.add_argument("--verifier-url", default=None)
    solve_p.add_argument("--verifier-mode", default="prm", choices=["prm", "critic"])
    solve_p.add_argument("--verifier-model", default=None)
    solve_p.add_argument("--timeout", type=float, default=None)
    solve_p.add_argument("--retries", type=int, default=None)
    solve_p.add_argument("--modulator", default="tilted", help="'tilted' or 'truncated:<t>'")
    solve_p.add_argument(
        "--fallback", default="backtrack", choices=[p.value for p in FallbackPolicy]
    )
    solve_p.add_argument("--max-trials", type=int, default=32)
    solve_p.add_argument("--max-fallbacks", type=int, default=8)
    solve_p.add_argument("--chunk-size", type=int, default=1)
    solve_p.add_argument("--n", type=int, default=1, help="completions, candidates, or beams")
    solve_p.add_argument("--beam-width", type=int, default=2)
    solve_p.add_argument("--lookahead-k", type=int, default=0)
    solve_p.add_argument("--temperature", type=float, default=0.8)
    solve_p.add_argument("--nucleus-p", type=float, default=0.9)
    solve_p.add_argument("--step-delimiter", default="\n\n")
    solve_p.add_argument("--max-steps", type=int, default=40)
    solve_p.add_argument("--max-tokens-per-step", type=int, default=512)
    solve_p.add_argument("--answer-regex", default=None)
    solve_p.add_argument("--seed", type=int, default=0)
    solve_p.add_argument("--trace", action="store_true", help="print per-candidate trace events")
    solve_p.set_defaults(func=_cmd_solve)

    oracle_p = sub.add_parser("oracle", help="verify the sampler against exact enumeration")
    oracle_p.add_argument("--samples", type=int, default=20000)
    oracle_p.add_argument("--seed", type=int, default=7)
    oracle_p.set_defaults(func=_cmd_oracle)

    plot_p = sub.add_parser("plot", help="re-render tradeoff.svg from a tradeoff.csv")
    plot_p.add_argument("--csv", required=True)
    plot_p.add_argument("--out", required=True)
    plot_p.set_defaults(func=_cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except (DatasetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
