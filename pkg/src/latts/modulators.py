"""Score modulators: monotone maps from verifier scores to acceptance probabilities.

A modulator turns a raw verifier score in [0, 1] into the probability of
accepting the candidate step.  Two shapes are provided:

* ``tilted`` passes the score through unchanged, steering sampling toward
  higher-scoring steps in proportion to their score.
* ``truncated:<threshold>`` accepts exactly the candidates whose score
  clears the threshold, conditioning generation on that event.

Both are non-decreasing and map 0 to 0 and 1 to 1, so a zero-scored step
can never be accepted and a perfectly scored one always is.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Any, Mapping

if TYPE_CHECKING:  # only for annotations; avoids an import cycle
    from .backends import VerifierBackend
    from .core import Chain, Problem, Step

__all__ = [
    "Modulator",
    "ModulatorKind",
    "apply_modulator",
    "modulated_score",
    "modulator_name",
    "parse_modulator",
]


class ModulatorKind(str, Enum):
    IDENTITY = "identity"
    THRESHOLD = "threshold"


@dataclass(frozen=True)
class Modulator:
    """A named acceptance-probability shape.

    ``threshold`` is required for the threshold kind and must lie in
    (0, 1]; a threshold of 0 would accept zero-scored steps, which the
    contract forbids.
    """

    kind: ModulatorKind = ModulatorKind.IDENTITY
    threshold: float | None = None

    def __post_init__(self) -> None:
        if self.kind is ModulatorKind.THRESHOLD:
            if self.threshold is None:
                raise ValueError("threshold modulator requires a threshold")
            if not 0 < self.threshold <= 1:
                raise ValueError("threshold must be in (0, 1]")
        elif self.threshold is not None:
            raise ValueError("identity modulator takes no threshold")

    @classmethod
    def identity(cls) -> "Modulator":
        return cls(kind=ModulatorKind.IDENTITY)

    @classmethod
    def with_threshold(cls, threshold: float) -> "Modulator":
        return cls(kind=ModulatorKind.THRESHOLD, threshold=threshold)

    def __call__(self, score: float) -> float:
        return apply_modulator(self, score)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind.value}
        if self.threshold is not None:
            out["threshold"] = self.threshold
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Modulator":
        return cls(kind=ModulatorKind(data["kind"]), threshold=data.get("threshold"))


def apply_modulator(modulator: Modulator, score: float) -> float:
    """Map a raw verifier score to an acceptance probability.

    Scores outside [0, 1] are a contract violation on the verifier's side
    and raise ``ValueError`` rather than being clamped.
    """
    if not 0 <= score <= 1:
        raise ValueError(f"verifier score {score!r} outside [0, 1]")
    if modulator.kind is ModulatorKind.IDENTITY:
        return score
    # Threshold: boundary is inclusive, so score == threshold accepts.
    return 1.0 if score >= modulator.threshold else 0.0


def modulated_score(
    verifier: "VerifierBackend",
    modulator: Modulator,
    problem: "Problem",
    prefix: "Chain",
    candidate: "Step",
) -> float:
    """Score a candidate step and pass the score through the modulator.

    Makes exactly one verifier call.  Backend failures surface with the
    index of the step being scored attached.
    """
    raw, modulated = score_candidate(verifier, modulator, problem, prefix, candidate)
    del raw
    return modulated


def score_candidate(
    verifier: "VerifierBackend",
    modulator: Modulator,
    problem: "Problem",
    prefix: "Chain",
    candidate: "Step",
) -> tuple[float, float]:
    """Like :func:`modulated_score` but also returns the raw score.

    The raw score is what fallback handling and chunk selection rank by,
    so callers that may need it should use this form and avoid a second
    verifier call.
    """
    from .backends import BackendError

    step_index = len(prefix.steps)
    try:
        raw = verifier.score(problem, prefix, candidate)
    except BackendError as exc:
        raise BackendError(f"verifier failed at step index {step_index}: {exc}") from exc
    if not 0 <= raw <= 1:
        raise ValueError(
            f"verifier returned {raw!r} at step index {step_index}; scores must be in [0, 1]"
        )
    return raw, apply_modulator(modulator, raw)


def parse_modulator(name: str) -> Modulator:
    """Parse a config-file modulator name.

    ``"tilted"`` maps to the identity shape and ``"truncated:<t>"`` to a
    threshold at ``t``, e.g. ``"truncated:0.5"``.
    """
    text = name.strip()
    if text == "tilted":
        return Modulator.identity()
    if text.startswith("truncated:"):
        raw = text.split(":", 1)[1]
        try:
            threshold = float(raw)
        except ValueError:
            raise ValueError(f"bad threshold in modulator name {name!r}") from None
        return Modulator.with_threshold(threshold)
    if text == "truncated":
        raise ValueError("truncated modulator needs a threshold, e.g. 'truncated:0.5'")
    raise ValueError(f"unknown modulator name {name!r} (expected 'tilted' or 'truncated:<t>')")


def modulator_name(modulator: Modulator) -> str:
    """Inverse of :func:`parse_modulator`."""
    if modulator.kind is ModulatorKind.IDENTITY:
        return "tilted"
    return f"truncated:{modulator.threshold:g}"
