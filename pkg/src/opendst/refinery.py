"""Iterative prompt refinement: generate, self-criticize, revise.

Starting from a seed task description, each iteration runs the current
prompt on a fixed miniature dialogue, asks the model to critique prompt and
output, then asks for a revised prompt. The loop stops once consecutive
revisions are near-identical or the iteration cap is reached.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

from .gateway import Backend, FreeText, PromptSpec, RequestLedger, RetryPolicy, SamplingParams, complete
from .similarity import normalized_similarity

log = logging.getLogger(__name__)

STAGE = "refinement"

# Consecutive revisions at or above this similarity no longer change the
# prompt in any way that matters.
MINOR_CHANGE_SIMILARITY = 0.98


class RefusalLoop(RuntimeError):
    """The model returned empty feedback twice in a row; iterating further
    cannot improve the prompt."""


class StopReason(enum.Enum):
    MINOR_CHANGES = "minor-changes"
    ITERATION_LIMIT = "iteration-limit"


@dataclass(frozen=True, slots=True)
class StopDecision:
    stop: bool
    reason: StopReason | None = None


def should_stop(previous: str, revised: str, iteration: int, max_iters: int) -> StopDecision:
    """Minor changes win over the iteration cap when both hold."""
    if normalized_similarity(previous, revised) >= MINOR_CHANGE_SIMILARITY:
        return StopDecision(True, StopReason.MINOR_CHANGES)
    if iteration >= max_iters:
        return StopDecision(True, StopReason.ITERATION_LIMIT)
    return StopDecision(False)


@dataclass(frozen=True, slots=True)
class RefinementIteration:
    prompt: str
    feedback: str
    change_score: float  # 1 - similarity to the previous prompt


@dataclass(frozen=True)
class RefinementTrace:
    seed: str
    iterations: tuple[RefinementIteration, ...]
    stop_reason: StopReason

    @property
    def final_prompt(self) -> str:
        return self.iterations[-1].prompt if self.iterations else self.seed

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "stop_reason": self.stop_reason.value,
            "iterations": [
                {"prompt": it.prompt, "feedback": it.feedback, "change_score": it.change_score}
                for it in self.iterations
            ],
        }


DEFAULT_FIXTURE_DIALOGUE = """USER: i need a cheap hotel in the north with free wifi .
SYSTEM: the acorn guest house is a cheap 4 star guesthouse in the north . want me to book it ?
USER: yes , book it for 2 people for 3 nights from friday . i do not care about parking .
SYSTEM: done ! your reference code is a1b2c3d4 ."""

_OUTPUT_REQUEST = """Apply the prompt below to the dialogue that follows and produce the output the prompt asks for.

Prompt:
{prompt}

Dialogue:
{dialogue}"""

_FEEDBACK_REQUEST = """You wrote the prompt below and it produced the output below on a test dialogue. Point out concrete weaknesses of the prompt: ambiguous wording, missing instructions, format problems. Reply with the feedback only. If the prompt needs no changes, reply with an empty message.

Prompt:
{prompt}

Output it produced:
{output}"""

_REVISION_REQUEST = """Rewrite the prompt below so it addresses the feedback while keeping its intent and its output format contract. Reply with the revised prompt text only, no commentary.

Prompt:
{prompt}

Feedback:
{feedback}"""


def refine_prompt(
    seed: str,
    backend: Backend,
    max_iters: int = 5,
    *,
    ledger: RequestLedger | None = None,
    params: SamplingParams | None = None,
    fixture_dialogue: str = DEFAULT_FIXTURE_DIALOGUE,
    retry: RetryPolicy | None = None,
    audit=None,
) -> tuple[str, RefinementTrace]:
    """Run the refinement loop; three requests per iteration.

    The near-identical stop needs two revisions to compare, so it is
    checked from the second iteration on; the cap applies from the first.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    if params is None:
        params = SamplingParams()

    def ask(text: str) -> str:
        spec = PromptSpec(text=text, params=params, shape=FreeText(), stage=STAGE)
        return complete(spec, backend, ledger, retry, audit)

    current = seed
    iterations: list[RefinementIteration] = []
    empty_feedback_streak = 0
    for iteration in range(1, max_iters + 1):
        output = ask(_OUTPUT_REQUEST.format(prompt=current, dialogue=fixture_dialogue))
        feedback = ask(_FEEDBACK_REQUEST.format(prompt=current, output=output))
        if not feedback.strip():
            empty_feedback_streak += 1
            if empty_feedback_streak >= 2:
                raise RefusalLoop("empty feedback twice in a row")
        else:
            empty_feedback_streak = 0
        revised = ask(_REVISION_REQUEST.format(prompt=current, feedback=feedback))
        if not revised.strip():
            log.warning("iteration %d: empty revision, keeping previous prompt", iteration)
            revised = current
        iterations.append(
            RefinementIteration(
                prompt=revised,
                feedback=feedback,
                change_score=1.0 - normalized_similarity(current, revised),
            )
        )
        if iteration == 1:
            if iteration >= max_iters:
                return revised, RefinementTrace(seed, tuple(iterations), StopReason.ITERATION_LIMIT)
        else:
            decision = should_stop(current, revised, iteration, max_iters)
            if decision.stop:
                assert decision.reason is not None
                return revised, RefinementTrace(seed, tuple(iterations), decision.reason)
        current = revised
    return current, RefinementTrace(seed, tuple(iterations), StopReason.ITERATION_LIMIT)
