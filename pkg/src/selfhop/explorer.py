"""Iterative self-exploration of multi-hop questions.

One question at a time, the explorer alternates four model roles until the
question is answered or the step budget runs out:

1. decompose: propose the next sub-question, or declare the history
   sufficient and answer.
2. retrieve: fetch top-k evidence snippets for the sub-question.
3. read: answer the sub-question from the snippets.
4. critique: keep or reject the (sub-question, answer) pair.

Rejected pairs are reverted -- they never enter the history that later
prompts see; the next proposal is regenerated with an appended instruction
listing the rejected sub-questions to avoid. Rejected steps still consume
budget, which is what bounds runaway decompositions.

Call accounting per non-error trace (``nodes`` = accepted + rejected):

* decompose calls = nodes + 1 (the terminal or forced step)
  + 1 per malformed-decomposition retry
* read calls = nodes
* critique calls = nodes + 1 (the final-answer critique)
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

from . import protocol
from .backend import BackendError, ModelRequest, RequestTag, UsageLedger, UsageSnapshot
from .protocol import FinalAnswer, Flag, FollowUp, Malformed, PromptText
from .retrieval import Evidence, refine

logger = logging.getLogger(__name__)

__all__ = [
    "Question",
    "ExplorationNode",
    "Trace",
    "TerminatedBy",
    "ExploreConfig",
    "explore",
    "explore_batch",
    "AVOID_INSTRUCTION_HEADER",
    "FORCE_FINAL_INSTRUCTION",
]

AVOID_INSTRUCTION_HEADER = "Do not repeat any of these rejected follow-up questions:"
FORCE_FINAL_INSTRUCTION = (
    "No further follow-up questions are allowed. Conclude now using exactly this "
    "format: 'So the final answer is: {final answer}'"
)


class TerminatedBy(str, Enum):
    SUFFICIENT = "sufficient"
    BUDGET_EXHAUSTED = "budget_exhausted"
    ERROR = "error"


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    gold_answers: tuple[str, ...] = ()
    source: str = ""


@dataclass(frozen=True)
class ExplorationNode:
    """One attempted decomposition step, accepted or not."""

    ordinal: int  # 1-based creation order
    subq: str
    evidence: tuple[Evidence, ...]
    suba: str
    flag: int  # 1 accepted, 0 rejected
    parent_ordinal: int  # ordinal of the last accepted node, 0 at the root

    def __post_init__(self) -> None:
        if self.ordinal < 1:
            raise ValueError("ordinal must be 1-based")
        if self.flag not in (0, 1):
            raise ValueError("flag must be 0 or 1")
        if not 0 <= self.parent_ordinal < self.ordinal:
            raise ValueError("parent_ordinal must name an earlier node or the root")


@dataclass(frozen=True)
class Trace:
    question: Question
    nodes: tuple[ExplorationNode, ...]
    accepted_path: tuple[int, ...]
    final_answer: str | None
    final_flag: int | None
    budget_used: int
    terminated_by: TerminatedBy
    usage: UsageSnapshot


@dataclass(frozen=True)
class ExploreConfig:
    n_max: int = 20
    max_retries_per_parent: int = 3
    k_snippets: int = 5
    refinement_enabled: bool = False

    def __post_init__(self) -> None:
        if self.n_max < 1 or self.max_retries_per_parent < 1 or self.k_snippets < 1:
            raise ValueError("n_max, max_retries_per_parent and k_snippets must be >= 1")


class _RecordingBackend:
    """Wraps a backend so one trace's usage is accounted independently of
    whatever else shares the underlying backend."""

    def __init__(self, inner):
        self.inner = inner
        self.ledger = UsageLedger()

    def complete(self, request: ModelRequest):
        response = self.inner.complete(request)
        self.ledger.record(request.tag, response)
        return response


def _append_to_prompt(prompt: PromptText, suffix: str) -> PromptText:
    messages = list(prompt.messages)
    role, text = messages[-1]
    messages[-1] = (role, f"{text}\n\n{suffix}")
    return PromptText(tuple(messages))


def _avoid_block(rejected: list[str]) -> str:
    lines = [AVOID_INSTRUCTION_HEADER]
    lines.extend(f"- {subq}" for subq in rejected)
    return "\n".join(lines)


def explore(question: Question, backend, retriever, config: ExploreConfig | None = None) -> Trace:
    """Run the exploration loop for one question.

    Backend and script errors are captured into a trace with
    ``terminated_by = error`` (partial nodes retained) rather than raised, so
    one bad question cannot take down a batch.
    """
    config = config or ExploreConfig()
    if not question.text.strip():
        raise ValueError(f"question {question.id!r} has empty text")

    recording = _RecordingBackend(backend)

    def call(prompt: PromptText, tag: RequestTag) -> str:
        return recording.complete(ModelRequest(prompt=prompt, tag=tag)).text

    history: list[tuple[str, str]] = []
    nodes: list[ExplorationNode] = []
    accepted_path: list[int] = []
    rejected_recent: list[str] = []
    final_answer: str | None = None
    final_flag: int | None = None
    terminated_by = TerminatedBy.ERROR

    def force_final() -> str:
        prompt = _append_to_prompt(
            protocol.render_decomposition_prompt(question.text, history),
            FORCE_FINAL_INSTRUCTION,
        )
        text = call(prompt, RequestTag.DECOMPOSE)
        action = protocol.parse_decomposition_step(text)
        if isinstance(action, FinalAnswer):
            return action.answer
        # every non-error trace must carry an answer; fall back to the raw text
        return text.strip()

    try:
        while True:
            if len(nodes) >= config.n_max:
                final_answer = force_final()
                terminated_by = TerminatedBy.BUDGET_EXHAUSTED
                break

            prompt = protocol.render_decomposition_prompt(question.text, history)
            if rejected_recent:
                prompt = _append_to_prompt(prompt, _avoid_block(rejected_recent))
            action = protocol.parse_decomposition_step(call(prompt, RequestTag.DECOMPOSE))
            if isinstance(action, Malformed):
                # one retry with the identical prompt, then give up decomposing
                action = protocol.parse_decomposition_step(call(prompt, RequestTag.DECOMPOSE))
                if isinstance(action, Malformed):
                    logger.warning("question %s: decomposition malformed twice", question.id)
                    final_answer = force_final()
                    terminated_by = TerminatedBy.BUDGET_EXHAUSTED
                    break
            if isinstance(action, FinalAnswer):
                final_answer = action.answer
                terminated_by = TerminatedBy.SUFFICIENT
                break

            subq = action.subq
            evidence = tuple(retriever.search(subq, config.k_snippets))
            if config.refinement_enabled and evidence:
                evidence = tuple(refine(list(evidence), subq, recording))
            suba = call(
                protocol.render_read_prompt(subq, [e.snippet for e in evidence]),
                RequestTag.READ,
            ).strip()
            verdict = protocol.parse_critique(
                call(protocol.render_critique_prompt(question.text, history, (subq, suba)),
                     RequestTag.CRITIQUE)
            )
            # a malformed critique rejects: keeping unvetted steps poisons history
            flag = verdict.value if isinstance(verdict, Flag) else 0

            node = ExplorationNode(
                ordinal=len(nodes) + 1,
                subq=subq,
                evidence=evidence,
                suba=suba,
                flag=flag,
                parent_ordinal=accepted_path[-1] if accepted_path else 0,
            )
            nodes.append(node)
            if flag == 1:
                history.append((subq, suba))
                accepted_path.append(node.ordinal)
                rejected_recent = []
            else:
                rejected_recent.append(subq)
                if len(rejected_recent) >= config.max_retries_per_parent:
                    logger.info("question %s: %d consecutive rejections, forcing an answer",
                                question.id, len(rejected_recent))
                    final_answer = force_final()
                    terminated_by = TerminatedBy.BUDGET_EXHAUSTED
                    break

        # final critique of the answer against the full history; recorded on
        # the trace, never enforced
        candidate = (question.text, final_answer if final_answer.strip() else protocol.NULL_BLOCK)
        verdict = protocol.parse_critique(
            call(protocol.render_critique_prompt(question.text, history, candidate),
                 RequestTag.CRITIQUE)
        )
        final_flag = verdict.value if isinstance(verdict, Flag) else 0
    except BackendError as exc:
        logger.warning("question %s: backend failure, trace marked error: %s", question.id, exc)
        terminated_by = TerminatedBy.ERROR
        final_answer = None
        final_flag = None

    return Trace(
        question=question,
        nodes=tuple(nodes),
        accepted_path=tuple(accepted_path),
        final_answer=final_answer,
        final_flag=final_flag,
        budget_used=len(nodes),
        terminated_by=terminated_by,
        usage=recording.ledger.snapshot(),
    )


def explore_batch(questions, backend, retriever, config: ExploreConfig | None = None,
                  parallelism: int = 1) -> list[Trace]:
    """Explore a batch, preserving input order in the result list.

    Any per-question exception -- not just backend errors -- is isolated into
    that question's trace.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be at least 1")

    def run(question: Question) -> Trace:
        try:
            return explore(question, backend, retriever, config)
        except Exception:
            logger.exception("question %s: exploration crashed", question.id)
            return Trace(
                question=question,
                nodes=(),
                accepted_path=(),
                final_answer=None,
                final_flag=None,
                budget_used=0,
                terminated_by=TerminatedBy.ERROR,
                usage=UsageSnapshot(),
            )

    if parallelism == 1:
        return [run(q) for q in questions]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(run, questions))
