"""Wire formats for every model-facing exchange.

This module is the single source of truth for how prompts are rendered and
how completions are parsed. Rendering is pure string assembly: the same
inputs always produce byte-identical output. Parsing is line-oriented and
tolerant of preamble chatter; unparseable text is returned as a
:class:`Malformed` value rather than raised, so callers decide the recovery
policy.

Prompt bodies live in ``templates/*.txt`` as package data. The published
prompt prose contains literal ``{...}`` braces (format instructions, a JSON
output schema), so substitution slots are spelled ``<<slot name>>`` -- a
marker that cannot occur in the prose. Slot names:

=============   =========================================================
asset           slots
=============   =========================================================
decompose.txt   ``question``, ``continuation`` (history pairs + trailer)
read.txt        ``references``, ``question``
critique.txt    ``question``, ``previous subquestions``,
                ``subquestion and intermediate answer``
expand.txt      ``task``, ``example 1`` .. ``example 8``
judge.txt       ``problem``, ``result1``, ``result2``
refine.txt      ``references``, ``question``
=============   =========================================================
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources

__all__ = [
    "ProtocolError",
    "PromptText",
    "FollowUp",
    "FinalAnswer",
    "Flag",
    "Malformed",
    "render_decomposition_prompt",
    "render_read_prompt",
    "render_critique_prompt",
    "render_expansion_prompt",
    "render_judge_prompt",
    "render_refine_prompt",
    "parse_decomposition_step",
    "parse_critique",
    "parse_generated_question",
    "normalize_final_answer",
    "FOLLOW_UP_MARKER",
    "FINAL_ANSWER_MARKER",
    "INTERMEDIATE_MARKER",
    "SUFFICIENCY_MARKER",
    "EXAMPLES_PER_EXPANSION_PROMPT",
]

ROLES = ("system", "user", "assistant")

FOLLOW_UP_MARKER = "Follow up:"
INTERMEDIATE_MARKER = "Intermediate answer:"
FINAL_ANSWER_MARKER = "So the final answer is:"
SUFFICIENCY_MARKER = "Are follow up questions needed here:"
QUESTION_MARKER = "Question:"
NULL_BLOCK = "Null"

EXAMPLES_PER_EXPANSION_PROMPT = 8


class ProtocolError(ValueError):
    """A render precondition was violated or a template asset is broken."""


@dataclass(frozen=True)
class PromptText:
    """Ordered chat messages, each a (role, text) pair."""

    messages: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        if not self.messages:
            raise ProtocolError("a prompt must contain at least one message")
        for role, text in self.messages:
            if role not in ROLES:
                raise ProtocolError(f"unknown message role {role!r}")
            if not isinstance(text, str):
                raise ProtocolError("message text must be a string")

    def text(self) -> str:
        """All message bodies joined; used for matching and token counting."""
        return "\n\n".join(text for _, text in self.messages)


# ---------------------------------------------------------------------------
# parse results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FollowUp:
    """Decomposition asked for one more sub-question."""

    subq: str


@dataclass(frozen=True)
class FinalAnswer:
    """Decomposition declared the accumulated history sufficient."""

    answer: str


@dataclass(frozen=True)
class Flag:
    """A critique verdict; value is 1 (keep) or 0 (reject)."""

    value: int

    def __post_init__(self) -> None:
        if self.value not in (0, 1):
            raise ProtocolError(f"flag value must be 0 or 1, got {self.value!r}")


@dataclass(frozen=True)
class Malformed:
    """The completion did not contain a recognizable directive."""

    raw: str


# ---------------------------------------------------------------------------
# template loading and slot substitution
# ---------------------------------------------------------------------------

_SLOT_RE = re.compile(r"<<([a-z0-9 ]+)>>")
_template_cache: dict[str, str] = {}


def _template(name: str) -> str:
    if name not in _template_cache:
        path = resources.files("selfhop.templates").joinpath(f"{name}.txt")
        # the trailing newline is a file convention, not part of the prompt
        _template_cache[name] = path.read_text(encoding="utf-8").rstrip("\n")
    return _template_cache[name]


def _fill(name: str, slots: dict[str, str]) -> str:
    unused = set(slots)

    def substitute(match: re.Match[str]) -> str:
        key = match.group(1)
        if key not in slots:
            raise ProtocolError(f"template {name!r} has unexpected slot <<{key}>>")
        unused.discard(key)
        return slots[key]

    # single pass: substituted values are never rescanned for slots
    body = _SLOT_RE.sub(substitute, _template(name))
    if unused:
        raise ProtocolError(f"template {name!r} is missing slots: {sorted(unused)}")
    return body


def _require(value: str, what: str) -> str:
    if not isinstance(value, str) or not value.strip():
        raise ProtocolError(f"{what} must be a non-empty string")
    return value


def _pairs_block(history: list[tuple[str, str]] | tuple[tuple[str, str], ...]) -> str:
    lines = []
    for subq, suba in history:
        _require(subq, "history sub-question")
        _require(suba, "history answer")
        lines.append(f"{FOLLOW_UP_MARKER} {subq}")
        lines.append(f"{INTERMEDIATE_MARKER} {suba}")
    return "\n".join(lines)


def _user_prompt(body: str) -> PromptText:
    return PromptText((("user", body),))


# ---------------------------------------------------------------------------
# renderers
# ---------------------------------------------------------------------------

def render_decomposition_prompt(q0, history) -> PromptText:
    """Prompt asking for the next decomposition step of ``q0``.

    The few-shot block is followed by the original question, each accepted
    (sub-question, answer) pair in insertion order, and the sufficiency
    trailer. With an empty history the trailer is the bare
    ``"Are follow up questions needed here:"`` line, so the model commits
    Yes/No itself; once history exists the trailer carries the committed
    ``" Yes."``.
    """
    _require(q0, "q0")
    pairs = _pairs_block(history)
    if pairs:
        continuation = f"{pairs}\n{SUFFICIENCY_MARKER} Yes."
    else:
        continuation = SUFFICIENCY_MARKER
    return _user_prompt(_fill("decompose", {"question": q0, "continuation": continuation}))


def render_read_prompt(subq, references) -> PromptText:
    """Prompt answering ``subq`` from numbered reference snippets.

    ``references`` may be empty; the references block is then the literal
    ``Null`` (the instructions tell the model to fall back on its own
    knowledge in that case).
    """
    _require(subq, "subq")
    if references:
        block = "\n".join(
            f"Reference [{i}]: {snippet}" for i, snippet in enumerate(references, start=1)
        )
    else:
        block = NULL_BLOCK
    return _user_prompt(_fill("read", {"references": block, "question": subq}))


def render_critique_prompt(q0, history, candidate) -> PromptText:
    """Prompt judging whether ``candidate`` adds value toward ``q0``.

    ``candidate`` is the (sub-question, answer) pair under review; ``history``
    holds the previously accepted pairs, rendered as ``Null`` when empty.
    """
    _require(q0, "q0")
    subq, suba = candidate
    _require(subq, "candidate sub-question")
    _require(suba, "candidate answer")
    previous = _pairs_block(history) or NULL_BLOCK
    block = f"{FOLLOW_UP_MARKER} {subq}\n{INTERMEDIATE_MARKER} {suba}"
    return _user_prompt(
        _fill(
            "critique",
            {
                "question": q0,
                "previous subquestions": previous,
                "subquestion and intermediate answer": block,
            },
        )
    )


def render_expansion_prompt(task_name, examples) -> PromptText:
    """Prompt generating one new multi-hop question in the style of ``examples``.

    Exactly eight example questions are required; anything else is a caller
    bug and raises.
    """
    _require(task_name, "task_name")
    examples = list(examples)
    if len(examples) != EXAMPLES_PER_EXPANSION_PROMPT:
        raise ProtocolError(
            f"expansion prompt needs exactly {EXAMPLES_PER_EXPANSION_PROMPT} examples, "
            f"got {len(examples)}"
        )
    slots = {"task": task_name}
    for i, example in enumerate(examples, start=1):
        slots[f"example {i}"] = _require(example, f"example {i}")
    return _user_prompt(_fill("expand", slots))


def render_judge_prompt(problem, result1, result2) -> PromptText:
    """Prompt comparing two decomposition transcripts of the same problem."""
    _require(problem, "problem")
    _require(result1, "result1")
    _require(result2, "result2")
    return _user_prompt(
        _fill("judge", {"problem": problem, "result1": result1, "result2": result2})
    )


def render_refine_prompt(question, snippets) -> PromptText:
    """Prompt selecting the relevant subset of retrieved snippets."""
    _require(question, "question")
    snippets = list(snippets)
    if not snippets:
        raise ProtocolError("refine prompt needs at least one snippet")
    block = "\n".join(f"Reference [{i}]: {s}" for i, s in enumerate(snippets, start=1))
    return _user_prompt(_fill("refine", {"references": block, "question": question}))


# ---------------------------------------------------------------------------
# parsers
# ---------------------------------------------------------------------------

def normalize_final_answer(text: str) -> str:
    """Final-answer normalization: strip whitespace and one trailing period."""
    out = text.strip()
    if out.endswith("."):
        out = out[:-1].rstrip()
    return out


def parse_decomposition_step(text: str):
    """Extract the first directive from a decomposition completion.

    Lines are scanned top to bottom; the first ``Follow up:`` or
    ``So the final answer is:`` directive wins (earliest marker within the
    line when both appear on one). Chatter such as a leading ``Yes.`` is
    skipped. A directive whose payload is empty after normalization does not
    count, and scanning continues. Returns :class:`FollowUp`,
    :class:`FinalAnswer`, or :class:`Malformed`.
    """
    for line in text.splitlines():
        hits = []
        follow_at = line.find(FOLLOW_UP_MARKER)
        if follow_at != -1:
            hits.append((follow_at, FOLLOW_UP_MARKER))
        final_at = line.find(FINAL_ANSWER_MARKER)
        if final_at != -1:
            hits.append((final_at, FINAL_ANSWER_MARKER))
        if not hits:
            continue
        position, marker = min(hits)
        payload = line[position + len(marker):]
        if marker == FOLLOW_UP_MARKER:
            subq = payload.strip()
            if subq:
                return FollowUp(subq)
        else:
            answer = normalize_final_answer(payload)
            if answer:
                return FinalAnswer(answer)
    return Malformed(text)


def parse_critique(text: str):
    """Extract a keep/reject flag from a critique completion.

    The search is case-insensitive and the last occurrence wins, because the
    final judgment line comes after the step-by-step analysis (which may
    quote the opposite flag while reasoning).
    """
    lowered = text.lower()
    true_at = lowered.rfind("flag = true")
    false_at = lowered.rfind("flag = false")
    if true_at == -1 and false_at == -1:
        return Malformed(text)
    return Flag(1 if true_at > false_at else 0)


def parse_generated_question(text: str):
    """Extract the generated question from an expansion completion.

    Takes the remainder of the line holding the first ``Question:`` marker,
    trimmed. Later lines are chatter and dropped. No marker, or an empty
    payload, is :class:`Malformed`.
    """
    position = text.find(QUESTION_MARKER)
    if position == -1:
        return Malformed(text)
    rest = text[position + len(QUESTION_MARKER):]
    question = rest.split("\n", 1)[0].strip()
    if not question:
        return Malformed(text)
    return question
