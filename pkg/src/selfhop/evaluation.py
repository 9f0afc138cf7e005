"""Answer metrics, run scoring, critique consistency, and pairwise judging.

Metric conventions:

* ``normalize_answer`` lowercases, strips punctuation, drops the articles
  a/an/the, and collapses whitespace -- punctuation first, then articles,
  which is what makes the function idempotent.
* exact match and token F1 are taken as the max over the gold answers.
* ``accuracy`` is containment accuracy: the normalized gold tokens must
  appear as a contiguous subsequence of the normalized prediction tokens.
  Verbose but correct answers ("so the final answer is muhammad ali") get
  credit; by construction EM <= Acc.

``consistency`` reports exact percentages; no rounding happens before the
report, so 223 agreements out of 300 is 74.33 (to two decimals), not 74.3.
"""

from __future__ import annotations

import json
import logging
import re
import string
from collections import Counter
from dataclasses import dataclass
from enum import Enum

from .backend import ModelRequest, RequestTag
from .protocol import render_judge_prompt

logger = logging.getLogger(__name__)

__all__ = [
    "normalize_answer",
    "exact_match",
    "f1",
    "accuracy",
    "QuestionScore",
    "MetricReport",
    "ConsistencyReport",
    "TokenReport",
    "JudgeVerdict",
    "JudgeResult",
    "JudgeParseError",
    "evaluate_run",
    "consistency",
    "judge_pair",
    "token_report",
    "write_metric_report",
    "JUDGE_DIMENSIONS",
]

_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation, drop articles, collapse whitespace."""
    out = text.lower().translate(_PUNCT_TABLE)
    out = _ARTICLE_RE.sub(" ", out)
    return " ".join(out.split())


def _require_golds(golds) -> list[str]:
    golds = list(golds)
    if not golds:
        raise ValueError("at least one gold answer is required")
    return golds


def exact_match(prediction: str, golds) -> int:
    """1 when the normalized prediction equals any normalized gold."""
    normalized = normalize_answer(prediction)
    return int(any(normalized == normalize_answer(g) for g in _require_golds(golds)))


def _f1_single(prediction: str, gold: str) -> float:
    pred_tokens = normalize_answer(prediction).split()
    gold_tokens = normalize_answer(gold).split()
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def f1(prediction: str, golds) -> float:
    """Token-multiset F1, max over gold answers."""
    return max(_f1_single(prediction, g) for g in _require_golds(golds))


def _contains_contiguous(haystack: list[str], needle: list[str]) -> bool:
    if not needle:
        return True
    if len(needle) > len(haystack):
        return False
    return any(
        haystack[i:i + len(needle)] == needle
        for i in range(len(haystack) - len(needle) + 1)
    )


def accuracy(prediction: str, golds) -> int:
    """1 when any normalized gold is a contiguous token run of the prediction."""
    pred_tokens = normalize_answer(prediction).split()
    return int(
        any(
            _contains_contiguous(pred_tokens, normalize_answer(g).split())
            for g in _require_golds(golds)
        )
    )


# ---------------------------------------------------------------------------
# run evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuestionScore:
    question_id: str
    em: int
    f1: float
    acc: int
    reasoning_length: int


@dataclass(frozen=True)
class MetricReport:
    n: int
    em: float
    f1: float
    accuracy: float
    mean_reasoning_length: float
    rows: tuple[QuestionScore, ...]


def evaluate_run(traces, golds) -> MetricReport:
    """Score each trace's final answer against ``golds`` (question id -> answers).

    Error traces score as empty predictions rather than being dropped: a
    crashed question is an earned zero, not a missing row.
    """
    traces = list(traces)
    if not traces:
        raise ValueError("cannot evaluate an empty trace list")
    missing = sorted(
        t.question.id for t in traces
        if t.question.id not in golds or not list(golds[t.question.id])
    )
    if missing:
        raise ValueError(f"missing gold answers for: {', '.join(missing)}")

    rows = []
    for trace in traces:
        qid = trace.question.id
        prediction = trace.final_answer or ""
        answers = list(golds[qid])
        rows.append(
            QuestionScore(
                question_id=qid,
                em=exact_match(prediction, answers),
                f1=f1(prediction, answers),
                acc=accuracy(prediction, answers),
                reasoning_length=len(trace.accepted_path),
            )
        )
    n = len(rows)
    return MetricReport(
        n=n,
        em=sum(r.em for r in rows) / n,
        f1=sum(r.f1 for r in rows) / n,
        accuracy=sum(r.acc for r in rows) / n,
        mean_reasoning_length=sum(r.reasoning_length for r in rows) / n,
        rows=tuple(rows),
    )


def write_metric_report(report: MetricReport, text_path, rows_path) -> None:
    """Human-readable summary plus machine-readable per-question rows."""
    with open(text_path, "w", encoding="utf-8") as handle:
        handle.write(f"questions: {report.n}\n")
        handle.write(f"accuracy: {report.accuracy:.4f}\n")
        handle.write(f"f1: {report.f1:.4f}\n")
        handle.write(f"em: {report.em:.4f}\n")
        handle.write(f"mean_reasoning_length: {report.mean_reasoning_length:.4f}\n")
    with open(rows_path, "w", encoding="utf-8") as handle:
        for row in report.rows:
            handle.write(json.dumps({
                "question_id": row.question_id,
                "em": row.em,
                "f1": row.f1,
                "acc": row.acc,
                "reasoning_length": row.reasoning_length,
            }, ensure_ascii=False))
            handle.write("\n")


# ---------------------------------------------------------------------------
# critique consistency
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConsistencyReport:
    n: int
    agreements: int
    percent: float


def consistency(flags_a, flags_b) -> ConsistencyReport:
    """Agreement rate between two equally long 0/1 flag sequences."""
    flags_a = list(flags_a)
    flags_b = list(flags_b)
    if not flags_a:
        raise ValueError("flag sequences must be non-empty")
    if len(flags_a) != len(flags_b):
        raise ValueError(f"length mismatch: {len(flags_a)} vs {len(flags_b)}")
    for value in (*flags_a, *flags_b):
        if value not in (0, 1):
            raise ValueError(f"flags must be 0 or 1, got {value!r}")
    agreements = sum(int(a == b) for a, b in zip(flags_a, flags_b))
    return ConsistencyReport(
        n=len(flags_a),
        agreements=agreements,
        percent=100.0 * agreements / len(flags_a),
    )


# ---------------------------------------------------------------------------
# pairwise decomposition judging
# ---------------------------------------------------------------------------

JUDGE_DIMENSIONS = ("Conciseness", "Rationality", "Sequencing", "Goal Orientation")


class JudgeVerdict(str, Enum):
    RESULT_1 = "result1"
    RESULT_2 = "result2"
    TIE = "tie"


class JudgeParseError(ValueError):
    """The judge completion was not a valid scored comparison."""

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class JudgeResult:
    # dimension name -> (result 1 score, result 2 score), scores in 1..5
    scores: dict[str, tuple[int, int]]
    verdict: JudgeVerdict


def _parse_judge(text: str) -> JudgeResult:
    candidate = text.strip()
    try:
        body = json.loads(candidate)
    except json.JSONDecodeError:
        start, end = candidate.find("{"), candidate.rfind("}")
        if start == -1 or end <= start:
            raise JudgeParseError("no JSON object in judge output", raw=text) from None
        try:
            body = json.loads(candidate[start:end + 1])
        except json.JSONDecodeError as exc:
            raise JudgeParseError(f"unparseable judge output: {exc}", raw=text) from exc

    scores = {}
    for dimension in JUDGE_DIMENSIONS:
        entry = body.get(dimension)
        if not isinstance(entry, dict):
            raise JudgeParseError(f"missing dimension {dimension!r}", raw=text)
        try:
            pair = (int(entry["Result 1 Score"]), int(entry["Result 2 Score"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise JudgeParseError(f"bad scores for {dimension!r}: {exc}", raw=text) from exc
        for value in pair:
            if not 1 <= value <= 5:
                raise JudgeParseError(
                    f"{dimension} score {value} outside 1..5", raw=text
                )
        scores[dimension] = pair

    result = str(body.get("Result", "")).lower()
    has_1, has_2, has_tie = "1" in result, "2" in result, "tie" in result
    if has_tie and not has_1 and not has_2:
        verdict = JudgeVerdict.TIE
    elif has_1 and not has_2:
        verdict = JudgeVerdict.RESULT_1
    elif has_2 and not has_1:
        verdict = JudgeVerdict.RESULT_2
    else:
        raise JudgeParseError(f"ambiguous verdict {body.get('Result')!r}", raw=text)
    return JudgeResult(scores=scores, verdict=verdict)


def judge_pair(question: str, decomposition_a: str, decomposition_b: str, backend, *,
               max_output_tokens: int = 1024) -> JudgeResult:
    """Have the backend compare two decomposition transcripts of ``question``."""
    prompt = render_judge_prompt(question, decomposition_a, decomposition_b)
    response = backend.complete(
        ModelRequest(prompt=prompt, tag=RequestTag.JUDGE, max_output_tokens=max_output_tokens)
    )
    return _parse_judge(response.text)


# ---------------------------------------------------------------------------
# token reporting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TokenReport:
    n: int
    mean_input_tokens: float
    mean_output_tokens: float
    mean_calls: float

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mean_input_tokens": self.mean_input_tokens,
            "mean_output_tokens": self.mean_output_tokens,
            "mean_calls": self.mean_calls,
        }


def token_report(traces) -> TokenReport:
    """Per-question means of input tokens, output tokens, and model calls."""
    traces = list(traces)
    if not traces:
        raise ValueError("cannot report tokens for an empty trace list")
    n = len(traces)
    return TokenReport(
        n=n,
        mean_input_tokens=sum(t.usage.total_input_tokens for t in traces) / n,
        mean_output_tokens=sum(t.usage.total_output_tokens for t in traces) / n,
        mean_calls=sum(t.usage.total_calls for t in traces) / n,
    )
