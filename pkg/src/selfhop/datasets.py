"""Training-record emission and line-delimited serialization.

Exploration traces are distilled into three record streams, one per model
role being trained:

* decomposition records -- one per accepted node (target ``Follow up: ...``)
  plus one terminal record per trace (target ``So the final answer is: ...``);
* read records -- accepted nodes only, with the evidence snippets that were
  actually shown;
* critique records -- every node, accepted or rejected, labeled with its
  flag. Each record carries the original question and the creation-time
  history so the critique prompt can be reconstructed exactly.

For a batch of non-error traces the counts are laws, not tendencies:
``len(dd) = sum(accepted + 1)``, ``len(dr) = sum(accepted)``,
``len(dc) = sum(accepted + rejected)``.

All serialization here is JSONL with lower_snake_case field names matching
the record types; a corrupt line fails naming its line number.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

from .backend import UsageSnapshot
from .explorer import ExplorationNode, Question, TerminatedBy, Trace
from .protocol import FINAL_ANSWER_MARKER, FOLLOW_UP_MARKER
from .retrieval import Evidence

logger = logging.getLogger(__name__)

__all__ = [
    "DecompRecord",
    "ReadRecord",
    "CritiqueRecord",
    "RoundStats",
    "DatasetError",
    "emit_decomposition_records",
    "emit_read_records",
    "emit_critique_records",
    "round_stats",
    "write_jsonl",
    "read_jsonl",
    "write_traces",
    "read_traces",
    "write_questions",
    "read_questions",
]


class DatasetError(ValueError):
    """A record file or row failed validation."""


@dataclass(frozen=True)
class DecompRecord:
    q0: str
    history: tuple[tuple[str, str], ...]
    target: str


@dataclass(frozen=True)
class ReadRecord:
    subq: str
    references: tuple[str, ...]
    target_suba: str


@dataclass(frozen=True)
class CritiqueRecord:
    q0: str
    history: tuple[tuple[str, str], ...]
    subq: str
    suba: str
    label: int


@dataclass(frozen=True)
class RoundStats:
    round_index: int
    trace_count: int
    dd_count: int
    dr_count: int
    dc_count: int
    mean_reasoning_length: float
    # False when there were no non-error traces to average over
    reasoning_length_defined: bool

    def to_dict(self) -> dict:
        return {
            "round_index": self.round_index,
            "trace_count": self.trace_count,
            "dd_count": self.dd_count,
            "dr_count": self.dr_count,
            "dc_count": self.dc_count,
            "mean_reasoning_length": self.mean_reasoning_length,
            "reasoning_length_defined": self.reasoning_length_defined,
        }


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

def _skip_error(trace: Trace, what: str) -> bool:
    if trace.terminated_by is TerminatedBy.ERROR:
        logger.info("skipping %s emission for errored trace %s", what, trace.question.id)
        return True
    return False


def emit_decomposition_records(trace: Trace) -> list[DecompRecord]:
    """One record per accepted node plus the terminal answer record."""
    if _skip_error(trace, "decomposition"):
        return []
    records = []
    history: list[tuple[str, str]] = []
    for node in trace.nodes:
        if node.flag != 1:
            continue
        records.append(
            DecompRecord(
                q0=trace.question.text,
                history=tuple(history),
                target=f"{FOLLOW_UP_MARKER} {node.subq}",
            )
        )
        history.append((node.subq, node.suba))
    records.append(
        DecompRecord(
            q0=trace.question.text,
            history=tuple(history),
            target=f"{FINAL_ANSWER_MARKER} {trace.final_answer}",
        )
    )
    return records


def emit_read_records(trace: Trace) -> list[ReadRecord]:
    """Accepted nodes only; rejected answers are not worth imitating."""
    if _skip_error(trace, "read"):
        return []
    return [
        ReadRecord(
            subq=node.subq,
            references=tuple(e.snippet for e in node.evidence),
            target_suba=node.suba,
        )
        for node in trace.nodes
        if node.flag == 1
    ]


def emit_critique_records(trace: Trace) -> list[CritiqueRecord]:
    """Every node in creation order, with its creation-time history."""
    if _skip_error(trace, "critique"):
        return []
    records = []
    history: list[tuple[str, str]] = []
    for node in trace.nodes:
        records.append(
            CritiqueRecord(
                q0=trace.question.text,
                history=tuple(history),
                subq=node.subq,
                suba=node.suba,
                label=node.flag,
            )
        )
        if node.flag == 1:
            history.append((node.subq, node.suba))
    return records


def round_stats(traces, dd_records, dr_records, dc_records, round_index: int = 0) -> RoundStats:
    non_error = [t for t in traces if t.terminated_by is not TerminatedBy.ERROR]
    lengths = [len(t.accepted_path) for t in non_error]
    defined = bool(lengths)
    return RoundStats(
        round_index=round_index,
        trace_count=len(list(traces)),
        dd_count=len(dd_records),
        dr_count=len(dr_records),
        dc_count=len(dc_records),
        mean_reasoning_length=sum(lengths) / len(lengths) if defined else 0.0,
        reasoning_length_defined=defined,
    )


# ---------------------------------------------------------------------------
# record (de)serialization
# ---------------------------------------------------------------------------

def _history_to_json(history) -> list:
    return [{"subq": subq, "suba": suba} for subq, suba in history]


def _history_from_json(rows) -> tuple[tuple[str, str], ...]:
    return tuple((row["subq"], row["suba"]) for row in rows)


def _record_to_dict(record) -> dict:
    if isinstance(record, DecompRecord):
        return {
            "q0": record.q0,
            "history": _history_to_json(record.history),
            "target": record.target,
        }
    if isinstance(record, ReadRecord):
        return {
            "subq": record.subq,
            "references": list(record.references),
            "target_suba": record.target_suba,
        }
    if isinstance(record, CritiqueRecord):
        return {
            "q0": record.q0,
            "history": _history_to_json(record.history),
            "subq": record.subq,
            "suba": record.suba,
            "label": record.label,
        }
    raise DatasetError(f"unknown record type: {type(record).__name__}")


def _record_from_dict(row: dict, record_type):
    if record_type is DecompRecord:
        return DecompRecord(
            q0=row["q0"], history=_history_from_json(row["history"]), target=row["target"]
        )
    if record_type is ReadRecord:
        return ReadRecord(
            subq=row["subq"],
            references=tuple(row["references"]),
            target_suba=row["target_suba"],
        )
    if record_type is CritiqueRecord:
        return CritiqueRecord(
            q0=row["q0"],
            history=_history_from_json(row["history"]),
            subq=row["subq"],
            suba=row["suba"],
            label=int(row["label"]),
        )
    raise DatasetError(f"unknown record type: {record_type!r}")


def write_jsonl(records, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(_record_to_dict(record), ensure_ascii=False))
            handle.write("\n")


def _read_rows(path):
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}: line {lineno}: invalid JSON: {exc}") from exc


def read_jsonl(path, record_type) -> list:
    records = []
    for lineno, row in _read_rows(path):
        try:
            records.append(_record_from_dict(row, record_type))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}: line {lineno}: bad record: {exc}") from exc
    return records


# ---------------------------------------------------------------------------
# trace (de)serialization
# ---------------------------------------------------------------------------

def trace_to_dict(trace: Trace) -> dict:
    return {
        "question": _question_to_dict(trace.question),
        "nodes": [
            {
                "ordinal": node.ordinal,
                "subq": node.subq,
                "evidence": [
                    {"doc_id": e.doc_id, "snippet": e.snippet, "score": e.score}
                    for e in node.evidence
                ],
                "suba": node.suba,
                "flag": node.flag,
                "parent_ordinal": node.parent_ordinal,
            }
            for node in trace.nodes
        ],
        "accepted_path": list(trace.accepted_path),
        "final_answer": trace.final_answer,
        "final_flag": trace.final_flag,
        "budget_used": trace.budget_used,
        "terminated_by": trace.terminated_by.value,
        "usage": trace.usage.to_dict(),
    }


def trace_from_dict(row: dict) -> Trace:
    return Trace(
        question=_question_from_dict(row["question"]),
        nodes=tuple(
            ExplorationNode(
                ordinal=node["ordinal"],
                subq=node["subq"],
                evidence=tuple(
                    Evidence(doc_id=e["doc_id"], snippet=e["snippet"], score=e["score"])
                    for e in node["evidence"]
                ),
                suba=node["suba"],
                flag=node["flag"],
                parent_ordinal=node["parent_ordinal"],
            )
            for node in row["nodes"]
        ),
        accepted_path=tuple(row["accepted_path"]),
        final_answer=row["final_answer"],
        final_flag=row["final_flag"],
        budget_used=row["budget_used"],
        terminated_by=TerminatedBy(row["terminated_by"]),
        usage=UsageSnapshot.from_dict(row["usage"]),
    )


def write_traces(traces, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for trace in traces:
            handle.write(json.dumps(trace_to_dict(trace), ensure_ascii=False))
            handle.write("\n")


def read_traces(path) -> list[Trace]:
    traces = []
    for lineno, row in _read_rows(path):
        try:
            traces.append(trace_from_dict(row))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}: line {lineno}: bad trace: {exc}") from exc
    return traces


# ---------------------------------------------------------------------------
# question files
# ---------------------------------------------------------------------------

def _question_to_dict(question: Question) -> dict:
    return {
        "id": question.id,
        "text": question.text,
        "gold_answers": list(question.gold_answers),
        "source": question.source,
    }


def _question_from_dict(row: dict) -> Question:
    return Question(
        id=str(row["id"]),
        text=row["text"],
        gold_answers=tuple(row.get("gold_answers", ())),
        source=row.get("source", ""),
    )


def write_questions(questions, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for question in questions:
            handle.write(json.dumps(_question_to_dict(question), ensure_ascii=False))
            handle.write("\n")


def read_questions(path) -> list[Question]:
    questions = []
    for lineno, row in _read_rows(path):
        try:
            question = _question_from_dict(row)
        except (KeyError, TypeError) as exc:
            raise DatasetError(f"{path}: line {lineno}: bad question: {exc}") from exc
        if not str(question.text).strip():
            raise DatasetError(f"{path}: line {lineno}: question text is empty")
        questions.append(question)
    return questions
