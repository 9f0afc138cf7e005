"""Answer metrics, critique consistency, judge parsing, token reports.

The 25-case metric fixture was computed by hand before the metric code was
written; every f1 value below is the exact fraction from the token-overlap
arithmetic, not a recorded output.
"""

import json

import pytest
from hypothesis import given, strategies as st

from selfhop.backend import ModelResponse, RequestTag, UsageLedger, UsageSnapshot, load_script
from selfhop.evaluation import (
    JUDGE_DIMENSIONS,
    JudgeParseError,
    JudgeVerdict,
    accuracy,
    consistency,
    evaluate_run,
    exact_match,
    f1,
    judge_pair,
    normalize_answer,
    token_report,
    write_metric_report,
)
from selfhop.explorer import Question, TerminatedBy, Trace


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def test_normalize_examples():
    assert normalize_answer("The Quick, Brown Fox!") == "quick brown fox"
    assert normalize_answer("a an the") == ""
    assert normalize_answer("U.S.A.") == "usa"
    assert normalize_answer("  spaced   out  ") == "spaced out"
    assert normalize_answer("Another") == "another"  # 'an' only strips as a word


def test_normalize_article_inside_word_survives_punctuation_removal():
    # punctuation goes first, then article words; "the-best" becomes "thebest"
    assert normalize_answer("the-best") == "thebest"


@given(st.text(max_size=200))
def test_normalize_idempotent(text):
    once = normalize_answer(text)
    assert normalize_answer(once) == once


# ---------------------------------------------------------------------------
# metric fixture, hand-computed
# ---------------------------------------------------------------------------

# (prediction, golds, em, f1, acc)
FIXTURE = [
    ("Paris", ["Paris"], 1, 1.0, 1),
    ("paris.", ["Paris"], 1, 1.0, 1),
    ("The Paris", ["Paris"], 1, 1.0, 1),
    ("born in 1952", ["1952"], 0, 0.5, 1),
    ("December 6, 1952", ["December 6, 1952"], 1, 1.0, 1),
    ("December 6 1952", ["December 6, 1952"], 1, 1.0, 1),
    ("6 December 1952", ["December 6, 1952"], 0, 1.0, 0),
    ("no", ["No"], 1, 1.0, 1),
    ("yes", ["no"], 0, 0.0, 0),
    ("Muhammad Ali", ["Muhammad Ali", "Ali"], 1, 1.0, 1),
    ("Ali", ["Muhammad Ali"], 0, 2 / 3, 0),
    ("the the the", ["the"], 1, 1.0, 1),  # both normalize to empty
    ("", ["x"], 0, 0.0, 0),
    ("x", [""], 0, 0.0, 1),  # empty gold is contained in anything
    ("The quick brown fox", ["quick brown"], 0, 0.8, 1),
    ("fox brown quick", ["quick brown"], 0, 0.8, 0),
    ("a an the", ["the a an"], 1, 1.0, 1),
    ("it's", ["its"], 1, 1.0, 1),
    ("New York City", ["New York"], 0, 0.8, 1),
    ("York New", ["New York"], 0, 1.0, 0),
    ("Martinez directed it in France", ["France"], 0, 1 / 3, 1),
    ("one two two three", ["two two"], 0, 2 / 3, 1),
    ("one two three", ["two two"], 0, 0.4, 0),
    ("Lucia Martinez", ["Lucía Martínez"], 0, 0.0, 0),  # accents are not folded
    # the article drops out: 5 pred tokens, overlap 2, p=2/5, r=1 -> 4/7
    ("answer deep inside a long sentence", ["deep inside"], 0, 4 / 7, 1),
]


@pytest.mark.parametrize("pred,golds,want_em,want_f1,want_acc", FIXTURE)
def test_metric_fixture(pred, golds, want_em, want_f1, want_acc):
    assert exact_match(pred, golds) == want_em
    assert f1(pred, golds) == pytest.approx(want_f1, abs=1e-12)
    assert accuracy(pred, golds) == want_acc


def test_metrics_take_max_over_golds():
    golds = ["completely wrong", "born in 1952"]
    assert f1("born in 1952", golds) == 1.0
    assert exact_match("born in 1952", golds) == 1
    assert accuracy("wrong", ["right", "wrong"]) == 1


def test_metrics_require_golds():
    with pytest.raises(ValueError):
        f1("x", [])
    with pytest.raises(ValueError):
        exact_match("x", [])


printable = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",)), max_size=40
)


@given(printable, printable)
def test_em_implies_acc(pred, gold):
    assert exact_match(pred, [gold]) <= accuracy(pred, [gold])


@given(printable, printable)
def test_f1_symmetric_for_single_gold(pred, gold):
    assert f1(pred, [gold]) == pytest.approx(f1(gold, [pred]), abs=1e-12)


# ---------------------------------------------------------------------------
# run evaluation
# ---------------------------------------------------------------------------

def make_trace(qid, answer, path_len=1, terminated_by=TerminatedBy.SUFFICIENT):
    return Trace(
        question=Question(id=qid, text=f"{qid}?"),
        nodes=(),
        accepted_path=tuple(range(1, path_len + 1)),
        final_answer=answer,
        final_flag=1 if answer is not None else None,
        budget_used=path_len,
        terminated_by=terminated_by,
        usage=UsageSnapshot(),
    )


def test_evaluate_run_aggregates_are_means():
    traces = [make_trace("a", "Paris", path_len=2), make_trace("b", "wrong", path_len=4)]
    golds = {"a": ["Paris"], "b": ["London"]}
    report = evaluate_run(traces, golds)
    assert report.n == 2
    assert report.em == pytest.approx(0.5)
    assert report.accuracy == pytest.approx(0.5)
    assert report.f1 == pytest.approx(0.5)
    assert report.mean_reasoning_length == pytest.approx(3.0)
    assert len(report.rows) == 2


def test_evaluate_run_permutation_invariant():
    traces = [make_trace(f"q{i}", "Paris" if i % 2 else "no", path_len=i + 1) for i in range(5)]
    golds = {t.question.id: ["Paris"] for t in traces}
    forward = evaluate_run(traces, golds)
    backward = evaluate_run(list(reversed(traces)), golds)
    for field in ("n", "em", "f1", "accuracy", "mean_reasoning_length"):
        assert getattr(forward, field) == pytest.approx(getattr(backward, field))


def test_evaluate_run_error_trace_scores_zero():
    traces = [make_trace("a", None, path_len=0, terminated_by=TerminatedBy.ERROR)]
    report = evaluate_run(traces, {"a": ["anything"]})
    assert report.em == 0.0 and report.f1 == 0.0 and report.accuracy == 0.0


def test_evaluate_run_missing_golds_named():
    traces = [make_trace("present", "x"), make_trace("absent", "y")]
    with pytest.raises(ValueError, match="absent"):
        evaluate_run(traces, {"present": ["x"]})


def test_write_metric_report(tmp_path):
    traces = [make_trace("a", "Paris")]
    report = evaluate_run(traces, {"a": ["Paris"]})
    text_path = tmp_path / "metrics.txt"
    rows_path = tmp_path / "rows.jsonl"
    write_metric_report(report, text_path, rows_path)
    text = text_path.read_text(encoding="utf-8")
    assert "questions: 1" in text
    assert "em: 1.0000" in text
    rows = [json.loads(line) for line in rows_path.read_text(encoding="utf-8").splitlines()]
    assert rows[0]["question_id"] == "a"
    assert rows[0]["em"] == 1


# ---------------------------------------------------------------------------
# consistency
# ---------------------------------------------------------------------------

def test_consistency_paper_fixture():
    # 223 agreements out of 300; exact arithmetic gives 74.33 at 2 decimals
    flags_a = [1] * 223 + [0] * 77
    flags_b = [1] * 223 + [1] * 77
    report = consistency(flags_a, flags_b)
    assert report.n == 300
    assert report.agreements == 223
    assert report.percent == pytest.approx(100 * 223 / 300)
    assert round(report.percent, 2) == 74.33


def test_consistency_validation():
    with pytest.raises(ValueError):
        consistency([1, 0], [1])
    with pytest.raises(ValueError):
        consistency([], [])
    with pytest.raises(ValueError):
        consistency([2], [1])


# ---------------------------------------------------------------------------
# judge parsing
# ---------------------------------------------------------------------------

def judge_body(verdict="Decomposition Results 1", score=4):
    body = {
        dim: {"Result 1 Score": score, "Result 2 Score": score, "Explanation": "e"}
        for dim in JUDGE_DIMENSIONS
    }
    body["Result"] = verdict
    return body


def run_judge(body):
    backend = load_script([("*", json.dumps(body))])
    return judge_pair("q", "decomp a", "decomp b", backend)


def test_judge_parses_scores_and_verdict():
    result = run_judge(judge_body())
    assert result.verdict is JudgeVerdict.RESULT_1
    assert set(result.scores) == set(JUDGE_DIMENSIONS)
    assert result.scores["Conciseness"] == (4, 4)


def test_judge_verdict_variants():
    assert run_judge(judge_body("Decomposition Results 2")).verdict is JudgeVerdict.RESULT_2
    assert run_judge(judge_body("Tie")).verdict is JudgeVerdict.TIE


def test_judge_score_out_of_range_rejected():
    with pytest.raises(JudgeParseError):
        run_judge(judge_body(score=6))
    with pytest.raises(JudgeParseError):
        run_judge(judge_body(score=0))


def test_judge_missing_dimension_rejected():
    body = judge_body()
    del body["Rationality"]
    with pytest.raises(JudgeParseError, match="Rationality"):
        run_judge(body)


def test_judge_ambiguous_verdict_rejected():
    with pytest.raises(JudgeParseError, match="ambiguous"):
        run_judge(judge_body("Results 1 and 2"))


def test_judge_tolerates_prose_around_json():
    body = judge_body("Tie")
    backend = load_script([("*", f"Here is my assessment:\n{json.dumps(body)}\nDone.")])
    assert judge_pair("q", "a", "b", backend).verdict is JudgeVerdict.TIE


def test_judge_uses_judge_tag():
    backend = load_script([("*", json.dumps(judge_body()))])
    judge_pair("q", "a", "b", backend)
    assert backend.requests[0][0] is RequestTag.JUDGE


# ---------------------------------------------------------------------------
# token report
# ---------------------------------------------------------------------------

def trace_with_usage(qid, calls):
    ledger = UsageLedger()
    for i in range(calls):
        ledger.record(RequestTag.READ, ModelResponse("x", 10, 5, 0.0))
    trace = make_trace(qid, "ans")
    return Trace(**{**trace.__dict__, "usage": ledger.snapshot()})


def test_token_report_means():
    report = token_report([trace_with_usage("a", 2), trace_with_usage("b", 4)])
    assert report.n == 2
    assert report.mean_calls == pytest.approx(3.0)
    assert report.mean_input_tokens == pytest.approx(30.0)
    assert report.mean_output_tokens == pytest.approx(15.0)


def test_token_report_empty_rejected():
    with pytest.raises(ValueError):
        token_report([])
