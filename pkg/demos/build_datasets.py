"""Harvest the three training datasets from a batch of traces.

Two scripted sessions run back to back: one clean two-step session and one
that has a step rejected along the way. The rejected step shows up in the
critique dataset with label 0 but never contaminates the decomposition or
read datasets.

    python3 demos/build_datasets.py
"""

import dataclasses
import json

from selfhop import (
    Document,
    Question,
    emit_critique_records,
    emit_decomposition_records,
    emit_read_records,
    explore_batch,
    index_corpus,
    load_script,
    round_stats,
)

CORPUS = [
    Document(id="craigslist", title="Craigslist",
             body="Craigslist was founded by Craig Newmark in 1995."),
    Document(id="newmark", title="Craig Newmark",
             body="Craig Newmark was born on December 6, 1952 in Morristown."),
]

QUESTIONS = [
    Question(id="d1", text="When was the founder of craigslist born?"),
    Question(id="d2", text="Who founded craigslist, and where?"),
]

SCRIPT = [
    # session 1: two accepted steps, then the answer
    ("*", "Follow up: Who was the founder of craigslist?"),
    ("*", "Craigslist was founded by Craig Newmark."),
    ("*", "flag = True."),
    ("*", "Follow up: When was Craig Newmark born?"),
    ("*", "Craig Newmark was born on December 6, 1952."),
    ("*", "flag = True."),
    ("*", "So the final answer is: December 6, 1952."),
    ("*", "flag = True."),
    # session 2: the first proposal is rejected, the retry is accepted
    ("*", "Follow up: What color is craigslist?"),
    ("*", "The references do not say."),
    ("*", "The step does not help answer the question. flag = False."),
    ("*", "Follow up: Who founded craigslist?"),
    ("*", "Craig Newmark founded craigslist in 1995."),
    ("*", "flag = True."),
    ("*", "So the final answer is: Craig Newmark."),
    ("*", "flag = True."),
]


def main():
    backend = load_script(SCRIPT)
    traces = explore_batch(QUESTIONS, backend, index_corpus(CORPUS))

    dd, dr, dc = [], [], []
    for trace in traces:
        dd.extend(emit_decomposition_records(trace))
        dr.extend(emit_read_records(trace))
        dc.extend(emit_critique_records(trace))

    for name, records in (("decomposition", dd), ("read", dr), ("critique", dc)):
        print(f"{name}: {len(records)} records")
        for record in records:
            line = json.dumps(dataclasses.asdict(record), ensure_ascii=False)
            print(f"  {line[:110]}...")
        print()

    stats = round_stats(traces, dd, dr, dc)
    print(f"round stats: {json.dumps(stats.to_dict(), indent=2)}")


if __name__ == "__main__":
    main()
