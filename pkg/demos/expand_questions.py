"""Grow the next round's question set from seeds.

A scripted generator proposes new questions one at a time; near-duplicates
of the seeds (or of already-accepted questions) are rejected by token-set
overlap, so the accepted list below is shorter than the number of attempts.

    python3 demos/expand_questions.py
"""

from selfhop import ExpansionConfig, Question, expand, load_script

SEEDS = [
    Question(id=f"seed-{i}", text=text)
    for i, text in enumerate([
        "Who directed the film that won the first award?",
        "Which country is the author of the river novel from?",
        "When was the founder of the search company born?",
        "What instrument did the composer of the anthem play?",
        "Which city hosted the games the sprinter won?",
        "Who taught the painter of the famous mural?",
        "What language is spoken where the explorer landed?",
        "Which team signed the player who broke the record?",
    ])
]

# the second proposal is a near-duplicate of the first and gets dropped
SCRIPT = [
    ("Multi-Hop-Question-Generation", "Question: Who mentored the architect of the tallest tower?"),
    ("Multi-Hop-Question-Generation", "Question: Who mentored the architect of the tallest tower again?"),
    ("Multi-Hop-Question-Generation", "Question: Which sea borders the country of the oldest lighthouse?"),
    ("Multi-Hop-Question-Generation", "Question: What year did the bridge between the two capitals open?"),
]


def main():
    backend = load_script(SCRIPT)
    result = expand(
        SEEDS,
        backend,
        ExpansionConfig(target_count=3),
        source_tag="expansion_demo",
        rng_seed=4,
    )

    print(f"attempts: {result.attempts}, accepted: {len(result.questions)}")
    for question in result.questions:
        print(f"  {question.id}: {question.text}")
    print(f"budget exhausted: {result.exhausted}")


if __name__ == "__main__":
    main()
