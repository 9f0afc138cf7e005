"""Walk one exploration session end to end with a scripted backend.

The script plays the model's part: it proposes a sub-question about the
first film, answers it from retrieved snippets, approves the step, and
then concludes. Run it to see the trace the engine records, including the
per-tag usage accounting.

    python3 demos/explore_scripted.py
"""

from selfhop import Document, Question, explore, index_corpus, load_script

CORPUS = [
    Document(
        id="inter-nos",
        title="Inter Nos",
        body=(
            "Congratulations to the four Directors of Inter Nos. Inter Nos is led by "
            "President Juan Carlos Martinez. Cynthia Vaughn has been named Associate "
            "Editor of Inter Nos and will edit the Independent Voices section."
        ),
    ),
    Document(
        id="la-bandera",
        title="La Bandera",
        body=(
            "La Bandera is a 1935 French film directed by Julien Duvivier. "
            "Duvivier was born in Lille, France, and directed many classics."
        ),
    ),
]

QUESTION = Question(
    id="demo-1",
    text="Are the directors of both films Inter Nos and La Bandera (Film) from the same country?",
)

SUBQ = "Who is the director of Inter Nos?"
SUBA = (
    "According to the references provided, the directors of Inter Nos include "
    "President Juan Carlos Martinez."
)

# Each event pairs a matcher (a substring the prompt must contain) with the
# canned completion. The engine consumes them strictly in order.
SCRIPT = [
    ("Are follow up questions needed here:", f"Yes.\nFollow up: {SUBQ}"),
    ("Question-Answering-in-Reference-Task", SUBA),
    ("Critique-Task", "The step is relevant and useful.\n**Final Judgment**: flag = True."),
    ("Are follow up questions needed here: Yes.", "So the final answer is: No."),
    ("Critique-Task", "flag = True."),
]


def main():
    backend = load_script(SCRIPT)
    retriever = index_corpus(CORPUS)
    trace = explore(QUESTION, backend, retriever)

    print(f"question: {trace.question.text}")
    for node in trace.nodes:
        verdict = "accepted" if node.flag else "rejected"
        print(f"  node {node.ordinal} ({verdict}, parent {node.parent_ordinal})")
        print(f"    sub-question: {node.subq}")
        print(f"    evidence docs: {[e.doc_id for e in node.evidence]}")
        print(f"    sub-answer: {node.suba}")
    print(f"final answer: {trace.final_answer} (closing flag {trace.final_flag})")
    print(f"terminated by: {trace.terminated_by.value}, budget used {trace.budget_used}")
    print()
    print("model calls by tag:")
    for tag, usage in sorted(trace.usage.per_tag.items()):
        print(f"  {tag}: {usage.calls} calls, "
              f"{usage.input_tokens} tokens in, {usage.output_tokens} out")


if __name__ == "__main__":
    main()
