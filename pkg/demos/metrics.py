"""Answer normalization and the three QA scores, case by case.

The containment metric (Acc) is deliberately looser than exact match: a
verbose but correct answer scores 1 on Acc and 0 on EM, with F1 in between.

    python3 demos/metrics.py
"""

from selfhop import accuracy, consistency, exact_match, f1, normalize_answer

CASES = [
    ("Paris", ["Paris"]),
    ("The Paris.", ["paris"]),
    ("born in 1952", ["1952"]),
    ("December 6, 1952", ["6 December 1952"]),
    ("a very long sentence containing the answer deep inside", ["answer deep inside"]),
    ("wrong entirely", ["right answer"]),
]


def main():
    print(f"{'prediction':45s} {'golds':25s}  EM  Acc    F1")
    for prediction, golds in CASES:
        em = exact_match(prediction, golds)
        acc = accuracy(prediction, golds)
        score = f1(prediction, golds)
        print(f"{prediction!r:45s} {str(golds):25s}  {em}   {acc}   {score:.4f}")

    print()
    print("normalization steps:")
    for text in ("The N.F.L.!", "An  Answer,  Spaced", "a the an of"):
        print(f"  {text!r} -> {normalize_answer(text)!r}")

    print()
    # two runs of the same model agreeing on 223 of 300 binary self-critiques
    flags_a = [1] * 223 + [0] * 77
    flags_b = [1] * 223 + [1] * 77
    report = consistency(flags_a, flags_b)
    print(f"consistency: {report.agreements}/{report.n} = {report.percent:.2f}%")


if __name__ == "__main__":
    main()
