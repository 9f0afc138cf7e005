"""One complete round in a temp directory: explore, export, (skip) train, expand.

Everything is file-driven, exactly as the CLI would run it: a YAML config, a
question file, a scripted backend, and a round directory that fills up stage
by stage. Rerunning a stage is a no-op, which is what makes crash recovery a
plain rerun.

    python3 demos/full_round.py
"""

import json
import tempfile
from pathlib import Path

from selfhop import load_config, run_round
from selfhop.controller import check_manifest, eval_round, round_dir

QUESTIONS = [
    {"id": "q0", "text": "Who directed the film about the river?", "gold_answers": ["Ana Reyes"]},
    {"id": "q1", "text": "Which country is the award winner from?", "gold_answers": ["Chile"]},
    {"id": "q2", "text": "What novel did the city father write?", "gold_answers": ["Stone Harbor"]},
]

CORPUS = [
    {"id": "d1", "title": "River", "body": "The film about the river was directed by Ana Reyes."},
    {"id": "d2", "title": "Award", "body": "The award winner hails from Chile."},
    {"id": "d3", "title": "Novel", "body": "The city father wrote the novel Stone Harbor."},
]


def write_jsonl(path, rows):
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")


def main():
    with tempfile.TemporaryDirectory() as raw:
        base = Path(raw)
        write_jsonl(base / "corpus.jsonl", CORPUS)

        # one immediate final answer plus closing critique per question
        events = []
        for answer in ("Ana Reyes", "Chile", "Stone Harbor"):
            events.append({"response": f"So the final answer is: {answer}."})
            events.append({"response": "flag = True."})
        write_jsonl(base / "backend.script", events)

        (base / "run.yaml").write_text(
            f"run:\n  dir: {base / 'run'}\n"
            f"backend:\n  type: scripted\n  script: {base / 'backend.script'}\n"
            f"retriever:\n  corpus: {base / 'corpus.jsonl'}\n",
            encoding="utf-8",
        )

        config = load_config(base / "run.yaml")
        directory = round_dir(config.run_dir, 0)
        directory.mkdir(parents=True)
        write_jsonl(directory / "questions.jsonl", QUESTIONS)

        state = run_round(config, 0)
        print(f"round 0 finished with status: {state.status.value}")
        missing = check_manifest(directory)
        print(f"manifest complete: {not missing}")
        for name in sorted(p.name for p in directory.iterdir()):
            print(f"  {name}")

        eval_round(config, 0)
        print()
        print((directory / "metrics.txt").read_text(encoding="utf-8"))


if __name__ == "__main__":
    main()
