"""Round orchestration: config, seeding, stages, resume, trainer, CLI."""

import json
import os
from pathlib import Path

import pytest

from selfhop.cli import main
from selfhop.controller import (
    ConfigError,
    LockError,
    RoundStatus,
    TrainerError,
    TrainSettings,
    check_manifest,
    expand_stage,
    explore_stage,
    export_stage,
    init_seed,
    invoke_trainer,
    load_config,
    round_dir,
    run_round,
    train_stage,
)
from selfhop.datasets import DatasetError, read_questions, read_traces, write_questions
from selfhop.explorer import Question

QUESTION_TEXTS = [
    "Who directed the film about the river?",
    "Which country is the award winner from?",
    "What novel did the city father write?",
]


def write_corpus(path):
    docs = [
        {"id": "d1", "title": "River", "body": "The film about the river was directed by Ana Reyes."},
        {"id": "d2", "title": "Award", "body": "The award winner hails from Chile, a long country."},
        {"id": "d3", "title": "Novel", "body": "The city father wrote the novel Stone Harbor."},
    ]
    path.write_text("\n".join(json.dumps(d) for d in docs) + "\n", encoding="utf-8")


def write_round_questions(run_dir, texts=QUESTION_TEXTS, golds=None):
    directory = round_dir(run_dir, 0)
    directory.mkdir(parents=True, exist_ok=True)
    questions = [
        Question(id=f"q{i}", text=text, gold_answers=tuple(golds or ()))
        for i, text in enumerate(texts)
    ]
    write_questions(questions, directory / "questions.jsonl")
    return questions


def write_script(path, answers):
    """One immediate final answer plus closing critique per question."""
    events = []
    for answer in answers:
        events.append({"response": f"So the final answer is: {answer}."})
        events.append({"response": "flag = True."})
    path.write_text("\n".join(json.dumps(e) for e in events) + "\n", encoding="utf-8")


def write_config(tmp_path, extra=""):
    corpus = tmp_path / "corpus.jsonl"
    write_corpus(corpus)
    script = tmp_path / "backend.script"
    write_script(script, ["Ana Reyes", "Chile", "Stone Harbor"])
    config_path = tmp_path / "run.yaml"
    config_path.write_text(
        f"""
run:
  dir: {tmp_path / 'run'}
backend:
  type: scripted
  script: {script}
retriever:
  corpus: {corpus}
{extra}""",
        encoding="utf-8",
    )
    return config_path


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_load_config_defaults(tmp_path):
    config = load_config(write_config(tmp_path))
    assert config.explore.n_max == 20
    assert config.explore.max_retries_per_parent == 3
    assert config.retriever.k1 == 1.2 and config.retriever.b == 0.75
    assert config.train.alpha == config.train.beta == config.train.gamma == 1.0
    assert config.train.lr == 1e-4
    assert config.train.batch == 64 and config.train.cutoff == 8192
    assert config.expansion.target_count == 0


def test_load_config_rejects_out_of_range(tmp_path):
    path = write_config(tmp_path, extra="explore:\n  n_max: 0\n")
    with pytest.raises(ConfigError, match="n_max"):
        load_config(path)


def test_load_config_rejects_unknown_keys(tmp_path):
    path = write_config(tmp_path, extra="explore:\n  typo_field: 3\n")
    with pytest.raises(ConfigError, match="typo_field"):
        load_config(path)


def test_load_config_requires_run_dir(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("backend: {type: scripted, script: x}\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="run.dir"):
        load_config(path)


def test_scripted_backend_requires_script(tmp_path):
    path = write_config(tmp_path)
    text = path.read_text(encoding="utf-8").replace("script:", "unused:")
    with pytest.raises(ConfigError):
        load_config(_rewrite(path, text))


def _rewrite(path, text):
    out = path.parent / ("re_" + path.name)
    out.write_text(text, encoding="utf-8")
    return out


# ---------------------------------------------------------------------------
# seeding
# ---------------------------------------------------------------------------

def write_source(path, prefix, count):
    questions = [Question(id=f"{prefix}-{i}", text=f"{prefix} question {i}?", source=prefix)
                 for i in range(count)]
    write_questions(questions, path)


def test_init_seed_samples_per_source(tmp_path):
    sources = []
    for name in ("alpha", "beta", "gamma"):
        path = tmp_path / f"{name}.jsonl"
        write_source(path, name, 1000)
        sources.append(path)
    out = tmp_path / "seed.jsonl"
    sampled = init_seed(sources, per_source=800, rng_seed=11, out_path=out)
    assert len(sampled) == 2400
    loaded = read_questions(out)
    assert len(loaded) == 2400
    by_source = {}
    for q in loaded:
        by_source.setdefault(q.source, set()).add(q.id)
    assert {len(ids) for ids in by_source.values()} == {800}  # no replacement


def test_init_seed_deterministic(tmp_path):
    source = tmp_path / "s.jsonl"
    write_source(source, "s", 50)
    a = init_seed([source], per_source=10, rng_seed=5, out_path=tmp_path / "a.jsonl")
    b = init_seed([source], per_source=10, rng_seed=5, out_path=tmp_path / "b.jsonl")
    c = init_seed([source], per_source=10, rng_seed=6, out_path=tmp_path / "c.jsonl")
    assert a == b
    assert a != c


def test_init_seed_shuffles_across_sources(tmp_path):
    sources = []
    for name in ("first", "second"):
        path = tmp_path / f"{name}.jsonl"
        write_source(path, name, 30)
        sources.append(path)
    sampled = init_seed(sources, per_source=30, rng_seed=0, out_path=tmp_path / "o.jsonl")
    order = [q.source for q in sampled]
    assert order != ["first"] * 30 + ["second"] * 30


def test_init_seed_undersized_source_named(tmp_path):
    small = tmp_path / "small.jsonl"
    write_source(small, "small", 3)
    with pytest.raises(DatasetError, match="small.jsonl"):
        init_seed([small], per_source=10, rng_seed=0, out_path=tmp_path / "o.jsonl")


def test_init_seed_zero_per_source(tmp_path):
    source = tmp_path / "s.jsonl"
    write_source(source, "s", 5)
    assert init_seed([source], per_source=0, rng_seed=0, out_path=tmp_path / "o.jsonl") == []


# ---------------------------------------------------------------------------
# trainer invocation
# ---------------------------------------------------------------------------

TRAINER_HELPER = """\
import sys, pathlib
args = sys.argv[1:]
out = args[args.index("--out") + 1]
pathlib.Path(out).mkdir(parents=True, exist_ok=True)
pathlib.Path(out, "args.txt").write_text(" ".join(args), encoding="utf-8")
"""


def trainer_command(tmp_path):
    helper = tmp_path / "echo_trainer.py"
    helper.write_text(TRAINER_HELPER, encoding="utf-8")
    return (
        f"python3 {helper} --dd {{dd}} --dr {{dr}} --dc {{dc}} "
        f"--alpha {{alpha}} --beta {{beta}} --gamma {{gamma}} "
        f"--lr {{lr}} --batch {{batch}} --cutoff {{cutoff}} --out {{out}}"
    )


def test_invoke_trainer_default_flags(tmp_path):
    settings = TrainSettings(command=trainer_command(tmp_path))
    out_dir = tmp_path / "model"
    model_id = invoke_trainer(settings, "dd.jsonl", "dr.jsonl", "dc.jsonl", out_dir)
    assert model_id == str(out_dir)
    args = (out_dir / "args.txt").read_text(encoding="utf-8")
    # equal task weights render compactly
    assert "--alpha 1 --beta 1 --gamma 1" in args
    assert "--lr 0.0001" in args
    assert "--batch 64 --cutoff 8192" in args


def test_invoke_trainer_custom_weights(tmp_path):
    settings = TrainSettings(command=trainer_command(tmp_path), alpha=0.5, beta=2.0, gamma=0.25)
    out_dir = tmp_path / "model"
    invoke_trainer(settings, "a", "b", "c", out_dir)
    args = (out_dir / "args.txt").read_text(encoding="utf-8")
    assert "--alpha 0.5 --beta 2 --gamma 0.25" in args


def test_invoke_trainer_failure_raises_with_output(tmp_path):
    settings = TrainSettings(
        command="python3 -c \"import sys; print('dying'); sys.exit(3)\""
    )
    with pytest.raises(TrainerError, match="exited with 3"):
        invoke_trainer(settings, "a", "b", "c", tmp_path)


def test_invoke_trainer_bad_template(tmp_path):
    settings = TrainSettings(command="train --nope {unknown_slot}")
    with pytest.raises(TrainerError, match="template"):
        invoke_trainer(settings, "a", "b", "c", tmp_path)


# ---------------------------------------------------------------------------
# stages and resume
# ---------------------------------------------------------------------------

def test_full_round_produces_manifest(tmp_path):
    config = load_config(write_config(tmp_path))
    write_round_questions(config.run_dir)
    state = run_round(config, 0)
    assert state.status is RoundStatus.EXPANDED
    assert check_manifest(round_dir(config.run_dir, 0)) == []
    traces = read_traces(state.traces_path)
    assert [t.final_answer for t in traces] == ["Ana Reyes", "Chile", "Stone Harbor"]


def test_stage_order_enforced(tmp_path):
    config = load_config(write_config(tmp_path))
    write_round_questions(config.run_dir)
    with pytest.raises(DatasetError, match="not been explored"):
        export_stage(config, 0)
    explore_stage(config, 0)
    with pytest.raises(DatasetError, match="not been exported"):
        expand_stage(config, 0)


def test_resume_skips_completed_stages(tmp_path):
    config = load_config(write_config(tmp_path))
    write_round_questions(config.run_dir)

    state = explore_stage(config, 0)
    traces_path = Path(state.traces_path)
    first_mtime = traces_path.stat().st_mtime_ns

    # a second explore (the crash-resume path) must not redo the work; the
    # scripted backend is already drained, so a re-run would also derail
    state = explore_stage(config, 0)
    assert state.status is RoundStatus.EXPLORED
    assert traces_path.stat().st_mtime_ns == first_mtime

    export_stage(config, 0)
    dd_mtime = (round_dir(config.run_dir, 0) / "dd.jsonl").stat().st_mtime_ns
    export_stage(config, 0)
    assert (round_dir(config.run_dir, 0) / "dd.jsonl").stat().st_mtime_ns == dd_mtime

    final = run_round(config, 0)  # finishes train (disabled) and expand
    assert final.status is RoundStatus.EXPANDED
    assert traces_path.stat().st_mtime_ns == first_mtime


def test_rerun_of_completed_round_is_a_no_op(tmp_path):
    config = load_config(write_config(tmp_path))
    write_round_questions(config.run_dir)
    run_round(config, 0)
    before = {
        p.name: p.read_bytes()
        for p in round_dir(config.run_dir, 0).iterdir() if p.is_file()
    }
    run_round(config, 0)
    after = {
        p.name: p.read_bytes()
        for p in round_dir(config.run_dir, 0).iterdir() if p.is_file()
    }
    assert before == after


def test_train_stage_runs_trainer_and_records_model(tmp_path):
    command = trainer_command(tmp_path).replace("\\", "/")
    config = load_config(write_config(tmp_path, extra=f"train:\n  command: {command}\n"))
    write_round_questions(config.run_dir)
    explore_stage(config, 0)
    export_stage(config, 0)
    state = train_stage(config, 0)
    assert state.status is RoundStatus.TRAINED
    assert state.model_id.endswith("model")
    args = (round_dir(config.run_dir, 0) / "model" / "args.txt").read_text(encoding="utf-8")
    assert "--dd" in args and "dd.jsonl" in args


def test_failed_trainer_freezes_status(tmp_path):
    config = load_config(write_config(
        tmp_path,
        extra="train:\n  command: \"python3 -c 'import sys; sys.exit(1)'\"\n",
    ))
    write_round_questions(config.run_dir)
    explore_stage(config, 0)
    export_stage(config, 0)
    with pytest.raises(TrainerError):
        train_stage(config, 0)
    state = explore_stage(config, 0)  # reads back the persisted state
    assert state.status is RoundStatus.EXPORTED


def test_expansion_writes_next_round_questions(tmp_path):
    corpus = tmp_path / "corpus.jsonl"
    write_corpus(corpus)
    script = tmp_path / "backend.script"
    texts = [f"Seed question number {i} on topic {i}?" for i in range(8)]
    write_script(script, [f"answer {i}" for i in range(8)])
    expansion_script = tmp_path / "expansion.script"
    expansion_script.write_text(
        json.dumps({"response": "Question: Which bridge connects the two capitals?"}) + "\n"
        + json.dumps({"response": "Question: Who taught the painter of the mural?"}) + "\n",
        encoding="utf-8",
    )
    config_path = tmp_path / "run.yaml"
    config_path.write_text(
        f"""
run:
  dir: {tmp_path / 'run'}
backend:
  type: scripted
  script: {script}
retriever:
  corpus: {corpus}
expansion:
  target_count: 2
  script: {expansion_script}
""",
        encoding="utf-8",
    )
    config = load_config(config_path)
    write_round_questions(config.run_dir, texts=texts)
    state = run_round(config, 0)
    next_questions = read_questions(state.next_questions_path)
    assert [q.text for q in next_questions] == [
        "Which bridge connects the two capitals?",
        "Who taught the painter of the mural?",
    ]
    assert all(q.source == "expansion_round_0" for q in next_questions)
    assert Path(state.next_questions_path) == round_dir(config.run_dir, 1) / "questions.jsonl"


def test_lock_excludes_concurrent_round(tmp_path):
    config = load_config(write_config(tmp_path))
    write_round_questions(config.run_dir)
    lock = Path(config.run_dir) / ".lock"
    lock.parent.mkdir(parents=True, exist_ok=True)
    lock.write_text("12345\n", encoding="utf-8")
    with pytest.raises(LockError, match="locked"):
        run_round(config, 0)
    lock.unlink()
    assert run_round(config, 0).status is RoundStatus.EXPANDED
    assert not lock.exists()  # released afterwards


def test_check_manifest_reports_missing(tmp_path):
    config = load_config(write_config(tmp_path))
    write_round_questions(config.run_dir)
    run_round(config, 0)
    directory = round_dir(config.run_dir, 0)
    (directory / "dr.jsonl").unlink()
    assert check_manifest(directory) == ["dr.jsonl"]


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def test_cli_run_round_and_eval(tmp_path, capsys):
    config_path = write_config(tmp_path)
    config = load_config(config_path)
    write_round_questions(config.run_dir, golds=["Ana Reyes"])

    assert main(["run-round", "--config", str(config_path), "--round", "0"]) == 0
    out = capsys.readouterr().out
    assert "round 0: expanded" in out

    assert main(["eval", "--config", str(config_path), "--round", "0"]) == 0
    out = capsys.readouterr().out
    assert "questions: 3" in out
    assert (round_dir(config.run_dir, 0) / "metrics.txt").exists()

    assert main(["report-tokens", "--config", str(config_path), "--round", "0"]) == 0
    out = capsys.readouterr().out
    assert "mean model calls" in out
    assert (round_dir(config.run_dir, 0) / "tokens.json").exists()


def test_cli_stagewise_round(tmp_path, capsys):
    config_path = write_config(tmp_path)
    config = load_config(config_path)
    write_round_questions(config.run_dir)
    for command in ("explore", "export-train", "train", "expand"):
        assert main([command, "--config", str(config_path), "--round", "0"]) == 0
    assert check_manifest(round_dir(config.run_dir, 0)) == []


def test_cli_init_seed(tmp_path, capsys):
    source = tmp_path / "src.jsonl"
    write_source(source, "src", 20)
    out = tmp_path / "seed.jsonl"
    code = main([
        "init-seed", "--source", str(source), "--per-source", "5",
        "--seed", "1", "--out", str(out),
    ])
    assert code == 0
    assert len(read_questions(out)) == 5


def test_cli_exit_codes(tmp_path):
    # 3: config error
    bad_config = tmp_path / "bad.yaml"
    bad_config.write_text("run: {dir: x}\nbackend: {type: nonsense}\n", encoding="utf-8")
    assert main(["explore", "--config", str(bad_config), "--round", "0"]) == 3

    # 4: input error (no questions file for the round)
    config_path = write_config(tmp_path)
    assert main(["explore", "--config", str(config_path), "--round", "0"]) == 4

    # 4: missing config file entirely
    assert main(["explore", "--config", str(tmp_path / "absent.yaml"), "--round", "0"]) == 4

    # 2: usage error from argparse
    with pytest.raises(SystemExit) as exc_info:
        main(["explore"])  # missing required flags
    assert exc_info.value.code == 2

    # 7: lock held
    config = load_config(config_path)
    write_round_questions(config.run_dir)
    lock = Path(config.run_dir) / ".lock"
    lock.write_text("1\n", encoding="utf-8")
    assert main(["run-round", "--config", str(config_path), "--round", "0"]) == 7
    lock.unlink()

    # 6: trainer failure
    failing = write_config(
        tmp_path, extra="train:\n  command: \"python3 -c 'import sys; sys.exit(9)'\"\n"
    )
    failing_config = load_config(failing)
    # same run dir already has questions; run the stages up to train
    assert main(["explore", "--config", str(failing), "--round", "0"]) in (0, 5)
    assert main(["export-train", "--config", str(failing), "--round", "0"]) == 0
    assert main(["train", "--config", str(failing), "--round", "0"]) == 6


def test_cli_backend_exit_code(tmp_path):
    # expansion underrun surfaces as a backend failure (exit 5)
    corpus = tmp_path / "corpus.jsonl"
    write_corpus(corpus)
    script = tmp_path / "backend.script"
    write_script(script, [f"a{i}" for i in range(8)])
    empty_script = tmp_path / "expansion.script"
    empty_script.write_text("", encoding="utf-8")
    config_path = tmp_path / "run.yaml"
    config_path.write_text(
        f"""
run:
  dir: {tmp_path / 'run'}
backend:
  type: scripted
  script: {script}
retriever:
  corpus: {corpus}
expansion:
  target_count: 1
  script: {empty_script}
""",
        encoding="utf-8",
    )
    config = load_config(config_path)
    write_round_questions(config.run_dir, texts=[f"Question number {i} here?" for i in range(8)])
    assert main(["explore", "--config", str(config_path), "--round", "0"]) == 0
    assert main(["export-train", "--config", str(config_path), "--round", "0"]) == 0
    assert main(["expand", "--config", str(config_path), "--round", "0"]) == 5
