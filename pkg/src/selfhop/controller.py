"""Round orchestration: seed, explore, export, train, expand, evaluate.

A run lives in one directory with one subdirectory per round::

    run_dir/
      round_0/
        questions.jsonl      input questions for the round
        traces.jsonl         exploration traces
        dd.jsonl             decomposition training records
        dr.jsonl             read training records
        dc.jsonl             critique training records
        stats.json           round statistics
        round_state.json     checkpoint state
        model/               trainer output (when training is enabled)
      round_1/
        questions.jsonl      written by round 0's expansion stage
        ...

Each stage persists its outputs and then advances ``round_state.json``, so a
crashed round resumes at the last completed stage; completed stages are never
re-run. A lock file serializes rounds per run directory.

Training is delegated to an external command (any language) through a
template with named placeholders; see :func:`invoke_trainer`.
"""

from __future__ import annotations

import json
import logging
import os
import random
import shlex
import subprocess
from contextlib import contextmanager
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import yaml

from .backend import HttpBackend, HttpBackendConfig, load_script_file
from .datasets import (
    DatasetError,
    emit_critique_records,
    emit_decomposition_records,
    emit_read_records,
    read_questions,
    read_traces,
    round_stats,
    write_jsonl,
    write_questions,
    write_traces,
)
from .evaluation import evaluate_run, token_report, write_metric_report
from .expansion import ExpansionConfig, expand
from .explorer import ExploreConfig, explore_batch
from .retrieval import index_corpus, load_corpus

logger = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "TrainerError",
    "LockError",
    "BackendSettings",
    "RetrieverSettings",
    "ExploreSettings",
    "TrainSettings",
    "ExpansionSettings",
    "RunConfig",
    "RoundStatus",
    "RoundState",
    "load_config",
    "init_seed",
    "invoke_trainer",
    "explore_stage",
    "export_stage",
    "train_stage",
    "expand_stage",
    "run_round",
    "eval_round",
    "tokens_round",
    "check_manifest",
    "round_dir",
    "MANIFEST",
]

MANIFEST = (
    "questions.jsonl",
    "traces.jsonl",
    "dd.jsonl",
    "dr.jsonl",
    "dc.jsonl",
    "stats.json",
    "round_state.json",
)

TRAINER_PLACEHOLDERS = ("dd", "dr", "dc", "alpha", "beta", "gamma", "lr", "batch", "cutoff", "out")


class ConfigError(ValueError):
    """The run configuration is missing fields or out of range."""


class TrainerError(RuntimeError):
    """The external trainer command failed."""


class LockError(RuntimeError):
    """Another round already holds the run directory."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BackendSettings:
    type: str = "scripted"  # "scripted" or "http"
    script: str = ""  # scripted: JSONL replay file for exploration
    endpoint: str = ""  # http: base URL of an OpenAI-compatible server
    model: str = ""
    api_key_env: str = "OPENAI_API_KEY"
    timeout_s: float = 120.0


@dataclass(frozen=True)
class RetrieverSettings:
    corpus: str = ""
    k1: float = 1.2
    b: float = 0.75
    k: int = 5
    refinement: bool = False


@dataclass(frozen=True)
class ExploreSettings:
    n_max: int = 20
    max_retries_per_parent: int = 3
    parallelism: int = 1


@dataclass(frozen=True)
class TrainSettings:
    command: str = ""  # empty disables the training stage
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    lr: float = 1e-4
    batch: int = 64
    cutoff: int = 8192


@dataclass(frozen=True)
class ExpansionSettings:
    target_count: int = 0  # 0 disables generation; the stage still completes
    max_attempts_factor: float = 5.0
    dedup_jaccard_threshold: float = 0.8
    script: str = ""  # scripted: separate replay file for the expansion stage
    task_name: str = "multi-hop"
    rng_seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    run_dir: str
    backend: BackendSettings = BackendSettings()
    retriever: RetrieverSettings = RetrieverSettings()
    explore: ExploreSettings = ExploreSettings()
    train: TrainSettings = TrainSettings()
    expansion: ExpansionSettings = ExpansionSettings()


def _section(data: dict, name: str, cls, path):
    raw = data.get(name, {})
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: section {name!r} must be a mapping")
    known = {f for f in cls.__dataclass_fields__}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{path}: unknown keys in [{name}]: {sorted(unknown)}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"{path}: bad [{name}] section: {exc}") from exc


def load_config(path) -> RunConfig:
    """Parse and validate a YAML run configuration."""
    with open(path, encoding="utf-8") as handle:
        data = yaml.safe_load(handle) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")

    run = data.get("run", {})
    run_dir = run.get("dir", "") if isinstance(run, dict) else ""
    if not run_dir:
        raise ConfigError(f"{path}: run.dir is required")

    config = RunConfig(
        run_dir=str(run_dir),
        backend=_section(data, "backend", BackendSettings, path),
        retriever=_section(data, "retriever", RetrieverSettings, path),
        explore=_section(data, "explore", ExploreSettings, path),
        train=_section(data, "train", TrainSettings, path),
        expansion=_section(data, "expansion", ExpansionSettings, path),
    )
    _validate(config, path)
    return config


def _validate(config: RunConfig, path) -> None:
    problems = []
    if config.backend.type not in ("scripted", "http"):
        problems.append("backend.type must be 'scripted' or 'http'")
    if config.backend.type == "scripted" and not config.backend.script:
        problems.append("backend.script is required for a scripted backend")
    if config.backend.type == "http" and not config.backend.endpoint:
        problems.append("backend.endpoint is required for an http backend")
    if config.retriever.k1 <= 0:
        problems.append("retriever.k1 must be positive")
    if not 0 <= config.retriever.b <= 1:
        problems.append("retriever.b must lie in [0, 1]")
    if config.retriever.k < 1:
        problems.append("retriever.k must be >= 1")
    if config.explore.n_max < 1:
        problems.append("explore.n_max must be >= 1")
    if config.explore.max_retries_per_parent < 1:
        problems.append("explore.max_retries_per_parent must be >= 1")
    if config.explore.parallelism < 1:
        problems.append("explore.parallelism must be >= 1")
    for name in ("alpha", "beta", "gamma"):
        if getattr(config.train, name) < 0:
            problems.append(f"train.{name} must be non-negative")
    if config.train.lr <= 0:
        problems.append("train.lr must be positive")
    if config.train.batch < 1 or config.train.cutoff < 1:
        problems.append("train.batch and train.cutoff must be >= 1")
    if config.expansion.target_count < 0:
        problems.append("expansion.target_count must be non-negative")
    if config.expansion.max_attempts_factor <= 0:
        problems.append("expansion.max_attempts_factor must be positive")
    if not 0 < config.expansion.dedup_jaccard_threshold <= 1:
        problems.append("expansion.dedup_jaccard_threshold must lie in (0, 1]")
    if problems:
        raise ConfigError(f"{path}: " + "; ".join(problems))


def build_backend(settings: BackendSettings, script_override: str = ""):
    if settings.type == "scripted":
        script = script_override or settings.script
        if not script:
            raise ConfigError("scripted backend requires a script path")
        return load_script_file(script)
    return HttpBackend(HttpBackendConfig(
        endpoint=settings.endpoint,
        model=settings.model,
        api_key_env=settings.api_key_env,
        timeout_s=settings.timeout_s,
    ))


# ---------------------------------------------------------------------------
# round state
# ---------------------------------------------------------------------------

class RoundStatus(str, Enum):
    EXPLORED = "explored"
    EXPORTED = "exported"
    TRAINED = "trained"
    EXPANDED = "expanded"


_STATUS_ORDER = [
    RoundStatus.EXPLORED,
    RoundStatus.EXPORTED,
    RoundStatus.TRAINED,
    RoundStatus.EXPANDED,
]


def _reached(status: RoundStatus | None, milestone: RoundStatus) -> bool:
    if status is None:
        return False
    return _STATUS_ORDER.index(status) >= _STATUS_ORDER.index(milestone)


@dataclass(frozen=True)
class RoundState:
    round_index: int
    model_id: str
    status: RoundStatus
    questions_path: str = ""
    traces_path: str = ""
    dd_path: str = ""
    dr_path: str = ""
    dc_path: str = ""
    stats_path: str = ""
    metrics_path: str = ""
    next_questions_path: str = ""

    def advanced(self, status: RoundStatus, **changes) -> "RoundState":
        if _STATUS_ORDER.index(status) < _STATUS_ORDER.index(self.status):
            raise ValueError(
                f"round status may only advance ({self.status.value} -> {status.value})"
            )
        return replace(self, status=status, **changes)

    def save(self, path) -> None:
        body = {
            "round_index": self.round_index,
            "model_id": self.model_id,
            "status": self.status.value,
            "questions_path": self.questions_path,
            "traces_path": self.traces_path,
            "dd_path": self.dd_path,
            "dr_path": self.dr_path,
            "dc_path": self.dc_path,
            "stats_path": self.stats_path,
            "metrics_path": self.metrics_path,
            "next_questions_path": self.next_questions_path,
        }
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(body, handle, indent=2)
            handle.write("\n")

    @classmethod
    def load(cls, path) -> "RoundState":
        with open(path, encoding="utf-8") as handle:
            body = json.load(handle)
        return cls(
            round_index=body["round_index"],
            model_id=body["model_id"],
            status=RoundStatus(body["status"]),
            questions_path=body.get("questions_path", ""),
            traces_path=body.get("traces_path", ""),
            dd_path=body.get("dd_path", ""),
            dr_path=body.get("dr_path", ""),
            dc_path=body.get("dc_path", ""),
            stats_path=body.get("stats_path", ""),
            metrics_path=body.get("metrics_path", ""),
            next_questions_path=body.get("next_questions_path", ""),
        )


def round_dir(run_dir, round_index: int) -> Path:
    return Path(run_dir) / f"round_{round_index}"


def _state_path(directory: Path) -> Path:
    return directory / "round_state.json"


def _load_state(directory: Path) -> RoundState | None:
    path = _state_path(directory)
    if not path.exists():
        return None
    return RoundState.load(path)


@contextmanager
def _run_lock(run_dir):
    """One round at a time per run directory; crash-stale locks are reported."""
    directory = Path(run_dir)
    directory.mkdir(parents=True, exist_ok=True)
    lock_path = directory / ".lock"
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockError(
            f"run directory is locked by another round: {lock_path} "
            f"(remove the file if the owner is dead)"
        ) from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        try:
            os.unlink(lock_path)
        except FileNotFoundError:
            pass


# ---------------------------------------------------------------------------
# seeding
# ---------------------------------------------------------------------------

def init_seed(source_paths, per_source: int, rng_seed: int, out_path) -> list:
    """Sample ``per_source`` questions from each source file, shuffle, write.

    Sampling is uniform without replacement per source; the shuffle is
    deterministic for a given seed. A source that cannot cover its quota
    fails by name.
    """
    if per_source < 0:
        raise ValueError("per_source must be non-negative")
    rng = random.Random(rng_seed)
    combined = []
    for source in source_paths:
        questions = read_questions(source)
        if len(questions) < per_source:
            raise DatasetError(
                f"{source}: only {len(questions)} questions, need {per_source}"
            )
        combined.extend(rng.sample(questions, per_source))
    rng.shuffle(combined)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    write_questions(combined, out_path)
    logger.info("seeded %d questions into %s", len(combined), out_path)
    return combined


# ---------------------------------------------------------------------------
# trainer invocation
# ---------------------------------------------------------------------------

def invoke_trainer(settings: TrainSettings, dd_path, dr_path, dc_path, out_dir) -> str:
    """Run the external trainer command and return the new model identifier.

    The command template uses named placeholders
    ``{dd} {dr} {dc} {alpha} {beta} {gamma} {lr} {batch} {cutoff} {out}``
    (literal braces must be doubled). Float values render compactly, so the
    default weights appear as ``1`` and the default lr as ``0.0001``.
    """
    if not settings.command:
        raise TrainerError("no trainer command configured")

    def compact(value: float) -> str:
        return f"{value:g}"

    try:
        command = settings.command.format(
            dd=str(dd_path), dr=str(dr_path), dc=str(dc_path),
            alpha=compact(settings.alpha), beta=compact(settings.beta),
            gamma=compact(settings.gamma), lr=compact(settings.lr),
            batch=str(settings.batch), cutoff=str(settings.cutoff),
            out=str(out_dir),
        )
    except (KeyError, IndexError) as exc:
        raise TrainerError(f"bad trainer command template: {exc}") from exc

    argv = shlex.split(command)
    logger.info("invoking trainer: %s", command)
    try:
        proc = subprocess.run(argv, capture_output=True, text=True)
    except OSError as exc:
        raise TrainerError(f"trainer failed to start: {exc}") from exc
    if proc.returncode != 0:
        raise TrainerError(
            f"trainer exited with {proc.returncode}\n"
            f"stdout:\n{proc.stdout[-2000:]}\nstderr:\n{proc.stderr[-2000:]}"
        )
    return str(out_dir)


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def explore_stage(config: RunConfig, round_index: int) -> RoundState:
    directory = round_dir(config.run_dir, round_index)
    state = _load_state(directory)
    if state is not None and _reached(state.status, RoundStatus.EXPLORED):
        logger.info("round %d already explored, skipping", round_index)
        return state

    questions_path = directory / "questions.jsonl"
    if not questions_path.exists():
        raise DatasetError(f"no question file for round {round_index}: {questions_path}")
    questions = read_questions(questions_path)

    backend = build_backend(config.backend)
    corpus = load_corpus(config.retriever.corpus)
    index = index_corpus(corpus, k1=config.retriever.k1, b=config.retriever.b)
    explore_config = ExploreConfig(
        n_max=config.explore.n_max,
        max_retries_per_parent=config.explore.max_retries_per_parent,
        k_snippets=config.retriever.k,
        refinement_enabled=config.retriever.refinement,
    )
    traces = explore_batch(
        questions, backend, index,
        config=explore_config, parallelism=config.explore.parallelism,
    )
    traces_path = directory / "traces.jsonl"
    write_traces(traces, traces_path)

    state = RoundState(
        round_index=round_index,
        model_id=config.backend.model or config.backend.type,
        status=RoundStatus.EXPLORED,
        questions_path=str(questions_path),
        traces_path=str(traces_path),
    )
    state.save(_state_path(directory))
    logger.info("round %d: explored %d questions", round_index, len(traces))
    return state


def export_stage(config: RunConfig, round_index: int) -> RoundState:
    directory = round_dir(config.run_dir, round_index)
    state = _load_state(directory)
    if state is None or not _reached(state.status, RoundStatus.EXPLORED):
        raise DatasetError(f"round {round_index} has not been explored yet")
    if _reached(state.status, RoundStatus.EXPORTED):
        logger.info("round %d already exported, skipping", round_index)
        return state

    traces = read_traces(state.traces_path)
    dd, dr, dc = [], [], []
    for trace in traces:
        dd.extend(emit_decomposition_records(trace))
        dr.extend(emit_read_records(trace))
        dc.extend(emit_critique_records(trace))
    paths = {name: directory / f"{name}.jsonl" for name in ("dd", "dr", "dc")}
    write_jsonl(dd, paths["dd"])
    write_jsonl(dr, paths["dr"])
    write_jsonl(dc, paths["dc"])

    stats = round_stats(traces, dd, dr, dc, round_index=round_index)
    stats_path = directory / "stats.json"
    with open(stats_path, "w", encoding="utf-8") as handle:
        json.dump(stats.to_dict(), handle, indent=2)
        handle.write("\n")

    state = state.advanced(
        RoundStatus.EXPORTED,
        dd_path=str(paths["dd"]),
        dr_path=str(paths["dr"]),
        dc_path=str(paths["dc"]),
        stats_path=str(stats_path),
    )
    state.save(_state_path(directory))
    logger.info("round %d: exported %d/%d/%d records", round_index, len(dd), len(dr), len(dc))
    return state


def train_stage(config: RunConfig, round_index: int) -> RoundState:
    directory = round_dir(config.run_dir, round_index)
    state = _load_state(directory)
    if state is None or not _reached(state.status, RoundStatus.EXPORTED):
        raise DatasetError(f"round {round_index} has not been exported yet")
    if _reached(state.status, RoundStatus.TRAINED):
        logger.info("round %d already trained, skipping", round_index)
        return state

    if not config.train.command:
        logger.info("round %d: trainer disabled, skipping", round_index)
        return state

    out_dir = directory / "model"
    out_dir.mkdir(parents=True, exist_ok=True)
    model_id = invoke_trainer(
        config.train, state.dd_path, state.dr_path, state.dc_path, out_dir
    )
    state = state.advanced(RoundStatus.TRAINED, model_id=model_id)
    state.save(_state_path(directory))
    logger.info("round %d: trained model %s", round_index, model_id)
    return state


def expand_stage(config: RunConfig, round_index: int) -> RoundState:
    directory = round_dir(config.run_dir, round_index)
    state = _load_state(directory)
    if state is None or not _reached(state.status, RoundStatus.EXPORTED):
        raise DatasetError(f"round {round_index} has not been exported yet")
    if _reached(state.status, RoundStatus.EXPANDED):
        logger.info("round %d already expanded, skipping", round_index)
        return state

    next_questions_path = ""
    if config.expansion.target_count > 0:
        seeds = read_questions(state.questions_path)
        backend = build_backend(config.backend, script_override=config.expansion.script)
        result = expand(
            seeds,
            backend,
            ExpansionConfig(
                target_count=config.expansion.target_count,
                max_attempts_factor=config.expansion.max_attempts_factor,
                dedup_jaccard_threshold=config.expansion.dedup_jaccard_threshold,
            ),
            task_name=config.expansion.task_name,
            source_tag=f"expansion_round_{round_index}",
            rng_seed=config.expansion.rng_seed,
        )
        next_directory = round_dir(config.run_dir, round_index + 1)
        next_directory.mkdir(parents=True, exist_ok=True)
        out_path = next_directory / "questions.jsonl"
        write_questions(result.questions, out_path)
        next_questions_path = str(out_path)
        logger.info(
            "round %d: expanded %d questions into %s%s",
            round_index, len(result.questions), out_path,
            " (attempt budget exhausted)" if result.exhausted else "",
        )
    else:
        logger.info("round %d: expansion disabled (target_count = 0)", round_index)

    state = state.advanced(RoundStatus.EXPANDED, next_questions_path=next_questions_path)
    state.save(_state_path(directory))
    return state


def run_round(config: RunConfig, round_index: int) -> RoundState:
    """Run (or resume) one full round under the run-directory lock."""
    with _run_lock(config.run_dir):
        explore_stage(config, round_index)
        export_stage(config, round_index)
        train_stage(config, round_index)
        return expand_stage(config, round_index)


def check_manifest(directory) -> list[str]:
    """Names from the round manifest that are missing in ``directory``."""
    directory = Path(directory)
    return [name for name in MANIFEST if not (directory / name).exists()]


# ---------------------------------------------------------------------------
# evaluation entry points
# ---------------------------------------------------------------------------

def _golds_from_questions(questions) -> dict:
    return {q.id: list(q.gold_answers) for q in questions if q.gold_answers}


def eval_round(config: RunConfig, round_index: int, golds_path=None):
    """Score a round's traces; golds come from a file or the question set."""
    directory = round_dir(config.run_dir, round_index)
    traces = read_traces(directory / "traces.jsonl")
    if golds_path:
        golds = _golds_from_questions(read_questions(golds_path))
    else:
        golds = _golds_from_questions(read_questions(directory / "questions.jsonl"))
    report = evaluate_run(traces, golds)
    metrics_path = directory / "metrics.txt"
    rows_path = directory / "metric_rows.jsonl"
    write_metric_report(report, metrics_path, rows_path)
    state = _load_state(directory)
    if state is not None:
        state = replace(state, metrics_path=str(metrics_path))
        state.save(_state_path(directory))
    return report


def tokens_round(config: RunConfig, round_index: int):
    """Aggregate per-question token usage for a round."""
    directory = round_dir(config.run_dir, round_index)
    traces = read_traces(directory / "traces.jsonl")
    report = token_report(traces)
    with open(directory / "tokens.json", "w", encoding="utf-8") as handle:
        json.dump(report.to_dict(), handle, indent=2)
        handle.write("\n")
    return report
