"""Iterative self-exploration for multi-hop question answering.

A language model answers a hard question by decomposing it into follow-up
questions, retrieving evidence for each one, answering against that evidence,
and critiquing each step before it is allowed to stand. Rejected steps are
rolled back and retried; accepted steps extend the reasoning history until
the model commits to a final answer or runs out of budget. Every trace is
then flattened into three training datasets (decomposition, reading,
critique) so the same model can be improved on its own accepted reasoning,
and an expansion step grows the question pool for the next round.

Layout:

- :mod:`selfhop.protocol`    prompt construction and reply parsing
- :mod:`selfhop.backend`     model backends (scripted replay, HTTP) and usage accounting
- :mod:`selfhop.retrieval`   BM25 index over a local corpus, snippet extraction
- :mod:`selfhop.explorer`    the exploration loop itself
- :mod:`selfhop.datasets`    trace -> training record emission, JSONL persistence
- :mod:`selfhop.expansion`   question generation with near-duplicate filtering
- :mod:`selfhop.evaluation`  EM / F1 / containment metrics, pairwise judging, token reports
- :mod:`selfhop.controller`  round orchestration, checkpointing, trainer invocation
- :mod:`selfhop.cli`         ``selfhop`` command-line entry point
"""

from .backend import (
    BackendError,
    HttpBackend,
    HttpBackendConfig,
    HttpStatusError,
    ModelRequest,
    ModelResponse,
    RequestTag,
    ScriptedBackend,
    ScriptMismatchError,
    ScriptUnderrunError,
    TransportError,
    UsageLedger,
    UsageSnapshot,
    load_script,
    load_script_file,
)
from .controller import (
    ConfigError,
    LockError,
    RoundState,
    RoundStatus,
    RunConfig,
    TrainerError,
    check_manifest,
    eval_round,
    init_seed,
    invoke_trainer,
    load_config,
    run_round,
    tokens_round,
)
from .datasets import (
    CritiqueRecord,
    DatasetError,
    DecompRecord,
    ReadRecord,
    RoundStats,
    emit_critique_records,
    emit_decomposition_records,
    emit_read_records,
    read_jsonl,
    read_questions,
    read_traces,
    round_stats,
    write_jsonl,
    write_questions,
    write_traces,
)
from .evaluation import (
    ConsistencyReport,
    JudgeParseError,
    JudgeResult,
    JudgeVerdict,
    MetricReport,
    TokenReport,
    accuracy,
    consistency,
    evaluate_run,
    exact_match,
    f1,
    judge_pair,
    normalize_answer,
    token_report,
)
from .expansion import ExpansionConfig, ExpansionResult, expand, is_duplicate
from .explorer import (
    ExplorationNode,
    ExploreConfig,
    Question,
    TerminatedBy,
    Trace,
    explore,
    explore_batch,
)
from .protocol import (
    FinalAnswer,
    Flag,
    FollowUp,
    Malformed,
    ProtocolError,
    parse_critique,
    parse_decomposition_step,
    parse_generated_question,
    render_critique_prompt,
    render_decomposition_prompt,
    render_expansion_prompt,
    render_judge_prompt,
    render_read_prompt,
)
from .retrieval import (
    CorpusIndex,
    Document,
    Evidence,
    index_corpus,
    load_corpus,
    tokenize,
)

__version__ = "0.1.0"
