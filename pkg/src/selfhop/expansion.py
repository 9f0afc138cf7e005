"""Question-set growth by few-shot generation with near-duplicate rejection.

Each attempt samples eight distinct seed questions (uniformly, without
replacement, fresh per attempt), asks the model for one new multi-hop
question in their style, and keeps it only if it parses and is not a
near-duplicate of any seed or previously accepted question. Generation is
sampled (temperature 1.0) so repeated prompts can produce different
questions, but the seed sampling itself is driven by a caller-supplied RNG
seed, making a scripted run fully reproducible.

Duplicates are either normalized-exact matches or high Jaccard overlap
(default >= 0.8) between article-free token sets.
"""

from __future__ import annotations

import logging
import random
import string
from dataclasses import dataclass

from . import protocol
from .backend import ModelRequest, RequestTag
from .explorer import Question
from .protocol import Malformed

logger = logging.getLogger(__name__)

__all__ = [
    "ExpansionConfig",
    "ExpansionResult",
    "expand",
    "is_duplicate",
    "STOP_WORDS",
]

# articles only: the worked dedup examples treat every other word as signal
STOP_WORDS = frozenset({"a", "an", "the"})

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def _normalize(text: str) -> str:
    return " ".join(text.lower().translate(_PUNCT_TABLE).split())


def _token_set(text: str) -> set[str]:
    return set(_normalize(text).split()) - STOP_WORDS


def _jaccard(a: set[str], b: set[str]) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def is_duplicate(candidate: str, pool, threshold: float = 0.8) -> bool:
    """True when ``candidate`` exactly matches or nearly overlaps any pool entry."""
    normalized = _normalize(candidate)
    tokens = _token_set(candidate)
    for other in pool:
        if normalized == _normalize(other):
            return True
        if _jaccard(tokens, _token_set(other)) >= threshold:
            return True
    return False


@dataclass(frozen=True)
class ExpansionConfig:
    target_count: int
    examples_per_prompt: int = protocol.EXAMPLES_PER_EXPANSION_PROMPT
    max_attempts_factor: float = 5.0
    dedup_jaccard_threshold: float = 0.8

    def __post_init__(self) -> None:
        if self.target_count < 0:
            raise ValueError("target_count must be non-negative")
        if self.examples_per_prompt != protocol.EXAMPLES_PER_EXPANSION_PROMPT:
            raise ValueError(
                f"the generation prompt takes exactly "
                f"{protocol.EXAMPLES_PER_EXPANSION_PROMPT} examples"
            )
        if self.max_attempts_factor <= 0:
            raise ValueError("max_attempts_factor must be positive")
        if not 0 < self.dedup_jaccard_threshold <= 1:
            raise ValueError("dedup_jaccard_threshold must lie in (0, 1]")


@dataclass(frozen=True)
class ExpansionResult:
    questions: tuple[Question, ...]
    attempts: int
    # True when the attempt budget ran out before reaching target_count
    exhausted: bool


def expand(seeds, backend, config: ExpansionConfig, *, task_name: str = "multi-hop",
           source_tag: str = "expansion", rng_seed: int = 0) -> ExpansionResult:
    """Generate up to ``config.target_count`` new questions from ``seeds``.

    Stops early with ``exhausted=True`` once attempts exceed
    ``max_attempts_factor * target_count``; the partial set is still returned
    so a stubborn model degrades a round instead of hanging it.
    """
    seeds = list(seeds)
    if len(seeds) < config.examples_per_prompt:
        raise ValueError(
            f"need at least {config.examples_per_prompt} seed questions, got {len(seeds)}"
        )
    rng = random.Random(rng_seed)
    pool = [seed.text for seed in seeds]
    accepted: list[Question] = []
    max_attempts = int(config.max_attempts_factor * config.target_count)
    attempts = 0
    while len(accepted) < config.target_count and attempts < max_attempts:
        attempts += 1
        sample = rng.sample(seeds, config.examples_per_prompt)
        prompt = protocol.render_expansion_prompt(task_name, [seed.text for seed in sample])
        response = backend.complete(ModelRequest(prompt=prompt, tag=RequestTag.EXPAND))
        parsed = protocol.parse_generated_question(response.text)
        if isinstance(parsed, Malformed):
            logger.debug("attempt %d: unparseable generation", attempts)
            continue
        if is_duplicate(parsed, pool, config.dedup_jaccard_threshold):
            logger.debug("attempt %d: duplicate %r", attempts, parsed)
            continue
        accepted.append(
            Question(id=f"{source_tag}-{len(accepted):04d}", text=parsed, source=source_tag)
        )
        pool.append(parsed)

    exhausted = len(accepted) < config.target_count
    if exhausted:
        logger.warning(
            "expansion stopped at %d/%d questions after %d attempts",
            len(accepted), config.target_count, attempts,
        )
    return ExpansionResult(questions=tuple(accepted), attempts=attempts, exhausted=exhausted)
