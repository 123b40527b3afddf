"""Token-budget management for agent inputs.

``transform`` limits history and truncates long messages; ``compress`` drops
low-importance tokens from the patent text. Importance comes from an
idf-style scorer that stands in for an LM-based compressor.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Literal, Optional, Protocol, Sequence

from .errors import BudgetImpossible
from .ingest import default_stopwords, token_words, tokenize
from .llm import ChatMessage, count_tokens

TRUNCATION_MARKER = " …[truncated]"

NUMBER_PATTERN = r"[+-]?\d+(?:[.,]\d+)*(?:[a-zµμ°/]{1,4}\d*)?"
FORMULA_PATTERN = r"(?:[a-z]{1,2}\d+)+[a-z]{0,2}"
DEFAULT_FORCE_KEEP = (NUMBER_PATTERN,)


@dataclass(frozen=True)
class TokenBudget:
    max_tokens_per_message: int = 6000
    max_total_tokens: int = 24000
    max_history_messages: int = 20

    def __post_init__(self):
        if min(self.max_tokens_per_message, self.max_total_tokens, self.max_history_messages) < 1:
            raise ValueError("token budget values must be positive")
        if self.max_tokens_per_message > self.max_total_tokens:
            raise ValueError("max_tokens_per_message cannot exceed max_total_tokens")


@dataclass(frozen=True)
class CompressionConfig:
    target_ratio: float = 0.5
    scorer_id: Literal["baseline_idf"] = "baseline_idf"
    force_keep_patterns: tuple[str, ...] = DEFAULT_FORCE_KEEP

    def __post_init__(self):
        if not (0.0 < self.target_ratio <= 1.0):
            raise ValueError("target_ratio must be in (0, 1]")
        if self.scorer_id != "baseline_idf":
            raise ValueError(f"unknown scorer {self.scorer_id!r}")


@dataclass
class CorpusStats:
    n_docs: int = 0
    df: dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "CorpusStats":
        df: Counter = Counter()
        n = 0
        for text in texts:
            n += 1
            df.update(set(tokenize(text)))
        return cls(n, dict(df))

    def to_dict(self) -> dict:
        return {"n_docs": self.n_docs, "df": dict(sorted(self.df.items()))}

    @classmethod
    def from_dict(cls, data: dict) -> "CorpusStats":
        return cls(int(data["n_docs"]), {str(k): int(v) for k, v in data["df"].items()})


# ---------------------------------------------------------------- transform messages


def message_tokens(message: ChatMessage) -> int:
    """Token count of a message body; the truncation marker is not counted."""
    return count_tokens(message.content.removesuffix(TRUNCATION_MARKER))


def limit_history(
    messages: Sequence[ChatMessage], budget: TokenBudget, protect_system: bool = True
) -> list[ChatMessage]:
    """Keep the longest recent suffix that fits both the count and token budgets.

    System messages are kept unconditionally when ``protect_system`` is set
    and do not count against ``max_history_messages``.
    """
    protected = [i for i, m in enumerate(messages) if protect_system and m.role == "system"]
    protected_tokens = 0
    for i in protected:
        t = message_tokens(messages[i])
        if t > budget.max_total_tokens:
            raise BudgetImpossible(f"protected message of {t} tokens exceeds the total budget")
        protected_tokens += t
    if protected_tokens > budget.max_total_tokens:
        raise BudgetImpossible("protected messages alone exceed the total budget")

    remaining = budget.max_total_tokens - protected_tokens
    candidates = [i for i in range(len(messages)) if i not in set(protected)]
    kept: list[int] = []
    used = 0
    for i in reversed(candidates):
        if len(kept) >= budget.max_history_messages:
            break
        t = message_tokens(messages[i])
        if used + t > remaining:
            break
        kept.append(i)
        used += t
    keep = set(kept) | set(protected)
    return [m for i, m in enumerate(messages) if i in keep]


def truncate_text(text: str, max_tokens: int) -> str:
    if max_tokens < 1:
        raise ValueError("max_tokens must be >= 1")
    body = text.removesuffix(TRUNCATION_MARKER)
    if count_tokens(body) <= max_tokens:
        return text
    words = body.split()
    seen = 0
    cut = 0
    for idx, (word, tok) in enumerate((w, tokenize(w)) for w in words):
        if tok:
            seen += 1
            if seen == max_tokens:
                cut = idx + 1
                break
    return " ".join(words[:cut]) + TRUNCATION_MARKER


def truncate_tokens(message: ChatMessage, max_tokens: int) -> ChatMessage:
    """Keep the first ``max_tokens`` tokens and append the truncation marker."""
    new = truncate_text(message.content, max_tokens)
    if new == message.content:
        return message
    return replace(message, content=new)


def transform_messages(messages: Sequence[ChatMessage], budget: TokenBudget) -> list[ChatMessage]:
    truncated = [truncate_tokens(m, budget.max_tokens_per_message) for m in messages]
    return limit_history(truncated, budget)


# ---------------------------------------------------------------- compression


class TokenScorer(Protocol):
    def __call__(self, tokens: Sequence[str]) -> list[float]: ...


STOPWORD_PENALTY = 1.0
FORCE_KEEP_BONUS = 2.0


def score_tokens(
    text: str,
    corpus_stats: Optional[CorpusStats] = None,
    config: Optional[CompressionConfig] = None,
    stopwords: Optional[frozenset[str]] = None,
) -> list[tuple[str, float]]:
    """Importance per token: idf weight, plus a force-keep bonus, minus a stop-word penalty."""
    stats = corpus_stats or CorpusStats()
    cfg = config or CompressionConfig()
    stop = default_stopwords() if stopwords is None else stopwords
    patterns = [re.compile(p) for p in cfg.force_keep_patterns]
    n = stats.n_docs
    out = []
    for tok in tokenize(text):
        score = math.log((n + 1) / (stats.df.get(tok, 0) + 1))
        if any(p.fullmatch(tok) for p in patterns):
            score += FORCE_KEEP_BONUS
        if tok in stop:
            score -= STOPWORD_PENALTY
        out.append((tok, score))
    return out


def keep_count(n: int, ratio: float) -> int:
    # guard against float noise such as 0.1 * 30 = 3.0000000000000004
    return min(n, math.ceil(ratio * n - 1e-9))


def compress_prompt(
    text: str,
    config: Optional[CompressionConfig] = None,
    corpus_stats: Optional[CorpusStats] = None,
    stopwords: Optional[frozenset[str]] = None,
) -> str:
    """Keep the ``ceil(ratio * n)`` best-scoring tokens in their original order.

    Kept tokens are re-emitted with their surface form (case, trailing
    punctuation), so ``tokenize`` of the output is exactly the kept subsequence.
    """
    cfg = config or CompressionConfig()
    pairs = token_words(text)
    scores = [s for _, s in score_tokens(text, corpus_stats, cfg, stopwords)]
    n = len(pairs)
    k = keep_count(n, cfg.target_ratio)
    ranked = sorted(range(n), key=lambda i: (-scores[i], i))
    chosen = sorted(ranked[:k])
    return " ".join(pairs[i][0] for i in chosen)


def prepare_patent_text(
    text: str,
    strategy: Literal["compress", "transform"],
    budget: TokenBudget,
    compression: Optional[CompressionConfig] = None,
    corpus_stats: Optional[CorpusStats] = None,
) -> str:
    """Apply the configured long-context strategy to the patent body."""
    if strategy == "compress":
        return compress_prompt(text, compression, corpus_stats)
    if strategy == "transform":
        return truncate_text(text, budget.max_tokens_per_message)
    raise ValueError(f"unknown context strategy {strategy!r}")
