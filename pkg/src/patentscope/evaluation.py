"""Summary-quality metrics: ROUGE-1/2/L (recall form) and greedy-match BERTScore."""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from .errors import EmptyInput, EmptyReference, EmptySequence, NoReferenceBigrams
from .ingest import tokenize


@dataclass(frozen=True)
class MetricReport:
    rouge1: float
    rouge2: float
    rougeL: float
    bert_precision: float
    bert_recall: float
    bert_f1: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ExpertScores:
    informative: float
    rich: float
    coherent: float
    attributable: float
    extensible: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (0.0 <= v <= 5.0):
                raise ValueError(f"{f.name} must be within [0, 5], got {v}")


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _clipped_recall(generated: Sequence[str], reference: Sequence[str], n: int) -> float:
    ref = _ngrams(reference, n)
    gen = _ngrams(generated, n)
    matched = sum(min(c, gen[g]) for g, c in ref.items())
    return matched / sum(ref.values())


def rouge1(generated: Sequence[str], reference: Sequence[str]) -> float:
    """Clipped unigram matches over reference unigram count."""
    if not reference:
        raise EmptyReference("reference has no tokens")
    return _clipped_recall(generated, reference, 1)


def rouge2(generated: Sequence[str], reference: Sequence[str]) -> float:
    if len(reference) < 2:
        raise NoReferenceBigrams("reference needs at least two tokens")
    return _clipped_recall(generated, reference, 2)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rougeL(generated: Sequence[str], reference: Sequence[str]) -> float:
    if not reference:
        raise EmptyReference("reference has no tokens")
    return lcs_length(generated, reference) / len(reference)


def _token_matrix(tokens: Sequence[str], embedder) -> np.ndarray:
    uniq = list(dict.fromkeys(tokens))
    vecs = dict(zip(uniq, embedder.embed_batch(uniq)))
    return np.vstack([np.asarray(vecs[t], dtype=np.float64) for t in tokens])


def _greedy_mean(source: Sequence[str], target: Sequence[str], embedder) -> float:
    if not source or not target:
        raise EmptySequence("BERTScore needs non-empty sequences")
    s = _token_matrix(source, embedder)
    t = _token_matrix(target, embedder)
    sims = s @ t.T
    return float(np.clip(sims.max(axis=1), -1.0, 1.0).mean())


def bert_precision(generated: Sequence[str], reference: Sequence[str], embedder) -> float:
    """Mean over generated tokens of the best cosine match among reference tokens."""
    return _greedy_mean(generated, reference, embedder)


def bert_recall(generated: Sequence[str], reference: Sequence[str], embedder) -> float:
    return _greedy_mean(reference, generated, embedder)


def bert_f1(precision: float, recall: float) -> float:
    if precision < 0 or recall < 0:
        raise ValueError("precision and recall must be non-negative")
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def evaluate_pair(generated: str, reference: str, embedder) -> MetricReport:
    gen, ref = tokenize(generated), tokenize(reference)
    r1, r2, rl = rouge1(gen, ref), rouge2(gen, ref), rougeL(gen, ref)
    p = bert_precision(gen, ref, embedder)
    r = bert_recall(gen, ref, embedder)
    return MetricReport(
        rouge1=r1,
        rouge2=r2,
        rougeL=rl,
        bert_precision=p,
        bert_recall=r,
        # negative cosines only arise with live embedders; F1 treats them as no match
        bert_f1=bert_f1(max(p, 0.0), max(r, 0.0)),
    )


def aggregate_expert_scores(score_sets: Sequence[ExpertScores]) -> ExpertScores:
    """Per-dimension arithmetic mean."""
    if not score_sets:
        raise EmptyInput("need at least one score set")
    names = [f.name for f in fields(ExpertScores)]
    return ExpertScores(**{n: sum(getattr(s, n) for s in score_sets) / len(score_sets) for n in names})
