"""Evaluation harness for the retrieval pipeline.

Covers question generation from paper summaries, top-k retrieval accuracy
with normalized-entropy diversity, redundancy of original descriptions
against their papers, description length statistics, cross-dataset
similarity matrices, and histogram overlap for synthetic-data realism.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .modelgw import ModelGateway
from .ragindex import EmptyIndexError, IndexEntry, VectorIndex, cosine, embed_chunked
from .textproc import count_tokens

QUESTION_PROMPT = (
    "Here you have the summary of a paper about a dataset: {text}. Based on "
    "the summary of the paper, create a list of {n} questions that include "
    "enough information to understand what is the paper, but that would "
    "require access to the data used for the experiments in the paper to be "
    "answered. The goal of the question is to identify a dataset that could "
    "bring to the discoveries made in the paper."
)

ENTROPY_IDS = 10


class EvalError(Exception):
    pass


class WrongLengthError(EvalError):
    pass


class EmptyInputError(EvalError):
    pass


class TooFewEntriesError(EvalError):
    pass


# ---------------------------------------------------------------------------
# Question generation
# ---------------------------------------------------------------------------


@dataclass
class RetrievalQuestion:
    question_text: str
    source_record_id: str


@dataclass
class QuestionSet:
    """Parsed questions plus an under-count flag when fewer than requested."""

    questions: list[RetrievalQuestion]
    requested: int
    under_count: bool


_QUESTION_LINE_RE = re.compile(r"^\s*(?:\d+[.)]\s*|[-*•]\s*)(.+?)\s*$")


def generate_questions(
    paper_summary: str,
    gateway: ModelGateway,
    n: int = 15,
    *,
    source_record_id: str = "",
) -> QuestionSet:
    """Generate data-grounded retrieval questions from a paper summary.

    Numbered or bulleted reply lines are parsed into questions; a reply with
    fewer than ``n`` parseable lines is accepted and flagged.
    """
    if not paper_summary:
        raise ValueError("paper_summary must be non-empty")
    reply = gateway.chat(QUESTION_PROMPT.format(text=paper_summary, n=n))
    questions = []
    for line in reply.splitlines():
        m = _QUESTION_LINE_RE.match(line)
        if m and m.group(1):
            questions.append(
                RetrievalQuestion(question_text=m.group(1), source_record_id=source_record_id)
            )
    return QuestionSet(questions=questions, requested=n, under_count=len(questions) < n)


# ---------------------------------------------------------------------------
# Retrieval accuracy and diversity
# ---------------------------------------------------------------------------


def normalized_entropy(retrieved_ids: Sequence[str]) -> float:
    """Shannon entropy of the top-10 id distribution, scaled by ln 10."""
    ids = list(retrieved_ids)
    if len(ids) != ENTROPY_IDS:
        raise WrongLengthError(f"expected {ENTROPY_IDS} ids, got {len(ids)}")
    counts = Counter(ids)
    h = -sum((c / ENTROPY_IDS) * math.log(c / ENTROPY_IDS) for c in counts.values())
    return h / math.log(ENTROPY_IDS)


@dataclass
class QuestionOutcome:
    question: RetrievalQuestion
    hit_rank: Optional[int]
    entropy: float
    retrieved: list[str]


@dataclass
class RetrievalMetrics:
    n_questions: int
    top1: float
    top5: float
    top10: float
    per_question: list[QuestionOutcome] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_questions": self.n_questions,
            "top1": self.top1,
            "top5": self.top5,
            "top10": self.top10,
            "per_question": [
                {
                    "question": o.question.question_text,
                    "source_record_id": o.question.source_record_id,
                    "hit_rank": o.hit_rank,
                    "entropy": o.entropy,
                    "retrieved": o.retrieved,
                }
                for o in self.per_question
            ],
        }


def retrieval_experiment(
    questions: Sequence[RetrievalQuestion],
    index: VectorIndex,
    gateway: ModelGateway,
    *,
    level: Optional[str] = "record",
) -> RetrievalMetrics:
    """Ask every question against the index and score hit@k plus diversity.

    Each question retrieves the top 10 record-level entries; a hit@k means the
    source record appears within the first k. Entropy is computed over the 10
    retrieved ids (an index smaller than 10 pads by repeating its last hit).
    """
    if not questions:
        raise ValueError("questions must be non-empty")
    if not index.entries:
        raise EmptyIndexError("index is empty")
    outcomes = []
    for q in questions:
        ranked = index.query(q.question_text, ENTROPY_IDS, gateway, level=level)
        ids = [rid for rid, _ in ranked]
        padded = ids + [ids[-1]] * (ENTROPY_IDS - len(ids))
        hit_rank = ids.index(q.source_record_id) + 1 if q.source_record_id in ids else None
        outcomes.append(
            QuestionOutcome(
                question=q,
                hit_rank=hit_rank,
                entropy=normalized_entropy(padded),
                retrieved=ids,
            )
        )

    def rate(k: int) -> float:
        hits = sum(1 for o in outcomes if o.hit_rank is not None and o.hit_rank <= k)
        return hits / len(outcomes)

    return RetrievalMetrics(
        n_questions=len(outcomes),
        top1=rate(1),
        top5=rate(5),
        top10=rate(10),
        per_question=outcomes,
    )


def entropy_hit_curve(metrics: RetrievalMetrics) -> list[dict]:
    """Plot-ready series: questions sorted by increasing entropy with
    cumulative hit rates, the shape used for the entropy-vs-hit-rate figure."""
    ordered = sorted(
        enumerate(metrics.per_question), key=lambda pair: (pair[1].entropy, pair[0])
    )
    rows = []
    hits = {1: 0, 5: 0, 10: 0}
    for rank, (_, outcome) in enumerate(ordered, start=1):
        for k in hits:
            if outcome.hit_rank is not None and outcome.hit_rank <= k:
                hits[k] += 1
        rows.append(
            {
                "question_rank": rank,
                "entropy": outcome.entropy,
                "hit_rank": outcome.hit_rank,
                "cumulative_top1": hits[1] / rank,
                "cumulative_top5": hits[5] / rank,
                "cumulative_top10": hits[10] / rank,
            }
        )
    return rows


# ---------------------------------------------------------------------------
# Redundancy of descriptions against papers
# ---------------------------------------------------------------------------


@dataclass
class RedundancyResult:
    values: list[float]
    skipped: int
    histogram_counts: list[int]
    bin_edges: list[float]


def redundancy_similarities(
    records: Sequence[tuple[str, str]],
    gateway: ModelGateway,
    bins: int = 20,
) -> RedundancyResult:
    """Absolute cosine similarity between description and paper text per pair.

    Pairs with an empty side are skipped and counted. A histogram over [0, 1]
    summarizes the distribution for plotting.
    """
    values = []
    skipped = 0
    for description, paper_text in records:
        if not description or not paper_text:
            skipped += 1
            continue
        u = embed_chunked(description, gateway)
        v = embed_chunked(paper_text, gateway)
        values.append(abs(cosine(u, v)))
    counts, edges = np.histogram(np.array(values or [0.0]), bins=bins, range=(0.0, 1.0))
    if not values:
        counts = np.zeros_like(counts)
    return RedundancyResult(
        values=values,
        skipped=skipped,
        histogram_counts=[int(c) for c in counts],
        bin_edges=[float(e) for e in edges],
    )


# ---------------------------------------------------------------------------
# Description length statistics
# ---------------------------------------------------------------------------


@dataclass
class LengthStats:
    per_source: dict[str, dict]

    def to_dict(self) -> dict:
        return {"per_source": self.per_source}


def _length_summary(texts: Sequence[str]) -> dict:
    chars = [len(t) for t in texts]
    tokens = [count_tokens(t) for t in texts]
    if not texts:
        return {"n": 0, "chars": [], "tokens": []}
    return {
        "n": len(texts),
        "mean_chars": float(np.mean(chars)),
        "median_chars": float(np.median(chars)),
        "mean_tokens": float(np.mean(tokens)),
        "median_tokens": float(np.median(tokens)),
        "chars": chars,
        "tokens": tokens,
    }


def description_length_stats(
    reports: Sequence[str], originals: Sequence[str]
) -> LengthStats:
    """Character and token length distributions per description source."""
    per_source: dict[str, dict] = {}
    if reports:
        per_source["generated"] = _length_summary(reports)
    if originals:
        per_source["original"] = _length_summary(originals)
    return LengthStats(per_source=per_source)


# ---------------------------------------------------------------------------
# Histogram overlap
# ---------------------------------------------------------------------------


@dataclass
class OverlapScore:
    feature_name: str
    percent: float
    bins: int
    value_range: tuple[float, float]

    def to_dict(self) -> dict:
        return {
            "feature_name": self.feature_name,
            "percent": self.percent,
            "bins": self.bins,
            "range": list(self.value_range),
        }


def histogram_overlap(
    real_values: Sequence[float],
    synth_values: Sequence[float],
    bins: int = 20,
    value_range: Optional[tuple[float, float]] = None,
    feature_name: str = "",
) -> OverlapScore:
    """Percentage histogram overlap, 100 * sum_b min(p_b, q_b), at fixed bins.

    The range defaults to the real data's [min, max]. Both histograms are
    normalized by their total sample counts, so values falling outside the
    range reduce that side's in-range mass instead of erroring. The bin
    arithmetic stays in integers until one final division, so identical
    inputs score exactly 100.
    """
    real = np.asarray(list(real_values), dtype=float)
    synth = np.asarray(list(synth_values), dtype=float)
    if real.size == 0 or synth.size == 0:
        raise EmptyInputError("both value sequences must be non-empty")
    if value_range is None:
        lo, hi = float(real.min()), float(real.max())
    else:
        lo, hi = float(value_range[0]), float(value_range[1])
    if hi <= lo:
        # Degenerate (constant) range: widen symmetrically so binning works.
        lo, hi = lo - 0.5, hi + 0.5
    p_counts = np.histogram(real, bins=bins, range=(lo, hi))[0].astype(np.int64)
    q_counts = np.histogram(synth, bins=bins, range=(lo, hi))[0].astype(np.int64)
    n_p, n_q = int(real.size), int(synth.size)
    shared = int(np.minimum(p_counts * n_q, q_counts * n_p).sum())
    percent = 100.0 * shared / (n_p * n_q)
    return OverlapScore(
        feature_name=feature_name, percent=percent, bins=bins, value_range=(lo, hi)
    )


# ---------------------------------------------------------------------------
# Cross-dataset similarity
# ---------------------------------------------------------------------------


@dataclass
class SimilarityMatrix:
    entry_ids: list[str]
    values: np.ndarray

    def to_dict(self) -> dict:
        return {"entry_ids": self.entry_ids, "values": self.values.tolist()}


def cross_dataset_similarity(entries: Sequence[IndexEntry]) -> SimilarityMatrix:
    """Pairwise cosine matrix over index entries (heat-map data)."""
    entries = list(entries)
    if len(entries) < 2:
        raise TooFewEntriesError(f"need >= 2 entries, got {len(entries)}")
    k = len(entries)
    values = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            values[i, j] = values[j, i] = cosine(entries[i].vector, entries[j].vector)
    return SimilarityMatrix(entry_ids=[e.entry_id for e in entries], values=values)
