"""Retrieval metrics, degradation tables, and dataset diagnostics.

Metrics are binary-relevance recall/precision at fixed cutoffs, macro
averaged over queries. Diagnostics quantify why graph signal helps: how
far held-out embeddings drift from the training distribution, how sparse
tool co-occurrence is, and how much an instruction's tool set overlaps
with those of its most similar instructions.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .align import cosine_scores, rank_by_score
from .dataio import Corpus
from .errors import DataError
from .graph import InteractionGraph

VARIANCE_FLOOR = 1e-8


def recall_at_k(ranked: list[str], relevant: set[str], k: int) -> float:
    """|top-k hits| / |relevant|. Order within the top-k does not matter."""
    if k < 1:
        raise DataError("k must be >= 1")
    if not relevant:
        raise DataError("relevant set is empty")
    hits = len(set(ranked[:k]) & set(relevant))
    return hits / len(relevant)


def precision_at_k(ranked: list[str], relevant: set[str], k: int) -> float:
    """|top-k hits| / k. Short result lists count missing slots as misses."""
    if k < 1:
        raise DataError("k must be >= 1")
    hits = len(set(ranked[:k]) & set(relevant))
    return hits / k


@dataclass(frozen=True)
class EvalReport:
    """Macro-averaged metrics over one result batch."""

    metrics: dict[str, float]
    num_queries: int
    num_skipped: int
    cutoffs: tuple[int, ...]
    runtime_seconds: float = 0.0

    @property
    def average(self) -> float:
        """Mean of all recall/precision cells."""
        return sum(self.metrics.values()) / len(self.metrics)

    def to_dict(self) -> dict:
        return {
            "metrics": dict(self.metrics),
            "average": self.average,
            "num_queries": self.num_queries,
            "num_skipped": self.num_skipped,
            "cutoffs": list(self.cutoffs),
            "runtime_seconds": self.runtime_seconds,
        }


def evaluate(
    results: list[tuple[str, list[str]]],
    ground_truth: dict[str, set[str]],
    cutoffs: tuple[int, ...] = (3, 7),
    runtime_seconds: float = 0.0,
) -> EvalReport:
    """Score (query_id, ranked tool ids) pairs against ground truth.

    Queries with no ground-truth tools are skipped and tallied rather than
    scored as zero. Aggregation sums in input order.
    """
    if not results:
        raise DataError("no results to evaluate")
    sums = {f"{name}@{k}": 0.0 for k in cutoffs for name in ("recall", "precision")}
    scored = 0
    skipped = 0
    for query_id, ranked in results:
        relevant = ground_truth.get(query_id, set())
        if not relevant:
            skipped += 1
            continue
        scored += 1
        for k in cutoffs:
            sums[f"recall@{k}"] += recall_at_k(ranked, relevant, k)
            sums[f"precision@{k}"] += precision_at_k(ranked, relevant, k)
    if scored == 0:
        raise DataError("every query was skipped (no usable ground truth)")
    return EvalReport(
        metrics={name: total / scored for name, total in sums.items()},
        num_queries=scored,
        num_skipped=skipped,
        cutoffs=tuple(cutoffs),
        runtime_seconds=runtime_seconds,
    )


@dataclass(frozen=True)
class DegradationReport:
    """Per-ratio metric values with relative drops against the 0% row."""

    ratios: tuple[float, ...]
    values: dict[str, dict[float, float]]
    drops_pct: dict[str, dict[float, float]]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["metric", "ratio", "value", "drop_pct"])
        for metric in sorted(self.values):
            for ratio in self.ratios:
                writer.writerow([
                    metric, ratio,
                    f"{self.values[metric][ratio]:.6f}",
                    f"{self.drops_pct[metric][ratio]:.4f}",
                ])
        return buf.getvalue()


def degradation_report(
    reports_by_ratio: dict[float, EvalReport]
) -> DegradationReport:
    """Relative drop of each metric at each ratio versus the 0% baseline,
    in percent: 100 * (base - value) / base."""
    if 0.0 not in reports_by_ratio:
        raise DataError("degradation report needs the ratio-0 baseline")
    ratios = tuple(sorted(reports_by_ratio))
    base = reports_by_ratio[0.0].metrics
    values: dict[str, dict[float, float]] = {}
    drops: dict[str, dict[float, float]] = {}
    for metric, base_value in base.items():
        values[metric] = {}
        drops[metric] = {}
        for ratio in ratios:
            value = reports_by_ratio[ratio].metrics[metric]
            values[metric][ratio] = value
            drops[metric][ratio] = (
                100.0 * (base_value - value) / base_value if base_value > 0 else 0.0
            )
    return DegradationReport(ratios=ratios, values=values, drops_pct=drops)


@dataclass(frozen=True)
class KLShift:
    """KL divergence of the held-out embedding distribution from the
    training one, under per-dimension Gaussian fits (MLE)."""

    value: float
    floored_dims: int
    estimator: str = "diagonal_gaussian_mle"


def kl_shift(seen: np.ndarray, unseen: np.ndarray) -> KLShift:
    """KL(unseen || seen) with diagonal-Gaussian fits to each row set.

    Zero-variance dimensions are floored at 1e-8 and counted in the
    result. Non-negative by construction; 0 for identical sets.
    """
    seen = np.asarray(seen, dtype=np.float64)
    unseen = np.asarray(unseen, dtype=np.float64)
    if seen.ndim != 2 or unseen.ndim != 2 or seen.shape[1] != unseen.shape[1]:
        raise DataError("embedding sets must be 2-D with equal dims")
    if seen.shape[0] < 2 or unseen.shape[0] < 2:
        raise DataError("each embedding set needs at least 2 rows")
    mu_p, var_p = seen.mean(axis=0), seen.var(axis=0)
    mu_q, var_q = unseen.mean(axis=0), unseen.var(axis=0)
    floored = int(np.sum(var_p < VARIANCE_FLOOR) + np.sum(var_q < VARIANCE_FLOOR))
    var_p = np.maximum(var_p, VARIANCE_FLOOR)
    var_q = np.maximum(var_q, VARIANCE_FLOOR)
    terms = var_q / var_p + (mu_p - mu_q) ** 2 / var_p - 1.0 + np.log(var_p / var_q)
    return KLShift(value=float(0.5 * terms.sum()), floored_dims=floored)


COARSE_BUCKETS = ((0, 10), (10, 20), (20, None))
FINE_BUCKET_WIDTH = 5
FINE_BUCKET_CAP = 50


@dataclass(frozen=True)
class CooccurrenceHistogram:
    """Distribution of how many distinct tools each tool co-occurs with
    (sharing at least one instruction)."""

    counts: tuple[int, ...]
    coarse: dict[str, int]
    fine: dict[str, int]

    @property
    def fraction_below_10(self) -> float:
        if not self.counts:
            return 0.0
        return self.coarse["[0,10)"] / len(self.counts)


def _bucket_label(lo: int, hi: int | None) -> str:
    return f"[{lo},{hi})" if hi is not None else f"[{lo},inf)"


def cooccurrence_histogram(graph: InteractionGraph) -> CooccurrenceHistogram:
    """Count, per tool, the distinct other tools sharing an instruction."""
    counts = []
    for t in range(graph.num_tools):
        partners: set[int] = set()
        for q in graph.instruction_neighbors(t):
            partners.update(int(x) for x in graph.tool_neighbors(int(q)))
        partners.discard(t)
        counts.append(len(partners))
    coarse = {
        _bucket_label(lo, hi): sum(
            1 for c in counts if c >= lo and (hi is None or c < hi)
        )
        for lo, hi in COARSE_BUCKETS
    }
    fine = {}
    for lo in range(0, FINE_BUCKET_CAP, FINE_BUCKET_WIDTH):
        fine[_bucket_label(lo, lo + FINE_BUCKET_WIDTH)] = sum(
            1 for c in counts if lo <= c < lo + FINE_BUCKET_WIDTH
        )
    fine[_bucket_label(FINE_BUCKET_CAP, None)] = sum(
        1 for c in counts if c >= FINE_BUCKET_CAP
    )
    return CooccurrenceHistogram(counts=tuple(counts), coarse=coarse, fine=fine)


@dataclass(frozen=True)
class OverlapStats:
    """Per instruction: percentage of its tools found in the union of its
    most text-similar instructions' tool sets."""

    percentages: tuple[float, ...]
    mean: float
    histogram: dict[str, int] = field(default_factory=dict)


def overlap_stats(
    corpus: Corpus, instruction_embeddings: np.ndarray, top_n: int = 5
) -> OverlapStats:
    """Tool-set overlap with the top-N most similar other instructions.

    ``instruction_embeddings`` rows follow corpus instruction order.
    Instructions without tools are skipped.
    """
    embs = np.asarray(instruction_embeddings, dtype=np.float64)
    if embs.shape[0] != len(corpus.instructions):
        raise DataError("embedding rows do not match corpus instructions")
    if len(corpus.instructions) < 2:
        raise DataError("overlap stats need at least 2 instructions")
    percentages = []
    for i, rec in enumerate(corpus.instructions):
        if not rec.tool_ids:
            continue
        scores = cosine_scores(embs[i], embs)
        scores[i] = -np.inf
        union: set[str] = set()
        for j in rank_by_score(scores, top_n):
            union.update(corpus.instructions[int(j)].tool_ids)
        own = set(rec.tool_ids)
        percentages.append(100.0 * len(own & union) / len(own))
    if not percentages:
        raise DataError("no instruction has tools")
    hist = {
        f"[{lo},{lo + 10})" if lo < 90 else "[90,100]": sum(
            1 for p in percentages
            if lo <= p < lo + 10 or (lo == 90 and p == 100.0)
        )
        for lo in range(0, 100, 10)
    }
    return OverlapStats(
        percentages=tuple(percentages),
        mean=float(np.mean(percentages)),
        histogram=hist,
    )


@dataclass(frozen=True)
class DiagnosticsReport:
    """Bundle of the three dataset diagnostics; KL entries are None when
    there is no held-out set to compare against."""

    kl_instructions: KLShift | None
    kl_tools: KLShift | None
    cooccurrence: CooccurrenceHistogram
    overlap: OverlapStats

    def to_dict(self) -> dict:
        def _kl(shift: KLShift | None):
            if shift is None:
                return None
            return {
                "value": shift.value,
                "floored_dims": shift.floored_dims,
                "estimator": shift.estimator,
            }
        return {
            "kl_divergence": {
                "instructions": _kl(self.kl_instructions),
                "tools": _kl(self.kl_tools),
            },
            "cooccurrence": {
                "coarse": dict(self.cooccurrence.coarse),
                "fine": dict(self.cooccurrence.fine),
                "fraction_below_10": self.cooccurrence.fraction_below_10,
            },
            "overlap": {
                "mean_percent": self.overlap.mean,
                "histogram": dict(self.overlap.histogram),
            },
        }
