"""Two-stage retrieval over a sealed index.

Stage one narrows the repository to tools used by the instructions most
similar to the query (text space); stage two embeds the query into graph
space (same path as unseen-instruction alignment, without persisting) and
ranks the shortlisted tools by graph-embedding cosine.

Each stage can be switched off for ablation: ranking can stay in text
space on the query side, unseen tools can be ranked by their raw text
embeddings, and the shortlist can be widened to the whole repository.
With all three switches on, retrieval degenerates to flat text-cosine
ranking over the full repository and matches ``flat_cosine_baseline``
score-for-score.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .align import (
    AlignedIndex,
    UnseenNodeSpec,
    align_unseen_instruction,
    cosine_scores,
    rank_by_score,
)
from .errors import DataError
from .graph import NodeKind


@dataclass(frozen=True)
class RetrievalConfig:
    """Retrieval tunables and ablation switches.

    top_t: instructions consulted for the candidate shortlist;
    top_k: tools returned; top_i: transfer sources for query alignment.
    """

    top_t: int = 5
    top_k: int = 7
    top_i: int = 5
    disable_instruction_transfer: bool = False
    disable_tool_transfer: bool = False
    disable_relational_constraint: bool = False

    def __post_init__(self):
        if self.top_t < 1 or self.top_k < 1 or self.top_i < 1:
            raise DataError("top_t, top_k and top_i must all be >= 1")


@dataclass(frozen=True)
class RetrievalResult:
    query_id: str
    candidate_ids: tuple[str, ...]
    ranked: tuple[tuple[str, float], ...]
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class CandidateFilter:
    """Stage-one output: global tool rows, sorted ascending."""

    tool_rows: np.ndarray
    fallback: bool


def select_candidate_tools(
    query_text_emb: np.ndarray, index: AlignedIndex, top_t: int
) -> CandidateFilter:
    """Shortlist tools linked to the top-T text-similar instructions.

    Both training and aligned unseen instructions are searched; an unseen
    instruction contributes the unseen tools it arrived with. An empty
    shortlist falls back to the full repository, flagged.
    """
    if top_t < 1:
        raise DataError("top_t must be >= 1")
    scores = cosine_scores(query_text_emb, index.all_instruction_text)
    top = rank_by_score(scores, top_t)
    rows: set[int] = set()
    for q in top:
        rows.update(int(t) for t in index.tools_for_instruction(int(q)))
    total = len(index.all_tool_ids)
    if not rows:
        return CandidateFilter(
            tool_rows=np.arange(total, dtype=np.int64), fallback=True
        )
    return CandidateFilter(
        tool_rows=np.array(sorted(rows), dtype=np.int64), fallback=False
    )


def embed_query(
    query_text_emb: np.ndarray, index: AlignedIndex, top_i: int
) -> tuple[np.ndarray, bool]:
    """Graph-space embedding for a query, computed like an unseen
    instruction but never persisted. Returns (embedding, fallback)."""
    row = align_unseen_instruction(
        UnseenNodeSpec(
            external_id="<query>", kind=NodeKind.INSTRUCTION,
            text_embedding=np.asarray(query_text_emb, dtype=np.float64),
        ),
        index, top_i,
    )
    return row.graph_embedding, row.fallback


def rank_tools(
    query_emb: np.ndarray,
    candidate_rows: np.ndarray,
    tool_matrix: np.ndarray,
    top_k: int,
) -> tuple[list[tuple[int, float]], bool]:
    """Top-K candidates by cosine against their tool_matrix rows.

    Ties break by ascending global tool row. Returns (ranked, truncated)
    where truncated reports fewer than K candidates being available.
    """
    candidate_rows = np.asarray(candidate_rows, dtype=np.int64)
    if candidate_rows.size == 0:
        raise DataError("candidate set is empty")
    scores = cosine_scores(query_emb, tool_matrix[candidate_rows])
    order = np.lexsort((candidate_rows, -scores))
    chosen = order[: min(top_k, len(order))]
    ranked = [
        (int(candidate_rows[i]), float(scores[i])) for i in chosen
    ]
    return ranked, len(candidate_rows) < top_k


def retrieve(
    query_id: str,
    query_text_emb: np.ndarray,
    index: AlignedIndex,
    config: RetrievalConfig,
) -> RetrievalResult:
    """Run both retrieval stages for one query under the given config."""
    total = len(index.all_tool_ids)
    if total == 0:
        raise DataError("tool repository is empty")
    flags: list[str] = []

    if config.disable_relational_constraint:
        candidates = np.arange(total, dtype=np.int64)
    else:
        filt = select_candidate_tools(query_text_emb, index, config.top_t)
        candidates = filt.tool_rows
        if filt.fallback:
            flags.append("constraint_fallback")

    if config.disable_instruction_transfer:
        query_emb = np.asarray(query_text_emb, dtype=np.float64)
        tool_matrix = index.all_tool_text
    else:
        query_emb, fallback = embed_query(query_text_emb, index, config.top_i)
        if fallback:
            flags.append("alignment_fallback")
        if config.disable_tool_transfer:
            tool_matrix = np.vstack([
                index.graph_embeddings[index.num_instructions:],
                index.unseen_tools.text_embeddings,
            ])
        else:
            tool_matrix = index.all_tool_graph

    ranked_rows, truncated = rank_tools(
        query_emb, candidates, tool_matrix, config.top_k
    )
    if truncated:
        flags.append("fewer_candidates_than_k")
    ids = index.all_tool_ids
    return RetrievalResult(
        query_id=query_id,
        candidate_ids=tuple(ids[r] for r in candidates),
        ranked=tuple((ids[r], score) for r, score in ranked_rows),
        flags=tuple(flags),
    )


def retrieve_batch(
    queries: list[tuple[str, np.ndarray]],
    index: AlignedIndex,
    config: RetrievalConfig,
    threads: int = 1,
) -> list[RetrievalResult]:
    """Retrieve for many queries; reads are pure so they may run in
    parallel. Output order always matches input order."""
    if threads <= 1:
        return [retrieve(qid, emb, index, config) for qid, emb in queries]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(
            pool.map(lambda q: retrieve(q[0], q[1], index, config), queries)
        )


def flat_cosine_baseline(
    query_id: str,
    query_text_emb: np.ndarray,
    index: AlignedIndex,
    top_k: int,
) -> RetrievalResult:
    """Reference single-stage retriever: text cosine over the full
    repository, no graph signal anywhere. Ablating everything in
    ``retrieve`` must reproduce this exactly."""
    total = len(index.all_tool_ids)
    if total == 0:
        raise DataError("tool repository is empty")
    candidates = np.arange(total, dtype=np.int64)
    ranked_rows, truncated = rank_tools(
        np.asarray(query_text_emb, dtype=np.float64),
        candidates, index.all_tool_text, top_k,
    )
    ids = index.all_tool_ids
    return RetrievalResult(
        query_id=query_id,
        candidate_ids=tuple(ids),
        ranked=tuple((ids[r], score) for r, score in ranked_rows),
        flags=("fewer_candidates_than_k",) if truncated else (),
    )
