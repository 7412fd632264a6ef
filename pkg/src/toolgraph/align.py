"""Cold-start alignment: place unseen tools and instructions in graph space.

New nodes arrive with a text embedding only. Alignment finds the training
instructions most similar to the new node (for tools, via the instruction
that invoked them), gathers the tools those instructions use, and adds a
weighted blend of those nodes' relational features to the new node's text
embedding. No retraining, and the training graph itself is never mutated:
aligned rows are appended to the index as separate blocks.

Tools are weighted by how often they recur across the candidate
instructions; instructions are weighted by a softmax over their similarity
to the query.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import DataError
from .graph import (
    InteractionGraph,
    NodeKind,
    PropagationConfig,
    as_embedding_matrix,
    merge_layers,
    normalized_adjacency,
    propagate,
    relational_features,
)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two vectors; 0 if either has zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"dimension mismatch: {a.shape} vs {b.shape}")
    norm = float(np.linalg.norm(a)) * float(np.linalg.norm(b))
    if norm == 0.0:
        return 0.0
    return float(np.dot(a, b)) / norm


def cosine_scores(query: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Cosine of a query against every matrix row; zero-norm rows score 0."""
    query = np.asarray(query, dtype=np.float64)
    if matrix.shape[1] != query.shape[0]:
        raise DataError(
            f"dimension mismatch: query {query.shape[0]}, rows {matrix.shape[1]}"
        )
    qnorm = float(np.linalg.norm(query))
    if qnorm == 0.0:
        return np.zeros(matrix.shape[0], dtype=np.float64)
    row_norms = np.linalg.norm(matrix, axis=1)
    safe = np.where(row_norms > 0, row_norms, 1.0)
    scores = (matrix @ query) / (safe * qnorm)
    scores[row_norms == 0] = 0.0
    return scores


def rank_by_score(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the top-k scores, descending, ties broken by ascending index."""
    order = np.lexsort((np.arange(len(scores)), -scores))
    return order[: min(k, len(scores))]


@dataclass(frozen=True)
class CandidateInstructions:
    """Top instructions for a query: (instruction index, cosine) pairs,
    sorted by score descending, ties by ascending index."""

    entries: tuple[tuple[int, float], ...]

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(idx for idx, _ in self.entries)

    @property
    def scores(self) -> tuple[float, ...]:
        return tuple(score for _, score in self.entries)


@dataclass(frozen=True)
class CandidateTools:
    """Tools adjacent to a candidate instruction set, with the number of
    candidate instructions each tool serves."""

    entries: tuple[tuple[int, int], ...]
    total_frequency: int


@dataclass(frozen=True)
class UnseenNodeSpec:
    """An out-of-training node to align into the index.

    Tools must carry at least one associated instruction embedding (the
    instruction that invoked them); instructions may carry the external
    ids of the unseen tools they arrived with, which become their
    adjacency for query-time candidate filtering.
    """

    external_id: str
    kind: NodeKind
    text_embedding: np.ndarray
    associated_instruction_embeddings: tuple[np.ndarray, ...] = ()
    associated_tool_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class AlignedRow:
    external_id: str
    kind: NodeKind
    text_embedding: np.ndarray
    graph_embedding: np.ndarray
    fallback: bool
    associated_tool_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class UnseenBlock:
    """Appended rows for one node kind: ids plus text/graph embeddings."""

    external_ids: tuple[str, ...] = ()
    text_embeddings: np.ndarray = None
    graph_embeddings: np.ndarray = None
    fallback_flags: tuple[bool, ...] = ()
    associated_tool_ids: tuple[tuple[str, ...], ...] = ()

    @staticmethod
    def empty(dim: int) -> "UnseenBlock":
        z = np.zeros((0, dim), dtype=np.float64)
        return UnseenBlock(
            external_ids=(), text_embeddings=z, graph_embeddings=z,
            fallback_flags=(), associated_tool_ids=(),
        )

    def __len__(self) -> int:
        return len(self.external_ids)


@dataclass(frozen=True)
class AlignedIndex:
    """The sealed, queryable artifact: training graph, text embeddings,
    propagated graph embeddings, relational features, and any aligned
    unseen rows. Immutable; alignment produces a new index."""

    graph: InteractionGraph
    text_embeddings: np.ndarray
    graph_embeddings: np.ndarray
    rel_features: np.ndarray
    instruction_ids: tuple[str, ...]
    tool_ids: tuple[str, ...]
    config: PropagationConfig
    unseen_tools: UnseenBlock
    unseen_instructions: UnseenBlock

    @property
    def num_instructions(self) -> int:
        return self.graph.num_instructions

    @property
    def num_tools(self) -> int:
        return self.graph.num_tools

    @property
    def dim(self) -> int:
        return self.text_embeddings.shape[1]

    @cached_property
    def all_instruction_text(self) -> np.ndarray:
        """Text embeddings of training plus unseen instructions."""
        return np.vstack([
            self.text_embeddings[: self.num_instructions],
            self.unseen_instructions.text_embeddings,
        ])

    @cached_property
    def all_tool_text(self) -> np.ndarray:
        """Text embeddings of training plus unseen tools."""
        return np.vstack([
            self.text_embeddings[self.num_instructions:],
            self.unseen_tools.text_embeddings,
        ])

    @cached_property
    def all_tool_graph(self) -> np.ndarray:
        """Graph embeddings of training plus unseen tools."""
        return np.vstack([
            self.graph_embeddings[self.num_instructions:],
            self.unseen_tools.graph_embeddings,
        ])

    @cached_property
    def all_tool_ids(self) -> tuple[str, ...]:
        return self.tool_ids + self.unseen_tools.external_ids

    @cached_property
    def all_instruction_ids(self) -> tuple[str, ...]:
        return self.instruction_ids + self.unseen_instructions.external_ids

    @cached_property
    def tool_row_by_id(self) -> dict[str, int]:
        rows = {ext: i for i, ext in enumerate(self.all_tool_ids)}
        if len(rows) != len(self.all_tool_ids):
            raise DataError("tool external ids are not unique")
        return rows

    def tools_for_instruction(self, index: int) -> np.ndarray:
        """Tool rows linked to a (training or unseen) instruction row.

        Training instructions link to their graph neighbors; unseen
        instructions link to the unseen tools they arrived with.
        """
        n = self.num_instructions
        if index < n:
            return self.graph.tool_neighbors(index)
        assoc = self.unseen_instructions.associated_tool_ids[index - n]
        return np.array(
            sorted(self.tool_row_by_id[tid] for tid in assoc if tid in self.tool_row_by_id),
            dtype=np.int64,
        )

    def align_batch(
        self, specs: Sequence[UnseenNodeSpec], top_i: int
    ) -> tuple["AlignedIndex", list[AlignedRow]]:
        """Align a batch of unseen nodes and return the extended index.

        Rows are computed against this index only (aligned rows never feed
        later alignments) and appended in batch order within each kind.
        """
        rows = []
        for spec in specs:
            if spec.kind is NodeKind.TOOL:
                rows.append(align_unseen_tool(spec, self, top_i))
            else:
                rows.append(align_unseen_instruction(spec, self, top_i))
        tool_rows = [r for r in rows if r.kind is NodeKind.TOOL]
        instr_rows = [r for r in rows if r.kind is NodeKind.INSTRUCTION]
        index = replace(
            self,
            unseen_tools=_extend_block(self.unseen_tools, tool_rows, self.dim),
            unseen_instructions=_extend_block(
                self.unseen_instructions, instr_rows, self.dim
            ),
        )
        return index, rows


def _extend_block(
    block: UnseenBlock, rows: list[AlignedRow], dim: int
) -> UnseenBlock:
    if not rows:
        return block
    ids = block.external_ids + tuple(r.external_id for r in rows)
    if len(set(ids)) != len(ids):
        raise DataError("duplicate unseen external id in batch")
    return UnseenBlock(
        external_ids=ids,
        text_embeddings=np.vstack(
            [block.text_embeddings] + [r.text_embedding for r in rows]
        ),
        graph_embeddings=np.vstack(
            [block.graph_embeddings] + [r.graph_embedding for r in rows]
        ),
        fallback_flags=block.fallback_flags + tuple(r.fallback for r in rows),
        associated_tool_ids=block.associated_tool_ids
        + tuple(r.associated_tool_ids for r in rows),
    )


def build_index(
    graph: InteractionGraph,
    text_embeddings: np.ndarray,
    instruction_ids: Sequence[str],
    tool_ids: Sequence[str],
    config: PropagationConfig | None = None,
) -> AlignedIndex:
    """Propagate text embeddings over the graph and seal the result.

    The stored graph embeddings are text + relational features, so the
    three representations reconstruct each other bitwise; that sum differs
    from the raw layer merge only by float rounding (within an ulp of the
    feature magnitude per entry).
    """
    config = config or PropagationConfig()
    text_embeddings = as_embedding_matrix(text_embeddings).copy()
    if text_embeddings.shape[0] != graph.num_nodes:
        raise DataError(
            f"{text_embeddings.shape[0]} embedding rows for "
            f"{graph.num_nodes} graph nodes"
        )
    if len(instruction_ids) != graph.num_instructions:
        raise DataError("instruction id count does not match graph")
    if len(tool_ids) != graph.num_tools:
        raise DataError("tool id count does not match graph")
    layers = propagate(normalized_adjacency(graph), text_embeddings, config)
    merged = merge_layers(layers, config.layer_coefficients)
    rel = relational_features(merged, text_embeddings)
    graph_emb = text_embeddings + rel
    for arr in (text_embeddings, graph_emb, rel):
        arr.setflags(write=False)
    dim = text_embeddings.shape[1]
    return AlignedIndex(
        graph=graph,
        text_embeddings=text_embeddings,
        graph_embeddings=graph_emb,
        rel_features=rel,
        instruction_ids=tuple(instruction_ids),
        tool_ids=tuple(tool_ids),
        config=config,
        unseen_tools=UnseenBlock.empty(dim),
        unseen_instructions=UnseenBlock.empty(dim),
    )


def find_candidate_instructions(
    query_text_emb: np.ndarray, index: AlignedIndex, count: int
) -> CandidateInstructions:
    """Top training instructions by text cosine against the query.

    Returns all of them when fewer than ``count`` exist. Only training
    instructions are searched; aligned unseen rows never become transfer
    sources.
    """
    if count < 1:
        raise DataError("candidate count must be >= 1")
    n = index.num_instructions
    if n == 0:
        raise DataError("index has no training instructions")
    scores = cosine_scores(query_text_emb, index.text_embeddings[:n])
    top = rank_by_score(scores, count)
    return CandidateInstructions(
        entries=tuple((int(i), float(scores[i])) for i in top)
    )


def _tool_frequencies(
    instruction_indices: Sequence[int], graph: InteractionGraph
) -> CandidateTools:
    counts: dict[int, int] = {}
    for q in instruction_indices:
        for t in graph.tool_neighbors(int(q)):
            counts[int(t)] = counts.get(int(t), 0) + 1
    if not counts:
        raise DataError("no transferable candidates")
    entries = tuple(sorted(counts.items()))
    return CandidateTools(
        entries=entries, total_frequency=sum(counts.values())
    )


def collect_candidate_tools(
    cands: CandidateInstructions, graph: InteractionGraph
) -> CandidateTools:
    """Union of tools adjacent to the candidate instructions, with per-tool
    counts of how many candidate instructions use each tool."""
    return _tool_frequencies(cands.indices, graph)


def frequency_weights(cset: CandidateTools) -> list[tuple[int, float]]:
    """Normalize per-tool frequencies into transfer weights summing to 1."""
    if cset.total_frequency <= 0:
        raise DataError("candidate tool set is empty")
    return [
        (idx, freq / cset.total_frequency) for idx, freq in cset.entries
    ]


def softmax_weights(cands: CandidateInstructions) -> list[tuple[int, float]]:
    """Softmax over candidate similarity scores; more similar instructions
    contribute more."""
    if not cands.entries:
        raise DataError("candidate instruction set is empty")
    scores = np.array(cands.scores, dtype=np.float64)
    exps = np.exp(scores - scores.max())
    weights = exps / exps.sum()
    return [(idx, float(w)) for idx, w in zip(cands.indices, weights)]


def transfer_embedding(
    text_emb: np.ndarray,
    weights: Sequence[tuple[int, float]],
    feature_rows: np.ndarray,
) -> np.ndarray:
    """Text embedding plus the weighted sum of relational feature rows.

    Accumulation follows the order of ``weights`` so results are bitwise
    reproducible.
    """
    out = np.array(text_emb, dtype=np.float64, copy=True)
    if out.shape[0] != feature_rows.shape[1]:
        raise DataError(
            f"dimension mismatch: {out.shape[0]} vs {feature_rows.shape[1]}"
        )
    for idx, w in weights:
        if not (0 <= idx < feature_rows.shape[0]):
            raise DataError(f"feature row {idx} out of range")
        out += w * feature_rows[idx]
    return out


def align_unseen_tool(
    spec: UnseenNodeSpec, index: AlignedIndex, top_i: int
) -> AlignedRow:
    """Compute the graph embedding for an unseen tool.

    The tool's associated instruction(s) bridge to similar training
    instructions; the tools those instructions invoke donate their
    relational features, weighted by recurrence. When no transfer source
    exists (empty graph, isolated candidates) the text embedding is used
    as-is and the row is flagged.
    """
    if spec.kind is not NodeKind.TOOL:
        raise DataError(f"{spec.external_id}: expected a tool spec")
    if top_i < 1:
        raise DataError("candidate count must be >= 1")
    text = _check_vector(spec.text_embedding, index.dim, spec.external_id)
    if not spec.associated_instruction_embeddings:
        raise DataError(
            f"{spec.external_id}: unseen tool needs an associated instruction embedding"
        )
    bridges = [
        _check_vector(emb, index.dim, spec.external_id)
        for emb in spec.associated_instruction_embeddings
    ]
    try:
        union: set[int] = set()
        for bridge in bridges:
            cands = find_candidate_instructions(bridge, index, top_i)
            union.update(cands.indices)
        ctools = _tool_frequencies(sorted(union), index.graph)
    except DataError:
        return AlignedRow(
            external_id=spec.external_id, kind=spec.kind,
            text_embedding=text, graph_embedding=text.copy(), fallback=True,
        )
    weights = frequency_weights(ctools)
    graph_emb = transfer_embedding(
        text, weights, index.rel_features[index.num_instructions:]
    )
    return AlignedRow(
        external_id=spec.external_id, kind=spec.kind,
        text_embedding=text, graph_embedding=graph_emb, fallback=False,
    )


def align_unseen_instruction(
    spec: UnseenNodeSpec, index: AlignedIndex, top_i: int
) -> AlignedRow:
    """Compute the graph embedding for an unseen instruction from its own
    text: similar training instructions donate their relational features,
    softmax-weighted by similarity."""
    if spec.kind is not NodeKind.INSTRUCTION:
        raise DataError(f"{spec.external_id}: expected an instruction spec")
    if top_i < 1:
        raise DataError("candidate count must be >= 1")
    text = _check_vector(spec.text_embedding, index.dim, spec.external_id)
    try:
        cands = find_candidate_instructions(text, index, top_i)
    except DataError:
        return AlignedRow(
            external_id=spec.external_id, kind=spec.kind,
            text_embedding=text, graph_embedding=text.copy(), fallback=True,
            associated_tool_ids=spec.associated_tool_ids,
        )
    weights = softmax_weights(cands)
    graph_emb = transfer_embedding(
        text, weights, index.rel_features[: index.num_instructions]
    )
    return AlignedRow(
        external_id=spec.external_id, kind=spec.kind,
        text_embedding=text, graph_embedding=graph_emb, fallback=False,
        associated_tool_ids=spec.associated_tool_ids,
    )


def _check_vector(vec: np.ndarray, dim: int, context: str) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != dim:
        raise DataError(f"{context}: expected a {dim}-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{context}: embedding contains non-finite values")
    return arr
