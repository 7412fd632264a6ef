"""Bipartite instruction-tool interaction graph and embedding propagation.

Nodes live in a unified index space [0, N+M): instruction rows first,
tool rows after. The graph is undirected, deduplicated, and immutable
after construction. Propagation is the parameter-free symmetric-normalized
neighborhood average used by LightGCN-style models: each layer multiplies
the previous layer's embeddings by D^{-1/2} A D^{-1/2}, and the final
representation is a convex combination of all layers.

All arithmetic is float64. Neighbor lists are stored sorted so that
per-row summation order is fixed and results are bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .errors import DataError


class NodeKind(Enum):
    INSTRUCTION = "instruction"
    TOOL = "tool"


@dataclass(frozen=True)
class NodeRef:
    """A node identified by kind plus an index local to that kind."""

    kind: NodeKind
    index: int


@dataclass(frozen=True)
class InteractionGraph:
    """Bipartite graph over instructions and tools.

    ``indptr``/``indices`` form a CSR adjacency over the unified node
    indexing; ``indices`` holds unified neighbor ids sorted ascending
    within each row. Instruction node i occupies unified row i, tool
    node j occupies unified row num_instructions + j.
    """

    num_instructions: int
    num_tools: int
    indptr: np.ndarray
    indices: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.num_instructions + self.num_tools

    @property
    def num_edges(self) -> int:
        """Number of undirected instruction-tool edges."""
        return len(self.indices) // 2

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, node: int) -> np.ndarray:
        """Unified indices adjacent to unified node id, sorted ascending."""
        return self.indices[self.indptr[node]:self.indptr[node + 1]]

    def tool_neighbors(self, instruction: int) -> np.ndarray:
        """Tool-local indices adjacent to an instruction node."""
        return self.neighbors(instruction) - self.num_instructions

    def instruction_neighbors(self, tool: int) -> np.ndarray:
        """Instruction indices adjacent to a tool node."""
        return self.neighbors(self.num_instructions + tool)

    def to_sparse(self) -> sp.csr_matrix:
        data = np.ones(len(self.indices), dtype=np.float64)
        return sp.csr_matrix(
            (data, self.indices, self.indptr),
            shape=(self.num_nodes, self.num_nodes),
        )


def build_graph(
    pairs: list[tuple[int, int]], num_instructions: int, num_tools: int
) -> InteractionGraph:
    """Build a deduplicated symmetric bipartite graph from interaction pairs.

    ``pairs`` holds (instruction_index, tool_index) observations; duplicates
    collapse to a single edge. Raises DataError if an index is out of range,
    naming the offending pair.
    """
    if num_instructions < 0 or num_tools < 0:
        raise DataError("node counts must be non-negative")
    for q, t in pairs:
        if not (0 <= q < num_instructions):
            raise DataError(f"instruction index out of range in pair ({q}, {t})")
        if not (0 <= t < num_tools):
            raise DataError(f"tool index out of range in pair ({q}, {t})")

    n = num_instructions + num_tools
    unique = sorted({(q, num_instructions + t) for q, t in pairs})
    rows = np.empty(2 * len(unique), dtype=np.int64)
    cols = np.empty(2 * len(unique), dtype=np.int64)
    for i, (q, t) in enumerate(unique):
        rows[2 * i], cols[2 * i] = q, t
        rows[2 * i + 1], cols[2 * i + 1] = t, q
    adj = sp.csr_matrix(
        (np.ones(len(rows), dtype=np.float64), (rows, cols)), shape=(n, n)
    )
    adj.sort_indices()
    return InteractionGraph(
        num_instructions=num_instructions,
        num_tools=num_tools,
        indptr=adj.indptr.astype(np.int64),
        indices=adj.indices.astype(np.int64),
    )


def normalized_adjacency(graph: InteractionGraph) -> sp.csr_matrix:
    """Symmetric degree-normalized adjacency D^{-1/2} A D^{-1/2}.

    The entry for edge (u, v) is 1/sqrt(deg(u) * deg(v)). Isolated nodes
    get empty rows: their inverse-sqrt degree is defined as 0.
    """
    adj = graph.to_sparse()
    deg = graph.degrees.astype(np.float64)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    dinv = sp.diags(inv_sqrt)
    norm = (dinv @ adj @ dinv).tocsr()
    norm.sort_indices()
    return norm


@dataclass(frozen=True)
class PropagationConfig:
    """Number of propagation layers and per-layer merge coefficients.

    Coefficients are normalized to sum to 1 at construction; by default
    all K+1 layers (including the input layer) weigh equally.
    """

    num_layers: int = 3
    layer_coefficients: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.num_layers < 0:
            raise DataError("num_layers must be >= 0")
        coeffs = self.layer_coefficients
        if not coeffs:
            coeffs = tuple(1.0 / (self.num_layers + 1) for _ in range(self.num_layers + 1))
        if len(coeffs) != self.num_layers + 1:
            raise DataError(
                f"expected {self.num_layers + 1} coefficients, got {len(coeffs)}"
            )
        if any(c < 0 for c in coeffs):
            raise DataError("layer coefficients must be non-negative")
        total = sum(coeffs)
        if total <= 0:
            raise DataError("layer coefficients must not all be zero")
        if abs(total - 1.0) > 1e-12:
            coeffs = tuple(c / total for c in coeffs)
        object.__setattr__(self, "layer_coefficients", coeffs)


def propagate(
    adj_norm: sp.spmatrix, embeddings: np.ndarray, config: PropagationConfig
) -> list[np.ndarray]:
    """Run K layers of propagation; returns all K+1 layers, input first.

    Layer k+1 is adj_norm @ layer k. No learned transformations are applied.
    """
    embeddings = as_embedding_matrix(embeddings)
    if adj_norm.shape != (embeddings.shape[0], embeddings.shape[0]):
        raise DataError(
            f"adjacency shape {adj_norm.shape} does not match "
            f"{embeddings.shape[0]} embedding rows"
        )
    layers = [embeddings]
    for _ in range(config.num_layers):
        layers.append(adj_norm @ layers[-1])
    return layers


def merge_layers(
    layers: list[np.ndarray], coefficients: tuple[float, ...] | list[float]
) -> np.ndarray:
    """Elementwise weighted sum of propagation layers, in layer order."""
    if len(layers) != len(coefficients):
        raise DataError(
            f"{len(layers)} layers but {len(coefficients)} coefficients"
        )
    shape = layers[0].shape
    for k, layer in enumerate(layers):
        if layer.shape != shape:
            raise DataError(f"layer {k} shape {layer.shape} != {shape}")
    merged = coefficients[0] * layers[0]
    for coeff, layer in zip(coefficients[1:], layers[1:]):
        merged += coeff * layer
    return merged


def relational_features(
    graph_embeddings: np.ndarray, text_embeddings: np.ndarray
) -> np.ndarray:
    """Per-node difference between propagated and raw text embeddings.

    This is the relational component of each node's representation:
    adding it back to the text embeddings reconstructs the graph
    embeddings exactly.
    """
    if graph_embeddings.shape != text_embeddings.shape:
        raise DataError(
            f"shape mismatch {graph_embeddings.shape} != {text_embeddings.shape}"
        )
    return graph_embeddings - text_embeddings


def as_embedding_matrix(values: np.ndarray) -> np.ndarray:
    """Validate and widen an embedding matrix to a finite float64 array."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"embedding matrix must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError("embedding matrix contains non-finite values")
    return arr
