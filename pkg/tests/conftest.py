"""Shared fixtures and independent reference implementations.

Oracles here are deliberately written against plain numpy/python (no
scipy, no engine internals) so they stay independent of the code paths
they check.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from toolgraph.dataio import Corpus, InstructionRecord, ToolRecord


def dense_adjacency(pairs, num_instructions, num_tools) -> np.ndarray:
    """0/1 symmetric adjacency over unified indexing, built naively."""
    n = num_instructions + num_tools
    dense = np.zeros((n, n), dtype=np.float64)
    for q, t in pairs:
        dense[q, num_instructions + t] = 1.0
        dense[num_instructions + t, q] = 1.0
    return dense


def dense_normalized_adjacency(pairs, num_instructions, num_tools) -> np.ndarray:
    dense = dense_adjacency(pairs, num_instructions, num_tools)
    deg = dense.sum(axis=1)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return inv_sqrt[:, None] * dense * inv_sqrt[None, :]


def dense_propagation(adj_dense, base, num_layers) -> list[np.ndarray]:
    layers = [base]
    for _ in range(num_layers):
        layers.append(adj_dense @ layers[-1])
    return layers


def cosine_oracle(a, b) -> float:
    """Scalar-loop cosine, independent of the engine's vectorized path."""
    dot = math.fsum(float(x) * float(y) for x, y in zip(a, b))
    na = math.sqrt(math.fsum(float(x) ** 2 for x in a))
    nb = math.sqrt(math.fsum(float(y) ** 2 for y in b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


def random_bipartite(rng, max_instructions=12, max_tools=10, edge_prob=0.3):
    """Random pair list (with duplicates) plus its node counts."""
    n = int(rng.integers(1, max_instructions + 1))
    m = int(rng.integers(1, max_tools + 1))
    pairs = [
        (q, t)
        for q in range(n)
        for t in range(m)
        if rng.random() < edge_prob
    ]
    # sprinkle duplicates to exercise dedup
    if pairs:
        dup = [pairs[int(rng.integers(0, len(pairs)))] for _ in range(3)]
        pairs = pairs + dup
    return pairs, n, m


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def tiny_corpus() -> Corpus:
    """Two instructions, three tools; t2 unreferenced."""
    return Corpus(
        instructions=(
            InstructionRecord("q0", "resize and crop the image", ("t0", "t1")),
            InstructionRecord("q1", "crop a photo to square", ("t1",)),
        ),
        tools=(
            ToolRecord("t0", "resizer", "change image dimensions"),
            ToolRecord("t1", "cropper", "cut a region out of an image"),
            ToolRecord("t2", "rotator", "rotate an image by an angle"),
        ),
    )
