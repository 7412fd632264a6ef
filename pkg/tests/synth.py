"""Synthetic clustered corpora and end-to-end pipeline drivers for tests.

Tools come in functional clusters; instructions reference 1-3 tools of one
cluster and share the cluster's vocabulary, mentioning each chosen tool's
own keyword only some of the time. Text similarity therefore finds the
right neighborhood but is noisy about the exact tool, which is the regime
where relational signal pays off.
"""

from __future__ import annotations

import numpy as np

from toolgraph.align import AlignedIndex, UnseenNodeSpec, build_index
from toolgraph.dataio import (
    Corpus,
    InstructionRecord,
    SplitResult,
    SplitSpec,
    ToolRecord,
    hash_encoder,
    make_split,
    tool_document,
)
from toolgraph.evaluation import EvalReport, evaluate
from toolgraph.graph import NodeKind, PropagationConfig, build_graph
from toolgraph.retrieval import (
    RetrievalConfig,
    flat_cosine_baseline,
    retrieve_batch,
)

DIM = 128

_LETTERS = list("abcdefghijklmnopqrstuvwxyz")


def _word(rng) -> str:
    return "".join(rng.choice(_LETTERS, size=int(rng.integers(4, 8))))


def clustered_corpus(
    seed: int,
    num_clusters: int = 8,
    num_instructions: int = 400,
    tools_per_cluster: int = 4,
    mention_prob: float = 0.75,
) -> Corpus:
    rng = np.random.default_rng(seed)
    fillers = [_word(rng) for _ in range(8)]
    themes = [[_word(rng) for _ in range(10)] for _ in range(num_clusters)]
    specifics = [
        [[_word(rng), _word(rng)] for _ in range(tools_per_cluster)]
        for _ in range(num_clusters)
    ]
    tools = []
    for c in range(num_clusters):
        for k in range(tools_per_cluster):
            first, second = specifics[c][k]
            theme = rng.choice(themes[c], size=3, replace=False)
            desc = " ".join([*theme, second, str(rng.choice(fillers))])
            tools.append(ToolRecord(f"c{c}_t{k}", f"{first} {theme[0]}", desc))

    instructions = []
    probs = np.array([0.6, 0.25, 0.15])
    for i in range(num_instructions):
        c = i % num_clusters
        count = int(rng.choice([1, 2, 3], p=probs))
        chosen = sorted(
            rng.choice(tools_per_cluster, size=count, replace=False).tolist()
        )
        words = list(rng.choice(themes[c], size=3, replace=False))
        for k in chosen:
            if rng.random() < mention_prob:
                words.append(specifics[c][k][0])
            if rng.random() < 0.3:
                words.append(specifics[c][k][1])
        words += list(rng.choice(fillers, size=2, replace=False))
        words.append(_word(rng))
        instructions.append(InstructionRecord(
            f"q{i}", " ".join(words), tuple(f"c{c}_t{k}" for k in chosen)
        ))
    return Corpus(instructions=tuple(instructions), tools=tuple(tools))


def encode_texts(corpus: Corpus, dim: int = DIM) -> dict[str, np.ndarray]:
    """Hash embeddings for every record, keyed by external id."""
    vectors = {
        rec.external_id: hash_encoder(rec.text, dim)
        for rec in corpus.instructions
    }
    for rec in corpus.tools:
        vectors[rec.external_id] = hash_encoder(tool_document(rec), dim)
    return vectors


def index_from_corpus(
    corpus: Corpus, vectors: dict[str, np.ndarray], num_layers: int = 3
) -> AlignedIndex:
    graph = build_graph(
        corpus.pairs(), len(corpus.instructions), len(corpus.tools)
    )
    matrix = np.vstack([
        vectors[ext] for ext in corpus.instruction_ids + corpus.tool_ids
    ])
    return build_index(
        graph, matrix, corpus.instruction_ids, corpus.tool_ids,
        PropagationConfig(num_layers=num_layers),
    )


def unseen_specs(
    split: SplitResult, full_corpus: Corpus, vectors: dict[str, np.ndarray]
) -> list[UnseenNodeSpec]:
    """Alignment batch for a split: held-out tools bridged by the training
    instructions that were removed with them, plus those instructions."""
    tool_by_id = {rec.external_id: rec for rec in full_corpus.tools}
    specs: list[UnseenNodeSpec] = []
    for tool_id in split.unseen_tool_ids:
        assert tool_id in tool_by_id
        bridges = tuple(
            vectors[rec.external_id]
            for rec in split.removed_instructions
            if tool_id in rec.tool_ids
        )
        specs.append(UnseenNodeSpec(
            external_id=tool_id, kind=NodeKind.TOOL,
            text_embedding=vectors[tool_id],
            associated_instruction_embeddings=bridges,
        ))
    unseen = set(split.unseen_tool_ids)
    for rec in split.removed_instructions:
        specs.append(UnseenNodeSpec(
            external_id=rec.external_id, kind=NodeKind.INSTRUCTION,
            text_embedding=vectors[rec.external_id],
            associated_tool_ids=tuple(t for t in rec.tool_ids if t in unseen),
        ))
    return specs


def run_pipeline(
    corpus: Corpus,
    ratio: float,
    seed: int,
    config: RetrievalConfig | None = None,
    insert_unseen: bool = True,
    num_layers: int = 3,
) -> EvalReport:
    """Full split -> build -> align -> retrieve -> evaluate, in memory."""
    config = config or RetrievalConfig()
    vectors = encode_texts(corpus)
    split = make_split(corpus, SplitSpec(unseen_ratio=ratio, seed=seed))
    index = index_from_corpus(split.train, vectors, num_layers=num_layers)
    if insert_unseen and split.unseen_tool_ids:
        index, _ = index.align_batch(
            unseen_specs(split, corpus, vectors), config.top_i
        )
    queries = [
        (rec.external_id, vectors[rec.external_id])
        for rec in split.test.instructions
    ]
    results = retrieve_batch(queries, index, config)
    truth = {
        rec.external_id: set(rec.tool_ids) for rec in split.test.instructions
    }
    return evaluate([(r.query_id, [t for t, _ in r.ranked]) for r in results], truth)


def run_flat_baseline(
    corpus: Corpus, ratio: float, seed: int, top_k: int = 7
) -> EvalReport:
    """Text-cosine retrieval with no cold-start insertion: the repository
    is whatever the training corpus contains."""
    vectors = encode_texts(corpus)
    split = make_split(corpus, SplitSpec(unseen_ratio=ratio, seed=seed))
    index = index_from_corpus(split.train, vectors)
    results = [
        flat_cosine_baseline(
            rec.external_id, vectors[rec.external_id], index, top_k
        )
        for rec in split.test.instructions
    ]
    truth = {
        rec.external_id: set(rec.tool_ids) for rec in split.test.instructions
    }
    return evaluate([(r.query_id, [t for t, _ in r.ranked]) for r in results], truth)
