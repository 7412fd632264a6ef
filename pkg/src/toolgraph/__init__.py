"""Graph-based tool retrieval with inductive cold-start alignment.

Build a bipartite instruction-tool graph from observed interactions,
propagate text embeddings over it to obtain relational features, align
out-of-training nodes by feature transfer (no retraining), and answer
queries with candidate filtering plus graph-embedding ranking.
"""

from .align import (
    AlignedIndex,
    AlignedRow,
    CandidateInstructions,
    CandidateTools,
    UnseenNodeSpec,
    align_unseen_instruction,
    align_unseen_tool,
    build_index,
    collect_candidate_tools,
    cosine_similarity,
    find_candidate_instructions,
    frequency_weights,
    softmax_weights,
    transfer_embedding,
)
from .dataio import (
    Corpus,
    InstructionRecord,
    SplitResult,
    SplitSpec,
    ToolRecord,
    hash_encoder,
    load_corpus,
    make_split,
    read_embeddings,
    write_embeddings,
)
from .errors import DataError, InvariantError, ToolGraphError
from .evaluation import (
    DiagnosticsReport,
    EvalReport,
    cooccurrence_histogram,
    degradation_report,
    evaluate,
    kl_shift,
    overlap_stats,
    precision_at_k,
    recall_at_k,
)
from .graph import (
    InteractionGraph,
    NodeKind,
    NodeRef,
    PropagationConfig,
    build_graph,
    merge_layers,
    normalized_adjacency,
    propagate,
    relational_features,
)
from .retrieval import (
    RetrievalConfig,
    RetrievalResult,
    flat_cosine_baseline,
    rank_tools,
    retrieve,
    retrieve_batch,
    select_candidate_tools,
)
from .store import load_index, save_index

__all__ = [name for name in dir() if not name.startswith("_")]
