"""Single-file binary container for a sealed index.

Layout: 4-byte magic "LSIX", u16 version, u32 length-prefixed JSON
metadata (counts, ids, config, unseen bookkeeping), then raw
little-endian arrays in a fixed order: graph CSR (indptr, indices, both
i64), the three training matrices (f64), and the unseen text/graph
blocks (f64). Everything is written deterministically so rebuilding the
same index yields the same bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .align import AlignedIndex, UnseenBlock
from .errors import DataError
from .graph import InteractionGraph, PropagationConfig

INDEX_MAGIC = b"LSIX"
INDEX_VERSION = 1


def save_index(index: AlignedIndex, path) -> None:
    meta = {
        "num_instructions": index.num_instructions,
        "num_tools": index.num_tools,
        "dim": index.dim,
        "num_stored_neighbors": int(len(index.graph.indices)),
        "instruction_ids": list(index.instruction_ids),
        "tool_ids": list(index.tool_ids),
        "config": {
            "num_layers": index.config.num_layers,
            "layer_coefficients": list(index.config.layer_coefficients),
        },
        "unseen_tools": {
            "ids": list(index.unseen_tools.external_ids),
            "fallback": list(index.unseen_tools.fallback_flags),
        },
        "unseen_instructions": {
            "ids": list(index.unseen_instructions.external_ids),
            "fallback": list(index.unseen_instructions.fallback_flags),
            "associated_tool_ids": [
                list(ids) for ids in index.unseen_instructions.associated_tool_ids
            ],
        },
    }
    raw_meta = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(struct.pack("<HI", INDEX_VERSION, len(raw_meta)))
        fh.write(raw_meta)
        for arr, dtype in _array_sections(index):
            fh.write(np.ascontiguousarray(arr, dtype=dtype).tobytes(order="C"))


def _array_sections(index: AlignedIndex):
    return [
        (index.graph.indptr, "<i8"),
        (index.graph.indices, "<i8"),
        (index.text_embeddings, "<f8"),
        (index.graph_embeddings, "<f8"),
        (index.rel_features, "<f8"),
        (index.unseen_tools.text_embeddings, "<f8"),
        (index.unseen_tools.graph_embeddings, "<f8"),
        (index.unseen_instructions.text_embeddings, "<f8"),
        (index.unseen_instructions.graph_embeddings, "<f8"),
    ]


def load_index(path) -> AlignedIndex:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != INDEX_MAGIC:
        raise DataError(f"{path}: bad magic at offset 0")
    if len(data) < 10:
        raise DataError(f"{path}: truncated header at offset {len(data)}")
    version, meta_len = struct.unpack_from("<HI", data, 4)
    if version != INDEX_VERSION:
        raise DataError(f"{path}: unsupported version {version} at offset 4")
    offset = 10
    if len(data) < offset + meta_len:
        raise DataError(f"{path}: truncated metadata at offset {len(data)}")
    try:
        meta = json.loads(data[offset:offset + meta_len].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: corrupt metadata at offset {offset}: {exc}") from exc
    offset += meta_len

    n = int(meta["num_instructions"])
    m = int(meta["num_tools"])
    dim = int(meta["dim"])
    stored = int(meta["num_stored_neighbors"])
    num_ut = len(meta["unseen_tools"]["ids"])
    num_ui = len(meta["unseen_instructions"]["ids"])

    def take(count: int, dtype: str, shape) -> np.ndarray:
        nonlocal offset
        nbytes = count * np.dtype(dtype).itemsize
        if len(data) < offset + nbytes:
            raise DataError(f"{path}: truncated section at offset {offset}")
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
        offset += nbytes
        out = arr.reshape(shape).copy()
        out.setflags(write=False)
        return out

    indptr = take(n + m + 1, "<i8", (n + m + 1,))
    indices = take(stored, "<i8", (stored,))
    text = take((n + m) * dim, "<f8", (n + m, dim))
    graph_emb = take((n + m) * dim, "<f8", (n + m, dim))
    rel = take((n + m) * dim, "<f8", (n + m, dim))
    ut_text = take(num_ut * dim, "<f8", (num_ut, dim))
    ut_graph = take(num_ut * dim, "<f8", (num_ut, dim))
    ui_text = take(num_ui * dim, "<f8", (num_ui, dim))
    ui_graph = take(num_ui * dim, "<f8", (num_ui, dim))
    if offset != len(data):
        raise DataError(f"{path}: trailing bytes at offset {offset}")

    graph = InteractionGraph(
        num_instructions=n, num_tools=m, indptr=indptr, indices=indices
    )
    config = PropagationConfig(
        num_layers=int(meta["config"]["num_layers"]),
        layer_coefficients=tuple(meta["config"]["layer_coefficients"]),
    )
    return AlignedIndex(
        graph=graph,
        text_embeddings=text,
        graph_embeddings=graph_emb,
        rel_features=rel,
        instruction_ids=tuple(meta["instruction_ids"]),
        tool_ids=tuple(meta["tool_ids"]),
        config=config,
        unseen_tools=UnseenBlock(
            external_ids=tuple(meta["unseen_tools"]["ids"]),
            text_embeddings=ut_text,
            graph_embeddings=ut_graph,
            fallback_flags=tuple(bool(f) for f in meta["unseen_tools"]["fallback"]),
            associated_tool_ids=tuple(() for _ in range(num_ut)),
        ),
        unseen_instructions=UnseenBlock(
            external_ids=tuple(meta["unseen_instructions"]["ids"]),
            text_embeddings=ui_text,
            graph_embeddings=ui_graph,
            fallback_flags=tuple(
                bool(f) for f in meta["unseen_instructions"]["fallback"]
            ),
            associated_tool_ids=tuple(
                tuple(ids) for ids in meta["unseen_instructions"]["associated_tool_ids"]
            ),
        ),
    )
