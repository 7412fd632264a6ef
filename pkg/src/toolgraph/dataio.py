"""Corpus loading, split generation, fallback text encoding, and file formats.

The corpus is line-delimited JSON, one record per line, mixing instruction
and tool records distinguished by a "kind" field. Embeddings travel in a
small binary format ("LSEM"): a fixed header, row-major float32 payload,
and a footer of length-prefixed external ids. Values are stored at 32-bit
precision and widened to float64 on load; all computation downstream is
64-bit.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

EMBEDDING_MAGIC = b"LSEM"
EMBEDDING_VERSION = 1

ALLOWED_RATIOS = (0.0, 0.1, 0.2, 0.3)


@dataclass(frozen=True)
class InstructionRecord:
    external_id: str
    text: str
    tool_ids: tuple[str, ...]


@dataclass(frozen=True)
class ToolRecord:
    external_id: str
    name: str
    description: str


@dataclass(frozen=True)
class Corpus:
    instructions: tuple[InstructionRecord, ...]
    tools: tuple[ToolRecord, ...]

    def __post_init__(self):
        _validate_corpus(self.instructions, self.tools)

    @property
    def instruction_ids(self) -> list[str]:
        return [rec.external_id for rec in self.instructions]

    @property
    def tool_ids(self) -> list[str]:
        return [rec.external_id for rec in self.tools]

    def tool_index(self) -> dict[str, int]:
        return {rec.external_id: i for i, rec in enumerate(self.tools)}

    def instruction_index(self) -> dict[str, int]:
        return {rec.external_id: i for i, rec in enumerate(self.instructions)}

    def pairs(self) -> list[tuple[int, int]]:
        """Interaction pairs as (instruction_index, tool_index)."""
        tool_idx = self.tool_index()
        out = []
        for i, rec in enumerate(self.instructions):
            for tid in rec.tool_ids:
                out.append((i, tool_idx[tid]))
        return out


def _validate_corpus(
    instructions: tuple[InstructionRecord, ...], tools: tuple[ToolRecord, ...]
) -> None:
    seen: set[str] = set()
    for rec in instructions:
        if rec.external_id in seen:
            raise DataError(f"duplicate instruction id {rec.external_id!r}")
        seen.add(rec.external_id)
    seen = set()
    for rec in tools:
        if rec.external_id in seen:
            raise DataError(f"duplicate tool id {rec.external_id!r}")
        seen.add(rec.external_id)
    dangling = sorted(
        {tid for rec in instructions for tid in rec.tool_ids} - seen
    )
    if dangling:
        raise DataError(f"unresolved tool ids: {', '.join(dangling)}")


def tool_document(tool: ToolRecord) -> str:
    """Text representation of a tool: name and description, newline-joined."""
    return f"{tool.name}\n{tool.description}"


def load_corpus(path) -> Corpus:
    """Read a line-delimited corpus file, validating ids and references.

    Malformed lines and duplicate ids are reported with their line number;
    dangling tool references are collected and reported together.
    """
    instructions: list[InstructionRecord] = []
    tools: list[ToolRecord] = []
    seen_instr: dict[str, int] = {}
    seen_tool: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed record: {exc}") from exc
            kind = obj.get("kind")
            try:
                if kind == "instruction":
                    rec = InstructionRecord(
                        external_id=str(obj["id"]),
                        text=str(obj["text"]),
                        tool_ids=tuple(str(t) for t in obj["tool_ids"]),
                    )
                    if rec.external_id in seen_instr:
                        raise DataError(
                            f"{path}:{lineno}: duplicate instruction id "
                            f"{rec.external_id!r} (first seen on line "
                            f"{seen_instr[rec.external_id]})"
                        )
                    seen_instr[rec.external_id] = lineno
                    instructions.append(rec)
                elif kind == "tool":
                    rec = ToolRecord(
                        external_id=str(obj["id"]),
                        name=str(obj["name"]),
                        description=str(obj["description"]),
                    )
                    if rec.external_id in seen_tool:
                        raise DataError(
                            f"{path}:{lineno}: duplicate tool id "
                            f"{rec.external_id!r} (first seen on line "
                            f"{seen_tool[rec.external_id]})"
                        )
                    seen_tool[rec.external_id] = lineno
                    tools.append(rec)
                else:
                    raise DataError(f"{path}:{lineno}: unknown record kind {kind!r}")
            except KeyError as exc:
                raise DataError(f"{path}:{lineno}: missing field {exc}") from exc
    dangling = sorted(
        {tid for rec in instructions for tid in rec.tool_ids} - set(seen_tool)
    )
    if dangling:
        raise DataError(f"{path}: unresolved tool ids: {', '.join(dangling)}")
    return Corpus(instructions=tuple(instructions), tools=tuple(tools))


def dump_corpus(corpus: Corpus, path) -> None:
    """Write a corpus in the line-delimited format, instructions first."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in corpus.instructions:
            fh.write(json.dumps({
                "kind": "instruction",
                "id": rec.external_id,
                "text": rec.text,
                "tool_ids": list(rec.tool_ids),
            }, sort_keys=True) + "\n")
        for rec in corpus.tools:
            fh.write(json.dumps({
                "kind": "tool",
                "id": rec.external_id,
                "name": rec.name,
                "description": rec.description,
            }, sort_keys=True) + "\n")


@dataclass(frozen=True)
class SplitSpec:
    """Parameters for a train/test split with optional held-out tools."""

    unseen_ratio: float
    seed: int
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.unseen_ratio not in ALLOWED_RATIOS:
            raise DataError(
                f"unseen_ratio must be one of {ALLOWED_RATIOS}, got {self.unseen_ratio}"
            )
        if not (0.0 < self.test_fraction < 1.0):
            raise DataError("test_fraction must be in (0, 1)")


@dataclass(frozen=True)
class SplitResult:
    train: Corpus
    test: Corpus
    unseen_tool_ids: tuple[str, ...]
    removed_instructions: tuple[InstructionRecord, ...] = field(default=())


def make_split(corpus: Corpus, spec: SplitSpec) -> SplitResult:
    """Partition a corpus into train/test, optionally holding out test tools.

    The base test set is drawn once per seed and is byte-identical across
    ratios: instructions are partitioned by a seeded PRNG, then test
    instructions referencing tools absent from the training pairs are
    dropped. At ratio 0 this is the whole split. At higher ratios,
    ceil(ratio * |test tools|) of the tools referenced by the test set are
    held out: they are removed from the training tool list and every
    training instruction touching one is removed entirely (those removed
    records accompany the held-out tools at alignment time).
    """
    if not corpus.instructions or not corpus.tools:
        raise DataError("cannot split an empty corpus")
    seq = np.random.SeedSequence(spec.seed)
    part_rng, unseen_rng = (np.random.default_rng(s) for s in seq.spawn(2))

    n = len(corpus.instructions)
    num_test = max(1, int(round(spec.test_fraction * n)))
    if num_test >= n:
        raise DataError("test_fraction leaves no training instructions")
    order = part_rng.permutation(n)
    test_pos = sorted(order[:num_test].tolist())
    train_pos = sorted(order[num_test:].tolist())
    train_instr = [corpus.instructions[i] for i in train_pos]
    base_test = [corpus.instructions[i] for i in test_pos]

    train_tool_ids = {tid for rec in train_instr for tid in rec.tool_ids}
    test_instr = [
        rec for rec in base_test
        if all(tid in train_tool_ids for tid in rec.tool_ids)
    ]
    if not test_instr:
        raise DataError("transductive filter removed every test instruction")

    test_tool_ids = sorted({tid for rec in test_instr for tid in rec.tool_ids})
    num_unseen = ceil_ratio_count(spec.unseen_ratio, len(test_tool_ids))
    perm = unseen_rng.permutation(len(test_tool_ids))
    unseen = frozenset(test_tool_ids[i] for i in perm[:num_unseen])

    kept_train = [
        rec for rec in train_instr
        if not any(tid in unseen for tid in rec.tool_ids)
    ]
    removed = [
        rec for rec in train_instr
        if any(tid in unseen for tid in rec.tool_ids)
    ]
    train_tools = tuple(
        rec for rec in corpus.tools if rec.external_id not in unseen
    )
    test_tools = tuple(
        rec for rec in corpus.tools if rec.external_id in set(test_tool_ids)
    )
    return SplitResult(
        train=Corpus(instructions=tuple(kept_train), tools=train_tools),
        test=Corpus(instructions=tuple(test_instr), tools=test_tools),
        unseen_tool_ids=tuple(sorted(unseen)),
        removed_instructions=tuple(removed),
    )


def hash_encoder(text: str, dim: int) -> np.ndarray:
    """Deterministic character-trigram feature hashing, L2-normalized.

    A dependency-free stand-in for learned text encoders: identical text
    always yields the identical vector, and texts sharing trigrams land
    near each other. Empty input maps to the zero vector.
    """
    if dim < 8:
        raise DataError("hash encoder dimension must be >= 8")
    vec = np.zeros(dim, dtype=np.float64)
    grams = (
        [text[i:i + 3] for i in range(len(text) - 2)] if len(text) >= 3
        else ([text] if text else [])
    )
    for gram in grams:
        digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
        h = int.from_bytes(digest, "little")
        sign = 1.0 if (h >> 63) & 1 else -1.0
        vec[h % dim] += sign
    norm = float(np.linalg.norm(vec))
    if norm > 0:
        vec /= norm
    return vec


def encode_corpus(corpus: Corpus, dim: int) -> tuple[np.ndarray, list[str]]:
    """Hash-encode every corpus text: instruction rows first, then tools."""
    rows = [hash_encoder(rec.text, dim) for rec in corpus.instructions]
    rows += [hash_encoder(tool_document(rec), dim) for rec in corpus.tools]
    ids = corpus.instruction_ids + corpus.tool_ids
    matrix = np.vstack(rows) if rows else np.zeros((0, dim), dtype=np.float64)
    return matrix, ids


def write_embeddings(path, matrix: np.ndarray, ids: list[str]) -> None:
    """Write an embedding file: header, float32 payload, id footer."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise DataError("embedding matrix must be 2-D")
    rows, dim = matrix.shape
    if len(ids) != rows:
        raise DataError(f"{len(ids)} ids for {rows} rows")
    if len(set(ids)) != len(ids):
        raise DataError("embedding ids must be unique")
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<HQI", EMBEDDING_VERSION, rows, dim))
        fh.write(matrix.astype("<f4").tobytes(order="C"))
        for ext_id in ids:
            raw = ext_id.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)


def read_embeddings(path) -> tuple[np.ndarray, list[str]]:
    """Read an embedding file back; values widen to float64.

    Corruption is reported with the byte offset where parsing failed.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != EMBEDDING_MAGIC:
        raise DataError(f"{path}: bad magic at offset 0")
    header_size = 4 + struct.calcsize("<HQI")
    if len(data) < header_size:
        raise DataError(f"{path}: truncated header at offset {len(data)}")
    version, rows, dim = struct.unpack_from("<HQI", data, 4)
    if version != EMBEDDING_VERSION:
        raise DataError(f"{path}: unsupported version {version} at offset 4")
    payload_size = rows * dim * 4
    if len(data) < header_size + payload_size:
        raise DataError(f"{path}: truncated payload at offset {len(data)}")
    payload = np.frombuffer(
        data, dtype="<f4", count=rows * dim, offset=header_size
    ).reshape(rows, dim)
    offset = header_size + payload_size
    ids: list[str] = []
    for _ in range(rows):
        if len(data) < offset + 4:
            raise DataError(f"{path}: truncated id footer at offset {offset}")
        (length,) = struct.unpack_from("<I", data, offset)
        offset += 4
        if len(data) < offset + length:
            raise DataError(f"{path}: truncated id footer at offset {offset}")
        ids.append(data[offset:offset + length].decode("utf-8"))
        offset += length
    if offset != len(data):
        raise DataError(f"{path}: trailing bytes at offset {offset}")
    return payload.astype(np.float64), ids


def corpus_pairs_scan(corpus: Corpus) -> list[tuple[str, str]]:
    """All (instruction_id, tool_id) pairs by exhaustive record scan."""
    return [
        (rec.external_id, tid)
        for rec in corpus.instructions
        for tid in rec.tool_ids
    ]


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def ceil_ratio_count(ratio: float, total: int) -> int:
    """ceil(ratio * total) in exact integer arithmetic for tenth ratios."""
    tenths = int(round(ratio * 10))
    if not math.isclose(tenths / 10, ratio):
        raise DataError(f"ratio {ratio} is not a multiple of 0.1")
    return (tenths * total + 9) // 10
