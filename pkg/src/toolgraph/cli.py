"""Command-line pipeline: split, build, align, retrieve, evaluate, diagnose.

Every command records a run manifest listing its configuration, input
digests, produced artifacts (with digests), and wall-clock timings, so a
run can be reproduced and its outputs audited. Exit codes: 0 success,
1 usage error, 2 data validation error, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import dataio
from .align import UnseenNodeSpec, build_index
from .errors import DataError, InvariantError
from .evaluation import (
    DiagnosticsReport,
    cooccurrence_histogram,
    degradation_report,
    evaluate,
    kl_shift,
    overlap_stats,
)
from .graph import NodeKind, PropagationConfig, build_graph
from .retrieval import RetrievalConfig, retrieve_batch
from .store import load_index, save_index

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this pipeline reserves 2 for data
    validation, so remap usage problems to exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _Timer:
    def __init__(self):
        self.timings: dict[str, float] = {}
        self._start = time.perf_counter()

    def mark(self, label: str) -> None:
        now = time.perf_counter()
        self.timings[label] = round(now - self._start, 6)
        self._start = now


def _write_manifest(
    path: Path,
    command: str,
    config: dict,
    seed: int,
    inputs: list[Path],
    artifacts: list[Path],
    timings: dict[str, float],
    extra: dict | None = None,
) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(p): dataio.sha256_file(p) for p in inputs},
        "artifacts": {str(p): dataio.sha256_file(p) for p in artifacts},
        "timings_seconds": timings,
        "extra": extra or {},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _manifest_path(args, default: Path) -> Path:
    return Path(args.manifest_out) if args.manifest_out else default


def _load_jsonl(path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed record: {exc}") from exc
    return records


class _EmbeddingSource:
    """Resolves external ids (or inline text) to float64 vectors, either
    from an embedding file or via the hash encoder."""

    def __init__(self, args, *, dim_hint: int | None = None):
        self.encoder = args.encoder
        self.path = getattr(args, "embeddings", None)
        if self.encoder == "hash":
            self.dim = args.dim or dim_hint
            if not self.dim:
                raise DataError("--encoder hash requires --dim")
            self.by_id: dict[str, np.ndarray] = {}
        elif self.path:
            matrix, ids = dataio.read_embeddings(self.path)
            self.dim = matrix.shape[1]
            self.by_id = {ext: matrix[i] for i, ext in enumerate(ids)}
        else:
            raise DataError("provide --embeddings FILE or --encoder hash")

    def inputs(self) -> list[Path]:
        return [Path(self.path)] if self.path else []

    def from_text(self, text: str) -> np.ndarray:
        if self.encoder != "hash":
            raise DataError("inline text requires --encoder hash")
        return dataio.hash_encoder(text, self.dim)

    def lookup(self, ref: str) -> np.ndarray:
        if ref not in self.by_id:
            raise DataError(f"embedding id {ref!r} not found")
        return self.by_id[ref]

    def resolve_record(self, record: dict, context: str) -> np.ndarray:
        if "text" in record and self.encoder == "hash":
            return self.from_text(record["text"])
        ref = record.get(
            "text_embedding_ref", record.get("external_id", record.get("id"))
        )
        if ref is None:
            raise DataError(f"{context}: no embedding reference or text")
        return self.lookup(str(ref))


def _corpus_embeddings(corpus: dataio.Corpus, source: _EmbeddingSource) -> np.ndarray:
    """Embedding rows in unified order (instructions then tools)."""
    if source.encoder == "hash":
        matrix, _ = dataio.encode_corpus(corpus, source.dim)
        return matrix
    missing = [
        ext for ext in corpus.instruction_ids + corpus.tool_ids
        if ext not in source.by_id
    ]
    if missing:
        raise DataError(
            "embedding file does not cover the corpus; missing ids: "
            + ", ".join(sorted(missing))
        )
    rows = [source.by_id[ext] for ext in corpus.instruction_ids + corpus.tool_ids]
    return np.vstack(rows)


def cmd_split(args) -> int:
    timer = _Timer()
    corpus = dataio.load_corpus(args.corpus)
    spec = dataio.SplitSpec(
        unseen_ratio=args.ratio, seed=args.seed, test_fraction=args.test_fraction
    )
    result = dataio.make_split(corpus, spec)
    timer.mark("split")

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_path = out / "train.jsonl"
    test_path = out / "test.jsonl"
    removed_path = out / "removed_instructions.jsonl"
    split_manifest = out / "split_manifest.json"
    dataio.dump_corpus(result.train, train_path)
    dataio.dump_corpus(result.test, test_path)
    with open(removed_path, "w", encoding="utf-8") as fh:
        for rec in result.removed_instructions:
            fh.write(json.dumps({
                "kind": "instruction", "id": rec.external_id,
                "text": rec.text, "tool_ids": list(rec.tool_ids),
            }, sort_keys=True) + "\n")
    with open(split_manifest, "w", encoding="utf-8") as fh:
        json.dump({
            "ratio": spec.unseen_ratio,
            "seed": spec.seed,
            "test_fraction": spec.test_fraction,
            "unseen_tool_ids": list(result.unseen_tool_ids),
            "train_instructions": len(result.train.instructions),
            "train_tools": len(result.train.tools),
            "test_instructions": len(result.test.instructions),
            "test_tools": len(result.test.tools),
            "removed_instructions": len(result.removed_instructions),
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")
    timer.mark("write")
    _write_manifest(
        _manifest_path(args, out / "run_manifest.json"),
        "split",
        {"ratio": args.ratio, "test_fraction": args.test_fraction},
        args.seed,
        [Path(args.corpus)],
        [train_path, test_path, removed_path, split_manifest],
        timer.timings,
    )
    print(
        f"split: {len(result.train.instructions)} train / "
        f"{len(result.test.instructions)} test instructions, "
        f"{len(result.unseen_tool_ids)} unseen tools -> {out}"
    )
    return EXIT_OK


def cmd_build(args) -> int:
    timer = _Timer()
    corpus = dataio.load_corpus(args.train)
    source = _EmbeddingSource(args)
    matrix = _corpus_embeddings(corpus, source)
    timer.mark("load")

    coeffs = (
        tuple(float(c) for c in args.coefficients.split(","))
        if args.coefficients else ()
    )
    config = PropagationConfig(num_layers=args.layers, layer_coefficients=coeffs)
    graph = build_graph(
        corpus.pairs(), len(corpus.instructions), len(corpus.tools)
    )
    index = build_index(
        graph, matrix, corpus.instruction_ids, corpus.tool_ids, config
    )
    timer.mark("build")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_index(index, out)
    timer.mark("write")
    _write_manifest(
        _manifest_path(args, out.with_suffix(out.suffix + ".manifest.json")),
        "build",
        {
            "layers": config.num_layers,
            "coefficients": list(config.layer_coefficients),
            "encoder": args.encoder,
            "dim": index.dim,
        },
        args.seed,
        [Path(args.train)] + source.inputs(),
        [out],
        timer.timings,
    )
    print(
        f"build: {index.num_instructions} instructions, {index.num_tools} tools, "
        f"{index.graph.num_edges} edges, dim {index.dim} -> {out}"
    )
    return EXIT_OK


def _parse_batch(records: list[dict], source: _EmbeddingSource) -> list[UnseenNodeSpec]:
    """Turn batch records into UnseenNodeSpecs.

    A tool's associated instruction reference may point at another record
    in the same batch (linking the pair for query-time filtering) or at a
    row of the embedding file.
    """
    by_id = {}
    for i, rec in enumerate(records, start=1):
        ext = rec.get("external_id")
        if not ext:
            raise DataError(f"batch record {i}: missing external_id")
        if ext in by_id:
            raise DataError(f"batch record {i}: duplicate external_id {ext!r}")
        by_id[ext] = rec

    def _embedding_of(ref: str, context: str) -> np.ndarray:
        if ref in by_id:
            return source.resolve_record(by_id[ref], context)
        return source.lookup(ref)

    tool_links: dict[str, list[str]] = {}
    for rec in records:
        if rec.get("kind") == "tool":
            refs = rec.get("associated_instruction_embedding_ref", [])
            refs = [refs] if isinstance(refs, str) else list(refs)
            for ref in refs:
                if ref in by_id and by_id[ref].get("kind") == "instruction":
                    tool_links.setdefault(ref, []).append(rec["external_id"])

    specs = []
    for i, rec in enumerate(records, start=1):
        ext = rec["external_id"]
        kind = rec.get("kind")
        context = f"batch record {i} ({ext})"
        text_emb = source.resolve_record(rec, context)
        if kind == "tool":
            refs = rec.get("associated_instruction_embedding_ref", [])
            refs = [refs] if isinstance(refs, str) else list(refs)
            if not refs:
                raise DataError(
                    f"{context}: unseen tool needs associated_instruction_embedding_ref"
                )
            assoc = tuple(_embedding_of(ref, context) for ref in refs)
            specs.append(UnseenNodeSpec(
                external_id=ext, kind=NodeKind.TOOL, text_embedding=text_emb,
                associated_instruction_embeddings=assoc,
            ))
        elif kind == "instruction":
            explicit = tuple(rec.get("associated_tool_ids", ()))
            derived = tuple(tool_links.get(ext, ()))
            merged = explicit + tuple(t for t in derived if t not in explicit)
            specs.append(UnseenNodeSpec(
                external_id=ext, kind=NodeKind.INSTRUCTION,
                text_embedding=text_emb, associated_tool_ids=merged,
            ))
        else:
            raise DataError(f"{context}: unknown kind {kind!r}")
    return specs


def cmd_align(args) -> int:
    timer = _Timer()
    index = load_index(args.index)
    records = _load_jsonl(args.batch)
    source = _EmbeddingSource(args, dim_hint=index.dim)
    specs = _parse_batch(records, source)
    timer.mark("load")
    index, rows = index.align_batch(specs, args.top_i)
    timer.mark("align")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_index(index, out)
    timer.mark("write")
    fallbacks = sum(1 for r in rows if r.fallback)
    _write_manifest(
        _manifest_path(args, out.with_suffix(out.suffix + ".manifest.json")),
        "align",
        {"top_i": args.top_i, "encoder": args.encoder},
        args.seed,
        [Path(args.index), Path(args.batch)] + source.inputs(),
        [out],
        timer.timings,
        extra={
            "aligned_tools": sum(1 for r in rows if r.kind is NodeKind.TOOL),
            "aligned_instructions": sum(
                1 for r in rows if r.kind is NodeKind.INSTRUCTION
            ),
            "fallback_count": fallbacks,
        },
    )
    print(f"align: {len(rows)} rows appended ({fallbacks} fallbacks) -> {out}")
    return EXIT_OK


def _parse_queries(
    records: list[dict], source: _EmbeddingSource
) -> list[tuple[str, np.ndarray]]:
    """Query batches are {external_id, text_embedding_ref|text} records; a
    corpus file works directly (its tool records are ignored)."""
    queries = []
    for i, rec in enumerate(records, start=1):
        if rec.get("kind") == "tool":
            continue
        ext = rec.get("external_id", rec.get("id"))
        if not ext:
            raise DataError(f"query record {i}: missing external_id")
        queries.append((str(ext), source.resolve_record(rec, f"query {ext}")))
    return queries


def cmd_retrieve(args) -> int:
    timer = _Timer()
    index = load_index(args.index)
    source = _EmbeddingSource(args, dim_hint=index.dim)
    queries = _parse_queries(_load_jsonl(args.queries), source)
    if not queries:
        raise DataError(f"{args.queries}: no queries")
    config = RetrievalConfig(
        top_t=args.top_t, top_k=args.top_k, top_i=args.top_i,
        disable_instruction_transfer=args.no_instruction_transfer,
        disable_tool_transfer=args.no_tool_transfer,
        disable_relational_constraint=args.no_relational_constraint,
    )
    timer.mark("load")
    results = retrieve_batch(queries, index, config, threads=args.threads)
    timer.mark("retrieve")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for res in results:
            fh.write(json.dumps({
                "query_id": res.query_id,
                "ranked": [[tid, score] for tid, score in res.ranked],
                "candidate_count": len(res.candidate_ids),
                "flags": list(res.flags),
            }, sort_keys=True) + "\n")
    timer.mark("write")
    _write_manifest(
        _manifest_path(args, out.with_suffix(out.suffix + ".manifest.json")),
        "retrieve",
        {
            "top_t": config.top_t, "top_k": config.top_k, "top_i": config.top_i,
            "disable_instruction_transfer": config.disable_instruction_transfer,
            "disable_tool_transfer": config.disable_tool_transfer,
            "disable_relational_constraint": config.disable_relational_constraint,
            "encoder": args.encoder,
            "threads": args.threads,
        },
        args.seed,
        [Path(args.index), Path(args.queries)] + source.inputs(),
        [out],
        timer.timings,
    )
    print(f"retrieve: {len(results)} queries -> {out}")
    return EXIT_OK


def _truth_from_corpus(path) -> dict[str, set[str]]:
    corpus = dataio.load_corpus(path)
    return {rec.external_id: set(rec.tool_ids) for rec in corpus.instructions}


def _load_results(path) -> list[tuple[str, list[str]]]:
    out = []
    for rec in _load_jsonl(path):
        if "query_id" not in rec or "ranked" not in rec:
            raise DataError(f"{path}: record missing query_id/ranked")
        out.append((rec["query_id"], [tid for tid, _ in rec["ranked"]]))
    if not out:
        raise DataError(f"{path}: empty results file")
    return out


def cmd_evaluate(args) -> int:
    timer = _Timer()
    truth = _truth_from_corpus(args.truth)
    cutoffs = tuple(int(c) for c in args.cutoffs.split(","))
    labeled: dict[float, Path] = {}
    for item in args.results:
        if "=" in item:
            ratio_str, path = item.split("=", 1)
            labeled[float(ratio_str)] = Path(path)
        else:
            labeled[0.0] = Path(item)
    timer.mark("load")

    reports = {}
    for ratio, path in labeled.items():
        start = time.perf_counter()
        results = _load_results(path)
        reports[ratio] = evaluate(
            results, truth, cutoffs,
            runtime_seconds=round(time.perf_counter() - start, 6),
        )
    timer.mark("evaluate")

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_json = out / "report.json"
    report_txt = out / "report.txt"
    artifacts = [report_json, report_txt]
    payload = {
        f"{ratio:.1f}": rep.to_dict() for ratio, rep in sorted(reports.items())
    }
    with open(report_json, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    lines = []
    header = ["metric"] + [f"ratio {r:.1f}" for r in sorted(reports)]
    lines.append("  ".join(f"{h:>12}" for h in header))
    metric_names = list(next(iter(reports.values())).metrics)
    for name in metric_names:
        row = [name] + [
            f"{reports[r].metrics[name]:.4f}" for r in sorted(reports)
        ]
        lines.append("  ".join(f"{c:>12}" for c in row))
    avg_row = ["average"] + [f"{reports[r].average:.4f}" for r in sorted(reports)]
    lines.append("  ".join(f"{c:>12}" for c in avg_row))
    report_txt.write_text("\n".join(lines) + "\n", encoding="utf-8")

    if len(reports) > 1 and 0.0 in reports:
        degradation = degradation_report(reports)
        grid_csv = out / "degradation.csv"
        grid_csv.write_text(degradation.to_csv(), encoding="utf-8")
        artifacts.append(grid_csv)
    timer.mark("write")
    _write_manifest(
        _manifest_path(args, out / "run_manifest.json"),
        "evaluate",
        {"cutoffs": list(cutoffs)},
        args.seed,
        [Path(args.truth)] + list(labeled.values()),
        artifacts,
        timer.timings,
    )
    for ratio in sorted(reports):
        rep = reports[ratio]
        cells = ", ".join(f"{k}={v:.4f}" for k, v in rep.metrics.items())
        print(f"evaluate ratio {ratio:.1f}: {cells}, avg={rep.average:.4f}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    timer = _Timer()
    index = load_index(args.index)
    corpus = dataio.load_corpus(args.corpus)
    source = _EmbeddingSource(args, dim_hint=index.dim)
    matrix = _corpus_embeddings(corpus, source)
    n = len(corpus.instructions)
    timer.mark("load")

    unseen_ids: set[str] = set()
    inputs = [Path(args.index), Path(args.corpus)] + source.inputs()
    if args.unseen_ids:
        with open(args.unseen_ids, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        unseen_ids = set(
            manifest["unseen_tool_ids"] if isinstance(manifest, dict) else manifest
        )
        inputs.append(Path(args.unseen_ids))

    kl_tools = kl_instr = None
    if unseen_ids:
        tool_rows = {rec.external_id: n + j for j, rec in enumerate(corpus.tools)}
        unseen_rows = [tool_rows[t] for t in sorted(unseen_ids) if t in tool_rows]
        seen_rows = [
            row for ext, row in sorted(tool_rows.items()) if ext not in unseen_ids
        ]
        unseen_instr = [
            i for i, rec in enumerate(corpus.instructions)
            if any(t in unseen_ids for t in rec.tool_ids)
        ]
        seen_instr = [
            i for i, rec in enumerate(corpus.instructions)
            if not any(t in unseen_ids for t in rec.tool_ids)
        ]
        if len(unseen_rows) >= 2 and len(seen_rows) >= 2:
            kl_tools = kl_shift(matrix[seen_rows], matrix[unseen_rows])
        if len(unseen_instr) >= 2 and len(seen_instr) >= 2:
            kl_instr = kl_shift(matrix[seen_instr], matrix[unseen_instr])

    report = DiagnosticsReport(
        kl_instructions=kl_instr,
        kl_tools=kl_tools,
        cooccurrence=cooccurrence_histogram(index.graph),
        overlap=overlap_stats(corpus, matrix[:n], top_n=args.top_n),
    )
    timer.mark("diagnose")

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_json = out / "diagnostics.json"
    with open(report_json, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    report_txt = out / "diagnostics.txt"
    lines = [
        f"tools co-occurring with <10 others: "
        f"{100.0 * report.cooccurrence.fraction_below_10:.1f}%",
        f"mean tool-set overlap with top-{args.top_n} similar instructions: "
        f"{report.overlap.mean:.1f}%",
    ]
    if kl_tools is not None:
        lines.append(f"KL shift tools: {kl_tools.value:.6f}")
    if kl_instr is not None:
        lines.append(f"KL shift instructions: {kl_instr.value:.6f}")
    report_txt.write_text("\n".join(lines) + "\n", encoding="utf-8")
    timer.mark("write")
    _write_manifest(
        _manifest_path(args, out / "run_manifest.json"),
        "diagnose",
        {"top_n": args.top_n, "encoder": args.encoder},
        args.seed,
        inputs,
        [report_json, report_txt],
        timer.timings,
    )
    print("\n".join(lines))
    return EXIT_OK


def _add_embedding_flags(parser, *, query: bool = False) -> None:
    name = "--query-embeddings" if query else "--embeddings"
    parser.add_argument(name, dest="embeddings", help="embedding file (.lsem)")
    parser.add_argument(
        "--encoder", choices=["file", "hash"], default="file",
        help="'hash' derives embeddings from record text (self-contained runs)",
    )
    parser.add_argument("--dim", type=int, help="dimension for --encoder hash")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="toolgraph", description=__doc__)
    parser.add_argument("--seed", type=int, default=0, help="PRNG seed")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--manifest-out", help="run manifest path override")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("split", help="partition a corpus, optionally holding out tools")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("build", help="build and persist an index from a train corpus")
    p.add_argument("--train", required=True)
    _add_embedding_flags(p)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--coefficients", help="comma-separated layer merge weights")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("align", help="align unseen nodes into an index")
    p.add_argument("--index", required=True)
    p.add_argument("--batch", required=True)
    _add_embedding_flags(p)
    p.add_argument("--top-i", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("retrieve", help="answer queries against an index")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    _add_embedding_flags(p, query=True)
    p.add_argument("--top-t", type=int, default=5)
    p.add_argument("--top-k", type=int, default=7)
    p.add_argument("--top-i", type=int, default=5)
    p.add_argument("--no-instruction-transfer", action="store_true")
    p.add_argument("--no-tool-transfer", action="store_true")
    p.add_argument("--no-relational-constraint", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("evaluate", help="score results against ground truth")
    p.add_argument(
        "--results", action="append", required=True,
        metavar="[RATIO=]PATH",
        help="results file; repeat with RATIO= labels for a degradation grid",
    )
    p.add_argument("--truth", required=True, help="corpus file with ground truth")
    p.add_argument("--cutoffs", default="3,7")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("diagnose", help="dataset and index diagnostics")
    p.add_argument("--index", required=True)
    p.add_argument("--corpus", required=True)
    _add_embedding_flags(p)
    p.add_argument("--unseen-ids", help="split manifest or JSON list of held-out tools")
    p.add_argument("--top-n", type=int, default=5)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, OSError) as exc:
        print(f"toolgraph: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvariantError as exc:
        print(f"toolgraph: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
