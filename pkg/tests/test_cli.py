"""End-to-end pipeline through the command-line interface."""

import json

import numpy as np
import pytest

from toolgraph.cli import main
from toolgraph.dataio import (
    dump_corpus,
    load_corpus,
    sha256_file,
    tool_document,
    write_embeddings,
)
from toolgraph.retrieval import RetrievalConfig, retrieve
from toolgraph.store import load_index

from synth import clustered_corpus, encode_texts

DIM = 64


@pytest.fixture(scope="module")
def corpus_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "corpus.jsonl"
    dump_corpus(clustered_corpus(seed=400, num_instructions=120), path)
    return path


def _run(*argv):
    return main([str(a) for a in argv])


def _split(corpus_file, tmp_path, ratio, seed=9):
    out = tmp_path / f"split_{ratio}"
    code = _run(
        "--seed", seed, "split", "--corpus", corpus_file,
        "--ratio", ratio, "--out-dir", out,
    )
    assert code == 0
    return out


def _write_batch(split_dir, corpus_file, batch_path):
    """Unseen batch: held-out tools plus the train instructions removed
    with them, linked through associated_instruction_embedding_ref."""
    manifest = json.loads((split_dir / "split_manifest.json").read_text())
    unseen = set(manifest["unseen_tool_ids"])
    corpus = load_corpus(corpus_file)
    tool_by_id = {rec.external_id: rec for rec in corpus.tools}
    removed = [
        json.loads(line)
        for line in (split_dir / "removed_instructions.jsonl")
        .read_text().splitlines()
        if line.strip()
    ]
    records = []
    for rec in removed:
        records.append({
            "external_id": rec["id"], "kind": "instruction",
            "text": rec["text"],
        })
    for tool_id in sorted(unseen):
        bridges = [
            rec["id"] for rec in removed if tool_id in rec["tool_ids"]
        ]
        records.append({
            "external_id": tool_id, "kind": "tool",
            "text": tool_document(tool_by_id[tool_id]),
            "associated_instruction_embedding_ref": bridges,
        })
    with open(batch_path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return unseen


class TestPipeline:
    def test_full_inductive_run(self, corpus_file, tmp_path):
        split_dir = _split(corpus_file, tmp_path, 0.3)
        index_path = tmp_path / "train.lsix"
        assert _run(
            "build", "--train", split_dir / "train.jsonl",
            "--encoder", "hash", "--dim", DIM, "--layers", 3,
            "--out", index_path,
        ) == 0

        batch_path = tmp_path / "batch.jsonl"
        unseen = _write_batch(split_dir, corpus_file, batch_path)
        aligned_path = tmp_path / "aligned.lsix"
        assert _run(
            "align", "--index", index_path, "--batch", batch_path,
            "--encoder", "hash", "--dim", DIM, "--out", aligned_path,
        ) == 0
        index = load_index(aligned_path)
        assert set(index.unseen_tools.external_ids) == unseen

        results_path = tmp_path / "results.jsonl"
        assert _run(
            "retrieve", "--index", aligned_path,
            "--queries", split_dir / "test.jsonl",
            "--encoder", "hash", "--dim", DIM,
            "--out", results_path,
        ) == 0

        eval_dir = tmp_path / "eval"
        assert _run(
            "evaluate", "--results", results_path,
            "--truth", split_dir / "test.jsonl", "--out-dir", eval_dir,
        ) == 0
        report = json.loads((eval_dir / "report.json").read_text())
        metrics = report["0.0"]["metrics"]
        assert 0.0 <= metrics["recall@3"] <= 1.0
        assert metrics["recall@7"] >= metrics["recall@3"]

        diag_dir = tmp_path / "diag"
        assert _run(
            "diagnose", "--index", aligned_path, "--corpus", corpus_file,
            "--encoder", "hash", "--dim", DIM,
            "--unseen-ids", split_dir / "split_manifest.json",
            "--out-dir", diag_dir,
        ) == 0
        diag = json.loads((diag_dir / "diagnostics.json").read_text())
        assert diag["kl_divergence"]["tools"]["value"] >= 0.0

    def test_retrieve_matches_library(self, corpus_file, tmp_path):
        split_dir = _split(corpus_file, tmp_path, 0.0, seed=5)
        index_path = tmp_path / "t.lsix"
        _run(
            "build", "--train", split_dir / "train.jsonl",
            "--encoder", "hash", "--dim", DIM, "--out", index_path,
        )
        results_path = tmp_path / "results.jsonl"
        assert _run(
            "retrieve", "--index", index_path,
            "--queries", split_dir / "test.jsonl",
            "--encoder", "hash", "--dim", DIM, "--top-k", 5,
            "--out", results_path,
        ) == 0
        index = load_index(index_path)
        vectors = encode_texts(load_corpus(corpus_file), dim=DIM)
        config = RetrievalConfig(top_k=5)
        with open(results_path, encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                want = retrieve(
                    rec["query_id"], vectors[rec["query_id"]], index, config
                )
                assert [t for t, _ in want.ranked] == [t for t, _ in rec["ranked"]]
                for (_, score_want), (_, score_got) in zip(want.ranked, rec["ranked"]):
                    assert score_got == pytest.approx(score_want, abs=1e-12)

    def test_split_reproducible_and_test_fixed_across_ratios(
        self, corpus_file, tmp_path
    ):
        a = _split(corpus_file, tmp_path / "a", 0.2, seed=77)
        b = _split(corpus_file, tmp_path / "b", 0.2, seed=77)
        assert (a / "train.jsonl").read_bytes() == (b / "train.jsonl").read_bytes()
        assert (a / "test.jsonl").read_bytes() == (b / "test.jsonl").read_bytes()
        c = _split(corpus_file, tmp_path / "c", 0.0, seed=77)
        assert (a / "test.jsonl").read_bytes() == (c / "test.jsonl").read_bytes()

    def test_build_digest_reproducible(self, corpus_file, tmp_path):
        split_dir = _split(corpus_file, tmp_path, 0.1)
        out_a, out_b = tmp_path / "a.lsix", tmp_path / "b.lsix"
        for out in (out_a, out_b):
            assert _run(
                "build", "--train", split_dir / "train.jsonl",
                "--encoder", "hash", "--dim", DIM, "--out", out,
            ) == 0
        assert sha256_file(out_a) == sha256_file(out_b)

    def test_align_batch_matches_sequential(self, corpus_file, tmp_path):
        split_dir = _split(corpus_file, tmp_path, 0.2, seed=21)
        index_path = tmp_path / "base.lsix"
        _run(
            "build", "--train", split_dir / "train.jsonl",
            "--encoder", "hash", "--dim", DIM, "--out", index_path,
        )
        batch_path = tmp_path / "batch.jsonl"
        _write_batch(split_dir, corpus_file, batch_path)
        records = [
            json.loads(line)
            for line in batch_path.read_text().splitlines() if line
        ]
        # an embedding file lets single-record batches resolve their
        # associated-instruction refs
        from toolgraph.dataio import hash_encoder

        embs_path = tmp_path / "batch.lsem"
        ids = [rec["external_id"] for rec in records]
        matrix = np.vstack([hash_encoder(rec["text"], DIM) for rec in records])
        write_embeddings(embs_path, matrix, ids)
        # one shot
        one_shot = tmp_path / "oneshot.lsix"
        assert _run(
            "align", "--index", index_path, "--batch", batch_path,
            "--embeddings", embs_path, "--out", one_shot,
        ) == 0
        # one record at a time, chaining outputs
        current = index_path
        for i, rec in enumerate(records):
            single = tmp_path / f"single_{i}.jsonl"
            single.write_text(json.dumps(rec, sort_keys=True) + "\n")
            nxt = tmp_path / f"chain_{i}.lsix"
            assert _run(
                "align", "--index", current, "--batch", single,
                "--embeddings", embs_path, "--out", nxt,
            ) == 0
            current = nxt
        batched = load_index(one_shot)
        chained = load_index(current)
        assert np.array_equal(
            batched.unseen_tools.graph_embeddings,
            chained.unseen_tools.graph_embeddings,
        )
        assert np.array_equal(
            batched.unseen_instructions.graph_embeddings,
            chained.unseen_instructions.graph_embeddings,
        )

    def test_retrieve_with_embedding_files(self, corpus_file, tmp_path):
        split_dir = _split(corpus_file, tmp_path, 0.0, seed=19)
        corpus = load_corpus(corpus_file)
        vectors = encode_texts(corpus, dim=DIM)
        embs = tmp_path / "all.lsem"
        ids = list(vectors)
        write_embeddings(embs, np.vstack([vectors[i] for i in ids]), ids)
        index_path = tmp_path / "t.lsix"
        assert _run(
            "build", "--train", split_dir / "train.jsonl",
            "--embeddings", embs, "--out", index_path,
        ) == 0
        results_path = tmp_path / "results.jsonl"
        assert _run(
            "retrieve", "--index", index_path,
            "--queries", split_dir / "test.jsonl",
            "--query-embeddings", embs, "--out", results_path,
        ) == 0
        # file-based embeddings are float32-quantized; ranking still runs
        lines = results_path.read_text().strip().splitlines()
        test = load_corpus(split_dir / "test.jsonl")
        assert len(lines) == len(test.instructions)

    def test_empty_align_batch_keeps_index_digest(self, corpus_file, tmp_path):
        split_dir = _split(corpus_file, tmp_path, 0.0, seed=13)
        index_path = tmp_path / "base.lsix"
        _run(
            "build", "--train", split_dir / "train.jsonl",
            "--encoder", "hash", "--dim", DIM, "--out", index_path,
        )
        batch = tmp_path / "empty_batch.jsonl"
        batch.write_text("")
        out = tmp_path / "after.lsix"
        assert _run(
            "align", "--index", index_path, "--batch", batch,
            "--encoder", "hash", "--dim", DIM, "--out", out,
        ) == 0
        assert sha256_file(index_path) == sha256_file(out)

    def test_transductive_diagnose_omits_kl(self, corpus_file, tmp_path):
        split_dir = _split(corpus_file, tmp_path, 0.0, seed=14)
        index_path = tmp_path / "t.lsix"
        _run(
            "build", "--train", split_dir / "train.jsonl",
            "--encoder", "hash", "--dim", DIM, "--out", index_path,
        )
        diag_dir = tmp_path / "diag"
        assert _run(
            "diagnose", "--index", index_path, "--corpus", corpus_file,
            "--encoder", "hash", "--dim", DIM, "--out-dir", diag_dir,
        ) == 0
        diag = json.loads((diag_dir / "diagnostics.json").read_text())
        assert diag["kl_divergence"]["tools"] is None
        assert diag["kl_divergence"]["instructions"] is None

    def test_manifest_lists_every_artifact(self, corpus_file, tmp_path):
        split_dir = _split(corpus_file, tmp_path, 0.1, seed=3)
        manifest = json.loads((split_dir / "run_manifest.json").read_text())
        listed = {name.rsplit("/", 1)[-1] for name in manifest["artifacts"]}
        on_disk = {
            p.name for p in split_dir.iterdir() if p.name != "run_manifest.json"
        }
        assert on_disk == listed
        for digest in manifest["artifacts"].values():
            assert len(digest) == 64


class TestErrorPaths:
    def test_usage_error_exits_1(self):
        with pytest.raises(SystemExit) as exc:
            main(["split", "--corpus", "x"])  # missing required flags
        assert exc.value.code == 1

    def test_missing_file_exits_2(self, tmp_path):
        assert _run(
            "build", "--train", tmp_path / "nope.jsonl",
            "--encoder", "hash", "--dim", 16, "--out", tmp_path / "x.lsix",
        ) == 2

    def test_corrupt_index_exits_2(self, tmp_path):
        bad = tmp_path / "bad.lsix"
        bad.write_bytes(b"NOPE" + b"\x00" * 20)
        assert _run(
            "retrieve", "--index", bad, "--queries", bad,
            "--encoder", "hash", "--dim", 16, "--out", tmp_path / "r.jsonl",
        ) == 2

    def test_embeddings_not_covering_corpus_exit_2(
        self, corpus_file, tmp_path, capsys
    ):
        split_dir = _split(corpus_file, tmp_path, 0.0, seed=2)
        embs = tmp_path / "partial.lsem"
        write_embeddings(embs, np.zeros((1, 8)), ["q0"])
        code = _run(
            "build", "--train", split_dir / "train.jsonl",
            "--embeddings", embs, "--out", tmp_path / "x.lsix",
        )
        assert code == 2
        assert "missing ids" in capsys.readouterr().err

    def test_empty_results_rejected(self, corpus_file, tmp_path):
        split_dir = _split(corpus_file, tmp_path, 0.0, seed=4)
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        assert _run(
            "evaluate", "--results", empty,
            "--truth", split_dir / "test.jsonl",
            "--out-dir", tmp_path / "eval",
        ) == 2

    def test_perfect_results_hit_maxima(self, corpus_file, tmp_path):
        split_dir = _split(corpus_file, tmp_path, 0.0, seed=6)
        test = load_corpus(split_dir / "test.jsonl")
        results = tmp_path / "perfect.jsonl"
        with open(results, "w", encoding="utf-8") as fh:
            for rec in test.instructions:
                ranked = [[t, 1.0] for t in rec.tool_ids]
                fh.write(json.dumps(
                    {"query_id": rec.external_id, "ranked": ranked,
                     "candidate_count": len(ranked), "flags": []},
                ) + "\n")
        eval_dir = tmp_path / "eval"
        assert _run(
            "evaluate", "--results", results,
            "--truth", split_dir / "test.jsonl", "--out-dir", eval_dir,
        ) == 0
        metrics = json.loads((eval_dir / "report.json").read_text())["0.0"]["metrics"]
        assert metrics["recall@3"] >= 0.99 or metrics["recall@7"] == 1.0
