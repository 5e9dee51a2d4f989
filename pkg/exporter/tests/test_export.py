"""Exporter checks against a tiny randomly initialized encoder.

The checkpoint is built on the fly (12 layers, hidden size 16) so the
suite runs offline; the primary package's loader is imported only to
prove format compatibility.
"""

import json
from pathlib import Path

import numpy as np
import pytest
import torch

from lilyexporter import (
    CheckpointNotFound,
    ExporterError,
    ExportJob,
    LayerOutOfRange,
    MalformedChunk,
    VocabularyMismatch,
    export_hidden_states,
    load_chunk_rows,
)
from lilyexporter.cli import main

VOCAB = 200
HIDDEN = 16


def _build_checkpoint(path: Path, layers: int) -> Path:
    from transformers import RobertaConfig, RobertaModel

    torch.manual_seed(0)
    config = RobertaConfig(
        vocab_size=VOCAB,
        hidden_size=HIDDEN,
        num_hidden_layers=layers,
        num_attention_heads=4,
        intermediate_size=32,
        max_position_embeddings=64,
    )
    RobertaModel(config).save_pretrained(path)
    return path


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    return _build_checkpoint(tmp_path_factory.mktemp("ckpt12"), 12)


@pytest.fixture(scope="module")
def shallow_checkpoint(tmp_path_factory):
    return _build_checkpoint(tmp_path_factory.mktemp("ckpt4"), 4)


def _write_chunks(path: Path, rows) -> Path:
    path.write_text(
        "".join(json.dumps(row) + "\n" for row in rows), encoding="utf-8"
    )
    return path


def _two_chunks(tmp_path) -> Path:
    return _write_chunks(tmp_path / "chunks.jsonl", [
        {"file_id": "alpha", "chunk_index": 0,
         "ids": [0, 5, 6, 7, 2], "content_len": 3},
        {"file_id": "alpha", "chunk_index": 1,
         "ids": [0, 8, 9, 2], "content_len": 2},
    ])


# --- record shape ---------------------------------------------------------------

def test_two_chunks_give_one_record_per_chunk_and_layer(checkpoint, tmp_path):
    out = tmp_path / "emb.jsonl"
    export_hidden_states(ExportJob(str(checkpoint), _two_chunks(tmp_path), out))
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(rows) == 8  # 2 chunks x 4 layers
    assert [(r["chunk_index"], r["layer"]) for r in rows] == [
        (0, 3), (0, 6), (0, 9), (0, 12),
        (1, 3), (1, 6), (1, 9), (1, 12),
    ]
    assert all(r["file_id"] == "alpha" for r in rows)
    assert [r["token_count"] for r in rows[:4]] == [3, 3, 3, 3]
    assert [r["token_count"] for r in rows[4:]] == [2, 2, 2, 2]
    assert all(len(r["vector"]) == HIDDEN for r in rows)
    assert all(np.isfinite(r["vector"]).all() for r in rows)


def test_output_loads_through_primary_validator(checkpoint, tmp_path):
    from lilycorpus.probe import load_embeddings

    out = tmp_path / "emb.jsonl"
    export_hidden_states(ExportJob(str(checkpoint), _two_chunks(tmp_path), out))
    records = load_embeddings(out)
    assert len(records) == 8
    assert {r.layer for r in records} == {3, 6, 9, 12}
    assert all(r.vector.shape == (HIDDEN,) for r in records)


def test_reruns_are_byte_identical(checkpoint, tmp_path):
    chunks = _two_chunks(tmp_path)
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    export_hidden_states(ExportJob(str(checkpoint), chunks, a))
    export_hidden_states(ExportJob(str(checkpoint), chunks, b))
    assert a.read_bytes() == b.read_bytes()


def test_vectors_match_manual_forward(checkpoint, tmp_path):
    from transformers import AutoModel

    chunks = _two_chunks(tmp_path)
    out = tmp_path / "emb.jsonl"
    export_hidden_states(
        ExportJob(str(checkpoint), chunks, out, batch_size=1)
    )
    rows = [json.loads(line) for line in out.read_text().splitlines()]

    model = AutoModel.from_pretrained(str(checkpoint))
    model.eval()
    for row in load_chunk_rows(chunks):
        ids = torch.tensor([list(row.ids)], dtype=torch.long)
        mask = torch.ones_like(ids)
        with torch.no_grad():
            hidden = model(
                input_ids=ids, attention_mask=mask,
                output_hidden_states=True,
            ).hidden_states
        for layer in (3, 12):
            want = hidden[layer][0, 1:1 + row.content_len].mean(dim=0)
            got = next(
                np.asarray(r["vector"]) for r in rows
                if r["chunk_index"] == row.chunk_index and r["layer"] == layer
            )
            assert np.allclose(got, want.numpy(), rtol=1e-6, atol=1e-7)


def test_layer_subset_sorted_in_output(checkpoint, tmp_path):
    out = tmp_path / "emb.jsonl"
    export_hidden_states(ExportJob(
        str(checkpoint), _two_chunks(tmp_path), out, layers=(12, 3),
    ))
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert [(r["chunk_index"], r["layer"]) for r in rows] == [
        (0, 3), (0, 12), (1, 3), (1, 12),
    ]


def test_batch_size_does_not_change_vectors(checkpoint, tmp_path):
    rows = [
        {"file_id": f"f{i}", "chunk_index": 0,
         "ids": [0] + [10 + i] * (3 + i) + [2], "content_len": 3 + i}
        for i in range(5)
    ]
    chunks = _write_chunks(tmp_path / "chunks.jsonl", rows)
    single = tmp_path / "b1.jsonl"
    batched = tmp_path / "b3.jsonl"
    export_hidden_states(
        ExportJob(str(checkpoint), chunks, single, batch_size=1)
    )
    export_hidden_states(
        ExportJob(str(checkpoint), chunks, batched, batch_size=3)
    )
    got_a = [json.loads(line) for line in single.read_text().splitlines()]
    got_b = [json.loads(line) for line in batched.read_text().splitlines()]
    assert len(got_a) == len(got_b) == 20
    for ra, rb in zip(got_a, got_b):
        assert (ra["file_id"], ra["chunk_index"], ra["layer"]) == (
            rb["file_id"], rb["chunk_index"], rb["layer"]
        )
        assert np.allclose(ra["vector"], rb["vector"], atol=1e-5)


def test_zero_content_chunk_gives_zero_vector(checkpoint, tmp_path):
    from lilycorpus.probe import load_embeddings

    chunks = _write_chunks(tmp_path / "chunks.jsonl", [
        {"file_id": "empty", "chunk_index": 0,
         "ids": [0, 2], "content_len": 0},
    ])
    out = tmp_path / "emb.jsonl"
    export_hidden_states(ExportJob(str(checkpoint), chunks, out))
    records = load_embeddings(out)
    assert len(records) == 4
    for record in records:
        assert record.token_count == 0
        assert np.array_equal(record.vector, np.zeros(HIDDEN))


def test_unsorted_input_is_emitted_sorted(checkpoint, tmp_path):
    chunks = _write_chunks(tmp_path / "chunks.jsonl", [
        {"file_id": "zeta", "chunk_index": 0,
         "ids": [0, 4, 2], "content_len": 1},
        {"file_id": "alpha", "chunk_index": 1,
         "ids": [0, 5, 2], "content_len": 1},
        {"file_id": "alpha", "chunk_index": 0,
         "ids": [0, 6, 2], "content_len": 1},
    ])
    out = tmp_path / "emb.jsonl"
    export_hidden_states(ExportJob(str(checkpoint), chunks, out, layers=(3,)))
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert [(r["file_id"], r["chunk_index"]) for r in rows] == [
        ("alpha", 0), ("alpha", 1), ("zeta", 0),
    ]


# --- errors ---------------------------------------------------------------

def test_unknown_layer_rejected(checkpoint, tmp_path):
    with pytest.raises(LayerOutOfRange):
        export_hidden_states(ExportJob(
            str(checkpoint), _two_chunks(tmp_path),
            tmp_path / "emb.jsonl", layers=(5,),
        ))


def test_layer_beyond_model_depth_rejected(shallow_checkpoint, tmp_path):
    with pytest.raises(LayerOutOfRange):
        export_hidden_states(ExportJob(
            str(shallow_checkpoint), _two_chunks(tmp_path),
            tmp_path / "emb.jsonl", layers=(6,),
        ))


def test_out_of_vocabulary_id_rejected(checkpoint, tmp_path):
    chunks = _write_chunks(tmp_path / "chunks.jsonl", [
        {"file_id": "big", "chunk_index": 0,
         "ids": [0, VOCAB, 2], "content_len": 1},
    ])
    with pytest.raises(VocabularyMismatch):
        export_hidden_states(
            ExportJob(str(checkpoint), chunks, tmp_path / "emb.jsonl")
        )


def test_missing_checkpoint_rejected(tmp_path):
    with pytest.raises(CheckpointNotFound):
        export_hidden_states(ExportJob(
            str(tmp_path / "no-such-checkpoint"),
            _two_chunks(tmp_path), tmp_path / "emb.jsonl",
        ))


def test_batch_size_below_one_rejected(checkpoint, tmp_path):
    with pytest.raises(ExporterError):
        export_hidden_states(ExportJob(
            str(checkpoint), _two_chunks(tmp_path),
            tmp_path / "emb.jsonl", batch_size=0,
        ))


def test_malformed_chunk_rows(tmp_path):
    cases = [
        ("not json\n", "not valid JSON"),
        ('{"file_id": "x"}\n', "missing field"),
        ('{"file_id": "x", "chunk_index": 0, "ids": [0, 2], '
         '"content_len": 5}\n', "content_len"),
        ('{"file_id": "x", "chunk_index": -1, "ids": [0, 2], '
         '"content_len": 0}\n', "chunk_index"),
    ]
    for text, needle in cases:
        path = tmp_path / "chunks.jsonl"
        path.write_text(text, encoding="utf-8")
        with pytest.raises(MalformedChunk) as err:
            load_chunk_rows(path)
        assert err.value.line_no == 1
        assert needle in str(err.value)


# --- command line ---------------------------------------------------------------

def test_cli_exports_and_prints_path(checkpoint, tmp_path, capsys):
    chunks = _two_chunks(tmp_path)
    out = tmp_path / "emb.jsonl"
    rc = main([str(checkpoint), str(chunks), str(out), "--layers", "3,6"])
    assert rc == 0
    assert str(out) in capsys.readouterr().out
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(rows) == 4


def test_cli_maps_errors_to_exit_two(tmp_path, capsys):
    chunks = _two_chunks(tmp_path)
    rc = main([
        str(tmp_path / "missing-model"), str(chunks),
        str(tmp_path / "emb.jsonl"),
    ])
    assert rc == 2
    assert "error:" in capsys.readouterr().err
