"""Run tokenizer chunk files through a frozen encoder checkpoint.

Reads the chunk JSONL format (file_id, chunk_index, ids, content_len),
feeds batches through a pretrained transformer with hidden-state output
enabled, and writes one embedding record per (chunk, layer): the mean
hidden state over the chunk's content positions, i.e. everything
between the leading and trailing special ids. Records land in
(file_id, chunk_index, layer) order so identical jobs write identical
bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import torch

VALID_LAYERS = (3, 6, 9, 12)
DEFAULT_BATCH_SIZE = 8


class ExporterError(Exception):
    """Base for everything this package raises on purpose."""


class CheckpointNotFound(ExporterError):
    pass


class LayerOutOfRange(ExporterError):
    pass


class VocabularyMismatch(ExporterError):
    pass


class MalformedChunk(ExporterError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


@dataclass(frozen=True)
class ChunkRow:
    file_id: str
    chunk_index: int
    ids: tuple[int, ...]
    content_len: int


@dataclass(frozen=True)
class ExportJob:
    model_ref: str
    chunks_path: str | Path
    output_path: str | Path
    layers: tuple[int, ...] = VALID_LAYERS
    batch_size: int = DEFAULT_BATCH_SIZE


def load_chunk_rows(path: str | Path) -> list[ChunkRow]:
    """Parse and validate chunk JSONL, sorted by (file_id, chunk_index)."""
    rows: list[ChunkRow] = []
    text = Path(path).read_text(encoding="utf-8")
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            payload = json.loads(line)
        except ValueError:
            raise MalformedChunk(line_no, "not valid JSON") from None
        if not isinstance(payload, dict):
            raise MalformedChunk(line_no, "not a JSON object")
        for key in ("file_id", "chunk_index", "ids", "content_len"):
            if key not in payload:
                raise MalformedChunk(line_no, f"missing field {key!r}")
        file_id = payload["file_id"]
        chunk_index = payload["chunk_index"]
        ids = payload["ids"]
        content_len = payload["content_len"]
        if not isinstance(file_id, str) or not file_id:
            raise MalformedChunk(line_no, "file_id must be a non-empty string")
        if not isinstance(chunk_index, int) or isinstance(chunk_index, bool) \
                or chunk_index < 0:
            raise MalformedChunk(line_no, "chunk_index must be an int >= 0")
        if (
            not isinstance(ids, list)
            or len(ids) < 2
            or any(
                not isinstance(i, int) or isinstance(i, bool) or i < 0
                for i in ids
            )
        ):
            raise MalformedChunk(
                line_no, "ids must be a list of >= 2 non-negative ints"
            )
        if not isinstance(content_len, int) or isinstance(content_len, bool) \
                or not 0 <= content_len <= len(ids) - 2:
            raise MalformedChunk(
                line_no, "content_len must be an int in [0, len(ids) - 2]"
            )
        rows.append(ChunkRow(file_id, chunk_index, tuple(ids), content_len))
    rows.sort(key=lambda r: (r.file_id, r.chunk_index))
    return rows


def _load_model(model_ref: str):
    from transformers import AutoModel  # deferred: import is slow

    # transformers raises OSError for local paths but hub lookups can
    # surface ValueError or RuntimeError depending on the client, so any
    # load failure maps to the same error class
    try:
        model = AutoModel.from_pretrained(model_ref)
    except ExporterError:
        raise
    except Exception as exc:
        raise CheckpointNotFound(
            f"cannot load checkpoint {model_ref!r}: {exc}"
        ) from exc
    model.eval()
    for param in model.parameters():
        param.requires_grad_(False)
    return model


def _validate_layers(layers, depth: int) -> tuple[int, ...]:
    cleaned = tuple(sorted({int(layer) for layer in layers}))
    if not cleaned:
        raise LayerOutOfRange("no layers requested")
    for layer in cleaned:
        if layer not in VALID_LAYERS:
            raise LayerOutOfRange(
                f"layer {layer} not in {list(VALID_LAYERS)}"
            )
        if layer > depth:
            raise LayerOutOfRange(
                f"layer {layer} exceeds model depth {depth}"
            )
    return cleaned


def export_hidden_states(job: ExportJob) -> Path:
    """Write one record per (chunk, requested layer); returns the path."""
    if job.batch_size < 1:
        raise ExporterError(f"batch size must be >= 1, got {job.batch_size}")
    rows = load_chunk_rows(job.chunks_path)
    model = _load_model(str(job.model_ref))
    depth = int(model.config.num_hidden_layers)
    layers = _validate_layers(job.layers, depth)
    vocab_size = int(model.config.vocab_size)
    for row in rows:
        top = max(row.ids)
        if top >= vocab_size:
            raise VocabularyMismatch(
                f"{row.file_id} chunk {row.chunk_index}: id {top} >= "
                f"model vocabulary size {vocab_size}"
            )

    lines: list[str] = []
    with torch.no_grad():
        for start in range(0, len(rows), job.batch_size):
            batch = rows[start:start + job.batch_size]
            max_len = max(len(r.ids) for r in batch)
            input_ids = torch.zeros((len(batch), max_len), dtype=torch.long)
            attention = torch.zeros((len(batch), max_len), dtype=torch.long)
            for i, row in enumerate(batch):
                input_ids[i, :len(row.ids)] = torch.tensor(
                    row.ids, dtype=torch.long
                )
                attention[i, :len(row.ids)] = 1
            outputs = model(
                input_ids=input_ids,
                attention_mask=attention,
                output_hidden_states=True,
            )
            # hidden_states[0] is the embedding output; [k] follows layer k
            hidden = outputs.hidden_states
            for i, row in enumerate(batch):
                for layer in layers:
                    states = hidden[layer][i]
                    if row.content_len > 0:
                        vector = states[1:1 + row.content_len].mean(dim=0)
                    else:
                        vector = torch.zeros(states.shape[-1])
                    lines.append(json.dumps(
                        {
                            "file_id": row.file_id,
                            "layer": layer,
                            "chunk_index": row.chunk_index,
                            "token_count": row.content_len,
                            "vector": [float(v) for v in vector],
                        },
                        ensure_ascii=False,
                    ))

    out_path = Path(job.output_path)
    if out_path.parent != Path(""):
        out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(
        "".join(line + "\n" for line in lines), encoding="utf-8"
    )
    return out_path
