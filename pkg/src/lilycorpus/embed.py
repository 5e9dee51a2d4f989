"""Deterministic baseline embedder: no neural model required.

Each chunk's non-special token histogram is pushed through a fixed
random projection (one seeded Gaussian direction per vocabulary id) and
L2-normalized. The same vector is emitted for every requested
pseudo-layer, so downstream layer-wise tooling runs unchanged.
"""

from __future__ import annotations

import numpy as np

from .probe import VALID_LAYERS, EmbeddingRecord
from .tokenizer import DEFAULT_CHUNK_SIZE, TokenizedDoc, Vocabulary, chunk

DEFAULT_DIM = 64


class _ProjectionTable:
    """Lazy per-token-id projection rows, deterministic per (seed, id)."""

    def __init__(self, dim: int, seed: int):
        self.dim = dim
        self.seed = seed
        self._rows: dict[int, np.ndarray] = {}

    def row(self, token_id: int) -> np.ndarray:
        cached = self._rows.get(token_id)
        if cached is None:
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=[self.seed, token_id]))
            cached = rng.standard_normal(self.dim)
            self._rows[token_id] = cached
        return cached


def baseline_embed(
    doc: TokenizedDoc,
    vocab: Vocabulary,
    file_id: str,
    dim: int = DEFAULT_DIM,
    seed: int = 1337,
    layers=VALID_LAYERS,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    projections: _ProjectionTable | None = None,
) -> list[EmbeddingRecord]:
    """Per-chunk embedding records for every requested pseudo-layer.

    Pass one shared projections table when embedding a whole corpus so
    identical ids project identically without rebuilding the cache."""
    if projections is None:
        projections = _ProjectionTable(dim, seed)
    records: list[EmbeddingRecord] = []
    for chunk_index, piece in enumerate(chunk(doc, vocab, size=chunk_size)):
        content = piece.ids[1:1 + piece.content_len]
        counts: dict[int, int] = {}
        for token_id in content:
            counts[token_id] = counts.get(token_id, 0) + 1
        vector = np.zeros(projections.dim)
        for token_id, count in counts.items():
            vector += count * projections.row(token_id)
        norm = float(np.linalg.norm(vector))
        if norm > 0:
            vector = vector / norm
        for layer in layers:
            records.append(EmbeddingRecord(
                file_id=file_id,
                layer=layer,
                chunk_index=chunk_index,
                token_count=piece.content_len,
                vector=vector,
            ))
    return records


def make_projection_table(dim: int = DEFAULT_DIM, seed: int = 1337):
    return _ProjectionTable(dim, seed)
