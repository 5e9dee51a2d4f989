"""Frozen-encoder hidden-state exporter.

Runs chunk files from the lilycorpus tokenizer through a pretrained
transformer encoder and writes per-chunk mean hidden states at selected
layers in the probe embeddings JSONL format.
"""

__version__ = "0.1.0"

from .export import (
    VALID_LAYERS,
    CheckpointNotFound,
    ExporterError,
    ExportJob,
    LayerOutOfRange,
    MalformedChunk,
    VocabularyMismatch,
    export_hidden_states,
    load_chunk_rows,
)

__all__ = [
    "VALID_LAYERS",
    "CheckpointNotFound",
    "ExporterError",
    "ExportJob",
    "LayerOutOfRange",
    "MalformedChunk",
    "VocabularyMismatch",
    "export_hidden_states",
    "load_chunk_rows",
]
