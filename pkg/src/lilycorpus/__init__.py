"""Corpus engineering toolkit for LilyPond sources.

Covers structural parsing (lexing, block trees, variable reachability),
project flattening, pitch-language conversion, metadata and taxonomy
extraction, note-count validation against engraved PostScript, a
vocabulary-extended subword tokenizer with MLM data preparation, and a
frozen-embedding linear-probing harness.
"""

__version__ = "0.1.0"
