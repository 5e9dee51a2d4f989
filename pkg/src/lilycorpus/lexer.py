"""Lossless structural lexer for LilyPond source text.

Produces a flat token stream in which every non-whitespace byte of the
input belongs to exactly one token, so the source can be reconstructed
byte-exactly from the tokens plus the whitespace between them. Scheme
escapes (``#(...)`` and friends) are consumed as single opaque tokens and
never interpreted.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .errors import LilyCorpusError


class TokenKind(enum.Enum):
    COMMAND = "command"            # \relative, \p, ...
    WORD = "word"                  # c', allegro, Staff
    NUMBER = "number"              # 4, 16, 8. (trailing duration dots kept)
    STRING = "string"              # "double quoted", escapes preserved
    OPEN_BRACE = "open_brace"
    CLOSE_BRACE = "close_brace"
    OPEN_ANGLE = "open_angle"
    CLOSE_ANGLE = "close_angle"
    DOUBLE_ANGLE_OPEN = "double_angle_open"
    DOUBLE_ANGLE_CLOSE = "double_angle_close"
    EQUALS = "equals"
    COMMENT = "comment"            # % line or %{ ... %} block
    OTHER = "other"                # everything else, opaque


@dataclass(frozen=True)
class StructuralToken:
    kind: TokenKind
    text: str
    char_span: tuple[int, int]
    byte_span: tuple[int, int]


class UnterminatedString(LilyCorpusError):
    def __init__(self, byte_offset: int):
        super().__init__(f"unterminated string literal at byte {byte_offset}")
        self.byte_offset = byte_offset


class UnterminatedBlockComment(LilyCorpusError):
    def __init__(self, byte_offset: int):
        super().__init__(f"unterminated block comment at byte {byte_offset}")
        self.byte_offset = byte_offset


_ASCII_LETTERS = frozenset("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ")
_DIGITS = frozenset("0123456789")
_OCTAVE_MARKS = frozenset("',")
# Characters that may follow -, ^ or _ as an articulation shorthand; lexing
# the pair as one token keeps bare < and > reserved for chords.
_SCRIPT_CHARS = frozenset(".^>_+!-")
# Characters that terminate an opaque scheme datum.
_SCHEME_STOP = frozenset(" \t\r\n{}<>=%\"")


def lex(source: str) -> list[StructuralToken]:
    """Tokenize LilyPond source. Whitespace separates tokens and is the only
    text not covered by a token span."""
    tokens: list[StructuralToken] = []
    n = len(source)
    i = 0

    def emit(kind: TokenKind, start: int, end: int) -> None:
        tokens.append(
            StructuralToken(kind, source[start:end], (start, end), (start, end))
        )

    while i < n:
        c = source[i]
        if c in " \t\r\n\f\v":
            i += 1
            continue
        start = i
        if c == "%":
            if source.startswith("%{", i):
                close = source.find("%}", i + 2)
                if close == -1:
                    raise UnterminatedBlockComment(_byte_offset(source, i))
                i = close + 2
            else:
                nl = source.find("\n", i)
                i = n if nl == -1 else nl
            emit(TokenKind.COMMENT, start, i)
        elif c == '"':
            i += 1
            while i < n:
                if source[i] == "\\" and i + 1 < n:
                    i += 2
                    continue
                if source[i] == '"':
                    break
                i += 1
            if i >= n:
                raise UnterminatedString(_byte_offset(source, start))
            i += 1
            emit(TokenKind.STRING, start, i)
        elif c == "\\":
            if i + 1 < n and source[i + 1] in _ASCII_LETTERS:
                i += 1
                while i < n and source[i] in _ASCII_LETTERS:
                    i += 1
                emit(TokenKind.COMMAND, start, i)
            else:
                # \\ voice separator, \< \> \! hairpins, trailing backslash
                i = min(i + 2, n)
                emit(TokenKind.OTHER, start, i)
        elif c == "{":
            i += 1
            emit(TokenKind.OPEN_BRACE, start, i)
        elif c == "}":
            i += 1
            emit(TokenKind.CLOSE_BRACE, start, i)
        elif c == "<":
            if source.startswith("<<", i):
                i += 2
                emit(TokenKind.DOUBLE_ANGLE_OPEN, start, i)
            else:
                i += 1
                emit(TokenKind.OPEN_ANGLE, start, i)
        elif c == ">":
            if source.startswith(">>", i):
                i += 2
                emit(TokenKind.DOUBLE_ANGLE_CLOSE, start, i)
            else:
                i += 1
                emit(TokenKind.CLOSE_ANGLE, start, i)
        elif c == "=":
            i += 1
            emit(TokenKind.EQUALS, start, i)
        elif c == "#":
            i = _scan_scheme(source, i)
            emit(TokenKind.OTHER, start, i)
        elif c in _DIGITS:
            while i < n and source[i] in _DIGITS:
                i += 1
            while i < n and source[i] == ".":
                i += 1
            emit(TokenKind.NUMBER, start, i)
        elif c in _ASCII_LETTERS:
            # A word ends at the first digit so pitch and duration stay
            # separable (c'4 -> Word(c') Number(4)).
            while i < n and source[i] in _ASCII_LETTERS:
                i += 1
            while i < n and source[i] in _OCTAVE_MARKS:
                i += 1
            emit(TokenKind.WORD, start, i)
        elif c in "-^_" and i + 1 < n and source[i + 1] in _SCRIPT_CHARS:
            i += 2
            emit(TokenKind.OTHER, start, i)
        else:
            i += 1
            emit(TokenKind.OTHER, start, i)

    if not source.isascii():
        _rewrite_byte_spans(source, tokens)
    return tokens


def _scan_scheme(source: str, i: int) -> int:
    """Consume an opaque scheme escape starting at '#'. Never interpreted;
    on malformed input the rest of the source is swallowed, keeping lexing
    total and lossless."""
    n = len(source)
    j = i + 1
    while j < n and source[j] in "'`":
        j += 1
    if j < n and source[j] == "(":
        depth = 0
        while j < n:
            ch = source[j]
            if ch == '"':
                j += 1
                while j < n and source[j] != '"':
                    j += 2 if source[j] == "\\" else 1
            elif ch == "(":
                depth += 1
            elif ch == ")":
                depth -= 1
                if depth == 0:
                    return j + 1
            j += 1
        return n
    if j < n and source[j] == '"':
        j += 1
        while j < n and source[j] != '"':
            j += 2 if source[j] == "\\" else 1
        return min(j + 1, n)
    if j < n and source[j] == "#":
        # boolean/char datum: ##t ##f #\c
        return min(j + 2, n)
    while j < n and source[j] not in _SCHEME_STOP:
        j += 1
    return max(j, i + 1)


def _byte_offset(source: str, char_index: int) -> int:
    if source.isascii():
        return char_index
    return len(source[:char_index].encode("utf-8"))


def _rewrite_byte_spans(source: str, tokens: list[StructuralToken]) -> None:
    """Replace byte spans (copied from char spans) with true UTF-8 offsets."""
    offsets = [0] * (len(source) + 1)
    pos = 0
    for k, ch in enumerate(source):
        offsets[k] = pos
        pos += len(ch.encode("utf-8"))
    offsets[len(source)] = pos
    for k, tok in enumerate(tokens):
        a, b = tok.char_span
        tokens[k] = StructuralToken(
            tok.kind, tok.text, tok.char_span, (offsets[a], offsets[b])
        )


def reconstruct(source: str, tokens: list[StructuralToken]) -> str:
    """Rebuild the source from tokens plus the inter-token whitespace of the
    original; used to verify the lossless-lexing invariant."""
    parts = []
    prev_end = 0
    for tok in tokens:
        a, b = tok.char_span
        parts.append(source[prev_end:a])
        parts.append(tok.text)
        prev_end = b
    parts.append(source[prev_end:])
    return "".join(parts)
