"""Italian-to-nederlands pitch name conversion.

Rewrites only genuine pitch tokens: Words inside music-expression blocks,
outside header/markup/lyric contexts and string literals, and never words
adjacent to ``=``. Everything else passes through byte-for-byte, so the
conversion preserves structure and is idempotent.
"""

from __future__ import annotations

from .errors import LilyCorpusError
from .lexer import TokenKind, lex

_BASE = {"do": "c", "re": "d", "mi": "e", "fa": "f",
         "sol": "g", "la": "a", "si": "b"}
_SUFFIX = {"": "", "d": "is", "dd": "isis", "b": "es", "bb": "eses"}

ITALIANO_TO_NEDERLANDS: dict[str, str] = {}
for _it, _nl in _BASE.items():
    for _sfx, _alt in _SUFFIX.items():
        ITALIANO_TO_NEDERLANDS[_it + _sfx] = _nl + _alt

NEDERLANDS_TO_ITALIANO = {v: k for k, v in ITALIANO_TO_NEDERLANDS.items()}

# Blocks opened under these commands hold prose or lyrics, where words like
# `la` and `mi` are not pitches.
_EXCLUDED_COMMANDS = frozenset({
    "\\header", "\\markup", "\\markuplist",
    "\\lyricmode", "\\addlyrics", "\\lyricsto",
})

_OPENERS = frozenset({
    TokenKind.OPEN_BRACE, TokenKind.OPEN_ANGLE, TokenKind.DOUBLE_ANGLE_OPEN,
})
_CLOSERS = frozenset({
    TokenKind.CLOSE_BRACE, TokenKind.CLOSE_ANGLE, TokenKind.DOUBLE_ANGLE_CLOSE,
})
_SCAN_BACK_LIMIT = 4


class NotAPitchName(LilyCorpusError):
    def __init__(self, name: str):
        super().__init__(f"not an Italian pitch name: {name!r}")
        self.name = name


def map_pitch_name(name: str) -> str:
    try:
        return ITALIANO_TO_NEDERLANDS[name]
    except KeyError:
        raise NotAPitchName(name) from None


def _split_octave(word: str) -> tuple[str, str]:
    base = word.rstrip("',")
    return base, word[len(base):]


def convert_pitch_language(source: str) -> str:
    tokens = lex(source)
    significant = [
        i for i, t in enumerate(tokens) if t.kind is not TokenKind.COMMENT
    ]
    replacements: dict[int, str] = {}
    excluded_stack: list[bool] = []

    def opens_excluded_context(sig_pos: int) -> bool:
        for back in range(1, _SCAN_BACK_LIMIT + 1):
            if sig_pos - back < 0:
                return False
            tok = tokens[significant[sig_pos - back]]
            if tok.kind in _OPENERS or tok.kind in _CLOSERS \
                    or tok.kind is TokenKind.EQUALS:
                return False
            if tok.kind is TokenKind.COMMAND \
                    and tok.text in _EXCLUDED_COMMANDS:
                return True
        return False

    for pos, idx in enumerate(significant):
        tok = tokens[idx]
        if tok.kind in _OPENERS:
            excluded = (
                (excluded_stack and excluded_stack[-1])
                or opens_excluded_context(pos)
            )
            excluded_stack.append(bool(excluded))
        elif tok.kind in _CLOSERS:
            if excluded_stack:
                excluded_stack.pop()
        elif tok.kind is TokenKind.STRING:
            prev = tokens[significant[pos - 1]] if pos > 0 else None
            if (
                prev is not None
                and prev.kind is TokenKind.COMMAND
                and prev.text == "\\language"
                and tok.text == '"italiano"'
            ):
                replacements[idx] = '"nederlands"'
        elif tok.kind is TokenKind.WORD:
            if not excluded_stack or excluded_stack[-1]:
                continue
            neighbors = []
            if pos > 0:
                neighbors.append(tokens[significant[pos - 1]])
            if pos + 1 < len(significant):
                neighbors.append(tokens[significant[pos + 1]])
            if any(t.kind is TokenKind.EQUALS for t in neighbors):
                continue
            base, octave = _split_octave(tok.text)
            mapped = ITALIANO_TO_NEDERLANDS.get(base)
            if mapped is not None:
                replacements[idx] = mapped + octave

    if not replacements:
        return source
    parts = []
    cursor = 0
    for idx in sorted(replacements):
        a, b = tokens[idx].char_span
        parts.append(source[cursor:a])
        parts.append(replacements[idx])
        cursor = b
    parts.append(source[cursor:])
    return "".join(parts)
