"""Brace and angle nesting over a structural token stream.

Builds a tree of block nodes and an open-to-close index map so later
passes (header stripping, note counting, section extraction) can jump
over any block in O(1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import LilyCorpusError
from .lexer import StructuralToken, TokenKind, lex

_OPENERS = {
    TokenKind.OPEN_BRACE: TokenKind.CLOSE_BRACE,
    TokenKind.OPEN_ANGLE: TokenKind.CLOSE_ANGLE,
    TokenKind.DOUBLE_ANGLE_OPEN: TokenKind.DOUBLE_ANGLE_CLOSE,
}
_CLOSERS = frozenset(_OPENERS.values())


class UnbalancedBlock(LilyCorpusError):
    def __init__(self, byte_offset: int, what: str):
        super().__init__(f"{what} at byte {byte_offset}")
        self.byte_offset = byte_offset


@dataclass
class BlockNode:
    """One balanced region. open_index/close_index point into the token
    list; command is the introducing command text (without backslash) when
    the block is directly preceded by one, else None."""
    open_index: int
    close_index: int
    command: str | None
    children: list["BlockNode"] = field(default_factory=list)

    @property
    def is_header(self) -> bool:
        return self.command == "header"

    @property
    def is_score(self) -> bool:
        return self.command == "score"


@dataclass
class BlockTree:
    tokens: list[StructuralToken]
    roots: list[BlockNode]
    match: dict[int, int]  # open index -> close index

    def all_blocks(self) -> list[BlockNode]:
        out: list[BlockNode] = []
        stack = list(self.roots)
        while stack:
            node = stack.pop()
            out.append(node)
            stack.extend(node.children)
        return out

    def blocks_by_command(self, name: str) -> list[BlockNode]:
        return [b for b in self.all_blocks() if b.command == name]


def parse_blocks(tokens: list[StructuralToken]) -> BlockTree:
    roots: list[BlockNode] = []
    stack: list[BlockNode] = []
    match: dict[int, int] = {}
    prev_significant: StructuralToken | None = None

    for idx, tok in enumerate(tokens):
        if tok.kind in _OPENERS:
            command = None
            if (
                tok.kind is TokenKind.OPEN_BRACE
                and prev_significant is not None
                and prev_significant.kind is TokenKind.COMMAND
            ):
                command = prev_significant.text[1:]
            node = BlockNode(idx, -1, command)
            if stack:
                stack[-1].children.append(node)
            else:
                roots.append(node)
            stack.append(node)
        elif tok.kind in _CLOSERS:
            if not stack:
                raise UnbalancedBlock(tok.byte_span[0], "unmatched closer")
            node = stack.pop()
            expected = _OPENERS[tokens[node.open_index].kind]
            if tok.kind is not expected:
                raise UnbalancedBlock(
                    tok.byte_span[0],
                    f"closer {tok.text!r} does not match opener "
                    f"{tokens[node.open_index].text!r}",
                )
            node.close_index = idx
            match[node.open_index] = idx
        if tok.kind is not TokenKind.COMMENT:
            prev_significant = tok
    if stack:
        node = stack[-1]
        raise UnbalancedBlock(
            tokens[node.open_index].byte_span[0], "unclosed block"
        )
    return BlockTree(tokens, roots, match)


def parse_source(source: str) -> BlockTree:
    return parse_blocks(lex(source))


def strip_headers(source: str) -> str:
    """Remove every \\header block (command through closing brace) and every
    comment. Idempotent; leaves all other bytes untouched."""
    tokens = lex(source)
    tree = parse_blocks(tokens)
    drop: list[tuple[int, int]] = []  # char spans to delete
    for node in tree.all_blocks():
        if not node.is_header:
            continue
        open_tok = tokens[node.open_index]
        close_tok = tokens[node.close_index]
        start = open_tok.char_span[0]
        # pull the span back to the introducing \header command
        for k in range(node.open_index - 1, -1, -1):
            if tokens[k].kind is TokenKind.COMMENT:
                continue
            if tokens[k].kind is TokenKind.COMMAND and tokens[k].text == "\\header":
                start = tokens[k].char_span[0]
            break
        drop.append((start, close_tok.char_span[1]))
    for tok in tokens:
        if tok.kind is TokenKind.COMMENT:
            drop.append(tok.char_span)
    if not drop:
        return source
    drop.sort()
    merged: list[list[int]] = []
    for a, b in drop:
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    parts = []
    pos = 0
    for a, b in merged:
        parts.append(source[pos:a])
        pos = b
    parts.append(source[pos:])
    return "".join(parts)
