"""Top-level variable bindings and reachability from \\score blocks.

A binding is ``name = value`` at nesting depth zero. Values are either a
balanced block, a command with a short argument tail and optional block
(``\\relative c' { ... }``), or a single literal. References inside a
body are resolved by name only; LilyPond scoping is flat at top level so
that is exact. Reference cycles are tolerated: reachability is a plain
graph closure.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

from .blocks import BlockTree, parse_source
from .lexer import TokenKind

_SIMPLE_ARG_KINDS = frozenset(
    {TokenKind.WORD, TokenKind.NUMBER, TokenKind.STRING, TokenKind.OTHER}
)
_MAX_COMMAND_ARGS = 4


@dataclass(frozen=True)
class Binding:
    name: str
    # token index range of the full value, inclusive start, exclusive end
    value_span: tuple[int, int]
    # token index range of the value's block body, or None for literals
    block_span: tuple[int, int] | None


@dataclass
class ScoreGraph:
    bindings: dict[str, Binding]
    references: dict[str, set[str]]   # binding name -> names it references
    score_refs: set[str]              # names referenced from \score blocks
    reachable: set[str]               # closure of score_refs
    score_spans: list[tuple[int, int]]  # token spans of \score block bodies


def collect_bindings(tree: BlockTree) -> dict[str, Binding]:
    tokens = tree.tokens
    n = len(tokens)
    depth_at = _depths(tree)
    bindings: dict[str, Binding] = {}
    i = 0
    while i < n:
        tok = tokens[i]
        if (
            tok.kind is TokenKind.WORD
            and depth_at[i] == 0
            and i + 1 < n
            and _next_significant(tokens, i + 1) is not None
        ):
            j = _next_significant(tokens, i + 1)
            if tokens[j].kind is TokenKind.EQUALS:
                k = _next_significant(tokens, j + 1)
                if k is not None:
                    span = _value_span(tree, k)
                    if span is not None:
                        value_end, block_span = span
                        name = tok.text
                        if name in bindings:
                            warnings.warn(
                                f"binding {name!r} redefined; "
                                "last definition wins",
                                stacklevel=2,
                            )
                        bindings[name] = Binding(name, (k, value_end), block_span)
                        i = value_end
                        continue
        i += 1
    return bindings


def _depths(tree: BlockTree) -> list[int]:
    depth = 0
    out = []
    for tok in tree.tokens:
        if tok.kind in (
            TokenKind.CLOSE_BRACE,
            TokenKind.CLOSE_ANGLE,
            TokenKind.DOUBLE_ANGLE_CLOSE,
        ):
            depth -= 1
        out.append(depth)
        if tok.kind in (
            TokenKind.OPEN_BRACE,
            TokenKind.OPEN_ANGLE,
            TokenKind.DOUBLE_ANGLE_OPEN,
        ):
            depth += 1
    return out


def _next_significant(tokens, i):
    while i < len(tokens):
        if tokens[i].kind is not TokenKind.COMMENT:
            return i
        i += 1
    return None


def _value_span(tree: BlockTree, start: int):
    """Return (end_index_exclusive, block_span | None) for a value starting
    at token index ``start``, or None when no valid value shape is found."""
    tokens = tree.tokens
    tok = tokens[start]
    if tok.kind in (TokenKind.OPEN_BRACE, TokenKind.DOUBLE_ANGLE_OPEN):
        close = tree.match.get(start)
        if close is None:
            return None
        return close + 1, (start, close + 1)
    if tok.kind is TokenKind.COMMAND:
        i = start + 1
        args = 0
        while i < len(tokens) and args < _MAX_COMMAND_ARGS:
            nxt = tokens[i]
            if nxt.kind is TokenKind.COMMENT:
                i += 1
                continue
            if nxt.kind in (TokenKind.OPEN_BRACE, TokenKind.DOUBLE_ANGLE_OPEN):
                close = tree.match[i]
                return close + 1, (i, close + 1)
            if nxt.kind in _SIMPLE_ARG_KINDS:
                # stop before a token that starts the next binding
                j = _next_significant(tokens, i + 1)
                if (
                    nxt.kind is TokenKind.WORD
                    and j is not None
                    and tokens[j].kind is TokenKind.EQUALS
                ):
                    break
                i += 1
                args += 1
                continue
            break
        return i, None
    if tok.kind in (TokenKind.WORD, TokenKind.NUMBER, TokenKind.STRING):
        return start + 1, None
    return None


def collect_references(
    tree: BlockTree, span: tuple[int, int], names: set[str]
) -> set[str]:
    """Names referenced inside a token span, via \\name or bare name."""
    refs: set[str] = set()
    for tok in tree.tokens[span[0]:span[1]]:
        if tok.kind is TokenKind.COMMAND and tok.text[1:] in names:
            refs.add(tok.text[1:])
        elif tok.kind is TokenKind.WORD and tok.text in names:
            refs.add(tok.text)
    return refs


def build_score_graph(source: str) -> ScoreGraph:
    return graph_from_tree(parse_source(source))


def graph_from_tree(tree: BlockTree) -> ScoreGraph:
    bindings = collect_bindings(tree)
    names = set(bindings)

    references = {}
    for name, binding in bindings.items():
        refs = collect_references(tree, binding.value_span, names)
        refs.discard(name)
        references[name] = refs

    score_refs: set[str] = set()
    score_spans: list[tuple[int, int]] = []
    for node in tree.blocks_by_command("score"):
        span = (node.open_index, node.close_index + 1)
        score_spans.append(span)
        score_refs |= collect_references(tree, span, names)

    reachable: set[str] = set()
    frontier = list(score_refs)
    while frontier:
        name = frontier.pop()
        if name in reachable:
            continue
        reachable.add(name)
        frontier.extend(references.get(name, ()))

    return ScoreGraph(bindings, references, score_refs, reachable, score_spans)
