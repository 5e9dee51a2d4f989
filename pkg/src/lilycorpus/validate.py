"""Note-count validation: parsed note events vs rendered notehead glyphs.

The parsed side walks reachable music only (variables referenced
transitively from ``\\score`` plus inline score music), counting one event
per written notehead: chord members individually, grace notes, each note
of a tie; rests and skips count zero; ``\\repeat unfold n`` multiplies its
body by n while volta/percent bodies count once. Notes in unused or
incipit variables are tallied as exclusions, never in the main count.

The rendered side scans compiled PostScript for ``/noteheads.`` glyph
references. When no engraver is available, a sibling ``.ps`` file is used
if present.
"""

from __future__ import annotations

import json
import os
import re
import shutil
import subprocess
import warnings
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .bindings import graph_from_tree
from .blocks import parse_source
from .errors import EmptyCorpus, ExternalToolError, LilyCorpusError
from .lexer import TokenKind

DEFAULT_INCIPIT_PATTERN = "incipit"
DEFAULT_TIMEOUT = 120.0
_PS_PATTERN = "/noteheads."

PITCH_RE = re.compile(r"^(?:[a-g](?:isis|eses|is|es)?|as|es)[',]*$")

# Commands whose following block holds no countable music.
_SKIP_BLOCK_COMMANDS = frozenset({
    "\\header", "\\addlyrics", "\\lyricmode", "\\lyricsto",
    "\\layout", "\\midi", "\\paper", "\\with",
})
# Commands taking a single markup expression (string, block, or a chain of
# markup commands ending in one of those).
_MARKUP_COMMANDS = frozenset({"\\markup", "\\markuplist"})
# Commands whose immediate arguments may look like pitches but are not
# note events: count of argument tokens to skip.
_ARG_SKIP = {"\\key": 1, "\\clef": 1, "\\transpose": 2}

_OPENER_KINDS = frozenset({
    TokenKind.OPEN_BRACE, TokenKind.OPEN_ANGLE, TokenKind.DOUBLE_ANGLE_OPEN,
})
_CLOSER_KINDS = frozenset({
    TokenKind.CLOSE_BRACE, TokenKind.CLOSE_ANGLE, TokenKind.DOUBLE_ANGLE_CLOSE,
})


class ParseFailure(LilyCorpusError):
    pass


class EngraverNotFound(ExternalToolError):
    def __init__(self, binary: str):
        super().__init__(f"engraver binary not found: {binary!r}")
        self.binary = binary


class EngraverTimeout(ExternalToolError):
    def __init__(self, path: Path, timeout: float):
        super().__init__(f"engraving {path} exceeded {timeout:.0f}s")
        self.path = path


@dataclass
class Exclusions:
    unused_variable_notes: int = 0
    incipit_notes: int = 0


@dataclass
class NoteCountReport:
    file_id: str
    parsed_count: int
    rendered_count: int | None
    match: bool | None
    rel_error: Fraction | None
    exclusions: Exclusions


@dataclass
class CompileReport:
    file_id: str
    succeeded: bool
    stderr_excerpt: str
    outputs: list[Path]


@dataclass
class BatchSummary:
    n_files: int
    n_compared: int
    perfect_ratio: float | None
    mean_rel_error_over_mismatches: float | None


def _next_sig(tokens, i, end):
    while i < end and tokens[i].kind is TokenKind.COMMENT:
        i += 1
    return i


def _is_pitch_word(tok) -> bool:
    return tok.kind is TokenKind.WORD and PITCH_RE.match(tok.text) is not None


class _Walker:
    def __init__(self, tokens, match):
        self.tokens = tokens
        self.match = match

    def count(self, start: int, end: int) -> int:
        tokens = self.tokens
        total = 0
        i = start
        while i < end:
            tok = tokens[i]
            if tok.kind is TokenKind.COMMAND:
                name = tok.text
                if name == "\\repeat":
                    sub, i = self._repeat(i, end)
                    total += sub
                    continue
                if name in _MARKUP_COMMANDS:
                    i = self._skip_markup(i, end)
                    continue
                if name in _SKIP_BLOCK_COMMANDS:
                    i = self._skip_to_block(i, end)
                    continue
                if name == "\\relative":
                    j = _next_sig(tokens, i + 1, end)
                    if j < end and _is_pitch_word(tokens[j]):
                        i = j + 1
                    else:
                        i += 1
                    continue
                if name in _ARG_SKIP:
                    i = self._skip_args(i, end, _ARG_SKIP[name])
                    continue
                i += 1
            elif tok.kind is TokenKind.WORD:
                if _is_pitch_word(tok):
                    total += 1
                elif tok.text == "q":
                    warnings.warn(
                        "chord repetition `q` is not counted", stacklevel=3
                    )
                i += 1
            else:
                i += 1
        return total

    def _skip_args(self, i, end, n_args):
        tokens = self.tokens
        i += 1
        skipped = 0
        while skipped < n_args:
            i = _next_sig(tokens, i, end)
            if (i >= end or tokens[i].kind in _OPENER_KINDS
                    or tokens[i].kind in _CLOSER_KINDS):
                break
            i += 1
            skipped += 1
        return i

    def _skip_to_block(self, i, end):
        """Jump past the balanced block that follows a command, tolerating a
        short argument tail (e.g. the voice string of \\lyricsto)."""
        tokens = self.tokens
        j = i + 1
        hops = 0
        while hops < 5:
            j = _next_sig(tokens, j, end)
            if j >= end:
                return j
            if tokens[j].kind in _OPENER_KINDS:
                close = self.match.get(j)
                return end if close is None else close + 1
            if tokens[j].kind in _CLOSER_KINDS:
                return j  # block never materialized; do not escape scope
            j += 1
            hops += 1
        return j

    def _skip_markup(self, i, end):
        """Jump past one markup expression: an optional chain of markup
        commands ending in a string, a balanced block, or a single token."""
        tokens = self.tokens
        j = _next_sig(tokens, i + 1, end)
        hops = 0
        while j < end and hops < 8 and tokens[j].kind is TokenKind.COMMAND:
            j = _next_sig(tokens, j + 1, end)
            hops += 1
        if j >= end:
            return j
        kind = tokens[j].kind
        if kind in _OPENER_KINDS:
            close = self.match.get(j)
            return end if close is None else close + 1
        if kind in _CLOSER_KINDS:
            return j
        return j + 1

    def _repeat(self, i, end):
        """\\repeat <style> <n> { body } — unfold multiplies the written
        notes by n; volta/percent render the body once."""
        tokens = self.tokens
        j = _next_sig(tokens, i + 1, end)
        if j >= end or tokens[j].kind is not TokenKind.WORD:
            return 0, i + 1
        style = tokens[j].text
        k = _next_sig(tokens, j + 1, end)
        if k >= end or tokens[k].kind is not TokenKind.NUMBER:
            return 0, j + 1
        times = int(tokens[k].text.rstrip("."))
        b = _next_sig(tokens, k + 1, end)
        if b >= end or tokens[b].kind not in _OPENER_KINDS:
            return 0, k + 1
        close = self.match.get(b)
        if close is None:
            return 0, b + 1
        body = self.count(b + 1, close)
        factor = times if style == "unfold" else 1
        return factor * body, close + 1


def count_note_events(
    source: str, incipit_pattern: str = DEFAULT_INCIPIT_PATTERN
) -> tuple[int, Exclusions]:
    try:
        tree = parse_source(source)
    except LilyCorpusError as exc:
        raise ParseFailure(str(exc)) from exc
    graph = graph_from_tree(tree)
    walker = _Walker(tree.tokens, tree.match)
    incipit_re = re.compile(incipit_pattern, re.IGNORECASE)

    binding_spans = [b.value_span for b in graph.bindings.values()]
    total = 0
    for span in graph.score_spans:
        # scores stored in a variable are covered by the binding walk below
        if any(lo <= span[0] and span[1] <= hi for lo, hi in binding_spans):
            continue
        total += walker.count(span[0] + 1, span[1] - 1)

    exclusions = Exclusions()
    for name, binding in graph.bindings.items():
        sub = walker.count(*binding.value_span)
        if incipit_re.search(name):
            exclusions.incipit_notes += sub
        elif name in graph.reachable:
            total += sub
        else:
            exclusions.unused_variable_notes += sub
    return total, exclusions


def count_ps_noteheads(ps_text: str) -> int:
    """Occurrences of the literal glyph pattern followed by at least one
    character; plain find loop so adjacent hits are never missed."""
    n = 0
    i = ps_text.find(_PS_PATTERN)
    while i != -1:
        if i + len(_PS_PATTERN) < len(ps_text):
            n += 1
        i = ps_text.find(_PS_PATTERN, i + 1)
    return n


def resolve_engraver(engraver: str | None) -> str | None:
    """Binary name from the argument, the LILYCORPUS_ENGRAVER environment
    variable, or the conventional default; None if nothing is on PATH."""
    candidate = engraver or os.environ.get("LILYCORPUS_ENGRAVER", "lilypond")
    return shutil.which(candidate)


def compile_file(
    path: str | Path,
    engraver: str | None = None,
    flags: tuple[str, ...] = ("--ps",),
    timeout: float = DEFAULT_TIMEOUT,
) -> CompileReport:
    path = Path(path)
    binary = resolve_engraver(engraver)
    if binary is None:
        raise EngraverNotFound(engraver or os.environ.get(
            "LILYCORPUS_ENGRAVER", "lilypond"))
    try:
        proc = subprocess.run(
            [binary, *flags, path.name],
            cwd=path.parent,
            capture_output=True,
            text=True,
            timeout=timeout,
        )
    except subprocess.TimeoutExpired:
        raise EngraverTimeout(path, timeout) from None
    stderr = proc.stderr or ""
    succeeded = proc.returncode == 0 and "error" not in stderr.lower()
    outputs = [
        p for p in (path.with_suffix(".ps"), path.with_suffix(".pdf"))
        if p.exists()
    ]
    return CompileReport(
        file_id=path.stem,
        succeeded=succeeded,
        stderr_excerpt=stderr[-2000:],
        outputs=outputs,
    )


def validate_file(
    path: str | Path,
    engraver: str | None = None,
    incipit_pattern: str = DEFAULT_INCIPIT_PATTERN,
    timeout: float = DEFAULT_TIMEOUT,
) -> NoteCountReport:
    path = Path(path)
    source = path.read_text(encoding="utf-8")
    parsed, exclusions = count_note_events(source, incipit_pattern)

    rendered: int | None = None
    ps_path = path.with_suffix(".ps")
    if engraver is not None or resolve_engraver(None) is not None:
        report = compile_file(path, engraver, timeout=timeout)
        if report.succeeded and ps_path.exists():
            rendered = count_ps_noteheads(
                ps_path.read_text(encoding="utf-8", errors="replace")
            )
    elif ps_path.exists():
        rendered = count_ps_noteheads(
            ps_path.read_text(encoding="utf-8", errors="replace")
        )

    match: bool | None = None
    rel_error: Fraction | None = None
    if rendered is not None:
        match = parsed == rendered
        if rendered > 0:
            rel_error = Fraction(abs(parsed - rendered), rendered)
    return NoteCountReport(
        file_id=path.stem,
        parsed_count=parsed,
        rendered_count=rendered,
        match=match,
        rel_error=rel_error,
        exclusions=exclusions,
    )


def batch_validate(
    corpus_dir: str | Path,
    engraver: str | None = None,
    incipit_pattern: str = DEFAULT_INCIPIT_PATTERN,
    timeout: float = DEFAULT_TIMEOUT,
) -> tuple[BatchSummary, list[NoteCountReport]]:
    corpus_dir = Path(corpus_dir)
    files = sorted(corpus_dir.glob("*.ly"), key=lambda p: p.stem)
    if not files:
        raise EmptyCorpus(f"no .ly files under {corpus_dir}")
    reports = [
        validate_file(p, engraver, incipit_pattern, timeout) for p in files
    ]
    compared = [r for r in reports if r.rendered_count is not None]
    n_perfect = sum(1 for r in compared if r.match)
    mismatch_errors = [
        float(r.rel_error) for r in compared
        if r.match is False and r.rel_error is not None
    ]
    summary = BatchSummary(
        n_files=len(reports),
        n_compared=len(compared),
        perfect_ratio=(n_perfect / len(compared)) if compared else None,
        mean_rel_error_over_mismatches=(
            sum(mismatch_errors) / len(mismatch_errors)
            if mismatch_errors else None
        ),
    )
    return summary, reports


def report_to_dict(report: NoteCountReport) -> dict:
    return {
        "file_id": report.file_id,
        "parsed_count": report.parsed_count,
        "rendered_count": report.rendered_count,
        "match": report.match,
        "rel_error": None if report.rel_error is None else float(report.rel_error),
        "exclusions": {
            "unused_variable_notes": report.exclusions.unused_variable_notes,
            "incipit_notes": report.exclusions.incipit_notes,
        },
    }


def reports_to_jsonl(reports: list[NoteCountReport]) -> str:
    return "".join(
        json.dumps(report_to_dict(r), ensure_ascii=False) + "\n"
        for r in reports
    )


def summary_to_csv(summary: BatchSummary) -> str:
    lines = [
        "n_files,n_compared,perfect_ratio,mean_rel_error_over_mismatches",
        ",".join([
            str(summary.n_files),
            str(summary.n_compared),
            "" if summary.perfect_ratio is None
            else f"{summary.perfect_ratio:.6f}",
            "" if summary.mean_rel_error_over_mismatches is None
            else f"{summary.mean_rel_error_over_mismatches:.6f}",
        ]),
    ]
    return "\n".join(lines) + "\n"
