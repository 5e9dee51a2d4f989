"""Multi-file project layout: include resolution and flattening.

A project workspace holds a macro file, a header file whose ``\\include``
directives fix the movement order, the movement files, and a score file.
Only the header's directives define order; includes nested inside
movements are left alone and reported as warnings.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

from .errors import LilyCorpusError
from .lexer import TokenKind, lex

# Filename classification is by case-insensitive substring; a workspace
# fallback covers headers that list only movements.
_MACRO_PAT = "macro"
_SCORE_PAT = "score"
_HEADER_PAT = "header"


class MissingIncludeTarget(LilyCorpusError):
    def __init__(self, name: str):
        super().__init__(f"include target not found in workspace: {name!r}")
        self.name = name


class NoIncludes(LilyCorpusError):
    def __init__(self):
        super().__init__("header file contains no \\include directives")


class NoHeaderFile(LilyCorpusError):
    def __init__(self, workspace: Path):
        super().__init__(f"no header file found in {workspace}")


@dataclass
class ProjectLayout:
    header_file: Path
    movement_files: list[Path] = field(default_factory=list)
    macro_file: Path | None = None
    score_file: Path | None = None


def parse_include_names(source: str) -> list[str]:
    """Targets of ``\\include "name"`` directives, in order. Lexer-based so
    directives inside comments or strings do not count."""
    names: list[str] = []
    tokens = lex(source)
    for i, tok in enumerate(tokens):
        if tok.kind is TokenKind.COMMAND and tok.text == "\\include":
            for nxt in tokens[i + 1:]:
                if nxt.kind is TokenKind.COMMENT:
                    continue
                if nxt.kind is TokenKind.STRING:
                    names.append(nxt.text[1:-1])
                break
    return names


def resolve_includes(
    header_source: str, workspace: Path, header_file: Path | None = None
) -> ProjectLayout:
    """Classify the header's include targets into macro/movements/score and
    resolve them against the workspace directory."""
    names = parse_include_names(header_source)
    if not names:
        raise NoIncludes()
    listing = {p.name: p for p in sorted(workspace.iterdir()) if p.is_file()}

    layout = ProjectLayout(header_file=header_file or workspace / "header.ly")
    for name in names:
        path = listing.get(Path(name).name)
        if path is None or not (workspace / name).exists():
            raise MissingIncludeTarget(name)
        low = Path(name).name.lower()
        if _MACRO_PAT in low and layout.macro_file is None:
            layout.macro_file = path
        elif _SCORE_PAT in low and layout.score_file is None:
            layout.score_file = path
        else:
            layout.movement_files.append(path)

    header_name = layout.header_file.name
    if layout.macro_file is None:
        layout.macro_file = _find_by_pattern(listing, _MACRO_PAT, header_name)
    if layout.score_file is None:
        layout.score_file = _find_by_pattern(listing, _SCORE_PAT, header_name)
    return layout


def _find_by_pattern(
    listing: dict[str, Path], pattern: str, exclude: str
) -> Path | None:
    hits = [
        p for name, p in listing.items()
        if pattern in name.lower() and name != exclude
    ]
    return hits[0] if len(hits) >= 1 else None


def find_header_file(workspace: Path, header_name: str | None = None) -> Path:
    if header_name is not None:
        path = workspace / header_name
        if not path.is_file():
            raise NoHeaderFile(workspace)
        return path
    hits = [
        p for p in sorted(workspace.iterdir())
        if p.is_file() and _HEADER_PAT in p.name.lower()
    ]
    if not hits:
        raise NoHeaderFile(workspace)
    return hits[0]


def discover_project(workspace: Path, header_name: str | None = None) -> ProjectLayout:
    header = find_header_file(workspace, header_name)
    return resolve_includes(header.read_text(encoding="utf-8"), workspace, header)


def flatten_project(layout: ProjectLayout) -> str:
    """Concatenate macro file, movements in include order, then score file,
    joined by single newlines. I/O errors propagate with the file path."""
    parts: list[str] = []
    ordered: list[Path] = []
    if layout.macro_file is not None:
        ordered.append(layout.macro_file)
    ordered.extend(layout.movement_files)
    if layout.score_file is not None:
        ordered.append(layout.score_file)
    for path in ordered:
        text = path.read_text(encoding="utf-8")
        for name in parse_include_names(text):
            warnings.warn(
                f"nested \\include {name!r} in {path.name} left in place",
                stacklevel=2,
            )
        parts.append(text)
    return "\n".join(parts)


def flatten_workspace(workspace: Path, header_name: str | None = None) -> str:
    return flatten_project(discover_project(workspace, header_name))
